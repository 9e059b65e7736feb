//! Named benchmark problems.
//!
//! Every benchmark accepts the common keys `t`, `T` (horizon, default
//! `[0, 1]`) and `lambda` (discount), plus its own parameters below. The
//! declared constants (`M_f`, `L_g`, ...) hold on the state box
//! `[-radius, radius]^d` and the control box `[-umax, umax]^m`.
//!
//! | name              | dynamics        | running cost     | terminal cost               | extra keys |
//! |-------------------|-----------------|------------------|-----------------------------|------------|
//! | `eikonal1d`       | `u`             | `0`              | `abs(x)`                    | `umax`, `radius` |
//! | `eikonal2d`       | `u`             | `0`              | `norm(x)`                   | `umax`, `radius` |
//! | `discounted_rest` | `0`             | `c + norm(u)^2`  | `g + g_slope sum(x) + g_quad norm(x)^2` | `c`, `g`, `g_slope`, `g_quad`, `dim`, `control_dim`, `umax`, `radius` |
//! | `advect_lin`      | `a(s) 1 + u`    | `norm(u)^2`      | `norm(x)^2`                 | `amp`, `omega`, `dim`, `umax`, `radius` |
//!
//! with `a(s) = amp cos(omega s)`.

use std::collections::BTreeMap;

use super::{ProblemConstants, ProblemSpec};
use crate::error::{Error, Result};
use crate::mesh::BoxDomain;

pub type ProblemParams = BTreeMap<String, f64>;

const COMMON_KEYS: [&str; 3] = ["t", "T", "lambda"];

const REGISTRY: [(&str, &[&str]); 4] = [
    ("eikonal1d", &["umax", "radius"]),
    ("eikonal2d", &["umax", "radius"]),
    (
        "discounted_rest",
        &["c", "g", "g_slope", "g_quad", "dim", "control_dim", "umax", "radius"],
    ),
    ("advect_lin", &["amp", "omega", "dim", "umax", "radius"]),
];

pub fn available_problems() -> Vec<String> {
    REGISTRY.iter().map(|(n, _)| n.to_string()).collect()
}

struct Reader<'a> {
    problem: &'a str,
    params: &'a ProblemParams,
}

impl Reader<'_> {
    fn err(&self, name: &str, reason: impl Into<String>) -> Error {
        Error::Parameter {
            problem: self.problem.into(),
            name: name.into(),
            reason: reason.into(),
        }
    }

    fn real(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.params.get(key).copied().unwrap_or(default);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(key, "must be finite"))
        }
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.real(key, default)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(self.err(key, format!("must be positive, got {v}")))
        }
    }

    fn count(&self, key: &str, default: usize) -> Result<usize> {
        let v = self.real(key, default as f64)?;
        if v >= 1.0 && v.fract() == 0.0 && v <= 16.0 {
            Ok(v as usize)
        } else {
            Err(self.err(key, format!("must be an integer in 1..=16, got {v}")))
        }
    }
}

/// Builds a registered benchmark problem from a parameter map. Unknown keys are rejected.
pub fn make_problem(name: &str, params: &ProblemParams) -> Result<ProblemSpec> {
    let Some((_, keys)) = REGISTRY.iter().find(|(n, _)| *n == name) else {
        return Err(Error::UnknownProblem {
            name: name.into(),
            available: available_problems(),
        });
    };
    if let Some(bad) = params
        .keys()
        .find(|k| !COMMON_KEYS.contains(&k.as_str()) && !keys.contains(&k.as_str()))
    {
        return Err(Error::Parameter {
            problem: name.into(),
            name: bad.clone(),
            reason: format!("unknown key; accepted: {}", [&COMMON_KEYS[..], keys].concat().join(", ")),
        });
    }

    let r = Reader {
        problem: name,
        params,
    };
    let t0 = r.real("t", 0.0)?;
    let t_end = r.real("T", 1.0)?;
    let lambda = r.real("lambda", if name == "discounted_rest" { 0.5 } else { 0.0 })?;

    let problem = match name {
        "eikonal1d" => eikonal(&r, 1)?,
        "eikonal2d" => eikonal(&r, 2)?,
        "discounted_rest" => discounted_rest(&r)?,
        "advect_lin" => advect_lin(&r, lambda)?,
        _ => unreachable!(),
    };
    problem.with_discount(lambda)?.with_horizon(t0, t_end)
}

fn discount_weight(lambda: f64, tau: f64) -> f64 {
    (-lambda * tau).exp()
}

fn eikonal(r: &Reader, dim: usize) -> Result<ProblemSpec> {
    let umax = r.positive("umax", 1.0)?;
    let radius = r.positive("radius", 2.0)?;
    let name = if dim == 1 { "eikonal1d" } else { "eikonal2d" };
    let norm = |x: &[f64]| x.iter().map(|c| c * c).sum::<f64>().sqrt();

    let problem = ProblemSpec::new(
        name,
        dim,
        dim,
        |_, u, _, out| out.copy_from_slice(u),
        |_, _, _| 0.0,
        move |x| norm(x),
    );
    let t_end = r.real("T", 1.0)?;
    let lambda = r.real("lambda", 0.0)?;
    Ok(problem
        .with_exact(move |x, t| {
            let tau = t_end - t;
            discount_weight(lambda, tau) * (norm(x) - umax * tau).max(0.0)
        })
        .with_constants(ProblemConstants {
            m_f: Some(umax),
            m_l: Some(0.0),
            m_g: Some(radius * (dim as f64).sqrt()),
            l_f: Some(1.0),
            l_l: Some(0.0),
            l_g: Some(1.0),
            state_region: Some(BoxDomain::symmetric(dim, radius)?),
            control_region: Some(BoxDomain::symmetric(dim, umax)?),
        }))
}

fn discounted_rest(r: &Reader) -> Result<ProblemSpec> {
    let c = r.real("c", 1.0)?;
    let g0 = r.real("g", 0.0)?;
    let slope = r.real("g_slope", 0.0)?;
    let quad = r.real("g_quad", 0.0)?;
    let dim = r.count("dim", 1)?;
    let m = r.count("control_dim", 1)?;
    let umax = r.positive("umax", 1.0)?;
    let radius = r.positive("radius", 2.0)?;
    let t_end = r.real("T", 1.0)?;
    let lambda = r.real("lambda", 0.5)?;

    let terminal = move |x: &[f64]| {
        g0 + slope * x.iter().sum::<f64>() + quad * x.iter().map(|v| v * v).sum::<f64>()
    };
    let d = dim as f64;
    let mf = m as f64;
    let problem = ProblemSpec::new(
        "discounted_rest",
        dim,
        m,
        |_, _, _, out| out.iter_mut().for_each(|o| *o = 0.0),
        move |_, u, _| c + u.iter().map(|v| v * v).sum::<f64>(),
        terminal,
    );
    // the state is frozen; the cheapest constant control is u = 0 whenever 0 is admissible
    Ok(problem
        .with_exact(move |x, t| {
            let tau = t_end - t;
            let running = if lambda == 0.0 {
                c * tau
            } else {
                c * (1.0 - (-lambda * tau).exp()) / lambda
            };
            running + discount_weight(lambda, tau) * terminal(x)
        })
        .with_constants(ProblemConstants {
            m_f: Some(0.0),
            m_l: Some(c.abs() + mf * umax * umax),
            m_g: Some(g0.abs() + slope.abs() * radius * d + quad.abs() * radius * radius * d),
            l_f: Some(0.0),
            l_l: Some(2.0 * umax * mf.sqrt()),
            l_g: Some(slope.abs() * d.sqrt() + 2.0 * quad.abs() * radius * d.sqrt()),
            state_region: Some(BoxDomain::symmetric(dim, radius)?),
            control_region: Some(BoxDomain::symmetric(m, umax)?),
        }))
}

/// Drift plus direct control, quadratic costs. With `lambda = 0` and box
/// controls the optimal control is constant in time: the running cost only
/// sees `int u` through Jensen's inequality, and the terminal state only
/// through `int u`. The constant minimizes a separable quadratic, so each
/// component is a clamped unconstrained optimum.
fn advect_lin(r: &Reader, lambda: f64) -> Result<ProblemSpec> {
    let amp = r.real("amp", 0.5)?;
    let omega = r.positive("omega", 1.0)?;
    let dim = r.count("dim", 1)?;
    let umax = r.positive("umax", 1.0)?;
    let radius = r.positive("radius", 2.0)?;
    let t_end = r.real("T", 1.0)?;
    let d = dim as f64;

    let problem = ProblemSpec::new(
        "advect_lin",
        dim,
        dim,
        move |_, u, s, out| {
            let a = amp * (omega * s).cos();
            for (o, ui) in out.iter_mut().zip(u) {
                *o = a + ui;
            }
        },
        |_, u, _| u.iter().map(|v| v * v).sum::<f64>(),
        |x| x.iter().map(|v| v * v).sum::<f64>(),
    );
    let problem = problem.with_constants(ProblemConstants {
        m_f: Some(amp.abs() + umax),
        m_l: Some(d * umax * umax),
        m_g: Some(d * radius * radius),
        l_f: Some(1f64.max(amp.abs() * omega * d.sqrt())),
        l_l: Some(2.0 * umax * d.sqrt()),
        l_g: Some(2.0 * radius * d.sqrt()),
        state_region: Some(BoxDomain::symmetric(dim, radius)?),
        control_region: Some(BoxDomain::symmetric(dim, umax)?),
    });
    if lambda != 0.0 {
        return Ok(problem);
    }
    Ok(problem.with_exact(move |x, t| {
        let tau = t_end - t;
        let drift = amp / omega * ((omega * t_end).sin() - (omega * t).sin());
        x.iter()
            .map(|&xi| {
                let z = xi + drift;
                let w = (-z / (1.0 + tau)).clamp(-umax, umax);
                tau * w * w + (z + tau * w) * (z + tau * w)
            })
            .sum()
    }))
}
