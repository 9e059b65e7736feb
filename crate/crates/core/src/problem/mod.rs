//! Optimal control problem instances.
//!
//! A problem is the tuple (dynamics `f`, running cost `L`, terminal cost
//! `g`, discount `lambda`, horizon `[t, T]`). The cost of a control `u`
//! started at `(x, t)` is
//!
//! ```text
//! J(u) = int_t^T L(y(s), u(s), s) e^{-lambda (s - t)} ds + g(y(T)) e^{-lambda (T - t)}
//! ```
//!
//! with `y' = f(y, u, s)`, `y(t) = x`. Callables must be pure: they are
//! shared between worker threads.

mod controls;
mod invariance;
mod registry;

use std::fmt;
use std::sync::Arc;

pub use controls::{discretize_controls, ControlHull, ControlSet, ControlSpec};
pub use invariance::{check_invariance, InvarianceReport, Violation};
pub use registry::{available_problems, make_problem, ProblemParams};

use crate::error::{Error, Result};
use crate::mesh::BoxDomain;

pub type DynamicsFn = dyn Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync;
pub type RunningCostFn = dyn Fn(&[f64], &[f64], f64) -> f64 + Send + Sync;
pub type TerminalCostFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
pub type ValueFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;

/// Declared bounds and Lipschitz constants, when known.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct ProblemConstants {
    pub m_f: Option<f64>,
    pub m_l: Option<f64>,
    pub m_g: Option<f64>,
    pub l_f: Option<f64>,
    pub l_l: Option<f64>,
    pub l_g: Option<f64>,
    /// State box on which the constants were derived.
    pub state_region: Option<BoxDomain>,
    /// Control box on which the constants were derived.
    pub control_region: Option<BoxDomain>,
}

#[derive(Clone)]
pub struct ProblemSpec {
    name: String,
    state_dim: usize,
    control_dim: usize,
    discount: f64,
    horizon: (f64, f64),
    dynamics: Arc<DynamicsFn>,
    running_cost: Arc<RunningCostFn>,
    terminal_cost: Arc<TerminalCostFn>,
    exact: Option<Arc<ValueFn>>,
    constants: ProblemConstants,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .field("discount", &self.discount)
            .field("horizon", &self.horizon)
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

impl ProblemSpec {
    /// New problem on the horizon `[0, 1]` without discount.
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        control_dim: usize,
        dynamics: impl Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync + 'static,
        running_cost: impl Fn(&[f64], &[f64], f64) -> f64 + Send + Sync + 'static,
        terminal_cost: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            state_dim,
            control_dim,
            discount: 0.0,
            horizon: (0.0, 1.0),
            dynamics: Arc::new(dynamics),
            running_cost: Arc::new(running_cost),
            terminal_cost: Arc::new(terminal_cost),
            exact: None,
            constants: ProblemConstants::default(),
        }
    }

    pub fn with_discount(mut self, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Parameter {
                problem: self.name,
                name: "lambda".into(),
                reason: format!("discount must be finite and >= 0, got {lambda}"),
            });
        }
        self.discount = lambda;
        Ok(self)
    }

    pub fn with_horizon(mut self, t: f64, t_end: f64) -> Result<Self> {
        if !(t < t_end) || !t.is_finite() || !t_end.is_finite() {
            return Err(Error::Parameter {
                problem: self.name,
                name: "horizon".into(),
                reason: format!("need t < T, got [{t}, {t_end}]"),
            });
        }
        self.horizon = (t, t_end);
        Ok(self)
    }

    /// Attaches a closed-form value function `v(x, t)`.
    pub fn with_exact(mut self, v: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        self.exact = Some(Arc::new(v));
        self
    }

    pub fn with_constants(mut self, constants: ProblemConstants) -> Self {
        self.constants = constants;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn horizon(&self) -> (f64, f64) {
        self.horizon
    }

    pub fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    /// Writes `f(x, u, t)` into `out`.
    #[inline]
    pub fn dynamics(&self, x: &[f64], u: &[f64], t: f64, out: &mut [f64]) {
        (self.dynamics)(x, u, t, out)
    }

    #[inline]
    pub fn running_cost(&self, x: &[f64], u: &[f64], t: f64) -> f64 {
        (self.running_cost)(x, u, t)
    }

    #[inline]
    pub fn terminal_cost(&self, x: &[f64]) -> f64 {
        (self.terminal_cost)(x)
    }

    pub fn has_exact(&self) -> bool {
        self.exact.is_some()
    }

    pub fn exact_value(&self, x: &[f64], t: f64) -> Option<f64> {
        self.exact.as_ref().map(|v| v(x, t))
    }
}
