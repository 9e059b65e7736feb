//! Feedback controls from a computed value function and closed-loop simulation.
//!
//! Only grid times are supported: the feedback at `(x, t_n)` is the argmin of
//! the one-step expression against `v^{n+1}`.

use std::io::Write;

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::mesh::Point;
use crate::oracle::{
    discrete_functional, sequences_from_policy, PiecewiseConstantControl, PolicyReading,
    TerminalDiscount,
};
use crate::problem::ControlHull;
use crate::solver::{PolicyTable, Scheme, ValueFunction};

/// Closed-loop trajectory from level `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start: usize,
    /// `y_start..y_N`.
    pub states: Vec<Point>,
    /// Control index applied on each step.
    pub control_indices: Vec<usize>,
    /// `L(y_j, u_j, t_j)` for each step.
    pub stage_costs: Vec<f64>,
    /// `h sum_j delta_h^{j-start} L(y_j, u_j, t_j)`.
    pub running_cost: f64,
    /// `exp(-lambda (T - t_start)) g(y_N)`.
    pub terminal_cost: f64,
    pub total: f64,
    /// Steps whose next state was clamped into the domain.
    pub clamps: usize,
}

impl Trajectory {
    /// Rebuilds the total from the stored stage costs and terminal state.
    pub fn recompute_total(&self, scheme: &Scheme<'_>) -> f64 {
        let grid = &scheme.grid;
        let mut discount = 1.0;
        let mut running = 0.0;
        for cost in &self.stage_costs {
            running += discount * cost;
            discount *= grid.delta();
        }
        let last = self.states.last().expect("trajectory has a terminal state");
        grid.step() * running + grid.terminal_weight(self.start) * scheme.problem.terminal_cost(last)
    }

    /// Delimited text: level, time, state, control, stage cost, discounted accumulator.
    pub fn write_csv(&self, scheme: &Scheme<'_>, mut out: impl Write) -> Result<()> {
        let d = scheme.mesh.dim();
        let m = scheme.controls.dim();
        let mut header = vec!["level".to_string(), "time".to_string()];
        header.extend((0..d).map(|a| format!("x{a}")));
        header.extend((0..m).map(|a| format!("u{a}")));
        header.extend(["stage_cost".to_string(), "accumulated".to_string()]);
        writeln!(out, "{}", header.join(","))?;

        let grid = &scheme.grid;
        let mut accumulated = 0.0;
        let mut discount = 1.0;
        for (j, y) in self.states.iter().enumerate() {
            let level = self.start + j;
            let mut row = vec![level.to_string(), grid.time(level).to_string()];
            row.extend(y.iter().map(f64::to_string));
            if j < self.control_indices.len() {
                row.extend(scheme.controls.get(self.control_indices[j]).iter().map(f64::to_string));
                accumulated += grid.step() * discount * self.stage_costs[j];
                discount *= grid.delta();
                row.push(self.stage_costs[j].to_string());
            } else {
                // terminal row: no control, the stage cost column holds g
                row.extend(std::iter::repeat_n(String::new(), m));
                accumulated += self.terminal_cost;
                row.push(scheme.problem.terminal_cost(y).to_string());
            }
            row.push(accumulated.to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Index of the feedback control at `(x, t_level)`, lowest index on ties.
pub fn feedback_control(
    scheme: &Scheme<'_>,
    values: &ValueFunction,
    x: &[f64],
    level: usize,
) -> Result<usize> {
    check_level(scheme, level)?;
    scheme.mesh.locate(x)?;
    Ok(scheme
        .minimize_step(x, level, values.level(level + 1), None)?
        .argmin)
}

fn check_level(scheme: &Scheme<'_>, level: usize) -> Result<()> {
    if level >= scheme.grid.steps() {
        return Err(Error::TimeGrid(format!(
            "feedback needs a level below N = {}, got {level}",
            scheme.grid.steps()
        )));
    }
    Ok(())
}

/// Explicit Euler closed loop `y_{j+1} = y_j + h f(y_j, u_j, t_j)` with feedback controls.
pub fn simulate(
    scheme: &Scheme<'_>,
    values: &ValueFunction,
    x0: &[f64],
    start: usize,
) -> Result<Trajectory> {
    let grid = &scheme.grid;
    if start > grid.steps() {
        return Err(Error::TimeGrid(format!("start level {start} beyond N = {}", grid.steps())));
    }
    scheme.mesh.locate(x0)?;
    let mut y: Point = x0.iter().copied().collect();
    let mut states = vec![y.clone()];
    let mut control_indices = Vec::new();
    let mut stage_costs = Vec::new();
    let mut running = 0.0;
    let mut discount = 1.0;
    let mut clamps = 0;
    for level in start..grid.steps() {
        let c = feedback_control(scheme, values, &y, level)?;
        let u = scheme.controls.get(c);
        let t = grid.time(level);
        let cost = scheme.problem.running_cost(&y, u, t);
        running += discount * cost;
        discount *= grid.delta();
        let (next, clamped) = scheme.foot_point(&y, c, level, None).map_err(|e| match e {
            Error::Invariance { point, .. } => Error::TrajectoryEscape { step: level + 1, point },
            other => other,
        })?;
        clamps += clamped as usize;
        control_indices.push(c);
        stage_costs.push(cost);
        states.push(next.clone());
        y = next;
    }
    let running_cost = grid.step() * running;
    let terminal_cost = grid.terminal_weight(start) * scheme.problem.terminal_cost(&y);
    Ok(Trajectory {
        start,
        states,
        control_indices,
        stage_costs,
        running_cost,
        terminal_cost,
        total: running_cost + terminal_cost,
        clamps,
    })
}

/// Barycentric average of the level-`n` nodal controls along the interpolated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendedControl {
    pub control: PiecewiseConstantControl,
    /// Some blended value lies outside the control set and the set has no box hull.
    pub inadmissible_blend: bool,
}

/// Walks the trajectory driven by the level-`n` policy and emits `u_l = sum_j mu_j(y_l) u_n^j`.
pub fn blended_control_sequence(
    policy: &PolicyTable,
    x: &[f64],
    level: usize,
    scheme: &Scheme<'_>,
) -> Result<BlendedControl> {
    check_level(scheme, level)?;
    let seqs = sequences_from_policy(x, level, policy, scheme, PolicyReading::StartLevel)?;
    let (_, traj) = discrete_functional(x, &seqs, scheme, TerminalDiscount::Exponential)?;
    let m = scheme.controls.dim();
    let mut values = Vec::with_capacity(traj.locations.len());
    let mut inadmissible = false;
    for loc in &traj.locations {
        let mut u: SmallVec<[f64; 4]> = SmallVec::from_elem(0.0, m);
        for (i, w) in loc.support() {
            for (a, b) in u.iter_mut().zip(scheme.controls.get(policy.get(level, i))) {
                *a += w * b;
            }
        }
        let in_set = scheme.controls.index_of(&u).is_some();
        let in_box = matches!(scheme.controls.hull(), ControlHull::Box { .. }) && scheme.controls.admits(&u);
        inadmissible |= !(in_set || in_box);
        values.push(u.to_vec());
    }
    Ok(BlendedControl {
        control: PiecewiseConstantControl::new(level, values)?,
        inadmissible_blend: inadmissible,
    })
}

/// Simulates from every `x0`, in parallel, keeping input order.
pub fn simulate_batch(
    scheme: &Scheme<'_>,
    values: &ValueFunction,
    starts: &[Vec<f64>],
    level: usize,
) -> Vec<Result<Trajectory>> {
    use rayon::prelude::*;
    starts
        .par_iter()
        .map(|x0| simulate(scheme, values, x0, level))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{BoxDomain, Mesh};
    use crate::problem::{discretize_controls, make_problem, ControlSet, ControlSpec, ProblemParams, ProblemSpec};
    use crate::solver::{BoundaryPolicy, TimeGrid};
    use approx::assert_abs_diff_eq;

    fn three() -> ControlSet {
        ControlSet::from_elements(vec![vec![-1.0], vec![0.0], vec![1.0]]).unwrap()
    }

    #[test]
    fn eikonal_feedback_moves_toward_origin() {
        let p = make_problem("eikonal1d", &ProblemParams::new()).unwrap();
        let mesh = Mesh::build(BoxDomain::symmetric(1, 2.0).unwrap(), &[64]).unwrap();
        let set = three();
        let grid = TimeGrid::for_problem(&p, 16).unwrap();
        let s = Scheme::new(&p, &mesh, &set, grid, BoundaryPolicy::Project).unwrap();
        let sol = s.solve().unwrap();
        for n in 0..=8 {
            assert_eq!(set.get(feedback_control(&s, &sol.values, &[0.5], n).unwrap()), &[-1.0]);
        }
        for n in 0..16 {
            for i in 0..mesh.node_count() {
                let c = feedback_control(&s, &sol.values, mesh.vertex(i), n).unwrap();
                assert_eq!(c, sol.policy.get(n, i));
            }
        }
    }

    #[test]
    fn simulate_eikonal_reaches_origin() {
        let p = make_problem("eikonal1d", &ProblemParams::new()).unwrap();
        let mesh = Mesh::build(BoxDomain::symmetric(1, 2.0).unwrap(), &[256]).unwrap();
        let set = three();
        let grid = TimeGrid::for_problem(&p, 64).unwrap();
        let s = Scheme::new(&p, &mesh, &set, grid, BoundaryPolicy::Project).unwrap();
        let sol = s.solve().unwrap();
        let traj = simulate(&s, &sol.values, &[0.8], 0).unwrap();
        let bound = 2.0 * (grid.step() + mesh.mesh_size());
        assert!(traj.states.last().unwrap()[0].abs() <= bound);
        assert!(traj.total.abs() <= bound);
        assert!((traj.recompute_total(&s) - traj.total).abs() <= 1e-12);
    }

    #[test]
    fn frozen_simulation_closed_form() {
        let p = ProblemSpec::new("frozen", 1, 1, |_, _, _, o| o[0] = 0.0, |x, u, _| 1.0 + x[0] * x[0] + u[0] * u[0], |x| 2.0 * x[0])
            .with_discount(0.5)
            .unwrap();
        let mesh = Mesh::build(BoxDomain::symmetric(1, 1.0).unwrap(), &[4]).unwrap();
        let set = three();
        let grid = TimeGrid::for_problem(&p, 5).unwrap();
        let s = Scheme::new(&p, &mesh, &set, grid, BoundaryPolicy::Strict).unwrap();
        let sol = s.solve().unwrap();
        let x0 = 0.3;
        let traj = simulate(&s, &sol.values, &[x0], 0).unwrap();
        assert!(traj.states.iter().all(|y| y[0] == x0));
        assert!(traj.control_indices.iter().all(|&c| set.get(c) == [0.0]));
        let h = grid.step();
        let expect: f64 = (0..5).map(|j| h * grid.delta().powi(j) * (1.0 + x0 * x0)).sum::<f64>()
            + (-0.5f64).exp() * 2.0 * x0;
        assert_abs_diff_eq!(traj.total, expect, epsilon = 1e-12);
    }

    #[test]
    fn rest_problem_total_is_exact() {
        let prm = ProblemParams::from([("c".to_string(), 1.0), ("lambda".to_string(), 0.0)]);
        let p = make_problem("discounted_rest", &prm).unwrap();
        let mesh = Mesh::build(BoxDomain::symmetric(1, 1.0).unwrap(), &[4]).unwrap();
        let set = three();
        let grid = TimeGrid::for_problem(&p, 8).unwrap();
        let s = Scheme::new(&p, &mesh, &set, grid, BoundaryPolicy::Strict).unwrap();
        let sol = s.solve().unwrap();
        let traj = simulate(&s, &sol.values, &[0.1], 0).unwrap();
        let (t, t_end) = p.horizon();
        assert_abs_diff_eq!(traj.running_cost, t_end - t, epsilon = 1e-12);
    }

    #[test]
    fn blended_controls() {
        let p = ProblemSpec::new("frozen", 1, 1, |_, _, _, o| o[0] = 0.0, |_, _, _| 0.0, |_| 0.0);
        let mesh = Mesh::build(BoxDomain::new(vec![0.0], vec![1.0]).unwrap(), &[1]).unwrap();
        let set = discretize_controls(&ControlSpec::Interval { lower: 0.0, upper: 1.0, count: 2 }).unwrap();
        let grid = TimeGrid::for_problem(&p, 2).unwrap();
        let s = Scheme::new(&p, &mesh, &set, grid, BoundaryPolicy::Strict).unwrap();
        let policy = PolicyTable::new(vec![vec![0, 1], vec![0, 1]]);
        let b = blended_control_sequence(&policy, &[0.5], 0, &s).unwrap();
        assert_eq!(b.control.get(0), &[0.5]);
        assert!(!b.inadmissible_blend);
        let node = blended_control_sequence(&policy, &[1.0], 0, &s).unwrap();
        assert_eq!(node.control.get(1), &[1.0]);

        let finite = ControlSet::from_elements(vec![vec![0.0], vec![1.0]]).unwrap();
        let s = Scheme::new(&p, &mesh, &finite, grid, BoundaryPolicy::Strict).unwrap();
        assert!(blended_control_sequence(&policy, &[0.5], 0, &s).unwrap().inadmissible_blend);
        let constant = PolicyTable::new(vec![vec![1, 1], vec![1, 1]]);
        let b = blended_control_sequence(&constant, &[0.25], 0, &s).unwrap();
        assert!(!b.inadmissible_blend);
        assert_eq!(b.control.get(1), &[1.0]);
    }

    #[test]
    fn trajectory_csv_layout() {
        let p = make_problem("eikonal1d", &ProblemParams::new()).unwrap();
        let mesh = Mesh::build(BoxDomain::symmetric(1, 2.0).unwrap(), &[8]).unwrap();
        let set = three();
        let grid = TimeGrid::for_problem(&p, 2).unwrap();
        let s = Scheme::new(&p, &mesh, &set, grid, BoundaryPolicy::Project).unwrap();
        let sol = s.solve().unwrap();
        let traj = simulate(&s, &sol.values, &[1.0], 0).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "level,time,x0,u0,stage_cost,accumulated");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "0,0,1,-1,0,0");
        assert!(lines[3].starts_with("2,1,0,,0,"));
    }
}
