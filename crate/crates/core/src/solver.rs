//! Backward dynamic programming on the simplicial mesh.
//!
//! Nodal values satisfy
//!
//! ```text
//! v^N(x_i) = g(x_i)
//! v^n(x_i) = min_{u in U} { h L(x_i, u, t_n) + delta_h * I_k v^{n+1}(x_i + h f(x_i, u, t_n)) }
//! ```
//!
//! for `n = N-1, ..., 0`, with `delta_h = 1 - lambda h`. Off the nodes every
//! level is the piecewise-linear interpolant of its nodal values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};
use crate::problem::{ControlSet, ProblemSpec};
use crate::tolerance;

/// Uniform time levels `t_n = t + n h`, `n = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    start: f64,
    end: f64,
    steps: usize,
    step: f64,
    lambda: f64,
    delta: f64,
}

impl TimeGrid {
    pub fn new(start: f64, end: f64, steps: usize, lambda: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::TimeGrid("need at least one time step".into()));
        }
        if !(start < end) || !start.is_finite() || !end.is_finite() {
            return Err(Error::TimeGrid(format!("need t < T, got [{start}, {end}]")));
        }
        if !(lambda >= 0.0) {
            return Err(Error::TimeGrid(format!("discount must be >= 0, got {lambda}")));
        }
        let step = (end - start) / steps as f64;
        if lambda * step >= 1.0 {
            return Err(Error::TimeGrid(format!(
                "lambda * h = {} must be below 1 (lambda = {lambda}, h = {step})",
                lambda * step
            )));
        }
        Ok(Self {
            start,
            end,
            steps,
            step,
            lambda,
            delta: 1.0 - lambda * step,
        })
    }

    /// Grid on the problem's horizon with the problem's discount.
    pub fn for_problem(problem: &ProblemSpec, steps: usize) -> Result<Self> {
        let (t, t_end) = problem.horizon();
        Self::new(t, t_end, steps, problem.discount())
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    /// Number of steps `N`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Step size `h`.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// One-step discount `1 - lambda h`.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn time(&self, level: usize) -> f64 {
        if level == self.steps {
            self.end
        } else {
            self.start + level as f64 * self.step
        }
    }

    /// Continuous discount `exp(-lambda (T - t_n))` from level `n` to the horizon.
    pub fn terminal_weight(&self, level: usize) -> f64 {
        (-self.lambda * (self.end - self.time(level))).exp()
    }
}

/// What to do with Euler foot points that leave the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryPolicy {
    /// Refuse: an escaping foot point is an error.
    #[default]
    Strict,
    /// Clamp the foot point into the box and count it.
    Project,
}

/// Nodal values for every level, row `n` holding `v^n(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    grid: TimeGrid,
    values: Vec<Vec<f64>>,
}

impl ValueFunction {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn level(&self, n: usize) -> &[f64] {
        &self.values[n]
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Piecewise-linear value at an arbitrary point of the domain.
    pub fn eval(&self, mesh: &Mesh, n: usize, x: &[f64]) -> Result<f64> {
        mesh.interp_scalar(&self.values[n], x)
    }
}

/// Argmin control index for every level `n < N` and node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyTable {
    indices: Vec<Vec<usize>>,
}

impl PolicyTable {
    pub fn new(indices: Vec<Vec<usize>>) -> Self {
        Self { indices }
    }

    pub fn get(&self, level: usize, node: usize) -> usize {
        self.indices[level][node]
    }

    pub fn level(&self, n: usize) -> &[usize] {
        &self.indices[n]
    }

    pub fn levels(&self) -> usize {
        self.indices.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub values: ValueFunction,
    pub policy: PolicyTable,
    /// Foot points clamped into the domain over the whole sweep.
    pub clamp_count: u64,
}

/// Result of minimizing the one-step Bellman expression at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepChoice {
    pub value: f64,
    pub argmin: usize,
    pub clamps: u64,
}

/// Everything the scheme needs: problem, mesh, controls, time grid and boundary policy.
#[derive(Debug, Clone, Copy)]
pub struct Scheme<'a> {
    pub problem: &'a ProblemSpec,
    pub mesh: &'a Mesh,
    pub controls: &'a ControlSet,
    pub grid: TimeGrid,
    pub boundary: BoundaryPolicy,
}

impl<'a> Scheme<'a> {
    pub fn new(
        problem: &'a ProblemSpec,
        mesh: &'a Mesh,
        controls: &'a ControlSet,
        grid: TimeGrid,
        boundary: BoundaryPolicy,
    ) -> Result<Self> {
        if problem.state_dim() != mesh.dim() {
            return Err(Error::Dimension {
                expected: problem.state_dim(),
                got: mesh.dim(),
            });
        }
        if problem.control_dim() != controls.dim() {
            return Err(Error::Dimension {
                expected: problem.control_dim(),
                got: controls.dim(),
            });
        }
        let (t, t_end) = problem.horizon();
        if (grid.start() - t).abs() > 1e-12 || (grid.end() - t_end).abs() > 1e-12 {
            return Err(Error::TimeGrid(format!(
                "grid spans [{}, {}] but the problem horizon is [{t}, {t_end}]",
                grid.start(),
                grid.end()
            )));
        }
        if grid.lambda() != problem.discount() {
            return Err(Error::TimeGrid(format!(
                "grid discount {} differs from problem discount {}",
                grid.lambda(),
                problem.discount()
            )));
        }
        Ok(Self {
            problem,
            mesh,
            controls,
            grid,
            boundary,
        })
    }

    /// Euler foot point `x + h f(x, u, t)`, validated or clamped per the boundary policy.
    ///
    /// Returns the point and whether it was clamped.
    pub fn foot_point(
        &self,
        x: &[f64],
        control: usize,
        level: usize,
        node: Option<usize>,
    ) -> Result<(Point, bool)> {
        let d = x.len();
        let mut velocity: Point = SmallVec::from_elem(0.0, d);
        self.problem
            .dynamics(x, self.controls.get(control), self.grid.time(level), &mut velocity);
        let mut foot: Point = x
            .iter()
            .zip(&velocity)
            .map(|(xi, fi)| xi + self.grid.step() * fi)
            .collect();
        let domain = self.mesh.domain();
        if domain.contains(&foot) {
            return Ok((foot, false));
        }
        match self.boundary {
            BoundaryPolicy::Strict => Err(Error::Invariance {
                node,
                control,
                level,
                point: foot.to_vec(),
            }),
            BoundaryPolicy::Project => {
                domain.project_in_place(&mut foot);
                Ok((foot, true))
            }
        }
    }

    /// Minimizes `h L(x, u, t_n) + delta_h I_k v_next(x + h f(x, u, t_n))` over the control set.
    ///
    /// The returned value is the exact minimum; the argmin is the lowest
    /// control index within [`tolerance::ARGMIN_TIE`] of it.
    pub fn minimize_step(
        &self,
        x: &[f64],
        level: usize,
        v_next: &[f64],
        node: Option<usize>,
    ) -> Result<StepChoice> {
        let h = self.grid.step();
        let t = self.grid.time(level);
        let delta = self.grid.delta();
        let mut candidates: SmallVec<[f64; 16]> = SmallVec::with_capacity(self.controls.len());
        let mut clamps = 0;
        for c in 0..self.controls.len() {
            let (foot, clamped) = self.foot_point(x, c, level, node)?;
            clamps += clamped as u64;
            let running = self.problem.running_cost(x, self.controls.get(c), t);
            let continuation = self.mesh.interp_scalar(v_next, &foot)?;
            candidates.push(h * running + delta * continuation);
        }
        let value = candidates.iter().copied().fold(f64::INFINITY, f64::min);
        let argmin = candidates
            .iter()
            .position(|&c| c <= value + tolerance::ARGMIN_TIE)
            .unwrap_or(0);
        Ok(StepChoice {
            value,
            argmin,
            clamps,
        })
    }

    /// One node of one level of the backward sweep.
    pub fn bellman_update(&self, level: usize, node: usize, v_next: &[f64]) -> Result<StepChoice> {
        if v_next.len() != self.mesh.node_count() {
            return Err(Error::Dimension {
                expected: self.mesh.node_count(),
                got: v_next.len(),
            });
        }
        self.minimize_step(self.mesh.vertex(node), level, v_next, Some(node))
    }

    /// Full backward sweep on the current rayon pool. Node updates within a
    /// level run in parallel; every node's minimization is sequential, so the
    /// output does not depend on the schedule.
    pub fn solve(&self) -> Result<Solution> {
        let n_steps = self.grid.steps();
        let n_nodes = self.mesh.node_count();
        let terminal = self.mesh.nodal_values(|x| self.problem.terminal_cost(x));
        if let Some(node) = terminal.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                level: n_steps,
                node,
            });
        }

        let mut values = vec![Vec::new(); n_steps + 1];
        let mut policy = vec![Vec::new(); n_steps];
        values[n_steps] = terminal;
        let mut clamp_count = 0u64;

        for level in (0..n_steps).rev() {
            let next = &values[level + 1];
            let updates: Vec<Result<StepChoice>> = (0..n_nodes)
                .into_par_iter()
                .map(|i| self.bellman_update(level, i, next))
                .collect();
            let mut row = Vec::with_capacity(n_nodes);
            let mut argmins = Vec::with_capacity(n_nodes);
            for (node, update) in updates.into_iter().enumerate() {
                let choice = update?;
                if !choice.value.is_finite() {
                    return Err(Error::NonFinite { level, node });
                }
                row.push(choice.value);
                argmins.push(choice.argmin);
                clamp_count += choice.clamps;
            }
            values[level] = row;
            policy[level] = argmins;
        }

        Ok(Solution {
            values: ValueFunction {
                grid: self.grid,
                values,
            },
            policy: PolicyTable::new(policy),
            clamp_count,
        })
    }

    /// Level-0 nodal values and the clamp count, keeping only two rows in memory.
    ///
    /// Same arithmetic as [`Scheme::solve`]; used for fine reference solves.
    pub fn solve_initial_row(&self) -> Result<(Vec<f64>, u64)> {
        let n_steps = self.grid.steps();
        let n_nodes = self.mesh.node_count();
        let mut next = self.mesh.nodal_values(|x| self.problem.terminal_cost(x));
        if let Some(node) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { level: n_steps, node });
        }
        let mut clamp_count = 0u64;
        for level in (0..n_steps).rev() {
            let updates: Vec<Result<StepChoice>> = (0..n_nodes)
                .into_par_iter()
                .map(|i| self.bellman_update(level, i, &next))
                .collect();
            let mut row = Vec::with_capacity(n_nodes);
            for (node, update) in updates.into_iter().enumerate() {
                let choice = update?;
                if !choice.value.is_finite() {
                    return Err(Error::NonFinite { level, node });
                }
                row.push(choice.value);
                clamp_count += choice.clamps;
            }
            next = row;
        }
        Ok((next, clamp_count))
    }

    /// [`Scheme::solve`] on a dedicated pool of `workers` threads.
    pub fn solve_with_workers(&self, workers: usize) -> Result<Solution> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
        pool.install(|| self.solve())
    }
}

/// How the L_u diagnostic visits node pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LuMode {
    AllPairs,
    Sampled { pairs: usize, seed: u64 },
    /// All pairs up to [`tolerance::LU_ALL_PAIRS_MAX_NODES`] nodes, sampled above.
    Auto { seed: u64 },
}

/// Largest difference quotient `|u_n^i - u_n^j| / |x_i - x_j|` of the nodal argmin controls at one level.
pub fn compute_lu(
    policy: &PolicyTable,
    mesh: &Mesh,
    controls: &ControlSet,
    level: usize,
    mode: LuMode,
) -> Result<f64> {
    let n = mesh.node_count();
    if n < 2 {
        return Err(Error::Undefined("L_u needs at least two nodes".into()));
    }
    if level >= policy.levels() {
        return Err(Error::Undefined(format!(
            "no policy at level {level} (levels 0..{})",
            policy.levels()
        )));
    }
    let row = policy.level(level);
    let quotient = |i: usize, j: usize| {
        let du = dist(controls.get(row[i]), controls.get(row[j]));
        if du == 0.0 {
            0.0
        } else {
            du / dist(mesh.vertex(i), mesh.vertex(j))
        }
    };
    let mode = match mode {
        LuMode::Auto { seed } if n > tolerance::LU_ALL_PAIRS_MAX_NODES => LuMode::Sampled {
            pairs: tolerance::LU_SAMPLED_PAIRS,
            seed,
        },
        LuMode::Auto { .. } => LuMode::AllPairs,
        m => m,
    };
    let lu = match mode {
        LuMode::AllPairs => (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| quotient(i, j))
            .fold(0.0, f64::max),
        LuMode::Sampled { pairs, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..pairs)
                .map(|_| {
                    let i = rng.gen_range(0..n);
                    let j = (i + rng.gen_range(1..n)) % n;
                    quotient(i, j)
                })
                .fold(0.0, f64::max)
        }
        LuMode::Auto { .. } => unreachable!(),
    };
    Ok(lu)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::BoxDomain;
    use crate::problem::{make_problem, ProblemParams};

    fn frozen(cost: f64, terminal: f64) -> ProblemSpec {
        ProblemSpec::new(
            "frozen",
            1,
            1,
            |_, _, _, o| o[0] = 0.0,
            move |_, _, _| cost,
            move |_| terminal,
        )
    }

    fn three_controls() -> ControlSet {
        ControlSet::from_elements(vec![vec![-1.0], vec![0.0], vec![1.0]]).unwrap()
    }

    #[test]
    fn time_grid_basics() {
        let g = TimeGrid::new(0.0, 1.0, 10, 0.5).unwrap();
        assert!((g.step() - 0.1).abs() < 1e-15);
        assert!((g.delta() - 0.95).abs() < 1e-15);
        assert_eq!(g.time(10), 1.0);
        assert!((g.time(3) - 0.3).abs() < 1e-15);
        assert!(TimeGrid::new(0.0, 1.0, 1, 2.0).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0, 0.0).is_err());
        assert!(TimeGrid::new(1.0, 1.0, 4, 0.0).is_err());
    }

    #[test]
    fn bellman_update_examples() {
        let mesh = Mesh::build(BoxDomain::symmetric(1, 1.0).unwrap(), &[4]).unwrap();
        let controls = three_controls();

        let p = frozen(1.0, 0.0);
        let grid = TimeGrid::new(0.0, 1.0, 10, 0.0).unwrap();
        let s = Scheme::new(&p, &mesh, &controls, grid, BoundaryPolicy::Strict).unwrap();
        let out = s.bellman_update(0, 2, &[0.0; 5]).unwrap();
        assert!((out.value - 0.1).abs() < 1e-15);
        assert_eq!(out.argmin, 0);

        let p = frozen(0.0, 1.0).with_discount(0.5).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 10, 0.5).unwrap();
        let s = Scheme::new(&p, &mesh, &controls, grid, BoundaryPolicy::Strict).unwrap();
        let out = s.bellman_update(3, 1, &[1.0; 5]).unwrap();
        assert!((out.value - 0.95).abs() < 1e-15);
    }

    #[test]
    fn eikonal_boundary_node_by_hand() {
        let p = make_problem("eikonal1d", &ProblemParams::new()).unwrap();
        let mesh = Mesh::build(BoxDomain::symmetric(1, 2.0).unwrap(), &[4]).unwrap();
        let controls = three_controls();
        let grid = TimeGrid::new(0.0, 1.0, 1, 0.0).unwrap();
        let g = mesh.nodal_values(|x| x[0].abs());

        // u = -1 -> |1| = 1, u = 0 -> 2, u = +1 escapes to 3
        let strict = Scheme::new(&p, &mesh, &controls, grid, BoundaryPolicy::Strict).unwrap();
        match strict.bellman_update(0, 4, &g) {
            Err(Error::Invariance { node, control, level, .. }) => {
                assert_eq!((node, control, level), (Some(4), 2, 0))
            }
            other => panic!("unexpected {other:?}"),
        }
        let project = Scheme::new(&p, &mesh, &controls, grid, BoundaryPolicy::Project).unwrap();
        let out = project.bellman_update(0, 4, &g).unwrap();
        assert_eq!(out.value, 1.0);
        assert_eq!(out.argmin, 0);
        assert_eq!(out.clamps, 1);
    }

    #[test]
    fn solve_closed_forms() {
        let mesh = Mesh::build(BoxDomain::symmetric(1, 1.0).unwrap(), &[6]).unwrap();
        let controls = three_controls();

        let p = frozen(0.0, 1.0).with_discount(0.5).unwrap().with_horizon(0.0, 0.2).unwrap();
        let grid = TimeGrid::for_problem(&p, 2).unwrap();
        let sol = Scheme::new(&p, &mesh, &controls, grid, BoundaryPolicy::Strict)
            .unwrap()
            .solve()
            .unwrap();
        assert!(sol.values.level(0).iter().all(|v| (v - 0.9025).abs() < 1e-15));

        let p = frozen(1.0, 0.0);
        let grid = TimeGrid::for_problem(&p, 10).unwrap();
        let sol = Scheme::new(&p, &mesh, &controls, grid, BoundaryPolicy::Strict)
            .unwrap()
            .solve()
            .unwrap();
        assert!(sol.values.level(0).iter().all(|v| (v - 1.0).abs() < 1e-14));
        assert!(sol.policy.level(0).iter().all(|&a| a == 0));
    }

    #[test]
    fn eikonal_reference_error() {
        let p = make_problem("eikonal1d", &ProblemParams::new()).unwrap();
        let mesh = Mesh::build(BoxDomain::symmetric(1, 2.0).unwrap(), &[64]).unwrap();
        let controls = three_controls();
        let grid = TimeGrid::for_problem(&p, 16).unwrap();
        let sol = Scheme::new(&p, &mesh, &controls, grid, BoundaryPolicy::Project)
            .unwrap()
            .solve()
            .unwrap();
        let err = mesh
            .vertices()
            .zip(sol.values.level(0))
            .filter(|(x, _)| x[0].abs() <= 0.5)
            .map(|(x, v)| (v - (x[0].abs() - 1.0).max(0.0)).abs())
            .fold(0.0, f64::max);
        assert!(err <= 0.25, "max error {err}");
        assert!(sol.clamp_count > 0);
    }

    #[test]
    fn strict_solve_refuses_escaping_dynamics() {
        let p = make_problem("eikonal1d", &ProblemParams::new()).unwrap();
        let mesh = Mesh::build(BoxDomain::symmetric(1, 1.0).unwrap(), &[8]).unwrap();
        let controls = three_controls();
        let grid = TimeGrid::for_problem(&p, 4).unwrap();
        let s = Scheme::new(&p, &mesh, &controls, grid, BoundaryPolicy::Strict).unwrap();
        assert!(matches!(s.solve(), Err(Error::Invariance { .. })));
    }

    #[test]
    fn scheme_rejects_mismatched_inputs() {
        let p = make_problem("eikonal2d", &ProblemParams::new()).unwrap();
        let mesh = Mesh::build(BoxDomain::symmetric(1, 1.0).unwrap(), &[8]).unwrap();
        let controls = three_controls();
        let grid = TimeGrid::for_problem(&p, 4).unwrap();
        assert!(Scheme::new(&p, &mesh, &controls, grid, BoundaryPolicy::Strict).is_err());
        let p1 = make_problem("eikonal1d", &ProblemParams::new()).unwrap();
        let off = TimeGrid::new(0.0, 2.0, 4, 0.0).unwrap();
        assert!(Scheme::new(&p1, &mesh, &controls, off, BoundaryPolicy::Strict).is_err());
    }

    #[test]
    fn lu_examples() {
        let mesh = Mesh::build(BoxDomain::new(vec![0.0], vec![1.0]).unwrap(), &[2]).unwrap();
        let controls = ControlSet::from_elements(vec![vec![1.0], vec![-1.0]]).unwrap();
        let policy = PolicyTable::new(vec![vec![0, 0, 1]]);
        assert!((compute_lu(&policy, &mesh, &controls, 0, LuMode::AllPairs).unwrap() - 4.0).abs() < 1e-15);

        let constant = PolicyTable::new(vec![vec![1, 1, 1]]);
        assert_eq!(compute_lu(&constant, &mesh, &controls, 0, LuMode::AllPairs).unwrap(), 0.0);

        let fine = Mesh::build(BoxDomain::new(vec![0.0], vec![1.0]).unwrap(), &[10]).unwrap();
        let gap = ControlSet::from_elements(vec![vec![0.0], vec![0.3]]).unwrap();
        let mut row = vec![0; 11];
        row[10] = 1;
        let single = PolicyTable::new(vec![row]);
        let lu = compute_lu(&single, &fine, &gap, 0, LuMode::AllPairs).unwrap();
        assert!((lu - 0.3 / 0.1).abs() < 1e-12);
        let sampled = compute_lu(&single, &fine, &gap, 0, LuMode::Sampled { pairs: 5000, seed: 1 }).unwrap();
        assert!(sampled <= lu + 1e-12 && sampled > 0.0);

        let lonely = Mesh::build(BoxDomain::new(vec![0.0], vec![1.0]).unwrap(), &[1]).unwrap();
        assert!(compute_lu(&PolicyTable::new(vec![vec![0, 0]]), &lonely, &controls, 1, LuMode::AllPairs).is_err());
    }
}
