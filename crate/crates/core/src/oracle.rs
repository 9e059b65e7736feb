//! Fully discrete cost functional and the reference values used to check the scheme.
//!
//! From a point `x` at level `n`, every node `i` carries its own control
//! sequence `u^{i,n}, ..., u^{i,N-1}`. The trajectory moves with the
//! interpolated dynamics
//!
//! ```text
//! y_{j+1} = y_j + h sum_i mu_i(y_j) f(x_i, u^{i,j}, t_j)
//! ```
//!
//! and the functional is
//!
//! ```text
//! J = h sum_j delta_h^{j-n} sum_i mu_i(y_j) L(x_i, u^{i,j}, t_j) + I_k g(y_N) * terminal factor
//! ```

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::mesh::{combine_scalar, combine_vector, interp_located, BarycentricLocation, Point};
use crate::problem::{ControlSet, ProblemSpec};
use crate::solver::{BoundaryPolicy, PolicyTable, Scheme, TimeGrid};
use crate::tolerance;

/// Discount applied to the terminal cost from level `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalDiscount {
    /// `exp(-lambda (T - t_n))`.
    #[default]
    Exponential,
    /// `delta_h^{N-n}`, the factor the backward recursion produces.
    Discrete,
}

impl TerminalDiscount {
    pub fn factor(self, grid: &TimeGrid, level: usize) -> f64 {
        match self {
            TerminalDiscount::Exponential => grid.terminal_weight(level),
            TerminalDiscount::Discrete => grid.delta().powi((grid.steps() - level) as i32),
        }
    }
}

/// One control per time interval `[t_l, t_{l+1})`, `l = start..N-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstantControl {
    start: usize,
    dim: usize,
    values: Vec<f64>,
}

impl PiecewiseConstantControl {
    pub fn new(start: usize, values: Vec<Vec<f64>>) -> Result<Self> {
        let dim = values.first().map_or(0, Vec::len);
        if values.iter().any(|u| u.len() != dim) {
            return Err(Error::ControlSet("control values of mixed dimension".into()));
        }
        Ok(Self {
            start,
            dim,
            values: values.concat(),
        })
    }

    pub fn constant(start: usize, end: usize, u: &[f64]) -> Self {
        let steps = end.saturating_sub(start);
        Self {
            start,
            dim: u.len(),
            values: u.repeat(steps),
        }
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Control on `[t_level, t_{level+1})`.
    pub fn get(&self, level: usize) -> &[f64] {
        let j = level - self.start;
        &self.values[j * self.dim..(j + 1) * self.dim]
    }
}

/// Per-node control sequences from level `start` to `N-1`.
///
/// Stored either one row per node, or a single row shared by every node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeControlSequences {
    start: usize,
    steps: usize,
    dim: usize,
    nodes: usize,
    broadcast: bool,
    blended: bool,
    values: Vec<f64>,
}

impl NodeControlSequences {
    /// `indices[i][j]` is the control index used at node `i` on step `start + j`.
    pub fn from_indices(
        start: usize,
        controls: &ControlSet,
        indices: &[Vec<usize>],
    ) -> Result<Self> {
        let steps = indices.first().map_or(0, Vec::len);
        if indices.iter().any(|row| row.len() != steps) {
            return Err(Error::ControlSet("node sequences of different lengths".into()));
        }
        let mut values = Vec::with_capacity(indices.len() * steps * controls.dim());
        for &c in indices.iter().flatten() {
            if c >= controls.len() {
                return Err(Error::ControlSet(format!(
                    "control index {c} out of range for {} controls",
                    controls.len()
                )));
            }
            values.extend_from_slice(controls.get(c));
        }
        Ok(Self {
            start,
            steps,
            dim: controls.dim(),
            nodes: indices.len(),
            broadcast: false,
            blended: false,
            values,
        })
    }

    /// The same piecewise-constant control at every node.
    ///
    /// `blended` marks controls drawn from the convex hull rather than the set itself.
    pub fn broadcast(control: &PiecewiseConstantControl, blended: bool) -> Self {
        Self {
            start: control.start,
            steps: control.len(),
            dim: control.dim,
            nodes: 0,
            broadcast: true,
            blended,
            values: control.values.clone(),
        }
    }

    fn per_node_values(start: usize, steps: usize, dim: usize, nodes: usize, values: Vec<f64>) -> Self {
        Self {
            start,
            steps,
            dim,
            nodes,
            broadcast: false,
            blended: false,
            values,
        }
    }

    pub fn start(&self) -> usize {
        self.start
    }

    /// Number of steps `N - start`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_broadcast(&self) -> bool {
        self.broadcast
    }

    pub fn is_blended(&self) -> bool {
        self.blended
    }

    /// Control used at `node` on `[t_level, t_{level+1})`.
    pub fn control(&self, node: usize, level: usize) -> &[f64] {
        let j = level - self.start;
        let row = if self.broadcast { 0 } else { node };
        let at = (row * self.steps + j) * self.dim;
        &self.values[at..at + self.dim]
    }

    /// Overwrites one entry; used to probe that zero-weight entries are irrelevant.
    pub fn set_control(&mut self, node: usize, level: usize, u: &[f64]) {
        assert!(!self.broadcast, "cannot edit a single node of a broadcast sequence");
        let at = (node * self.steps + level - self.start) * self.dim;
        self.values[at..at + self.dim].copy_from_slice(u);
    }

    /// Whether every entry belongs to `controls`.
    pub fn admissible(&self, controls: &ControlSet) -> bool {
        self.values
            .chunks(self.dim.max(1))
            .all(|u| controls.index_of(u).is_some())
    }

    fn check(&self, scheme: &Scheme<'_>) -> Result<()> {
        if self.dim != scheme.controls.dim() {
            return Err(Error::Dimension {
                expected: scheme.controls.dim(),
                got: self.dim,
            });
        }
        if self.start + self.steps != scheme.grid.steps() {
            return Err(Error::TimeGrid(format!(
                "sequences cover levels {}..{} but the grid has {} steps",
                self.start,
                self.start + self.steps,
                scheme.grid.steps()
            )));
        }
        if !self.broadcast && self.nodes != scheme.mesh.node_count() {
            return Err(Error::Dimension {
                expected: scheme.mesh.node_count(),
                got: self.nodes,
            });
        }
        Ok(())
    }
}

/// States `y_n..y_N` and the simplex locations used at `y_n..y_{N-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTrajectory {
    pub start: usize,
    pub states: Vec<Point>,
    pub locations: Vec<BarycentricLocation>,
    /// States clamped into the domain under the projection policy.
    pub clamps: usize,
}

/// One interpolated Euler step. Returns the next state and `I_k L` at `y`.
fn interpolated_step<'c>(
    scheme: &Scheme<'_>,
    loc: &BarycentricLocation,
    y: &[f64],
    level: usize,
    mut control: impl FnMut(usize) -> &'c [f64],
) -> (Point, f64) {
    let t = scheme.grid.time(level);
    let mut velocity: Point = SmallVec::from_elem(0.0, y.len());
    // each node's control is looked up once per step
    let mut cache: SmallVec<[(usize, &'c [f64]); 4]> = SmallVec::new();
    for (i, _) in loc.support() {
        cache.push((i, control(i)));
    }
    let lookup = |i: usize| cache.iter().find(|(n, _)| *n == i).map(|(_, u)| *u).unwrap();
    combine_vector(loc, &mut velocity, |i, out| {
        scheme.problem.dynamics(scheme.mesh.vertex(i), lookup(i), t, out)
    });
    let running = combine_scalar(loc, |i| {
        scheme.problem.running_cost(scheme.mesh.vertex(i), lookup(i), t)
    });
    let next = y
        .iter()
        .zip(&velocity)
        .map(|(a, b)| a + scheme.grid.step() * b)
        .collect();
    (next, running)
}

fn admit_state(scheme: &Scheme<'_>, y: &mut Point, step: usize, clamps: &mut usize) -> Result<()> {
    let domain = scheme.mesh.domain();
    if domain.contains(y) {
        return Ok(());
    }
    match scheme.boundary {
        BoundaryPolicy::Strict => Err(Error::TrajectoryEscape {
            step,
            point: y.to_vec(),
        }),
        BoundaryPolicy::Project => {
            domain.project_in_place(y);
            *clamps += 1;
            Ok(())
        }
    }
}

/// `J_{h,k}^n(x, seqs)` and the trajectory it follows.
pub fn discrete_functional(
    x: &[f64],
    seqs: &NodeControlSequences,
    scheme: &Scheme<'_>,
    terminal: TerminalDiscount,
) -> Result<(f64, DiscreteTrajectory)> {
    seqs.check(scheme)?;
    let n = seqs.start();
    let n_end = scheme.grid.steps();
    let h = scheme.grid.step();
    let delta = scheme.grid.delta();

    let mut y: Point = x.iter().copied().collect();
    let mut clamps = 0;
    admit_state(scheme, &mut y, n, &mut clamps)?;
    let mut states = vec![y.clone()];
    let mut locations = Vec::with_capacity(n_end - n);
    let mut running = 0.0;
    let mut discount = 1.0;
    for level in n..n_end {
        let loc = scheme.mesh.locate(&y)?;
        let (mut next, cost) = interpolated_step(scheme, &loc, &y, level, |i| seqs.control(i, level));
        running += discount * cost;
        discount *= delta;
        admit_state(scheme, &mut next, level + 1, &mut clamps)?;
        locations.push(loc);
        states.push(next.clone());
        y = next;
    }
    let g_end = scheme
        .mesh
        .interp_node_scalar(&y, |i| scheme.problem.terminal_cost(scheme.mesh.vertex(i)))?;
    let value = h * running + g_end * terminal.factor(&scheme.grid, n);
    Ok((
        value,
        DiscreteTrajectory {
            start: n,
            states,
            locations,
            clamps,
        },
    ))
}

/// Exact minimum of [`discrete_functional`] over all per-node sequences drawn from the control set.
///
/// Sequences are enumerated in lexicographic order of (node, time, control
/// index) and only a strictly smaller value replaces the incumbent, so the
/// reported minimizer is the lexicographically first among ties.
pub fn brute_force_value(
    x: &[f64],
    level: usize,
    scheme: &Scheme<'_>,
    terminal: TerminalDiscount,
) -> Result<(f64, NodeControlSequences)> {
    let n_nodes = scheme.mesh.node_count();
    let n_end = scheme.grid.steps();
    if level >= n_end {
        return Err(Error::TimeGrid(format!("level {level} has no steps left (N = {n_end})")));
    }
    let steps = n_end - level;
    let n_controls = scheme.controls.len();
    let digits = n_nodes * steps;
    let count = (n_controls as f64).powi(digits as i32);
    if count > tolerance::BRUTE_FORCE_LIMIT {
        return Err(Error::SearchSpace {
            count,
            limit: tolerance::BRUTE_FORCE_LIMIT,
        });
    }

    // digit (i * steps + j) holds the control index of node i at level + j
    let mut odometer = vec![0usize; digits];
    let mut best_value = f64::INFINITY;
    let mut best = odometer.clone();
    let dim = scheme.controls.dim();
    let mut values = vec![0.0; digits * dim];
    loop {
        for (slot, &c) in odometer.iter().enumerate() {
            values[slot * dim..(slot + 1) * dim].copy_from_slice(scheme.controls.get(c));
        }
        let seqs = NodeControlSequences::per_node_values(level, steps, dim, n_nodes, values.clone());
        let (value, _) = discrete_functional(x, &seqs, scheme, terminal)?;
        if value < best_value {
            best_value = value;
            best.clone_from(&odometer);
        }
        // advance: last digit fastest
        let mut pos = digits;
        loop {
            if pos == 0 {
                let indices: Vec<Vec<usize>> = best.chunks(steps).map(<[usize]>::to_vec).collect();
                let seqs = NodeControlSequences::from_indices(level, scheme.controls, &indices)?;
                return Ok((best_value, seqs));
            }
            pos -= 1;
            odometer[pos] += 1;
            if odometer[pos] < n_controls {
                break;
            }
            odometer[pos] = 0;
        }
    }
}

/// Which level's policy a node contributes at later trajectory steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyReading {
    /// Node `i` uses its level-`n` argmin at every step.
    #[default]
    StartLevel,
    /// Node `i` uses its level-`j` argmin at step `j`.
    CurrentLevel,
}

/// Control sequences built from a solved policy along the interpolated trajectory from `x`.
///
/// Nodes with zero weight at a step receive the first element of the control set.
pub fn sequences_from_policy(
    x: &[f64],
    level: usize,
    policy: &PolicyTable,
    scheme: &Scheme<'_>,
    reading: PolicyReading,
) -> Result<NodeControlSequences> {
    let n_nodes = scheme.mesh.node_count();
    let n_end = scheme.grid.steps();
    let steps = n_end - level;
    let mut indices = vec![vec![0usize; steps]; n_nodes];

    let mut y: Point = x.iter().copied().collect();
    let mut clamps = 0;
    admit_state(scheme, &mut y, level, &mut clamps)?;
    for j in level..n_end {
        let loc = scheme.mesh.locate(&y)?;
        let row = match reading {
            PolicyReading::StartLevel => level,
            PolicyReading::CurrentLevel => j,
        };
        for (i, _) in loc.support() {
            indices[i][j - level] = policy.get(row, i);
        }
        let (mut next, _) =
            interpolated_step(scheme, &loc, &y, j, |i| scheme.controls.get(indices[i][j - level]));
        admit_state(scheme, &mut next, j + 1, &mut clamps)?;
        y = next;
    }
    NodeControlSequences::from_indices(level, scheme.controls, &indices)
}

/// Reference value of the continuous cost of a piecewise-constant control from `(x, t_n)`.
///
/// Each interval is split into `substeps` pieces; the state is advanced with
/// classical fourth-order Runge-Kutta and the running cost integrated with
/// Simpson's rule on each piece, using a half-step RK4 solve for the
/// midpoint state. The result is accurate to `O((h / substeps)^4)`.
pub fn continuous_cost(
    x: &[f64],
    control: &PiecewiseConstantControl,
    problem: &ProblemSpec,
    grid: &TimeGrid,
    substeps: usize,
) -> Result<f64> {
    if substeps == 0 {
        return Err(Error::Config("substeps must be at least 1".into()));
    }
    let n = control.start();
    if n + control.len() != grid.steps() {
        return Err(Error::TimeGrid(format!(
            "control covers levels {n}..{} but the grid has {} steps",
            n + control.len(),
            grid.steps()
        )));
    }
    let lambda = grid.lambda();
    let t_n = grid.time(n);
    let tau = grid.step() / substeps as f64;
    let integrand = |y: &[f64], u: &[f64], s: f64| {
        problem.running_cost(y, u, s) * (-lambda * (s - t_n)).exp()
    };

    let mut y: Vec<f64> = x.to_vec();
    let mut total = 0.0;
    for level in n..grid.steps() {
        let u = control.get(level);
        let t_l = grid.time(level);
        for k in 0..substeps {
            let s = t_l + k as f64 * tau;
            let mid = rk4(problem, &y, u, s, 0.5 * tau);
            let end = rk4(problem, &y, u, s, tau);
            total += tau / 6.0
                * (integrand(&y, u, s) + 4.0 * integrand(&mid, u, s + 0.5 * tau) + integrand(&end, u, s + tau));
            y = end;
        }
        if !y.iter().all(|v| v.is_finite()) || !total.is_finite() {
            return Err(Error::Undefined(format!("non-finite reference trajectory at level {level}")));
        }
    }
    Ok(total + problem.terminal_cost(&y) * grid.terminal_weight(n))
}

fn rk4(problem: &ProblemSpec, y: &[f64], u: &[f64], s: f64, dt: f64) -> Vec<f64> {
    let d = y.len();
    let shifted = |k: &[f64], a: f64| -> Vec<f64> { y.iter().zip(k).map(|(yi, ki)| yi + a * ki).collect() };
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    problem.dynamics(y, u, s, &mut k1);
    problem.dynamics(&shifted(&k1, 0.5 * dt), u, s + 0.5 * dt, &mut k2);
    problem.dynamics(&shifted(&k2, 0.5 * dt), u, s + 0.5 * dt, &mut k3);
    problem.dynamics(&shifted(&k3, dt), u, s + dt, &mut k4);
    (0..d)
        .map(|a| y[a] + dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]))
        .collect()
}

/// Interpolated value `I_k v^n(x)` straight from a solution's nodal row.
pub fn interpolated_value(scheme: &Scheme<'_>, nodal: &[f64], x: &[f64]) -> Result<f64> {
    let loc = scheme.mesh.locate(x)?;
    Ok(interp_located(&loc, nodal))
}
