//! Refinement studies and rate fitting.
//!
//! Every study halves its discretization parameters level by level, records
//! one error per level and fits the slope of `log(error)` against
//! `log(scale)`. The scale is `h + k` for coupled refinement and `k` for
//! mesh-only sweeps.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{BoxDomain, Mesh};
use crate::oracle::{
    continuous_cost, discrete_functional, sequences_from_policy, NodeControlSequences,
    PiecewiseConstantControl, PolicyReading, TerminalDiscount,
};
use crate::problem::{ControlSet, ProblemSpec};
use crate::solver::{compute_lu, BoundaryPolicy, LuMode, Scheme, TimeGrid};
use crate::synthesis::{blended_control_sequence, simulate};
use crate::tolerance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Max,
    Mean,
}

impl Norm {
    fn apply(self, errors: &[f64]) -> f64 {
        match self {
            Norm::Max => errors.iter().copied().fold(0.0, f64::max),
            Norm::Mean => errors.iter().sum::<f64>() / errors.len() as f64,
        }
    }
}

/// Where the comparison values in a convergence study come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    /// Closed form when the problem has one, otherwise a finer solve.
    #[default]
    Auto,
    /// Closed form only; a problem without one is a configuration error.
    Exact,
    /// One solve with 4x the finest level's subdivisions and steps.
    Finer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Convergence,
    Lemma1,
    Interpolation,
    BlendGap,
    ClosedLoop,
}

impl StudyKind {
    fn tag(self) -> &'static str {
        match self {
            StudyKind::Convergence => "converge",
            StudyKind::Lemma1 => "lemma1",
            StudyKind::Interpolation => "interp",
            StudyKind::BlendGap => "blend_gap",
            StudyKind::ClosedLoop => "closed_loop",
        }
    }
}

/// One refinement level of a study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRecord {
    pub level: usize,
    pub h: f64,
    pub k: f64,
    /// Abscissa of the rate fit.
    pub scale: f64,
    pub controls: usize,
    pub nodes: usize,
    /// Points entering the error norm.
    pub measured: usize,
    pub error: f64,
    /// Error at or below [`tolerance::ZERO_ERROR`]: treated as exact and left out of the fit.
    pub exact: bool,
    /// `L_g k` for interpolation studies.
    pub bound: Option<f64>,
    pub lu: Option<f64>,
    /// `L_u` relative to the previous level.
    pub lu_ratio: Option<f64>,
    /// `L_u` more than doubled since the previous level.
    pub lu_flag: bool,
    pub clamp_count: u64,
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl LevelRecord {
    fn new(level: usize, h: f64, k: f64, scale: f64, error: f64) -> Self {
        Self {
            level,
            h,
            k,
            scale,
            controls: 0,
            nodes: 0,
            measured: 0,
            error,
            exact: error <= tolerance::ZERO_ERROR,
            bound: None,
            lu: None,
            lu_ratio: None,
            lu_flag: false,
            clamp_count: 0,
            wall_seconds: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub rate: f64,
    pub used: usize,
    pub excluded: usize,
}

/// Least-squares slope of `log(error)` against `log(scale)`.
///
/// Pairs whose error is at or below [`tolerance::ZERO_ERROR`] count as exact
/// and are excluded.
pub fn estimate_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    let usable: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|(s, e)| *s > 0.0 && *e > tolerance::ZERO_ERROR && e.is_finite())
        .map(|(s, e)| (s.ln(), e.ln()))
        .collect();
    if usable.len() < 2 {
        return Err(Error::InsufficientData { usable: usable.len() });
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Undefined("all scales are equal; no slope".into()));
    }
    Ok(RateFit {
        rate: sxy / sxx,
        used: usable.len(),
        excluded: pairs.len() - usable.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub kind: StudyKind,
    pub problem: String,
    pub norm: Option<Norm>,
    pub subdomain: Option<BoxDomain>,
    /// `h / k` on the coarsest level.
    pub coupling: f64,
    pub reference: String,
    pub levels: Vec<LevelRecord>,
    pub caveats: Vec<String>,
}

impl ConvergenceReport {
    fn new(kind: StudyKind, problem: &str, reference: &str) -> Self {
        Self {
            kind,
            problem: problem.to_string(),
            norm: None,
            subdomain: None,
            coupling: f64::NAN,
            reference: reference.to_string(),
            levels: Vec::new(),
            caveats: Vec::new(),
        }
    }

    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.levels.iter().map(|l| (l.scale, l.error)).collect()
    }

    pub fn fit(&self) -> Result<RateFit> {
        estimate_rate(&self.pairs())
    }

    pub fn errors(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.error).collect()
    }

    pub fn finest(&self) -> Option<&LevelRecord> {
        self.levels.last()
    }

    /// Levels whose `L_u` more than doubled relative to the previous level.
    pub fn lu_flags(&self) -> Vec<usize> {
        self.levels.iter().filter(|l| l.lu_flag).map(|l| l.level).collect()
    }

    /// Encodes study, problem, coupling and level count.
    pub fn file_stem(&self) -> String {
        let coupling = if self.coupling.is_finite() {
            format!("_c{:.3}", self.coupling).replace('.', "p")
        } else {
            String::new()
        };
        format!("{}_{}{}_L{}", self.kind.tag(), self.problem, coupling, self.levels.len())
    }

    /// Deterministic table; wall times live in the metadata only.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(
            out,
            "level,h,k,scale,controls,nodes,measured,error,exact,bound,lu,lu_ratio,lu_flag,clamps"
        )?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for l in &self.levels {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                l.level,
                l.h,
                l.k,
                l.scale,
                l.controls,
                l.nodes,
                l.measured,
                l.error,
                l.exact,
                opt(l.bound),
                opt(l.lu),
                opt(l.lu_ratio),
                l.lu_flag,
                l.clamp_count
            )?;
        }
        Ok(())
    }

    /// Structured summary. Everything outside `nondeterministic` is reproducible.
    pub fn metadata(&self) -> serde_json::Value {
        let fit = match self.fit() {
            Ok(f) => serde_json::to_value(f).unwrap_or_default(),
            Err(e) => serde_json::json!({ "error": e.to_string(), "code": e.code() }),
        };
        serde_json::json!({
            "report": self,
            "rate": fit,
            "lu_flags": self.lu_flags(),
            "nondeterministic": {
                "wall_seconds": self.levels.iter().map(|l| l.wall_seconds).collect::<Vec<_>>(),
            },
        })
    }
}

fn scaled(base: &[usize], level: usize) -> Vec<usize> {
    base.iter().map(|&n| n << level).collect()
}

/// Inputs of [`run_convergence`].
#[derive(Debug, Clone)]
pub struct ConvergenceStudy<'a> {
    pub problem: &'a ProblemSpec,
    pub controls: &'a ControlSet,
    pub domain: BoxDomain,
    pub base_subdivisions: Vec<usize>,
    pub base_steps: usize,
    pub levels: usize,
    pub subdomain: BoxDomain,
    pub norm: Norm,
    pub boundary: BoundaryPolicy,
    pub reference: Reference,
    pub seed: u64,
}

/// Solves at `(h, k) / 2^l` for `l = 0..levels` and measures `v^0` against the reference on the subdomain nodes.
pub fn run_convergence(study: &ConvergenceStudy<'_>) -> Result<ConvergenceReport> {
    if study.levels == 0 {
        return Err(Error::Config("a study needs at least one level".into()));
    }
    if !study.domain.contains_box(&study.subdomain) {
        return Err(Error::Config("measurement subdomain must lie inside the domain".into()));
    }
    let problem = study.problem;
    let use_exact = match study.reference {
        Reference::Exact if !problem.has_exact() => {
            return Err(Error::Config(format!(
                "problem `{}` has no closed-form value and the finer reference is disabled",
                problem.name()
            )))
        }
        Reference::Exact => true,
        Reference::Auto => problem.has_exact(),
        Reference::Finer => false,
    };
    let t0 = problem.horizon().0;

    let mut report = ConvergenceReport::new(
        StudyKind::Convergence,
        problem.name(),
        if use_exact { "exact" } else { "finer_4x" },
    );
    report.norm = Some(study.norm);
    report.subdomain = Some(study.subdomain.clone());

    let reference = if use_exact {
        None
    } else {
        let finest = study.levels - 1;
        let subdivisions: Vec<usize> = scaled(&study.base_subdivisions, finest + 2);
        let mesh = Mesh::build(study.domain.clone(), &subdivisions)?;
        let grid = TimeGrid::for_problem(problem, study.base_steps << (finest + 2))?;
        let scheme = Scheme::new(problem, &mesh, study.controls, grid, study.boundary)?;
        let (row, _) = scheme.solve_initial_row()?;
        report.caveats.push(format!(
            "reference is a solve with h = {}, k = {}; its own error is not removed",
            grid.step(),
            mesh.mesh_size()
        ));
        Some((mesh, row))
    };

    let mut previous_lu: Option<f64> = None;
    for level in 0..study.levels {
        let started = Instant::now();
        let mesh = Mesh::build(study.domain.clone(), &scaled(&study.base_subdivisions, level))?;
        let grid = TimeGrid::for_problem(problem, study.base_steps << level)?;
        let scheme = Scheme::new(problem, &mesh, study.controls, grid, study.boundary)?;
        let solution = scheme.solve()?;
        let v0 = solution.values.level(0);

        let mut errors = Vec::new();
        for (i, x) in mesh.vertices().enumerate() {
            if !study.subdomain.contains(x) {
                continue;
            }
            let truth = match &reference {
                None => problem.exact_value(x, t0).expect("checked above"),
                Some((fine, row)) => fine.interp_scalar(row, x)?,
            };
            errors.push((v0[i] - truth).abs());
        }
        if errors.is_empty() {
            return Err(Error::Config(format!("no mesh node inside the subdomain at level {level}")));
        }

        let lu = compute_lu(&solution.policy, &mesh, study.controls, 0, LuMode::Auto { seed: study.seed })?;
        let (lu_ratio, lu_flag) = match previous_lu {
            None => (None, false),
            Some(prev) if prev > 0.0 => (Some(lu / prev), lu > 2.0 * prev),
            Some(_) => (None, lu > 0.0),
        };
        previous_lu = Some(lu);

        if level == 0 {
            report.coupling = grid.step() / mesh.mesh_size();
        }
        let error = study.norm.apply(&errors);
        let mut record = LevelRecord::new(level, grid.step(), mesh.mesh_size(), grid.step() + mesh.mesh_size(), error);
        record.controls = study.controls.len();
        record.nodes = mesh.node_count();
        record.measured = errors.len();
        record.lu = Some(lu);
        record.lu_ratio = lu_ratio;
        record.lu_flag = lu_flag;
        record.clamp_count = solution.clamp_count;
        record.wall_seconds = started.elapsed().as_secs_f64();
        report.levels.push(record);
    }
    Ok(report)
}

/// Inputs of [`lemma1_study`].
#[derive(Debug, Clone)]
pub struct Lemma1Study<'a> {
    pub problem: &'a ProblemSpec,
    pub domain: BoxDomain,
    pub base_subdivisions: Vec<usize>,
    pub base_steps: usize,
    pub levels: usize,
    /// Piecewise constant on the coarsest intervals, starting at level 0.
    pub control: PiecewiseConstantControl,
    pub x: Vec<f64>,
    pub boundary: BoundaryPolicy,
    pub substeps: usize,
    pub terminal: TerminalDiscount,
}

/// Gap between the continuous cost of a fixed control and the discrete functional with every node using it.
pub fn lemma1_study(study: &Lemma1Study<'_>) -> Result<ConvergenceReport> {
    if study.levels == 0 {
        return Err(Error::Config("a study needs at least one level".into()));
    }
    if study.control.start() != 0 || study.control.len() != study.base_steps {
        return Err(Error::Config(format!(
            "the fixed control needs one value per coarsest interval ({} values)",
            study.base_steps
        )));
    }
    let problem = study.problem;
    let coarse: Vec<Vec<f64>> = (0..study.base_steps).map(|l| study.control.get(l).to_vec()).collect();
    let mut distinct: Vec<Vec<f64>> = Vec::new();
    for u in &coarse {
        if !distinct.contains(u) {
            distinct.push(u.clone());
        }
    }
    let controls = ControlSet::from_elements(distinct)?;

    let mut report = ConvergenceReport::new(StudyKind::Lemma1, problem.name(), "rk4_simpson");
    report.caveats.push(format!(
        "continuous cost integrated with {} substeps per interval",
        study.substeps
    ));
    for level in 0..study.levels {
        let started = Instant::now();
        let factor = 1usize << level;
        let mesh = Mesh::build(study.domain.clone(), &scaled(&study.base_subdivisions, level))?;
        let grid = TimeGrid::for_problem(problem, study.base_steps * factor)?;
        let scheme = Scheme::new(problem, &mesh, &controls, grid, study.boundary)?;
        let fine: Vec<Vec<f64>> = coarse
            .iter()
            .flat_map(|u| std::iter::repeat_n(u.clone(), factor))
            .collect();
        let control = PiecewiseConstantControl::new(0, fine)?;
        let reference = continuous_cost(&study.x, &control, problem, &grid, study.substeps)?;
        let seqs = NodeControlSequences::broadcast(&control, false);
        let (discrete, traj) = discrete_functional(&study.x, &seqs, &scheme, study.terminal)?;
        if level == 0 {
            report.coupling = grid.step() / mesh.mesh_size();
        }
        let mut record = LevelRecord::new(
            level,
            grid.step(),
            mesh.mesh_size(),
            grid.step() + mesh.mesh_size(),
            (reference - discrete).abs(),
        );
        record.controls = controls.len();
        record.nodes = mesh.node_count();
        record.measured = 1;
        record.clamp_count = traj.clamps as u64;
        record.wall_seconds = started.elapsed().as_secs_f64();
        report.levels.push(record);
    }
    Ok(report)
}

/// Sup of `|I_k g - g|` over `samples` seeded uniform points, per level, with the bound `L_g k`.
pub fn interp_error_study(
    name: &str,
    g: impl Fn(&[f64]) -> f64,
    lipschitz: f64,
    domain: &BoxDomain,
    base_subdivisions: &[usize],
    levels: usize,
    samples: usize,
    seed: u64,
) -> Result<ConvergenceReport> {
    if levels == 0 || samples == 0 {
        return Err(Error::Config("interpolation study needs levels and samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..samples)
        .map(|_| {
            domain
                .lower()
                .iter()
                .zip(domain.upper())
                .map(|(&a, &b)| rng.gen_range(a..=b))
                .collect()
        })
        .collect();

    let mut report = ConvergenceReport::new(StudyKind::Interpolation, name, "pointwise");
    report.norm = Some(Norm::Max);
    for level in 0..levels {
        let started = Instant::now();
        let mesh = Mesh::build(domain.clone(), &scaled(base_subdivisions, level))?;
        let nodal = mesh.nodal_values(&g);
        let mut sup: f64 = 0.0;
        for x in &points {
            sup = sup.max((mesh.interp_scalar(&nodal, x)? - g(x)).abs());
        }
        let k = mesh.mesh_size();
        let mut record = LevelRecord::new(level, 0.0, k, k, sup);
        record.nodes = mesh.node_count();
        record.measured = samples;
        record.bound = Some(lipschitz * k);
        record.wall_seconds = started.elapsed().as_secs_f64();
        report.levels.push(record);
    }
    Ok(report)
}

/// Inputs shared by the mesh-refinement diagnostics below.
#[derive(Debug, Clone)]
pub struct DiagnosticStudy<'a> {
    pub problem: &'a ProblemSpec,
    pub controls: &'a ControlSet,
    pub domain: BoxDomain,
    pub base_subdivisions: Vec<usize>,
    pub base_steps: usize,
    pub levels: usize,
    pub points: Vec<Vec<f64>>,
    pub boundary: BoundaryPolicy,
}

/// Largest gap, over the given points, between the functional of the policy's
/// per-node sequences and that of the blended control broadcast to all nodes.
///
/// `h` stays fixed and only the mesh is refined, so the scale is `k`.
pub fn blend_gap_study(study: &DiagnosticStudy<'_>) -> Result<ConvergenceReport> {
    let problem = study.problem;
    let mut report = ConvergenceReport::new(StudyKind::BlendGap, problem.name(), "per_node_policy");
    report.norm = Some(Norm::Max);
    let grid = TimeGrid::for_problem(problem, study.base_steps)?;
    let mut inadmissible = false;
    for level in 0..study.levels {
        let started = Instant::now();
        let mesh = Mesh::build(study.domain.clone(), &scaled(&study.base_subdivisions, level))?;
        let scheme = Scheme::new(problem, &mesh, study.controls, grid, study.boundary)?;
        let solution = scheme.solve()?;
        let mut gap: f64 = 0.0;
        for x in &study.points {
            let seqs = sequences_from_policy(x, 0, &solution.policy, &scheme, PolicyReading::StartLevel)?;
            let (per_node, _) = discrete_functional(x, &seqs, &scheme, TerminalDiscount::Exponential)?;
            let blend = blended_control_sequence(&solution.policy, x, 0, &scheme)?;
            inadmissible |= blend.inadmissible_blend;
            let broadcast = NodeControlSequences::broadcast(&blend.control, true);
            let (blended, _) = discrete_functional(x, &broadcast, &scheme, TerminalDiscount::Exponential)?;
            gap = gap.max((per_node - blended).abs());
        }
        if level == 0 {
            report.coupling = grid.step() / mesh.mesh_size();
        }
        let k = mesh.mesh_size();
        let mut record = LevelRecord::new(level, grid.step(), k, k, gap);
        record.controls = study.controls.len();
        record.nodes = mesh.node_count();
        record.measured = study.points.len();
        record.lu = Some(compute_lu(&solution.policy, &mesh, study.controls, 0, LuMode::Auto { seed: 0 })?);
        record.clamp_count = solution.clamp_count;
        record.wall_seconds = started.elapsed().as_secs_f64();
        report.levels.push(record);
    }
    if inadmissible {
        report
            .caveats
            .push("inadmissible_blend: some blended controls leave the finite control set".into());
    }
    Ok(report)
}

/// Largest `|total cost of the closed-loop trajectory - v^0(x0)|` over the start points, under coupled refinement.
pub fn closed_loop_study(study: &DiagnosticStudy<'_>) -> Result<ConvergenceReport> {
    let problem = study.problem;
    let mut report = ConvergenceReport::new(StudyKind::ClosedLoop, problem.name(), "interpolated_value");
    report.norm = Some(Norm::Max);
    for level in 0..study.levels {
        let started = Instant::now();
        let mesh = Mesh::build(study.domain.clone(), &scaled(&study.base_subdivisions, level))?;
        let grid = TimeGrid::for_problem(problem, study.base_steps << level)?;
        let scheme = Scheme::new(problem, &mesh, study.controls, grid, study.boundary)?;
        let solution = scheme.solve()?;
        let mut gap: f64 = 0.0;
        let mut clamps = solution.clamp_count;
        for x0 in &study.points {
            let traj = simulate(&scheme, &solution.values, x0, 0)?;
            clamps += traj.clamps as u64;
            gap = gap.max((traj.total - solution.values.eval(&mesh, 0, x0)?).abs());
        }
        if level == 0 {
            report.coupling = grid.step() / mesh.mesh_size();
        }
        let mut record = LevelRecord::new(
            level,
            grid.step(),
            mesh.mesh_size(),
            grid.step() + mesh.mesh_size(),
            gap,
        );
        record.controls = study.controls.len();
        record.nodes = mesh.node_count();
        record.measured = study.points.len();
        record.clamp_count = clamps;
        record.wall_seconds = started.elapsed().as_secs_f64();
        report.levels.push(record);
    }
    Ok(report)
}


/// A small instance for the brute-force equivalence checks.
#[derive(Debug, Clone)]
pub struct OracleInstance {
    pub label: String,
    pub problem: ProblemSpec,
    pub domain: BoxDomain,
    pub subdivisions: Vec<usize>,
    pub steps: usize,
    /// Level `n` at which values are compared.
    pub start: usize,
    pub controls: ControlSet,
    pub boundary: BoundaryPolicy,
}

/// One compared point of an oracle instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub instance: String,
    pub node: Option<usize>,
    pub x: Vec<f64>,
    pub solver: f64,
    pub brute_force: f64,
    pub gap: f64,
    /// Functional of the policy sequences, level-`n` reading.
    pub policy_start: f64,
    pub policy_start_gap: f64,
    /// Functional of the policy sequences, level-`j` reading.
    pub policy_current: f64,
    pub policy_current_gap: f64,
    pub pass: bool,
}

/// The tiny family: `d = 1` on `[-1, 1]`, 2 or 3 nodes, 1 to 3 remaining
/// steps, 2 or 3 controls, `lambda` in {0, 0.5}, with and without time
/// dependence. `N = 3` throughout and the start level is `3 - steps`.
pub fn default_oracle_suite() -> Result<Vec<OracleInstance>> {
    let mut suite = Vec::new();
    for nodes in [2usize, 3] {
        for remaining in [1usize, 2, 3] {
            for n_controls in [2usize, 3] {
                for lambda in [0.0, 0.5] {
                    for timed in [false, true] {
                        let problem = tiny_problem(timed)
                            .with_discount(lambda)?
                            .with_horizon(0.0, 0.6)?;
                        let values: &[f64] = if n_controls == 2 { &[-1.0, 1.0] } else { &[-1.0, 0.0, 1.0] };
                        suite.push(OracleInstance {
                            label: format!(
                                "ns{nodes}_steps{remaining}_U{n_controls}_lambda{lambda}_{}",
                                if timed { "timed" } else { "autonomous" }
                            ),
                            problem,
                            domain: BoxDomain::symmetric(1, 1.0)?,
                            subdivisions: vec![nodes - 1],
                            steps: 3,
                            start: 3 - remaining,
                            controls: ControlSet::from_elements(values.iter().map(|&v| vec![v]).collect())?,
                            boundary: BoundaryPolicy::Strict,
                        });
                    }
                }
            }
        }
    }
    Ok(suite)
}

// Euler steps stay in [-1, 1]: the velocity vanishes at both ends and h |f| <= 0.39 < 1/2.
fn tiny_problem(timed: bool) -> ProblemSpec {
    if timed {
        ProblemSpec::new(
            "tiny_timed",
            1,
            1,
            |x, u, t, out| out[0] = (u[0] + 0.3) * (1.0 - x[0] * x[0]) * (1.0 + 0.5 * (3.0 * t).sin()),
            |x, u, t| (x[0] - 0.3 * (2.0 * t).cos()).powi(2) + 0.5 * u[0] * u[0] + 0.1 * t * u[0],
            |x| (x[0] - 0.2).abs() + 0.5 * x[0] * x[0],
        )
    } else {
        ProblemSpec::new(
            "tiny",
            1,
            1,
            |x, u, _, out| out[0] = (u[0] + 0.3) * (1.0 - x[0] * x[0]),
            |x, u, _| (x[0] - 0.3).powi(2) + 0.5 * u[0] * u[0],
            |x| (x[0] - 0.2).abs() + 0.5 * x[0] * x[0],
        )
    }
}

/// Compares the solver with the brute-force minimum and with both policy readings
/// at every node and `interior_points` seeded interior points.
///
/// `corrupt` is added to every solver value; a nonzero value is a negative control.
pub fn run_oracle_instance(
    instance: &OracleInstance,
    interior_points: usize,
    seed: u64,
    terminal: TerminalDiscount,
    corrupt: f64,
) -> Result<Vec<OracleRow>> {
    let mesh = Mesh::build(instance.domain.clone(), &instance.subdivisions)?;
    let grid = TimeGrid::for_problem(&instance.problem, instance.steps)?;
    let scheme = Scheme::new(&instance.problem, &mesh, &instance.controls, grid, instance.boundary)?;
    let solution = scheme.solve()?;
    let row = solution.values.level(instance.start);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<(Option<usize>, Vec<f64>)> =
        mesh.vertices().enumerate().map(|(i, x)| (Some(i), x.to_vec())).collect();
    let (lower, upper) = (instance.domain.lower(), instance.domain.upper());
    for _ in 0..interior_points {
        let x: Vec<f64> = lower.iter().zip(upper).map(|(&a, &b)| rng.gen_range(a..b)).collect();
        points.push((None, x));
    }

    let mut rows = Vec::with_capacity(points.len());
    for (node, x) in points {
        let solver = mesh.interp_scalar(row, &x)? + corrupt;
        let (brute_force, _) = crate::oracle::brute_force_value(&x, instance.start, &scheme, terminal)?;
        let policy_value = |reading| -> Result<f64> {
            let seqs = sequences_from_policy(&x, instance.start, &solution.policy, &scheme, reading)?;
            Ok(discrete_functional(&x, &seqs, &scheme, terminal)?.0)
        };
        let policy_start = policy_value(PolicyReading::StartLevel)?;
        let policy_current = policy_value(PolicyReading::CurrentLevel)?;
        let gap = (brute_force - solver).abs();
        let policy_start_gap = (policy_start - solver).abs();
        rows.push(OracleRow {
            instance: instance.label.clone(),
            node,
            x,
            solver,
            brute_force,
            gap,
            policy_start,
            policy_start_gap,
            policy_current,
            policy_current_gap: (policy_current - solver).abs(),
            pass: gap <= tolerance::ORACLE_GAP && policy_start_gap <= tolerance::ORACLE_GAP,
        });
    }
    Ok(rows)
}

pub fn write_oracle_csv(rows: &[OracleRow], mut out: impl Write) -> Result<()> {
    writeln!(
        out,
        "instance,node,x,solver,brute_force,gap,policy_start,policy_start_gap,policy_current,policy_current_gap,pass"
    )?;
    for r in rows {
        let x: Vec<String> = r.x.iter().map(f64::to_string).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.instance,
            r.node.map_or(String::new(), |n| n.to_string()),
            x.join(";"),
            r.solver,
            r.brute_force,
            r.gap,
            r.policy_start,
            r.policy_start_gap,
            r.policy_current,
            r.policy_current_gap,
            r.pass
        )?;
    }
    Ok(())
}
