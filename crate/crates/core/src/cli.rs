//! Command-line front end.
//!
//! Exit status: 0 success, 1 failed assertion, 2 configuration error,
//! 3 invariance violation, 4 search-space guard or insufficient data,
//! 5 I/O error. Every failure prints one line `error code=<reason>: <message>`
//! on stderr.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{InterpFunction, OracleSuite, RunConfig};
use crate::error::{Error, Result};
use crate::harness::{
    default_oracle_suite, interp_error_study, lemma1_study, run_convergence, run_oracle_instance,
    write_oracle_csv, ConvergenceReport, ConvergenceStudy, Lemma1Study, OracleInstance,
};
use crate::oracle::PiecewiseConstantControl;
use crate::problem::check_invariance;
use crate::solver::{BoundaryPolicy, Scheme, Solution};
use crate::synthesis::simulate;
use crate::tolerance;

#[derive(Debug, Parser)]
#[command(name = "slhjb", version, about = "Semi-Lagrangian dynamic programming for finite-horizon optimal control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve and dump the value function and policy.
    Solve(CommonArgs),
    /// Compare the solver with brute-force minimization on tiny instances.
    Oracle(CommonArgs),
    /// Refinement study against the exact or a finer reference value.
    Converge(CommonArgs),
    /// Fixed-control gap between the continuous and the discrete cost.
    Lemma1(CommonArgs),
    /// Closed-loop trajectories from the `[simulate]` start points.
    Simulate(CommonArgs),
    /// Interpolation error against the Lipschitz bound.
    InterpCheck(CommonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Strict,
    Project,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `[run] output`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; overrides `[run] workers`.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    /// Number of refinement levels; overrides the study block.
    #[arg(long)]
    pub levels: Option<usize>,
}

/// Reasons that are not library errors.
enum Failure {
    Error(Error),
    Assertion(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(Error::Io(e))
    }
}

type Outcome = std::result::Result<(), Failure>;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Invariance { .. } | Error::TrajectoryEscape { .. } => 3,
        Error::SearchSpace { .. } | Error::InsufficientData { .. } => 4,
        Error::Io(_) | Error::Json(_) => 5,
        Error::NonFinite { .. } | Error::Undefined(_) => 1,
        _ => 2,
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error code=usage: {}", first.trim_start_matches("error: "));
            return 2;
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(Failure::Assertion(msg)) => {
            eprintln!("error code=assertion: {msg}");
            1
        }
        Err(Failure::Error(e)) => {
            eprintln!("error code={}: {}", e.code(), e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

struct Context {
    config: RunConfig,
    out: PathBuf,
    policy: BoundaryPolicy,
    levels: Option<usize>,
    workers: Option<usize>,
}

impl Context {
    fn new(args: &CommonArgs) -> Result<Self> {
        let config = match &args.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let out = args
            .out
            .clone()
            .or_else(|| config.run.output.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        let policy = match args.policy {
            Some(PolicyArg::Strict) => BoundaryPolicy::Strict,
            Some(PolicyArg::Project) => BoundaryPolicy::Project,
            None => config.run.policy,
        };
        let workers = args.workers.or(config.run.workers);
        if workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(Self {
            config,
            out,
            policy,
            levels: args.levels,
            workers,
        })
    }

    fn output_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.output_dir()?.join(name))?))
    }

    fn write_json(&self, name: &str, value: &serde_json::Value) -> Result<()> {
        let mut file = self.create(name)?;
        serde_json::to_writer_pretty(&mut file, value)?;
        writeln!(file)?;
        file.flush()?;
        Ok(())
    }

    fn write_report(&self, report: &ConvergenceReport) -> Result<()> {
        let stem = report.file_stem();
        let mut csv = self.create(&format!("{stem}.csv"))?;
        report.write_csv(&mut csv)?;
        csv.flush()?;
        self.write_json(&format!("{stem}.json"), &report.metadata())
    }
}

fn dispatch(command: &Command) -> Outcome {
    let args = match command {
        Command::Solve(a)
        | Command::Oracle(a)
        | Command::Converge(a)
        | Command::Lemma1(a)
        | Command::Simulate(a)
        | Command::InterpCheck(a) => a,
    };
    let ctx = Context::new(args)?;
    let body = || match command {
        Command::Solve(_) => cmd_solve(&ctx),
        Command::Oracle(_) => cmd_oracle(&ctx),
        Command::Converge(_) => cmd_converge(&ctx),
        Command::Lemma1(_) => cmd_lemma1(&ctx),
        Command::Simulate(_) => cmd_simulate(&ctx),
        Command::InterpCheck(_) => cmd_interp_check(&ctx),
    };
    match ctx.workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?;
            pool.install(body)
        }
        None => body(),
    }
}

fn cmd_solve(ctx: &Context) -> Outcome {
    let cfg = &ctx.config;
    let problem = cfg.build_problem()?;
    let controls = cfg.build_controls()?;
    let mesh = cfg.build_mesh()?;
    let grid = cfg.build_grid(&problem)?;
    let started = Instant::now();
    let invariance = check_invariance(&problem, &mesh, &grid, &controls);

    let mut meta = serde_json::json!({
        "problem": problem.name(),
        "mesh": mesh.descriptor(),
        "grid": grid,
        "controls": controls.len(),
        "policy": ctx.policy,
        "invariance": invariance,
    });
    if ctx.policy == BoundaryPolicy::Strict && !invariance.ok {
        ctx.write_json("solve_meta.json", &meta)?;
        let first = &invariance.violations[0];
        return Err(Error::Invariance {
            node: Some(first.node),
            control: first.control,
            level: first.level,
            point: first.point.clone(),
        }
        .into());
    }

    let scheme = Scheme::new(&problem, &mesh, &controls, grid, ctx.policy)?;
    let solution = scheme.solve()?;
    write_value_dump(&scheme, &solution, ctx.create("value.csv")?)?;
    write_policy_dump(&scheme, &solution, ctx.create("policy.csv")?)?;
    meta["clamp_count"] = solution.clamp_count.into();
    meta["nondeterministic"] = serde_json::json!({
        "wall_seconds": started.elapsed().as_secs_f64(),
        "workers": rayon::current_num_threads(),
    });
    ctx.write_json("solve_meta.json", &meta)?;
    Ok(())
}

fn dump_header(scheme: &Scheme<'_>) -> String {
    format!(
        "# problem={} d={} N={} h={} k={} lambda={} controls={} policy={}",
        scheme.problem.name(),
        scheme.mesh.dim(),
        scheme.grid.steps(),
        scheme.grid.step(),
        scheme.mesh.mesh_size(),
        scheme.grid.lambda(),
        scheme.controls.len(),
        match scheme.boundary {
            BoundaryPolicy::Strict => "strict",
            BoundaryPolicy::Project => "project",
        }
    )
}

/// Rows `level,node,x..,value,argmin`; the argmin column is empty at level N.
pub fn write_value_dump(scheme: &Scheme<'_>, solution: &Solution, mut out: impl Write) -> Result<()> {
    writeln!(out, "{}", dump_header(scheme))?;
    let coords: Vec<String> = (0..scheme.mesh.dim()).map(|a| format!("x{a}")).collect();
    writeln!(out, "level,node,{},value,argmin", coords.join(","))?;
    let n_steps = scheme.grid.steps();
    for level in 0..=n_steps {
        let values = solution.values.level(level);
        for (i, x) in scheme.mesh.vertices().enumerate() {
            let x: Vec<String> = x.iter().map(f64::to_string).collect();
            let argmin = if level < n_steps {
                solution.policy.get(level, i).to_string()
            } else {
                String::new()
            };
            writeln!(out, "{level},{i},{},{},{argmin}", x.join(","), values[i])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Rows `level,node,argmin,u..` for levels below N.
pub fn write_policy_dump(scheme: &Scheme<'_>, solution: &Solution, mut out: impl Write) -> Result<()> {
    writeln!(out, "{}", dump_header(scheme))?;
    let coords: Vec<String> = (0..scheme.controls.dim()).map(|a| format!("u{a}")).collect();
    writeln!(out, "level,node,argmin,{}", coords.join(","))?;
    for level in 0..scheme.grid.steps() {
        for (i, &c) in solution.policy.level(level).iter().enumerate() {
            let u: Vec<String> = scheme.controls.get(c).iter().map(f64::to_string).collect();
            writeln!(out, "{level},{i},{c},{}", u.join(","))?;
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_oracle(ctx: &Context) -> Outcome {
    let cfg = &ctx.config;
    let block = cfg.oracle();
    let instances = match block.suite {
        OracleSuite::Default => default_oracle_suite()?,
        OracleSuite::Config => {
            let problem = cfg.build_problem()?;
            let steps = cfg.steps()?;
            if block.level >= steps {
                return Err(Error::Config(format!("oracle level {} must be below N = {steps}", block.level)).into());
            }
            vec![OracleInstance {
                label: problem.name().to_string(),
                problem,
                domain: cfg.domain()?,
                subdivisions: cfg.subdivisions()?,
                steps,
                start: block.level,
                controls: cfg.build_controls()?,
                boundary: ctx.policy,
            }]
        }
    };
    let mut rows = Vec::new();
    for (idx, instance) in instances.iter().enumerate() {
        let seed = cfg.run.seed.wrapping_add(idx as u64);
        rows.extend(run_oracle_instance(
            instance,
            block.points,
            seed,
            block.terminal,
            block.corrupt_solver_value,
        )?);
    }
    let mut csv = ctx.create("oracle.csv")?;
    write_oracle_csv(&rows, &mut csv)?;
    csv.flush()?;

    let failed: Vec<_> = rows.iter().filter(|r| !r.pass).collect();
    let failed_instances: std::collections::BTreeSet<&str> =
        failed.iter().map(|r| r.instance.as_str()).collect();
    let max_gap = rows.iter().map(|r| r.gap.max(r.policy_start_gap)).fold(0.0, f64::max);
    ctx.write_json(
        "oracle_meta.json",
        &serde_json::json!({
            "instances": instances.len(),
            "comparisons": rows.len(),
            "failed_comparisons": failed.len(),
            "failed_instances": failed_instances,
            "max_gap": max_gap,
            "tolerance": tolerance::ORACLE_GAP,
            "terminal": block.terminal,
        }),
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Assertion(format!(
            "{} of {} oracle comparisons in {} of {} instances exceed {:e} (max gap {max_gap})",
            failed.len(),
            rows.len(),
            failed_instances.len(),
            instances.len(),
            tolerance::ORACLE_GAP
        )))
    }
}

fn check_rate(report: &ConvergenceReport, min_rate: Option<f64>) -> Outcome {
    let fit = report.fit()?;
    match min_rate {
        Some(min) if !(fit.rate >= min) => Err(Failure::Assertion(format!(
            "fitted rate {} below required {min}",
            fit.rate
        ))),
        _ => Ok(()),
    }
}

fn cmd_converge(ctx: &Context) -> Outcome {
    let cfg = &ctx.config;
    let block = cfg.study()?;
    let problem = cfg.build_problem()?;
    let controls = cfg.build_controls()?;
    let levels = ctx.levels.unwrap_or(block.levels);
    let study = ConvergenceStudy {
        problem: &problem,
        controls: &controls,
        domain: cfg.domain()?,
        base_subdivisions: cfg.subdivisions()?,
        base_steps: cfg.steps()?,
        levels,
        subdomain: cfg.subdomain()?,
        norm: block.norm,
        boundary: ctx.policy,
        reference: block.reference,
        seed: cfg.run.seed,
    };
    let report = run_convergence(&study)?;
    ctx.write_report(&report)?;
    check_rate(&report, block.min_rate)
}

fn cmd_lemma1(ctx: &Context) -> Outcome {
    let cfg = &ctx.config;
    let block = cfg.lemma1()?;
    let problem = cfg.build_problem()?;
    let steps = cfg.steps()?;
    let values = match block.control.len() {
        1 => vec![block.control[0].clone(); steps],
        n if n == steps => block.control.clone(),
        n => {
            return Err(Error::Config(format!(
                "[lemma1] control has {n} entries; give 1 or one per step ({steps})"
            ))
            .into())
        }
    };
    let study = Lemma1Study {
        problem: &problem,
        domain: cfg.domain()?,
        base_subdivisions: cfg.subdivisions()?,
        base_steps: steps,
        levels: ctx.levels.unwrap_or(block.levels),
        control: PiecewiseConstantControl::new(0, values)?,
        x: block.x.clone(),
        boundary: ctx.policy,
        substeps: block.substeps,
        terminal: block.terminal,
    };
    let report = lemma1_study(&study)?;
    ctx.write_report(&report)?;
    check_rate(&report, block.min_rate)
}

fn cmd_simulate(ctx: &Context) -> Outcome {
    let cfg = &ctx.config;
    let block = cfg.simulate()?;
    let problem = cfg.build_problem()?;
    let controls = cfg.build_controls()?;
    let mesh = cfg.build_mesh()?;
    let grid = cfg.build_grid(&problem)?;
    let scheme = Scheme::new(&problem, &mesh, &controls, grid, ctx.policy)?;
    let solution = scheme.solve()?;
    let mut summary = Vec::new();
    for (idx, x0) in block.x0.iter().enumerate() {
        let traj = simulate(&scheme, &solution.values, x0, block.start_level)?;
        let mut file = ctx.create(&format!("trajectory_{idx}.csv"))?;
        traj.write_csv(&scheme, &mut file)?;
        file.flush()?;
        summary.push(serde_json::json!({
            "x0": x0,
            "start_level": block.start_level,
            "terminal_state": traj.states.last().map(|y| y.to_vec()),
            "running_cost": traj.running_cost,
            "terminal_cost": traj.terminal_cost,
            "total": traj.total,
            "value": solution.values.eval(&mesh, block.start_level, x0)?,
            "clamps": traj.clamps,
        }));
    }
    ctx.write_json(
        "simulate_meta.json",
        &serde_json::json!({
            "problem": problem.name(),
            "h": grid.step(),
            "k": mesh.mesh_size(),
            "solve_clamp_count": solution.clamp_count,
            "trajectories": summary,
        }),
    )?;
    Ok(())
}

fn cmd_interp_check(ctx: &Context) -> Outcome {
    let cfg = &ctx.config;
    let block = cfg.interp()?;
    let domain = cfg.domain()?;
    let levels = ctx.levels.unwrap_or(block.levels);
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let report = match block.function {
        InterpFunction::Abs => interp_error_study("abs", norm, block.lipschitz, &domain, &cfg.subdivisions()?, levels, block.samples, cfg.run.seed)?,
        InterpFunction::Quadratic => interp_error_study(
            "quadratic",
            |x| x.iter().map(|v| v * v).sum(),
            block.lipschitz,
            &domain,
            &cfg.subdivisions()?,
            levels,
            block.samples,
            cfg.run.seed,
        )?,
        InterpFunction::Affine => interp_error_study(
            "affine",
            |x| x.iter().sum::<f64>() + 1.0,
            block.lipschitz,
            &domain,
            &cfg.subdivisions()?,
            levels,
            block.samples,
            cfg.run.seed,
        )?,
        InterpFunction::Terminal => {
            let problem = cfg.build_problem()?;
            interp_error_study(
                problem.name(),
                |x| problem.terminal_cost(x),
                block.lipschitz,
                &domain,
                &cfg.subdivisions()?,
                levels,
                block.samples,
                cfg.run.seed,
            )?
        }
    };
    ctx.write_report(&report)?;
    let over: Vec<usize> = report
        .levels
        .iter()
        .filter(|l| l.bound.is_some_and(|b| l.error > b))
        .map(|l| l.level)
        .collect();
    if over.is_empty() {
        Ok(())
    } else {
        Err(Failure::Assertion(format!(
            "interpolation error above L_g k at levels {over:?}"
        )))
    }
}
