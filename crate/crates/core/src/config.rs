//! TOML run configuration. Unknown keys anywhere are errors.
//!
//! ```toml
//! [problem]
//! name = "eikonal1d"
//! lambda = 0.0
//! horizon = [0.0, 1.0]
//! params = { umax = 1.0 }
//!
//! [controls]
//! kind = "interval"
//! lower = -1.0
//! upper = 1.0
//! count = 3
//!
//! [mesh]
//! lower = [-2.0]
//! upper = [2.0]
//! subdivisions = [64]
//!
//! [time]
//! steps = 16
//!
//! [run]
//! policy = "project"
//! seed = 0
//! output = "out"
//! ```
//!
//! Study blocks (`[study]`, `[lemma1]`, `[simulate]`, `[oracle]`,
//! `[interp]`) are read only by the subcommands that use them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{Norm, Reference};
use crate::mesh::{BoxDomain, Mesh};
use crate::oracle::TerminalDiscount;
use crate::problem::{discretize_controls, make_problem, ControlSet, ControlSpec, ProblemParams, ProblemSpec};
use crate::solver::{BoundaryPolicy, TimeGrid};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Option<ProblemBlock>,
    pub controls: Option<ControlSpec>,
    pub mesh: Option<MeshBlock>,
    pub time: Option<TimeBlock>,
    #[serde(default)]
    pub run: RunBlock,
    pub study: Option<StudyBlock>,
    pub lemma1: Option<Lemma1Block>,
    pub simulate: Option<SimulateBlock>,
    pub oracle: Option<OracleBlock>,
    pub interp: Option<InterpBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    pub name: String,
    pub lambda: Option<f64>,
    pub horizon: Option<[f64; 2]>,
    #[serde(default)]
    pub params: ProblemParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshBlock {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub subdivisions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeBlock {
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    #[serde(default)]
    pub policy: BoundaryPolicy,
    #[serde(default)]
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl Default for RunBlock {
    fn default() -> Self {
        Self {
            policy: BoundaryPolicy::Strict,
            seed: 0,
            output: None,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyBlock {
    pub levels: usize,
    /// Measurement box; the whole domain when absent.
    pub subdomain_lower: Option<Vec<f64>>,
    pub subdomain_upper: Option<Vec<f64>>,
    #[serde(default)]
    pub norm: Norm,
    #[serde(default)]
    pub reference: Reference,
    /// Fitted rates below this fail the run.
    pub min_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lemma1Block {
    pub x: Vec<f64>,
    /// One control per coarsest interval, or a single control for all of them.
    pub control: Vec<Vec<f64>>,
    pub levels: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub terminal: TerminalDiscount,
    pub min_rate: Option<f64>,
}

fn default_substeps() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub x0: Vec<Vec<f64>>,
    #[serde(default)]
    pub start_level: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleSuite {
    /// The built-in family of tiny one-dimensional instances.
    #[default]
    Default,
    /// The problem, mesh, controls and time grid of this file.
    Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleBlock {
    #[serde(default)]
    pub suite: OracleSuite,
    #[serde(default = "default_points")]
    pub points: usize,
    /// Start level for the `config` suite.
    #[serde(default)]
    pub level: usize,
    #[serde(default)]
    pub terminal: TerminalDiscount,
    /// Test hook: added to every solver value before comparison.
    #[serde(default)]
    pub corrupt_solver_value: f64,
}

fn default_points() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpFunction {
    /// `norm(x)`, Lipschitz constant 1.
    Abs,
    /// `norm(x)^2`.
    Quadratic,
    /// `sum(x) + 1`.
    Affine,
    /// The configured problem's terminal cost.
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpBlock {
    pub function: InterpFunction,
    pub lipschitz: f64,
    pub levels: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    10_000
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(one_line(&e.to_string())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn block<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| Error::Config(format!("missing [{name}] block")))
    }

    pub fn build_problem(&self) -> Result<ProblemSpec> {
        let block = Self::block(&self.problem, "problem")?;
        let mut params = block.params.clone();
        for (key, value) in [
            ("lambda", block.lambda),
            ("t", block.horizon.map(|h| h[0])),
            ("T", block.horizon.map(|h| h[1])),
        ] {
            if let Some(v) = value {
                if params.insert(key.to_string(), v).is_some() {
                    return Err(Error::Config(format!(
                        "`{key}` given both in [problem] and in [problem.params]"
                    )));
                }
            }
        }
        make_problem(&block.name, &params)
    }

    pub fn build_controls(&self) -> Result<ControlSet> {
        discretize_controls(Self::block(&self.controls, "controls")?)
    }

    pub fn domain(&self) -> Result<BoxDomain> {
        let block = Self::block(&self.mesh, "mesh")?;
        BoxDomain::new(block.lower.clone(), block.upper.clone())
    }

    pub fn subdivisions(&self) -> Result<Vec<usize>> {
        Ok(Self::block(&self.mesh, "mesh")?.subdivisions.clone())
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        Mesh::build(self.domain()?, &self.subdivisions()?)
    }

    pub fn steps(&self) -> Result<usize> {
        Ok(Self::block(&self.time, "time")?.steps)
    }

    pub fn build_grid(&self, problem: &ProblemSpec) -> Result<TimeGrid> {
        TimeGrid::for_problem(problem, self.steps()?)
    }

    pub fn study(&self) -> Result<&StudyBlock> {
        Self::block(&self.study, "study")
    }

    pub fn lemma1(&self) -> Result<&Lemma1Block> {
        Self::block(&self.lemma1, "lemma1")
    }

    pub fn simulate(&self) -> Result<&SimulateBlock> {
        Self::block(&self.simulate, "simulate")
    }

    pub fn interp(&self) -> Result<&InterpBlock> {
        Self::block(&self.interp, "interp")
    }

    /// The `[oracle]` block, defaults when absent.
    pub fn oracle(&self) -> OracleBlock {
        self.oracle.clone().unwrap_or(OracleBlock {
            suite: OracleSuite::Default,
            points: default_points(),
            level: 0,
            terminal: TerminalDiscount::Exponential,
            corrupt_solver_value: 0.0,
        })
    }

    /// Measurement box of the study, the full domain by default.
    pub fn subdomain(&self) -> Result<BoxDomain> {
        let study = self.study()?;
        let domain = self.domain()?;
        match (&study.subdomain_lower, &study.subdomain_upper) {
            (None, None) => Ok(domain),
            (Some(lo), Some(hi)) => BoxDomain::new(lo.clone(), hi.clone()),
            _ => Err(Error::Config(
                "give both subdomain_lower and subdomain_upper, or neither".into(),
            )),
        }
    }
}

fn one_line(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" | ")
}
