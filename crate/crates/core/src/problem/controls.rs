use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a finite control set is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSpec {
    /// Explicit elements, kept in the given order.
    List { elements: Vec<Vec<f64>> },
    /// `count` equispaced points of `[lower, upper]`.
    Interval { lower: f64, upper: f64, count: usize },
    /// Tensor grid of equispaced points, `count[i]` along axis `i`.
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
        count: Vec<usize>,
    },
    /// `count` points on the circle of radius `radius` at angles `2 pi j / count`.
    Sphere {
        #[serde(default = "two")]
        dim: usize,
        #[serde(default = "one")]
        radius: f64,
        count: usize,
        #[serde(default)]
        include_zero: bool,
    },
}

fn two() -> usize {
    2
}

fn one() -> f64 {
    1.0
}

/// Continuous set the finite controls were sampled from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ControlHull {
    /// Sampled from a box: convex combinations of elements stay admissible.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// No convex parent set is known.
    Finite,
}

/// Finite, ordered set of admissible controls. The index of an element is its tie-breaking key.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    dim: usize,
    elements: Vec<f64>,
    hull: ControlHull,
}

impl ControlSet {
    pub fn from_elements(elements: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_hull(elements, ControlHull::Finite)
    }

    fn with_hull(elements: Vec<Vec<f64>>, hull: ControlHull) -> Result<Self> {
        let Some(first) = elements.first() else {
            return Err(Error::ControlSet("control set is empty".into()));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::ControlSet("controls must have at least one component".into()));
        }
        for (i, e) in elements.iter().enumerate() {
            if e.len() != dim {
                return Err(Error::ControlSet(format!(
                    "element {i} has {} components, expected {dim}",
                    e.len()
                )));
            }
            if e.iter().any(|c| !c.is_finite()) {
                return Err(Error::ControlSet(format!("element {i} is not finite")));
            }
            if let Some(j) = elements[..i].iter().position(|p| p == e) {
                return Err(Error::ControlSet(format!("element {i} duplicates element {j}")));
            }
        }
        Ok(Self {
            dim,
            elements: elements.into_iter().flatten().collect(),
            hull,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.elements.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn get(&self, index: usize) -> &[f64] {
        &self.elements[index * self.dim..(index + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.elements.chunks_exact(self.dim)
    }

    pub fn hull(&self) -> &ControlHull {
        &self.hull
    }

    pub fn index_of(&self, u: &[f64]) -> Option<usize> {
        self.iter().position(|e| e == u)
    }

    /// Whether `u` is an element, or lies in the convex box the set was sampled from.
    pub fn admits(&self, u: &[f64]) -> bool {
        if self.index_of(u).is_some() {
            return true;
        }
        match &self.hull {
            ControlHull::Box { lower, upper } => u
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(c, (lo, hi))| *c >= lo - 1e-12 && *c <= hi + 1e-12),
            ControlHull::Finite => false,
        }
    }
}

fn equispaced(lower: f64, upper: f64, count: usize, j: usize) -> f64 {
    if count == 1 {
        0.5 * (lower + upper)
    } else if j + 1 == count {
        upper
    } else {
        lower + (upper - lower) * j as f64 / (count - 1) as f64
    }
}

/// Turns a control-set description into a concrete, ordered [`ControlSet`].
pub fn discretize_controls(spec: &ControlSpec) -> Result<ControlSet> {
    match spec {
        ControlSpec::List { elements } => ControlSet::from_elements(elements.clone()),
        ControlSpec::Interval {
            lower,
            upper,
            count,
        } => discretize_controls(&ControlSpec::Box {
            lower: vec![*lower],
            upper: vec![*upper],
            count: vec![*count],
        }),
        ControlSpec::Box {
            lower,
            upper,
            count,
        } => {
            if lower.len() != upper.len() || lower.len() != count.len() || lower.is_empty() {
                return Err(Error::ControlSet("box bounds and counts must have equal, nonzero length".into()));
            }
            if count.contains(&0) {
                return Err(Error::ControlSet("sample count must be positive".into()));
            }
            for (a, (lo, hi)) in lower.iter().zip(upper).enumerate() {
                if !(lo <= hi) {
                    return Err(Error::ControlSet(format!("axis {a}: lower {lo} above upper {hi}")));
                }
            }
            let m = lower.len();
            let total: usize = count.iter().product();
            let mut elements = Vec::with_capacity(total);
            let mut idx = vec![0usize; m];
            for _ in 0..total {
                elements.push((0..m).map(|a| equispaced(lower[a], upper[a], count[a], idx[a])).collect());
                for a in (0..m).rev() {
                    idx[a] += 1;
                    if idx[a] < count[a] {
                        break;
                    }
                    idx[a] = 0;
                }
            }
            ControlSet::with_hull(
                elements,
                ControlHull::Box {
                    lower: lower.clone(),
                    upper: upper.clone(),
                },
            )
        }
        ControlSpec::Sphere {
            dim,
            radius,
            count,
            include_zero,
        } => {
            if *count == 0 {
                return Err(Error::ControlSet("sample count must be positive".into()));
            }
            if !(*radius > 0.0) {
                return Err(Error::ControlSet("sphere radius must be positive".into()));
            }
            let mut elements: Vec<Vec<f64>> = match dim {
                1 if *count == 2 => vec![vec![*radius], vec![-radius]],
                1 => return Err(Error::ControlSet("a 0-sphere has exactly 2 points".into())),
                2 => (0..*count)
                    .map(|j| {
                        let theta = 2.0 * std::f64::consts::PI * j as f64 / *count as f64;
                        vec![snap(radius * theta.cos()), snap(radius * theta.sin())]
                    })
                    .collect(),
                _ => {
                    return Err(Error::ControlSet(format!(
                        "sphere sampling supports dim 1 or 2, got {dim}"
                    )))
                }
            };
            if *include_zero {
                elements.push(vec![0.0; *dim]);
            }
            ControlSet::from_elements(elements)
        }
    }
}

// cos(pi/2) and friends land a few ulps off zero
fn snap(c: f64) -> f64 {
    if c.abs() < 1e-15 {
        0.0
    } else {
        c
    }
}
