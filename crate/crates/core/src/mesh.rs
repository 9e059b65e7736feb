//! Regular simplicial meshes of axis-aligned boxes.
//!
//! Every grid cell is split into `d!` simplices by the Kuhn (Freudenthal)
//! rule: the simplex containing a point is selected by sorting its local
//! cell coordinates in decreasing order, and its vertices are reached by
//! walking from the lower cell corner along the sorted axes. Point location
//! is `O(d log d)` and needs no stored connectivity.
//!
//! Nodes are numbered row-major over the grid indices (last axis fastest).

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::tolerance;

/// Small inline buffer for points and per-simplex data; `d <= 3` never allocates.
pub type Point = SmallVec<[f64; 4]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::Mesh("domain must have at least one axis".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (axis, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::DegenerateDomain {
                    axis,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[-r, r]^d`.
    pub fn symmetric(dim: usize, radius: f64) -> Result<Self> {
        Self::new(vec![-radius; dim], vec![radius; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (hi - lo) * (hi - lo))
            .sum::<f64>()
            .sqrt()
    }

    /// Slack used when deciding whether a point lies in the closed box.
    pub fn tolerance(&self) -> f64 {
        tolerance::LOCATE_REL * self.diameter()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.first_violation(x).is_none()
    }

    pub fn contains_box(&self, other: &BoxDomain) -> bool {
        other.dim() == self.dim() && self.contains(other.lower()) && self.contains(other.upper())
    }

    fn first_violation(&self, x: &[f64]) -> Option<usize> {
        let tol = self.tolerance();
        (0..self.dim()).find(|&a| !(x[a] >= self.lower[a] - tol && x[a] <= self.upper[a] + tol))
    }

    /// Componentwise clamp into the box. Identity on points already inside.
    pub fn project(&self, x: &[f64]) -> Point {
        let mut p: Point = x.iter().copied().collect();
        self.project_in_place(&mut p);
        p
    }

    /// Clamps in place; returns `true` when any coordinate moved.
    pub fn project_in_place(&self, x: &mut [f64]) -> bool {
        let mut moved = false;
        for (a, v) in x.iter_mut().enumerate() {
            let c = v.clamp(self.lower[a], self.upper[a]);
            if c != *v {
                moved = true;
                *v = c;
            }
        }
        moved
    }
}

/// Componentwise clamp of `x` into `domain`.
pub fn project_to_domain(x: &[f64], domain: &BoxDomain) -> Point {
    domain.project(x)
}

/// Containing simplex of a point together with its barycentric weights.
///
/// `vertices[j]` carries weight `weights[j]`; some weights may be exactly
/// zero when the point lies on a face.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycentricLocation {
    pub cell: usize,
    pub simplex: usize,
    pub vertices: SmallVec<[usize; 4]>,
    pub weights: SmallVec<[f64; 4]>,
}

impl BarycentricLocation {
    /// Iterator over `(node, weight)` pairs with nonzero weight.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.vertices
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
            .filter(|&(_, w)| w != 0.0)
    }

    /// Weight carried by `node`, zero when it is not a vertex of the simplex.
    pub fn weight_of(&self, node: usize) -> f64 {
        self.vertices
            .iter()
            .position(|&v| v == node)
            .map_or(0.0, |j| self.weights[j])
    }
}

/// Serializable summary of a mesh; vertices are regenerated on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshDescriptor {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub subdivisions: Vec<usize>,
    pub vertex_count: usize,
    pub mesh_size: f64,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    domain: BoxDomain,
    subdivisions: Vec<usize>,
    spacing: Vec<f64>,
    node_strides: Vec<usize>,
    cell_strides: Vec<usize>,
    vertices: Vec<f64>,
    node_count: usize,
    mesh_size: f64,
}

impl Mesh {
    pub fn build(domain: BoxDomain, subdivisions: &[usize]) -> Result<Self> {
        let d = domain.dim();
        if subdivisions.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: subdivisions.len(),
            });
        }
        if let Some(axis) = subdivisions.iter().position(|&n| n == 0) {
            return Err(Error::Mesh(format!("axis {axis} needs at least one subdivision")));
        }

        let spacing: Vec<f64> = (0..d)
            .map(|a| (domain.upper[a] - domain.lower[a]) / subdivisions[a] as f64)
            .collect();

        let mut node_strides = vec![1usize; d];
        let mut cell_strides = vec![1usize; d];
        for a in (0..d.saturating_sub(1)).rev() {
            node_strides[a] = node_strides[a + 1] * (subdivisions[a + 1] + 1);
            cell_strides[a] = cell_strides[a + 1] * subdivisions[a + 1];
        }
        let node_count = node_strides[0] * (subdivisions[0] + 1);

        let mut vertices = Vec::with_capacity(node_count * d);
        let mut index = vec![0usize; d];
        for _ in 0..node_count {
            for a in 0..d {
                vertices.push(grid_coordinate(&domain, subdivisions, a, index[a]));
            }
            // odometer, last axis fastest
            for a in (0..d).rev() {
                index[a] += 1;
                if index[a] <= subdivisions[a] {
                    break;
                }
                index[a] = 0;
            }
        }

        let mesh_size = spacing.iter().map(|s| s * s).sum::<f64>().sqrt();

        Ok(Self {
            domain,
            subdivisions: subdivisions.to_vec(),
            spacing,
            node_strides,
            cell_strides,
            vertices,
            node_count,
            mesh_size,
        })
    }

    pub fn from_descriptor(desc: &MeshDescriptor) -> Result<Self> {
        let domain = BoxDomain::new(desc.lower.clone(), desc.upper.clone())?;
        let mesh = Self::build(domain, &desc.subdivisions)?;
        if mesh.node_count != desc.vertex_count {
            return Err(Error::Mesh(format!(
                "descriptor declares {} vertices, grid has {}",
                desc.vertex_count, mesh.node_count
            )));
        }
        Ok(mesh)
    }

    pub fn descriptor(&self) -> MeshDescriptor {
        MeshDescriptor {
            lower: self.domain.lower.clone(),
            upper: self.domain.upper.clone(),
            subdivisions: self.subdivisions.clone(),
            vertex_count: self.node_count,
            mesh_size: self.mesh_size,
        }
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn subdivisions(&self) -> &[usize] {
        &self.subdivisions
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Number of simplices, `prod(subdivisions) * d!`.
    pub fn simplex_count(&self) -> usize {
        let cells: usize = self.subdivisions.iter().product();
        cells * (1..=self.dim()).product::<usize>()
    }

    /// Largest simplex diameter: the diagonal of one grid cell.
    pub fn mesh_size(&self) -> f64 {
        self.mesh_size
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.vertices[i * d..(i + 1) * d]
    }

    pub fn vertices(&self) -> impl Iterator<Item = &[f64]> {
        self.vertices.chunks_exact(self.dim())
    }

    /// Evaluates `g` at every node.
    pub fn nodal_values(&self, g: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        self.vertices().map(g).collect()
    }

    pub fn locate(&self, x: &[f64]) -> Result<BarycentricLocation> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: x.len(),
            });
        }
        if let Some(axis) = self.domain.first_violation(x) {
            return Err(Error::Location {
                axis,
                value: x[axis],
                lower: self.domain.lower[axis],
                upper: self.domain.upper[axis],
            });
        }

        let mut z: SmallVec<[f64; 4]> = SmallVec::with_capacity(d);
        let mut cell = 0usize;
        let mut corner = 0usize;
        for a in 0..d {
            let n = self.subdivisions[a];
            let len = self.domain.upper[a] - self.domain.lower[a];
            let mut s = ((x[a] - self.domain.lower[a]) * n as f64 / len).clamp(0.0, n as f64);
            let nearest = s.round();
            if (s - nearest).abs() <= tolerance::GRID_SNAP {
                s = nearest;
            }
            // a point on an interior grid line belongs to the lower cell
            let c = if s <= 0.0 {
                0
            } else {
                ((s.ceil() as usize).saturating_sub(1)).min(n - 1)
            };
            z.push((s - c as f64).clamp(0.0, 1.0));
            cell += c * self.cell_strides[a];
            corner += c * self.node_strides[a];
        }

        // stable sort: ties keep ascending axis order, the lexicographically
        // smallest valid permutation and hence the lowest local simplex index
        let mut order: SmallVec<[usize; 4]> = (0..d).collect();
        order.sort_by(|&p, &q| z[q].partial_cmp(&z[p]).unwrap());

        let mut vertices: SmallVec<[usize; 4]> = SmallVec::with_capacity(d + 1);
        let mut weights: SmallVec<[f64; 4]> = SmallVec::with_capacity(d + 1);
        vertices.push(corner);
        weights.push(1.0 - z[order[0]]);
        let mut node = corner;
        for j in 0..d {
            node += self.node_strides[order[j]];
            vertices.push(node);
            let next = if j + 1 < d { z[order[j + 1]] } else { 0.0 };
            weights.push(z[order[j]] - next);
        }

        Ok(BarycentricLocation {
            cell,
            simplex: permutation_rank(&order),
            vertices,
            weights,
        })
    }

    /// Piecewise-linear interpolant of nodal data at `x`.
    pub fn interp_scalar(&self, nodal_values: &[f64], x: &[f64]) -> Result<f64> {
        if nodal_values.len() != self.node_count {
            return Err(Error::Dimension {
                expected: self.node_count,
                got: nodal_values.len(),
            });
        }
        let loc = self.locate(x)?;
        Ok(interp_located(&loc, nodal_values))
    }

    /// `sum_j mu_j(x) * value(node_j)` over nodes with nonzero weight.
    ///
    /// `value` is never called for a node whose weight is zero.
    pub fn interp_node_scalar(&self, x: &[f64], value: impl FnMut(usize) -> f64) -> Result<f64> {
        let loc = self.locate(x)?;
        Ok(combine_scalar(&loc, value))
    }

    /// Vector analogue of [`Mesh::interp_node_scalar`]; `value` writes into its buffer.
    pub fn interp_node_vector(
        &self,
        x: &[f64],
        out: &mut [f64],
        value: impl FnMut(usize, &mut [f64]),
    ) -> Result<()> {
        let loc = self.locate(x)?;
        combine_vector(&loc, out, value);
        Ok(())
    }
}

/// Interpolates nodal data over an already located simplex.
pub fn interp_located(loc: &BarycentricLocation, nodal_values: &[f64]) -> f64 {
    combine_scalar(loc, |i| nodal_values[i])
}

pub fn combine_scalar(loc: &BarycentricLocation, mut value: impl FnMut(usize) -> f64) -> f64 {
    loc.support().map(|(i, w)| w * value(i)).sum()
}

pub fn combine_vector(
    loc: &BarycentricLocation,
    out: &mut [f64],
    mut value: impl FnMut(usize, &mut [f64]),
) {
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut buf: Point = SmallVec::from_elem(0.0, out.len());
    for (i, w) in loc.support() {
        value(i, &mut buf);
        for (o, b) in out.iter_mut().zip(&buf) {
            *o += w * b;
        }
    }
}

fn grid_coordinate(domain: &BoxDomain, subdivisions: &[usize], axis: usize, i: usize) -> f64 {
    let n = subdivisions[axis];
    if i == n {
        domain.upper[axis]
    } else {
        domain.lower[axis] + (domain.upper[axis] - domain.lower[axis]) * i as f64 / n as f64
    }
}

/// Rank of a permutation among all permutations in lexicographic order.
fn permutation_rank(perm: &[usize]) -> usize {
    let d = perm.len();
    let mut rank = 0;
    let mut factorial = 1;
    for i in (0..d).rev() {
        let smaller_after = perm[i + 1..].iter().filter(|&&p| p < perm[i]).count();
        rank += smaller_after * factorial;
        factorial *= d - i;
    }
    rank
}
