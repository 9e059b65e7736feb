use serde::Serialize;

use super::{ControlSet, ProblemSpec};
use crate::mesh::Mesh;
use crate::solver::TimeGrid;

/// Keep at most this many violations; the total is always counted.
const MAX_RECORDED: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub node: usize,
    pub control: usize,
    pub level: usize,
    pub point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub ok: bool,
    /// Number of (node, control, level) triples whose Euler step leaves the domain.
    pub violation_count: usize,
    /// The first violations in (level, node, control) order.
    pub violations: Vec<Violation>,
}

/// Checks `x_i + h f(x_i, u, t_n)` stays in the domain for every node, control and level `n < N`.
pub fn check_invariance(
    problem: &ProblemSpec,
    mesh: &Mesh,
    grid: &TimeGrid,
    controls: &ControlSet,
) -> InvarianceReport {
    let d = mesh.dim();
    let domain = mesh.domain();
    let h = grid.step();
    let mut velocity = vec![0.0; d];
    let mut foot = vec![0.0; d];
    let mut violations = Vec::new();
    let mut count = 0usize;

    for level in 0..grid.steps() {
        let t = grid.time(level);
        for node in 0..mesh.node_count() {
            let x = mesh.vertex(node);
            for (control, u) in controls.iter().enumerate() {
                problem.dynamics(x, u, t, &mut velocity);
                for a in 0..d {
                    foot[a] = x[a] + h * velocity[a];
                }
                if !domain.contains(&foot) {
                    count += 1;
                    if violations.len() < MAX_RECORDED {
                        violations.push(Violation {
                            node,
                            control,
                            level,
                            point: foot.clone(),
                        });
                    }
                }
            }
        }
    }

    InvarianceReport {
        ok: count == 0,
        violation_count: count,
        violations,
    }
}
