//! Tolerances shared across the library.

/// Relative slack (times the domain diameter) for treating a point as inside the box.
pub const LOCATE_REL: f64 = 1e-12;

/// Grid-coordinate distance under which a query snaps onto a grid line.
pub const GRID_SNAP: f64 = 1e-12;

/// Absolute tolerance for argmin ties in the one-step Bellman minimization.
pub const ARGMIN_TIE: f64 = 1e-12;

/// Gap allowed between the brute-force characterization and the scheme.
pub const ORACLE_GAP: f64 = 1e-10;

/// Errors at or below this value count as exact and are excluded from rate fits.
pub const ZERO_ERROR: f64 = 1e-12;

/// Largest search space the brute-force oracle will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Above this node count the L_u diagnostic samples node pairs instead of visiting all of them.
pub const LU_ALL_PAIRS_MAX_NODES: usize = 2000;

/// Number of sampled pairs used when the L_u diagnostic samples.
pub const LU_SAMPLED_PAIRS: usize = 100_000;
