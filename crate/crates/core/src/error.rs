use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate domain on axis {axis}: lower {lower} must be below upper {upper}")]
    DegenerateDomain { axis: usize, lower: f64, upper: f64 },

    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("point outside domain: coordinate {axis} = {value} not in [{lower}, {upper}]")]
    Location {
        axis: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("unknown problem `{name}`; available: {}", available.join(", "))]
    UnknownProblem {
        name: String,
        available: Vec<String>,
    },

    #[error("bad parameter `{name}` for problem `{problem}`: {reason}")]
    Parameter {
        problem: String,
        name: String,
        reason: String,
    },

    #[error("invalid control set: {0}")]
    ControlSet(String),

    #[error("invalid time grid: {0}")]
    TimeGrid(String),

    #[error(
        "invariance violated: node {}, control {control}, level {level}: foot point {point:?} leaves the domain",
        node.map_or_else(|| "off-grid".to_string(), |n| n.to_string())
    )]
    Invariance {
        node: Option<usize>,
        control: usize,
        level: usize,
        point: Vec<f64>,
    },

    #[error("trajectory left the domain at step {step}: {point:?}")]
    TrajectoryEscape { step: usize, point: Vec<f64> },

    #[error("non-finite value at level {level}, node {node}")]
    NonFinite { level: usize, node: usize },

    #[error("search space of {count} control combinations exceeds the limit of {limit}")]
    SearchSpace { count: f64, limit: f64 },

    #[error("insufficient data: {usable} usable points, at least 2 needed")]
    InsufficientData { usable: usize },

    #[error("{0}")]
    Undefined(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable reason code used by the command-line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DegenerateDomain { .. } | Error::Mesh(_) => "mesh",
            Error::Location { .. } => "location",
            Error::Dimension { .. } => "dimension",
            Error::UnknownProblem { .. } | Error::Parameter { .. } => "problem",
            Error::ControlSet(_) => "controls",
            Error::TimeGrid(_) => "time_grid",
            Error::Invariance { .. } | Error::TrajectoryEscape { .. } => "invariance",
            Error::NonFinite { .. } => "non_finite",
            Error::SearchSpace { .. } => "search_space",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::Undefined(_) => "undefined",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
