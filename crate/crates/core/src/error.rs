use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the kinematics kernel, the ADMM engine and the problem builders.
///
/// Vertex and edge indices carried by errors are 0-based.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("edge {edge} has zero length, its rigidity row is undefined")]
    SingularEdge { edge: usize },

    #[error("unknown vertex {0}")]
    UnknownVertex(usize),

    #[error("unknown edge {0}")]
    UnknownEdge(usize),

    #[error("node {node} has no estimate from neighbour {neighbor}")]
    MissingNeighbor { node: usize, neighbor: usize },

    #[error("communication graph is disconnected")]
    Disconnected,

    #[error("ill-posed problem: {0}")]
    IllPosed(String),

    #[error("infeasible constraint stack: {0}")]
    Infeasible(String),

    #[error("under-anchored: {found} independent anchor rows, need {required}")]
    UnderAnchored { found: usize, required: usize },

    #[error("numerical failure in inner solver after {iterations} iterations at x = {iterate:?}")]
    NumericalFailure { iterations: usize, iterate: Vec<f64> },

    #[error("missing measurement for edge {0}")]
    MissingMeasurement(usize),

    #[error("kinematic violation: {0}")]
    KinematicViolation(String),

    #[error("undefined angle: coincident points")]
    UndefinedAngle,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
