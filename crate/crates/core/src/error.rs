use thiserror::Error;

use crate::Point;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("exponential argument {argument} exceeds the overflow guard {limit}")]
    Overflow { argument: f64, limit: f64 },

    #[error("extremal intensity is zero but the {side} blow-up flag is set")]
    ZeroExtremalIntensity { side: &'static str },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field does not belong to this grid")]
    GridMismatch,

    #[error("right-hand side must have zero mean on the torus (mean = {0:e})")]
    NonZeroMean(f64),

    #[error("linear solver breakdown: {0}")]
    SolverBreakdown(String),

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("singular Woodbury capacitance at lambda = {lambda} (fold candidate)")]
    SingularCapacitance { lambda: f64 },

    #[error("Newton did not converge at lambda = {lambda}: residual {residual:e} after {iterations} iterations")]
    NotConverged {
        lambda: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("point ({}, {}) lies outside the evaluator's domain", .0[0], .0[1])]
    OutsideDomain(Point),

    #[error("coincident points at ({}, {})", .0[0], .0[1])]
    Coincident(Point),

    #[error("Green function source ({}, {}) is not cached by the numeric evaluator", .0[0], .0[1])]
    SourceNotCached(Point),

    #[error("ball of radius {radius} around ({}, {}) leaves the domain", .center[0], .center[1])]
    BallExitsDomain { center: Point, radius: f64 },

    #[error("estimate violated: {0}")]
    EstimateViolated(String),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("zero net mass at a peak; the mass relation forbids this")]
    ZeroNetMass,

    #[error("i/o: {0}")]
    Io(String),

    #[error("scenario line {line}: key `{key}`: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
