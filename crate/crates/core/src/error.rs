use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input set: {0}")]
    InvalidSet(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("support LP unbounded along the requested direction")]
    LpUnbounded,

    #[error("simplex pivot breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("constraint 0*y1 + 0*y2 >= {rhs} can never hold")]
    DegenerateConstraint { index: usize, rhs: f64 },

    #[error("projection did not converge in {0} iterations")]
    MaxIterations(usize),

    #[error("grid oracle supports at most 3 input dimensions, got {0}")]
    DimensionTooLarge(usize),

    #[error("barrier gradient '{label}' disagrees with finite differences (rel. error {rel_error:.3e})")]
    GradientMismatch { label: String, rel_error: f64 },

    #[error("no sample satisfies h(x) >= 0 in the domain")]
    EmptySampleSet,

    #[error("every sample hit the degeneracy floors")]
    AllDegenerate,

    #[error("tuning LP is infeasible")]
    TuningInfeasible,

    #[error("tuning LP is unbounded (objective decreases without limit)")]
    TuningUnbounded,

    #[error("unknown plant label '{0}'")]
    UnknownPlant(String),
}
