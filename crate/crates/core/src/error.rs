use std::fmt;

use thiserror::Error;

/// Which half of the estimator a replicate belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    /// `z ~ r(z; x*)`, history from meta-inference.
    Reference,
    /// `(y, z) ~ q(y, z; x*)`.
    Inference,
}

impl Branch {
    pub(crate) fn tag(self) -> u64 {
        match self {
            Branch::Reference => 0x7265_6665_7265_6e63,
            Branch::Inference => 0x696e_6665_7265_6e63,
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Branch::Reference => f.write_str("reference"),
            Branch::Inference => f.write_str("inference"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// A log density needed for a weight was `-inf` (or otherwise non-finite)
    /// at a point that was actually sampled.
    #[error("support violation: {0}")]
    SupportViolation(String),

    #[error("replicate {index} of the {branch} branch failed: {source}")]
    Replicate {
        branch: Branch,
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("need at least 2 samples, got {0}")]
    InsufficientSamples(usize),

    #[error("distributions have different supports")]
    SupportMismatch,

    #[error("enumeration of {0} states exceeds the cap of {cap}", cap = crate::exact::MAX_ENUMERATION)]
    EnumerationTooLarge(usize),

    #[error("enumerated probabilities sum to exp({0}) instead of 1")]
    NotNormalized(f64),

    #[error("density is not available for {0}")]
    DensityUnavailable(&'static str),

    #[error("all site values have zero mass under the target (site {0})")]
    EmptyConditional(usize),

    #[error("composed kernels declare different targets")]
    MixedTargets,

    #[error("kernel {index} does not target the sequence entry it is paired with")]
    TargetMismatch { index: usize },

    #[error("all particle weights are zero at step {0}")]
    AllWeightsZero(usize),

    #[error("particle filter history is inconsistent: {0}")]
    InconsistentHistory(&'static str),

    #[error("evidence is zero")]
    ZeroEvidence,

    #[error("covariance matrix is singular")]
    SingularCovariance,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn support(msg: impl Into<String>) -> Self {
        Error::SupportViolation(msg.into())
    }

    pub(crate) fn in_replicate(self, branch: Branch, index: usize) -> Self {
        Error::Replicate {
            branch,
            index,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
