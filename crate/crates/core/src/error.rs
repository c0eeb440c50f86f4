use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("configuration error at layer {index}: {reason}")]
    Layer { index: usize, reason: String },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape { expected: Vec<usize>, actual: Vec<usize> },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("non-finite loss while perturbing {param}[{index}]")]
    NonFinite { param: String, index: usize },

    #[error("task {task} needs at least two samples of each label")]
    DegenerateTask { task: usize },

    #[error("training diverged at step {step}")]
    Divergence { step: usize },

    #[error("variant {variant}: {source}")]
    Variant {
        variant: String,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn len(expected: usize, actual: usize) -> Self {
        Error::Shape {
            expected: alloc::vec![expected],
            actual: alloc::vec![actual],
        }
    }
}
