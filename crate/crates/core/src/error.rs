use alloc::string::String;

/// Everything that can go wrong inside the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("index range {from}..={to} out of bounds for extent {extent}")]
    Bounds {
        from: usize,
        to: usize,
        extent: usize,
    },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("rank {b} outside the adapter range [{r_min}, {r_max}]")]
    Rank {
        b: usize,
        r_min: usize,
        r_max: usize,
    },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite loss at step {step}")]
    Divergence { step: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, expected: (usize, usize), got: (usize, usize)) -> Error {
    Error::Shape {
        op,
        expected: alloc::format!("{}x{}", expected.0, expected.1),
        got: alloc::format!("{}x{}", got.0, got.1),
    }
}
