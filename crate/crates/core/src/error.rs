use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rotation index {index} for {slots} slots")]
    InvalidRotation { index: i64, slots: usize },

    #[error("depth exhausted in {op}: operand has no remaining levels")]
    DepthExhausted { op: &'static str },

    #[error("slot count mismatch: {left} vs {right}")]
    SlotMismatch { left: usize, right: usize },

    #[error("capacity exceeded: {needed} slots needed, {available} available")]
    CapacityExceeded { needed: usize, available: usize },

    #[error("rotation key {index} is not resident")]
    MissingRotationKey { index: i64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "non-divisible geometry: width {width} + 2*{padding} - {kernel} is not a multiple of stride {stride}"
    )]
    NonDivisibleGeometry {
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },

    #[error("layer {layer} needs {cost} levels but the depth budget is {budget}")]
    UnbuildableModel { layer: String, cost: u32, budget: u32 },

    #[error("depth ledger violated before layer {layer}: needs {cost} levels, {available} remain")]
    DepthBudgetExceeded {
        layer: String,
        cost: u32,
        available: u32,
    },

    #[error("layer {layer}: {source}")]
    Layer {
        layer: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: expected {expected} values, found {found}")]
    CountMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: unparseable cell at row {row}, column {column}: {cell:?}")]
    BadCell {
        path: PathBuf,
        row: usize,
        column: usize,
        cell: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("model spec: {0}")]
    Json(#[from] serde_json::Error),

    #[error("calibration: {0}")]
    Calibration(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    /// The error with layer context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Layer { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn in_layer(self, layer: impl Into<String>) -> Error {
        match self {
            e @ Error::Layer { .. } => e,
            e => Error::Layer {
                layer: layer.into(),
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
