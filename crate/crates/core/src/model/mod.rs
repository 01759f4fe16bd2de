//! Model specs, weights, bootstrap placement and the simulated runtime.

pub mod architectures;
mod graph;
mod placement;
pub mod reference;
mod runtime;
mod spec;
mod weights;

pub use graph::{resolve, LayerOp, Node};
pub use placement::{count_bootstraps, place_bootstraps};
pub use runtime::{calibrate, Inference, LedgerEntry, Model, CALIBRATION_FACTOR};
pub use spec::{
    BatchNormRef, BootstrapPolicy, ContextRef, ConvLayer, FcLayer, KeyMode, LayerSpec, ModelSpec,
    Partition, PoolLayer, ReluLayer, ResidualLayer, Shape, WeightMode, WeightRef,
};
pub use weights::{
    default_bias_path, export_weights_csv, fold_batchnorm, load_weights_csv, read_csv_rows, read_csv_values,
    BatchNormParams, CsvWeights, InMemoryWeights, WeightProvider,
};
