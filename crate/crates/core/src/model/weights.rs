//! Weight files: plain comma-separated decimals, no header, one tensor per
//! file, row-major.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::spec::WeightRef;
use crate::error::{Error, Result};
use crate::packing::{KernelShape, KernelTensor};

/// All cells of a CSV file in row-major order.
pub fn read_csv_values(path: &Path) -> Result<Vec<f64>> {
    Ok(read_csv_rows(path)?.into_iter().flatten().collect())
}

/// Cells of a CSV file row by row; blank lines are skipped.
pub fn read_csv_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let mut values = Vec::with_capacity(record.len());
        for (column, cell) in record.iter().enumerate() {
            if cell.is_empty() && record.len() > 1 && column + 1 == record.len() {
                continue; // trailing comma
            }
            let v: f64 = cell.parse().map_err(|_| Error::BadCell {
                path: path.to_path_buf(),
                row: row + 1,
                column: column + 1,
                cell: cell.to_string(),
            })?;
            values.push(v);
        }
        if !values.is_empty() {
            rows.push(values);
        }
    }
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if !e.is_io_error() {
        return Error::Csv {
            path: path.to_path_buf(),
            source: e,
        };
    }
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        _ => unreachable!("checked is_io_error"),
    }
}

fn read_exact(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let values = read_csv_values(path)?;
    if values.len() != expected {
        return Err(Error::CountMismatch {
            path: path.to_path_buf(),
            expected,
            found: values.len(),
        });
    }
    Ok(values)
}

/// `<stem>_bias.csv` next to a weights file.
pub fn default_bias_path(weights: &Path) -> PathBuf {
    let stem = weights
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    weights.with_file_name(format!("{stem}_bias.csv"))
}

/// Loads weights of the declared shape and the matching bias vector.
pub fn load_weights_csv(weights: &Path, bias: &Path, shape: KernelShape) -> Result<KernelTensor> {
    let w = read_exact(weights, shape.weight_count())?;
    let b = read_exact(bias, shape.bias_count())?;
    KernelTensor::new(shape, w, b)
}

/// Writes weights one innermost row per line, and the bias on one line.
pub fn export_weights_csv(kernel: &KernelTensor, weights: &Path, bias: &Path) -> Result<()> {
    let row_len = *kernel.shape().dims().last().expect("shape has dimensions");
    write_rows(weights, kernel.weights(), row_len)?;
    write_rows(bias, kernel.bias(), kernel.bias().len().max(1))
}

pub(crate) fn write_rows(path: &Path, values: &[f64], row_len: usize) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    for row in values.chunks(row_len.max(1)) {
        // `{:?}` prints the shortest string that parses back to the same f64
        writer
            .write_record(row.iter().map(|v| format!("{v:?}")))
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub epsilon: f64,
}

/// Folds inference-time batch norm into the preceding convolution:
/// `s = gamma / sqrt(var + eps)`, `w' = s w`, `b' = s (b - mean) + beta`.
pub fn fold_batchnorm(kernel: &KernelTensor, bn: &BatchNormParams) -> Result<KernelTensor> {
    let (f_count, c, k) = kernel.conv_dims()?;
    for (name, v) in [("gamma", &bn.gamma), ("beta", &bn.beta), ("mean", &bn.mean), ("var", &bn.var)] {
        if v.len() != f_count {
            return Err(Error::Shape(format!(
                "batch norm {name} has {} channels, convolution has {f_count}",
                v.len()
            )));
        }
    }
    let mut folded = kernel.clone();
    let per_filter = c * k * k;
    for f in 0..f_count {
        let denom = bn.var[f] + bn.epsilon;
        if denom <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "batch norm channel {f} has non-positive variance + epsilon"
            )));
        }
        let s = bn.gamma[f] / denom.sqrt();
        for w in &mut folded.weights_mut()[f * per_filter..(f + 1) * per_filter] {
            *w *= s;
        }
        let b = &mut folded.bias_mut()[f];
        *b = s * (*b - bn.mean[f]) + bn.beta[f];
    }
    Ok(folded)
}

/// Source of layer weights, addressed by layer id.
pub trait WeightProvider: Send + Sync {
    fn load(&self, id: &str, refs: &WeightRef, shape: KernelShape) -> Result<KernelTensor>;
}

/// Reads the CSV files named in the spec, relative to `base`.
#[derive(Clone, Debug)]
pub struct CsvWeights {
    base: PathBuf,
}

impl CsvWeights {
    pub fn new(base: impl Into<PathBuf>) -> Self {
        CsvWeights { base: base.into() }
    }
}

impl WeightProvider for CsvWeights {
    fn load(&self, id: &str, refs: &WeightRef, shape: KernelShape) -> Result<KernelTensor> {
        let Some(w) = &refs.weights else {
            return Err(Error::InvalidConfig(format!("layer {id} names no weights file")));
        };
        let weights = self.base.join(w);
        let bias = match &refs.bias {
            Some(b) => self.base.join(b),
            None => default_bias_path(&weights),
        };
        let kernel = load_weights_csv(&weights, &bias, shape)?;
        match &refs.batchnorm {
            None => Ok(kernel),
            Some(bn) => {
                let f = shape.bias_count();
                let params = BatchNormParams {
                    gamma: read_exact(&self.base.join(&bn.gamma), f)?,
                    beta: read_exact(&self.base.join(&bn.beta), f)?,
                    mean: read_exact(&self.base.join(&bn.mean), f)?,
                    var: read_exact(&self.base.join(&bn.var), f)?,
                    epsilon: bn.epsilon,
                };
                fold_batchnorm(&kernel, &params)
            }
        }
    }
}

/// Weights held in memory, keyed by layer id.
#[derive(Clone, Debug, Default)]
pub struct InMemoryWeights {
    tensors: HashMap<String, KernelTensor>,
}

impl InMemoryWeights {
    pub fn new() -> Self {
        InMemoryWeights::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, kernel: KernelTensor) {
        self.tensors.insert(id.into(), kernel);
    }

    pub fn get(&self, id: &str) -> Option<&KernelTensor> {
        self.tensors.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }
}

impl WeightProvider for InMemoryWeights {
    fn load(&self, id: &str, _refs: &WeightRef, shape: KernelShape) -> Result<KernelTensor> {
        let kernel = self
            .tensors
            .get(id)
            .ok_or_else(|| Error::InvalidConfig(format!("no weights for layer {id}")))?;
        if kernel.shape() != shape {
            return Err(Error::Shape(format!(
                "weights for {id} have shape {:?}, layer needs {:?}",
                kernel.shape().dims(),
                shape.dims()
            )));
        }
        Ok(kernel.clone())
    }
}
