use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use hecnn::model::architectures::{self, random_weights};
use hecnn::model::{read_csv_rows, ContextRef, CsvWeights, LayerSpec, ModelSpec, WeightProvider};
use hecnn::packing::Tensor3;
use hecnn::simd::ContextConfig;

use crate::ModelArgs;

pub enum Source {
    File(std::path::PathBuf),
    Builtin,
}

/// Reads the spec named by `args.model` and applies the context and stride
/// overrides.
pub fn spec(args: &ModelArgs) -> Result<(ModelSpec, Source)> {
    let path = Path::new(&args.model);
    let (mut spec, source) = if path.is_file() {
        let spec = ModelSpec::load(path).with_context(|| format!("loading model {}", path.display()))?;
        (spec, Source::File(path.to_path_buf()))
    } else if let Some(spec) = architectures::by_name(&args.model) {
        (spec, Source::Builtin)
    } else {
        bail!(
            "{}: no such model file or built-in model (built-ins: {})",
            args.model,
            architectures::names().join(", ")
        );
    };
    if let Some(ctx) = &args.context {
        spec.context = context(ctx)?;
    }
    if let Some(v) = args.stride_variant {
        spec.set_stride_variant(v.into());
    }
    Ok((spec, source))
}

fn context(arg: &str) -> Result<ContextRef> {
    if ContextConfig::preset_names().contains(&arg) {
        return Ok(ContextRef::Preset(arg.to_string()));
    }
    let text = std::fs::read_to_string(arg)
        .with_context(|| format!("{arg}: not a context preset or readable context file"))?;
    let cfg: ContextConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing context {arg}"))?;
    cfg.validate()?;
    Ok(ContextRef::Config(cfg))
}

/// Weight files resolve relative to the spec; built-ins get seeded synthetic weights.
pub fn weights(spec: &ModelSpec, source: &Source, seed: u64) -> Result<Arc<dyn WeightProvider>> {
    Ok(match source {
        Source::File(path) => {
            let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            Arc::new(CsvWeights::new(base))
        }
        Source::Builtin => Arc::new(random_weights(spec, seed)?),
    })
}

pub fn inputs(path: &Path, spec: &ModelSpec) -> Result<Vec<Tensor3>> {
    let rows = read_csv_rows(path).with_context(|| format!("reading inputs {}", path.display()))?;
    if rows.is_empty() {
        bail!("{}: no input rows", path.display());
    }
    let shape = spec.input;
    rows.into_iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != shape.elements() {
                bail!(
                    "{} row {}: expected {} values for a {}x{}x{} input, found {}",
                    path.display(),
                    i + 1,
                    shape.elements(),
                    shape.channels,
                    shape.width,
                    shape.width,
                    row.len()
                );
            }
            Ok(Tensor3::new(shape.channels, shape.width, shape.width, row)?)
        })
        .collect()
}

pub fn needs_calibration(layers: &[LayerSpec]) -> bool {
    layers.iter().any(|l| match l {
        LayerSpec::Relu(r) => r.beta.is_none(),
        LayerSpec::Residual(r) => needs_calibration(&r.body) || needs_calibration(&r.shortcut),
        _ => false,
    })
}
