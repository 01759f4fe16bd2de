use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{ChebStrategy, ConvConfig, StrideVariant, DEFAULT_DEGREE};
use crate::simd::ContextConfig;

/// `(C, W)` of a square packed tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, width: usize) -> Self {
        Shape { channels, width }
    }

    pub fn elements(&self) -> usize {
        self.channels * self.width * self.width
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContextRef {
    Preset(String),
    Config(ContextConfig),
}

impl Default for ContextRef {
    fn default() -> Self {
        ContextRef::Preset("lenet5".into())
    }
}

impl ContextRef {
    pub fn resolve(&self) -> Result<ContextConfig> {
        match self {
            ContextRef::Preset(name) => ContextConfig::preset(name),
            ContextRef::Config(cfg) => {
                cfg.validate()?;
                Ok(cfg.clone())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Everything is loaded once at build time.
    #[default]
    Preload,
    /// Each layer loads its weights right before running and drops them after.
    Lazy,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyMode {
    /// The union of all rotation keys is resident for the whole run.
    #[default]
    Preload,
    /// Only the current block's keys are resident.
    Block,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapPolicy {
    /// Fixed placement rules, then extra bootstraps wherever the level
    /// ledger would run dry.
    #[default]
    PaperDefault,
    /// Only the bootstrap layers written in the spec.
    Explicit,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// A new key block starts at every top-level layer that shrinks the width.
    #[default]
    ByDownsampling,
    /// Half-open `[start, end)` ranges of spec layer indices.
    Explicit(Vec<[usize; 2]>),
}

/// CSV references for a weighted layer, relative to the spec file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
    /// Defaults to `<weights stem>_bias.csv` next to the weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batchnorm: Option<BatchNormRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormRef {
    pub gamma: String,
    pub beta: String,
    pub mean: String,
    pub var: String,
    #[serde(default = "default_bn_eps")]
    pub epsilon: f64,
}

fn default_bn_eps() -> f64 {
    1e-5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub config: ConvConfig,
    #[serde(flatten)]
    pub weights: WeightRef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcLayer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub inputs: usize,
    pub outputs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_budget: Option<usize>,
    #[serde(flatten)]
    pub weights: WeightRef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReluLayer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Input magnitude bound; filled in by calibration when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default)]
    pub strategy: ChebStrategy,
}

fn default_degree() -> usize {
    DEFAULT_DEGREE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolLayer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub kernel: usize,
    #[serde(default)]
    pub stride: usize,
    #[serde(default)]
    pub stride_variant: StrideVariant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualLayer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub body: Vec<LayerSpec>,
    /// Empty means identity.
    #[serde(default)]
    pub shortcut: Vec<LayerSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv(ConvLayer),
    Relu(ReluLayer),
    AvgPool(PoolLayer),
    GlobalAvgPool {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    WholeChannelPool(PoolLayer),
    Fc(FcLayer),
    Bootstrap {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    Residual(ResidualLayer),
}

impl LayerSpec {
    pub fn name(&self) -> Option<&str> {
        match self {
            LayerSpec::Conv(l) => l.name.as_deref(),
            LayerSpec::Relu(l) => l.name.as_deref(),
            LayerSpec::AvgPool(l) | LayerSpec::WholeChannelPool(l) => l.name.as_deref(),
            LayerSpec::GlobalAvgPool { name } | LayerSpec::Bootstrap { name } => name.as_deref(),
            LayerSpec::Fc(l) => l.name.as_deref(),
            LayerSpec::Residual(l) => l.name.as_deref(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv(_) => "conv",
            LayerSpec::Relu(_) => "relu",
            LayerSpec::AvgPool(_) => "avg_pool",
            LayerSpec::GlobalAvgPool { .. } => "global_avg_pool",
            LayerSpec::WholeChannelPool(_) => "whole_channel_pool",
            LayerSpec::Fc(_) => "fc",
            LayerSpec::Bootstrap { .. } => "bootstrap",
            LayerSpec::Residual(_) => "residual",
        }
    }
}

/// Identifier of a layer: its name, or its position path (`"3"`,
/// `"5.body.1"`, `"5.shortcut.0"`).
pub(crate) fn layer_id(layer: &LayerSpec, path: &str) -> String {
    layer.name().map_or_else(|| path.to_string(), str::to_string)
}

pub(crate) fn child_path(parent: &str, branch: &str, index: usize) -> String {
    format!("{parent}.{branch}.{index}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub context: ContextRef,
    pub input: Shape,
    #[serde(default)]
    pub weight_mode: WeightMode,
    #[serde(default)]
    pub key_mode: KeyMode,
    #[serde(default)]
    pub bootstrap_policy: BootstrapPolicy,
    #[serde(default)]
    pub partition: Partition,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, input: Shape, layers: Vec<LayerSpec>) -> Self {
        ModelSpec {
            name: name.into(),
            context: ContextRef::default(),
            input,
            weight_mode: WeightMode::default(),
            key_mode: KeyMode::default(),
            bootstrap_policy: BootstrapPolicy::default(),
            partition: Partition::default(),
            layers,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Sets `beta` on the ReLU whose id is `id`; false when no such ReLU.
    pub fn set_relu_beta(&mut self, id: &str, beta: f64) -> bool {
        let mut found = false;
        visit_mut(&mut self.layers, None, &mut |lid, layer| {
            if let LayerSpec::Relu(r) = layer {
                if lid == id {
                    r.beta = Some(beta);
                    found = true;
                }
            }
        });
        found
    }

    /// Names `<id>.csv` as the weights file of every conv and dense layer
    /// that has none.
    pub fn default_weight_files(&mut self) {
        visit_mut(&mut self.layers, None, &mut |lid, layer| {
            let refs = match layer {
                LayerSpec::Conv(c) => &mut c.weights,
                LayerSpec::Fc(f) => &mut f.weights,
                _ => return,
            };
            if refs.weights.is_none() {
                refs.weights = Some(format!("{lid}.csv"));
            }
        });
    }
}

impl ModelSpec {
    /// Applies `variant` to every convolution and average pooling layer.
    pub fn set_stride_variant(&mut self, variant: StrideVariant) {
        visit_mut(&mut self.layers, None, &mut |_, layer| match layer {
            LayerSpec::Conv(c) => c.config.stride_variant = variant,
            LayerSpec::AvgPool(p) | LayerSpec::WholeChannelPool(p) => p.stride_variant = variant,
            _ => {}
        });
    }

    pub fn has_residual_blocks(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::Residual(_)))
    }
}

fn visit_mut(layers: &mut [LayerSpec], prefix: Option<&str>, f: &mut dyn FnMut(&str, &mut LayerSpec)) {
    for (i, layer) in layers.iter_mut().enumerate() {
        let path = match prefix {
            None => i.to_string(),
            Some(p) => format!("{p}{i}"),
        };
        let lid = layer_id(layer, &path);
        f(&lid, layer);
        if let LayerSpec::Residual(res) = layer {
            visit_mut(&mut res.body, Some(&format!("{lid}.body.")), f);
            visit_mut(&mut res.shortcut, Some(&format!("{lid}.shortcut.")), f);
        }
    }
}
