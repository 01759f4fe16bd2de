//! Shape-resolved layer graph built from a [`ModelSpec`].

use serde::Serialize;

use super::spec::{child_path, layer_id, LayerSpec, ModelSpec, PoolLayer, Shape, WeightRef};
use crate::error::{Error, Result};
use crate::layers::{
    cheb_depth, ChebStrategy, ConvConfig, ConvMode, FcConfig, PoolConfig, PoolKind, ReluConfig,
};
use crate::packing::KernelShape;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerOp {
    Conv {
        config: ConvConfig,
        #[serde(skip)]
        weights: WeightRef,
    },
    Pool(PoolConfig),
    Fc {
        config: FcConfig,
        #[serde(skip)]
        weights: WeightRef,
    },
    Relu {
        beta: Option<f64>,
        degree: usize,
        strategy: ChebStrategy,
    },
    Bootstrap,
    Residual {
        body: Vec<Node>,
        shortcut: Vec<Node>,
    },
}

impl LayerOp {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerOp::Conv { .. } => "conv",
            LayerOp::Pool(p) => match p.kind {
                PoolKind::Average => "avg_pool",
                PoolKind::Global => "global_avg_pool",
                PoolKind::WholeChannel => "whole_channel_pool",
            },
            LayerOp::Fc { .. } => "fc",
            LayerOp::Relu { .. } => "relu",
            LayerOp::Bootstrap => "bootstrap",
            LayerOp::Residual { .. } => "residual",
        }
    }

    /// Weight shape for conv and dense layers.
    pub fn kernel_shape(&self) -> Option<KernelShape> {
        match self {
            LayerOp::Conv { config, .. } => Some(KernelShape::Conv {
                out_channels: config.out_channels,
                in_channels: config.in_channels,
                kernel: config.kernel,
            }),
            LayerOp::Fc { config, .. } => Some(KernelShape::Dense {
                outputs: config.outputs,
                inputs: config.inputs,
            }),
            _ => None,
        }
    }

    pub fn weight_ref(&self) -> Option<&WeightRef> {
        match self {
            LayerOp::Conv { weights, .. } | LayerOp::Fc { weights, .. } => Some(weights),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Node {
    pub id: String,
    /// Index of the spec layer this node came from; `None` for inserted bootstraps.
    pub spec_index: Option<usize>,
    pub op: LayerOp,
    pub input: Shape,
    pub output: Shape,
    /// Planned levels on entry and exit (fresh input at the full budget).
    pub level_in: u32,
    pub level_out: u32,
}

impl Node {
    pub(crate) fn bootstrap(id: String, shape: Shape) -> Node {
        Node {
            id,
            spec_index: None,
            op: LayerOp::Bootstrap,
            input: shape,
            output: shape,
            level_in: 0,
            level_out: 0,
        }
    }

    pub fn relu_config(&self) -> Option<Result<ReluConfig>> {
        match &self.op {
            LayerOp::Relu {
                beta,
                degree,
                strategy,
            } => Some(
                beta.ok_or_else(|| {
                    Error::Calibration(format!("relu {} has no beta; calibrate the model first", self.id))
                })
                .map(|b| {
                    ReluConfig::new(b, self.input.elements())
                        .with_degree(*degree)
                        .with_strategy(*strategy)
                }),
            ),
            _ => None,
        }
    }

    /// Levels the layer itself consumes; `None` for bootstraps and
    /// residual blocks, whose effect is not a fixed subtraction.
    pub fn cost(&self) -> Result<Option<u32>> {
        Ok(Some(match &self.op {
            LayerOp::Conv { config, .. } => config.depth(self.input.width)?,
            LayerOp::Pool(p) => p.depth(self.input.width)?,
            LayerOp::Fc { config, .. } => config.depth(),
            LayerOp::Relu {
                beta,
                degree,
                strategy,
            } => {
                // unknown beta: assume the scaling multiplication happens
                u32::from(beta.is_none_or(|b| b > 1.0)) + cheb_depth(*degree, *strategy)
            }
            LayerOp::Bootstrap | LayerOp::Residual { .. } => return Ok(None),
        }))
    }

    pub fn is_downsampling(&self) -> bool {
        self.output.width < self.input.width
    }
}

/// Resolves shapes of every layer and checks them against the slot count.
pub fn resolve(spec: &ModelSpec, slot_count: usize) -> Result<Vec<Node>> {
    check_fits(spec.input, slot_count, "input")?;
    let (nodes, _) = resolve_list(&spec.layers, spec.input, slot_count, None)?;
    Ok(nodes)
}

fn check_fits(shape: Shape, slot_count: usize, what: &str) -> Result<()> {
    if shape.channels == 0 || shape.width == 0 {
        return Err(Error::Shape(format!("{what} has an empty shape {shape:?}")));
    }
    if shape.elements() > slot_count {
        return Err(Error::CapacityExceeded {
            needed: shape.elements(),
            available: slot_count,
        }
        .in_layer(what));
    }
    Ok(())
}

fn resolve_list(
    layers: &[LayerSpec],
    mut shape: Shape,
    slot_count: usize,
    prefix: Option<(&str, &str)>,
) -> Result<(Vec<Node>, Shape)> {
    let mut nodes = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let path = match prefix {
            None => i.to_string(),
            Some((parent, branch)) => child_path(parent, branch, i),
        };
        let id = layer_id(layer, &path);
        let spec_index = prefix.is_none().then_some(i);
        let node = resolve_one(layer, id.clone(), spec_index, shape, slot_count)
            .map_err(|e| e.in_layer(&id))?;
        shape = node.output;
        nodes.push(node);
    }
    Ok((nodes, shape))
}

fn pool_config(kind: PoolKind, layer: &PoolLayer, width: usize) -> Result<PoolConfig> {
    let kernel = match (kind, layer.kernel) {
        (PoolKind::WholeChannel, 0) => width,
        (_, 0) => return Err(Error::InvalidConfig("pooling needs a kernel size".into())),
        (_, k) => k,
    };
    let stride = if layer.stride == 0 { kernel } else { layer.stride };
    Ok(PoolConfig {
        kind,
        kernel,
        stride,
        stride_variant: layer.stride_variant,
    })
}

fn resolve_one(
    layer: &LayerSpec,
    id: String,
    spec_index: Option<usize>,
    input: Shape,
    slots: usize,
) -> Result<Node> {
    let (op, output) = match layer {
        LayerSpec::Conv(c) => {
            let cfg = c.config;
            cfg.validate()?;
            if cfg.in_channels != input.channels {
                return Err(Error::Shape(format!(
                    "conv expects {} input channels, previous layer gives {}",
                    cfg.in_channels, input.channels
                )));
            }
            let w_out = cfg.output_width(input.width)?;
            let wp = input.width + 2 * cfg.padding;
            if cfg.mode != ConvMode::Special3x3 {
                check_fits(Shape::new(input.channels, wp), slots, "padded input")?;
            }
            if cfg.runs_grouped() {
                let needed = cfg.in_channels * w_out * cfg.stride * wp;
                if needed > slots {
                    return Err(Error::CapacityExceeded {
                        needed,
                        available: slots,
                    });
                }
            }
            let out = Shape::new(cfg.out_channels, w_out);
            (
                LayerOp::Conv {
                    config: cfg,
                    weights: c.weights.clone(),
                },
                out,
            )
        }
        LayerSpec::Relu(r) => {
            if let Some(b) = r.beta {
                ReluConfig::new(b, input.elements())
                    .with_degree(r.degree)
                    .validate(slots)?;
            }
            (
                LayerOp::Relu {
                    beta: r.beta,
                    degree: r.degree,
                    strategy: r.strategy,
                },
                input,
            )
        }
        LayerSpec::AvgPool(p) => {
            let cfg = pool_config(PoolKind::Average, p, input.width)?;
            let w_out = cfg.output_width(input.width)?;
            (LayerOp::Pool(cfg), Shape::new(input.channels, w_out))
        }
        LayerSpec::WholeChannelPool(p) => {
            let cfg = pool_config(PoolKind::WholeChannel, p, input.width)?;
            cfg.output_width(input.width)?;
            (LayerOp::Pool(cfg), Shape::new(input.channels, 1))
        }
        LayerSpec::GlobalAvgPool { .. } => (
            LayerOp::Pool(PoolConfig::global()),
            Shape::new(input.channels, 1),
        ),
        LayerSpec::Fc(f) => {
            let mut cfg = FcConfig::new(f.inputs, f.outputs);
            if let Some(b) = f.merge_budget {
                cfg = cfg.with_merge_budget(b);
            }
            cfg.validate(slots)?;
            if f.inputs != input.elements() {
                return Err(Error::Shape(format!(
                    "fc expects {} inputs, previous layer gives {}",
                    f.inputs,
                    input.elements()
                )));
            }
            (
                LayerOp::Fc {
                    config: cfg,
                    weights: f.weights.clone(),
                },
                Shape::new(f.outputs, 1),
            )
        }
        LayerSpec::Bootstrap { .. } => (LayerOp::Bootstrap, input),
        LayerSpec::Residual(r) => {
            let (body, body_out) = resolve_list(&r.body, input, slots, Some((&id, "body")))?;
            let (shortcut, short_out) =
                resolve_list(&r.shortcut, input, slots, Some((&id, "shortcut")))?;
            if body_out != short_out {
                return Err(Error::Shape(format!(
                    "residual branches disagree: body gives {body_out:?}, shortcut gives {short_out:?}"
                )));
            }
            (LayerOp::Residual { body, shortcut }, body_out)
        }
    };
    check_fits(output, slots, "output")?;
    Ok(Node {
        id,
        spec_index,
        op,
        input,
        output,
        level_in: 0,
        level_out: 0,
    })
}
