//! Built-in model layouts and seeded synthetic weights.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::graph::{resolve, LayerOp, Node};
use super::spec::{
    ContextRef, ConvLayer, FcLayer, LayerSpec, ModelSpec, PoolLayer, ReluLayer, ResidualLayer, Shape,
    WeightRef,
};
use super::weights::InMemoryWeights;
use crate::error::Result;
use crate::layers::{ChebStrategy, ConvConfig, ConvMode, StrideVariant, DEFAULT_DEGREE};
use crate::packing::{KernelShape, KernelTensor, Tensor3};

fn conv(name: Option<&str>, config: ConvConfig) -> LayerSpec {
    LayerSpec::Conv(ConvLayer {
        name: name.map(str::to_string),
        config,
        weights: WeightRef::default(),
    })
}

fn relu(name: Option<&str>) -> LayerSpec {
    LayerSpec::Relu(ReluLayer {
        name: name.map(str::to_string),
        beta: None,
        degree: DEFAULT_DEGREE,
        strategy: ChebStrategy::default(),
    })
}

fn avg_pool(name: Option<&str>, kernel: usize, stride: usize) -> LayerSpec {
    LayerSpec::AvgPool(PoolLayer {
        name: name.map(str::to_string),
        kernel,
        stride,
        stride_variant: StrideVariant::default(),
    })
}

fn fc(name: &str, inputs: usize, outputs: usize) -> LayerSpec {
    LayerSpec::Fc(FcLayer {
        name: Some(name.to_string()),
        inputs,
        outputs,
        merge_budget: None,
        weights: WeightRef::default(),
    })
}

/// LeNet-5 on `1x28x28` inputs. ReLU `beta`s are left for calibration.
pub fn lenet5() -> ModelSpec {
    let layers = vec![
        conv(Some("conv1"), ConvConfig::new(1, 6, 5)),
        relu(Some("relu1")),
        avg_pool(Some("pool1"), 2, 2),
        conv(Some("conv2"), ConvConfig::new(6, 16, 5)),
        relu(Some("relu2")),
        avg_pool(Some("pool2"), 2, 2),
        fc("fc1", 256, 120),
        relu(Some("relu3")),
        fc("fc2", 120, 84),
        relu(Some("relu4")),
        fc("fc3", 84, 10),
    ];
    let mut spec = ModelSpec::new("lenet5", Shape::new(1, 28), layers);
    spec.context = ContextRef::Preset("lenet5".into());
    spec
}

/// ResNet-20 on `3x32x32` inputs with 3x3 convolutions in the special mode.
///
/// Stride-2 3x3 convolutions on even widths do not divide exactly, so each
/// downsampling block first average-pools 2x2 and then convolves at the
/// reduced width; its shortcut is the same pool followed by a 1x1
/// projection.
pub fn resnet20() -> ModelSpec {
    let special = |c, f| ConvConfig::new(c, f, 3).with_padding(1).with_mode(ConvMode::Special3x3);
    let mut layers = vec![conv(Some("stem"), special(3, 16)), relu(Some("stem.relu"))];
    let mut channels = 16;
    for (stage, width) in [16, 32, 64].into_iter().enumerate() {
        for block in 0..3 {
            let name = format!("stage{}.block{}", stage + 1, block);
            let down = width != channels;
            let mut body = Vec::new();
            let mut shortcut = Vec::new();
            if down {
                body.push(avg_pool(None, 2, 2));
                shortcut.push(avg_pool(None, 2, 2));
                shortcut.push(conv(None, ConvConfig::new(channels, width, 1)));
            }
            body.push(conv(None, special(channels, width)));
            body.push(relu(None));
            body.push(conv(None, special(width, width)));
            layers.push(LayerSpec::Residual(ResidualLayer {
                name: Some(name.clone()),
                body,
                shortcut,
            }));
            layers.push(relu(Some(&format!("{name}.relu"))));
            channels = width;
        }
    }
    layers.push(LayerSpec::GlobalAvgPool {
        name: Some("gap".into()),
    });
    layers.push(fc("fc", 64, 10));
    let mut spec = ModelSpec::new("resnet20", Shape::new(3, 32), layers);
    spec.context = ContextRef::Preset("large".into());
    spec
}

pub fn by_name(name: &str) -> Option<ModelSpec> {
    match name {
        "lenet5" => Some(lenet5()),
        "resnet20" => Some(resnet20()),
        _ => None,
    }
}

pub fn names() -> &'static [&'static str] {
    &["lenet5", "resnet20"]
}

/// Uniform `±sqrt(3 / fan_in)` weights and small biases for every conv and
/// dense layer of `spec`, reproducible from `seed`.
pub fn random_weights(spec: &ModelSpec, seed: u64) -> Result<InMemoryWeights> {
    let ctx = spec.context.resolve()?;
    let nodes = resolve(spec, ctx.slot_count)?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = InMemoryWeights::new();
    fill(&nodes, &mut rng, &mut out)?;
    Ok(out)
}

fn fill(nodes: &[Node], rng: &mut StdRng, out: &mut InMemoryWeights) -> Result<()> {
    for n in nodes {
        if let LayerOp::Residual { body, shortcut } = &n.op {
            fill(body, rng, out)?;
            fill(shortcut, rng, out)?;
        }
        let Some(shape) = n.op.kernel_shape() else {
            continue;
        };
        let fan_in = match shape {
            KernelShape::Conv {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            KernelShape::Dense { inputs, .. } => inputs,
        };
        let a = (3.0 / fan_in as f64).sqrt();
        let w = (0..shape.weight_count()).map(|_| rng.random_range(-a..a)).collect();
        let b = (0..shape.bias_count()).map(|_| rng.random_range(-0.05..0.05)).collect();
        out.insert(n.id.clone(), KernelTensor::new(shape, w, b)?);
    }
    Ok(())
}

/// Seeded inputs with values uniform in `[0, 1)`.
pub fn random_inputs(shape: Shape, count: usize, seed: u64) -> Vec<Tensor3> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..count)
        .map(|_| Tensor3::from_fn(shape.channels, shape.width, shape.width, |_, _, _| rng.random()))
        .collect()
}
