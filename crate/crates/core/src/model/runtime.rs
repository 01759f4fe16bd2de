use std::borrow::Cow;
use std::collections::HashMap;
use std::sync::Arc;

use serde::Serialize;

use super::graph::{resolve, LayerOp, Node};
use super::placement::{count_bootstraps, place_bootstraps};
use super::reference::run_reference;
use super::spec::{KeyMode, ModelSpec, WeightMode};
use super::weights::WeightProvider;
use crate::error::{Error, Result};
use crate::keyplan::{plan_blocks, union_keys, BlockPlan, KeySet};
use crate::layers::{conv2d, fully_connected, pool, secure_relu};
use crate::packing::{flatten, KernelTensor, PackedTensor, Tensor3};
use crate::simd::{ContextConfig, SlotBackend, TraceEvent};

/// Headroom multiplier applied to the largest observed pre-activation.
pub const CALIBRATION_FACTOR: f64 = 1.25;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub id: String,
    pub kind: &'static str,
    pub level_in: u32,
    pub level_out: u32,
    /// Declared cost; `None` for bootstraps and residual blocks.
    pub declared: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Inference {
    pub logits: Vec<f64>,
    pub ledger: Vec<LedgerEntry>,
    pub bootstraps: usize,
}

/// A model ready to run: shapes resolved, bootstraps placed, keys planned.
pub struct Model {
    spec: ModelSpec,
    ctx: ContextConfig,
    nodes: Vec<Node>,
    provider: Arc<dyn WeightProvider>,
    cache: HashMap<String, KernelTensor>,
    weight_mode: WeightMode,
    key_mode: KeyMode,
    keys: KeySet,
    blocks: BlockPlan,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("name", &self.spec.name)
            .field("layers", &self.nodes.len())
            .field("weight_mode", &self.weight_mode)
            .field("key_mode", &self.key_mode)
            .finish()
    }
}

impl Model {
    /// Every ReLU must have its `beta`; see [`calibrate`].
    pub fn build(spec: ModelSpec, provider: Arc<dyn WeightProvider>) -> Result<Model> {
        let ctx = spec.context.resolve()?;
        let nodes = resolve(&spec, ctx.slot_count)?;
        check_calibrated(&nodes)?;
        let nodes = place_bootstraps(nodes, spec.bootstrap_policy, ctx.depth_budget)?;
        let keys = union_keys(&nodes)?;
        keys.check_range(ctx.slot_count)?;
        let blocks = plan_blocks(&nodes, &spec.partition)?;
        let mut model = Model {
            weight_mode: spec.weight_mode,
            key_mode: spec.key_mode,
            spec,
            ctx,
            nodes,
            provider,
            cache: HashMap::new(),
            keys,
            blocks,
        };
        model.set_weight_mode(model.weight_mode)?;
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn context(&self) -> &ContextConfig {
        &self.ctx
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Union of all rotation indices the model uses.
    pub fn keys(&self) -> &KeySet {
        &self.keys
    }

    pub fn block_plan(&self) -> &BlockPlan {
        &self.blocks
    }

    pub fn bootstrap_count(&self) -> usize {
        count_bootstraps(&self.nodes)
    }

    pub fn weight_mode(&self) -> WeightMode {
        self.weight_mode
    }

    pub fn key_mode(&self) -> KeyMode {
        self.key_mode
    }

    /// Switching to preload reads every weight file now.
    pub fn set_weight_mode(&mut self, mode: WeightMode) -> Result<()> {
        self.cache.clear();
        if mode == WeightMode::Preload {
            let mut cache = HashMap::new();
            visit(&self.nodes, &mut |n| {
                if n.op.kernel_shape().is_some() {
                    cache.insert(n.id.clone(), self.fetch(n)?);
                }
                Ok(())
            })?;
            self.cache = cache;
        }
        self.weight_mode = mode;
        Ok(())
    }

    pub fn set_key_mode(&mut self, mode: KeyMode) {
        self.key_mode = mode;
    }

    /// Number of weight tensors currently held in memory.
    pub fn cached_weights(&self) -> usize {
        self.cache.len()
    }

    fn fetch(&self, node: &Node) -> Result<KernelTensor> {
        let shape = node
            .op
            .kernel_shape()
            .ok_or_else(|| Error::Invariant(format!("layer {} has no weights", node.id)))?;
        let refs = node.op.weight_ref().cloned().unwrap_or_default();
        self.provider
            .load(&node.id, &refs, shape)
            .map_err(|e| e.in_layer(&node.id))
    }

    fn weights(&self, node: &Node) -> Result<Cow<'_, KernelTensor>> {
        match self.cache.get(&node.id) {
            Some(k) => Ok(Cow::Borrowed(k)),
            None => self.fetch(node).map(Cow::Owned),
        }
    }

    /// Encrypts `input`, runs every layer and decrypts the output vector.
    pub fn infer(&self, backend: &dyn SlotBackend, input: &Tensor3) -> Result<Inference> {
        if backend.context().depth_budget != self.ctx.depth_budget
            || backend.slot_count() != self.ctx.slot_count
        {
            return Err(Error::InvalidConfig(
                "backend context differs from the model context".into(),
            ));
        }
        let expected = self.spec.input;
        if (input.channels(), input.height(), input.width()) != (expected.channels, expected.width, expected.width) {
            return Err(Error::Shape(format!(
                "input is {}x{}x{}, model expects {}x{}x{}",
                input.channels(),
                input.height(),
                input.width(),
                expected.channels,
                expected.width,
                expected.width
            )));
        }
        let mut x = flatten(backend, input)?;
        if self.key_mode == KeyMode::Preload {
            backend.load_keys(&self.keys.indices());
        }
        let mut ledger = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            backend.annotate(TraceEvent::Layer {
                index: i,
                name: node.id.clone(),
            });
            if self.key_mode == KeyMode::Block {
                if let Some(block) = self.blocks.starts_at(i) {
                    backend.load_keys(&block.keys.indices());
                }
            }
            x = self.run_node(backend, node, x, &mut ledger)?;
        }
        let out = self.nodes.last().map(|n| n.output).unwrap_or(expected);
        let mut logits = backend.decrypt(x.data());
        logits.truncate(out.elements());
        Ok(Inference {
            logits,
            ledger,
            bootstraps: count_bootstraps(&self.nodes),
        })
    }

    fn run_node(
        &self,
        backend: &dyn SlotBackend,
        node: &Node,
        x: PackedTensor,
        ledger: &mut Vec<LedgerEntry>,
    ) -> Result<PackedTensor> {
        if x.level() != node.level_in {
            return Err(Error::Invariant(format!(
                "layer {} planned at level {}, reached at level {}",
                node.id,
                node.level_in,
                x.level()
            )));
        }
        let y = self.apply(backend, node, x, ledger).map_err(|e| e.in_layer(&node.id))?;
        if y.level() != node.level_out {
            return Err(Error::Invariant(format!(
                "layer {} planned to leave level {}, left level {}",
                node.id,
                node.level_out,
                y.level()
            )));
        }
        ledger.push(LedgerEntry {
            id: node.id.clone(),
            kind: node.op.kind(),
            level_in: node.level_in,
            level_out: y.level(),
            declared: node.cost()?,
        });
        Ok(y)
    }

    fn apply(
        &self,
        backend: &dyn SlotBackend,
        node: &Node,
        x: PackedTensor,
        ledger: &mut Vec<LedgerEntry>,
    ) -> Result<PackedTensor> {
        let out = node.output;
        match &node.op {
            LayerOp::Conv { config, .. } => conv2d(backend, &x, config, &*self.weights(node)?),
            LayerOp::Pool(cfg) => pool(backend, &x, cfg),
            LayerOp::Fc { config, .. } => {
                let y = fully_connected(backend, x.data(), config, &*self.weights(node)?)?;
                PackedTensor::new(y, out.channels, out.width)
            }
            LayerOp::Relu { .. } => {
                let cfg = node.relu_config().expect("relu node")?;
                let y = secure_relu(backend, x.data(), &cfg)?;
                PackedTensor::new(y, out.channels, out.width)
            }
            LayerOp::Bootstrap => {
                let y = backend.bootstrap(x.data())?;
                PackedTensor::new(y, out.channels, out.width)
            }
            LayerOp::Residual { body, shortcut } => {
                let mut b = x.clone();
                for n in body {
                    b = self.run_node(backend, n, b, ledger)?;
                }
                let mut s = x;
                for n in shortcut {
                    s = self.run_node(backend, n, s, ledger)?;
                }
                let y = backend.add(b.data(), s.data())?;
                PackedTensor::new(y, out.channels, out.width)
            }
        }
    }

    /// Exact plaintext forward pass with the same weights.
    pub fn reference(&self, input: &Tensor3) -> Result<Vec<f64>> {
        let y = run_reference(
            &self.nodes,
            input,
            &|n| self.weights(n).map(Cow::into_owned),
            &mut |_, _| {},
        )?;
        Ok(y.into_data())
    }
}

fn visit(nodes: &[Node], f: &mut dyn FnMut(&Node) -> Result<()>) -> Result<()> {
    for n in nodes {
        f(n)?;
        if let LayerOp::Residual { body, shortcut } = &n.op {
            visit(body, f)?;
            visit(shortcut, f)?;
        }
    }
    Ok(())
}

fn check_calibrated(nodes: &[Node]) -> Result<()> {
    visit(nodes, &mut |n| match n.relu_config() {
        Some(r) => r.map(|_| ()),
        None => Ok(()),
    })
}

/// Sets every ReLU's `beta` to `factor` times the largest absolute
/// pre-activation seen over `batch` in an exact plaintext pass.
pub fn calibrate(
    spec: &ModelSpec,
    provider: &dyn WeightProvider,
    batch: &[Tensor3],
    factor: f64,
) -> Result<ModelSpec> {
    if batch.is_empty() {
        return Err(Error::Calibration("empty calibration batch".into()));
    }
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::Calibration(format!("factor must be positive, got {factor}")));
    }
    let ctx = spec.context.resolve()?;
    let nodes = resolve(spec, ctx.slot_count)?;
    let mut cache: HashMap<String, KernelTensor> = HashMap::new();
    visit(&nodes, &mut |n| {
        if let Some(shape) = n.op.kernel_shape() {
            let refs = n.op.weight_ref().cloned().unwrap_or_default();
            let k = provider.load(&n.id, &refs, shape).map_err(|e| e.in_layer(&n.id))?;
            cache.insert(n.id.clone(), k);
        }
        Ok(())
    })?;
    let weights = |n: &Node| {
        cache
            .get(&n.id)
            .cloned()
            .ok_or_else(|| Error::Invariant(format!("no cached weights for {}", n.id)))
    };
    let mut peaks: Vec<(String, f64)> = Vec::new();
    for image in batch {
        run_reference(&nodes, image, &weights, &mut |n, t| {
            let m = t.data().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            match peaks.iter_mut().find(|(id, _)| *id == n.id) {
                Some((_, p)) => *p = p.max(m),
                None => peaks.push((n.id.clone(), m)),
            }
        })?;
    }
    let mut out = spec.clone();
    for (id, peak) in peaks {
        let beta = if peak > 0.0 { peak * factor } else { 1.0 };
        if !out.set_relu_beta(&id, beta) {
            return Err(Error::Invariant(format!("relu {id} not found in spec")));
        }
    }
    Ok(out)
}
