//! Rotation-key planning.
//!
//! Index sets are derived analytically from layer configurations and input
//! shapes; the tests check them against recorded rotation traces in both
//! directions (every traced index is planned, every planned index is used).

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::stride::{effective_variant, RowGrid};
use crate::layers::{merge_group, ConvConfig, ConvMode, FcConfig, PoolConfig, PoolKind, StrideVariant};
use crate::model::{LayerOp, Node, Partition, Shape};
use crate::simd::{ContextConfig, TraceEvent};

/// Assumed size of one rotation key when estimating memory.
pub const DEFAULT_BYTES_PER_KEY: u64 = 16 << 20;

/// Signed rotation indices with the number of layer instances needing each.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct KeySet {
    usage: BTreeMap<i64, u64>,
}

impl KeySet {
    pub fn new() -> Self {
        KeySet::default()
    }

    pub fn from_indices(indices: impl IntoIterator<Item = i64>) -> Self {
        let mut set = KeySet::new();
        set.extend(indices);
        set
    }

    /// Adds one use of `index`; index 0 needs no key and is ignored.
    pub fn insert(&mut self, index: i64) {
        if index != 0 {
            *self.usage.entry(index).or_insert(0) += 1;
        }
    }

    pub fn extend(&mut self, indices: impl IntoIterator<Item = i64>) {
        for i in indices {
            self.insert(i);
        }
    }

    /// Set union; usage counts add up.
    pub fn merge(&mut self, other: &KeySet) {
        for (&i, &n) in &other.usage {
            *self.usage.entry(i).or_insert(0) += n;
        }
    }

    pub fn contains(&self, index: i64) -> bool {
        self.usage.contains_key(&index)
    }

    pub fn len(&self) -> usize {
        self.usage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.usage.is_empty()
    }

    pub fn usage(&self, index: i64) -> u64 {
        self.usage.get(&index).copied().unwrap_or(0)
    }

    pub fn indices(&self) -> BTreeSet<i64> {
        self.usage.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = i64> + '_ {
        self.usage.keys().copied()
    }

    pub fn check_range(&self, slot_count: usize) -> Result<()> {
        match self.iter().find(|i| i.unsigned_abs() as usize >= slot_count) {
            Some(index) => Err(Error::InvalidRotation {
                index,
                slots: slot_count,
            }),
            None => Ok(()),
        }
    }
}

/// Keys of the slot-sum tree over a window of `n` slots.
pub fn sum_slots_indices(n: usize) -> KeySet {
    let mut set = KeySet::new();
    if n <= 1 {
        return set;
    }
    let top = usize::BITS - 1 - n.leading_zeros();
    set.extend((0..top).map(|b| 1i64 << b));
    let mut offset = 1usize << top;
    for b in (0..top).rev() {
        if n & (1 << b) != 0 {
            set.insert(offset as i64);
            offset += 1 << b;
        }
    }
    set
}

fn tap_indices(width: usize, k: usize) -> impl Iterator<Item = i64> {
    (0..k * k).map(move |t| ((t / k) * width + t % k) as i64)
}

pub fn stride_grid_indices(grid: &RowGrid, variant: StrideVariant) -> KeySet {
    let mut set = KeySet::new();
    match effective_variant(variant, grid) {
        StrideVariant::Extract => {
            if grid.rows > 1 {
                set.insert(grid.pitch as i64);
                set.insert(-(grid.width as i64));
            }
            if grid.stride > 1 && grid.width > 1 {
                set.insert((grid.stride - 1) as i64);
            }
        }
        StrideVariant::Masked => {
            for t in 0..grid.compaction_rounds() {
                set.insert(((grid.stride - 1) << t) as i64);
            }
            if grid.rows > 1 {
                set.insert((grid.pitch - grid.width) as i64);
            }
        }
    }
    set
}

pub fn pad_indices(shape: Shape, padding: usize) -> KeySet {
    let mut set = KeySet::new();
    if padding == 0 {
        return set;
    }
    let (c, w) = (shape.channels, shape.width);
    let wp = w + 2 * padding;
    let within = -2 * padding as i64;
    if w > 1 {
        set.insert(within);
    }
    if c > 1 {
        set.insert(within * (wp as i64 + 1));
    }
    set.insert(-((padding * wp + padding) as i64));
    set
}

fn stride_channel_indices(
    channels: usize,
    width: usize,
    stride: usize,
    out_width: usize,
    variant: StrideVariant,
) -> KeySet {
    if channels == 1 || out_width * stride == width {
        let grid = RowGrid {
            rows: channels * out_width,
            pitch: stride * width,
            stride,
            width: out_width,
        };
        return stride_grid_indices(&grid, variant);
    }
    let mut set = stride_grid_indices(&RowGrid::single(width, stride, out_width), variant);
    set.insert((width * width) as i64);
    set.insert(-((out_width * out_width) as i64));
    set
}

pub fn conv_indices(cfg: &ConvConfig, input: Shape) -> Result<KeySet> {
    cfg.validate()?;
    let w_out = cfg.output_width(input.width)?;
    let mut set = KeySet::new();
    if cfg.mode == ConvMode::Special3x3 {
        let w = input.width as i64;
        set.extend([-w, w, -1, 1]);
        if cfg.in_channels > 1 {
            set.insert(w * w);
        }
        set.extend((1..cfg.out_channels).map(|f| -((f * input.width * input.width) as i64)));
        return Ok(set);
    }
    set.merge(&pad_indices(input, cfg.padding));
    let wp = input.width + 2 * cfg.padding;
    set.extend(tap_indices(wp, cfg.kernel));
    if cfg.in_channels > 1 {
        set.insert((wp * wp) as i64);
    }
    let block = (w_out * w_out) as i64;
    if cfg.runs_grouped() {
        let g = cfg.in_channels;
        set.insert(-((w_out * cfg.stride * wp) as i64));
        let joint = RowGrid {
            rows: g * w_out,
            pitch: cfg.stride * wp,
            stride: cfg.stride,
            width: w_out,
        };
        set.merge(&stride_grid_indices(&joint, cfg.stride_variant));
        set.extend((1..cfg.out_channels / g).map(|j| -((j * g) as i64) * block));
    } else {
        let grid = RowGrid::single(wp, cfg.stride, w_out);
        set.merge(&stride_grid_indices(&grid, cfg.stride_variant));
        set.extend((1..cfg.out_channels).map(|f| -(f as i64) * block));
    }
    Ok(set)
}

pub fn pool_indices(cfg: &PoolConfig, input: Shape) -> Result<KeySet> {
    let (c, w) = (input.channels, input.width);
    let m = (w * w) as i64;
    let mut set = KeySet::new();
    match cfg.kind {
        PoolKind::Average => {
            let w_out = cfg.output_width(w)?;
            set.extend(tap_indices(w, cfg.kernel));
            set.merge(&stride_channel_indices(c, w, cfg.stride, w_out, cfg.stride_variant));
        }
        PoolKind::Global => {
            set.merge(&sum_slots_indices(w * w));
            if c > 1 {
                set.insert(m - 1);
            }
        }
        PoolKind::WholeChannel => {
            cfg.output_width(w)?;
            set.merge(&sum_slots_indices(w * w));
            if c > 1 {
                set.extend([m, -1]);
            }
        }
    }
    Ok(set)
}

pub fn fc_indices(cfg: &FcConfig) -> KeySet {
    let mut set = sum_slots_indices(cfg.inputs);
    let g = merge_group(cfg.outputs, cfg.merge_budget);
    set.extend((1..g).map(|i| -(i as i64)));
    if cfg.outputs > g {
        set.insert(-(g as i64));
    }
    set
}

/// Exact rotation indices a layer uses on an input of shape `input`.
pub fn derive_layer_indices(op: &LayerOp, input: Shape) -> Result<KeySet> {
    match op {
        LayerOp::Conv { config, .. } => conv_indices(config, input),
        LayerOp::Pool(cfg) => pool_indices(cfg, input),
        LayerOp::Fc { config, .. } => Ok(fc_indices(config)),
        LayerOp::Relu { .. } | LayerOp::Bootstrap => Ok(KeySet::new()),
        LayerOp::Residual { body, shortcut } => {
            let mut set = union_keys(body)?;
            set.merge(&union_keys(shortcut)?);
            Ok(set)
        }
    }
}

pub fn node_keys(node: &Node) -> Result<KeySet> {
    derive_layer_indices(&node.op, node.input).map_err(|e| e.in_layer(&node.id))
}

/// Union of every layer's keys.
pub fn union_keys(nodes: &[Node]) -> Result<KeySet> {
    let mut set = KeySet::new();
    for node in nodes {
        set.merge(&node_keys(node)?);
    }
    Ok(set)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Block {
    pub id: usize,
    /// Half-open range of top-level node indices.
    pub start: usize,
    pub end: usize,
    pub keys: KeySet,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockPlan {
    pub blocks: Vec<Block>,
    pub peak_resident: usize,
}

impl BlockPlan {
    /// One block holding `keys` for all `layers` layers.
    pub fn single(keys: KeySet, layers: usize) -> Self {
        let peak_resident = keys.len();
        BlockPlan {
            blocks: vec![Block {
                id: 0,
                start: 0,
                end: layers,
                keys,
            }],
            peak_resident,
        }
    }

    pub fn block_of(&self, layer: usize) -> Option<&Block> {
        self.blocks.iter().find(|b| b.start <= layer && layer < b.end)
    }

    /// Index of the block that starts at `layer`, if any.
    pub fn starts_at(&self, layer: usize) -> Option<&Block> {
        self.blocks.iter().find(|b| b.start == layer && b.start < b.end)
    }

    pub fn union(&self) -> KeySet {
        let mut set = KeySet::new();
        for b in &self.blocks {
            set.merge(&b.keys);
        }
        set
    }
}

/// Splits the top-level nodes into key blocks and computes each block's keys.
pub fn plan_blocks(nodes: &[Node], partition: &Partition) -> Result<BlockPlan> {
    let ranges = match partition {
        Partition::ByDownsampling => {
            let mut starts = vec![0];
            for (i, node) in nodes.iter().enumerate().skip(1) {
                if node.is_downsampling() {
                    // a bootstrap right before the downsampling layer joins its block
                    let mut s = i;
                    while s > 0 && nodes[s - 1].op == LayerOp::Bootstrap && nodes[s - 1].spec_index.is_none() {
                        s -= 1;
                    }
                    if s > *starts.last().expect("non-empty") {
                        starts.push(s);
                    }
                }
            }
            let mut ranges: Vec<(usize, usize)> = starts.windows(2).map(|w| (w[0], w[1])).collect();
            ranges.push((*starts.last().expect("non-empty"), nodes.len()));
            ranges
        }
        Partition::Explicit(spec_ranges) => explicit_ranges(nodes, spec_ranges)?,
    };
    let mut blocks = Vec::with_capacity(ranges.len());
    for (id, (start, end)) in ranges.into_iter().enumerate() {
        blocks.push(Block {
            id,
            start,
            end,
            keys: union_keys(&nodes[start..end])?,
        });
    }
    let peak_resident = blocks.iter().map(|b| b.keys.len()).max().unwrap_or(0);
    Ok(BlockPlan {
        blocks,
        peak_resident,
    })
}

/// Maps spec-index ranges onto node ranges; inserted bootstraps belong to
/// the block of the layer after them.
fn explicit_ranges(nodes: &[Node], spec_ranges: &[[usize; 2]]) -> Result<Vec<(usize, usize)>> {
    let spec_len = nodes.iter().filter_map(|n| n.spec_index).max().map_or(0, |m| m + 1);
    let mut sorted: Vec<[usize; 2]> = spec_ranges.to_vec();
    sorted.sort();
    let mut expected = 0;
    for [s, e] in &sorted {
        if *s != expected || e <= s {
            return Err(Error::InvalidConfig(format!(
                "explicit partition must tile layers 0..{spec_len} without gaps or overlaps, got {spec_ranges:?}"
            )));
        }
        expected = *e;
    }
    if expected != spec_len {
        return Err(Error::InvalidConfig(format!(
            "explicit partition covers layers 0..{expected}, the model has {spec_len}"
        )));
    }
    // node index where each spec layer's block begins (including leading inserted bootstraps)
    let node_start = |spec: usize| -> usize {
        let pos = nodes
            .iter()
            .position(|n| n.spec_index == Some(spec))
            .expect("every spec layer has a node");
        let mut s = pos;
        while s > 0 && nodes[s - 1].spec_index.is_none() {
            s -= 1;
        }
        s
    };
    Ok(sorted
        .iter()
        .map(|[s, e]| {
            let start = if *s == 0 { 0 } else { node_start(*s) };
            let end = if *e == spec_len { nodes.len() } else { node_start(*e) };
            (start, end)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Position of the rotation in the trace.
    pub event: usize,
    /// Top-level layer running at that point, if the trace has layer markers.
    pub layer: Option<usize>,
    pub index: i64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TraceReport {
    pub rotations: usize,
    pub violations: Vec<Violation>,
    /// Planned indices that no rotation used.
    pub unused: Vec<i64>,
}

impl TraceReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that every rotation in `events` had its key resident. Layer
/// markers select the active block; before the first marker block 0 is
/// assumed.
pub fn verify_trace(plan: &BlockPlan, events: &[TraceEvent]) -> TraceReport {
    let mut report = TraceReport::default();
    let mut layer = None;
    let mut used = BTreeSet::new();
    for (pos, event) in events.iter().enumerate() {
        match event {
            TraceEvent::Layer { index, .. } => layer = Some(*index),
            TraceEvent::Rotate { index, .. } if *index != 0 => {
                report.rotations += 1;
                used.insert(*index);
                let block = match layer {
                    Some(l) => plan.block_of(l),
                    None => plan.blocks.first(),
                };
                if !block.is_some_and(|b| b.keys.contains(*index)) {
                    report.violations.push(Violation {
                        event: pos,
                        layer,
                        index: *index,
                    });
                }
            }
            _ => {}
        }
    }
    report.unused = plan.union().iter().filter(|i| !used.contains(i)).collect();
    report
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MemoryModel {
    pub bytes_per_key: u64,
    /// Fixed cost of the context, independent of key count.
    pub context_overhead: u64,
}

impl MemoryModel {
    /// One key per [`DEFAULT_BYTES_PER_KEY`]; overhead of one full-level
    /// ciphertext pair (`2 * N * (L + 1)` 8-byte words).
    pub fn for_context(ctx: &ContextConfig) -> Self {
        MemoryModel {
            bytes_per_key: DEFAULT_BYTES_PER_KEY,
            context_overhead: 2 * ctx.ring_dimension as u64 * (u64::from(ctx.depth_budget) + 1) * 8,
        }
    }

    pub fn with_bytes_per_key(mut self, bytes: u64) -> Self {
        self.bytes_per_key = bytes;
        self
    }
}

pub fn estimate_memory(peak_resident: usize, model: &MemoryModel) -> u64 {
    model.context_overhead + peak_resident as u64 * model.bytes_per_key
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_slots_keys() {
        assert!(sum_slots_indices(1).is_empty());
        assert_eq!(sum_slots_indices(6).indices(), [1, 2, 4].into());
        assert_eq!(sum_slots_indices(256).indices(), (0..8).map(|b| 1 << b).collect());
        assert_eq!(sum_slots_indices(7).indices(), [1, 2, 4, 6].into());
    }

    #[test]
    fn key_bounds_for_padding_and_striding() {
        assert_eq!(pad_indices(Shape::new(3, 8), 1).len(), 3);
        for c in 1..=8 {
            assert!(pad_indices(Shape::new(c, 6), 2).len() <= c + 3);
        }
        for w_out in [2usize, 4, 8, 16] {
            let grid = RowGrid::single(2 * w_out + 1, 2, w_out);
            assert_eq!(
                stride_grid_indices(&grid, StrideVariant::Masked).len(),
                w_out.trailing_zeros() as usize + 1
            );
            assert!(stride_grid_indices(&grid, StrideVariant::Extract).len() <= w_out + 2);
        }
    }

    #[test]
    fn union_accumulates_usage() {
        let a = KeySet::from_indices([1, 2, 3]);
        let mut u = a.clone();
        u.merge(&a);
        assert_eq!(u.indices(), a.indices());
        assert_eq!(u.usage(2), 2);
    }

    #[test]
    fn memory_estimate() {
        let m = MemoryModel {
            bytes_per_key: 1 << 20,
            context_overhead: 7,
        };
        assert_eq!(estimate_memory(0, &m), 7);
        assert_eq!(estimate_memory(10, &m), 7 + 10 * (1 << 20));
    }

    #[test]
    fn fc_merge_keys() {
        let cfg = FcConfig::new(64, 10);
        assert_eq!(fc_indices(&cfg).iter().filter(|&i| i < 0).count(), 9);
        let cfg = cfg.with_merge_budget(2);
        assert_eq!(fc_indices(&cfg).iter().filter(|&i| i < 0).count(), 2);
        let cfg = cfg.with_merge_budget(1);
        assert_eq!(fc_indices(&cfg).iter().filter(|&i| i < 0).collect::<Vec<_>>(), vec![-1]);
    }
}
