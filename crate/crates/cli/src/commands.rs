use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use hecnn::keyplan::{estimate_memory, node_keys, plan_blocks, union_keys, BlockPlan, KeySet, MemoryModel};
use hecnn::layers::{secure_relu, ReluConfig};
use hecnn::model::architectures::{self, random_weights};
use hecnn::model::{
    calibrate, count_bootstraps, export_weights_csv, place_bootstraps, resolve, Inference, KeyMode,
    LayerOp, LedgerEntry, Model, ModelSpec, Node, WeightMode, WeightProvider, CALIBRATION_FACTOR,
};
use hecnn::packing::{build_all_masks, build_mask, MaskVector};
use hecnn::simd::{ContextConfig, NoiseModel, Simulator, SlotBackend};
use serde::Serialize;

use crate::{load, InferArgs, KeyplanArgs, MaskMode, MasksArgs, PresetsArgs, ReluProfileArgs};

/// Bad or missing arguments that clap cannot catch on its own.
#[derive(Debug)]
pub struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

fn emit_json(out: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(out, &text)
}

#[derive(Serialize)]
struct RunRecord {
    index: usize,
    logits: Vec<f64>,
    reference: Vec<f64>,
    deltas: Vec<f64>,
    max_delta: f64,
    argmax: Option<usize>,
    reference_argmax: Option<usize>,
    agree: bool,
}

#[derive(Serialize)]
struct LevelSummary {
    entry_level: u32,
    exit_level: u32,
    lowest_level: u32,
    bootstraps: usize,
}

#[derive(Serialize)]
struct RunReport {
    model: String,
    context: ContextConfig,
    key_mode: KeyMode,
    weight_mode: WeightMode,
    noise_sigma: f64,
    seed: u64,
    calibrated: bool,
    runs: Vec<RunRecord>,
    all_agree: bool,
    max_delta: f64,
    wall_time_s: f64,
    total_keys: usize,
    peak_resident_keys: usize,
    key_blocks: usize,
    levels: LevelSummary,
    ledger: Vec<LedgerEntry>,
}

fn argmax(v: &[f64]) -> Option<usize> {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
}

pub fn infer(args: InferArgs) -> Result<()> {
    if args.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let start = Instant::now();
    let (mut spec, source) = load::spec(&args.model)?;
    let provider = load::weights(&spec, &source, args.model.seed)?;
    let inputs = load::inputs(&args.input, &spec)?;

    let calibrated = load::needs_calibration(&spec.layers);
    if calibrated {
        spec = calibrate(&spec, provider.as_ref(), &inputs, CALIBRATION_FACTOR)?;
    }
    spec.key_mode = match args.keys {
        Some(k) => k.into(),
        None if spec.has_residual_blocks() => KeyMode::Block,
        None => spec.key_mode,
    };
    if let Some(w) = args.weights {
        spec.weight_mode = w.into();
    }
    let model = Model::build(spec, provider)?;
    let ctx = model.context().clone();

    let run = |i: usize| -> Result<(Inference, Vec<f64>)> {
        let sim = Simulator::new(ctx.clone())?
            .with_noise(NoiseModel {
                sigma: args.noise_sigma,
                seed: args.model.seed.wrapping_add(i as u64),
            })?
            .enforce_keys();
        let inference = model.infer(&sim, &inputs[i])?;
        let reference = model.reference(&inputs[i])?;
        Ok((inference, reference))
    };
    let results = run_ordered(inputs.len(), args.jobs, &run)?;

    let mut runs = Vec::with_capacity(results.len());
    for (index, (inference, reference)) in results.iter().enumerate() {
        let deltas: Vec<f64> = inference
            .logits
            .iter()
            .zip(reference)
            .map(|(a, b)| (a - b).abs())
            .collect();
        let (a, b) = (argmax(&inference.logits), argmax(reference));
        runs.push(RunRecord {
            index,
            logits: inference.logits.clone(),
            reference: reference.clone(),
            max_delta: deltas.iter().copied().fold(0.0, f64::max),
            deltas,
            argmax: a,
            reference_argmax: b,
            agree: a == b,
        });
    }
    let ledger = results[0].0.ledger.clone();
    let levels = LevelSummary {
        entry_level: ledger.first().map_or(ctx.depth_budget, |e| e.level_in),
        exit_level: ledger.last().map_or(ctx.depth_budget, |e| e.level_out),
        lowest_level: ledger.iter().map(|e| e.level_out).min().unwrap_or(ctx.depth_budget),
        bootstraps: results[0].0.bootstraps,
    };
    let report = RunReport {
        model: model.spec().name.clone(),
        context: ctx,
        key_mode: model.key_mode(),
        weight_mode: model.weight_mode(),
        noise_sigma: args.noise_sigma,
        seed: args.model.seed,
        calibrated,
        all_agree: runs.iter().all(|r| r.agree),
        max_delta: runs.iter().map(|r| r.max_delta).fold(0.0, f64::max),
        runs,
        wall_time_s: start.elapsed().as_secs_f64(),
        total_keys: model.keys().len(),
        peak_resident_keys: match model.key_mode() {
            KeyMode::Preload => model.keys().len(),
            KeyMode::Block => model.block_plan().peak_resident,
        },
        key_blocks: model.block_plan().blocks.len(),
        levels,
        ledger,
    };
    emit_json(args.out.as_deref(), &report)
}

/// Runs `f(0..n)` on up to `jobs` threads and returns results in index order.
fn run_ordered<T: Send>(n: usize, jobs: usize, f: &(dyn Fn(usize) -> Result<T> + Sync)) -> Result<Vec<T>> {
    if jobs <= 1 {
        return (0..n).map(f).collect();
    }
    let mut slots: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    let per = n.div_ceil(jobs);
    std::thread::scope(|scope| {
        for (chunk_index, chunk) in slots.chunks_mut(per).enumerate() {
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(f(chunk_index * per + k));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every input was evaluated"))
        .collect()
}

#[derive(Serialize)]
struct LayerKeys {
    index: usize,
    id: String,
    kind: &'static str,
    level_in: u32,
    level_out: u32,
    count: usize,
    indices: Vec<i64>,
    /// `k^2 - 1 + F` for convolutions.
    #[serde(skip_serializing_if = "Option::is_none")]
    conv_reference: Option<usize>,
    /// `C + 3` for padded convolutions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pad_bound: Option<usize>,
}

#[derive(Serialize)]
struct BlockKeys {
    id: usize,
    start: usize,
    end: usize,
    count: usize,
    indices: Vec<i64>,
}

#[derive(Serialize)]
struct MemoryReport {
    bytes_per_key: u64,
    context_overhead: u64,
    preload_bytes: u64,
    block_bytes: u64,
}

#[derive(Serialize)]
struct KeyplanReport {
    model: String,
    slot_count: usize,
    depth_budget: u32,
    layers: Vec<LayerKeys>,
    union_count: usize,
    union: Vec<i64>,
    /// Bootstrapping keys are counted as one opaque entry when any bootstrap is planned.
    bootstrap_keys: usize,
    bootstraps: usize,
    blocks: Vec<BlockKeys>,
    peak_resident: usize,
    preload_total: usize,
    memory: MemoryReport,
}

fn sorted(keys: &KeySet) -> Vec<i64> {
    keys.iter().collect()
}

pub fn keyplan(args: KeyplanArgs) -> Result<()> {
    let (spec, _) = load::spec(&args.model)?;
    let report = keyplan_report(&spec, args.bytes_per_key)?;
    emit_json(args.out.as_deref(), &report)
}

fn keyplan_report(spec: &ModelSpec, bytes_per_key: u64) -> Result<KeyplanReport> {
    let ctx = spec.context.resolve()?;
    let nodes = resolve(spec, ctx.slot_count)?;
    let nodes = place_bootstraps(nodes, spec.bootstrap_policy, ctx.depth_budget)?;
    let union = union_keys(&nodes)?;
    union.check_range(ctx.slot_count)?;
    let plan: BlockPlan = if nodes.is_empty() {
        BlockPlan { blocks: Vec::new(), peak_resident: 0 }
    } else {
        plan_blocks(&nodes, &spec.partition)?
    };
    let layers = nodes
        .iter()
        .enumerate()
        .map(|(index, node)| layer_keys(index, node))
        .collect::<Result<Vec<_>>>()?;
    let bootstraps = count_bootstraps(&nodes);
    let memory = MemoryModel::for_context(&ctx).with_bytes_per_key(bytes_per_key);
    Ok(KeyplanReport {
        model: spec.name.clone(),
        slot_count: ctx.slot_count,
        depth_budget: ctx.depth_budget,
        layers,
        union_count: union.len(),
        union: sorted(&union),
        bootstrap_keys: usize::from(bootstraps > 0),
        bootstraps,
        blocks: plan
            .blocks
            .iter()
            .map(|b| BlockKeys {
                id: b.id,
                start: b.start,
                end: b.end,
                count: b.keys.len(),
                indices: sorted(&b.keys),
            })
            .collect(),
        peak_resident: plan.peak_resident,
        preload_total: union.len(),
        memory: MemoryReport {
            bytes_per_key,
            context_overhead: memory.context_overhead,
            preload_bytes: estimate_memory(union.len(), &memory),
            block_bytes: estimate_memory(plan.peak_resident, &memory),
        },
    })
}

fn layer_keys(index: usize, node: &Node) -> Result<LayerKeys> {
    let keys = node_keys(node)?;
    let (conv_reference, pad_bound) = match &node.op {
        LayerOp::Conv { config, .. } => (
            Some(config.kernel * config.kernel - 1 + config.out_channels),
            (config.padding > 0).then_some(config.in_channels + 3),
        ),
        _ => (None, None),
    };
    Ok(LayerKeys {
        index,
        id: node.id.clone(),
        kind: node.op.kind(),
        level_in: node.level_in,
        level_out: node.level_out,
        count: keys.len(),
        indices: sorted(&keys),
        conv_reference,
        pad_bound,
    })
}

fn mask_row(mask: &MaskVector) -> String {
    let cells: Vec<&str> = mask.values().iter().map(|&v| if v != 0.0 { "1" } else { "0" }).collect();
    cells.join(",")
}

pub fn masks(args: MasksArgs) -> Result<()> {
    if args.channels == 0 {
        return Err(usage("--channels must be at least 1"));
    }
    let rows: Vec<MaskVector> = match args.mode {
        MaskMode::Special => {
            let w = args.width.ok_or_else(|| usage("--mode special needs --width"))?;
            if w < 2 {
                return Err(usage(format!("--width must be at least 2, got {w}")));
            }
            build_all_masks(w * w, args.channels, w).into()
        }
        MaskMode::Single => {
            let (Some(sp), Some(ep), Some(w)) = (args.sp, args.ep, args.w) else {
                return Err(usage("--mode single needs --sp, --ep and --w"));
            };
            let m = args.m.unwrap_or(w * w);
            if w == 0 || m == 0 {
                return Err(usage("--w and --m must be positive"));
            }
            if sp > m || ep > m {
                return Err(usage(format!("--sp {sp} and --ep {ep} must not exceed m = {m}")));
            }
            vec![build_mask(sp, ep, w, m, args.channels)]
        }
    };
    let mut text = String::new();
    for mask in &rows {
        text.push_str(&mask_row(mask));
        text.push('\n');
    }
    emit(args.out.as_deref(), &text)
}

const PROFILE_SLOTS: usize = 4096;

pub fn relu_profile(args: ReluProfileArgs) -> Result<()> {
    let beta = args.beta;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(usage(format!("--beta must be positive, got {beta}")));
    }
    if args.points == 0 {
        return Err(usage("--points must be at least 1"));
    }
    if args.degrees.is_empty() || args.degrees.contains(&0) {
        return Err(usage("--degrees must list positive degrees"));
    }
    let lo = args.lo.unwrap_or(-beta);
    let hi = args.hi.unwrap_or(beta);
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(usage(format!("grid [{lo}, {hi}] is not a finite interval")));
    }
    let n = args.points;
    let grid: Vec<f64> = (0..n)
        .map(|i| if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect();
    let band = args.exclude * beta;
    let sim = Simulator::new(ContextConfig::with_slots(PROFILE_SLOTS)?)?;

    let mut text = String::from("degree,max_abs_error,mean_abs_error,max_outside\n");
    for &degree in &args.degrees {
        let (mut max, mut sum, mut outside) = (0.0f64, 0.0f64, 0.0f64);
        for chunk in grid.chunks(PROFILE_SLOTS) {
            let x = sim.encrypt(chunk)?;
            let cfg = ReluConfig::new(beta, chunk.len()).with_degree(degree);
            let y = secure_relu(&sim, &x, &cfg).with_context(|| format!("degree {degree}"))?;
            for (xi, yi) in chunk.iter().zip(y.slots()) {
                let err = (yi - xi.max(0.0)).abs();
                max = max.max(err);
                sum += err;
                if xi.abs() >= band {
                    outside = outside.max(err);
                }
            }
        }
        text.push_str(&format!("{degree},{max:.6e},{:.6e},{outside:.6e}\n", sum / n as f64));
    }
    emit(args.out.as_deref(), &text)
}

#[derive(Serialize)]
struct PresetList {
    contexts: Vec<(String, ContextConfig)>,
    models: Vec<ModelSummary>,
}

#[derive(Serialize)]
struct ModelSummary {
    name: String,
    context: String,
    input_channels: usize,
    input_width: usize,
    layers: usize,
}

pub fn presets(args: PresetsArgs) -> Result<()> {
    let Some(name) = args.spec else {
        let list = PresetList {
            contexts: ContextConfig::preset_names()
                .iter()
                .map(|n| Ok((n.to_string(), ContextConfig::preset(n)?)))
                .collect::<Result<_>>()?,
            models: architectures::names()
                .iter()
                .filter_map(|n| architectures::by_name(n))
                .map(|s| ModelSummary {
                    context: serde_json::to_value(&s.context)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_else(|| "custom".into()),
                    input_channels: s.input.channels,
                    input_width: s.input.width,
                    layers: s.layers.len(),
                    name: s.name,
                })
                .collect(),
        };
        return emit_json(None, &list);
    };
    let mut spec = architectures::by_name(&name).ok_or_else(|| {
        usage(format!(
            "unknown model {name:?} (built-ins: {})",
            architectures::names().join(", ")
        ))
    })?;
    match args.write {
        None => emit(None, &format!("{}\n", spec.to_json())),
        Some(dir) => write_preset(&mut spec, &dir, args.seed),
    }
}

fn write_preset(spec: &mut ModelSpec, dir: &PathBuf, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let weights = random_weights(spec, seed)?;
    spec.default_weight_files();
    let ctx = spec.context.resolve()?;
    let nodes = resolve(spec, ctx.slot_count)?;
    let mut written = 0;
    let mut export = |node: &Node| -> Result<()> {
        if let (Some(shape), Some(refs)) = (node.op.kernel_shape(), node.op.weight_ref()) {
            let kernel = weights.load(&node.id, refs, shape)?;
            let w = dir.join(refs.weights.as_deref().unwrap_or_default());
            let b = match &refs.bias {
                Some(b) => dir.join(b),
                None => hecnn::model::default_bias_path(&w),
            };
            export_weights_csv(&kernel, &w, &b)?;
            written += 1;
        }
        Ok(())
    };
    visit(&nodes, &mut export)?;
    let path = dir.join("model.json");
    std::fs::write(&path, spec.to_json()).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {} and {written} weight tensors", path.display());
    Ok(())
}

fn visit(nodes: &[Node], f: &mut dyn FnMut(&Node) -> Result<()>) -> Result<()> {
    for node in nodes {
        f(node)?;
        if let LayerOp::Residual { body, shortcut } = &node.op {
            visit(body, f)?;
            visit(shortcut, f)?;
        }
    }
    Ok(())
}
