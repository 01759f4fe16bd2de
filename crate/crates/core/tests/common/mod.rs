//! Case generators and packed-vs-plaintext checks shared by the property
//! tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeSet;

use hecnn::keyplan::derive_layer_indices;
use hecnn::layers::{
    clenshaw, conv2d, fully_connected, output_width, pad_input, pool, relu_coefficients, secure_relu,
    stride_extract_v1, stride_extract_v2, ConvConfig, ConvMode, FcConfig, PoolConfig, ReluConfig,
    StrideVariant,
};
use hecnn::model::reference::{avg_pool_ref, conv2d_ref, fc_ref, global_avg_pool_ref, pad_ref};
use hecnn::model::{LayerOp, Shape};
use hecnn::packing::{flatten, unflatten, KernelTensor, PackedTensor, Tensor3};
use hecnn::simd::{ContextConfig, SlotBackend, Simulator, Trace, TraceEvent};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const TOL: f64 = 1e-9;
pub const SLOTS: usize = 1024;

pub fn sim(slots: usize) -> Simulator {
    Simulator::new(ContextConfig::with_slots(slots).unwrap()).unwrap()
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn tensor(rng: &mut StdRng, c: usize, w: usize) -> Tensor3 {
    Tensor3::from_fn(c, w, w, |_, _, _| rng.random_range(-1.0..1.0))
}

pub fn kernel(rng: &mut StdRng, f: usize, c: usize, k: usize) -> KernelTensor {
    let n = f * c * k * k;
    KernelTensor::conv(
        f,
        c,
        k,
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        (0..f).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> Result<f64, String> {
    if a.len() != b.len() {
        return Err(format!("length {} vs {}", a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// Packed output must be `want` in its leading slots and zero after.
fn compare_packed(s: &Simulator, got: &PackedTensor, want: &Tensor3) -> Result<f64, String> {
    if (got.channels(), got.width()) != (want.channels(), want.width()) {
        return Err(format!(
            "shape ({}, {}) vs ({}, {})",
            got.channels(),
            got.width(),
            want.channels(),
            want.width()
        ));
    }
    let slots = s.decrypt(got.data());
    let n = want.len();
    let err = max_diff(&slots[..n], want.data())?;
    let tail = slots[n..].iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(err.max(tail))
}

fn check_level(s: &Simulator, out: u32, declared: u32) -> Result<(), String> {
    let budget = s.context().depth_budget;
    if budget - out != declared {
        return Err(format!("consumed {} levels, declared {declared}", budget - out));
    }
    Ok(())
}

/// Rotation indices in `trace` must be exactly the planned set for `op`.
fn check_keys(trace: &Trace, op: &LayerOp, input: Shape) -> Result<(), String> {
    let planned = derive_layer_indices(op, input).map_err(|e| e.to_string())?.indices();
    let used = trace.rotation_indices();
    if planned != used {
        return Err(format!("planned keys {planned:?}, used {used:?}"));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct ConvCase {
    pub width: usize,
    pub channels: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub mode: ConvMode,
    pub variant: StrideVariant,
}

impl ConvCase {
    pub fn config(&self) -> ConvConfig {
        ConvConfig::new(self.channels, self.filters, self.kernel)
            .with_stride(self.stride)
            .with_padding(self.padding)
            .with_mode(self.mode)
            .with_variant(self.variant)
    }

    pub fn is_valid(&self) -> bool {
        self.config().validate().is_ok() && output_width(self.width, self.kernel, self.stride, self.padding).is_ok()
    }
}

/// Draws a valid convolution from W in {4,6,8}, C,F in 1..=4, k in {2,3,5},
/// S in {1,2,3}, P in {0,1,2}.
pub fn random_conv(rng: &mut StdRng) -> ConvCase {
    loop {
        let mode = if rng.random_bool(0.5) {
            ConvMode::Generic
        } else {
            ConvMode::Grouped
        };
        let channels = rng.random_range(1..=4);
        let mut filters = rng.random_range(1..=4);
        if mode == ConvMode::Grouped {
            filters = channels * rng.random_range(1..=(4 / channels).max(1));
        }
        let case = ConvCase {
            width: [4, 6, 8][rng.random_range(0..3)],
            channels,
            filters,
            kernel: [2, 3, 5][rng.random_range(0..3)],
            stride: rng.random_range(1..=3),
            padding: rng.random_range(0..=2),
            mode,
            variant: if rng.random_bool(0.5) {
                StrideVariant::Extract
            } else {
                StrideVariant::Masked
            },
        };
        if case.is_valid() {
            return case;
        }
    }
}

pub fn check_conv(case: &ConvCase, seed: u64) -> Result<f64, String> {
    let mut r = rng(seed);
    let x = tensor(&mut r, case.channels, case.width);
    let k = kernel(&mut r, case.filters, case.channels, case.kernel);
    let s = sim(SLOTS);
    let trace = s.attach_recorder();
    let cfg = case.config();
    let packed = flatten(&s, &x).map_err(|e| e.to_string())?;
    let got = conv2d(&s, &packed, &cfg, &k).map_err(|e| format!("{case:?}: {e}"))?;
    let want = conv2d_ref(&x, &k, case.stride, case.padding).map_err(|e| e.to_string())?;
    check_level(&s, got.level(), cfg.depth(case.width).unwrap()).map_err(|e| format!("{case:?}: {e}"))?;
    let op = LayerOp::Conv {
        config: cfg,
        weights: Default::default(),
    };
    check_keys(&trace, &op, Shape::new(case.channels, case.width)).map_err(|e| format!("{case:?}: {e}"))?;
    compare_packed(&s, &got, &want)
}

/// Special 3x3 mode against the padded generic convolution and the plaintext reference.
pub fn check_special(width: usize, channels: usize, filters: usize, seed: u64) -> Result<f64, String> {
    let mut r = rng(seed);
    let x = tensor(&mut r, channels, width);
    let k = kernel(&mut r, filters, channels, 3);
    let s = sim(SLOTS);
    let packed = flatten(&s, &x).map_err(|e| e.to_string())?;
    let base = ConvConfig::new(channels, filters, 3).with_padding(1);
    let special = conv2d(&s, &packed, &base.with_mode(ConvMode::Special3x3), &k).map_err(|e| e.to_string())?;
    let generic = conv2d(&s, &packed, &base, &k).map_err(|e| e.to_string())?;
    check_level(&s, special.level(), 2)?;
    let a = s.decrypt(special.data());
    let b = s.decrypt(generic.data());
    let want = conv2d_ref(&x, &k, 1, 1).map_err(|e| e.to_string())?;
    Ok(max_diff(&a, &b)?.max(compare_packed(&s, &special, &want)?))
}

pub fn check_pad(width: usize, channels: usize, padding: usize, seed: u64) -> Result<(f64, usize), String> {
    let mut r = rng(seed);
    let x = tensor(&mut r, channels, width);
    let s = sim(SLOTS);
    let trace = s.attach_recorder();
    let packed = flatten(&s, &x).map_err(|e| e.to_string())?;
    let got = pad_input(&s, &packed, padding).map_err(|e| e.to_string())?;
    check_level(&s, got.level(), u32::from(padding > 0))?;
    let err = compare_packed(&s, &got, &pad_ref(&x, padding))?;
    Ok((err, trace.rotation_indices().len()))
}

/// Both stride variants against direct subsampling of a `W x W` block;
/// returns the error and the distinct index counts `(v1, v2)`.
pub fn check_stride(
    width: usize,
    stride: usize,
    out_width: usize,
    seed: u64,
) -> Result<(f64, usize, usize), String> {
    let mut r = rng(seed);
    let x: Vec<f64> = (0..width * width).map(|_| r.random_range(-1.0..1.0)).collect();
    let want: Vec<f64> = (0..out_width)
        .flat_map(|i| (0..out_width).map(move |j| (i, j)))
        .map(|(i, j)| x[i * stride * width + j * stride])
        .collect();
    let slots = (width * width).next_power_of_two().max(16);
    let mut errs = 0.0_f64;
    let mut counts = [0; 2];
    for (n, f) in [stride_extract_v1, stride_extract_v2].into_iter().enumerate() {
        let s = sim(slots);
        let trace = s.attach_recorder();
        let v = s.encrypt(&x).map_err(|e| e.to_string())?;
        let out = f(&s, &v, width, stride, out_width).map_err(|e| e.to_string())?;
        let got = s.decrypt(&out);
        let m = want.len();
        errs = errs.max(max_diff(&got[..m], &want)?);
        errs = errs.max(got[m..].iter().map(|v| v.abs()).fold(0.0, f64::max));
        counts[n] = trace.rotation_indices().len();
    }
    Ok((errs, counts[0], counts[1]))
}

#[derive(Clone, Copy, Debug)]
pub struct PoolCase {
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub variant: StrideVariant,
}

pub fn random_pool(rng: &mut StdRng) -> PoolCase {
    loop {
        let case = PoolCase {
            width: [4, 6, 8][rng.random_range(0..3)],
            channels: rng.random_range(1..=4),
            kernel: [2, 3, 5][rng.random_range(0..3)],
            stride: rng.random_range(1..=3),
            variant: if rng.random_bool(0.5) {
                StrideVariant::Extract
            } else {
                StrideVariant::Masked
            },
        };
        if output_width(case.width, case.kernel, case.stride, 0).is_ok() {
            return case;
        }
    }
}

pub fn check_avg_pool(case: &PoolCase, seed: u64) -> Result<f64, String> {
    let mut r = rng(seed);
    let x = tensor(&mut r, case.channels, case.width);
    let s = sim(SLOTS);
    let trace = s.attach_recorder();
    let cfg = PoolConfig::average(case.kernel, case.stride).with_variant(case.variant);
    let packed = flatten(&s, &x).map_err(|e| e.to_string())?;
    let got = pool(&s, &packed, &cfg).map_err(|e| format!("{case:?}: {e}"))?;
    check_level(&s, got.level(), cfg.depth(case.width).unwrap()).map_err(|e| format!("{case:?}: {e}"))?;
    check_keys(&trace, &LayerOp::Pool(cfg), Shape::new(case.channels, case.width))
        .map_err(|e| format!("{case:?}: {e}"))?;
    let want = avg_pool_ref(&x, case.kernel, case.stride).map_err(|e| e.to_string())?;
    compare_packed(&s, &got, &want)
}

/// Global pooling and the whole-channel window, both against per-channel means.
pub fn check_global_pools(width: usize, channels: usize, seed: u64) -> Result<f64, String> {
    let mut r = rng(seed);
    let x = tensor(&mut r, channels, width);
    let want = global_avg_pool_ref(&x);
    let mut err = 0.0_f64;
    for cfg in [PoolConfig::global(), PoolConfig::whole_channel(width)] {
        let s = sim(SLOTS);
        let trace = s.attach_recorder();
        let packed = flatten(&s, &x).map_err(|e| e.to_string())?;
        let got = pool(&s, &packed, &cfg).map_err(|e| e.to_string())?;
        check_level(&s, got.level(), cfg.depth(width).unwrap())?;
        check_keys(&trace, &LayerOp::Pool(cfg), Shape::new(channels, width))?;
        err = err.max(compare_packed(&s, &got, &want)?);
    }
    Ok(err)
}

pub fn check_fc(inputs: usize, outputs: usize, budget: usize, seed: u64) -> Result<f64, String> {
    let mut r = rng(seed);
    let x: Vec<f64> = (0..inputs).map(|_| r.random_range(-1.0..1.0)).collect();
    let w = KernelTensor::dense(
        outputs,
        inputs,
        (0..inputs * outputs).map(|_| r.random_range(-1.0..1.0)).collect(),
        (0..outputs).map(|_| r.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let s = sim(SLOTS);
    let trace = s.attach_recorder();
    let cfg = FcConfig::new(inputs, outputs).with_merge_budget(budget);
    let v = s.encrypt(&x).map_err(|e| e.to_string())?;
    let out = fully_connected(&s, &v, &cfg, &w).map_err(|e| e.to_string())?;
    check_level(&s, out.level(), cfg.depth())?;
    let op = LayerOp::Fc {
        config: cfg,
        weights: Default::default(),
    };
    // dense layers see a flat (n, 1) input
    check_keys(&trace, &op, Shape::new(inputs, 1))?;
    let got = s.decrypt(&out);
    let want = fc_ref(&x, &w).map_err(|e| e.to_string())?;
    let err = max_diff(&got[..outputs], &want)?;
    Ok(err.max(got[outputs..].iter().map(|v| v.abs()).fold(0.0, f64::max)))
}

/// Packed polynomial ReLU against the scalar evaluation of the same series.
pub fn check_relu(elements: usize, beta: f64, degree: usize, seed: u64) -> Result<f64, String> {
    let mut r = rng(seed);
    let x: Vec<f64> = (0..elements).map(|_| r.random_range(-beta..beta)).collect();
    let s = sim(SLOTS);
    let cfg = ReluConfig::new(beta, elements).with_degree(degree);
    let v = s.encrypt(&x).map_err(|e| e.to_string())?;
    let out = secure_relu(&s, &v, &cfg).map_err(|e| e.to_string())?;
    check_level(&s, out.level(), cfg.depth())?;
    let coeffs = relu_coefficients(beta, degree);
    let scale = if beta > 1.0 { beta } else { 1.0 };
    let want: Vec<f64> = x.iter().map(|&xi| clenshaw(&coeffs, xi / scale)).collect();
    let got = s.decrypt(&out);
    let err = max_diff(&got[..elements], &want)?;
    Ok(err.max(got[elements..].iter().map(|v| v.abs()).fold(0.0, f64::max)))
}

pub fn check_flatten(width: usize, channels: usize, seed: u64) -> Result<f64, String> {
    let mut r = rng(seed);
    let x = tensor(&mut r, channels, width);
    let s = sim(SLOTS);
    let packed = flatten(&s, &x).map_err(|e| e.to_string())?;
    let back = unflatten(&s, &packed);
    max_diff(back.data(), x.data())
}

/// Distinct non-zero rotation indices in a trace.
pub fn distinct_rotations(events: &[TraceEvent]) -> BTreeSet<i64> {
    events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Rotate { index, .. } if *index != 0 => Some(*index),
            _ => None,
        })
        .collect()
}
