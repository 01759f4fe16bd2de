use super::common::{accumulate_blocks, rot, select, sum_all};
use super::pad::pad_input;
use super::special::conv_special_3x3;
use super::stride::{stride_grid, RowGrid};
use super::{ConvConfig, ConvMode};
use crate::error::{Error, Result};
use crate::packing::{extraction_mask, repeated_kernel_vector, KernelTensor, PackedTensor};
use crate::simd::{SlotBackend, SlotVector};

/// Convolution dispatcher: padding, the configured mode and striding.
pub fn conv2d(
    backend: &dyn SlotBackend,
    x: &PackedTensor,
    cfg: &ConvConfig,
    kernel: &KernelTensor,
) -> Result<PackedTensor> {
    check_kernel(x, cfg, kernel)?;
    match cfg.mode {
        ConvMode::Special3x3 => conv_special_3x3(backend, x, cfg, kernel),
        ConvMode::Grouped if cfg.in_channels > 1 => grouped(backend, x, cfg, kernel),
        _ => per_channel(backend, x, cfg, kernel),
    }
}

/// Stride-1, unpadded convolution.
pub fn conv_generic(
    backend: &dyn SlotBackend,
    x: &PackedTensor,
    kernel: &KernelTensor,
) -> Result<PackedTensor> {
    let (f, c, k) = kernel.conv_dims()?;
    conv2d(backend, x, &ConvConfig::new(c, f, k), kernel)
}

/// Strided convolution that strides `g = C` output channels per pass.
pub fn conv_grouped_stride(
    backend: &dyn SlotBackend,
    x: &PackedTensor,
    cfg: &ConvConfig,
    kernel: &KernelTensor,
) -> Result<PackedTensor> {
    let cfg = ConvConfig {
        mode: ConvMode::Grouped,
        ..*cfg
    };
    conv2d(backend, x, &cfg, kernel)
}

fn check_kernel(x: &PackedTensor, cfg: &ConvConfig, kernel: &KernelTensor) -> Result<()> {
    cfg.validate()?;
    let (f, c, k) = kernel.conv_dims()?;
    if (f, c, k) != (cfg.out_channels, cfg.in_channels, cfg.kernel) {
        return Err(Error::Shape(format!(
            "kernel ({f}, {c}, {k}, {k}) does not match config ({}, {}, {k2}, {k2})",
            cfg.out_channels,
            cfg.in_channels,
            k2 = cfg.kernel
        )));
    }
    if x.channels() != cfg.in_channels {
        return Err(Error::Shape(format!(
            "input has {} channels, layer expects {}",
            x.channels(),
            cfg.in_channels
        )));
    }
    Ok(())
}

/// Rotations of `x` by `i*W + j` for every kernel tap, row-major; tap
/// `(0, 0)` is `x` itself.
pub(crate) fn tap_rotations(
    backend: &dyn SlotBackend,
    x: &SlotVector,
    width: usize,
    k: usize,
) -> Result<Vec<SlotVector>> {
    let mut taps = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            taps.push(rot(backend, x, (i * width + j) as i64)?);
        }
    }
    Ok(taps)
}

/// Sum over taps of `r_ij * kv(f, i, j)`, accumulated across input channel
/// blocks into block 0.
fn channel_sum(
    backend: &dyn SlotBackend,
    taps: &[SlotVector],
    kernel: &KernelTensor,
    f: usize,
    channels: usize,
    width: usize,
) -> Result<SlotVector> {
    let (_, _, k) = kernel.conv_dims()?;
    let n = backend.slot_count();
    let mut products = Vec::with_capacity(taps.len());
    for (t, r) in taps.iter().enumerate() {
        let kv = repeated_kernel_vector(kernel, f, (t / k, t % k), channels, width, n)?;
        products.push(backend.mult_plain(r, &kv)?);
    }
    let a = sum_all(backend, &products)?;
    accumulate_blocks(backend, &a, width * width, channels)
}

pub(crate) fn add_bias(
    backend: &dyn SlotBackend,
    v: &SlotVector,
    bias: &[f64],
    block: usize,
) -> Result<SlotVector> {
    let mut slots = vec![0.0; backend.slot_count()];
    for (f, &b) in bias.iter().enumerate() {
        slots[f * block..(f + 1) * block].fill(b);
    }
    backend.add_plain(v, &backend.encode(&slots)?)
}

fn check_output(backend: &dyn SlotBackend, channels: usize, width: usize) -> Result<()> {
    let needed = channels * width * width;
    if needed > backend.slot_count() {
        return Err(Error::CapacityExceeded {
            needed,
            available: backend.slot_count(),
        });
    }
    Ok(())
}

fn padded(backend: &dyn SlotBackend, x: &PackedTensor, padding: usize) -> Result<PackedTensor> {
    if padding == 0 {
        Ok(x.clone())
    } else {
        pad_input(backend, x, padding)
    }
}

fn per_channel(
    backend: &dyn SlotBackend,
    x: &PackedTensor,
    cfg: &ConvConfig,
    kernel: &KernelTensor,
) -> Result<PackedTensor> {
    let w_out = cfg.output_width(x.width())?;
    check_output(backend, cfg.out_channels, w_out)?;
    let xp = padded(backend, x, cfg.padding)?;
    let (c, wp) = (xp.channels(), xp.width());
    let n = backend.slot_count();
    let taps = tap_rotations(backend, xp.data(), wp, cfg.kernel)?;
    let extract = extraction_mask(wp, c).to_plain(n);
    let grid = RowGrid::single(wp, cfg.stride, w_out);
    let block = (w_out * w_out) as i64;

    let mut placed = Vec::with_capacity(cfg.out_channels);
    for f in 0..cfg.out_channels {
        let a = channel_sum(backend, &taps, kernel, f, c, wp)?;
        let a_star = backend.mult_plain(&a, &extract)?;
        let y = stride_grid(backend, &a_star, &grid, cfg.stride_variant, false)?;
        placed.push(rot(backend, &y, -(f as i64) * block)?);
    }
    let out = sum_all(backend, &placed)?;
    let out = add_bias(backend, &out, kernel.bias(), w_out * w_out)?;
    PackedTensor::new(out, cfg.out_channels, w_out)
}

fn grouped(
    backend: &dyn SlotBackend,
    x: &PackedTensor,
    cfg: &ConvConfig,
    kernel: &KernelTensor,
) -> Result<PackedTensor> {
    let w_out = cfg.output_width(x.width())?;
    check_output(backend, cfg.out_channels, w_out)?;
    let g = cfg.in_channels;
    let xp = padded(backend, x, cfg.padding)?;
    let wp = xp.width();
    let n = backend.slot_count();
    let s = cfg.stride;
    let span_d = w_out * s * wp;
    if g * span_d > n {
        return Err(Error::CapacityExceeded {
            needed: g * span_d,
            available: n,
        });
    }
    let taps = tap_rotations(backend, xp.data(), wp, cfg.kernel)?;
    let single = RowGrid::single(wp, s, w_out);
    let grid_mask = select(n, single.positions(), 1.0);
    let joint = RowGrid {
        rows: g * w_out,
        pitch: s * wp,
        stride: s,
        width: w_out,
    };

    let mut placed = Vec::with_capacity(cfg.out_channels / g);
    for j in 0..cfg.out_channels / g {
        let mut members = Vec::with_capacity(g);
        for i in 0..g {
            let a = channel_sum(backend, &taps, kernel, j * g + i, g, wp)?;
            members.push(backend.mult_plain(&a, &grid_mask)?);
        }
        let mut concat = members.pop().expect("group is non-empty");
        while let Some(prev) = members.pop() {
            concat = rot(backend, &concat, -(span_d as i64))?;
            concat = backend.add(&concat, &prev)?;
        }
        let z = stride_grid(backend, &concat, &joint, cfg.stride_variant, true)?;
        placed.push(rot(backend, &z, -((j * g * w_out * w_out) as i64))?);
    }
    let out = sum_all(backend, &placed)?;
    let out = add_bias(backend, &out, kernel.bias(), w_out * w_out)?;
    PackedTensor::new(out, cfg.out_channels, w_out)
}
