use super::common::{rot, select, span, sum_all, sum_slots};
use super::conv::tap_rotations;
use super::stride::stride_channels;
use super::{PoolConfig, PoolKind};
use crate::error::{Error, Result};
use crate::packing::PackedTensor;
use crate::simd::SlotBackend;

pub fn pool(backend: &dyn SlotBackend, x: &PackedTensor, cfg: &PoolConfig) -> Result<PackedTensor> {
    match cfg.kind {
        PoolKind::Average => avg_pool(backend, x, cfg),
        PoolKind::Global => global_avg_pool(backend, x),
        PoolKind::WholeChannel => whole_channel_pool(backend, x, cfg.kernel),
    }
}

/// `k x k` mean pooling with stride `S`: one tap-sum, one scaling
/// multiplication, then striding.
pub fn avg_pool(backend: &dyn SlotBackend, x: &PackedTensor, cfg: &PoolConfig) -> Result<PackedTensor> {
    let (c, w) = (x.channels(), x.width());
    let w_out = cfg.output_width(w)?;
    let n = backend.slot_count();
    let taps = tap_rotations(backend, x.data(), w, cfg.kernel)?;
    let summed = sum_all(backend, &taps)?;
    let scale = 1.0 / (cfg.kernel * cfg.kernel) as f64;
    let scaled = backend.mult_plain(&summed, &span(n, 0, c * w * w, scale))?;
    let out = stride_channels(backend, &scaled, c, w, cfg.stride, w_out, cfg.stride_variant)?;
    PackedTensor::new(out, c, w_out)
}

/// Per-channel means, contiguous in slots `[0, C)`; returned as a `(C, 1)` tensor.
pub fn global_avg_pool(backend: &dyn SlotBackend, x: &PackedTensor) -> Result<PackedTensor> {
    let (c, m) = (x.channels(), x.channel_stride());
    let n = backend.slot_count();
    let sums = sum_slots(backend, x.data(), m)?;
    let scale = 1.0 / m as f64;
    let mut means = Vec::with_capacity(c);
    for ch in 0..c {
        means.push(backend.mult_plain(&sums, &select(n, [ch * m], scale))?);
    }
    // channel ch sits at ch*m and must land at ch
    let mut out = means.pop().expect("at least one channel");
    while let Some(prev) = means.pop() {
        out = rot(backend, &out, (m - 1) as i64)?;
        out = backend.add(&out, &prev)?;
    }
    PackedTensor::new(out, c, 1)
}

/// Pooling whose window covers a whole channel (`k == W`): one value per
/// channel, contiguous in slots `[0, C)`.
pub fn whole_channel_pool(backend: &dyn SlotBackend, x: &PackedTensor, k: usize) -> Result<PackedTensor> {
    let (c, w, m) = (x.channels(), x.width(), x.channel_stride());
    if k != w {
        return Err(Error::InvalidConfig(format!(
            "whole-channel pooling needs kernel == width, got kernel {k} on width {w}"
        )));
    }
    let n = backend.slot_count();
    let scaled = backend.mult_plain(x.data(), &span(n, 0, c * m, 1.0 / (k * k) as f64))?;
    let sums = sum_slots(backend, &scaled, m)?;
    let first = select(n, [0], 1.0);
    let mut cursor = sums;
    let mut firsts = Vec::with_capacity(c);
    for ch in 0..c {
        if ch > 0 {
            cursor = rot(backend, &cursor, m as i64)?;
        }
        firsts.push(backend.mult_plain(&cursor, &first)?);
    }
    let mut out = firsts.pop().expect("at least one channel");
    while let Some(prev) = firsts.pop() {
        out = rot(backend, &out, -1)?;
        out = backend.add(&out, &prev)?;
    }
    PackedTensor::new(out, c, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::StrideVariant;
    use crate::packing::{flatten, Tensor3};
    use crate::simd::{ContextConfig, Simulator};

    fn sim() -> Simulator {
        Simulator::new(ContextConfig::with_slots(256).unwrap()).unwrap()
    }

    #[test]
    fn two_by_two_mean() {
        let s = sim();
        let x = flatten(&s, &Tensor3::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        for variant in [StrideVariant::Extract, StrideVariant::Masked] {
            let cfg = PoolConfig::average(2, 2).with_variant(variant);
            let y = avg_pool(&s, &x, &cfg).unwrap();
            assert_eq!(y.width(), 1);
            assert_eq!(y.data().slots()[0], 2.5);
        }
        assert_eq!(whole_channel_pool(&s, &x, 2).unwrap().data().slots()[0], 2.5);
        assert_eq!(global_avg_pool(&s, &x).unwrap().data().slots()[0], 2.5);
    }

    #[test]
    fn global_means_per_channel() {
        let s = sim();
        let mut vals = vec![1.0; 16];
        vals.extend(vec![3.0; 16]);
        let x = flatten(&s, &Tensor3::new(2, 4, 4, vals).unwrap()).unwrap();
        let y = global_avg_pool(&s, &x).unwrap();
        assert_eq!(&y.data().slots()[..3], &[1.0, 3.0, 0.0]);
        assert_eq!(x.level() - y.level(), 1);
        let z = whole_channel_pool(&s, &x, 4).unwrap();
        assert_eq!(&z.data().slots()[..3], &[1.0, 3.0, 0.0]);
        assert_eq!(x.level() - z.level(), 2);
        assert!(whole_channel_pool(&s, &x, 2).is_err());
    }
}
