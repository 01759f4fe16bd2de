use super::common::{accumulate_blocks, rot, sum_all};
use super::conv::add_bias;
use super::{ConvConfig, ConvMode};
use crate::error::{Error, Result};
use crate::packing::{build_all_masks, extraction_mask, repeated_kernel_vector, KernelTensor, PackedTensor};
use crate::simd::{SlotBackend, SlotVector};

/// The nine rotated copies `r0..r8` of a `W`-wide packed input, tap order
/// `(di, dj)` = `(-1,-1), (-1,0), ..., (1,1)`.
pub fn special_rotations(
    backend: &dyn SlotBackend,
    x: &SlotVector,
    width: usize,
) -> Result<[SlotVector; 9]> {
    let w = width as i64;
    let r4 = x.clone();
    let r1 = rot(backend, &r4, -w)?;
    let r7 = rot(backend, &r4, w)?;
    let r3 = rot(backend, &r4, -1)?;
    let r5 = rot(backend, &r4, 1)?;
    let r0 = rot(backend, &r1, -1)?;
    let r2 = rot(backend, &r1, 1)?;
    let r6 = rot(backend, &r7, -1)?;
    let r8 = rot(backend, &r7, 1)?;
    Ok([r0, r1, r2, r3, r4, r5, r6, r7, r8])
}

/// Same-shape 3x3 convolution (stride 1, padding 1) without padding the
/// input: boundary taps are zeroed by folding the tap masks into the kernel
/// vectors, so the layer costs two levels.
pub fn conv_special_3x3(
    backend: &dyn SlotBackend,
    x: &PackedTensor,
    cfg: &ConvConfig,
    kernel: &KernelTensor,
) -> Result<PackedTensor> {
    if cfg.mode != ConvMode::Special3x3 || (cfg.kernel, cfg.stride, cfg.padding) != (3, 1, 1) {
        return Err(Error::InvalidConfig(format!(
            "special convolution needs mode special3x3 with k=3, S=1, P=1, got {cfg:?}"
        )));
    }
    let (f_count, c, _) = kernel.conv_dims()?;
    let w = x.width();
    let m = w * w;
    let n = backend.slot_count();
    if f_count * m > n || c * m > n {
        return Err(Error::CapacityExceeded {
            needed: f_count.max(c) * m,
            available: n,
        });
    }
    let r = special_rotations(backend, x.data(), w)?;
    let masks = build_all_masks(m, c, w).map(|mask| mask.to_plain(n));
    let extract = extraction_mask(w, c).to_plain(n);

    let mut placed = Vec::with_capacity(f_count);
    for f in 0..f_count {
        let mut products = Vec::with_capacity(9);
        for t in 0..9 {
            let kv = repeated_kernel_vector(kernel, f, (t / 3, t % 3), c, w, n)?;
            products.push(backend.mult_plain(&r[t], &kv.hadamard(&masks[t]))?);
        }
        let a = accumulate_blocks(backend, &sum_all(backend, &products)?, m, c)?;
        let a_star = backend.mult_plain(&a, &extract)?;
        placed.push(rot(backend, &a_star, -((f * m) as i64))?);
    }
    let out = add_bias(backend, &sum_all(backend, &placed)?, kernel.bias(), m)?;
    PackedTensor::new(out, f_count, w)
}
