use crate::error::Result;
use crate::packing::plain;
use crate::simd::{PlainVector, SlotBackend, SlotVector};

/// Rotation that skips the backend entirely for index 0.
pub(crate) fn rot(backend: &dyn SlotBackend, v: &SlotVector, index: i64) -> Result<SlotVector> {
    if index == 0 {
        Ok(v.clone())
    } else {
        backend.rotate(v, index)
    }
}

/// Plaintext holding `value` at each of `positions` and zero elsewhere.
pub(crate) fn select(
    slot_count: usize,
    positions: impl IntoIterator<Item = usize>,
    value: f64,
) -> PlainVector {
    let mut slots = vec![0.0; slot_count];
    for p in positions {
        slots[p] = value;
    }
    plain(slots, slot_count)
}

/// Plaintext holding `value` on `[start, end)`.
pub(crate) fn span(slot_count: usize, start: usize, end: usize, value: f64) -> PlainVector {
    select(slot_count, start..end, value)
}

/// Left-to-right sum; deterministic order keeps results bit-reproducible.
pub(crate) fn sum_all(backend: &dyn SlotBackend, items: &[SlotVector]) -> Result<SlotVector> {
    let (first, rest) = items.split_first().expect("sum of at least one vector");
    rest.iter().try_fold(first.clone(), |acc, v| backend.add(&acc, v))
}

/// Adds blocks `1..count` (each `block` slots long) onto block 0 by
/// repeated rotation with the single index `block`.
pub(crate) fn accumulate_blocks(
    backend: &dyn SlotBackend,
    v: &SlotVector,
    block: usize,
    count: usize,
) -> Result<SlotVector> {
    let mut acc = v.clone();
    let mut shifted = v.clone();
    for _ in 1..count {
        shifted = rot(backend, &shifted, block as i64)?;
        acc = backend.add(&acc, &shifted)?;
    }
    Ok(acc)
}

/// After this call slot `j` holds `v[j] + v[j+1] + ... + v[j+n-1]`.
///
/// Power-of-two prefix sums are built by doubling, then combined along the
/// binary expansion of `n`, so any `n` works without masking.
pub fn sum_slots(backend: &dyn SlotBackend, v: &SlotVector, n: usize) -> Result<SlotVector> {
    if n <= 1 {
        return Ok(v.clone());
    }
    let top = usize::BITS - 1 - n.leading_zeros();
    let mut prefix = Vec::with_capacity(top as usize + 1);
    prefix.push(v.clone());
    for b in 0..top {
        let p = &prefix[b as usize];
        let next = backend.add(p, &rot(backend, p, 1i64 << b)?)?;
        prefix.push(next);
    }
    let mut acc = prefix[top as usize].clone();
    let mut offset = 1usize << top;
    for b in (0..top).rev() {
        if n & (1 << b) != 0 {
            let shifted = rot(backend, &prefix[b as usize], offset as i64)?;
            acc = backend.add(&acc, &shifted)?;
            offset += 1 << b;
        }
    }
    Ok(acc)
}
