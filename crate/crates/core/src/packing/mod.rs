//! Channel-major SIMD layout and the plaintext companion vectors that go
//! with it.
//!
//! A `(C, W, W)` tensor occupies slots `[0, C*W^2)`: slot `c*W^2 + i*W + j`
//! holds element `(c, i, j)`. Everything past `C*W^2` is zero right after
//! packing.

mod masks;
mod tensor;

pub use masks::{build_all_masks, build_mask, extraction_mask, MaskVector};
pub use tensor::{KernelShape, KernelTensor, Tensor3};

use crate::error::{Error, Result};
use crate::simd::{PlainVector, SlotBackend, SlotVector};

/// A slot vector together with the `(C, W)` layout of the tensor it holds.
#[derive(Clone, Debug)]
pub struct PackedTensor {
    data: SlotVector,
    channels: usize,
    width: usize,
}

impl PackedTensor {
    pub fn new(data: SlotVector, channels: usize, width: usize) -> Result<Self> {
        if channels == 0 || width == 0 {
            return Err(Error::Shape("packed tensor needs C, W >= 1".into()));
        }
        let needed = channels * width * width;
        if needed > data.len() {
            return Err(Error::CapacityExceeded {
                needed,
                available: data.len(),
            });
        }
        Ok(PackedTensor {
            data,
            channels,
            width,
        })
    }

    pub fn data(&self) -> &SlotVector {
        &self.data
    }

    pub fn into_data(self) -> SlotVector {
        self.data
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channel_stride(&self) -> usize {
        self.width * self.width
    }

    pub fn element_count(&self) -> usize {
        self.channels * self.channel_stride()
    }

    pub fn level(&self) -> u32 {
        self.data.level()
    }
}

pub fn flatten(backend: &dyn SlotBackend, tensor: &Tensor3) -> Result<PackedTensor> {
    if !tensor.is_square() {
        return Err(Error::Shape(format!(
            "packed layout needs square channels, got {}x{}",
            tensor.height(),
            tensor.width()
        )));
    }
    if tensor.channels() == 0 || tensor.width() == 0 {
        return Err(Error::Shape("cannot pack an empty tensor".into()));
    }
    let data = backend.encrypt(tensor.data())?;
    PackedTensor::new(data, tensor.channels(), tensor.width())
}

pub fn unflatten(backend: &dyn SlotBackend, packed: &PackedTensor) -> Tensor3 {
    let slots = backend.decrypt(packed.data());
    let n = packed.element_count();
    Tensor3::new(packed.channels, packed.width, packed.width, slots[..n].to_vec())
        .expect("element count matches layout")
}

/// Plaintext carrying `weights[f][c][i][j]` across all `W^2` slots of each
/// input-channel block `c`.
pub fn repeated_kernel_vector(
    kernel: &KernelTensor,
    f: usize,
    tap: (usize, usize),
    channels: usize,
    width: usize,
    slot_count: usize,
) -> Result<PlainVector> {
    let (out, inp, k) = kernel.conv_dims()?;
    if f >= out || tap.0 >= k || tap.1 >= k || channels != inp {
        return Err(Error::Shape(format!(
            "kernel ({out}, {inp}, {k}, {k}) has no tap f={f}, (i, j)={tap:?} for {channels} channels"
        )));
    }
    let m = width * width;
    if channels * m > slot_count {
        return Err(Error::CapacityExceeded {
            needed: channels * m,
            available: slot_count,
        });
    }
    let mut slots = vec![0.0; slot_count];
    for c in 0..channels {
        slots[c * m..(c + 1) * m].fill(kernel.tap(f, c, tap.0, tap.1));
    }
    Ok(PlainVector::from_slots(slots))
}

/// Zero-padded plaintext from a shorter vector.
pub(crate) fn plain(values: Vec<f64>, slot_count: usize) -> PlainVector {
    let mut values = values;
    values.resize(slot_count, 0.0);
    PlainVector::from_slots(values)
}

impl MaskVector {
    pub fn to_plain(&self, slot_count: usize) -> PlainVector {
        plain(self.values().to_vec(), slot_count)
    }
}
