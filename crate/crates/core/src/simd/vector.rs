use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Stand-in for a CKKS ciphertext: `S` real slots and the number of
/// multiplications it can still absorb.
#[derive(Clone, Debug)]
pub struct SlotVector {
    slots: Vec<f64>,
    level: u32,
    id: u64,
}

impl SlotVector {
    pub(crate) fn from_parts(slots: Vec<f64>, level: u32) -> Self {
        SlotVector {
            slots,
            level,
            id: next_id(),
        }
    }

    pub fn slots(&self) -> &[f64] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn id(&self) -> u64 {
        self.id
    }
}

/// Cleartext operand for slot-wise multiplication and addition.
#[derive(Clone, Debug, PartialEq)]
pub struct PlainVector {
    slots: Vec<f64>,
}

impl PlainVector {
    pub(crate) fn from_slots(slots: Vec<f64>) -> Self {
        PlainVector { slots }
    }

    pub fn slots(&self) -> &[f64] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Slot-wise product of two plaintexts. Free: no ciphertext is involved.
    pub fn hadamard(&self, other: &PlainVector) -> PlainVector {
        PlainVector {
            slots: self
                .slots
                .iter()
                .zip(&other.slots)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.slots.iter().all(|&v| v == 0.0)
    }
}
