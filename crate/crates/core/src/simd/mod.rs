//! Slot-vector backend contract and its cleartext reference simulator.
//!
//! A [`SlotVector`] stands in for a packed CKKS ciphertext. The simulator
//! executes the same slot-wise semantics on plain `f64`s and tracks only the
//! remaining multiplicative depth, so layer algorithms written against
//! [`SlotBackend`] can be checked exactly against a plaintext oracle.
//!
//! Rotation convention: `rotate(v, t)[j] == v[(j + t) mod S]`, so a positive
//! index shifts slots to the left.

mod context;
mod trace;
mod vector;

use std::collections::BTreeSet;
use std::sync::{Mutex, RwLock};

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

pub use context::{ContextConfig, CryptoMetadata, DEFAULT_DEPTH_BUDGET};
pub use trace::{Trace, TraceEvent};
pub use vector::{PlainVector, SlotVector};

use crate::error::{Error, Result};

pub trait SlotBackend: Sync {
    fn context(&self) -> &ContextConfig;

    fn slot_count(&self) -> usize {
        self.context().slot_count
    }

    /// Packs `values` into a fresh vector at full level; trailing slots are zero.
    fn encrypt(&self, values: &[f64]) -> Result<SlotVector>;

    fn decrypt(&self, v: &SlotVector) -> Vec<f64>;

    /// Pads `values` with zeros to the slot count.
    fn encode(&self, values: &[f64]) -> Result<PlainVector>;

    fn rotate(&self, v: &SlotVector, index: i64) -> Result<SlotVector>;

    fn add(&self, a: &SlotVector, b: &SlotVector) -> Result<SlotVector>;

    fn sub(&self, a: &SlotVector, b: &SlotVector) -> Result<SlotVector>;

    fn add_plain(&self, a: &SlotVector, p: &PlainVector) -> Result<SlotVector>;

    fn mult_plain(&self, v: &SlotVector, p: &PlainVector) -> Result<SlotVector>;

    fn mult_cipher(&self, a: &SlotVector, b: &SlotVector) -> Result<SlotVector>;

    fn bootstrap(&self, v: &SlotVector) -> Result<SlotVector>;

    /// Records a non-arithmetic event (layer boundaries, notes) if a trace is attached.
    fn annotate(&self, _event: TraceEvent) {}

    /// Replaces the set of resident rotation keys. Backends that do not
    /// enforce residency ignore this.
    fn load_keys(&self, _indices: &BTreeSet<i64>) {}
}

/// Optional additive Gaussian perturbation applied after every
/// multiplication and bootstrap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub sigma: f64,
    pub seed: u64,
}

struct NoiseSource {
    normal: Normal<f64>,
    rng: StdRng,
}

/// Cleartext CKKS stand-in with level accounting.
pub struct Simulator {
    ctx: ContextConfig,
    noise: Option<Mutex<NoiseSource>>,
    recorder: RwLock<Option<Trace>>,
    resident_keys: RwLock<Option<BTreeSet<i64>>>,
}

impl Simulator {
    pub fn new(ctx: ContextConfig) -> Result<Self> {
        ctx.validate()?;
        Ok(Simulator {
            ctx,
            noise: None,
            recorder: RwLock::new(None),
            resident_keys: RwLock::new(None),
        })
    }

    pub fn with_noise(mut self, model: NoiseModel) -> Result<Self> {
        if !(model.sigma >= 0.0 && model.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise sigma must be a finite non-negative number, got {}",
                model.sigma
            )));
        }
        self.noise = if model.sigma == 0.0 {
            None
        } else {
            Some(Mutex::new(NoiseSource {
                normal: Normal::new(0.0, model.sigma)
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?,
                rng: StdRng::seed_from_u64(model.seed),
            }))
        };
        Ok(self)
    }

    /// Rotations by indices outside the resident set fail with
    /// [`Error::MissingRotationKey`] from now on. The set starts empty.
    pub fn enforce_keys(self) -> Self {
        *self.resident_keys.write().expect("key lock poisoned") = Some(BTreeSet::new());
        self
    }

    /// Starts recording every rotation, multiplication and bootstrap.
    pub fn attach_recorder(&self) -> Trace {
        let trace = Trace::new();
        *self.recorder.write().expect("recorder lock poisoned") = Some(trace.clone());
        trace
    }

    pub fn detach_recorder(&self) {
        *self.recorder.write().expect("recorder lock poisoned") = None;
    }

    fn record(&self, event: TraceEvent) {
        if let Some(trace) = self.recorder.read().expect("recorder lock poisoned").as_ref() {
            trace.push(event);
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.ctx.slot_count {
            return Err(Error::SlotMismatch {
                left: len,
                right: self.ctx.slot_count,
            });
        }
        Ok(())
    }

    fn perturb(&self, slots: &mut [f64]) {
        if let Some(noise) = &self.noise {
            let mut src = noise.lock().expect("noise lock poisoned");
            let NoiseSource { normal, rng } = &mut *src;
            for s in slots.iter_mut() {
                *s += normal.sample(rng);
            }
        }
    }

    fn zip_with(
        &self,
        a: &[f64],
        b: &[f64],
        op: impl Fn(f64, f64) -> f64,
    ) -> Result<Vec<f64>> {
        if a.len() != b.len() {
            return Err(Error::SlotMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        self.check_len(a.len())?;
        Ok(a.iter().zip(b).map(|(&x, &y)| op(x, y)).collect())
    }
}

impl SlotBackend for Simulator {
    fn context(&self) -> &ContextConfig {
        &self.ctx
    }

    fn encrypt(&self, values: &[f64]) -> Result<SlotVector> {
        let slots = self.ctx.slot_count;
        if values.len() > slots {
            return Err(Error::CapacityExceeded {
                needed: values.len(),
                available: slots,
            });
        }
        let mut data = values.to_vec();
        data.resize(slots, 0.0);
        Ok(SlotVector::from_parts(data, self.ctx.depth_budget))
    }

    fn decrypt(&self, v: &SlotVector) -> Vec<f64> {
        v.slots().to_vec()
    }

    fn encode(&self, values: &[f64]) -> Result<PlainVector> {
        let slots = self.ctx.slot_count;
        if values.len() > slots {
            return Err(Error::CapacityExceeded {
                needed: values.len(),
                available: slots,
            });
        }
        let mut data = values.to_vec();
        data.resize(slots, 0.0);
        Ok(PlainVector::from_slots(data))
    }

    fn rotate(&self, v: &SlotVector, index: i64) -> Result<SlotVector> {
        let n = v.len();
        self.check_len(n)?;
        if index.unsigned_abs() as usize >= n {
            return Err(Error::InvalidRotation { index, slots: n });
        }
        if index != 0 {
            if let Some(keys) = self.resident_keys.read().expect("key lock poisoned").as_ref() {
                if !keys.contains(&index) {
                    return Err(Error::MissingRotationKey { index });
                }
            }
        }
        self.record(TraceEvent::Rotate {
            index,
            level: v.level(),
        });
        let shift = index.rem_euclid(n as i64) as usize;
        let mut out = Vec::with_capacity(n);
        out.extend_from_slice(&v.slots()[shift..]);
        out.extend_from_slice(&v.slots()[..shift]);
        Ok(SlotVector::from_parts(out, v.level()))
    }

    fn add(&self, a: &SlotVector, b: &SlotVector) -> Result<SlotVector> {
        let out = self.zip_with(a.slots(), b.slots(), |x, y| x + y)?;
        Ok(SlotVector::from_parts(out, a.level().min(b.level())))
    }

    fn sub(&self, a: &SlotVector, b: &SlotVector) -> Result<SlotVector> {
        let out = self.zip_with(a.slots(), b.slots(), |x, y| x - y)?;
        Ok(SlotVector::from_parts(out, a.level().min(b.level())))
    }

    fn add_plain(&self, a: &SlotVector, p: &PlainVector) -> Result<SlotVector> {
        let out = self.zip_with(a.slots(), p.slots(), |x, y| x + y)?;
        Ok(SlotVector::from_parts(out, a.level()))
    }

    fn mult_plain(&self, v: &SlotVector, p: &PlainVector) -> Result<SlotVector> {
        if v.level() == 0 {
            return Err(Error::DepthExhausted { op: "mult_plain" });
        }
        let mut out = self.zip_with(v.slots(), p.slots(), |x, y| x * y)?;
        self.perturb(&mut out);
        let level = v.level() - 1;
        self.record(TraceEvent::MultPlain { level });
        Ok(SlotVector::from_parts(out, level))
    }

    fn mult_cipher(&self, a: &SlotVector, b: &SlotVector) -> Result<SlotVector> {
        if a.level() == 0 || b.level() == 0 {
            return Err(Error::DepthExhausted { op: "mult_cipher" });
        }
        let mut out = self.zip_with(a.slots(), b.slots(), |x, y| x * y)?;
        self.perturb(&mut out);
        let level = a.level().min(b.level()) - 1;
        self.record(TraceEvent::MultCipher { level });
        Ok(SlotVector::from_parts(out, level))
    }

    fn bootstrap(&self, v: &SlotVector) -> Result<SlotVector> {
        self.check_len(v.len())?;
        let mut out = v.slots().to_vec();
        self.perturb(&mut out);
        let to = self.ctx.depth_budget;
        self.record(TraceEvent::Bootstrap {
            from: v.level(),
            to,
        });
        Ok(SlotVector::from_parts(out, to))
    }

    fn annotate(&self, event: TraceEvent) {
        self.record(event);
    }

    fn load_keys(&self, indices: &BTreeSet<i64>) {
        let mut keys = self.resident_keys.write().expect("key lock poisoned");
        if let Some(resident) = keys.as_mut() {
            *resident = indices.clone();
        }
    }
}
