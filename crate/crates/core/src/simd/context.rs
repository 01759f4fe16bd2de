use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default multiplicative depth between bootstraps.
pub const DEFAULT_DEPTH_BUDGET: u32 = 25;

/// CKKS parameters that a real backend would need. The simulator stores and
/// echoes them but never interprets them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CryptoMetadata {
    pub first_modulus_bits: u32,
    pub rescale_bits: u32,
    pub key_switch_digits: u32,
    pub rescaling: String,
}

impl Default for CryptoMetadata {
    fn default() -> Self {
        CryptoMetadata {
            first_modulus_bits: 50,
            rescale_bits: 46,
            key_switch_digits: 4,
            rescaling: "flexibleauto".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextConfig {
    pub ring_dimension: usize,
    pub slot_count: usize,
    pub depth_budget: u32,
    #[serde(default)]
    pub crypto: CryptoMetadata,
}

impl ContextConfig {
    pub fn new(ring_dimension: usize, slot_count: usize, depth_budget: u32) -> Result<Self> {
        let ctx = ContextConfig {
            ring_dimension,
            slot_count,
            depth_budget,
            crypto: CryptoMetadata::default(),
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slot_count == 0 || !self.slot_count.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "slot count {} is not a power of two",
                self.slot_count
            )));
        }
        if self.slot_count > self.ring_dimension / 2 {
            return Err(Error::InvalidConfig(format!(
                "slot count {} exceeds half the ring dimension {}",
                self.slot_count, self.ring_dimension
            )));
        }
        if self.depth_budget == 0 {
            return Err(Error::InvalidConfig("depth budget must be at least 1".into()));
        }
        Ok(())
    }

    /// Ring 2^14, 8192 slots: enough for LeNet-5 on MNIST.
    pub fn lenet5() -> Self {
        ContextConfig {
            ring_dimension: 16_384,
            slot_count: 8_192,
            depth_budget: DEFAULT_DEPTH_BUDGET,
            crypto: CryptoMetadata::default(),
        }
    }

    /// Ring 2^15, 16384 slots: CIFAR-sized networks.
    pub fn large() -> Self {
        ContextConfig {
            ring_dimension: 32_768,
            slot_count: 16_384,
            depth_budget: DEFAULT_DEPTH_BUDGET,
            crypto: CryptoMetadata::default(),
        }
    }

    /// A small context for tests and demos: ring `2 * slots`, default depth.
    pub fn with_slots(slot_count: usize) -> Result<Self> {
        Self::new(2 * slot_count, slot_count, DEFAULT_DEPTH_BUDGET)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "lenet5" => Ok(Self::lenet5()),
            "large" => Ok(Self::large()),
            other => Err(Error::InvalidConfig(format!(
                "unknown context preset {other:?} (expected \"lenet5\" or \"large\")"
            ))),
        }
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["lenet5", "large"]
    }

    pub fn with_depth_budget(mut self, depth_budget: u32) -> Self {
        self.depth_budget = depth_budget;
        self
    }
}
