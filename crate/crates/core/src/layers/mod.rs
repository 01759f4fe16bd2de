//! Network layers over packed tensors.
//!
//! Every layer takes and returns data in the channel-major packed layout
//! and declares its level cost up front (`depth` methods), which the model
//! builder uses to place bootstraps.

pub mod chebyshev;
mod common;
mod conv;
mod fc;
mod pad;
mod pool;
mod relu;
mod special;
pub mod stride;

use serde::{Deserialize, Serialize};

pub use chebyshev::{
    cheb_coefficients, cheb_depth, cheb_eval, cheb_eval_with, clenshaw, ChebStrategy,
    DEFAULT_DEGREE, RELU_EPS_59, RELU_SUP_59,
};
pub use common::sum_slots;
pub use conv::{conv2d, conv_generic, conv_grouped_stride};
pub use fc::{fully_connected, merge_group};
pub use pad::pad_input;
pub use pool::{avg_pool, global_avg_pool, pool, whole_channel_pool};
pub use relu::{relu_coefficients, secure_relu};
pub use special::{conv_special_3x3, special_rotations};
pub use stride::{stride_depth, stride_extract_v1, stride_extract_v2, RowGrid, StrideVariant};

use crate::error::{Error, Result};

/// Output width `(W + 2P - k) / S + 1`; rejects geometry that does not
/// divide exactly.
pub fn output_width(width: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::InvalidConfig(format!(
            "kernel and stride must be positive, got k={kernel}, S={stride}"
        )));
    }
    let padded = width + 2 * padding;
    if padded < kernel {
        return Err(Error::InvalidConfig(format!(
            "kernel {kernel} larger than padded width {padded}"
        )));
    }
    if !(padded - kernel).is_multiple_of(stride) {
        return Err(Error::NonDivisibleGeometry {
            width,
            kernel,
            stride,
            padding,
        });
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvMode {
    #[default]
    Generic,
    #[serde(rename = "special3x3")]
    Special3x3,
    Grouped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    #[serde(default)]
    pub mode: ConvMode,
    #[serde(default)]
    pub stride_variant: StrideVariant,
}

fn one() -> usize {
    1
}

impl ConvConfig {
    /// Stride 1, no padding, generic mode, extraction striding.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvConfig {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: 0,
            mode: ConvMode::Generic,
            stride_variant: StrideVariant::Extract,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_mode(mut self, mode: ConvMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_variant(mut self, variant: StrideVariant) -> Self {
        self.stride_variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig(format!(
                "convolution dimensions must be positive: {self:?}"
            )));
        }
        match self.mode {
            ConvMode::Special3x3 if (self.kernel, self.stride, self.padding) != (3, 1, 1) => {
                Err(Error::InvalidConfig(format!(
                    "special3x3 needs k=3, S=1, P=1, got k={}, S={}, P={}",
                    self.kernel, self.stride, self.padding
                )))
            }
            ConvMode::Grouped if !self.out_channels.is_multiple_of(self.in_channels) => {
                Err(Error::InvalidConfig(format!(
                    "grouped striding needs out_channels ({}) to be a multiple of in_channels ({})",
                    self.out_channels, self.in_channels
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn output_width(&self, width: usize) -> Result<usize> {
        output_width(width, self.kernel, self.stride, self.padding)
    }

    /// Whether the grouped code path runs (grouped mode with `C >= 2`).
    pub fn runs_grouped(&self) -> bool {
        self.mode == ConvMode::Grouped && self.in_channels > 1
    }

    /// Levels consumed on a `width`-wide input.
    pub fn depth(&self, width: usize) -> Result<u32> {
        self.validate()?;
        let w_out = self.output_width(width)?;
        if self.mode == ConvMode::Special3x3 {
            return Ok(2);
        }
        let wp = width + 2 * self.padding;
        let pad = u32::from(self.padding > 0);
        let grid = RowGrid::single(wp, self.stride, w_out);
        Ok(pad + 2 + stride_depth(self.stride_variant, &grid, self.runs_grouped()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    #[default]
    Average,
    Global,
    WholeChannel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolConfig {
    #[serde(default)]
    pub kind: PoolKind,
    #[serde(default = "one")]
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub stride_variant: StrideVariant,
}

impl PoolConfig {
    pub fn average(kernel: usize, stride: usize) -> Self {
        PoolConfig {
            kind: PoolKind::Average,
            kernel,
            stride,
            stride_variant: StrideVariant::Extract,
        }
    }

    pub fn global() -> Self {
        PoolConfig {
            kind: PoolKind::Global,
            ..PoolConfig::average(1, 1)
        }
    }

    pub fn whole_channel(kernel: usize) -> Self {
        PoolConfig {
            kind: PoolKind::WholeChannel,
            ..PoolConfig::average(kernel, kernel)
        }
    }

    pub fn with_variant(mut self, variant: StrideVariant) -> Self {
        self.stride_variant = variant;
        self
    }

    pub fn output_width(&self, width: usize) -> Result<usize> {
        match self.kind {
            PoolKind::Average => output_width(width, self.kernel, self.stride, 0),
            PoolKind::Global => Ok(1),
            PoolKind::WholeChannel if self.kernel == width => Ok(1),
            PoolKind::WholeChannel => Err(Error::InvalidConfig(format!(
                "whole-channel pooling needs kernel == width, got kernel {} on width {width}",
                self.kernel
            ))),
        }
    }

    /// Levels consumed on a `width`-wide input.
    pub fn depth(&self, width: usize) -> Result<u32> {
        let w_out = self.output_width(width)?;
        Ok(match self.kind {
            PoolKind::Global => 1,
            PoolKind::WholeChannel => 2,
            PoolKind::Average => {
                1 + stride_depth(self.stride_variant, &RowGrid::single(width, self.stride, w_out), false)
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FcConfig {
    pub inputs: usize,
    pub outputs: usize,
    #[serde(default = "unlimited")]
    pub merge_budget: usize,
}

fn unlimited() -> usize {
    usize::MAX
}

impl FcConfig {
    /// Unlimited merge budget: every neuron is placed with its own key.
    pub fn new(inputs: usize, outputs: usize) -> Self {
        FcConfig {
            inputs,
            outputs,
            merge_budget: usize::MAX,
        }
    }

    pub fn with_merge_budget(mut self, budget: usize) -> Self {
        self.merge_budget = budget;
        self
    }

    pub fn validate(&self, slot_count: usize) -> Result<()> {
        if self.inputs == 0 || self.outputs == 0 {
            return Err(Error::InvalidConfig("dense layer needs n, m >= 1".into()));
        }
        if self.merge_budget == 0 {
            return Err(Error::InvalidConfig("merge budget must be at least 1".into()));
        }
        let needed = self.inputs.max(self.outputs);
        if needed > slot_count {
            return Err(Error::CapacityExceeded {
                needed,
                available: slot_count,
            });
        }
        Ok(())
    }

    pub fn depth(&self) -> u32 {
        2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReluConfig {
    pub beta: f64,
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Number of active slots.
    pub active: usize,
    #[serde(default)]
    pub strategy: ChebStrategy,
}

fn default_degree() -> usize {
    DEFAULT_DEGREE
}

impl ReluConfig {
    pub fn new(beta: f64, active: usize) -> Self {
        ReluConfig {
            beta,
            degree: DEFAULT_DEGREE,
            active,
            strategy: ChebStrategy::ProductTree,
        }
    }

    pub fn with_degree(mut self, degree: usize) -> Self {
        self.degree = degree;
        self
    }

    pub fn with_strategy(mut self, strategy: ChebStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn validate(&self, slot_count: usize) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {}", self.beta)));
        }
        if self.degree == 0 {
            return Err(Error::InvalidConfig("ReLU degree must be at least 1".into()));
        }
        if self.active == 0 || self.active > slot_count {
            return Err(Error::InvalidConfig(format!(
                "active slot count {} outside 1..={slot_count}",
                self.active
            )));
        }
        Ok(())
    }

    pub fn depth(&self) -> u32 {
        u32::from(self.beta > 1.0) + cheb_depth(self.degree, self.strategy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet_widths() {
        assert_eq!(output_width(28, 5, 1, 0).unwrap(), 24);
        assert_eq!(output_width(24, 2, 2, 0).unwrap(), 12);
        assert_eq!(output_width(32, 3, 1, 1).unwrap(), 32);
        assert!(matches!(
            output_width(32, 3, 2, 1),
            Err(Error::NonDivisibleGeometry { .. })
        ));
        assert!(output_width(2, 3, 1, 0).is_err());
    }

    #[test]
    fn config_json_defaults() {
        let c: ConvConfig =
            serde_json::from_str(r#"{"in_channels":1,"out_channels":6,"kernel":5}"#).unwrap();
        assert_eq!(c, ConvConfig::new(1, 6, 5));
        let c: ConvConfig = serde_json::from_str(
            r#"{"in_channels":2,"out_channels":2,"kernel":3,"padding":1,"mode":"special3x3"}"#,
        )
        .unwrap();
        assert_eq!(c.mode, ConvMode::Special3x3);
        assert!(ConvConfig::new(3, 4, 3).with_mode(ConvMode::Grouped).validate().is_err());
    }

    #[test]
    fn declared_depths() {
        assert_eq!(ConvConfig::new(1, 6, 5).depth(28).unwrap(), 3);
        assert_eq!(ReluConfig::new(4.0, 10).depth(), 8);
        assert_eq!(ReluConfig::new(0.5, 10).depth(), 7);
        assert_eq!(PoolConfig::average(2, 2).depth(24).unwrap(), 2);
        assert_eq!(
            PoolConfig::average(2, 2)
                .with_variant(StrideVariant::Masked)
                .depth(8)
                .unwrap(),
            5
        );
    }
}
