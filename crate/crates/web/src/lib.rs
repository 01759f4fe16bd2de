//! Browser bindings for three small views of the packing engine: the
//! special-convolution masks, the polynomial ReLU and stride extraction.
//!
//! Every export wraps a plain Rust function of the same name with an `_impl`
//! suffix so the logic is testable off the browser.

use hecnn::layers::{secure_relu, stride_extract_v1, stride_extract_v2, ReluConfig};
use hecnn::packing::build_all_masks;
use hecnn::simd::{ContextConfig, SlotBackend, Simulator};
use wasm_bindgen::prelude::*;

fn js(e: hecnn::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn simulator(min_slots: usize) -> hecnn::Result<Simulator> {
    Simulator::new(ContextConfig::with_slots(min_slots.next_power_of_two().max(16))?)
}

/// Nine masks of `channels * width^2` entries each, concatenated in tap order.
#[wasm_bindgen]
pub fn special_masks(width: usize, channels: usize) -> Result<Vec<u8>, JsError> {
    special_masks_impl(width, channels).map_err(|e| JsError::new(&e))
}

pub fn special_masks_impl(width: usize, channels: usize) -> Result<Vec<u8>, String> {
    if !(2..=64).contains(&width) || !(1..=16).contains(&channels) {
        return Err(format!("need 2 <= width <= 64 and 1 <= channels <= 16, got {width} and {channels}"));
    }
    Ok(build_all_masks(width * width, channels, width)
        .iter()
        .flat_map(|m| m.values().iter().map(|&v| u8::from(v != 0.0)).collect::<Vec<_>>())
        .collect())
}

/// Polynomial ReLU on `points` evenly spaced inputs over `[-beta, beta]`,
/// evaluated through the simulator.
#[wasm_bindgen]
pub fn relu_curve(beta: f64, degree: usize, points: usize) -> Result<Vec<f64>, JsError> {
    relu_curve_impl(beta, degree, points).map_err(js)
}

pub fn relu_curve_impl(beta: f64, degree: usize, points: usize) -> hecnn::Result<Vec<f64>> {
    let points = points.clamp(2, 8192);
    let xs: Vec<f64> = (0..points)
        .map(|i| -beta + 2.0 * beta * i as f64 / (points - 1) as f64)
        .collect();
    let sim = simulator(points)?;
    let x = sim.encrypt(&xs)?;
    let y = secure_relu(&sim, &x, &ReluConfig::new(beta, points).with_degree(degree))?;
    Ok(y.slots()[..points].to_vec())
}

/// Levels the ReLU consumes at this `beta` and degree.
#[wasm_bindgen]
pub fn relu_depth(beta: f64, degree: usize) -> u32 {
    ReluConfig::new(beta, 1).with_degree(degree).depth()
}

/// One stride extraction of a `width x width` ramp (`1, 2, 3, ...`).
#[wasm_bindgen]
pub struct StrideRun {
    output: Vec<f64>,
    keys: Vec<i32>,
    rotations: usize,
    levels: u32,
}

#[wasm_bindgen]
impl StrideRun {
    /// The compacted `out_width x out_width` result.
    #[wasm_bindgen(getter)]
    pub fn output(&self) -> Vec<f64> {
        self.output.clone()
    }

    /// Distinct rotation indices used, ascending.
    #[wasm_bindgen(getter)]
    pub fn keys(&self) -> Vec<i32> {
        self.keys.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn rotations(&self) -> usize {
        self.rotations
    }

    #[wasm_bindgen(getter)]
    pub fn levels(&self) -> u32 {
        self.levels
    }
}

#[wasm_bindgen]
pub fn stride_run(width: usize, stride: usize, out_width: usize, masked: bool) -> Result<StrideRun, JsError> {
    stride_run_impl(width, stride, out_width, masked).map_err(js)
}

pub fn stride_run_impl(width: usize, stride: usize, out_width: usize, masked: bool) -> hecnn::Result<StrideRun> {
    if !(1..=64).contains(&width) {
        return Err(hecnn::Error::InvalidConfig(format!("width {width} outside 1..=64")));
    }
    let sim = simulator(width * width)?;
    let ramp: Vec<f64> = (1..=width * width).map(|v| v as f64).collect();
    let x = sim.encrypt(&ramp)?;
    let trace = sim.attach_recorder();
    let y = if masked {
        stride_extract_v2(&sim, &x, width, stride, out_width)?
    } else {
        stride_extract_v1(&sim, &x, width, stride, out_width)?
    };
    sim.detach_recorder();
    Ok(StrideRun {
        output: y.slots()[..out_width * out_width].to_vec(),
        keys: trace.rotation_indices().into_iter().map(|i| i as i32).collect(),
        rotations: trace.rotation_count(),
        levels: x.level() - y.level(),
    })
}

impl StrideRun {
    pub fn output_slice(&self) -> &[f64] {
        &self.output
    }

    pub fn key_slice(&self) -> &[i32] {
        &self.keys
    }
}
