use std::sync::Arc;

use hecnn::keyplan::verify_trace;
use hecnn::model::architectures::{lenet5, random_inputs, random_weights, resnet20};
use hecnn::model::{
    calibrate, BootstrapPolicy, InMemoryWeights, KeyMode, LayerOp, Model, ModelSpec, WeightMode,
    CALIBRATION_FACTOR,
};
use hecnn::simd::Simulator;
use hecnn::Error;

fn calibrated_lenet() -> (ModelSpec, Arc<InMemoryWeights>) {
    let spec = lenet5();
    let weights = random_weights(&spec, 7).unwrap();
    let batch = random_inputs(spec.input, 4, 11);
    let spec = calibrate(&spec, &weights, &batch, CALIBRATION_FACTOR).unwrap();
    (spec, Arc::new(weights))
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap()
}

#[test]
fn lenet_bootstrap_layout() {
    let (spec, weights) = calibrated_lenet();
    let model = Model::build(spec, weights).unwrap();
    let ids: Vec<_> = model.nodes().iter().map(|n| n.id.as_str()).collect();
    assert_eq!(
        ids,
        [
            "conv1", "relu1", "pool1", "conv2", "relu2", "pool2.bootstrap", "pool2", "fc1",
            "relu3.bootstrap", "relu3", "fc2", "relu4.bootstrap", "relu4", "fc3"
        ]
    );
    assert_eq!(model.bootstrap_count(), 3);
    let relu2 = &model.nodes()[4];
    assert_eq!(relu2.level_out, 1);
}

#[test]
fn lenet_matches_reference_and_ledger() {
    let (spec, weights) = calibrated_lenet();
    let model = Model::build(spec, weights).unwrap();
    let sim = Simulator::new(model.context().clone()).unwrap();
    let trace = sim.attach_recorder();
    let image = &random_inputs(model.spec().input, 1, 99)[0];
    let out = model.infer(&sim, image).unwrap();
    let exact = model.reference(image).unwrap();
    assert_eq!(out.logits.len(), 10);
    let err = out
        .logits
        .iter()
        .zip(&exact)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = exact.iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(err < 0.05 * scale.max(1.0), "err {err} vs scale {scale}");
    assert_eq!(argmax(&out.logits), argmax(&exact));

    for e in &out.ledger {
        if let Some(d) = e.declared {
            assert_eq!(e.level_in - e.level_out, d, "{}", e.id);
        }
    }
    let report = verify_trace(model.block_plan(), &trace.events());
    assert!(report.is_clean(), "{:?}", report.violations);
    assert!(report.unused.is_empty(), "unused keys {:?}", report.unused);
}

#[test]
fn modes_agree_and_respect_residency() {
    let (spec, weights) = calibrated_lenet();
    let image = &random_inputs(spec.input, 1, 3)[0];
    let mut model = Model::build(spec, weights).unwrap();
    assert_eq!(model.cached_weights(), 5);
    let sim = Simulator::new(model.context().clone()).unwrap().enforce_keys();
    let base = model.infer(&sim, image).unwrap().logits;

    model.set_weight_mode(WeightMode::Lazy).unwrap();
    assert_eq!(model.cached_weights(), 0);
    model.set_key_mode(KeyMode::Block);
    let lazy = model.infer(&sim, image).unwrap().logits;
    assert_eq!(base, lazy);
    assert!(model.block_plan().blocks.len() > 1);
    assert!(model.block_plan().peak_resident < model.keys().len());
}

#[test]
fn uncalibrated_and_explicit_specs_fail() {
    let spec = lenet5();
    let weights = Arc::new(random_weights(&spec, 1).unwrap());
    assert!(matches!(
        Model::build(spec.clone(), weights.clone()),
        Err(Error::Calibration(_))
    ));
    let (mut spec, weights) = calibrated_lenet();
    spec.bootstrap_policy = BootstrapPolicy::Explicit;
    let err = Model::build(spec, weights).unwrap_err();
    assert!(matches!(err, Error::DepthBudgetExceeded { .. }), "{err}");
}

#[test]
fn resnet_plan_resolves() {
    let spec = resnet20();
    let weights = random_weights(&spec, 5).unwrap();
    let batch = random_inputs(spec.input, 1, 6);
    let spec = calibrate(&spec, &weights, &batch, CALIBRATION_FACTOR).unwrap();
    let model = Model::build(spec, Arc::new(weights)).unwrap();
    let residuals = model
        .nodes()
        .iter()
        .filter(|n| matches!(n.op, LayerOp::Residual { .. }))
        .count();
    assert_eq!(residuals, 9);
    assert_eq!(model.nodes().last().unwrap().output.channels, 10);
    // the two downsampling blocks and global pooling each open a key block
    assert_eq!(model.block_plan().blocks.len(), 4);
    assert!(model.bootstrap_count() > 0);

    let sim = Simulator::new(model.context().clone()).unwrap();
    let trace = sim.attach_recorder();
    let image = &batch[0];
    let out = model.infer(&sim, image).unwrap();
    let exact = model.reference(image).unwrap();
    let err = out
        .logits
        .iter()
        .zip(&exact)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = exact.iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(err < 0.05 * scale.max(1.0), "err {err} vs scale {scale}");
    let report = verify_trace(model.block_plan(), &trace.events());
    assert!(report.is_clean(), "{:?}", report.violations);
    assert!(report.unused.is_empty(), "unused keys {:?}", report.unused);
}
