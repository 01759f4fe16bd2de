mod common;

use common::*;
use hecnn::layers::{
    conv2d, output_width, secure_relu, ConvConfig, ConvMode, ReluConfig, RELU_EPS_59, RELU_SUP_59,
};
use hecnn::model::architectures::{lenet5, random_inputs, random_weights, resnet20};
use hecnn::model::{calibrate, resolve, Model, Partition, CALIBRATION_FACTOR};
use hecnn::keyplan::{plan_blocks, union_keys};
use hecnn::packing::{build_all_masks, build_mask, flatten, repeated_kernel_vector, KernelTensor};
use hecnn::simd::SlotBackend;
use hecnn::Error;
use proptest::prelude::*;
use std::sync::Arc;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rotations_compose(a in -63i64..64, b in -63i64..64, seed in any::<u64>()) {
        let s = sim(64);
        let mut r = rng(seed);
        let v = s.encrypt(&tensor(&mut r, 1, 8).into_data()).unwrap();
        let two = s.rotate(&s.rotate(&v, a).unwrap(), b).unwrap();
        let one = s.rotate(&v, (a + b).rem_euclid(64)).unwrap();
        prop_assert_eq!(two.slots(), one.slots());
        prop_assert_eq!(two.level(), v.level());
    }

    #[test]
    fn level_rules(drops in 0u32..5, seed in any::<u64>()) {
        let s = sim(16);
        let mut r = rng(seed);
        let x = tensor(&mut r, 1, 4).into_data();
        let fresh = s.encrypt(&x).unwrap();
        let one = s.encode(&[1.0; 16]).unwrap();
        let mut low = fresh.clone();
        for _ in 0..drops {
            let before = low.level();
            low = s.mult_plain(&low, &one).unwrap();
            prop_assert_eq!(low.level(), before - 1);
        }
        prop_assert_eq!(s.add(&fresh, &low).unwrap().level(), low.level());
        prop_assert_eq!(s.mult_cipher(&fresh, &low).unwrap().level(), low.level() - 1);
        let boot = s.bootstrap(&low).unwrap();
        let again = s.bootstrap(&boot).unwrap();
        prop_assert_eq!(again.slots(), boot.slots());
    }

    #[test]
    fn masks_are_binary(w in 2usize..=8, c in 1usize..=4) {
        let m = w * w;
        let masks = build_all_masks(m, c, w);
        for mask in &masks {
            prop_assert!(mask.is_binary());
            prop_assert_eq!(mask.len(), m * c);
        }
        prop_assert_eq!(masks[4].ones(), m * c);
        for sp in 0..w {
            let mask = build_mask(sp, w - sp, w, m, c);
            prop_assert!(mask.is_binary());
            prop_assert_eq!(mask.len(), m * c);
        }
    }

    #[test]
    fn grouped_equals_ungrouped(
        c in 1usize..=4,
        mult in 1usize..=2,
        w in prop::sample::select(vec![4usize, 6, 8]),
        k in prop::sample::select(vec![2usize, 3]),
        stride in 1usize..=2,
        padding in 0usize..=1,
        seed in any::<u64>(),
    ) {
        prop_assume!(output_width(w, k, stride, padding).is_ok());
        let mut r = rng(seed);
        let x = tensor(&mut r, c, w);
        let kern = kernel(&mut r, c * mult, c, k);
        let s = sim(SLOTS);
        let packed = flatten(&s, &x).unwrap();
        let cfg = ConvConfig::new(c, c * mult, k).with_stride(stride).with_padding(padding);
        let a = conv2d(&s, &packed, &cfg, &kern).unwrap();
        let b = conv2d(&s, &packed, &cfg.with_mode(ConvMode::Grouped), &kern).unwrap();
        let err = max_diff(&s.decrypt(a.data()), &s.decrypt(b.data())).unwrap();
        prop_assert!(err <= TOL, "{err}");
    }

    #[test]
    fn output_width_formula(w in 1usize..=64, k in 1usize..=7, s in 1usize..=4, p in 0usize..=3) {
        let padded = w + 2 * p;
        match output_width(w, k, s, p) {
            Ok(out) => prop_assert_eq!(out, (padded - k) / s + 1),
            Err(Error::NonDivisibleGeometry { .. }) => prop_assert!(padded >= k && (padded - k) % s != 0),
            Err(_) => prop_assert!(padded < k),
        }
    }

    #[test]
    fn relu_error_bounds(beta in 1.0f64..50.0, seed in any::<u64>()) {
        let s = sim(SLOTS);
        let mut r = rng(seed);
        let x: Vec<f64> = (0..SLOTS).map(|_| rand::Rng::random_range(&mut r, -beta..beta)).collect();
        let out = secure_relu(&s, &s.encrypt(&x).unwrap(), &ReluConfig::new(beta, SLOTS)).unwrap();
        for (xi, yi) in x.iter().zip(out.slots()) {
            let err = (yi - xi.max(0.0)).abs();
            let bound = if xi.abs() >= 0.05 * beta { RELU_EPS_59 } else { RELU_SUP_59 };
            prop_assert!(err <= bound * beta * (1.0 + 1e-9), "x={xi} err={err}");
        }
    }
}

#[test]
fn flatten_exhaustive() {
    for w in 1..=6 {
        for c in 1..=4 {
            assert_eq!(check_flatten(w, c, (w * 10 + c) as u64).unwrap(), 0.0);
        }
    }
}

#[test]
fn kernel_vectors() {
    let zero = KernelTensor::conv(2, 3, 3, vec![0.0; 54], vec![0.0; 2]).unwrap();
    let v = repeated_kernel_vector(&zero, 1, (2, 0), 3, 4, 64).unwrap();
    assert!(v.is_zero());
    let mut w = vec![0.0; 54];
    w[27 + 9 + 4] = 2.5; // filter 1, channel 1, tap (1, 1)
    let delta = KernelTensor::conv(2, 3, 3, w, vec![0.0; 2]).unwrap();
    let v = repeated_kernel_vector(&delta, 1, (1, 1), 3, 4, 64).unwrap();
    assert!(v.slots()[..16].iter().all(|&x| x == 0.0));
    assert!(v.slots()[16..32].iter().all(|&x| x == 2.5));
    assert!(v.slots()[32..].iter().all(|&x| x == 0.0));
}

#[test]
fn depth_exhaustion_is_an_error() {
    let s = sim(16);
    let one = s.encode(&[1.0; 16]).unwrap();
    let mut v = s.encrypt(&[1.0]).unwrap();
    for _ in 0..s.context().depth_budget {
        v = s.mult_plain(&v, &one).unwrap();
    }
    assert!(matches!(s.mult_plain(&v, &one), Err(Error::DepthExhausted { .. })));
    assert!(matches!(s.mult_cipher(&v, &v), Err(Error::DepthExhausted { .. })));
}

#[test]
fn block_residency_bounded_by_union() {
    for spec in [lenet5(), resnet20()] {
        let weights = random_weights(&spec, 2).unwrap();
        let batch = random_inputs(spec.input, 1, 3);
        let spec = calibrate(&spec, &weights, &batch, CALIBRATION_FACTOR).unwrap();
        let model = Model::build(spec.clone(), Arc::new(weights)).unwrap();
        let plan = model.block_plan();
        let total = model.keys().len();
        assert!(plan.blocks.len() > 1);
        assert!(plan.peak_resident < total, "{}: {} vs {total}", spec.name, plan.peak_resident);
        assert_eq!(plan.union(), *model.keys());

        let nodes = resolve(&spec, model.context().slot_count).unwrap();
        let single = plan_blocks(&nodes, &Partition::Explicit(vec![[0, spec.layers.len()]])).unwrap();
        assert_eq!(single.peak_resident, union_keys(&nodes).unwrap().len());
    }
}
