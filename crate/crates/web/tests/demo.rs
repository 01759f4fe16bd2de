use hecnn_web::{relu_curve_impl, relu_depth, special_masks_impl, stride_run_impl};

#[test]
fn masks_for_width_four() {
    let m = special_masks_impl(4, 2).unwrap();
    assert_eq!(m.len(), 9 * 32);
    assert!(m[4 * 32..5 * 32].iter().all(|&v| v == 1));
    assert!(special_masks_impl(1, 1).is_err());
}

#[test]
fn relu_curve_tracks_relu() {
    let ys = relu_curve_impl(4.0, 59, 101).unwrap();
    assert_eq!(ys.len(), 101);
    for (i, y) in ys.iter().enumerate() {
        let x = -4.0 + 8.0 * i as f64 / 100.0;
        assert!((y - x.max(0.0)).abs() < 0.04, "x={x} y={y}");
    }
    assert_eq!(relu_depth(4.0, 59), 8);
    assert_eq!(relu_depth(1.0, 59), 7);
}

#[test]
fn stride_variants_agree() {
    let v1 = stride_run_impl(8, 2, 4, false).unwrap();
    let v2 = stride_run_impl(8, 2, 4, true).unwrap();
    let expected: Vec<f64> = (0..4)
        .flat_map(|i| (0..4).map(move |j| (i * 2 * 8 + j * 2 + 1) as f64))
        .collect();
    assert_eq!(v1.output_slice(), expected.as_slice());
    assert_eq!(v2.output_slice(), expected.as_slice());
    assert_eq!(v1.levels(), 1);
    assert_eq!(v2.key_slice().len(), 3);
}
