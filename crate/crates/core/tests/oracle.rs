//! Packed layers against the plaintext reference, including level use and
//! the exact rotation-key set of every run.

mod common;

use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn convolution(seed in any::<u64>(), case_seed in any::<u64>()) {
        let case = random_conv(&mut rng(case_seed));
        let err = check_conv(&case, seed).map_err(TestCaseError::fail)?;
        prop_assert!(err <= TOL, "{case:?}: {err}");
    }

    #[test]
    fn special_equals_padded_generic(
        w in prop::sample::select(vec![4usize, 6, 8]),
        c in 1usize..=4,
        f in 1usize..=4,
        seed in any::<u64>(),
    ) {
        let err = check_special(w, c, f, seed).map_err(TestCaseError::fail)?;
        prop_assert!(err <= TOL, "{err}");
    }

    #[test]
    fn padding(w in 2usize..=8, c in 1usize..=4, p in 0usize..=2, seed in any::<u64>()) {
        let (err, keys) = check_pad(w, c, p, seed).map_err(TestCaseError::fail)?;
        prop_assert!(err <= TOL);
        prop_assert!(keys <= c + 3, "{keys} keys for C={c}");
    }

    #[test]
    fn average_pooling(case_seed in any::<u64>(), seed in any::<u64>()) {
        let case = random_pool(&mut rng(case_seed));
        let err = check_avg_pool(&case, seed).map_err(TestCaseError::fail)?;
        prop_assert!(err <= TOL, "{case:?}: {err}");
    }

    #[test]
    fn channel_means(w in 1usize..=8, c in 1usize..=8, seed in any::<u64>()) {
        let err = check_global_pools(w, c, seed).map_err(TestCaseError::fail)?;
        prop_assert!(err <= TOL);
    }

    #[test]
    fn dense(n in 1usize..=64, m in 1usize..=16, budget in 1usize..=20, seed in any::<u64>()) {
        let err = check_fc(n, m, budget, seed).map_err(TestCaseError::fail)?;
        prop_assert!(err <= TOL);
    }

    #[test]
    fn polynomial_relu(
        n in 1usize..=200,
        beta in prop::sample::select(vec![0.5, 1.0, 3.0, 40.0]),
        degree in prop::sample::select(vec![1usize, 2, 7, 16, 59]),
        seed in any::<u64>(),
    ) {
        let err = check_relu(n, beta, degree, seed).map_err(TestCaseError::fail)?;
        prop_assert!(err <= 1e-8 * beta.max(1.0), "{err}");
    }

    #[test]
    fn flatten_round_trip(w in 1usize..=16, c in 1usize..=4, seed in any::<u64>()) {
        prop_assert_eq!(check_flatten(w, c, seed).map_err(TestCaseError::fail)?, 0.0);
    }
}

#[test]
fn power_of_two_strides_agree() {
    for width in [4, 6, 8] {
        for stride in 1..=3 {
            for out in [1, 2, 4, 8] {
                if (out - 1) * stride >= width {
                    continue;
                }
                let (err, _, _) = check_stride(width, stride, out, 17).unwrap();
                assert!(err <= TOL, "W={width} S={stride} out={out}: {err}");
            }
        }
    }
}
