//! Chebyshev interpolation on `[-1, 1]` and its evaluation over slot vectors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packing::plain;
use crate::simd::{PlainVector, SlotBackend, SlotVector};

/// Default interpolation degree of the ReLU approximation.
pub const DEFAULT_DEGREE: usize = 59;

/// Max |p(x) - relu(x)| of the degree-59 interpolant over
/// `[-1, 1] \ (-0.05, 0.05)`, measured on a 10^5-point uniform grid by an
/// independent numpy evaluation (1.242257e-3) and rounded up.
pub const RELU_EPS_59: f64 = 1.2423e-3;

/// Sup-norm error of the same interpolant over all of `[-1, 1]`; attained
/// at the origin (8.336190e-3 measured).
pub const RELU_SUP_59: f64 = 8.3362e-3;

/// Coefficients `c_0..c_D` of the degree-`D` interpolant of `f` through the
/// `D + 1` Chebyshev roots `x_j = cos(pi (j + 1/2) / (D + 1))`.
pub fn cheb_coefficients(f: impl Fn(f64) -> f64, degree: usize) -> Vec<f64> {
    let n = degree + 1;
    let theta: Vec<f64> = (0..n).map(|j| PI * (j as f64 + 0.5) / n as f64).collect();
    let samples: Vec<f64> = theta.iter().map(|t| f(t.cos())).collect();
    (0..n)
        .map(|k| {
            let s: f64 = theta
                .iter()
                .zip(&samples)
                .map(|(t, fx)| fx * (k as f64 * t).cos())
                .sum();
            let c = 2.0 * s / n as f64;
            if k == 0 {
                c / 2.0
            } else {
                c
            }
        })
        .collect()
}

/// Scalar Clenshaw evaluation of `sum c_k T_k(x)`.
pub fn clenshaw(coeffs: &[f64], x: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &c in coeffs.iter().skip(1).rev() {
        let b = 2.0 * x * b1 - b2 + c;
        b2 = b1;
        b1 = b;
    }
    x * b1 - b2 + coeffs.first().copied().unwrap_or(0.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChebStrategy {
    /// Build every `T_k` by the product rule `T_{a+b} = 2 T_a T_b - T_{a-b}`,
    /// then take one plaintext-weighted sum. Depth `ceil(log2 D) + 1`.
    #[default]
    ProductTree,
    /// Clenshaw's backward recurrence. Depth `D`.
    Clenshaw,
}

/// Levels consumed by [`cheb_eval_with`] for a degree-`degree` series.
pub fn cheb_depth(degree: usize, strategy: ChebStrategy) -> u32 {
    match (degree, strategy) {
        (0, _) => 1,
        (d, ChebStrategy::ProductTree) => (usize::BITS - (d - 1).leading_zeros()) + 1,
        (d, ChebStrategy::Clenshaw) => d as u32,
    }
}

/// Evaluates the series slot-wise over all slots.
pub fn cheb_eval(backend: &dyn SlotBackend, x: &SlotVector, coeffs: &[f64]) -> Result<SlotVector> {
    cheb_eval_with(backend, x, coeffs, backend.slot_count(), ChebStrategy::default())
}

/// Evaluates the series on slots `[0, active)`; every other slot of the
/// result is zero.
pub fn cheb_eval_with(
    backend: &dyn SlotBackend,
    x: &SlotVector,
    coeffs: &[f64],
    active: usize,
    strategy: ChebStrategy,
) -> Result<SlotVector> {
    let slots = backend.slot_count();
    if coeffs.is_empty() {
        return Err(Error::InvalidConfig("empty Chebyshev series".into()));
    }
    if active == 0 || active > slots {
        return Err(Error::InvalidConfig(format!(
            "active slot count {active} outside 1..={slots}"
        )));
    }
    let masked = |c: f64| plain(vec![c; active], slots);
    let d = coeffs.len() - 1;
    if d == 0 {
        let zero = backend.mult_plain(x, &masked(0.0))?;
        return backend.add_plain(&zero, &masked(coeffs[0]));
    }
    match strategy {
        ChebStrategy::ProductTree => product_tree(backend, x, coeffs, &masked),
        ChebStrategy::Clenshaw => clenshaw_slots(backend, x, coeffs, &masked),
    }
}

fn product_tree(
    backend: &dyn SlotBackend,
    x: &SlotVector,
    coeffs: &[f64],
    masked: &dyn Fn(f64) -> PlainVector,
) -> Result<SlotVector> {
    let d = coeffs.len() - 1;
    let minus_one = plain(vec![-1.0; backend.slot_count()], backend.slot_count());
    let mut t: Vec<SlotVector> = Vec::with_capacity(d + 1);
    t.push(x.clone()); // placeholder for T_0, never read
    t.push(x.clone());
    for k in 2..=d {
        let a = 1usize << (usize::BITS - 1 - (k - 1).leading_zeros());
        let b = k - a;
        let prod = backend.mult_cipher(&t[a], &t[b])?;
        let twice = backend.add(&prod, &prod)?;
        let tk = if a == b {
            backend.add_plain(&twice, &minus_one)?
        } else {
            backend.sub(&twice, &t[a - b])?
        };
        t.push(tk);
    }
    let terms = (1..=d)
        .map(|k| backend.mult_plain(&t[k], &masked(coeffs[k])))
        .collect::<Result<Vec<_>>>()?;
    let sum = super::common::sum_all(backend, &terms)?;
    backend.add_plain(&sum, &masked(coeffs[0]))
}

enum Term {
    Zero,
    Plain(f64),
    Cipher(SlotVector),
}

fn clenshaw_slots(
    backend: &dyn SlotBackend,
    x: &SlotVector,
    coeffs: &[f64],
    masked: &dyn Fn(f64) -> PlainVector,
) -> Result<SlotVector> {
    // x * b, for a previously computed b_{k+1}
    let times_x = |b: &Term| -> Result<Option<SlotVector>> {
        match b {
            Term::Zero => Ok(None),
            Term::Plain(c) => backend.mult_plain(x, &masked(*c)).map(Some),
            Term::Cipher(v) => backend.mult_cipher(x, v).map(Some),
        }
    };
    let minus = |acc: SlotVector, b: &Term| -> Result<SlotVector> {
        match b {
            Term::Zero => Ok(acc),
            Term::Plain(c) => backend.add_plain(&acc, &masked(-*c)),
            Term::Cipher(v) => backend.sub(&acc, v),
        }
    };
    let d = coeffs.len() - 1;
    let mut b1 = Term::Plain(coeffs[d]);
    let mut b2 = Term::Zero;
    for k in (1..d).rev() {
        let xb = times_x(&b1)?.expect("b_{k+1} is nonzero for k < D");
        let next = backend.add_plain(&minus(backend.add(&xb, &xb)?, &b2)?, &masked(coeffs[k]))?;
        b2 = std::mem::replace(&mut b1, Term::Cipher(next));
    }
    let xb = times_x(&b1)?.expect("b_1 is nonzero");
    backend.add_plain(&minus(xb, &b2)?, &masked(coeffs[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simd::{ContextConfig, Simulator};

    #[test]
    fn basis_coefficients() {
        for d in 1..8 {
            let c = cheb_coefficients(|x| x, d);
            assert!((c[1] - 1.0).abs() < 1e-12);
            assert!(c.iter().enumerate().all(|(k, v)| k == 1 || v.abs() < 1e-12));
        }
        let c = cheb_coefficients(|x| 2.0 * x * x - 1.0, 5);
        assert!((c[2] - 1.0).abs() < 1e-12);
        assert!(c.iter().enumerate().all(|(k, v)| k == 2 || v.abs() < 1e-12));
    }

    #[test]
    fn interpolates_at_nodes() {
        let f = |x: f64| (3.0 * x).sin() + x.abs();
        for d in [3, 10, 59] {
            let c = cheb_coefficients(f, d);
            for j in 0..=d {
                let x = (PI * (j as f64 + 0.5) / (d + 1) as f64).cos();
                assert!((clenshaw(&c, x) - f(x)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn slot_evaluation_matches_scalar() {
        let s = Simulator::new(ContextConfig::with_slots(64).unwrap()).unwrap();
        let xs: Vec<f64> = (0..64).map(|i| -1.0 + 2.0 * i as f64 / 63.0).collect();
        let x = s.encrypt(&xs).unwrap();
        let c: Vec<f64> = (0..11).map(|k| ((k * 7 % 5) as f64 - 2.0) / (k + 1) as f64).collect();
        for strategy in [ChebStrategy::ProductTree, ChebStrategy::Clenshaw] {
            let y = cheb_eval_with(&s, &x, &c, 40, strategy).unwrap();
            assert_eq!(x.level() - y.level(), cheb_depth(10, strategy));
            for (j, &xj) in xs.iter().enumerate() {
                let want = if j < 40 { clenshaw(&c, xj) } else { 0.0 };
                assert!((y.slots()[j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn t2_at_half() {
        let s = Simulator::new(ContextConfig::with_slots(8).unwrap()).unwrap();
        let x = s.encrypt(&[0.5; 8]).unwrap();
        let y = cheb_eval(&s, &x, &[0.0, 0.0, 1.0]).unwrap();
        assert!((y.slots()[0] + 0.5).abs() < 1e-15);
        let y = cheb_eval(&s, &x, &[0.75]).unwrap();
        assert!(y.slots().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn product_tree_depth_for_default_degree() {
        assert_eq!(cheb_depth(59, ChebStrategy::ProductTree), 7);
        assert_eq!(cheb_depth(1, ChebStrategy::ProductTree), 1);
        assert_eq!(cheb_depth(2, ChebStrategy::ProductTree), 2);
        assert_eq!(cheb_depth(4, ChebStrategy::ProductTree), 3);
        assert_eq!(cheb_depth(5, ChebStrategy::ProductTree), 4);
    }
}
