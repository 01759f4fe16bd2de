use super::common::{rot, select, sum_all, sum_slots};
use super::FcConfig;
use crate::error::{Error, Result};
use crate::packing::{plain, KernelTensor};
use crate::simd::{SlotBackend, SlotVector};

/// Group size used to merge `outputs` neuron values with at most `budget`
/// distinct rotation indices.
pub fn merge_group(outputs: usize, budget: usize) -> usize {
    if budget >= outputs.saturating_sub(1) {
        outputs.max(1)
    } else {
        budget
    }
}

/// `y = W x + b` for the `n` inputs in slots `[0, n)`; `y_j` ends in slot `j`.
///
/// Each neuron is one weight-row multiplication, a slot sum and a slot-0
/// mask. Neurons are merged in groups of `g`: inside a group by direct
/// rotations `-1..-(g-1)`, and groups by a Horner sweep with `-g`.
pub fn fully_connected(
    backend: &dyn SlotBackend,
    x: &SlotVector,
    cfg: &FcConfig,
    weights: &KernelTensor,
) -> Result<SlotVector> {
    cfg.validate(backend.slot_count())?;
    let (m, n) = weights.dense_dims()?;
    if (m, n) != (cfg.outputs, cfg.inputs) {
        return Err(Error::Shape(format!(
            "dense weights ({m}, {n}) do not match layer ({}, {})",
            cfg.outputs, cfg.inputs
        )));
    }
    let slots = backend.slot_count();
    let first = select(slots, [0], 1.0);
    let mut neurons = Vec::with_capacity(m);
    for k in 0..m {
        let row = plain(weights.weights()[k * n..(k + 1) * n].to_vec(), slots);
        let p = backend.mult_plain(x, &row)?;
        let s = sum_slots(backend, &p, n)?;
        neurons.push(backend.mult_plain(&s, &first)?);
    }

    let g = merge_group(m, cfg.merge_budget);
    let mut groups = Vec::with_capacity(m.div_ceil(g));
    for chunk in neurons.chunks(g) {
        let shifted = chunk
            .iter()
            .enumerate()
            .map(|(i, v)| rot(backend, v, -(i as i64)))
            .collect::<Result<Vec<_>>>()?;
        groups.push(sum_all(backend, &shifted)?);
    }
    let mut out = groups.pop().expect("at least one output");
    while let Some(prev) = groups.pop() {
        out = rot(backend, &out, -(g as i64))?;
        out = backend.add(&out, &prev)?;
    }
    backend.add_plain(&out, &plain(weights.bias().to_vec(), slots))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simd::{ContextConfig, Simulator};

    #[test]
    fn small_matrix() {
        let s = Simulator::new(ContextConfig::with_slots(16).unwrap()).unwrap();
        let w = KernelTensor::dense(2, 2, vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 1.0]).unwrap();
        let x = s.encrypt(&[1.0, 1.0]).unwrap();
        let y = fully_connected(&s, &x, &FcConfig::new(2, 2), &w).unwrap();
        assert_eq!(&y.slots()[..3], &[3.0, 8.0, 0.0]);
        assert_eq!(x.level() - y.level(), 2);
    }

    #[test]
    fn merge_budget_changes_keys_not_values() {
        let s = Simulator::new(ContextConfig::with_slots(128).unwrap()).unwrap();
        let (m, n) = (10, 64);
        let w: Vec<f64> = (0..m * n).map(|i| ((i * 37) % 17) as f64 - 8.0).collect();
        let b: Vec<f64> = (0..m).map(|i| i as f64).collect();
        let k = KernelTensor::dense(m, n, w.clone(), b.clone()).unwrap();
        let xv: Vec<f64> = (0..n).map(|i| (i % 5) as f64).collect();
        let x = s.encrypt(&xv).unwrap();
        let mut results = Vec::new();
        for budget in [1, 2, 3, 10] {
            let trace = s.attach_recorder();
            let y = fully_connected(&s, &x, &FcConfig::new(n, m).with_merge_budget(budget), &k).unwrap();
            s.detach_recorder();
            let merge_keys = trace.rotation_indices().into_iter().filter(|&i| i < 0).count();
            assert!(merge_keys <= budget, "budget {budget} used {merge_keys}");
            results.push(y.slots().to_vec());
        }
        for r in &results[1..] {
            assert_eq!(r, &results[0]);
        }
        for j in 0..m {
            let want: f64 = (0..n).map(|i| w[j * n + i] * xv[i]).sum::<f64>() + b[j];
            assert_eq!(results[0][j], want);
        }
        assert!(results[0][m..].iter().all(|&v| v == 0.0));
    }
}
