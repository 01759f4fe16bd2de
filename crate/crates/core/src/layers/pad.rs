use super::common::{rot, span};
use crate::error::{Error, Result};
use crate::packing::PackedTensor;
use crate::simd::SlotBackend;

/// Zero-pads every channel by `padding` on all four sides.
///
/// Each input row is masked out, then rows are re-assembled with a Horner
/// sweep from the last row down: `-2P` between rows of a channel and
/// `-2P(W_p + 1)` across a channel boundary. One final rotation by
/// `-(P*W_p + P)` supplies the top and left borders. At most three rotation
/// indices and one level.
pub fn pad_input(backend: &dyn SlotBackend, x: &PackedTensor, padding: usize) -> Result<PackedTensor> {
    if padding == 0 {
        return Ok(x.clone());
    }
    let (c, w) = (x.channels(), x.width());
    let wp = w + 2 * padding;
    let n = backend.slot_count();
    if c * wp * wp > n {
        return Err(Error::CapacityExceeded {
            needed: c * wp * wp,
            available: n,
        });
    }
    let within = -2 * padding as i64;
    let across = within * (wp as i64 + 1);
    let rows = c * w;
    let row = |r: usize| backend.mult_plain(x.data(), &span(n, r * w, (r + 1) * w, 1.0));

    let mut out = row(rows - 1)?;
    for r in (0..rows - 1).rev() {
        let shift = if (r + 1) % w == 0 { across } else { within };
        out = rot(backend, &out, shift)?;
        out = backend.add(&out, &row(r)?)?;
    }
    out = rot(backend, &out, -((padding * wp + padding) as i64))?;
    PackedTensor::new(out, c, wp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packing::{flatten, unflatten, Tensor3};
    use crate::simd::{ContextConfig, Simulator};

    #[test]
    fn pads_single_channel() {
        let s = Simulator::new(ContextConfig::with_slots(64).unwrap()).unwrap();
        let x = flatten(&s, &Tensor3::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let y = pad_input(&s, &x, 1).unwrap();
        let want = [
            0., 0., 0., 0., 0., 1., 2., 0., 0., 3., 4., 0., 0., 0., 0., 0.,
        ];
        assert_eq!(&y.data().slots()[..16], &want);
        assert!(y.data().slots()[16..].iter().all(|&v| v == 0.0));
        assert_eq!(y.level(), x.level() - 1);
    }

    #[test]
    fn pads_many_channels_with_few_keys() {
        let s = Simulator::new(ContextConfig::with_slots(1024).unwrap()).unwrap();
        for (c, w, p) in [(3, 4, 1), (2, 5, 2), (4, 1, 1), (1, 3, 3)] {
            let t = Tensor3::from_fn(c, w, w, |a, i, j| (a * 31 + i * 7 + j) as f64 + 1.0);
            let x = flatten(&s, &t).unwrap();
            let trace = s.attach_recorder();
            let y = unflatten(&s, &pad_input(&s, &x, p).unwrap());
            s.detach_recorder();
            let wp = w + 2 * p;
            let want = Tensor3::from_fn(c, wp, wp, |a, i, j| {
                if i < p || j < p || i >= p + w || j >= p + w {
                    0.0
                } else {
                    t.get(a, i - p, j - p)
                }
            });
            assert_eq!(y, want);
            assert!(trace.rotation_indices().len() <= c + 3);
            assert_eq!(trace.rotation_count(), c * w);
        }
    }

    #[test]
    fn zero_padding_is_identity() {
        let s = Simulator::new(ContextConfig::with_slots(16).unwrap()).unwrap();
        let x = flatten(&s, &Tensor3::zeros(1, 2, 2)).unwrap();
        let y = pad_input(&s, &x, 0).unwrap();
        assert_eq!(y.data().slots(), x.data().slots());
        assert_eq!(y.level(), x.level());
    }
}
