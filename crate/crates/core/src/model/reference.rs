//! Direct plaintext implementations of every layer: exact ReLU, explicit
//! padding and striding, no packing. This is the oracle the packed layers
//! are tested against.

use super::graph::{LayerOp, Node};
use crate::error::{Error, Result};
use crate::layers::{output_width, PoolKind};
use crate::packing::{KernelTensor, Tensor3};

/// Cross-correlation with zero padding and stride; rectangular inputs allowed.
pub fn conv2d_ref(x: &Tensor3, kernel: &KernelTensor, stride: usize, padding: usize) -> Result<Tensor3> {
    let (f_count, c, k) = kernel.conv_dims()?;
    if x.channels() != c {
        return Err(Error::Shape(format!(
            "input has {} channels, kernel expects {c}",
            x.channels()
        )));
    }
    let h_out = output_width(x.height(), k, stride, padding)?;
    let w_out = output_width(x.width(), k, stride, padding)?;
    let p = padding as isize;
    let at = |ch: usize, i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= x.height() as isize || j >= x.width() as isize {
            0.0
        } else {
            x.get(ch, i as usize, j as usize)
        }
    };
    Ok(Tensor3::from_fn(f_count, h_out, w_out, |f, oi, oj| {
        let mut acc = kernel.bias()[f];
        for ch in 0..c {
            for di in 0..k {
                for dj in 0..k {
                    let i = (oi * stride + di) as isize - p;
                    let j = (oj * stride + dj) as isize - p;
                    acc += kernel.tap(f, ch, di, dj) * at(ch, i, j);
                }
            }
        }
        acc
    }))
}

pub fn pad_ref(x: &Tensor3, padding: usize) -> Tensor3 {
    Tensor3::from_fn(
        x.channels(),
        x.height() + 2 * padding,
        x.width() + 2 * padding,
        |c, i, j| {
            let inside = i >= padding && j >= padding && i < x.height() + padding && j < x.width() + padding;
            if inside {
                x.get(c, i - padding, j - padding)
            } else {
                0.0
            }
        },
    )
}

/// Mean over each `k x k` window, stride `S`.
pub fn avg_pool_ref(x: &Tensor3, k: usize, stride: usize) -> Result<Tensor3> {
    let h_out = output_width(x.height(), k, stride, 0)?;
    let w_out = output_width(x.width(), k, stride, 0)?;
    let scale = 1.0 / (k * k) as f64;
    Ok(Tensor3::from_fn(x.channels(), h_out, w_out, |c, oi, oj| {
        let mut acc = 0.0;
        for di in 0..k {
            for dj in 0..k {
                acc += x.get(c, oi * stride + di, oj * stride + dj);
            }
        }
        acc * scale
    }))
}

/// Per-channel mean as a `(C, 1, 1)` tensor.
pub fn global_avg_pool_ref(x: &Tensor3) -> Tensor3 {
    let m = x.height() * x.width();
    Tensor3::from_fn(x.channels(), 1, 1, |c, _, _| {
        x.data()[c * m..(c + 1) * m].iter().sum::<f64>() / m as f64
    })
}

pub fn fc_ref(x: &[f64], weights: &KernelTensor) -> Result<Vec<f64>> {
    let (m, n) = weights.dense_dims()?;
    if x.len() != n {
        return Err(Error::Shape(format!("dense layer expects {n} inputs, got {}", x.len())));
    }
    Ok((0..m)
        .map(|k| weights.bias()[k] + (0..n).map(|i| weights.entry(k, i) * x[i]).sum::<f64>())
        .collect())
}

pub fn relu_ref(x: f64) -> f64 {
    x.max(0.0)
}

/// Runs `nodes` on `input`. `weights` supplies conv/dense tensors;
/// `observe` sees every ReLU input.
pub fn run_reference(
    nodes: &[Node],
    input: &Tensor3,
    weights: &dyn Fn(&Node) -> Result<KernelTensor>,
    observe: &mut dyn FnMut(&Node, &Tensor3),
) -> Result<Tensor3> {
    let mut x = input.clone();
    for node in nodes {
        x = run_node(node, x, weights, observe).map_err(|e| e.in_layer(&node.id))?;
    }
    Ok(x)
}

fn run_node(
    node: &Node,
    x: Tensor3,
    weights: &dyn Fn(&Node) -> Result<KernelTensor>,
    observe: &mut dyn FnMut(&Node, &Tensor3),
) -> Result<Tensor3> {
    Ok(match &node.op {
        LayerOp::Conv { config, .. } => conv2d_ref(&x, &weights(node)?, config.stride, config.padding)?,
        LayerOp::Pool(p) => match p.kind {
            PoolKind::Average => avg_pool_ref(&x, p.kernel, p.stride)?,
            PoolKind::Global | PoolKind::WholeChannel => global_avg_pool_ref(&x),
        },
        LayerOp::Fc { .. } => {
            let y = fc_ref(x.data(), &weights(node)?)?;
            Tensor3::new(y.len(), 1, 1, y)?
        }
        LayerOp::Relu { .. } => {
            observe(node, &x);
            let (c, h, w) = (x.channels(), x.height(), x.width());
            Tensor3::new(c, h, w, x.into_data().into_iter().map(relu_ref).collect())?
        }
        LayerOp::Bootstrap => x,
        LayerOp::Residual { body, shortcut } => {
            let b = run_reference(body, &x, weights, observe)?;
            let s = run_reference(shortcut, &x, weights, observe)?;
            let (c, h, w) = (b.channels(), b.height(), b.width());
            let sum = b.data().iter().zip(s.data()).map(|(p, q)| p + q).collect();
            Tensor3::new(c, h, w, sum)?
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_kernel() {
        let x = Tensor3::new(1, 3, 3, (1..=9).map(f64::from).collect()).unwrap();
        let k = KernelTensor::conv(1, 1, 2, vec![1.0; 4], vec![0.0]).unwrap();
        let y = conv2d_ref(&x, &k, 1, 0).unwrap();
        assert_eq!(y.data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn padding_and_pooling() {
        let x = Tensor3::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = pad_ref(&x, 1);
        assert_eq!(
            p.data(),
            &[0., 0., 0., 0., 0., 1., 2., 0., 0., 3., 4., 0., 0., 0., 0., 0.]
        );
        assert_eq!(avg_pool_ref(&x, 2, 2).unwrap().data(), &[2.5]);
        assert_eq!(global_avg_pool_ref(&x).data(), &[2.5]);
    }

    #[test]
    fn dense_and_relu() {
        let w = KernelTensor::dense(2, 2, vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(fc_ref(&[1.0, 1.0], &w).unwrap(), vec![3.0, 8.0]);
        assert_eq!(relu_ref(-1.0), 0.0);
        assert_eq!(relu_ref(2.0), 2.0);
    }

    #[test]
    fn rectangular_convolution() {
        let x = Tensor3::from_fn(1, 2, 4, |_, i, j| (i * 4 + j) as f64);
        let k = KernelTensor::conv(1, 1, 1, vec![2.0], vec![1.0]).unwrap();
        let y = conv2d_ref(&x, &k, 1, 0).unwrap();
        assert_eq!((y.height(), y.width()), (2, 4));
        assert_eq!(y.get(0, 1, 3), 15.0);
    }
}
