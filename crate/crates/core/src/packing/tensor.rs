use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `(C, H, W)` tensor, row-major within each channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "tensor ({channels}, {height}, {width}) needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Tensor3 {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor3 {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(c, i, j));
                }
            }
        }
        Tensor3 {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub fn set(&mut self, c: usize, i: usize, j: usize, value: f64) {
        self.data[(c * self.height + i) * self.width + j] = value;
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelShape {
    /// `(F, C, k, k)` convolution weights with `F` biases.
    Conv {
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
    },
    /// `(m, n)` fully connected weights with `m` biases.
    Dense { outputs: usize, inputs: usize },
}

impl KernelShape {
    pub fn weight_count(&self) -> usize {
        match *self {
            KernelShape::Conv {
                out_channels,
                in_channels,
                kernel,
            } => out_channels * in_channels * kernel * kernel,
            KernelShape::Dense { outputs, inputs } => outputs * inputs,
        }
    }

    pub fn bias_count(&self) -> usize {
        match *self {
            KernelShape::Conv { out_channels, .. } => out_channels,
            KernelShape::Dense { outputs, .. } => outputs,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            KernelShape::Conv {
                out_channels,
                in_channels,
                kernel,
            } => vec![out_channels, in_channels, kernel, kernel],
            KernelShape::Dense { outputs, inputs } => vec![outputs, inputs],
        }
    }
}

/// Layer weights and biases, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelTensor {
    shape: KernelShape,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl KernelTensor {
    pub fn new(shape: KernelShape, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if let KernelShape::Conv {
            out_channels,
            in_channels,
            kernel,
        } = shape
        {
            if out_channels == 0 || in_channels == 0 || kernel == 0 {
                return Err(Error::Shape(format!(
                    "convolution kernel dimensions must be positive, got {:?}",
                    shape.dims()
                )));
            }
        }
        if weights.len() != shape.weight_count() {
            return Err(Error::Shape(format!(
                "kernel {:?} needs {} weights, got {}",
                shape.dims(),
                shape.weight_count(),
                weights.len()
            )));
        }
        if bias.len() != shape.bias_count() {
            return Err(Error::Shape(format!(
                "kernel {:?} needs {} biases, got {}",
                shape.dims(),
                shape.bias_count(),
                bias.len()
            )));
        }
        Ok(KernelTensor {
            shape,
            weights,
            bias,
        })
    }

    pub fn conv(
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        Self::new(
            KernelShape::Conv {
                out_channels,
                in_channels,
                kernel,
            },
            weights,
            bias,
        )
    }

    pub fn dense(outputs: usize, inputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        Self::new(KernelShape::Dense { outputs, inputs }, weights, bias)
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// `(F, C, k)` for convolution kernels.
    pub fn conv_dims(&self) -> Result<(usize, usize, usize)> {
        match self.shape {
            KernelShape::Conv {
                out_channels,
                in_channels,
                kernel,
            } => Ok((out_channels, in_channels, kernel)),
            KernelShape::Dense { .. } => Err(Error::Shape(
                "expected a convolution kernel, found dense weights".into(),
            )),
        }
    }

    /// `(m, n)` for dense weights.
    pub fn dense_dims(&self) -> Result<(usize, usize)> {
        match self.shape {
            KernelShape::Dense { outputs, inputs } => Ok((outputs, inputs)),
            KernelShape::Conv { .. } => Err(Error::Shape(
                "expected dense weights, found a convolution kernel".into(),
            )),
        }
    }

    /// Convolution tap `weights[f][c][i][j]`.
    pub fn tap(&self, f: usize, c: usize, i: usize, j: usize) -> f64 {
        match self.shape {
            KernelShape::Conv {
                in_channels,
                kernel,
                ..
            } => self.weights[((f * in_channels + c) * kernel + i) * kernel + j],
            KernelShape::Dense { inputs, .. } => self.weights[f * inputs + c],
        }
    }

    /// Dense weight `W[row][col]`.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        match self.shape {
            KernelShape::Dense { inputs, .. } => self.weights[row * inputs + col],
            KernelShape::Conv { .. } => panic!("entry() on a convolution kernel"),
        }
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub(crate) fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }
}
