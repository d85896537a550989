//! N-dimensional tensors with reverse-mode automatic differentiation.
//!
//! The [`Tape`] records operations during a forward pass (define-by-run);
//! [`Tape::backward`] replays them in reverse to populate gradients of
//! tracked leaves. All arithmetic is 32-bit float.

mod ops;
mod tape;

pub use tape::{Tape, TensorId};

use crate::error::{Error, Result};

/// Dense row-major float tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape_mismatch(
                "tensor construction",
                numel,
                data.len(),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }
}

/// Output extent of a convolution along one axis:
/// `floor((in + 2p - d*(k-1) - 1) / s) + 1`.
pub fn conv_out_extent(
    input: usize,
    k: usize,
    padding: usize,
    stride: usize,
    dilation: usize,
) -> Result<usize> {
    let window = dilation * (k - 1) + 1;
    let padded = input + 2 * padding;
    if padded < window {
        return Err(Error::InvalidArgument(format!(
            "conv window {window} exceeds padded extent {padded} (in={input}, k={k}, p={padding}, d={dilation})"
        )));
    }
    Ok((padded - window) / stride + 1)
}

/// Output extent of a pooling window: `floor((in - k) / s) + 1`.
pub fn pool_out_extent(input: usize, k: usize, stride: usize) -> Result<usize> {
    if input < k {
        return Err(Error::InvalidArgument(format!(
            "pool window {k} exceeds extent {input}"
        )));
    }
    Ok((input - k) / stride + 1)
}
