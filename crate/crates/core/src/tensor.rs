//! Dense row-major tensors and per-clip frame storage.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A dense `f64` tensor with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch { expected, got: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: alloc::vec![0.0; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Slice of the `i`-th entry along the leading axis.
    pub fn outer(&self, i: usize) -> &[f64] {
        let stride: usize = self.shape[1..].iter().product();
        &self.data[i * stride..(i + 1) * stride]
    }
}

/// A video clip: `frames × channels × height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub id: String,
    frames: Tensor,
}

impl Clip {
    pub fn new(id: impl Into<String>, frames: Tensor) -> Result<Self> {
        if frames.shape().len() != 4 {
            return Err(Error::ShapeMismatch { expected: 4, got: frames.shape().len() });
        }
        Ok(Self { id: id.into(), frames })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.frames.outer(t)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.frames
    }

    pub fn into_tensor(self) -> Tensor {
        self.frames
    }
}
