//! A small f64 tensor stack: NCHW tensors, the layers DenseNet needs (with
//! hand-written backward passes) and the Adam optimizer.
//!
//! Layers keep whatever they need for the backward pass from the last
//! [`Layer::forward`] call. [`Layer::infer`] takes `&self`, uses running
//! statistics for normalization and may run concurrently.

mod layers;
mod ops;
mod optim;
mod tensor;

pub use layers::{AvgPool2d, BatchNorm, Conv2d, Layer, LayerNorm, Linear, MaxPool2d, Relu, Sequential};
pub use ops::{im2col, matmul};
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;

/// A named block of numbers owned by a layer. Trainable parameters carry a
/// gradient buffer of the same length; buffers such as running statistics
/// are saved with the model but never touched by the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub trainable: bool,
}

impl Param {
    pub fn trainable(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        let grad = vec![0.0; value.len()];
        Param {
            name: name.into(),
            shape,
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        Param {
            name: name.into(),
            shape,
            value,
            grad: Vec::new(),
            trainable: false,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}
