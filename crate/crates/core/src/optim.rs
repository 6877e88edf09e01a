//! Parameters and SGD with momentum.

use crate::tensor::{Real, Tensor};

/// A trainable tensor with its gradient and momentum buffer.
///
/// Parameters sharing a `tie_group` are kept bitwise identical: their
/// gradients are summed across uses before the optimizer step, and every
/// member then receives the same update.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T: Real = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub momentum_buf: Tensor<T>,
    pub tie_group: Option<String>,
}

impl<T: Real> ParamTensor<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        let momentum_buf = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
            momentum_buf,
            tie_group: None,
        }
    }

    pub fn tied(mut self, group: impl Into<String>) -> Self {
        self.tie_group = Some(group.into());
        self
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// `v ← momentum·v + grad; value ← value − lr·v`, then clears the gradients.
pub fn sgd_step<'a, T: Real>(
    params: impl IntoIterator<Item = &'a mut ParamTensor<T>>,
    lr: T,
    momentum: T,
) {
    for p in params {
        let v = p.momentum_buf.data_mut();
        let w = p.value.data_mut();
        for ((w, v), g) in w.iter_mut().zip(v.iter_mut()).zip(p.grad.data()) {
            *v = momentum * *v + *g;
            *w -= lr * *v;
        }
        p.zero_grad();
    }
}
