//! Stream merging: channel concatenation and weighted blending.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn outer_inner(shape: &[usize]) -> (usize, usize, usize) {
    let n = shape[0];
    let c = shape[1];
    let inner = shape[2..].iter().product();
    (n, c, inner)
}

/// Concatenates along axis 1. Works for `[N,C,H,W]` maps and flattened `[N,K]`
/// vectors alike; all other dimensions must agree.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.ndim() < 2 || a.ndim() != b.ndim() {
        return Err(Error::shape(
            "concat_channels",
            "rank",
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    if a.shape()[0] != b.shape()[0] {
        return Err(Error::shape(
            "concat_channels",
            "batch (N)",
            a.shape()[0],
            b.shape()[0],
        ));
    }
    if a.shape()[2..] != b.shape()[2..] {
        return Err(Error::shape(
            "concat_channels",
            "spatial dims",
            format!("{:?}", &a.shape()[2..]),
            format!("{:?}", &b.shape()[2..]),
        ));
    }
    let (n, ca, inner) = outer_inner(a.shape());
    let cb = b.shape()[1];
    let mut data = Vec::with_capacity(a.len() + b.len());
    for i in 0..n {
        data.extend_from_slice(&a.data()[i * ca * inner..(i + 1) * ca * inner]);
        data.extend_from_slice(&b.data()[i * cb * inner..(i + 1) * cb * inner]);
    }
    let mut shape = a.shape().to_vec();
    shape[1] = ca + cb;
    Tensor::from_vec(shape, data)
}

/// Inverse of [`concat_channels`]: channels `[0, split)` and `[split, C)`.
pub fn split_channels<T: Real>(x: &Tensor<T>, split: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    if x.ndim() < 2 || split > x.shape()[1] {
        return Err(Error::shape(
            "split_channels",
            "channel split",
            format!("<= {:?}", x.shape().get(1)),
            split,
        ));
    }
    let (n, c, inner) = outer_inner(x.shape());
    let cb = c - split;
    let mut a = Vec::with_capacity(n * split * inner);
    let mut b = Vec::with_capacity(n * cb * inner);
    for i in 0..n {
        let row = &x.data()[i * c * inner..(i + 1) * c * inner];
        a.extend_from_slice(&row[..split * inner]);
        b.extend_from_slice(&row[split * inner..]);
    }
    let mut sa = x.shape().to_vec();
    sa[1] = split;
    let mut sb = x.shape().to_vec();
    sb[1] = cb;
    Ok((Tensor::from_vec(sa, a)?, Tensor::from_vec(sb, b)?))
}

/// Elementwise `alpha * a + beta * b`.
pub fn blend<T: Real>(a: &Tensor<T>, b: &Tensor<T>, alpha: T, beta: T) -> Result<Tensor<T>> {
    a.check_same_shape("blend", b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| alpha * x + beta * y)
        .collect();
    Tensor::from_vec(a.shape().to_vec(), data)
}

pub fn blend_backward<T: Real>(grad_out: &Tensor<T>, alpha: T, beta: T) -> (Tensor<T>, Tensor<T>) {
    (grad_out.scale(alpha), grad_out.scale(beta))
}
