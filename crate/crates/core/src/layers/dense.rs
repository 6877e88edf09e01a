//! Fully connected layer and flattening.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Real, Tensor};

#[derive(Debug, Clone)]
pub struct FcGrads<T: Real> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

fn fc_dims<T: Real>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, k) = match *input.shape() {
        [n, k] => (n, k),
        _ => {
            return Err(Error::shape(
                "fc",
                "input rank (flatten 4-D activations first)",
                2,
                format!("{:?}", input.shape()),
            ))
        }
    };
    let (m, wk) = match *weights.shape() {
        [m, wk] => (m, wk),
        _ => {
            return Err(Error::shape(
                "fc",
                "weights rank",
                2,
                format!("{:?}", weights.shape()),
            ))
        }
    };
    if wk != k {
        return Err(Error::shape("fc", "input features (K)", wk, k));
    }
    Ok((n, k, m))
}

/// `y = x · Wᵀ + b` for `x: [N,K]`, `W: [M,K]`, `b: [M]`.
pub fn fc_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, k, m) = fc_dims(input, weights)?;
    if bias.shape() != [m] {
        return Err(Error::shape(
            "fc",
            "bias length (M)",
            m,
            format!("{:?}", bias.shape()),
        ));
    }
    let mut out = Tensor::zeros(&[n, m]);
    for row in out.data_mut().chunks_mut(m.max(1)) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        false,
        true,
        n,
        k,
        m,
        T::one(),
        input.data(),
        weights.data(),
        T::one(),
        out.data_mut(),
    );
    Ok(out)
}

pub fn fc_backward<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
) -> Result<FcGrads<T>> {
    let (n, k, m) = fc_dims(input, weights)?;
    if grad_out.shape() != [n, m] {
        return Err(Error::shape(
            "fc_backward",
            "grad_out shape",
            format!("{:?}", [n, m]),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let gy = grad_out.data();
    let mut gx = Tensor::zeros(&[n, k]);
    gemm(
        false,
        false,
        n,
        m,
        k,
        T::one(),
        gy,
        weights.data(),
        T::zero(),
        gx.data_mut(),
    );
    let mut gw = Tensor::zeros(&[m, k]);
    gemm(
        true,
        false,
        m,
        n,
        k,
        T::one(),
        gy,
        input.data(),
        T::zero(),
        gw.data_mut(),
    );
    let mut gb = Tensor::zeros(&[m]);
    for row in gy.chunks(m.max(1)) {
        for (acc, &g) in gb.data_mut().iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok(FcGrads {
        input: gx,
        weights: gw,
        bias: gb,
    })
}

/// `[N, C, H, W] -> [N, C*H*W]` in channel-height-width order.
pub fn flatten<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let n = x.batch();
    let rest: usize = x.shape().iter().skip(1).product();
    x.clone().reshape(&[n, rest])
}
