//! Non-overlapping 2×2 max pooling with argmax routing.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Records which input element won each pooling window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArgmaxMap {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    /// Flat index into the input for every output element.
    indices: Vec<usize>,
}

impl ArgmaxMap {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

/// Output shape for an `[N,C,H,W]` input (trailing odd row/column dropped).
pub fn maxpool_output_shape(input_shape: &[usize]) -> Result<Vec<usize>> {
    match *input_shape {
        [n, c, h, w] => {
            if h < 2 || w < 2 {
                return Err(Error::shape(
                    "maxpool",
                    "spatial size",
                    ">= 2x2",
                    format!("{h}x{w}"),
                ));
            }
            Ok(vec![n, c, h / 2, w / 2])
        }
        _ => Err(Error::shape(
            "maxpool",
            "rank",
            4,
            format!("{input_shape:?}"),
        )),
    }
}

pub fn maxpool_forward<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, ArgmaxMap)> {
    let out_shape = maxpool_output_shape(input.shape())?;
    let (n, c, h, w) = input.dims4("maxpool")?;
    let (ho, wo) = (out_shape[2], out_shape[3]);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut indices = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let top = base + 2 * oy * w + 2 * ox;
                // scan order (0,0),(0,1),(1,0),(1,1); strict > keeps the first on ties
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                indices.push(best);
            }
        }
    }
    let map = ArgmaxMap {
        input_shape: input.shape().to_vec(),
        output_shape: out_shape.clone(),
        indices,
    };
    Ok((Tensor::from_vec(out_shape, out)?, map))
}

pub fn maxpool_backward<T: Real>(
    grad_out: &Tensor<T>,
    argmax: &ArgmaxMap,
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if argmax.input_shape != input_shape {
        return Err(Error::StaleArgmax(format!(
            "map was recorded for input {:?}, backward asked for {:?}",
            argmax.input_shape, input_shape
        )));
    }
    if grad_out.shape() != argmax.output_shape.as_slice() {
        return Err(Error::StaleArgmax(format!(
            "map covers output {:?}, grad_out is {:?}",
            argmax.output_shape,
            grad_out.shape()
        )));
    }
    let mut grad_in = Tensor::zeros(input_shape);
    let gi = grad_in.data_mut();
    for (&idx, &g) in argmax.indices.iter().zip(grad_out.data()) {
        gi[idx] += g;
    }
    Ok(grad_in)
}
