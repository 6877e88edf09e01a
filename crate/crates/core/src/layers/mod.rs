//! Layer primitives with explicit forward and backward passes.

mod activation;
mod conv;
mod dense;
mod loss;
mod merge;
mod pool;

use std::fmt;

pub use activation::{relu_backward, relu_forward};
pub use conv::{conv2d_backward, conv2d_backward_opt, conv2d_forward, conv_out_dim, ConvGrads};
pub use dense::{fc_backward, fc_forward, flatten, FcGrads};
pub use loss::euclidean_loss;
pub use merge::{blend, blend_backward, concat_channels, split_channels};
pub use pool::{maxpool_backward, maxpool_forward, maxpool_output_shape, ArgmaxMap};

use crate::error::{Error, Result};

/// One node kind of a network graph, with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    /// Non-overlapping 2×2 max pooling.
    MaxPool,
    Relu,
    Fc {
        out_units: usize,
    },
    Flatten,
    ConcatChannels,
    Blend {
        alpha: f64,
        beta: f64,
    },
}

impl LayerSpec {
    /// `C(d, f)` with same padding and the given stride.
    pub fn conv(out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let LayerSpec::Conv {
            out_channels,
            kernel,
            stride,
            ..
        } = *self
        {
            if stride == 0 {
                return Err(Error::invalid("conv stride must be >= 1"));
            }
            if kernel % 2 == 0 {
                return Err(Error::invalid(format!(
                    "conv kernel must be odd, got {kernel}"
                )));
            }
            if out_channels == 0 {
                return Err(Error::invalid("conv needs at least one filter"));
            }
        }
        if let LayerSpec::Fc { out_units: 0 } = *self {
            return Err(Error::invalid("fc needs at least one unit"));
        }
        Ok(())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::MaxPool => "maxpool",
            LayerSpec::Relu => "relu",
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::Flatten => "flatten",
            LayerSpec::ConcatChannels => "concat",
            LayerSpec::Blend { .. } => "blend",
        }
    }

    /// Number of graph inputs the node consumes.
    pub fn arity(&self) -> usize {
        match self {
            LayerSpec::ConcatChannels | LayerSpec::Blend { .. } => 2,
            _ => 1,
        }
    }

    /// Per-sample output shape (batch axis excluded) for the given inputs.
    pub fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        if inputs.len() != self.arity() {
            return Err(Error::invalid(format!(
                "{} expects {} input(s), got {}",
                self.kind(),
                self.arity(),
                inputs.len()
            )));
        }
        let x = inputs[0];
        let chw = |op: &'static str| -> Result<(usize, usize, usize)> {
            match *x {
                [c, h, w] => Ok((c, h, w)),
                _ => Err(Error::shape(op, "per-sample rank", 3, format!("{x:?}"))),
            }
        };
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                pad,
            } => {
                let (_, h, w) = chw("conv2d")?;
                Ok(vec![
                    out_channels,
                    conv_out_dim(h, kernel, stride, pad)?,
                    conv_out_dim(w, kernel, stride, pad)?,
                ])
            }
            LayerSpec::MaxPool => {
                let (c, h, w) = chw("maxpool")?;
                let out = maxpool_output_shape(&[1, c, h, w])?;
                Ok(out[1..].to_vec())
            }
            LayerSpec::Relu => Ok(x.to_vec()),
            LayerSpec::Fc { out_units } => {
                if x.len() != 1 {
                    return Err(Error::shape("fc", "per-sample rank", 1, format!("{x:?}")));
                }
                Ok(vec![out_units])
            }
            LayerSpec::Flatten => Ok(vec![x.iter().product()]),
            LayerSpec::ConcatChannels => {
                let y = inputs[1];
                if x.len() != y.len() || x.is_empty() || x[1..] != y[1..] {
                    return Err(Error::shape(
                        "concat_channels",
                        "spatial dims",
                        format!("{x:?}"),
                        format!("{y:?}"),
                    ));
                }
                let mut out = x.to_vec();
                out[0] += y[0];
                Ok(out)
            }
            LayerSpec::Blend { .. } => {
                if x != inputs[1] {
                    return Err(Error::shape(
                        "blend",
                        "shape",
                        format!("{x:?}"),
                        format!("{:?}", inputs[1]),
                    ));
                }
                Ok(x.to_vec())
            }
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride: 1,
                ..
            } => write!(f, "C({out_channels},{kernel})"),
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                ..
            } => write!(f, "C({out_channels},{kernel},s{stride})"),
            LayerSpec::MaxPool => write!(f, "P"),
            LayerSpec::Relu => write!(f, "ReLU"),
            LayerSpec::Fc { out_units } => write!(f, "FC({out_units})"),
            LayerSpec::Flatten => write!(f, "Flatten"),
            LayerSpec::ConcatChannels => write!(f, "Concat"),
            LayerSpec::Blend { alpha, beta } => write!(f, "Blend({alpha},{beta})"),
        }
    }
}
