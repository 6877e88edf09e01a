//! 2-D convolution (cross-correlation) via im2col + GEMM.
//!
//! Samples in a batch are processed independently, in parallel when a rayon
//! pool with more than one thread is active. Weight and bias gradients are
//! computed per sample and then summed in sample order, so the result does not
//! depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Real, Tensor};

/// Gradients produced by [`conv2d_backward`].
#[derive(Debug, Clone)]
pub struct ConvGrads<T: Real> {
    /// `None` only when the caller asked to skip the input gradient.
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Output spatial size for one axis.
pub fn conv_out_dim(size: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid("conv2d: stride must be >= 1"));
    }
    if size + 2 * pad < kernel {
        return Err(Error::shape(
            "conv2d",
            "padded spatial size",
            format!(">= kernel {kernel}"),
            size + 2 * pad,
        ));
    }
    Ok((size + 2 * pad - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    d: usize,
    f: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new<T: Real>(
        input: &Tensor<T>,
        weights: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let (n, c, h, w) = input.dims4("conv2d")?;
        let (d, wc, fh, fw) = match *weights.shape() {
            [d, wc, fh, fw] => (d, wc, fh, fw),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    "weights rank",
                    4,
                    format!("{:?}", weights.shape()),
                ))
            }
        };
        if wc != c {
            return Err(Error::shape("conv2d", "input channels (C)", wc, c));
        }
        if fh != fw {
            return Err(Error::shape("conv2d", "kernel width", fh, fw));
        }
        if fh % 2 == 0 {
            return Err(Error::shape(
                "conv2d",
                "kernel size (must be odd)",
                "odd",
                fh,
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [d] {
                return Err(Error::shape(
                    "conv2d",
                    "bias length (D)",
                    d,
                    format!("{:?}", b.shape()),
                ));
            }
        }
        let ho = conv_out_dim(h, fh, stride, pad)?;
        let wo = conv_out_dim(w, fh, stride, pad)?;
        Ok(Self {
            n,
            c,
            h,
            w,
            d,
            f: fh,
            stride,
            pad,
            ho,
            wo,
        })
    }

    fn in_len(&self) -> usize {
        self.c * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.d * self.ho * self.wo
    }

    fn patch_len(&self) -> usize {
        self.c * self.f * self.f
    }

    fn spatial_out(&self) -> usize {
        self.ho * self.wo
    }

    /// Output indices `o` along one axis whose source `o*stride + k - pad`
    /// falls inside `[0, size)`.
    fn valid_range(&self, k: usize, size: usize, out: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if k >= self.pad {
            0
        } else {
            (self.pad - k).div_ceil(s)
        };
        let hi = if size + self.pad > k {
            ((size + self.pad - k - 1) / s + 1).min(out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// Unfolds one `[C,H,W]` sample into a `[C*f*f, Ho*Wo]` column matrix.
fn im2col<T: Real>(g: &Geometry, x: &[T], cols: &mut [T]) {
    let hw_out = g.spatial_out();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.f {
            let (oy_lo, oy_hi) = g.valid_range(ki, g.h, g.ho);
            for kj in 0..g.f {
                let (ox_lo, ox_hi) = g.valid_range(kj, g.w, g.wo);
                let row = (c * g.f + ki) * g.f + kj;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                dst.fill(T::zero());
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ki - g.pad;
                    let src_row = &plane[iy * g.w..(iy + 1) * g.w];
                    let dst_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if g.stride == 1 {
                        let ix0 = ox_lo + kj - g.pad;
                        dst_row[ox_lo..ox_hi].copy_from_slice(&src_row[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst_row[ox] = src_row[ox * g.stride + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Folds a column matrix back onto a `[C,H,W]` gradient, accumulating overlaps.
fn col2im<T: Real>(g: &Geometry, cols: &[T], dx: &mut [T]) {
    let hw_out = g.spatial_out();
    dx.fill(T::zero());
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.f {
            let (oy_lo, oy_hi) = g.valid_range(ki, g.h, g.ho);
            for kj in 0..g.f {
                let (ox_lo, ox_hi) = g.valid_range(kj, g.w, g.wo);
                let row = (c * g.f + ki) * g.f + kj;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ki - g.pad;
                    let src_row = &src[oy * g.wo..(oy + 1) * g.wo];
                    let dst_row = &mut plane[iy * g.w..(iy + 1) * g.w];
                    for ox in ox_lo..ox_hi {
                        dst_row[ox * g.stride + kj - g.pad] += src_row[ox];
                    }
                }
            }
        }
    }
}

/// `[N,C,H,W] * [D,C,f,f] + [D] -> [N,D,H',W']` with zero padding and no
/// kernel flip.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input, weights, Some(bias), stride, pad)?;
    let mut out = Tensor::zeros(&[g.n, g.d, g.ho, g.wo]);
    if g.n == 0 || g.out_len() == 0 {
        return Ok(out);
    }
    let w = weights.data();
    let b = bias.data();
    let hw_out = g.spatial_out();
    out.data_mut()
        .par_chunks_mut(g.out_len())
        .zip(input.data().par_chunks(g.in_len().max(1)))
        .for_each_init(
            || vec![T::zero(); g.patch_len() * hw_out],
            |cols, (y, x)| {
                im2col(&g, x, cols);
                for (d, row) in y.chunks_mut(hw_out).enumerate() {
                    row.fill(b[d]);
                }
                gemm(
                    false,
                    false,
                    g.d,
                    g.patch_len(),
                    hw_out,
                    T::one(),
                    w,
                    cols,
                    T::one(),
                    y,
                );
            },
        );
    Ok(out)
}

/// Exact gradients of [`conv2d_forward`] with respect to input, weights and bias.
pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads<T>> {
    conv2d_backward_opt(grad_out, input, weights, stride, pad, true)
}

/// As [`conv2d_backward`], skipping the input gradient when `need_input` is false.
pub fn conv2d_backward_opt<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let g = Geometry::new(input, weights, None, stride, pad)?;
    let expected = [g.n, g.d, g.ho, g.wo];
    if grad_out.shape() != expected {
        return Err(Error::shape(
            "conv2d_backward",
            "grad_out shape",
            format!("{expected:?}"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let hw_out = g.spatial_out();
    let patch = g.patch_len();
    let w = weights.data();

    let mut grad_in = if need_input {
        Some(Tensor::zeros(input.shape()))
    } else {
        None
    };

    let per_sample = |x: &[T], gy: &[T], dx: Option<&mut [T]>, cols: &mut Vec<T>| {
        im2col(&g, x, cols);
        let mut gw = vec![T::zero(); g.d * patch];
        gemm(
            false,
            true,
            g.d,
            hw_out,
            patch,
            T::one(),
            gy,
            cols,
            T::zero(),
            &mut gw,
        );
        let gb: Vec<T> = gy.chunks(hw_out).map(|r| r.iter().copied().sum()).collect();
        if let Some(dx) = dx {
            gemm(
                true,
                false,
                patch,
                g.d,
                hw_out,
                T::one(),
                w,
                gy,
                T::zero(),
                cols,
            );
            col2im(&g, cols, dx);
        }
        (gw, gb)
    };

    let in_len = g.in_len().max(1);
    let out_len = g.out_len().max(1);
    let partials: Vec<(Vec<T>, Vec<T>)> = match grad_in.as_mut() {
        Some(gi) => gi
            .data_mut()
            .par_chunks_mut(in_len)
            .zip(input.data().par_chunks(in_len))
            .zip(grad_out.data().par_chunks(out_len))
            .map_init(
                || vec![T::zero(); patch * hw_out],
                |cols, ((dx, x), gy)| per_sample(x, gy, Some(dx), cols),
            )
            .collect(),
        None => input
            .data()
            .par_chunks(in_len)
            .zip(grad_out.data().par_chunks(out_len))
            .map_init(
                || vec![T::zero(); patch * hw_out],
                |cols, (x, gy)| per_sample(x, gy, None, cols),
            )
            .collect(),
    };

    let mut grad_w = Tensor::zeros(weights.shape());
    let mut grad_b = Tensor::zeros(&[g.d]);
    for (gw, gb) in &partials {
        for (a, &b) in grad_w.data_mut().iter_mut().zip(gw) {
            *a += b;
        }
        for (a, &b) in grad_b.data_mut().iter_mut().zip(gb) {
            *a += b;
        }
    }
    Ok(ConvGrads {
        input: grad_in,
        weights: grad_w,
        bias: grad_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop cross-correlation.
    fn reference_conv(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &Tensor<f64>,
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let (n, c, h, wd) = x.dims4("ref").unwrap();
        let (d, f) = (w.shape()[0], w.shape()[2]);
        let ho = (h + 2 * pad - f) / stride + 1;
        let wo = (wd + 2 * pad - f) / stride + 1;
        let mut out = Tensor::zeros(&[n, d, ho, wo]);
        for ni in 0..n {
            for di in 0..d {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.data()[di];
                        for ci in 0..c {
                            for ki in 0..f {
                                for kj in 0..f {
                                    let iy = (oy * stride + ki) as isize - pad as isize;
                                    let ix = (ox * stride + kj) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xv = x.data()
                                        [((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                                    let wv = w.data()[((di * c + ci) * f + ki) * f + kj];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out.data_mut()[((ni * d + di) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn scalar_kernel_scales_input() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::from_vec(vec![1, 1, 1, 1], vec![2.0f32]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = conv2d_forward(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn same_padding_keeps_c1_geometry() {
        let x = Tensor::<f32>::zeros(&[1, 1, 96, 96]);
        let w = Tensor::zeros(&[24, 1, 5, 5]);
        let b = Tensor::zeros(&[24]);
        let y = conv2d_forward(&x, &w, &b, 1, 2).unwrap();
        assert_eq!(y.shape(), &[1, 24, 96, 96]);
    }

    #[test]
    fn matches_nested_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(stride, pad, f, h) in &[
            (1, 1, 3, 5),
            (2, 1, 3, 7),
            (1, 2, 5, 6),
            (2, 2, 5, 9),
            (1, 0, 3, 4),
        ] {
            let x = Tensor::<f64>::uniform(&[2, 2, h, h + 1], -1.0, 1.0, &mut rng);
            let w = Tensor::<f64>::uniform(&[3, 2, f, f], -1.0, 1.0, &mut rng);
            let b = Tensor::<f64>::uniform(&[3], -1.0, 1.0, &mut rng);
            let got = conv2d_forward(&x, &w, &b, stride, pad).unwrap();
            let want = reference_conv(&x, &w, &b, stride, pad);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!(
                    (a - b).abs() < 1e-12,
                    "stride {stride} pad {pad}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn single_precision_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::uniform(&[1, 2, 5, 5], -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[3], -1.0, 1.0, &mut rng);
        let want = reference_conv(&x, &w, &b, 1, 1);
        let got = conv2d_forward(&x.cast::<f32>(), &w.cast(), &b.cast(), 1, 1).unwrap();
        let max = got
            .data()
            .iter()
            .zip(want.data())
            .map(|(&a, &b)| (a as f64 - b).abs())
            .fold(0.0, f64::max);
        assert!(max < 1e-5, "max abs diff {max}");
    }

    #[test]
    fn rejects_channel_mismatch_naming_dimension() {
        let x = Tensor::<f32>::zeros(&[1, 2, 5, 5]);
        let w = Tensor::zeros(&[3, 1, 3, 3]);
        let b = Tensor::zeros(&[3]);
        let err = conv2d_forward(&x, &w, &b, 1, 1).unwrap_err().to_string();
        assert!(err.contains("input channels"), "{err}");
    }

    #[test]
    fn rejects_even_kernel_and_too_small_input() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let b = Tensor::zeros(&[1]);
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 1, 2, 2]), &b, 1, 0).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 1, 5, 5]), &b, 1, 0).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 1, 3, 3]), &b, 0, 1).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::uniform(&[2, 2, 6, 6], -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
        let gy = Tensor::zeros(&[2, 3, 6, 6]);
        let g = conv2d_backward(&gy, &x, &w, 1, 1).unwrap();
        assert_eq!(g.input.unwrap().max_abs(), 0.0);
        assert_eq!(g.weights.max_abs(), 0.0);
        assert_eq!(g.bias.max_abs(), 0.0);
    }

    #[test]
    fn bias_gradient_sums_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::<f64>::uniform(&[2, 1, 4, 4], -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::uniform(&[2, 1, 3, 3], -1.0, 1.0, &mut rng);
        let gy = Tensor::<f64>::uniform(&[2, 2, 4, 4], -1.0, 1.0, &mut rng);
        let g = conv2d_backward(&gy, &x, &w, 1, 1).unwrap();
        for d in 0..2 {
            let mut want = 0.0;
            for n in 0..2 {
                want += gy.data()[(n * 2 + d) * 16..(n * 2 + d + 1) * 16]
                    .iter()
                    .sum::<f64>();
            }
            assert!((g.bias.data()[d] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::<f64>::uniform(&[1, 1, 4, 4], -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::uniform(&[1, 1, 3, 3], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[1], -1.0, 1.0, &mut rng);
        let r = Tensor::<f64>::uniform(&[1, 1, 4, 4], -1.0, 1.0, &mut rng);
        let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            let y = conv2d_forward(x, w, b, 1, 1).unwrap();
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let g = conv2d_backward(&r, &x, &w, 1, 1).unwrap();
        let eps = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let num = (loss(&xp, &w, &b) - loss(&xm, &w, &b)) / (2.0 * eps);
            assert!(rel(g.input.as_ref().unwrap().data()[i], num) < 1e-4);
        }
        for i in 0..w.len() {
            let mut wp = w.clone();
            wp.data_mut()[i] += eps;
            let mut wm = w.clone();
            wm.data_mut()[i] -= eps;
            let num = (loss(&x, &wp, &b) - loss(&x, &wm, &b)) / (2.0 * eps);
            assert!(rel(g.weights.data()[i], num) < 1e-4);
        }
    }

    #[test]
    fn shared_weights_accumulate_per_use_gradients() {
        // y = conv(x1; w) + conv(x2; w): total dL/dw is the sum of both uses.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x1 = Tensor::<f64>::uniform(&[1, 1, 5, 5], -1.0, 1.0, &mut rng);
        let x2 = Tensor::<f64>::uniform(&[1, 1, 5, 5], -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::uniform(&[2, 1, 3, 3], -1.0, 1.0, &mut rng);
        let r = Tensor::<f64>::uniform(&[1, 2, 5, 5], -1.0, 1.0, &mut rng);
        let g1 = conv2d_backward(&r, &x1, &w, 1, 1).unwrap().weights;
        let g2 = conv2d_backward(&r, &x2, &w, 1, 1).unwrap().weights;
        // both uses batched together
        let x12 = Tensor::stack_batch(&[&x1, &x2]).unwrap();
        let r12 = Tensor::stack_batch(&[&r, &r]).unwrap();
        let g12 = conv2d_backward(&r12, &x12, &w, 1, 1).unwrap().weights;
        for i in 0..w.len() {
            assert!((g1.data()[i] + g2.data()[i] - g12.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn strided_output_size() {
        assert_eq!(conv_out_dim(24, 3, 2, 1).unwrap(), 12);
        assert_eq!(conv_out_dim(96, 5, 1, 2).unwrap(), 96);
        assert_eq!(conv_out_dim(5, 3, 2, 0).unwrap(), 2);
    }
}
