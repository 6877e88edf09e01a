use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// Half mean squared Euclidean distance over the batch:
/// `loss = 1/(2N) · Σ‖pred_i − target_i‖²`, `grad = (pred − target)/N`.
pub fn euclidean_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    pred.check_same_shape("euclidean_loss", target)?;
    let n = T::lit(pred.batch().max(1) as f64);
    let mut sq = T::zero();
    let grad: Vec<T> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            sq += d * d;
            d / n
        })
        .collect();
    Ok((sq / (n + n), Tensor::from_vec(pred.shape().to_vec(), grad)?))
}
