//! Central finite-difference verification of the backward passes.
//!
//! Every check runs in `f64`. The error metric for one scalar is
//! `|analytic - numeric| / max(1, |analytic|, |numeric|)` and checks report the
//! maximum over everything probed.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{euclidean_loss, LayerSpec};
use crate::netzoo::{build, ArchId, BuildOptions, Graph, GraphBuilder};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-4;

/// Tolerance used by the layer suite.
pub const LAYER_TOLERANCE: f64 = 1e-6;

/// Tolerance used by the end-to-end network check.
pub const NETWORK_TOLERANCE: f64 = 1e-4;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Result of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub probes: usize,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn ensure_finite(graph: &Graph<f64>) -> Result<()> {
    for node in graph.nodes() {
        if let Some(index) = graph.value(&node.name).and_then(|v| v.first_non_finite()) {
            return Err(Error::NonFinite {
                layer: node.name.clone(),
                index,
            });
        }
    }
    Ok(())
}

/// Inputs that keep the probe away from kinks: relu sees `|x| >= 0.1`, max
/// pooling sees pairwise distinct values spaced far apart relative to `eps`.
fn trial_input(layer: &LayerSpec, shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    match layer {
        LayerSpec::Relu => Tensor::from_fn(shape, |_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        }),
        LayerSpec::MaxPool => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            let data = order
                .iter()
                .map(|&k| k as f64 / n as f64 * 2.0 - 1.0)
                .collect();
            Tensor::from_vec(shape.to_vec(), data).expect("shape product")
        }
        _ => Tensor::uniform(shape, -1.0, 1.0, rng),
    }
}

/// Checks one layer on inputs of `input_shapes` (batch axis included) using
/// the scalar loss `L = Σ r·y` with a random `r`. Probes every input element
/// and every parameter.
pub fn grad_check(
    layer: &LayerSpec,
    input_shapes: &[&[usize]],
    eps: f64,
    seed: u64,
) -> Result<f64> {
    if input_shapes.len() != layer.arity() {
        return Err(Error::invalid(format!(
            "{layer} takes {} input(s), got {} shape(s)",
            layer.arity(),
            input_shapes.len()
        )));
    }
    if input_shapes.iter().any(|s| s.is_empty()) {
        return Err(Error::invalid("trial shapes need a batch axis"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::<f64>::new(seed);
    let slots: Vec<_> = input_shapes
        .iter()
        .enumerate()
        .map(|(i, s)| b.input(&format!("x{i}"), &s[1..]))
        .collect();
    let out = b.layer("layer", *layer, &slots)?;
    let mut graph = b.finish(out);
    for p in graph.params_mut() {
        // nonzero biases so their gradient path is exercised with real values
        let shape = p.value.shape().to_vec();
        if shape.len() == 1 {
            p.value = Tensor::uniform(&shape, -0.5, 0.5, &mut rng);
        }
    }
    let mut inputs: Vec<Tensor<f64>> = input_shapes
        .iter()
        .map(|s| trial_input(layer, s, &mut rng))
        .collect();

    let y = {
        let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
        graph.forward(&refs)?
    };
    ensure_finite(&graph)?;
    let r = Tensor::uniform(y.shape(), -1.0, 1.0, &mut rng);
    graph.backward_per_use(&r, true)?;

    let loss = |graph: &mut Graph<f64>, inputs: &[Tensor<f64>]| -> Result<f64> {
        let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
        let y = graph.forward(&refs)?;
        ensure_finite(graph)?;
        Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
    };

    let mut worst = 0f64;
    for i in 0..inputs.len() {
        let analytic = graph
            .input_grad(i)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for k in 0..inputs[i].len() {
            let x0 = inputs[i].data()[k];
            inputs[i].data_mut()[k] = x0 + eps;
            let lp = loss(&mut graph, &inputs)?;
            inputs[i].data_mut()[k] = x0 - eps;
            let lm = loss(&mut graph, &inputs)?;
            inputs[i].data_mut()[k] = x0;
            worst = worst.max(rel_error(analytic.data()[k], (lp - lm) / (2.0 * eps)));
        }
    }
    let analytic: Vec<Tensor<f64>> = graph.params().iter().map(|p| p.grad.clone()).collect();
    for (pi, ga) in analytic.iter().enumerate() {
        for k in 0..ga.len() {
            let w0 = graph.params()[pi].value.data()[k];
            graph.params_mut()[pi].value.data_mut()[k] = w0 + eps;
            let lp = loss(&mut graph, &inputs)?;
            graph.params_mut()[pi].value.data_mut()[k] = w0 - eps;
            let lm = loss(&mut graph, &inputs)?;
            graph.params_mut()[pi].value.data_mut()[k] = w0;
            worst = worst.max(rel_error(ga.data()[k], (lp - lm) / (2.0 * eps)));
        }
    }
    Ok(worst)
}

/// Checks the gradient of the Euclidean loss with respect to the prediction.
pub fn grad_check_loss(shape: &[usize], eps: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pred = Tensor::<f64>::uniform(shape, -1.0, 1.0, &mut rng);
    let target = Tensor::<f64>::uniform(shape, -1.0, 1.0, &mut rng);
    let (_, grad) = euclidean_loss(&pred, &target)?;
    let mut worst = 0f64;
    for k in 0..pred.len() {
        let x0 = pred.data()[k];
        pred.data_mut()[k] = x0 + eps;
        let (lp, _) = euclidean_loss(&pred, &target)?;
        pred.data_mut()[k] = x0 - eps;
        let (lm, _) = euclidean_loss(&pred, &target)?;
        pred.data_mut()[k] = x0;
        worst = worst.max(rel_error(grad.data()[k], (lp - lm) / (2.0 * eps)));
    }
    Ok(worst)
}

/// End-to-end check of a whole network under the Euclidean loss: `probes`
/// parameter scalars are drawn uniformly from all parameters.
pub fn grad_check_network(
    arch: ArchId,
    input_size: usize,
    batch: usize,
    probes: usize,
    eps: f64,
    seed: u64,
) -> Result<f64> {
    let opts = BuildOptions {
        input_size,
        seed,
        ..BuildOptions::default()
    };
    let mut net = build::<f64>(arch, &opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let shape = [batch, 1, input_size, input_size];
    let depth = Tensor::<f64>::uniform(&shape, -1.0, 1.0, &mut rng);
    let edge = net
        .uses_edge()
        .then(|| Tensor::<f64>::uniform(&shape, 0.0, 1.0, &mut rng));
    let target = Tensor::<f64>::uniform(&[batch, net.out_dim()], -1.0, 1.0, &mut rng);

    let pred = net.forward(&depth, edge.as_ref())?;
    ensure_finite(net.graph())?;
    let (_, g) = euclidean_loss(&pred, &target)?;
    net.backward(&g)?;

    // one entry per scalar, tied copies counted once via their first member
    let mut pool = Vec::new();
    for (pi, p) in net.params().iter().enumerate() {
        let first_of_group = match &p.tie_group {
            Some(group) => net.graph().tie_groups()[group][0] == pi,
            None => true,
        };
        if first_of_group {
            pool.extend((0..p.value.len()).map(|k| (pi, k)));
        }
    }
    let chosen: Vec<(usize, usize)> = pool.choose_multiple(&mut rng, probes).copied().collect();
    let groups = net.graph().tie_groups();
    let mut worst = 0f64;
    for (pi, k) in chosen {
        let analytic = net.params()[pi].grad.data()[k];
        let members = match &net.params()[pi].tie_group {
            Some(group) => groups[group].clone(),
            None => vec![pi],
        };
        let w0 = net.params()[pi].value.data()[k];
        let mut eval = |w: f64| -> Result<f64> {
            for &m in &members {
                net.params_mut()[m].value.data_mut()[k] = w;
            }
            let y = net.forward(&depth, edge.as_ref())?;
            Ok(euclidean_loss(&y, &target)?.0)
        };
        let lp = eval(w0 + eps)?;
        let lm = eval(w0 - eps)?;
        eval(w0)?;
        worst = worst.max(rel_error(analytic, (lp - lm) / (2.0 * eps)));
    }
    Ok(worst)
}

/// The per-layer suite: every primitive at the shapes the networks use,
/// scaled down.
pub fn layer_suite(eps: f64, seed: u64) -> Result<Vec<CheckResult>> {
    let cases: Vec<(&str, LayerSpec, Vec<Vec<usize>>)> = vec![
        (
            "conv5x5 stride1",
            LayerSpec::conv(3, 5, 1),
            vec![vec![2, 2, 7, 7]],
        ),
        (
            "conv5x5 stride2",
            LayerSpec::conv(3, 5, 2),
            vec![vec![2, 2, 8, 8]],
        ),
        (
            "conv3x3 stride1",
            LayerSpec::conv(4, 3, 1),
            vec![vec![2, 3, 6, 6]],
        ),
        (
            "conv3x3 stride2",
            LayerSpec::conv(4, 3, 2),
            vec![vec![2, 3, 7, 7]],
        ),
        ("maxpool", LayerSpec::MaxPool, vec![vec![2, 3, 7, 6]]),
        ("relu", LayerSpec::Relu, vec![vec![2, 3, 5, 5]]),
        ("fc", LayerSpec::Fc { out_units: 5 }, vec![vec![3, 7]]),
        ("flatten", LayerSpec::Flatten, vec![vec![2, 3, 2, 2]]),
        (
            "concat",
            LayerSpec::ConcatChannels,
            vec![vec![2, 2, 3, 3], vec![2, 3, 3, 3]],
        ),
        (
            "blend",
            LayerSpec::Blend {
                alpha: 0.8,
                beta: 0.2,
            },
            vec![vec![2, 1, 4, 4], vec![2, 1, 4, 4]],
        ),
    ];
    let mut out = Vec::new();
    for (i, (name, layer, shapes)) in cases.into_iter().enumerate() {
        let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        let err = grad_check(&layer, &refs, eps, seed + i as u64)?;
        let in_elems: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        out.push(CheckResult {
            name: name.to_owned(),
            max_rel_error: err,
            probes: in_elems,
            tolerance: LAYER_TOLERANCE,
        });
    }
    out.push(CheckResult {
        name: "euclidean loss".into(),
        max_rel_error: grad_check_loss(&[3, 18], eps, seed + 100)?,
        probes: 54,
        tolerance: LAYER_TOLERANCE,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fc_is_exact() {
        let err = grad_check(&LayerSpec::Fc { out_units: 4 }, &[&[2, 6]], DEFAULT_EPS, 1).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn conv3x3_pad1() {
        let err = grad_check(&LayerSpec::conv(2, 3, 1), &[&[1, 2, 5, 5]], DEFAULT_EPS, 2).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn relu_away_from_kink() {
        let err = grad_check(&LayerSpec::Relu, &[&[1, 2, 4, 4]], DEFAULT_EPS, 3).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn suite_passes() {
        for r in layer_suite(DEFAULT_EPS, 10).unwrap() {
            assert!(r.passed(), "{}: {}", r.name, r.max_rel_error);
        }
    }

    #[test]
    fn wrong_arity_rejected() {
        assert!(grad_check(&LayerSpec::ConcatChannels, &[&[1, 1, 2, 2]], DEFAULT_EPS, 0).is_err());
    }

    #[test]
    fn catches_a_wrong_gradient() {
        // sanity: the metric actually sees a discrepancy
        assert!(rel_error(1.0, 1.1) > 1e-2);
        assert_eq!(rel_error(0.0, 0.0), 0.0);
        assert!((rel_error(1e-3, 2e-3) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn small_network_end_to_end() {
        let err = grad_check_network(ArchId::SingleShallow, 16, 2, 10, 1e-6, 4).unwrap();
        assert!(err < NETWORK_TOLERANCE, "{err}");
    }
}
