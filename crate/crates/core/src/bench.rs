//! Per-image inference timing.

use std::time::Instant;

use crate::edges::EdgeRegistry;
use crate::error::{Error, Result};
use crate::eval::TimingStats;
use crate::netzoo::Network;
use crate::tensor::Tensor;

pub const WARMUP_RUNS: usize = 3;
pub const MIN_RUNS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub arch: String,
    /// Measured inside a one-thread pool.
    pub single: TimingStats,
    /// Measured on the global pool, when requested.
    pub parallel: Option<TimingStats>,
    pub threads: usize,
}

fn time_runs(
    net: &mut Network<f32>,
    depth: &Tensor<f32>,
    edge_method: &str,
    n: usize,
) -> Result<TimingStats> {
    let registry = EdgeRegistry::default();
    let uses_edge = net.uses_edge();
    let mut one = || -> Result<f64> {
        let start = Instant::now();
        let edge = if uses_edge {
            Some(registry.extract(depth, edge_method)?.into_tensor())
        } else {
            None
        };
        let y = net.forward(depth, edge.as_ref())?;
        std::hint::black_box(y);
        Ok(start.elapsed().as_secs_f64() * 1e3)
    };
    for _ in 0..WARMUP_RUNS {
        one()?;
    }
    let times = (0..n).map(|_| one()).collect::<Result<Vec<_>>>()?;
    TimingStats::from_samples(&times)
}

/// Times `n` single-image forward passes (edge extraction included when the
/// network consumes edges) after [`WARMUP_RUNS`] warmups.
pub fn bench(
    net: &mut Network<f32>,
    depth: &Tensor<f32>,
    edge_method: &str,
    n: usize,
    parallel: bool,
) -> Result<BenchReport> {
    if n < MIN_RUNS {
        return Err(Error::invalid(format!(
            "bench needs n >= {MIN_RUNS}, got {n}"
        )));
    }
    if depth.batch() != 1 {
        return Err(Error::shape("bench", "batch", 1, depth.batch()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let single = pool.install(|| time_runs(net, depth, edge_method, n))?;
    let parallel = if parallel {
        Some(time_runs(net, depth, edge_method, n)?)
    } else {
        None
    };
    Ok(BenchReport {
        arch: net.arch().to_string(),
        single,
        parallel,
        threads: rayon::current_num_threads(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netzoo::{build, ArchId, BuildOptions};

    #[test]
    fn order_statistics_hold() {
        let opts = BuildOptions {
            input_size: 24,
            ..BuildOptions::default()
        };
        let mut net = build::<f32>(ArchId::FusionEarly, &opts).unwrap();
        let x = Tensor::full(&[1, 1, 24, 24], 0.2);
        let r = bench(&mut net, &x, "gradient", 10, true).unwrap();
        assert!(r.single.mean_ms > 0.0);
        assert!(r.single.p95_ms >= r.single.min_ms);
        assert!(r.single.max_ms >= r.single.p95_ms);
        assert_eq!(r.single.runs, 10);
        assert!(r.parallel.is_some());
        assert!(bench(&mut net, &x, "gradient", 9, false).is_err());
    }
}
