//! Fingertip error metrics: err_f and the mP(τ) curve.

use std::io::Write;
use std::time::Instant;

use crate::data::{denormalize_joints, Sample, NUM_FINGERTIPS};
use crate::edges::{EdgeRegistry, GRADIENT};
use crate::error::{Error, Result};
use crate::netzoo::Network;
use crate::tensor::Tensor;

/// Thresholds of the mP curve, 1..=50 mm.
pub const TAU_MAX_MM: u32 = 50;
pub const DEFAULT_TAU_MM: f64 = 10.0;
/// Conventional discard threshold (30 cm) for failed detections.
pub const DISCARD_30CM: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingStats {
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub runs: usize,
}

impl TimingStats {
    /// `samples` in milliseconds; p95 is the nearest-rank percentile.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("no timing samples"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Ok(Self {
            mean_ms: sorted.iter().sum::<f64>() / n as f64,
            p95_ms: sorted[rank - 1],
            min_ms: sorted[0],
            max_ms: sorted[n - 1],
            runs: n,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// One row per frame, one column per fingertip (mm).
    pub errors: Vec<[f64; NUM_FINGERTIPS]>,
    /// Palm errors (mm) when the network regresses the palm.
    pub palm_errors: Option<Vec<f64>>,
    /// Mean fingertip error over the pairs that were not discarded.
    pub err_f: f64,
    pub discard_over_mm: Option<f64>,
    pub discarded: usize,
    /// `(τ, fraction of (frame, fingertip) pairs with error < τ)`.
    pub mp_curve: Vec<(f64, f64)>,
    /// `(τ, fraction of frames whose worst fingertip error is < τ)`.
    pub mp_frame_curve: Vec<(f64, f64)>,
    pub tau_mm: f64,
    pub timing: Option<TimingStats>,
}

fn fraction_below(values: &[f64], tau: f64) -> f64 {
    values.iter().filter(|&&e| e < tau).count() as f64 / values.len() as f64
}

impl EvalReport {
    /// Aggregates raw per-fingertip errors.
    pub fn from_errors(
        errors: Vec<[f64; NUM_FINGERTIPS]>,
        discard_over_mm: Option<f64>,
        tau_mm: f64,
    ) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::invalid("evaluation needs at least one frame"));
        }
        if errors
            .iter()
            .flatten()
            .any(|e| !(e.is_finite() && *e >= 0.0))
        {
            return Err(Error::invalid("fingertip errors must be finite and >= 0"));
        }
        let pairs: Vec<f64> = errors.iter().flatten().copied().collect();
        let kept: Vec<f64> = match discard_over_mm {
            Some(limit) => pairs.iter().copied().filter(|&e| e <= limit).collect(),
            None => pairs.clone(),
        };
        let discarded = pairs.len() - kept.len();
        if kept.is_empty() {
            return Err(Error::invalid(
                "every fingertip pair exceeded the discard threshold",
            ));
        }
        let err_f = kept.iter().sum::<f64>() / kept.len() as f64;
        let worst: Vec<f64> = errors
            .iter()
            .map(|row| row.iter().copied().fold(0.0, f64::max))
            .collect();
        let taus = (1..=TAU_MAX_MM).map(f64::from);
        Ok(Self {
            mp_curve: taus
                .clone()
                .map(|t| (t, fraction_below(&pairs, t)))
                .collect(),
            mp_frame_curve: taus.map(|t| (t, fraction_below(&worst, t))).collect(),
            errors,
            palm_errors: None,
            err_f,
            discard_over_mm,
            discarded,
            tau_mm,
            timing: None,
        })
    }

    pub fn frames(&self) -> usize {
        self.errors.len()
    }

    /// Fraction of (frame, fingertip) pairs with error below `tau`.
    pub fn mp_at(&self, tau: f64) -> f64 {
        let pairs: Vec<f64> = self.errors.iter().flatten().copied().collect();
        fraction_below(&pairs, tau)
    }

    /// Fraction of frames whose worst fingertip is below `tau`.
    pub fn mp_frame_at(&self, tau: f64) -> f64 {
        let worst: Vec<f64> = self
            .errors
            .iter()
            .map(|row| row.iter().copied().fold(0.0, f64::max))
            .collect();
        fraction_below(&worst, tau)
    }

    /// `key,value` summary. Floats use shortest round-trip formatting.
    pub fn write_summary_csv<W: Write>(&self, method: &str, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["key", "value"])?;
        let mut row = |k: &str, v: String| out.write_record([k, v.as_str()]);
        row("method", method.to_owned())?;
        row("frames", self.frames().to_string())?;
        row("err_f_mm", self.err_f.to_string())?;
        row("tau_mm", self.tau_mm.to_string())?;
        row("mp_at_tau", self.mp_at(self.tau_mm).to_string())?;
        row("mp_frame_at_tau", self.mp_frame_at(self.tau_mm).to_string())?;
        row(
            "discard_over_mm",
            self.discard_over_mm
                .map_or("none".into(), |d| d.to_string()),
        )?;
        row("discarded", self.discarded.to_string())?;
        if let Some(p) = &self.palm_errors {
            row(
                "palm_err_mm",
                (p.iter().sum::<f64>() / p.len() as f64).to_string(),
            )?;
        }
        if let Some(t) = &self.timing {
            row("ms_per_image_mean", t.mean_ms.to_string())?;
            row("ms_per_image_p95", t.p95_ms.to_string())?;
        }
        out.flush()?;
        Ok(())
    }

    /// Per-frame errors: `frame,thumb,index,middle,ring,pinky[,palm]`.
    pub fn write_errors_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["frame", "thumb", "index", "middle", "ring", "pinky"];
        if self.palm_errors.is_some() {
            header.push("palm");
        }
        out.write_record(&header)?;
        for (i, row) in self.errors.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            if let Some(p) = &self.palm_errors {
                rec.push(p[i].to_string());
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Whitespace-separated `tau mP mP_frame` table for gnuplot.
    pub fn write_curve<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# tau_mm mP mP_frame")?;
        for ((t, p), (_, f)) in self.mp_curve.iter().zip(&self.mp_frame_curve) {
            writeln!(w, "{t} {p} {f}")?;
        }
        Ok(())
    }
}

/// 3D distances (mm) between predicted and true fingertips for one frame.
pub fn fingertip_errors(pred: &[f32], sample: &Sample) -> Result<[f64; NUM_FINGERTIPS]> {
    let joints = denormalize_joints(pred, &sample.meta)?;
    let mut out = [0.0; NUM_FINGERTIPS];
    for (j, e) in out.iter_mut().enumerate() {
        *e = dist(joints.points[j], sample.joints.points[j]);
    }
    Ok(out)
}

fn dist(a: [f32; 3], b: [f32; 3]) -> f64 {
    (0..3)
        .map(|k| (a[k] as f64 - b[k] as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub discard_over_mm: Option<f64>,
    pub tau_mm: f64,
    pub batch_size: usize,
    /// Measure per-image forward time (makes the report machine-dependent).
    pub timing: bool,
    /// Computes edge images the dataset lacks; `None` requires stored edges.
    pub edge_method: Option<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            discard_over_mm: None,
            tau_mm: DEFAULT_TAU_MM,
            batch_size: 32,
            timing: false,
            edge_method: Some(GRADIENT.to_owned()),
        }
    }
}

/// Raw network outputs (normalized) for every sample, in dataset order.
pub fn predict(
    net: &mut Network<f32>,
    samples: &[Sample],
    opts: &EvalOptions,
) -> Result<(Vec<Vec<f32>>, Vec<f64>)> {
    let registry = EdgeRegistry::default();
    let need_edge = net.uses_edge();
    let mut preds = Vec::with_capacity(samples.len());
    let mut times = Vec::new();
    for chunk in samples.chunks(opts.batch_size.max(1)) {
        let start = Instant::now();
        let depth: Vec<&Tensor<f32>> = chunk.iter().map(|s| &s.depth).collect();
        let depth = Tensor::stack_batch(&depth)?;
        let edge = if need_edge {
            let mut e = Vec::with_capacity(chunk.len());
            for s in chunk {
                e.push(match (&s.edge, &opts.edge_method) {
                    (Some(e), _) => e.tensor().clone(),
                    (None, Some(m)) => registry.extract(&s.depth, m)?.into_tensor(),
                    (None, None) => {
                        return Err(Error::MissingStream {
                            arch: net.arch().to_string(),
                            stream: "edge",
                        })
                    }
                });
            }
            let refs: Vec<&Tensor<f32>> = e.iter().collect();
            Some(Tensor::stack_batch(&refs)?)
        } else {
            None
        };
        let y = net.forward(&depth, edge.as_ref())?;
        if opts.timing {
            let ms = start.elapsed().as_secs_f64() * 1e3 / chunk.len() as f64;
            times.extend(std::iter::repeat_n(ms, chunk.len()));
        }
        let k = net.out_dim();
        preds.extend(y.data().chunks_exact(k).map(<[f32]>::to_vec));
    }
    Ok((preds, times))
}

/// Scores predictions (normalized, 15 or 18 values each) against `samples`.
pub fn evaluate_predictions(
    preds: &[Vec<f32>],
    samples: &[Sample],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if preds.len() != samples.len() {
        return Err(Error::shape(
            "evaluate",
            "prediction count",
            samples.len(),
            preds.len(),
        ));
    }
    let errors = preds
        .iter()
        .zip(samples)
        .map(|(p, s)| fingertip_errors(p, s))
        .collect::<Result<Vec<_>>>()?;
    let mut report = EvalReport::from_errors(errors, opts.discard_over_mm, opts.tau_mm)?;
    if preds.iter().all(|p| p.len() == 18) && samples.iter().all(|s| s.joints.has_palm()) {
        let palm = preds
            .iter()
            .zip(samples)
            .map(|(p, s)| {
                Ok(dist(
                    denormalize_joints(p, &s.meta)?.points[5],
                    s.joints.points[5],
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        report.palm_errors = Some(palm);
    }
    Ok(report)
}

/// Runs `net` over `samples` and scores it.
pub fn evaluate(
    net: &mut Network<f32>,
    samples: &[Sample],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let (preds, times) = predict(net, samples, opts)?;
    let mut report = evaluate_predictions(&preds, samples, opts)?;
    if opts.timing {
        report.timing = Some(TimingStats::from_samples(&times)?);
    }
    Ok(report)
}
