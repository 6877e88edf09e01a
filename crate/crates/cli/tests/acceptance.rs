//! Acceptance checks. Prints one `PASS` / `FAIL` line per criterion and exits
//! nonzero when any fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use fingernet::bench::bench;
use fingernet::data::{normalize_joints, synth_generate, CropMeta, JointSet, Sample, SynthConfig};
use fingernet::edges::GRADIENT;
use fingernet::eval::{evaluate, evaluate_predictions, EvalOptions, EvalReport, DISCARD_30CM};
use fingernet::gradcheck::{
    grad_check_network, layer_suite, DEFAULT_EPS, LAYER_TOLERANCE, NETWORK_TOLERANCE,
};
use fingernet::layers::LayerSpec;
use fingernet::netzoo::{build, ArchId, BuildOptions, Network};
use fingernet::train::{TrainConfig, Trainer};
use fingernet::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(
        elapsed <= Duration::from_secs(limit_s),
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()),
    )
}

fn rand_input(n: usize, size: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(&[n, 1, size, size], -1.0, 1.0, &mut rng)
}

fn gradient_suite() -> Check {
    let t = Instant::now();
    let results = layer_suite(DEFAULT_EPS, 1).map_err(|e| e.to_string())?;
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    for r in &results {
        ensure(
            r.passed() && r.tolerance <= LAYER_TOLERANCE,
            format!("{} rel err {:e}", r.name, r.max_rel_error),
        )?;
    }
    within(t.elapsed(), 60)?;
    Ok(format!(
        "{} primitives, max rel err {worst:.2e}",
        results.len()
    ))
}

fn end_to_end_gradient() -> Check {
    let t = Instant::now();
    let err =
        grad_check_network(ArchId::SingleDeep, 24, 2, 20, 1e-6, 3).map_err(|e| e.to_string())?;
    ensure(err < NETWORK_TOLERANCE, format!("max rel err {err:e}"))?;
    within(t.elapsed(), 300)?;
    Ok(format!("20 probes, max rel err {err:.2e}"))
}

// (out channels, in channels, kernel) for each convolution of the deep trunk
fn deep_convs(in_ch: usize) -> Vec<(usize, usize, usize)> {
    let mut v = vec![
        (24, in_ch, 5),
        (24, 24, 3),
        (24, 24, 3),
        (24, 24, 3),
        (24, 24, 3),
    ];
    v.extend([
        (32, 24, 3),
        (32, 32, 3),
        (48, 32, 3),
        (48, 48, 3),
        (48, 48, 3),
    ]);
    v.extend([(96, 48, 3), (128, 96, 3)]);
    v
}

fn conv_params(convs: &[(usize, usize, usize)]) -> usize {
    convs.iter().map(|&(d, c, f)| d * c * f * f + d).sum()
}

fn head_params(fc_in: usize, out: usize) -> usize {
    (fc_in * 1024 + 1024) + (1024 * 1024 + 1024) + (1024 * out + out)
}

fn drop_convs(skip: &[usize]) -> Vec<(usize, usize, usize)> {
    deep_convs(1)
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !skip.contains(i))
        .map(|(_, c)| c)
        .collect()
}

fn counting_oracle(arch: ArchId) -> usize {
    let deep = conv_params(&deep_convs(1)) + head_params(4608, 18);
    match arch {
        ArchId::SingleDeep | ArchId::FusionEnhance => deep,
        ArchId::SingleDeepFingerOnly => conv_params(&deep_convs(1)) + head_params(4608, 15),
        ArchId::SingleMedian => conv_params(&drop_convs(&[4, 9, 11])) + head_params(3456, 18),
        ArchId::SingleShallow => conv_params(&drop_convs(&[4, 9, 10, 11])) + head_params(1728, 18),
        ArchId::FusionEarly => conv_params(&deep_convs(2)) + head_params(4608, 18),
        ArchId::FusionSlow => {
            let mut rest = deep_convs(1)[5..].to_vec();
            rest[0] = (32, 48, 3);
            conv_params(&deep_convs(1)[..5]) + conv_params(&rest) + head_params(4608, 18)
        }
        ArchId::FusionLate => conv_params(&deep_convs(1)) + head_params(9216, 18),
        ArchId::FusionResult => 2 * deep,
    }
}

fn architecture_contracts() -> Check {
    let d = rand_input(2, 96, 1);
    let e = rand_input(2, 96, 2).map(|v| v.abs());
    for arch in ArchId::ALL {
        let mut net =
            build::<f32>(arch, &BuildOptions::default()).map_err(|e| format!("{arch}: {e}"))?;
        let y = net
            .forward(&d, Some(&e))
            .map_err(|e| format!("{arch}: {e}"))?;
        let out = if arch == ArchId::SingleDeepFingerOnly {
            15
        } else {
            18
        };
        ensure(
            y.shape() == [2, out],
            format!("{arch}: output {:?}", y.shape()),
        )?;
        ensure(
            net.param_count() == counting_oracle(arch),
            format!(
                "{arch}: {} params, oracle {}",
                net.param_count(),
                counting_oracle(arch)
            ),
        )?;
    }
    let net = build::<f32>(ArchId::SingleDeep, &BuildOptions::default()).unwrap();
    let got: Vec<(String, Vec<usize>)> = net
        .graph()
        .trace()
        .into_iter()
        .filter(|r| !matches!(r.layer, LayerSpec::Relu))
        .map(|r| (r.node, r.shape))
        .collect();
    let want: &[(&str, &[usize])] = &[
        ("C1", &[24, 96, 96]),
        ("P1", &[24, 48, 48]),
        ("C2", &[24, 48, 48]),
        ("C3", &[24, 48, 48]),
        ("C4", &[24, 48, 48]),
        ("C5", &[24, 48, 48]),
        ("P2", &[24, 24, 24]),
        ("C6", &[32, 24, 24]),
        ("C7", &[32, 24, 24]),
        ("C8", &[48, 24, 24]),
        ("C9", &[48, 24, 24]),
        ("C10", &[48, 24, 24]),
        ("P3", &[48, 12, 12]),
        ("C11", &[96, 12, 12]),
        ("C12", &[128, 12, 12]),
        ("P4", &[128, 6, 6]),
        ("flatten", &[4608]),
        ("FC1", &[1024]),
        ("FC2", &[1024]),
        ("FC3", &[18]),
    ];
    let same =
        got.len() == want.len() && got.iter().zip(want).all(|(g, w)| g.0 == w.0 && g.1 == w.1);
    ensure(same, format!("single-deep trace differs: {got:?}"))?;
    Ok(format!("{} architectures", ArchId::ALL.len()))
}

fn copy_stream(single: &mut Network<f32>, fused: &Network<f32>, prefix: &str) {
    for p in single.params_mut() {
        p.value = fused
            .graph()
            .param(&format!("{prefix}{}", p.name))
            .unwrap()
            .value
            .clone();
    }
}

fn tied_after_training(arch: ArchId, samples: &[Sample]) -> Result<(), String> {
    let config = TrainConfig {
        arch,
        batch_size: 2,
        max_iters: 100,
        seed: 4,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config, samples).map_err(|e| e.to_string())?;
    while !trainer.done() {
        trainer.step().map_err(|e| e.to_string())?;
    }
    let net = trainer.network();
    let groups = net.graph().tie_groups();
    ensure(!groups.is_empty(), format!("{arch}: no tied parameters"))?;
    for members in groups.values() {
        let first = &net.params()[members[0]];
        for &m in &members[1..] {
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            ensure(
                bits(&first.value) == bits(&net.params()[m].value),
                format!(
                    "{arch}: {} drifted from {}",
                    net.params()[m].name,
                    first.name
                ),
            )?;
        }
    }
    Ok(())
}

fn fusion_oracles() -> Check {
    let opts = BuildOptions {
        input_size: 32,
        seed: 5,
        ..BuildOptions::default()
    };
    let d = rand_input(3, 32, 20);
    let e = rand_input(3, 32, 21).map(|v| v.abs());

    let mut fused = build::<f32>(ArchId::FusionResult, &opts).unwrap();
    let y = fused.forward(&d, Some(&e)).unwrap();
    let mut single = build::<f32>(ArchId::SingleDeep, &opts).unwrap();
    copy_stream(&mut single, &fused, "depth/");
    let a = single.forward(&d, None).unwrap();
    copy_stream(&mut single, &fused, "edge/");
    let b = single.forward(&e, None).unwrap();
    let mean: Vec<f32> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(a, b)| (a + b) / 2.0)
        .collect();
    ensure(
        y.data() == mean.as_slice(),
        "fusion-result differs from the stream mean",
    )?;

    let mut enhance = build::<f32>(ArchId::FusionEnhance, &opts).unwrap();
    copy_stream(&mut single, &enhance, "");
    let blended = Tensor::from_vec(
        d.shape().to_vec(),
        d.data()
            .iter()
            .zip(e.data())
            .map(|(a, b)| 0.8 * a + 0.2 * b)
            .collect(),
    )
    .unwrap();
    ensure(
        enhance.forward(&d, Some(&e)).unwrap() == single.forward(&blended, None).unwrap(),
        "fusion-enhance differs from single-deep on the blend",
    )?;

    let g = fingernet::edges::GradientEdges::default();
    let samples =
        synth_generate(2, 8, &SynthConfig::default(), Some(&g)).map_err(|e| e.to_string())?;
    tied_after_training(ArchId::FusionSlow, &samples)?;
    tied_after_training(ArchId::FusionLate, &samples)?;
    Ok("mean and blend exact; tied parameters equal after 100 iterations".into())
}

fn overfit() -> Check {
    let t = Instant::now();
    let samples =
        synth_generate(3, 64, &SynthConfig::default(), None).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        arch: ArchId::SingleShallow,
        batch_size: 8,
        lr: 0.01,
        momentum: 0.9,
        max_iters: 5000,
        seed: 11,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config, &samples).map_err(|e| e.to_string())?;
    let opts = EvalOptions::default();
    let mut err_f = f64::INFINITY;
    while !trainer.done() {
        trainer.step().map_err(|e| e.to_string())?;
        if trainer.iteration() % 250 == 0 {
            let mut net = trainer.network().clone();
            err_f = evaluate(&mut net, &samples, &opts)
                .map_err(|e| e.to_string())?
                .err_f;
            if err_f < 2.0 {
                break;
            }
        }
    }
    ensure(
        err_f < 2.0,
        format!(
            "training err_f {err_f:.3} mm after {} iterations",
            trainer.iteration()
        ),
    )?;
    within(t.elapsed(), 900)?;
    Ok(format!(
        "err_f {err_f:.3} mm after {} iterations",
        trainer.iteration()
    ))
}

// Integer coordinates and a 256 mm cube keep normalized values exact in f32.
fn metric_dataset(outliers: &[(usize, usize)]) -> (Vec<Sample>, Vec<Vec<f32>>, Vec<Vec<f32>>) {
    let mut samples = Vec::new();
    let mut perfect = Vec::new();
    let mut shifted = Vec::new();
    for f in 0..10 {
        let center = [
            f as f32 * 3.0 - 10.0,
            20.0 - f as f32,
            500.0 + 7.0 * f as f32,
        ];
        let meta = CropMeta::new(center, 256.0, f as u32).unwrap();
        let mut pts: Vec<[f32; 3]> = (0..6)
            .map(|j| {
                let k = (f * 6 + j) as f32;
                [
                    center[0] + (k * 13.0) % 90.0 - 45.0,
                    center[1] + (k * 7.0) % 80.0 - 40.0,
                    center[2] - 30.0 + j as f32,
                ]
            })
            .collect();
        let truth = JointSet::new(pts.clone()).unwrap();
        perfect.push(normalize_joints(&truth, &meta).unwrap().values);
        for p in &mut pts[..5] {
            p[0] += 3.0;
            p[1] -= 4.0;
        }
        shifted.push(
            normalize_joints(&JointSet::new(pts).unwrap(), &meta)
                .unwrap()
                .values,
        );
        let mut labels = truth.points.clone();
        for &(of, j) in outliers {
            if of == f {
                labels[j][2] += 400.0;
            }
        }
        samples.push(Sample {
            depth: Tensor::zeros(&[1, 1, 96, 96]),
            edge: None,
            joints: JointSet::new(labels).unwrap(),
            meta,
        });
    }
    (samples, perfect, shifted)
}

fn monotone(r: &EvalReport) -> bool {
    let ok = |c: &[(f64, f64)]| c.windows(2).all(|w| w[0].1 <= w[1].1);
    ok(&r.mp_curve) && ok(&r.mp_frame_curve)
}

fn metric_contracts() -> Check {
    let opts = EvalOptions::default();
    let (samples, perfect, shifted) = metric_dataset(&[]);
    let r = evaluate_predictions(&perfect, &samples, &opts).map_err(|e| e.to_string())?;
    ensure(r.err_f == 0.0, format!("perfect err_f {}", r.err_f))?;
    ensure(
        r.mp_curve.iter().all(|&(_, p)| p == 1.0),
        "perfect mP below 1",
    )?;
    ensure(monotone(&r), "mP curve not monotone")?;

    let r = evaluate_predictions(&shifted, &samples, &opts).map_err(|e| e.to_string())?;
    ensure(
        (r.err_f - 5.0).abs() <= 1e-6,
        format!("shifted err_f {}", r.err_f),
    )?;
    ensure(
        r.mp_at(5.0) == 0.0 && r.mp_at(6.0) == 1.0,
        "mP step is not at 5 mm",
    )?;
    ensure(
        r.mp_curve
            .iter()
            .all(|&(t, p)| p == if t > 5.0 { 1.0 } else { 0.0 }),
        "mP curve not a step",
    )?;
    ensure(monotone(&r), "mP curve not monotone")?;

    let injected = [(1, 0), (4, 3), (4, 4), (9, 2)];
    let (samples, perfect, _) = metric_dataset(&injected);
    let opts = EvalOptions {
        discard_over_mm: Some(DISCARD_30CM),
        ..EvalOptions::default()
    };
    let r = evaluate_predictions(&perfect, &samples, &opts).map_err(|e| e.to_string())?;
    ensure(
        r.discarded == injected.len(),
        format!("discarded {} of {}", r.discarded, injected.len()),
    )?;
    ensure(
        r.err_f == 0.0,
        format!("err_f {} after discarding", r.err_f),
    )?;
    for (f, row) in r.errors.iter().enumerate() {
        for (j, &e) in row.iter().enumerate() {
            ensure(
                (e > DISCARD_30CM) == injected.contains(&(f, j)),
                format!("frame {f} tip {j}: {e}"),
            )?;
        }
    }
    ensure(monotone(&r), "mP curve not monotone")?;
    Ok("perfect, shifted and outlier datasets".into())
}

fn fingernet(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fingernet"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        out.status.success(),
        format!(
            "fingernet {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ),
    )
}

fn pipeline_run(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_owned();
    let (data, ckpt, report) = (p("data.ftds"), p("model.ftck"), p("report"));
    fingernet(&["synth", "--n", "8", "--seed", "21", "--out", &data])?;
    fingernet(&[
        "train",
        "--arch",
        "fusion-slow",
        "--data",
        &data,
        "--out",
        &ckpt,
        "--iters",
        "30",
        "--batch-size",
        "2",
        "--seed",
        "9",
    ])?;
    fingernet(&[
        "eval",
        "--checkpoint",
        &ckpt,
        "--data",
        &data,
        "--out",
        &report,
    ])?;
    [
        "data.ftds",
        "model.ftck",
        "report.csv",
        "report.curve.dat",
        "report.errors.csv",
    ]
    .iter()
    .map(|f| std::fs::read(dir.join(f)).map_err(|e| format!("{f}: {e}")))
    .collect()
}

fn determinism() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ra = pipeline_run(a.path())?;
    let rb = pipeline_run(b.path())?;
    let names = ["dataset", "checkpoint", "summary", "curve", "errors"];
    for ((x, y), name) in ra.iter().zip(&rb).zip(names) {
        ensure(x == y, format!("{name} differs between runs"))?;
    }
    Ok("dataset, checkpoint and reports identical across processes".into())
}

fn timing_direction() -> Check {
    let depth = rand_input(1, 96, 7).map(|v| v.abs());
    let time = |arch| -> Result<f64, String> {
        let mut net = build::<f32>(arch, &BuildOptions::default()).map_err(|e| e.to_string())?;
        Ok(bench(&mut net, &depth, GRADIENT, 20, false)
            .map_err(|e| e.to_string())?
            .single
            .mean_ms)
    };
    let deep = time(ArchId::SingleDeep)?;
    let slow = time(ArchId::FusionSlow)?;
    ensure(
        deep < slow,
        format!("single-deep {deep:.2} ms vs fusion-slow {slow:.2} ms"),
    )?;
    Ok(format!(
        "single-deep {deep:.2} ms < fusion-slow {slow:.2} ms"
    ))
}

fn main() -> ExitCode {
    let checks: [Criterion; 8] = [
        ("gradient-suite", gradient_suite),
        ("end-to-end-gradient", end_to_end_gradient),
        ("architecture-contracts", architecture_contracts),
        ("fusion-oracles", fusion_oracles),
        ("overfit", overfit),
        ("metric-contracts", metric_contracts),
        ("determinism", determinism),
        ("timing-direction", timing_direction),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let t = Instant::now();
        let secs = || t.elapsed().as_secs_f64();
        match check() {
            Ok(detail) => println!("PASS {name} ({detail}; {:.1}s)", secs()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({why}; {:.1}s)", secs());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
