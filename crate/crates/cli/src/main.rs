use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fingernet::bench::bench;
use fingernet::data::{
    open_dataset, read_dataset, synth_generate, DatasetWriter, SynthConfig, SynthGenerator,
    CROP_SIZE, DEFAULT_CUBE_MM,
};
use fingernet::edges::{EdgeRegistry, DEFAULT_SATURATION, GRADIENT};
use fingernet::eval::{evaluate, EvalOptions, DEFAULT_TAU_MM};
use fingernet::gradcheck::{
    grad_check_network, layer_suite, CheckResult, DEFAULT_EPS, NETWORK_TOLERANCE,
};
use fingernet::netzoo::{build, ArchId, BuildOptions, Checkpoint};
use fingernet::report::{compare_table, write_table_csv, TableRow};
use fingernet::train::{train_with, CsvLossLog, LossRow, LrStep, TrainConfig, TrainObserver};
use fingernet::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "fingernet",
    version,
    about = "Depth + edge fingertip regression toolkit"
)]
struct Cli {
    /// Worker threads (default: one per core). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic labelled FTDS dataset
    Synth(SynthArgs),
    /// Compute edge images for every sample of an FTDS dataset
    Edges(EdgesArgs),
    /// Train a network variant
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset
    Eval(EvalArgs),
    /// Finite-difference gradient checks
    Gradcheck(GradcheckArgs),
    /// Time per-image inference
    Bench(BenchArgs),
    /// Tabulate evaluation summaries
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CUBE_MM)]
    cube_size: f32,
    /// Store no edge images (they are then computed when needed)
    #[arg(long)]
    no_edges: bool,
    #[arg(long, default_value = GRADIENT)]
    edge_method: String,
    #[arg(long, default_value_t = DEFAULT_SATURATION)]
    saturation: f32,
    /// Fixed upright hand without random variation
    #[arg(long)]
    symmetric: bool,
}

#[derive(Debug, Args)]
struct EdgesArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = GRADIENT)]
    method: String,
    #[arg(long, default_value_t = DEFAULT_SATURATION)]
    saturation: f32,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    arch: ArchId,
    #[arg(long)]
    data: PathBuf,
    /// Final checkpoint path
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 196)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, alias = "iters", default_value_t = 400_000)]
    max_iters: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Save `<out>.<iteration>.ftck` every this many iterations (0 = never)
    #[arg(long, default_value_t = 0)]
    checkpoint_every: u64,
    #[arg(long, default_value_t = 100)]
    log_every: u64,
    /// CSV loss log (iteration, loss, lr)
    #[arg(long)]
    loss_log: Option<PathBuf>,
    /// Regress fingertips only (15 outputs)
    #[arg(long)]
    no_palm: bool,
    /// Separate weights for the two trunks of slow/late fusion
    #[arg(long)]
    untied: bool,
    /// Multiply lr by --lr-gamma every this many iterations
    #[arg(long)]
    lr_step: Option<u64>,
    #[arg(long, default_value_t = 0.1)]
    lr_gamma: f64,
    #[arg(long, default_value = GRADIENT)]
    edge_method: String,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Writes `<out>.csv`, `<out>.curve.dat` and `<out>.errors.csv`
    #[arg(long)]
    out: PathBuf,
    /// Exclude fingertip errors above this from err_f (e.g. 300)
    #[arg(long)]
    discard_over_mm: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_TAU_MM)]
    tau: f64,
    /// Row label in the summary (default: the architecture id)
    #[arg(long)]
    method: Option<String>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Record per-image timing in the summary
    #[arg(long)]
    timing: bool,
    /// Require edge images stored in the dataset instead of computing them
    #[arg(long)]
    stored_edges: bool,
    #[arg(long, default_value = GRADIENT)]
    edge_method: String,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Also run the end-to-end network check
    #[arg(long)]
    all: bool,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parameters probed by the network check
    #[arg(long, default_value_t = 20)]
    probes: usize,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Checkpoint to time; otherwise a freshly initialized --arch
    #[arg(long, conflicts_with = "arch")]
    checkpoint: Option<PathBuf>,
    #[arg(long, required_unless_present = "checkpoint")]
    arch: Option<ArchId>,
    /// Take the input image from this dataset (first sample)
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// Also time on the full thread pool
    #[arg(long)]
    parallel: bool,
    #[arg(long, default_value = GRADIENT)]
    edge_method: String,
    /// Append a CSV row (arch, mode, mean, p95, min, max, runs)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Summary CSVs written by `eval`
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    sort: bool,
    /// Also write the table as CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(Error::at_path(path))?,
    ))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn registry(saturation: f32) -> Result<EdgeRegistry> {
    EdgeRegistry::with_saturation(saturation)
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        cube_size: a.cube_size as f64,
        ..if a.symmetric {
            SynthConfig::symmetric()
        } else {
            SynthConfig::default()
        }
    };
    let reg = registry(a.saturation)?;
    let edges = if a.no_edges {
        None
    } else {
        Some(reg.get(&a.edge_method)?)
    };
    let mut w = DatasetWriter::new(create(&a.out)?, CROP_SIZE, CROP_SIZE)?;
    for s in SynthGenerator::new(a.seed, a.n, &cfg, edges)? {
        w.write(&s?)?;
    }
    w.finish()?.flush()?;
    eprintln!("wrote {} samples to {}", a.n, a.out.display());
    Ok(())
}

fn run_edges(a: &EdgesArgs) -> Result<()> {
    let reg = registry(a.saturation)?;
    let method = reg.get(&a.method)?;
    let reader = open_dataset(&a.data)?;
    let h = reader.header();
    let mut w = DatasetWriter::new(create(&a.out)?, h.height as usize, h.width as usize)?;
    let mut n = 0;
    for s in reader {
        let mut s = s?;
        s.edge = Some(method.extract(&s.depth)?);
        w.write(&s)?;
        n += 1;
    }
    w.finish()?.flush()?;
    eprintln!(
        "wrote {n} samples with `{}` edges to {}",
        a.method,
        a.out.display()
    );
    Ok(())
}

struct CliObserver {
    log: Option<CsvLossLog<BufWriter<File>>>,
    out: PathBuf,
}

impl TrainObserver for CliObserver {
    fn on_loss(&mut self, row: &LossRow) -> Result<()> {
        eprintln!(
            "iter {:>7}  loss {:.6e}  lr {}",
            row.iteration, row.loss, row.lr
        );
        if let Some(log) = &mut self.log {
            log.write(row)?;
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let path = with_suffix(&self.out, &format!(".{}.ftck", ckpt.meta.iterations));
        ckpt.save(&path)?;
        eprintln!("saved {}", path.display());
        Ok(())
    }
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let cfg = TrainConfig {
        arch: a.arch,
        batch_size: a.batch_size,
        lr: a.lr,
        momentum: a.momentum,
        max_iters: a.max_iters,
        seed: a.seed,
        data: a.data.clone(),
        checkpoint_every: a.checkpoint_every,
        log_every: a.log_every,
        include_palm: !a.no_palm,
        tied: !a.untied,
        lr_step: a.lr_step.map(|every| LrStep {
            every,
            gamma: a.lr_gamma,
        }),
        edge_method: a.edge_method.clone(),
    };
    cfg.validate()?;
    let samples = read_dataset(&cfg.data)?;
    let mut obs = CliObserver {
        log: a
            .loss_log
            .as_deref()
            .map(|p| CsvLossLog::new(create(p)?))
            .transpose()?,
        out: a.out.clone(),
    };
    let ckpt = train_with(&cfg, &samples, &mut obs)?;
    ckpt.save(&a.out)?;
    eprintln!("saved {}", a.out.display());
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let mut net = ckpt.to_network()?;
    let samples = read_dataset(&a.data)?;
    let opts = EvalOptions {
        discard_over_mm: a.discard_over_mm,
        tau_mm: a.tau,
        batch_size: a.batch_size,
        timing: a.timing,
        edge_method: (!a.stored_edges).then(|| a.edge_method.clone()),
    };
    let report = evaluate(&mut net, &samples, &opts)?;
    let method = a.method.clone().unwrap_or_else(|| ckpt.arch.to_string());
    let summary = with_suffix(&a.out, ".csv");
    let mut w = create(&summary)?;
    report.write_summary_csv(&method, &mut w)?;
    w.flush()?;
    let mut w = create(&with_suffix(&a.out, ".curve.dat"))?;
    report.write_curve(&mut w)?;
    w.flush()?;
    let mut w = create(&with_suffix(&a.out, ".errors.csv"))?;
    report.write_errors_csv(&mut w)?;
    w.flush()?;
    println!(
        "{method}: frames {}  err_f {:.3} mm  mP@{}mm {:.4} (per-frame {:.4})  discarded {}",
        report.frames(),
        report.err_f,
        a.tau,
        report.mp_at(a.tau),
        report.mp_frame_at(a.tau),
        report.discarded
    );
    Ok(())
}

/// Returns whether every check passed.
fn run_gradcheck(a: &GradcheckArgs) -> Result<bool> {
    let mut results = layer_suite(a.eps, a.seed)?;
    if a.all {
        let err = grad_check_network(ArchId::SingleDeep, 24, 2, a.probes, 1e-6, a.seed)?;
        results.push(CheckResult {
            name: "single-deep 24x24 end-to-end".into(),
            max_rel_error: err,
            probes: a.probes,
            tolerance: NETWORK_TOLERANCE,
        });
    }
    let mut ok = true;
    for r in &results {
        ok &= r.passed();
        println!(
            "{:<32} max rel err {:.3e}  (tol {:.0e})  {}",
            r.name,
            r.max_rel_error,
            r.tolerance,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    Ok(ok)
}

fn run_bench(a: &BenchArgs) -> Result<()> {
    let mut net = match (&a.checkpoint, a.arch) {
        (Some(p), _) => Checkpoint::load(p)?.to_network()?,
        (None, Some(arch)) => build::<f32>(arch, &BuildOptions::default())?,
        (None, None) => {
            return Err(Error::InvalidArgument(
                "bench needs --checkpoint or --arch".into(),
            ))
        }
    };
    let size = net.options().input_size;
    let depth = match &a.data {
        Some(p) => {
            let first = open_dataset(p)?
                .next()
                .ok_or_else(|| Error::InvalidArgument("dataset is empty".into()))??;
            first.depth
        }
        None => {
            synth_generate(0, 1, &SynthConfig::default(), None)?
                .remove(0)
                .depth
        }
    };
    if depth.shape() != [1, 1, size, size] {
        return Err(Error::InvalidArgument(format!(
            "network expects {size}x{size} input, image is {:?}",
            depth.shape()
        )));
    }
    let r = bench(&mut net, &depth, &a.edge_method, a.n, a.parallel)?;
    let mut rows = vec![("single-thread", r.single)];
    if let Some(p) = r.parallel {
        rows.push(("parallel", p));
    }
    for (mode, t) in &rows {
        println!(
            "{} [{mode}]: mean {:.3} ms  p95 {:.3} ms  min {:.3} ms  max {:.3} ms  ({} runs)",
            r.arch, t.mean_ms, t.p95_ms, t.min_ms, t.max_ms, t.runs
        );
    }
    if let Some(path) = &a.out {
        let fresh = !path.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        let mut w = BufWriter::new(file);
        if fresh {
            writeln!(w, "arch,mode,threads,mean_ms,p95_ms,min_ms,max_ms,runs")?;
        }
        for (mode, t) in &rows {
            let threads = if *mode == "parallel" { r.threads } else { 1 };
            writeln!(
                w,
                "{},{mode},{threads},{},{},{},{},{}",
                r.arch, t.mean_ms, t.p95_ms, t.min_ms, t.max_ms, t.runs
            )?;
        }
        w.flush()?;
    }
    Ok(())
}

fn run_compare(a: &CompareArgs) -> Result<()> {
    let rows = a
        .reports
        .iter()
        .map(|p| TableRow::from_summary_csv(File::open(p).map_err(Error::at_path(p))?))
        .collect::<Result<Vec<_>>>()?;
    if rows.windows(2).any(|w| w[0].tau_mm != w[1].tau_mm) {
        eprintln!("warning: reports use different mP thresholds");
    }
    print!("{}", compare_table(&rows, a.sort));
    if let Some(p) = &a.out {
        let mut w = create(p)?;
        write_table_csv(&rows, a.sort, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    eprintln!("config: {cli:#?}");
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match &cli.command {
        Command::Synth(a) => run_synth(a).map(|_| true),
        Command::Edges(a) => run_edges(a).map(|_| true),
        Command::Train(a) => run_train(a).map(|_| true),
        Command::Eval(a) => run_eval(a).map(|_| true),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Bench(a) => run_bench(a).map(|_| true),
        Command::Compare(a) => run_compare(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient check above tolerance");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
