//! Minibatch SGD training.

use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::data::{normalize_joints, read_dataset, Sample};
use crate::edges::{EdgeRegistry, GRADIENT};
use crate::error::{Error, Result};
use crate::layers::euclidean_loss;
use crate::netzoo::{build, ArchId, BuildOptions, Checkpoint, Network, TrainMeta};
use crate::optim::sgd_step;
use crate::tensor::Tensor;

/// Optional step decay: `lr · gamma^(iteration / every)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrStep {
    pub every: u64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: ArchId,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub max_iters: u64,
    /// Seeds both initialization and the shuffling order.
    pub seed: u64,
    pub data: PathBuf,
    /// Save a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub include_palm: bool,
    /// Tie the two streams' shared layers (slow and late fusion).
    pub tied: bool,
    pub lr_step: Option<LrStep>,
    /// Edge method used when the dataset stores no edge images.
    pub edge_method: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: ArchId::SingleDeep,
            batch_size: 196,
            lr: 0.01,
            momentum: 0.9,
            max_iters: 400_000,
            seed: 0,
            data: PathBuf::new(),
            checkpoint_every: 0,
            log_every: 100,
            include_palm: true,
            tied: true,
            lr_step: None,
            edge_method: GRADIENT.to_owned(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be >= 1"));
        }
        if let Some(s) = self.lr_step {
            if s.every == 0 || s.gamma.is_nan() || s.gamma <= 0.0 {
                return Err(Error::invalid("lr step needs every >= 1 and gamma > 0"));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, iteration: u64) -> f64 {
        match self.lr_step {
            Some(s) => self.lr * s.gamma.powi((iteration / s.every) as i32),
            None => self.lr,
        }
    }

    pub fn build_options(&self, input_size: usize) -> BuildOptions {
        BuildOptions {
            include_palm: self.include_palm,
            input_size,
            tied: self.tied,
            seed: self.seed,
        }
    }

    /// Every field that influences the weights, one `key=value` per line.
    /// The dataset path is left out; its contents enter the hash instead.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "arch={}", self.arch);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "lr={:e}", self.lr);
        let _ = writeln!(s, "momentum={:e}", self.momentum);
        let _ = writeln!(s, "max_iters={}", self.max_iters);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "include_palm={}", self.include_palm);
        let _ = writeln!(s, "tied={}", self.tied);
        match self.lr_step {
            Some(st) => {
                let _ = writeln!(s, "lr_step={}x{:e}", st.every, st.gamma);
            }
            None => s.push_str("lr_step=none\n"),
        }
        let _ = writeln!(s, "edge_method={}", self.edge_method);
        s
    }
}

/// Depth, optional edge and target tensors of one minibatch.
pub type Batch = (Tensor<f32>, Option<Tensor<f32>>, Tensor<f32>);

/// Training examples stacked for batching.
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub depth: Vec<Tensor<f32>>,
    pub edge: Option<Vec<Tensor<f32>>>,
    /// Normalized targets, 18 or 15 values each.
    pub targets: Vec<Vec<f32>>,
    pub input_size: usize,
    digest: [u8; 32],
}

impl TrainSet {
    /// Prepares `samples`; edge images are computed with `edge_method` where
    /// the samples carry none and `need_edge` is set.
    pub fn new(
        samples: &[Sample],
        include_palm: bool,
        need_edge: bool,
        edge_method: &str,
    ) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid("training set is empty"))?;
        let input_size = first.depth.shape()[3];
        let registry = EdgeRegistry::default();
        let mut hasher = Sha256::new();
        let mut depth = Vec::with_capacity(samples.len());
        let mut edges = Vec::new();
        let mut targets = Vec::with_capacity(samples.len());
        for s in samples {
            if s.depth.shape() != [1, 1, input_size, input_size] {
                return Err(Error::shape(
                    "train set",
                    "depth crop",
                    format!("[1, 1, {input_size}, {input_size}]"),
                    format!("{:?}", s.depth.shape()),
                ));
            }
            let joints = if include_palm {
                s.joints.clone()
            } else {
                s.joints.without_palm()
            };
            let t = normalize_joints(&joints, &s.meta)?.values;
            hash_f32s(&mut hasher, s.depth.data());
            hash_f32s(&mut hasher, &t);
            if need_edge {
                let e = match &s.edge {
                    Some(e) => e.tensor().clone(),
                    None => registry.extract(&s.depth, edge_method)?.into_tensor(),
                };
                hash_f32s(&mut hasher, e.data());
                edges.push(e);
            }
            depth.push(s.depth.clone());
            targets.push(t);
        }
        Ok(Self {
            depth,
            edge: need_edge.then_some(edges),
            targets,
            input_size,
            digest: hasher.finalize().into(),
        })
    }

    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    /// Stacks the listed samples into `(depth, edge, target)` batches.
    pub fn batch(&self, idx: &[usize]) -> Result<Batch> {
        let d: Vec<&Tensor<f32>> = idx.iter().map(|&i| &self.depth[i]).collect();
        let depth = Tensor::stack_batch(&d)?;
        let edge = match &self.edge {
            Some(all) => {
                let e: Vec<&Tensor<f32>> = idx.iter().map(|&i| &all[i]).collect();
                Some(Tensor::stack_batch(&e)?)
            }
            None => None,
        };
        let k = self.targets[0].len();
        let flat: Vec<f32> = idx
            .iter()
            .flat_map(|&i| self.targets[i].iter().copied())
            .collect();
        Ok((depth, edge, Tensor::from_vec(vec![idx.len(), k], flat)?))
    }
}

fn hash_f32s(h: &mut Sha256, v: &[f32]) {
    for x in v {
        h.update(x.to_le_bytes());
    }
}

/// Endless sample order: a fresh seeded permutation each epoch, batches run
/// across epoch boundaries.
#[derive(Debug, Clone)]
struct Order {
    rng: ChaCha8Rng,
    perm: Vec<usize>,
    pos: usize,
}

impl Order {
    fn new(n: usize, seed: u64) -> Self {
        let mut o = Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            perm: (0..n).collect(),
            pos: 0,
        };
        o.perm.shuffle(&mut o.rng);
        o
    }

    fn take(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.perm.len() {
                self.perm.sort_unstable();
                self.perm.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.perm[self.pos]);
            self.pos += 1;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub iteration: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Step-at-a-time trainer; [`train`] drives it to completion.
pub struct Trainer {
    config: TrainConfig,
    net: Network<f32>,
    data: TrainSet,
    order: Order,
    iteration: u64,
    config_hash: [u8; 32],
}

impl Trainer {
    pub fn new(config: TrainConfig, samples: &[Sample]) -> Result<Self> {
        config.validate()?;
        let need_edge = config.arch.uses_edge();
        let include_palm = config.include_palm && config.arch != ArchId::SingleDeepFingerOnly;
        let data = TrainSet::new(samples, include_palm, need_edge, &config.edge_method)?;
        let net = build::<f32>(config.arch, &config.build_options(data.input_size))?;
        let mut h = Sha256::new();
        h.update(config.canonical().as_bytes());
        h.update(data.digest);
        let config_hash = h.finalize().into();
        let order = Order::new(data.len(), config.seed ^ 0x5348_5546_464c_4531);
        Ok(Self {
            config,
            net,
            data,
            order,
            iteration: 0,
            config_hash,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn done(&self) -> bool {
        self.iteration >= self.config.max_iters
    }

    /// One minibatch update; returns the batch loss before the update.
    pub fn step(&mut self) -> Result<LossRow> {
        let idx = self.order.take(self.config.batch_size);
        let (depth, edge, target) = self.data.batch(&idx)?;
        let lr = self.config.lr_at(self.iteration);
        let pred = self.net.forward(&depth, edge.as_ref())?;
        let (loss, grad) = euclidean_loss(&pred, &target)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: self.iteration,
                lr,
            });
        }
        self.net.backward(&grad)?;
        sgd_step(
            self.net.params_mut(),
            lr as f32,
            self.config.momentum as f32,
        );
        let row = LossRow {
            iteration: self.iteration,
            loss: loss as f64,
            lr,
        };
        self.iteration += 1;
        Ok(row)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_network(
            &self.net,
            TrainMeta {
                iterations: self.iteration,
                seed: self.config.seed,
                config_hash: self.config_hash,
            },
        )
    }
}

/// Per-event hooks for [`train_with`].
pub trait TrainObserver {
    fn on_loss(&mut self, _row: &LossRow) -> Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _ckpt: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Writes `iteration,loss,lr` rows.
pub struct CsvLossLog<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> CsvLossLog<W> {
    pub fn new(inner: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(inner);
        writer.write_record(["iteration", "loss", "lr"])?;
        Ok(Self { writer })
    }

    pub fn write(&mut self, row: &LossRow) -> Result<()> {
        self.writer.write_record([
            row.iteration.to_string(),
            format!("{:.9e}", row.loss),
            format!("{:e}", row.lr),
        ])?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Runs `config.max_iters` updates over `samples`. Loss rows go to the
/// observer every `log_every` iterations (and on the last one); checkpoints
/// every `checkpoint_every`.
pub fn train_with(
    config: &TrainConfig,
    samples: &[Sample],
    observer: &mut dyn TrainObserver,
) -> Result<Checkpoint> {
    let mut t = Trainer::new(config.clone(), samples)?;
    while !t.done() {
        let row = t.step()?;
        let it = t.iteration();
        if (config.log_every > 0 && row.iteration % config.log_every == 0) || t.done() {
            observer.on_loss(&row)?;
        }
        if config.checkpoint_every > 0 && it % config.checkpoint_every == 0 && !t.done() {
            observer.on_checkpoint(&t.checkpoint())?;
        }
    }
    Ok(t.checkpoint())
}

/// Loads `config.data` and trains.
pub fn train(config: &TrainConfig) -> Result<Checkpoint> {
    let samples = read_dataset(&config.data)?;
    train_with(config, &samples, &mut ())
}
