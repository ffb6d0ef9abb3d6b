//! Offline training: holdout filtering, Adam optimization over interval
//! graphs, and the versioned model file.
//!
//! Model file layout (little endian): magic `IPGM`, `u16` version, then six
//! sections each prefixed by a `u32` byte length: configuration, protocol
//! vocabulary, feature scaler maxima, trainable tensors (shape then values),
//! batch-norm running statistics, and the holdout IP list.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::IpAddr;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec::{Decoder, Encoder};
use crate::graph::{FeatureScaler, GraphError, IntervalGraph, ProtocolVocab};
use crate::model::{GnnModel, GraphInput, ModelConfig, ModelError, ModelParams};
use crate::tensor::{BnMode, Tensor, BN_MOMENTUM};
use crate::zeek::ConnRecord;

pub const MODEL_MAGIC: &[u8; 4] = b"IPGM";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("no training graphs")]
    NoGraphs,
    #[error("loss diverged at epoch {epoch}, graph {graph} (interval {interval})")]
    Divergence { epoch: usize, graph: usize, interval: i64 },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Removes every record whose source or destination is in `holdout`.
pub fn filter_holdout(records: &[ConnRecord], holdout: &BTreeSet<IpAddr>) -> Vec<ConnRecord> {
    records
        .iter()
        .filter(|r| !holdout.contains(&r.source_ip) && !holdout.contains(&r.destination_ip))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
    pub seed: u64,
    /// IPs whose edges are stripped from every training graph.
    pub holdout: BTreeSet<IpAddr>,
    pub shuffle: bool,
    /// Epochs without an improvement of at least `min_delta` before
    /// stopping; 0 disables early stopping.
    pub patience: usize,
    pub min_delta: f64,
    /// Checkpoint callback period in epochs; 0 disables checkpoints.
    pub checkpoint_every: usize,
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_opt: 1e-8,
            seed: 0,
            holdout: BTreeSet::new(),
            shuffle: true,
            patience: 20,
            min_delta: 1e-4,
            checkpoint_every: 0,
            bn_momentum: BN_MOMENTUM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return fail("learning rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("betas must lie in [0, 1)");
        }
        if !(self.eps_opt > 0.0) {
            return fail("optimizer epsilon must be positive");
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return fail("batch-norm momentum must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Mean losses over one epoch's graphs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub loss_ae: f64,
    pub loss_nm: f64,
    pub seconds: f64,
}

impl EpochStats {
    pub const LOG_HEADER: &'static str = "epoch\tloss\tloss_ae\tloss_nm\tseconds";

    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:.8}\t{:.8}\t{:.8}\t{:.3}",
            self.epoch, self.loss, self.loss_ae, self.loss_nm, self.seconds
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn losses_ae(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss_ae).collect()
    }
}

/// First and second moment estimates for every trainable tensor.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ModelParams, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps_opt,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let p = p.data_mut();
            let (m, v) = (m.data_mut(), v.data_mut());
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let update = self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
                p[k] -= update;
            }
        }
    }
}

/// Uniform non-neighbor pairs, `per_node` for every node where possible.
fn sample_negatives(graph: &GraphInput, per_node: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let n = graph.nodes;
    let adjacent: HashSet<(usize, usize)> = graph
        .receivers
        .iter()
        .copied()
        .zip(graph.senders.iter().copied())
        .collect();
    let mut out = Vec::new();
    for i in 0..n {
        let candidates: Vec<usize> = (0..n)
            .filter(|&j| j != i && !adjacent.contains(&(i, j)))
            .collect();
        for _ in 0..per_node.min(candidates.len()) {
            out.push((i, candidates[rng.random_range(0..candidates.len())]));
        }
    }
    out
}

/// Trains a freshly initialized model. See [`train_with`].
pub fn train(
    graphs: &[IntervalGraph],
    model_config: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(GnnModel, TrainHistory)> {
    train_with(graphs, model_config, cfg, |_, _, _| Ok(()))
}

/// Trains on normalized graphs with one Adam step per graph per epoch and
/// returns the parameters of the lowest-loss epoch. `on_epoch` receives each
/// epoch's stats, the current model, and whether the epoch is a checkpoint
/// epoch.
pub fn train_with<F>(
    graphs: &[IntervalGraph],
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<(GnnModel, TrainHistory)>
where
    F: FnMut(&EpochStats, &GnnModel, bool) -> Result<()>,
{
    cfg.validate()?;
    model_config.validate()?;
    let mut inputs = Vec::new();
    let mut intervals = Vec::new();
    for g in graphs {
        let g = if cfg.holdout.is_empty() {
            g.clone()
        } else {
            g.without_ips(&cfg.holdout)
        };
        if g.num_edges() > 0 {
            intervals.push(g.interval);
            inputs.push(GraphInput::from_graph(&g)?);
        }
    }
    if inputs.is_empty() {
        return Err(TrainError::NoGraphs);
    }

    let mut model = GnnModel::init(model_config.clone(), cfg.seed)?;
    let mut adam = Adam::new(&model.params, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e_ed0f_7a11);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut plateau_ref = f64::INFINITY;
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let (mut sum, mut sum_ae, mut sum_nm) = (0.0, 0.0, 0.0);
        for &gi in &order {
            let graph = &inputs[gi];
            let negatives = if model_config.negative_samples > 0 {
                sample_negatives(graph, model_config.negative_samples, &mut rng)
            } else {
                Vec::new()
            };
            let (out, grads) = model.loss_and_gradients(graph, BnMode::Train, &negatives)?;
            let diverged = TrainError::Divergence {
                epoch,
                graph: gi,
                interval: intervals[gi],
            };
            if !out.loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(diverged);
            }
            model.update_running_stats(&out.batch_stats, cfg.bn_momentum);
            adam.step(&mut model.params, &grads);
            if !model.params.is_finite() {
                return Err(diverged);
            }
            sum += out.loss;
            sum_ae += out.loss_ae;
            sum_nm += out.loss_nm;
        }
        let n = inputs.len() as f64;
        let stats = EpochStats {
            epoch,
            loss: sum / n,
            loss_ae: sum_ae / n,
            loss_nm: sum_nm / n,
            seconds: started.elapsed().as_secs_f64(),
        };
        history.epochs.push(stats);
        if best.as_ref().is_none_or(|(b, _)| stats.loss < *b) {
            best = Some((stats.loss, model.params.clone()));
            history.best_epoch = epoch;
        }
        let checkpoint = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
        on_epoch(&stats, &model, checkpoint)?;

        if stats.loss < plateau_ref - cfg.min_delta {
            plateau_ref = stats.loss;
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }

    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, history))
}

/// Everything needed to embed new traffic: the model plus the vocabulary
/// and scaler its training graphs were built with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub model: GnnModel,
    pub vocab: ProtocolVocab,
    pub scaler: FeatureScaler,
    pub holdout: Vec<IpAddr>,
}

impl ModelBundle {
    pub fn new(
        model: GnnModel,
        vocab: ProtocolVocab,
        scaler: FeatureScaler,
        holdout: Vec<IpAddr>,
    ) -> Result<Self> {
        let expected = ModelConfig::input_dim_for(&vocab);
        if model.config.input_dim != expected {
            return Err(TrainError::Format(format!(
                "model input width {} does not match vocabulary width {expected}",
                model.config.input_dim
            )));
        }
        if scaler.protocols() != vocab.len() {
            return Err(TrainError::Format(format!(
                "scaler covers {} protocols, vocabulary has {}",
                scaler.protocols(),
                vocab.len()
            )));
        }
        Ok(Self {
            model,
            vocab,
            scaler,
            holdout,
        })
    }

    /// Rebuilds `graph` against this bundle's vocabulary and scales it.
    pub fn prepare(&self, graph: &IntervalGraph) -> Result<IntervalGraph> {
        let mut g = graph.with_vocab(&self.vocab)?;
        self.scaler.normalize(&mut g)?;
        Ok(g)
    }
}

fn section<F>(enc: &mut Encoder<impl Write>, body: F) -> io::Result<()>
where
    F: FnOnce(&mut Encoder<&mut Vec<u8>>) -> io::Result<()>,
{
    let mut buf = Vec::new();
    body(&mut Encoder::new(&mut buf))?;
    enc.len(buf.len())?;
    enc.bytes(&buf)
}

pub fn write_model<W: Write>(out: W, bundle: &ModelBundle) -> Result<()> {
    let mut enc = Encoder::new(out);
    enc.bytes(MODEL_MAGIC)?;
    enc.u16(MODEL_VERSION)?;
    let cfg = &bundle.model.config;
    section(&mut enc, |s| {
        s.len(cfg.input_dim)?;
        s.len(cfg.hidden)?;
        s.len(cfg.layers)?;
        s.len(cfg.decoder_hidden)?;
        s.f64(cfg.gate_eps)?;
        s.f64(cfg.lambda_ae)?;
        s.f64(cfg.lambda_nm)?;
        s.len(cfg.negative_samples)
    })?;
    section(&mut enc, |s| {
        s.len(bundle.vocab.len())?;
        bundle.vocab.tokens().iter().try_for_each(|t| s.str(t))
    })?;
    section(&mut enc, |s| {
        s.len(bundle.scaler.maxima().len())?;
        bundle.scaler.maxima().iter().try_for_each(|&v| s.f64(v))
    })?;
    section(&mut enc, |s| {
        let tensors = bundle.model.params.tensors();
        s.len(tensors.len())?;
        for t in tensors {
            s.len(t.rows())?;
            s.len(t.cols())?;
            t.data().iter().try_for_each(|&v| s.f64(v))?;
        }
        Ok(())
    })?;
    section(&mut enc, |s| {
        let stats = bundle.model.params.running_stats();
        s.len(stats.len())?;
        for run in stats {
            s.len(run.width())?;
            match run.get() {
                None => s.u8(0)?,
                Some(b) => {
                    s.u8(1)?;
                    b.mean.iter().chain(&b.var).try_for_each(|&v| s.f64(v))?;
                }
            }
        }
        Ok(())
    })?;
    section(&mut enc, |s| {
        s.len(bundle.holdout.len())?;
        bundle.holdout.iter().try_for_each(|ip| s.str(&ip.to_string()))
    })?;
    enc.into_inner().flush()?;
    Ok(())
}

fn format_err(e: io::Error) -> TrainError {
    match e.kind() {
        io::ErrorKind::UnexpectedEof => TrainError::Format("truncated file".into()),
        io::ErrorKind::InvalidData => TrainError::Format(e.to_string()),
        _ => TrainError::Io(e),
    }
}

fn io_fmt<T>(r: io::Result<T>) -> Result<T> {
    r.map_err(format_err)
}

fn read_section<R: Read>(dec: &mut Decoder<R>) -> Result<Decoder<io::Cursor<Vec<u8>>>> {
    let n = dec.len().map_err(format_err)?;
    let body = dec.bytes(n).map_err(format_err)?;
    Ok(Decoder::new(io::Cursor::new(body)))
}

fn f64s<R: Read>(dec: &mut Decoder<R>, n: usize) -> io::Result<Vec<f64>> {
    (0..n).map(|_| dec.f64()).collect()
}

/// Width and optional `(mean, var)` of one stored running-stat slot.
type StoredStats = (usize, Option<(Vec<f64>, Vec<f64>)>);

pub fn read_model<R: Read>(input: R) -> Result<ModelBundle> {
    let mut dec = Decoder::new(input);
    let magic = dec.bytes(4).map_err(format_err)?;
    if magic != MODEL_MAGIC {
        return Err(TrainError::Format("bad magic".into()));
    }
    let version = dec.u16().map_err(format_err)?;
    if version != MODEL_VERSION {
        return Err(TrainError::Format(format!("unsupported version {version}")));
    }

    let mut s = read_section(&mut dec)?;
    let config = io_fmt((|| -> io::Result<ModelConfig> {
        Ok(ModelConfig {
            input_dim: s.len()?,
            hidden: s.len()?,
            layers: s.len()?,
            decoder_hidden: s.len()?,
            gate_eps: s.f64()?,
            lambda_ae: s.f64()?,
            lambda_nm: s.f64()?,
            negative_samples: s.len()?,
        })
    })())?;
    io_fmt(s.finish())?;
    config.validate()?;

    let mut s = read_section(&mut dec)?;
    let tokens = io_fmt((|| -> io::Result<Vec<String>> {
        let n = s.len()?;
        (0..n).map(|_| s.str()).collect()
    })())?;
    io_fmt(s.finish())?;
    let vocab = ProtocolVocab::from_tokens(tokens)?;

    let mut s = read_section(&mut dec)?;
    let maxima = io_fmt((|| {
        let n = s.len()?;
        f64s(&mut s, n)
    })())?;
    io_fmt(s.finish())?;
    let scaler = FeatureScaler::from_maxima(maxima)?;

    let mut s = read_section(&mut dec)?;
    let tensors = io_fmt((|| -> io::Result<Vec<(usize, usize, Vec<f64>)>> {
        let n = s.len()?;
        (0..n)
            .map(|_| {
                let rows = s.len()?;
                let cols = s.len()?;
                let len = rows.checked_mul(cols).ok_or_else(|| {
                    io::Error::new(io::ErrorKind::InvalidData, "tensor size overflow")
                })?;
                Ok((rows, cols, f64s(&mut s, len)?))
            })
            .collect()
    })())?;
    io_fmt(s.finish())?;
    let tensors = tensors
        .into_iter()
        .map(|(r, c, d)| Tensor::from_vec(r, c, d))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(ModelError::from)?;
    let mut params = ModelParams::from_tensors(&config, tensors)?;

    let mut s = read_section(&mut dec)?;
    let stats = io_fmt((|| -> io::Result<Vec<StoredStats>> {
        let n = s.len()?;
        (0..n)
            .map(|_| {
                let width = s.len()?;
                let set = match s.u8()? {
                    0 => None,
                    1 => Some((f64s(&mut s, width)?, f64s(&mut s, width)?)),
                    other => {
                        return Err(io::Error::new(
                            io::ErrorKind::InvalidData,
                            format!("bad running-stat flag {other}"),
                        ))
                    }
                };
                Ok((width, set))
            })
            .collect()
    })())?;
    io_fmt(s.finish())?;
    let slots = params.running_stats_mut();
    if slots.len() != stats.len() {
        return Err(TrainError::Format(format!(
            "{} running-stat slots, expected {}",
            stats.len(),
            slots.len()
        )));
    }
    for (slot, (width, set)) in slots.into_iter().zip(stats) {
        if slot.width() != width {
            return Err(TrainError::Format(format!(
                "running-stat width {width}, expected {}",
                slot.width()
            )));
        }
        if let Some((mean, var)) = set {
            slot.set(mean, var).map_err(ModelError::from)?;
        }
    }

    let mut s = read_section(&mut dec)?;
    let holdout = io_fmt((|| -> io::Result<Vec<String>> {
        let n = s.len()?;
        (0..n).map(|_| s.str()).collect()
    })())?;
    io_fmt(s.finish())?;
    let holdout = holdout
        .iter()
        .map(|t| {
            t.parse()
                .map_err(|_| TrainError::Format(format!("invalid holdout IP {t:?}")))
        })
        .collect::<Result<Vec<IpAddr>>>()?;
    io_fmt(dec.finish())?;

    let model = GnnModel::with_params(config, params)?;
    ModelBundle::new(model, vocab, scaler, holdout)
}

pub fn save_model(path: &Path, bundle: &ModelBundle) -> Result<()> {
    let mut buf = Vec::new();
    write_model(&mut buf, bundle)?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelBundle> {
    read_model(BufReader::new(File::open(path)?))
}
