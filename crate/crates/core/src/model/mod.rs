//! Gated graph convolutional auto-encoder over edge-featured graphs.
//!
//! Nodes carry no features. The input layer synthesizes initial node states
//! from gated incident edge features; stacked residual gated convolutions
//! refine node and edge states; a two-layer decoder reconstructs every
//! edge's input features from both endpoint embeddings and the final edge
//! state. Training minimizes reconstruction cross-entropy plus a
//! log-sigmoid neighborhood agreement term.

mod loss;
mod params;

use thiserror::Error;

use crate::graph::{GraphError, IntervalGraph, ProtocolVocab, NUMERIC_FEATURES};
use crate::tensor::{gate_normalize, BatchStats, BnMode, Gradients, Tape, Tensor, TensorError, Var};

pub use loss::{bce, loss_ae, loss_nm, total_loss};
pub use params::{
    parameter_layout, BatchNormParams, ConvLayerParams, DecoderParams, InputLayerParams,
    ModelParams,
};
pub(crate) use params::ParamVars;
use params::{BnVars, ConvVars, DecoderVars, InputVars};

/// Default gate normalization epsilon.
pub const GATE_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("graph input: {0}")]
    Input(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Architecture and loss hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Edge input width (features plus reverse flag).
    pub input_dim: usize,
    /// Node state and embedding width.
    pub hidden: usize,
    /// Number of gated convolution layers after the input layer.
    pub layers: usize,
    pub decoder_hidden: usize,
    pub gate_eps: f64,
    pub lambda_ae: f64,
    pub lambda_nm: f64,
    /// Uniform non-neighbor samples per node for the optional repulsive
    /// term; 0 disables it.
    pub negative_samples: usize,
}

impl ModelConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: 64,
            layers: 2,
            decoder_hidden: 128,
            gate_eps: GATE_EPS,
            lambda_ae: 1.0,
            lambda_nm: 0.01,
            negative_samples: 0,
        }
    }

    /// Input width for graphs built with `vocab`: protocol bits, one numeric
    /// block per protocol and the reverse flag.
    pub fn input_dim_for(vocab: &ProtocolVocab) -> usize {
        vocab.len() * (1 + NUMERIC_FEATURES) + 1
    }

    pub fn for_vocab(vocab: &ProtocolVocab) -> Self {
        Self::new(Self::input_dim_for(vocab))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.input_dim == 0 {
            return fail("input_dim must be at least 1");
        }
        if self.hidden == 0 {
            return fail("hidden must be at least 1");
        }
        if self.layers == 0 {
            return fail("layers must be at least 1");
        }
        if self.decoder_hidden == 0 {
            return fail("decoder_hidden must be at least 1");
        }
        if !(self.gate_eps > 0.0) {
            return fail("gate_eps must be positive");
        }
        if !(self.lambda_ae >= 0.0) || !(self.lambda_nm >= 0.0) {
            return fail("loss weights must be non-negative");
        }
        Ok(())
    }
}

/// Edge list and input features of one graph, in model terms. For edge
/// `k`, `receivers[k]` is the node whose neighborhood the edge belongs to and
/// `senders[k]` the neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub features: Tensor,
    pub senders: Vec<usize>,
    pub receivers: Vec<usize>,
    pub nodes: usize,
}

impl GraphInput {
    pub fn new(
        features: Tensor,
        senders: Vec<usize>,
        receivers: Vec<usize>,
        nodes: usize,
    ) -> Result<Self> {
        let edges = features.rows();
        if senders.len() != edges || receivers.len() != edges {
            return Err(ModelError::Input(format!(
                "{edges} feature rows but {} senders and {} receivers",
                senders.len(),
                receivers.len()
            )));
        }
        if let Some(bad) = senders.iter().chain(&receivers).find(|&&n| n >= nodes) {
            return Err(ModelError::Input(format!(
                "edge endpoint {bad} out of range for {nodes} nodes"
            )));
        }
        Ok(Self {
            features,
            senders,
            receivers,
            nodes,
        })
    }

    pub fn from_graph(graph: &IntervalGraph) -> Result<Self> {
        Self::new(
            graph.model_input()?,
            graph.senders(),
            graph.receivers(),
            graph.num_nodes(),
        )
    }

    pub fn num_edges(&self) -> usize {
        self.features.rows()
    }
}

/// Values produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// Final node states, one embedding per node.
    pub embeddings: Tensor,
    /// Node states after the input layer and after each conv layer.
    pub node_states: Vec<Tensor>,
    /// Edge state pre-activations after the input layer and each conv
    /// layer; the last entry feeds the decoder.
    pub edge_states: Vec<Tensor>,
    /// Edge gates of the input layer and each conv layer.
    pub gates: Vec<Tensor>,
    pub logits: Tensor,
    /// Decoder outputs `σ(logits)`.
    pub reconstruction: Tensor,
    pub loss_ae: f64,
    pub loss_nm: f64,
    pub loss: f64,
    /// Batch statistics in running-stat order (train mode only).
    pub batch_stats: Vec<BatchStats>,
}

pub(crate) struct TapeForward {
    pub embeddings: Var,
    pub node_states: Vec<Var>,
    pub edge_states: Vec<Var>,
    pub gates: Vec<Var>,
    pub logits: Var,
    pub loss_ae: Var,
    pub loss_nm: Var,
    pub loss: Var,
    pub batch_stats: Vec<BatchStats>,
}

struct Norms<'a> {
    mode: BnMode,
    running: Vec<&'a crate::tensor::RunningStats>,
    cursor: usize,
    collected: Vec<BatchStats>,
}

impl Norms<'_> {
    fn apply(&mut self, tape: &mut Tape, x: Var, bn: BnVars) -> Result<Var> {
        let slot = self.cursor;
        self.cursor += 1;
        match self.mode {
            BnMode::Train => {
                let (out, stats) = tape.batch_norm_train(x, bn.gamma, bn.beta)?;
                self.collected.push(stats);
                Ok(out)
            }
            BnMode::Eval => Ok(tape.batch_norm_eval(x, bn.gamma, bn.beta, self.running[slot])?),
        }
    }
}

/// Trained (or initialized) model.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl GnnModel {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn with_params(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let layout = parameter_layout(&config);
        let tensors = params.tensors();
        if layout.len() != tensors.len() || params.convs.len() != config.layers {
            return Err(ModelError::Config(format!(
                "parameters hold {} tensors, configuration expects {}",
                tensors.len(),
                layout.len()
            )));
        }
        for ((name, shape), t) in layout.into_iter().zip(tensors) {
            if t.shape() != shape {
                return Err(ModelError::Shape {
                    name,
                    expected: shape,
                    found: t.shape(),
                });
            }
        }
        Ok(Self { config, params })
    }

    fn check_input(&self, graph: &GraphInput) -> Result<()> {
        if graph.features.cols() != self.config.input_dim {
            return Err(ModelError::Input(format!(
                "edge features have width {}, model expects {}",
                graph.features.cols(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Records a full forward pass, including the total loss, on `tape`.
    pub(crate) fn forward_on_tape(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        graph: &GraphInput,
        mode: BnMode,
        negatives: &[(usize, usize)],
    ) -> Result<TapeForward> {
        self.check_input(graph)?;
        let cfg = &self.config;
        let mut norms = Norms {
            mode,
            running: self.params.running_stats(),
            cursor: 0,
            collected: Vec::new(),
        };
        let e0 = tape.leaf(graph.features.clone());

        let (h1, mut e_hat, g0) = input_layer(tape, graph, e0, &vars.input, &mut norms, cfg.gate_eps)?;
        let mut h = h1;
        let mut node_states = vec![h1];
        let mut edge_states = vec![e_hat];
        let mut gates = vec![g0];
        for conv in &vars.convs {
            let (hn, en, g) = conv_layer(tape, graph, h, e_hat, conv, &mut norms, cfg.gate_eps)?;
            h = hn;
            e_hat = en;
            node_states.push(hn);
            edge_states.push(en);
            gates.push(g);
        }
        let logits = decode(tape, graph, h, e_hat, &vars.decoder)?;

        let bce = tape.bce_with_logits(logits, &graph.features)?;
        let loss_ae = tape.scale(bce, cfg.lambda_ae);
        let nm_sum = neighborhood_log_likelihood(tape, h, &graph.receivers, &graph.senders, false)?;
        let mut loss_nm = tape.scale(nm_sum, -cfg.lambda_nm);
        if !negatives.is_empty() {
            let (left, right): (Vec<usize>, Vec<usize>) = negatives.iter().copied().unzip();
            let neg = neighborhood_log_likelihood(tape, h, &left, &right, true)?;
            let neg = tape.scale(neg, -cfg.lambda_nm);
            loss_nm = tape.add(loss_nm, neg)?;
        }
        let loss = tape.add(loss_ae, loss_nm)?;

        Ok(TapeForward {
            embeddings: h,
            node_states,
            edge_states,
            gates,
            logits,
            loss_ae,
            loss_nm,
            loss,
            batch_stats: norms.collected,
        })
    }

    fn collect(tape: &Tape, f: &TapeForward) -> ForwardResult {
        let logits = tape.value(f.logits).clone();
        ForwardResult {
            embeddings: tape.value(f.embeddings).clone(),
            node_states: f.node_states.iter().map(|&v| tape.value(v).clone()).collect(),
            edge_states: f.edge_states.iter().map(|&v| tape.value(v).clone()).collect(),
            gates: f.gates.iter().map(|&v| tape.value(v).clone()).collect(),
            reconstruction: logits.map(crate::tensor::sigmoid),
            logits,
            loss_ae: tape.value(f.loss_ae).item(),
            loss_nm: tape.value(f.loss_nm).item(),
            loss: tape.value(f.loss).item(),
            batch_stats: f.batch_stats.clone(),
        }
    }

    /// Forward pass without gradients.
    pub fn forward(&self, graph: &GraphInput, mode: BnMode) -> Result<ForwardResult> {
        let mut tape = Tape::new();
        let vars = ParamVars::from_list(&self.params.register(&mut tape), self.config.layers)?;
        let f = self.forward_on_tape(&mut tape, &vars, graph, mode, &[])?;
        Ok(Self::collect(&tape, &f))
    }

    /// Forward and backward pass; gradients follow [`ModelParams::tensors`]
    /// order.
    pub fn loss_and_gradients(
        &self,
        graph: &GraphInput,
        mode: BnMode,
        negatives: &[(usize, usize)],
    ) -> Result<(ForwardResult, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let list = self.params.register(&mut tape);
        let vars = ParamVars::from_list(&list, self.config.layers)?;
        let f = self.forward_on_tape(&mut tape, &vars, graph, mode, negatives)?;
        let grads: Gradients = tape.backward(f.loss)?;
        let result = Self::collect(&tape, &f);
        Ok((result, list.iter().map(|&v| grads.get(v)).collect()))
    }

    /// Total loss as a function of the trainable tensors, for gradient
    /// checking with [`crate::tensor::grad_check`].
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        graph: &GraphInput,
        mode: BnMode,
    ) -> std::result::Result<Var, TensorError> {
        let vars = ParamVars::from_list(params, self.config.layers)
            .map_err(|e| TensorError::Invalid(e.to_string()))?;
        self.forward_on_tape(tape, &vars, graph, mode, &[])
            .map(|f| f.loss)
            .map_err(|e| match e {
                ModelError::Tensor(t) => t,
                other => TensorError::Invalid(other.to_string()),
            })
    }

    /// Eval-mode node embeddings.
    pub fn embed(&self, graph: &GraphInput) -> Result<Tensor> {
        Ok(self.forward(graph, BnMode::Eval)?.embeddings)
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[BatchStats], momentum: f64) {
        for (run, s) in self.params.running_stats_mut().into_iter().zip(stats) {
            run.update(s, momentum);
        }
    }
}

/// Input layer: `ê¹ = e⁰ + relu(BN(e⁰C⁰ᵀ))`, gates `e¹ = gate(ê¹)`, and
/// `h¹ᵢ = relu(BN(V⁰ Σⱼ e¹ᵢⱼ ⊙ e⁰ᵢⱼ))`.
fn input_layer(
    tape: &mut Tape,
    graph: &GraphInput,
    e0: Var,
    p: &InputVars,
    norms: &mut Norms,
    eps: f64,
) -> Result<(Var, Var, Var)> {
    let ce = tape.linear(e0, p.c0)?;
    let ce = norms.apply(tape, ce, p.edge_bn)?;
    let ce = tape.relu(ce);
    let e_hat = tape.add(e0, ce)?;
    let gates = gate_normalize(tape, e_hat, &graph.receivers, graph.nodes, eps)?;

    let gated = tape.hadamard(gates, e0)?;
    let msg = tape.linear(gated, p.v0)?;
    let agg = tape.segment_sum(msg, &graph.receivers, graph.nodes)?;
    let agg = norms.apply(tape, agg, p.node_bn)?;
    let h = tape.relu(agg);
    Ok((h, e_hat, gates))
}

/// Residual gated convolution. Edge pre-activations
/// `êᵢⱼ = r(ê_prev) + relu(BN(A hᵢ + B hⱼ + C ê_prev))`, where `r` is the
/// identity when widths agree and `C` otherwise; node update
/// `hᵢ + relu(BN(U hᵢ + Σⱼ gate(ê)ᵢⱼ ⊙ V hⱼ))`.
fn conv_layer(
    tape: &mut Tape,
    graph: &GraphInput,
    h: Var,
    e_prev: Var,
    p: &ConvVars,
    norms: &mut Norms,
    eps: f64,
) -> Result<(Var, Var, Var)> {
    let ah = tape.linear(h, p.a)?;
    let ah = tape.gather_rows(ah, &graph.receivers)?;
    let bh = tape.linear(h, p.b)?;
    let bh = tape.gather_rows(bh, &graph.senders)?;
    let ce = tape.linear(e_prev, p.c)?;
    let s = tape.add(ah, bh)?;
    let s = tape.add(s, ce)?;
    let s = norms.apply(tape, s, p.edge_bn)?;
    let s = tape.relu(s);
    let residual = if tape.value(e_prev).cols() == tape.value(s).cols() {
        e_prev
    } else {
        ce
    };
    let e_hat = tape.add(residual, s)?;
    let gates = gate_normalize(tape, e_hat, &graph.receivers, graph.nodes, eps)?;

    let vh = tape.linear(h, p.v)?;
    let vh = tape.gather_rows(vh, &graph.senders)?;
    let msg = tape.hadamard(gates, vh)?;
    let agg = tape.segment_sum(msg, &graph.receivers, graph.nodes)?;
    let uh = tape.linear(h, p.u)?;
    let pre = tape.add(uh, agg)?;
    let pre = norms.apply(tape, pre, p.node_bn)?;
    let upd = tape.relu(pre);
    let h_next = tape.add(h, upd)?;
    Ok((h_next, e_hat, gates))
}

/// Decoder logits `W₂ relu(W₁ [hᵢ | hⱼ | êᵢⱼ] + b₁) + b₂`.
fn decode(tape: &mut Tape, graph: &GraphInput, h: Var, e_hat: Var, p: &DecoderVars) -> Result<Var> {
    let hi = tape.gather_rows(h, &graph.receivers)?;
    let hj = tape.gather_rows(h, &graph.senders)?;
    let cat = tape.concat_cols(&[hi, hj, e_hat])?;
    let z = tape.linear(cat, p.w1)?;
    let z = tape.add_row(z, p.b1)?;
    let z = tape.relu(z);
    let out = tape.linear(z, p.w2)?;
    Ok(tape.add_row(out, p.b2)?)
}

/// `Σₖ ln σ(±hₗₖᵀ hᵣₖ)`; the sign is negative for `repel`.
fn neighborhood_log_likelihood(
    tape: &mut Tape,
    h: Var,
    left: &[usize],
    right: &[usize],
    repel: bool,
) -> Result<Var> {
    let hl = tape.gather_rows(h, left)?;
    let hr = tape.gather_rows(h, right)?;
    let prod = tape.hadamard(hl, hr)?;
    let dots = tape.row_sum(prod);
    let dots = if repel { tape.scale(dots, -1.0) } else { dots };
    let ll = tape.log_sigmoid(dots);
    Ok(tape.sum(ll))
}
