use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError, Result};
use crate::tensor::{RunningStats, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running: RunningStats,
}

impl BatchNormParams {
    pub fn identity(width: usize) -> Self {
        Self {
            gamma: Tensor::filled(1, width, 1.0),
            beta: Tensor::zeros(1, width),
            running: RunningStats::new(width),
        }
    }
}

/// Edge-only input layer: `C0` gates the raw edge features, `V0` projects
/// the gated features into node space.
#[derive(Debug, Clone, PartialEq)]
pub struct InputLayerParams {
    /// `hidden x input_dim`
    pub v0: Tensor,
    /// `input_dim x input_dim`
    pub c0: Tensor,
    pub edge_bn: BatchNormParams,
    pub node_bn: BatchNormParams,
}

/// One gated convolution layer. `c` is `hidden x edge_in`, where `edge_in`
/// is the input width of the first conv layer and `hidden` afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams {
    pub u: Tensor,
    pub v: Tensor,
    pub a: Tensor,
    pub b: Tensor,
    pub c: Tensor,
    pub edge_bn: BatchNormParams,
    pub node_bn: BatchNormParams,
}

/// Two-layer perceptron over `[h_i | h_j | e_ij]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub input: InputLayerParams,
    pub convs: Vec<ConvLayerParams>,
    pub decoder: DecoderParams,
}

/// Shapes of the trainable tensors in canonical order.
pub fn parameter_layout(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
    let (d, h) = (config.input_dim, config.hidden);
    let mut out = vec![
        ("input.v0".to_string(), (h, d)),
        ("input.c0".to_string(), (d, d)),
        ("input.edge_bn.gamma".to_string(), (1, d)),
        ("input.edge_bn.beta".to_string(), (1, d)),
        ("input.node_bn.gamma".to_string(), (1, h)),
        ("input.node_bn.beta".to_string(), (1, h)),
    ];
    for l in 0..config.layers {
        let edge_in = if l == 0 { d } else { h };
        for (name, shape) in [
            ("u", (h, h)),
            ("v", (h, h)),
            ("a", (h, h)),
            ("b", (h, h)),
            ("c", (h, edge_in)),
            ("edge_bn.gamma", (1, h)),
            ("edge_bn.beta", (1, h)),
            ("node_bn.gamma", (1, h)),
            ("node_bn.beta", (1, h)),
        ] {
            out.push((format!("conv{l}.{name}"), shape));
        }
    }
    let cat = 3 * h;
    out.extend([
        ("decoder.w1".to_string(), (config.decoder_hidden, cat)),
        ("decoder.b1".to_string(), (1, config.decoder_hidden)),
        ("decoder.w2".to_string(), (d, config.decoder_hidden)),
        ("decoder.b2".to_string(), (1, d)),
    ]);
    out
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized buffer")
}

impl ModelParams {
    /// Seeded symmetric-uniform weights, zero biases, identity BN affines.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = parameter_layout(config)
            .into_iter()
            .map(|(name, (r, c))| {
                if name.ends_with("gamma") {
                    Tensor::filled(r, c, 1.0)
                } else if name.ends_with("beta") || name.starts_with("decoder.b") {
                    Tensor::zeros(r, c)
                } else {
                    glorot(&mut rng, r, c)
                }
            })
            .collect();
        Self::from_tensors(config, tensors)
    }

    /// All weights and biases zero, BN affines at `gamma = 1, beta = 0`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let tensors = parameter_layout(config)
            .into_iter()
            .map(|(name, (r, c))| {
                let fill = if name.ends_with("gamma") { 1.0 } else { 0.0 };
                Tensor::filled(r, c, fill)
            })
            .collect();
        Self::from_tensors(config, tensors)
    }

    /// Rebuilds parameters from tensors in [`parameter_layout`] order. BN
    /// running statistics start unset.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let layout = parameter_layout(config);
        if tensors.len() != layout.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != *shape {
                return Err(ModelError::Shape {
                    name: name.clone(),
                    expected: *shape,
                    found: t.shape(),
                });
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let bn = |next: &mut dyn FnMut() -> Tensor| {
            let gamma = next();
            let beta = next();
            let width = gamma.cols();
            BatchNormParams {
                gamma,
                beta,
                running: RunningStats::new(width),
            }
        };
        let v0 = next();
        let c0 = next();
        let edge_bn = bn(&mut next);
        let node_bn = bn(&mut next);
        let input = InputLayerParams {
            v0,
            c0,
            edge_bn,
            node_bn,
        };
        let mut convs = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let (u, v, a, b, c) = (next(), next(), next(), next(), next());
            let edge_bn = bn(&mut next);
            let node_bn = bn(&mut next);
            convs.push(ConvLayerParams {
                u,
                v,
                a,
                b,
                c,
                edge_bn,
                node_bn,
            });
        }
        let decoder = DecoderParams {
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        };
        Ok(Self {
            input,
            convs,
            decoder,
        })
    }

    /// Trainable tensors in [`parameter_layout`] order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![
            &self.input.v0,
            &self.input.c0,
            &self.input.edge_bn.gamma,
            &self.input.edge_bn.beta,
            &self.input.node_bn.gamma,
            &self.input.node_bn.beta,
        ];
        for c in &self.convs {
            out.extend([
                &c.u,
                &c.v,
                &c.a,
                &c.b,
                &c.c,
                &c.edge_bn.gamma,
                &c.edge_bn.beta,
                &c.node_bn.gamma,
                &c.node_bn.beta,
            ]);
        }
        let d = &self.decoder;
        out.extend([&d.w1, &d.b1, &d.w2, &d.b2]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.input.v0,
            &mut self.input.c0,
            &mut self.input.edge_bn.gamma,
            &mut self.input.edge_bn.beta,
            &mut self.input.node_bn.gamma,
            &mut self.input.node_bn.beta,
        ];
        for c in &mut self.convs {
            out.extend([
                &mut c.u,
                &mut c.v,
                &mut c.a,
                &mut c.b,
                &mut c.c,
                &mut c.edge_bn.gamma,
                &mut c.edge_bn.beta,
                &mut c.node_bn.gamma,
                &mut c.node_bn.beta,
            ]);
        }
        let d = &mut self.decoder;
        out.extend([&mut d.w1, &mut d.b1, &mut d.w2, &mut d.b2]);
        out
    }

    /// Running statistics in forward-pass order: input edge, input node,
    /// then edge and node for each conv layer.
    pub fn running_stats(&self) -> Vec<&RunningStats> {
        let mut out = vec![&self.input.edge_bn.running, &self.input.node_bn.running];
        for c in &self.convs {
            out.extend([&c.edge_bn.running, &c.node_bn.running]);
        }
        out
    }

    pub fn running_stats_mut(&mut self) -> Vec<&mut RunningStats> {
        let mut out = vec![
            &mut self.input.edge_bn.running,
            &mut self.input.node_bn.running,
        ];
        for c in &mut self.convs {
            out.extend([&mut c.edge_bn.running, &mut c.node_bn.running]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Records every trainable tensor as a tape leaf.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|t| tape.leaf(t.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BnVars {
    pub gamma: Var,
    pub beta: Var,
}

pub(crate) struct InputVars {
    pub v0: Var,
    pub c0: Var,
    pub edge_bn: BnVars,
    pub node_bn: BnVars,
}

pub(crate) struct ConvVars {
    pub u: Var,
    pub v: Var,
    pub a: Var,
    pub b: Var,
    pub c: Var,
    pub edge_bn: BnVars,
    pub node_bn: BnVars,
}

pub(crate) struct DecoderVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Tape handles for the trainable tensors, mirroring [`ModelParams`].
pub(crate) struct ParamVars {
    pub input: InputVars,
    pub convs: Vec<ConvVars>,
    pub decoder: DecoderVars,
}

impl ParamVars {
    pub fn from_list(vars: &[Var], layers: usize) -> Result<Self> {
        let expected = 6 + 9 * layers + 4;
        if vars.len() != expected {
            return Err(ModelError::Config(format!(
                "expected {expected} parameter handles, got {}",
                vars.len()
            )));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked");
        let bn = |next: &mut dyn FnMut() -> Var| BnVars {
            gamma: next(),
            beta: next(),
        };
        let v0 = next();
        let c0 = next();
        let edge_bn = bn(&mut next);
        let node_bn = bn(&mut next);
        let input = InputVars {
            v0,
            c0,
            edge_bn,
            node_bn,
        };
        let convs = (0..layers)
            .map(|_| {
                let (u, v, a, b, c) = (next(), next(), next(), next(), next());
                let edge_bn = bn(&mut next);
                let node_bn = bn(&mut next);
                ConvVars {
                    u,
                    v,
                    a,
                    b,
                    c,
                    edge_bn,
                    node_bn,
                }
            })
            .collect();
        let decoder = DecoderVars {
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        };
        Ok(Self {
            input,
            convs,
            decoder,
        })
    }
}
