//! The multi-scale GCN.
//!
//! ```text
//! H0      = relu(H W_in^T + b_in)                       (dropout in training)
//! repeat L times, over all edges regardless of kind:
//!   m_ij  = relu(h_j) + 1e-7
//!   a_ij  = softmax_{j in N(i)}(beta * m_ij)            (per channel)
//!   agg_i = sum_j a_ij * m_ij                           (0 when N(i) is empty)
//!   h_i'  = MLP(h_i + agg_i) + h_i,  MLP = Linear(h,2h) . relu . Linear(2h,h)
//! x_i     = [h_i^0 | h_i^1 | ... | h_i^L]               (width D = h(L+1))
//! s_i     = (tanh(x_i V^T) * sigmoid(x_i U^T)) w^T
//! z       = softmax(s)                                   (over all vertices)
//! p       = sum_i z_i x_i
//! logits  = relu(p W1^T + b1) W2^T + b2                  (dropout after the relu)
//! ```
//!
//! Weights use the `(out, in)` layout.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MultiScaleGraph;
use crate::numeric::rng::{stream, Purpose};
use crate::numeric::{Init, ParamStore, Tape, Tensor, Var};

pub const MESSAGE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default)]
    pub dropout: f64,
    /// Width of the attention projections; follows `hidden_dim` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_dim: Option<usize>,
    #[serde(default = "default_beta")]
    pub softmax_beta: f64,
}

fn default_hidden() -> usize {
    64
}
fn default_layers() -> usize {
    3
}
fn default_classes() -> usize {
    2
}
fn default_beta() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: default_hidden(),
            num_layers: default_layers(),
            num_classes,
            dropout: 0.0,
            attention_dim: None,
            softmax_beta: default_beta(),
        }
    }

    pub fn attention_dim(&self) -> usize {
        self.attention_dim.unwrap_or(self.hidden_dim)
    }

    /// Width of the dense concatenation, `h * (L + 1)`.
    pub fn pooled_dim(&self) -> usize {
        self.hidden_dim * (self.num_layers + 1)
    }

    pub fn head_hidden_dim(&self) -> usize {
        self.pooled_dim().div_ceil(2)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(format!("model config: {m}")));
        if self.input_dim == 0 || self.hidden_dim == 0 || self.attention_dim() == 0 {
            return fail("dimensions must be positive".into());
        }
        if self.num_layers == 0 {
            return fail("num_layers must be at least 1".into());
        }
        if self.num_classes < 2 {
            return fail("num_classes must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !self.softmax_beta.is_finite() {
            return fail("softmax_beta must be finite".into());
        }
        Ok(())
    }

    /// A warning when the depth does not equal `levels - 1`.
    pub fn depth_warning(&self, levels: usize) -> Option<String> {
        (levels >= 2 && self.num_layers != levels - 1).then(|| {
            format!(
                "num_layers = {} but the graphs have {levels} levels (expected {})",
                self.num_layers,
                levels - 1
            )
        })
    }
}

/// Exact number of learnable scalars for `config`.
pub fn count_params(config: &ModelConfig) -> usize {
    let (d, h, l, c) = (
        config.input_dim,
        config.hidden_dim,
        config.num_layers,
        config.num_classes,
    );
    let (da, dp, hh) = (config.attention_dim(), config.pooled_dim(), config.head_hidden_dim());
    let input = d * h + h;
    let gen = l * ((h * 2 * h + 2 * h) + (2 * h * h + h));
    let attention = 2 * da * dp + da;
    let head = (dp * hh + hh) + (hh * c + c);
    input + gen + attention + head
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks drawn from the given seed.
    Train {
        seed: u64,
    },
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    pub logits: Vec<f64>,
    /// Attention weight of every vertex; positive, sums to 1.
    pub attention: Vec<f64>,
    pub pooled: Vec<f64>,
    /// `h^0 .. h^L`, each `V x hidden_dim`, when requested.
    pub per_layer_vertex_states: Option<Vec<Tensor>>,
}

impl ForwardResult {
    pub fn probabilities(&self) -> Vec<f64> {
        let mut p = self.logits.clone();
        crate::numeric::softmax_in_place(&mut p);
        p
    }
}

/// Loss, outputs, and per-parameter gradients for one graph.
#[derive(Debug, Clone)]
pub struct GraphGradient {
    pub loss: f64,
    pub result: ForwardResult,
    /// Same order as the parameter store.
    pub grads: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

struct Recorded {
    params: Vec<Var>,
    states: Vec<Var>,
    attention: Var,
    pooled: Var,
    logits: Var,
}

impl Model {
    /// Fresh parameters drawn from `seed`: weights `uniform_fan_in`, biases zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (d, h, l, c) = (
            config.input_dim,
            config.hidden_dim,
            config.num_layers,
            config.num_classes,
        );
        let (da, dp, hh) = (config.attention_dim(), config.pooled_dim(), config.head_hidden_dim());
        let mut p = ParamStore::new(seed);
        p.init_param("input.weight", &[h, d], Init::UniformFanIn)?;
        p.init_param("input.bias", &[h], Init::Zeros)?;
        for i in 0..l {
            p.init_param(&format!("gen.{i}.mlp0.weight"), &[2 * h, h], Init::UniformFanIn)?;
            p.init_param(&format!("gen.{i}.mlp0.bias"), &[2 * h], Init::Zeros)?;
            p.init_param(&format!("gen.{i}.mlp1.weight"), &[h, 2 * h], Init::UniformFanIn)?;
            p.init_param(&format!("gen.{i}.mlp1.bias"), &[h], Init::Zeros)?;
        }
        p.init_param("attention.v", &[da, dp], Init::UniformFanIn)?;
        p.init_param("attention.u", &[da, dp], Init::UniformFanIn)?;
        p.init_param("attention.w", &[1, da], Init::UniformFanIn)?;
        p.init_param("head.0.weight", &[hh, dp], Init::UniformFanIn)?;
        p.init_param("head.0.bias", &[hh], Init::Zeros)?;
        p.init_param("head.1.weight", &[c, hh], Init::UniformFanIn)?;
        p.init_param("head.1.bias", &[c], Init::Zeros)?;
        debug_assert_eq!(p.num_scalars(), count_params(&config));
        Ok(Self { config, params: p })
    }

    /// Wraps loaded parameters after checking names and shapes against `config`.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let reference = Model::init(config.clone(), 0)?;
        if reference.params.names() != params.names() {
            return Err(Error::invalid("parameter names do not match the model config"));
        }
        for (i, name) in params.names().iter().enumerate() {
            if reference.params.value(i).shape() != params.value(i).shape() {
                return Err(Error::shape(format!(
                    "{name}: file has {:?}, config implies {:?}",
                    params.value(i).shape(),
                    reference.params.value(i).shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn forward(&self, g: &MultiScaleGraph, mode: Mode) -> Result<ForwardResult> {
        self.run(g, mode, false)
    }

    /// Like [`Model::forward`], also returning every layer's vertex states.
    pub fn forward_inspect(&self, g: &MultiScaleGraph, mode: Mode) -> Result<ForwardResult> {
        self.run(g, mode, true)
    }

    fn run(&self, g: &MultiScaleGraph, mode: Mode, keep_states: bool) -> Result<ForwardResult> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, g, mode, false)?;
        let out = collect(&tape, &rec, keep_states);
        check_finite(&out)?;
        Ok(out)
    }

    /// Cross-entropy loss of `label` and its gradient with respect to every parameter.
    pub fn loss_and_gradients(&self, g: &MultiScaleGraph, label: usize, mode: Mode) -> Result<GraphGradient> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, g, mode, true)?;
        let loss_var = tape.cross_entropy(rec.logits, label)?;
        let loss = tape.value(loss_var).data()[0];
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss on {}", g.wsi_id)));
        }
        let result = collect(&tape, &rec, false);
        check_finite(&result)?;
        let mut grads = tape.backward(loss_var)?;
        let grads = rec
            .params
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(self.params.value(i).shape()))
            })
            .collect();
        Ok(GraphGradient { loss, result, grads })
    }

    fn record(&self, tape: &mut Tape, g: &MultiScaleGraph, mode: Mode, train_grads: bool) -> Result<Recorded> {
        let cfg = &self.config;
        if g.num_vertices() == 0 {
            return Err(Error::invalid(format!("graph {} has no vertices", g.wsi_id)));
        }
        if g.dim != cfg.input_dim {
            return Err(Error::shape(format!(
                "graph {} has feature dim {}, model expects {}",
                g.wsi_id, g.dim, cfg.input_dim
            )));
        }
        let params: Vec<Var> = self
            .params
            .values()
            .iter()
            .map(|t| {
                if train_grads {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        let p = |name: &str| params[self.params.index_of(name).expect("parameter registered at init")];

        let mut dropout_rng = match mode {
            Mode::Train { seed } => Some(stream(seed, Purpose::Dropout, &[])),
            Mode::Eval => None,
        };

        let v = g.num_vertices();
        let feats = g.features.iter().map(|&x| f64::from(x)).collect();
        let x_raw = tape.constant(Tensor::matrix(v, g.dim, feats)?);

        let lin = tape.matmul_t(x_raw, p("input.weight"))?;
        let lin = tape.add_row(lin, p("input.bias"))?;
        let mut h = tape.relu(lin);
        if let Some(rng) = dropout_rng.as_mut() {
            h = tape.dropout(h, cfg.dropout, rng)?;
        }

        let offsets: Arc<[usize]> = Arc::from(g.csr_offsets.as_slice());
        let targets: Arc<[usize]> = g.csr_targets.iter().map(|&t| t as usize).collect();
        let mut states = vec![h];
        for l in 0..cfg.num_layers {
            let act = tape.relu(h);
            let msg_v = tape.add_scalar(act, MESSAGE_EPS);
            let msgs = tape.gather_rows(msg_v, targets.clone())?;
            let scores = if cfg.softmax_beta == 1.0 {
                msgs
            } else {
                tape.scale(msgs, cfg.softmax_beta)
            };
            let alpha = tape.segment_softmax(scores, offsets.clone())?;
            let weighted = tape.mul(alpha, msgs)?;
            let agg = tape.segment_sum(weighted, offsets.clone())?;
            let u = tape.add(h, agg)?;

            let a = tape.matmul_t(u, p(&format!("gen.{l}.mlp0.weight")))?;
            let a = tape.add_row(a, p(&format!("gen.{l}.mlp0.bias")))?;
            let a = tape.relu(a);
            let b = tape.matmul_t(a, p(&format!("gen.{l}.mlp1.weight")))?;
            let b = tape.add_row(b, p(&format!("gen.{l}.mlp1.bias")))?;
            h = tape.add(b, h)?;
            states.push(h);
        }

        let x = tape.concat_cols(&states)?;
        let ua = tape.matmul_t(x, p("attention.v"))?;
        let ua = tape.tanh(ua);
        let ga = tape.matmul_t(x, p("attention.u"))?;
        let ga = tape.sigmoid(ga);
        let gated = tape.mul(ua, ga)?;
        let s = tape.matmul_t(gated, p("attention.w"))?;
        let s = tape.transpose(s);
        let attention = tape.row_softmax(s);
        let pooled = tape.matmul(attention, x)?;

        let hid = tape.matmul_t(pooled, p("head.0.weight"))?;
        let hid = tape.add_row(hid, p("head.0.bias"))?;
        let mut hid = tape.relu(hid);
        if let Some(rng) = dropout_rng.as_mut() {
            hid = tape.dropout(hid, cfg.dropout, rng)?;
        }
        let logits = tape.matmul_t(hid, p("head.1.weight"))?;
        let logits = tape.add_row(logits, p("head.1.bias"))?;

        Ok(Recorded {
            params,
            states,
            attention,
            pooled,
            logits,
        })
    }
}

fn collect(tape: &Tape, rec: &Recorded, keep_states: bool) -> ForwardResult {
    ForwardResult {
        logits: tape.value(rec.logits).data().to_vec(),
        attention: tape.value(rec.attention).data().to_vec(),
        pooled: tape.value(rec.pooled).data().to_vec(),
        per_layer_vertex_states: keep_states.then(|| rec.states.iter().map(|&s| tape.value(s).clone()).collect()),
    }
}

fn check_finite(r: &ForwardResult) -> Result<()> {
    if !r
        .logits
        .iter()
        .chain(&r.attention)
        .chain(&r.pooled)
        .all(|x| x.is_finite())
    {
        return Err(Error::NonFinite("forward output".into()));
    }
    Ok(())
}
