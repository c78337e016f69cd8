//! Query/graph encoders producing two-way class logits.
//!
//! * `moe` - two-level mixture of experts: node experts pooled into a graph
//!   vector, then graph and query experts pooled into the classifier input.
//! * `gcn` - graph convolution over the template adjacency, pooled by
//!   query-conditioned multi-head attention.
//! * `str` - the node labels joined into one string and embedded as text.
//! * `baseline` - the query text alone.

pub mod gcn;
pub mod moe;
pub mod text;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, EmbedderConfig, HashingEmbedder, TextEmbedder};
use crate::graph::{InferenceGraph, NodeRole};
use crate::nn::{NnError, ParamRegistry, Tape, Var};
use crate::query::DefeasibleQuery;

pub use gcn::{gcn_forward, gcn_layer};
pub use moe::{moe_forward, MoeOutput};
pub use text::{str_text, StrLayout};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("missing parameter {0:?}")]
    MissingParam(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Moe,
    Gcn,
    Str,
    Baseline,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 4] = [EncoderKind::Moe, EncoderKind::Gcn, EncoderKind::Str, EncoderKind::Baseline];

    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Moe => "moe",
            EncoderKind::Gcn => "gcn",
            EncoderKind::Str => "str",
            EncoderKind::Baseline => "baseline",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderKind {
    type Err = EncoderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EncoderKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| EncoderError::Config(format!("unknown encoder kind {s:?}")))
    }
}

pub const DEFAULT_MOE_ROLES: [NodeRole; 5] = [
    NodeRole::ContextPlus,
    NodeRole::ContextMinus,
    NodeRole::SituationMinus,
    NodeRole::MediatorPlus,
    NodeRole::MediatorMinus,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Embedding width; must equal `embedder.d`.
    pub d: usize,
    pub moe_roles: Vec<NodeRole>,
    pub gcn_layers: usize,
    /// GCN hidden width k; `None` means `d`.
    pub gcn_hidden: Option<usize>,
    pub attn_heads: usize,
    /// Per-head attention width; `None` means 256 clamped to `8 d`.
    pub attn_dim: Option<usize>,
    pub dropout: f64,
    pub str_layout: StrLayout,
    pub embedder: EmbedderConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Moe,
            d: 64,
            moe_roles: DEFAULT_MOE_ROLES.to_vec(),
            gcn_layers: 2,
            gcn_hidden: None,
            attn_heads: 1,
            attn_dim: None,
            dropout: 0.1,
            str_layout: StrLayout::PhGS,
            embedder: EmbedderConfig::default(),
        }
    }
}

impl EncoderConfig {
    pub fn new(kind: EncoderKind, d: usize) -> Self {
        Self {
            kind,
            d,
            embedder: EmbedderConfig { d, ..EmbedderConfig::default() },
            ..Self::default()
        }
    }

    pub fn hidden(&self) -> usize {
        self.gcn_hidden.unwrap_or(self.d)
    }

    pub fn attention_width(&self) -> usize {
        self.attn_dim.unwrap_or_else(|| 256.min(8 * self.d))
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::Config(m));
        if self.d < 2 {
            return bad(format!("d must be >= 2, got {}", self.d));
        }
        if self.embedder.d != self.d {
            return bad(format!("embedder width {} differs from d = {}", self.embedder.d, self.d));
        }
        if self.moe_roles.is_empty() {
            return bad("moe_roles is empty".into());
        }
        let mut seen = self.moe_roles.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.moe_roles.len() {
            return bad("moe_roles must be distinct".into());
        }
        if self.gcn_layers < 1 || self.attn_heads < 1 || self.hidden() < 1 || self.attention_width() < 1 {
            return bad("gcn_layers, attn_heads, gcn_hidden and attn_dim must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        self.embedder.validate()?;
        Ok(())
    }
}

/// Mixture weights recorded by one MoE forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateTrace {
    /// Node-expert weights, in `moe_roles` order.
    pub moe_v: Vec<f64>,
    /// `[graph, question]` weights.
    pub moe_gx: [f64; 2],
}

/// Frozen-embedder inputs for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub query: Vec<f64>,
    /// One row per role, canonical order.
    pub nodes: Vec<Vec<f64>>,
    pub adjacency: Vec<Vec<usize>>,
    /// Embedding of the STR-layout string.
    pub text: Vec<f64>,
}

pub fn featurize<E: TextEmbedder + ?Sized>(
    q: &DefeasibleQuery,
    g: &InferenceGraph,
    layout: StrLayout,
    e: &E,
) -> Result<Features, EncoderError> {
    Ok(Features {
        query: crate::embed::embed_query(q, e)?,
        nodes: crate::embed::embed_nodes(g, &NodeRole::ALL, e)?,
        adjacency: g.neighbors(),
        text: e.embed(&str_text(q, g, layout))?,
    })
}

/// Dropout switch for a forward pass.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

pub(crate) fn dropout(tape: &mut Tape, x: Var, rate: f64, mode: &mut Mode<'_>) -> Result<Var, NnError> {
    match mode {
        Mode::Train(rng) if rate > 0.0 => {
            let n = tape.value(x).len();
            let keep = 1.0 / (1.0 - rate);
            let mask: Vec<f64> = (0..n)
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                .collect();
            tape.mul_const(x, &mask)
        }
        _ => Ok(x),
    }
}

pub(crate) fn p(tape: &mut Tape, params: &ParamRegistry, name: &str) -> Result<Var, EncoderError> {
    let id = params.id(name).ok_or_else(|| EncoderError::MissingParam(name.to_string()))?;
    Ok(tape.param(params, id))
}

/// Result of one encoder forward pass on a tape.
pub struct ForwardOutput {
    pub logits: Var,
    pub trace: Option<GateTrace>,
    /// Per-head attention over nodes (GCN only).
    pub attention: Option<Vec<Vec<f64>>>,
}

/// Registers all parameters for `cfg`: Glorot-uniform weights, zero biases.
pub fn init_params(cfg: &EncoderConfig, seed: u64) -> Result<ParamRegistry, EncoderError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reg = ParamRegistry::new();
    let d = cfg.d;
    match cfg.kind {
        EncoderKind::Moe => moe::register(&mut reg, cfg, &mut rng)?,
        EncoderKind::Gcn => gcn::register(&mut reg, cfg, &mut rng)?,
        EncoderKind::Str | EncoderKind::Baseline => {
            reg.glorot("classifier.w", 2, d, &mut rng)?;
            reg.zeros("classifier.b", vec![2])?;
        }
    }
    Ok(reg)
}

/// Configuration plus trained parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub seed: u64,
    pub params: ParamRegistry,
}

impl EncoderModel {
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self, EncoderError> {
        let params = init_params(&config, seed)?;
        Ok(Self { config, seed, params })
    }

    pub fn kind(&self) -> EncoderKind {
        self.config.kind
    }

    pub fn embedder(&self) -> Result<HashingEmbedder, EncoderError> {
        Ok(HashingEmbedder::new(self.config.embedder.clone())?)
    }

    pub fn featurize(&self, q: &DefeasibleQuery, g: &InferenceGraph) -> Result<Features, EncoderError> {
        featurize(q, g, self.config.str_layout, &self.embedder()?)
    }

    /// Records a forward pass using `params` (which may differ from
    /// `self.params`, e.g. during gradient checks).
    pub fn forward_with(
        &self,
        params: &ParamRegistry,
        tape: &mut Tape,
        feats: &Features,
        mut mode: Mode<'_>,
    ) -> Result<ForwardOutput, EncoderError> {
        let cfg = &self.config;
        match cfg.kind {
            EncoderKind::Moe => {
                let rows: Vec<Vec<f64>> = cfg
                    .moe_roles
                    .iter()
                    .map(|r| feats.nodes[r.index()].clone())
                    .collect();
                let out = moe_forward(tape, params, cfg, &rows, &feats.query, &mut mode)?;
                Ok(ForwardOutput {
                    logits: out.logits,
                    trace: Some(out.trace),
                    attention: None,
                })
            }
            EncoderKind::Gcn => {
                let (logits, attention) =
                    gcn_forward(tape, params, cfg, &feats.nodes, &feats.adjacency, &feats.query, &mut mode)?;
                Ok(ForwardOutput {
                    logits,
                    trace: None,
                    attention: Some(attention),
                })
            }
            EncoderKind::Str => Ok(ForwardOutput {
                logits: text::classify(tape, params, cfg, &feats.text, &mut mode)?,
                trace: None,
                attention: None,
            }),
            EncoderKind::Baseline => Ok(ForwardOutput {
                logits: text::classify(tape, params, cfg, &feats.query, &mut mode)?,
                trace: None,
                attention: None,
            }),
        }
    }

    /// Evaluation-mode logits and gate trace.
    pub fn predict(&self, feats: &Features) -> Result<(Vec<f64>, Option<GateTrace>), EncoderError> {
        let mut tape = Tape::new();
        let out = self.forward_with(&self.params, &mut tape, feats, Mode::Eval)?;
        Ok((tape.value(out.logits).to_vec(), out.trace))
    }

    /// Cross-entropy loss on one example; gradients are accumulated into
    /// `params` scaled by `grad_scale` when it is non-zero.
    pub fn loss_with(
        &self,
        params: &mut ParamRegistry,
        feats: &Features,
        gold: usize,
        mode: Mode<'_>,
        grad_scale: f64,
    ) -> Result<f64, EncoderError> {
        let mut tape = Tape::new();
        let out = self.forward_with(params, &mut tape, feats, mode)?;
        let loss = tape.softmax_xent(out.logits, gold)?;
        if grad_scale != 0.0 {
            tape.backward(loss).accumulate_into(params, grad_scale);
        }
        Ok(tape.scalar(loss))
    }
}

const CHECK_WORDS: [&str; 24] = [
    "river", "stone", "lamp", "child", "storm", "field", "bread", "horse", "glass", "music", "paper", "smoke",
    "winter", "garden", "engine", "coffee", "forest", "letter", "bridge", "candle", "market", "window", "cloud",
    "shadow",
];

fn random_phrase(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..=4);
    (0..n).map(|_| CHECK_WORDS[rng.gen_range(0..CHECK_WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// Encoder configuration used for gradient certification: width `d`, with
/// the attention width reduced to `d`.
pub fn gradcheck_config(kind: EncoderKind, d: usize) -> EncoderConfig {
    let mut cfg = EncoderConfig::new(kind, d);
    cfg.attn_dim = Some(d);
    cfg
}

/// Builds a random query/graph instance and a freshly initialized model from
/// `seed`, then checks its analytic gradients (dropout active, with one fixed
/// mask) against central differences.
pub fn gradcheck_random_instance(
    cfg: &EncoderConfig,
    seed: u64,
    eps: f64,
    tol: f64,
) -> Result<crate::nn::GradCheckReport, EncoderError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = DefeasibleQuery::new(&random_phrase(&mut rng), &random_phrase(&mut rng), &random_phrase(&mut rng), None)
        .expect("non-empty phrases");
    let labels: Vec<String> = (0..8).map(|_| random_phrase(&mut rng)).collect();
    let g = InferenceGraph::from_labels(<[String; 8]>::try_from(labels).expect("eight labels"))
        .expect("non-empty labels");
    let gold = rng.gen_range(0..2);
    let mask_seed = rng.gen::<u64>();
    let mut cfg = cfg.clone();
    cfg.embedder.seed = seed;
    let model = EncoderModel::init(cfg, seed)?;
    let feats = model.featurize(&q, &g)?;
    let mut params = model.params.clone();
    let report = crate::nn::grad_check(&mut params, eps, tol, |p, grad| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let scale = if grad { 1.0 } else { 0.0 };
        model
            .loss_with(p, &feats, gold, Mode::Train(&mut mask_rng), scale)
            .map_err(|e| match e {
                EncoderError::Nn(n) => n,
                other => NnError::ShapeMismatch(other.to_string()),
            })
    })?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_bounded() {
        for kind in EncoderKind::ALL {
            let cfg = EncoderConfig::new(kind, 6);
            let a = init_params(&cfg, 3).unwrap();
            assert_eq!(a, init_params(&cfg, 3).unwrap());
            assert_ne!(a, init_params(&cfg, 4).unwrap());
            for t in a.iter() {
                if t.shape.len() == 1 {
                    assert!(t.values.iter().all(|v| *v == 0.0), "{} not zero", t.name);
                } else {
                    let bound = (6.0 / (t.shape[0] + t.shape[1]) as f64).sqrt();
                    assert!(t.values.iter().all(|v| v.abs() <= bound), "{} out of bounds", t.name);
                }
            }
        }
    }

    #[test]
    fn config_checks() {
        let mut cfg = EncoderConfig::new(EncoderKind::Moe, 8);
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.attention_width(), 64);
        cfg.moe_roles.push(NodeRole::ContextPlus);
        assert!(cfg.validate().is_err());
        let mut cfg = EncoderConfig::new(EncoderKind::Gcn, 8);
        cfg.embedder.d = 16;
        assert!(cfg.validate().is_err());
        assert_eq!(EncoderConfig::default().attention_width(), 256);
        assert!("transformer".parse::<EncoderKind>().is_err());
    }
}
