//! Training loop, evaluation and checkpoints.
//!
//! The optimizer is Adam with decoupled weight decay (biases are not decayed).
//! The learning rate warms up linearly over the first `warmup_fraction` of
//! optimizer steps and then decays linearly to zero. Gradients are averaged
//! over `batch_size * grad_accum` examples and clipped to a global L2 norm of
//! `clip_norm` before each step.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::data::Corpus;
use crate::embed::fnv1a64;
use crate::encoders::{EncoderConfig, EncoderError, EncoderKind, EncoderModel, Features, GateTrace, Mode};
use crate::nn::ParamRegistry;
use crate::query::Label;

pub const CHECKPOINT_VERSION: u64 = 1;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("example {0} has no gold label")]
    MissingLabel(usize),
    #[error("invalid train config: {0}")]
    Config(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u64, expected: u64 },
    #[error("checkpoint holds a {found} model, expected {expected}")]
    KindMismatch { expected: EncoderKind, found: EncoderKind },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 30,
            batch_size: 16,
            grad_accum: 2,
            weight_decay: 0.01,
            clip_norm: 1.0,
            warmup_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Learning rate used for large pretrained encoders.
    pub fn pretrained_preset() -> Self {
        Self {
            lr: 2e-5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.grad_accum == 0 {
            return bad("epochs, batch_size and grad_accum must be >= 1".into());
        }
        if !(self.weight_decay >= 0.0) || !(self.clip_norm > 0.0) {
            return bad("weight_decay must be >= 0 and clip_norm > 0".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction must be in [0, 1), got {}", self.warmup_fraction));
        }
        Ok(())
    }
}

/// Linear warmup then linear decay; `step` counts from 0.
pub fn lr_at(cfg: &TrainConfig, step: usize, total_steps: usize) -> f64 {
    let warmup = (cfg.warmup_fraction * total_steps as f64).floor() as usize;
    if step < warmup {
        cfg.lr * (step + 1) as f64 / warmup as f64
    } else {
        cfg.lr * (total_steps - step) as f64 / (total_steps - warmup) as f64
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(params: &ParamRegistry, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.values.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut ParamRegistry, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (i, p) in params.iter_mut().enumerate() {
            let decay = if p.shape.len() > 1 { self.weight_decay } else { 0.0 };
            for k in 0..p.values.len() {
                let g = p.grad[k];
                self.m[i][k] = BETA1 * self.m[i][k] + (1.0 - BETA1) * g;
                self.v[i][k] = BETA2 * self.v[i][k] + (1.0 - BETA2) * g * g;
                let update = (self.m[i][k] / c1) / ((self.v[i][k] / c2).sqrt() + ADAM_EPS);
                p.values[k] -= lr * (update + decay * p.values[k]);
            }
        }
    }
}

/// Rescales gradients to global norm at most `max_norm`; returns the
/// post-clip norm.
pub fn clip_grad_norm(params: &mut ParamRegistry, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > max_norm {
        params.scale_grads(max_norm / norm);
        params.grad_norm()
    } else {
        norm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Content hash of the returned checkpoint.
    pub checkpoint_id: String,
    /// Post-clip global gradient norm of every optimizer step.
    pub grad_norms: Vec<f64>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,dev_acc\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.dev_accuracy));
        }
        out
    }
}

fn gold_classes(c: &Corpus) -> Result<Vec<usize>, TrainError> {
    c.queries
        .iter()
        .enumerate()
        .map(|(i, q)| q.label.map(Label::class).ok_or(TrainError::MissingLabel(i)))
        .collect()
}

pub fn featurize_corpus(model: &EncoderModel, c: &Corpus) -> Result<Vec<Features>, TrainError> {
    let e = model.embedder()?;
    c.queries
        .iter()
        .zip(&c.graphs)
        .map(|(q, g)| Ok(crate::encoders::featurize(q, g, model.config.str_layout, &e)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<Label>,
    pub logits: Vec<Vec<f64>>,
    /// One per example for MoE models, empty otherwise.
    pub traces: Vec<GateTrace>,
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

fn evaluate_features(model: &EncoderModel, feats: &[Features], gold: &[usize]) -> Result<Evaluation, TrainError> {
    let mut eval = Evaluation {
        accuracy: 0.0,
        predictions: Vec::with_capacity(feats.len()),
        logits: Vec::with_capacity(feats.len()),
        traces: Vec::new(),
    };
    let mut correct = 0usize;
    for (f, &g) in feats.iter().zip(gold) {
        let (logits, trace) = model.predict(f)?;
        let c = argmax(&logits);
        correct += usize::from(c == g);
        eval.predictions.push(Label::from_class(c));
        eval.logits.push(logits);
        eval.traces.extend(trace);
    }
    eval.accuracy = if feats.is_empty() { 0.0 } else { correct as f64 / feats.len() as f64 };
    Ok(eval)
}

pub fn evaluate(model: &EncoderModel, data: &Corpus) -> Result<Evaluation, TrainError> {
    let gold = gold_classes(data)?;
    evaluate_features(model, &featurize_corpus(model, data)?, &gold)
}

/// Trains from a fresh initialization seeded by `train_cfg.seed` and returns
/// the parameters of the epoch with the best dev accuracy (earliest on ties).
pub fn train(
    train_data: &Corpus,
    dev_data: &Corpus,
    enc_cfg: &EncoderConfig,
    train_cfg: &TrainConfig,
) -> Result<(EncoderModel, TrainHistory), TrainError> {
    train_cfg.validate()?;
    let model = EncoderModel::init(enc_cfg.clone(), train_cfg.seed)?;
    train_model(model, train_data, dev_data, train_cfg)
}

/// Like [`train`], starting from the parameters already in `model`.
pub fn train_model(
    mut model: EncoderModel,
    train_data: &Corpus,
    dev_data: &Corpus,
    train_cfg: &TrainConfig,
) -> Result<(EncoderModel, TrainHistory), TrainError> {
    train_cfg.validate()?;
    if train_data.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if dev_data.is_empty() {
        return Err(TrainError::EmptySplit("dev"));
    }
    let train_feats = featurize_corpus(&model, train_data)?;
    let train_gold = gold_classes(train_data)?;
    let dev_feats = featurize_corpus(&model, dev_data)?;
    let dev_gold = gold_classes(dev_data)?;

    let n = train_feats.len();
    let batches_per_epoch = n.div_ceil(train_cfg.batch_size);
    let steps_per_epoch = batches_per_epoch.div_ceil(train_cfg.grad_accum);
    let total_steps = steps_per_epoch * train_cfg.epochs;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    dropout_rng.set_stream(2);

    let mut opt = AdamW::new(&model.params, train_cfg.weight_decay);
    let mut params = model.params.clone();
    let mut best: Option<(usize, f64, ParamRegistry)> = None;
    let mut history = TrainHistory {
        epochs: Vec::with_capacity(train_cfg.epochs),
        best_epoch: 0,
        checkpoint_id: String::new(),
        grad_norms: Vec::with_capacity(total_steps),
    };
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..train_cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        params.zero_grad();
        for (b, batch) in order.chunks(train_cfg.batch_size).enumerate() {
            let scale = 1.0 / (batch.len() * train_cfg.grad_accum) as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += model.loss_with(
                    &mut params,
                    &train_feats[i],
                    train_gold[i],
                    Mode::Train(&mut dropout_rng),
                    scale,
                )?;
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += batch_loss;
            if (b + 1) % train_cfg.grad_accum == 0 || b + 1 == batches_per_epoch {
                history.grad_norms.push(clip_grad_norm(&mut params, train_cfg.clip_norm));
                opt.step(&mut params, lr_at(train_cfg, step, total_steps));
                params.zero_grad();
                step += 1;
            }
        }
        model.params = params.clone();
        let dev_acc = evaluate_features(&model, &dev_feats, &dev_gold)?.accuracy;
        log::info!("epoch {epoch}: loss {:.4} dev_acc {dev_acc:.4}", loss_sum / n as f64);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            dev_accuracy: dev_acc,
        });
        if best.as_ref().map_or(true, |(_, a, _)| dev_acc > *a) {
            best = Some((epoch, dev_acc, params.clone()));
        }
    }
    let (best_epoch, _, best_params) = best.expect("at least one epoch");
    model.params = best_params;
    history.best_epoch = best_epoch;
    history.checkpoint_id = checkpoint_id(&model);
    Ok((model, history))
}

fn checkpoint_value(model: &EncoderModel) -> Value {
    let mut params = Map::new();
    for p in model.params.iter() {
        params.insert(p.name.clone(), json!({ "shape": p.shape, "values": p.values }));
    }
    json!({
        "version": CHECKPOINT_VERSION,
        "kind": model.kind(),
        "config": model.config,
        "seed": model.seed,
        "params": params,
    })
}

pub fn checkpoint_json(model: &EncoderModel) -> String {
    serde_json::to_string(&checkpoint_value(model)).expect("checkpoint serializes")
}

/// `ckpt-` followed by the FNV-1a hash of the checkpoint JSON.
pub fn checkpoint_id(model: &EncoderModel) -> String {
    format!("ckpt-{:016x}", fnv1a64(0, checkpoint_json(model).as_bytes()))
}

pub fn parse_checkpoint(text: &str) -> Result<EncoderModel, TrainError> {
    let corrupt = |m: String| TrainError::CorruptCheckpoint(m);
    let v: Value = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
    let version = v["version"].as_u64().ok_or_else(|| corrupt("missing version".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let kind: EncoderKind =
        serde_json::from_value(v["kind"].clone()).map_err(|e| corrupt(format!("kind: {e}")))?;
    let config: EncoderConfig =
        serde_json::from_value(v["config"].clone()).map_err(|e| corrupt(format!("config: {e}")))?;
    if config.kind != kind {
        return Err(corrupt(format!("kind {kind} disagrees with config kind {}", config.kind)));
    }
    let seed = v["seed"].as_u64().ok_or_else(|| corrupt("missing seed".into()))?;
    let stored = v["params"].as_object().ok_or_else(|| corrupt("missing params".into()))?;
    let mut model = EncoderModel::init(config, seed).map_err(|e| corrupt(e.to_string()))?;
    if stored.len() != model.params.len() {
        return Err(corrupt(format!(
            "{} stored tensors, model has {}",
            stored.len(),
            model.params.len()
        )));
    }
    for p in model.params.iter_mut() {
        let entry = stored
            .get(&p.name)
            .ok_or_else(|| corrupt(format!("missing tensor {:?}", p.name)))?;
        let shape: Vec<usize> = serde_json::from_value(entry["shape"].clone())
            .map_err(|e| corrupt(format!("{}: {e}", p.name)))?;
        let values: Vec<f64> = serde_json::from_value(entry["values"].clone())
            .map_err(|e| corrupt(format!("{}: {e}", p.name)))?;
        if shape != p.shape || values.len() != p.values.len() {
            return Err(corrupt(format!("tensor {:?} has shape {:?}, expected {:?}", p.name, shape, p.shape)));
        }
        p.values = values;
    }
    Ok(model)
}

pub fn save_checkpoint(model: &EncoderModel, path: &Path) -> Result<(), TrainError> {
    fs::write(path, checkpoint_json(model)).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderModel, TrainError> {
    let text = fs::read_to_string(path).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_checkpoint(&text)
}

/// Loads a checkpoint and insists on the encoder kind.
pub fn load_checkpoint_as(path: &Path, expected: EncoderKind) -> Result<EncoderModel, TrainError> {
    let model = load_checkpoint(path)?;
    if model.kind() != expected {
        return Err(TrainError::KindMismatch {
            expected,
            found: model.kind(),
        });
    }
    Ok(model)
}
