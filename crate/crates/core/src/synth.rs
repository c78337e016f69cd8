//! Synthetic defeasible corpora with a planted node-level signal.
//!
//! Each example draws a label uniformly. The node at `signal_role` carries the
//! cue token [`CUE_TOKEN`] exactly when the (possibly flipped) label is
//! "strengthens"; the cue never appears in the query. All other text is filled
//! from the phrase bank in `assets/phrase_bank.txt`. Example `i` uses ChaCha8
//! stream `i` under the configured seed, so corpora are reproducible and can
//! be generated in any order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Corpus;
use crate::feedback::{detect_overlaps, OverlapConfig};
use crate::graph::{InferenceGraph, NodeRole};
use crate::query::{DefeasibleQuery, Label};

pub const CUE_TOKEN: &str = "cueplus";

const PHRASE_BANK: &str = include_str!("../assets/phrase_bank.txt");

const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("could not draw a clean graph for example {0}")]
    Exhausted(usize),
}

pub struct PhraseBank {
    pub templates: Vec<String>,
    pub words: Vec<String>,
}

impl PhraseBank {
    pub fn builtin() -> Self {
        let mut templates = Vec::new();
        let mut words = Vec::new();
        let mut section = "";
        for line in PHRASE_BANK.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') {
                section = line;
                continue;
            }
            match section {
                "[templates]" => templates.push(line.to_string()),
                "[words]" => words.push(line.to_string()),
                _ => {}
            }
        }
        Self { templates, words }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_examples: usize,
    pub signal_role: NodeRole,
    /// Probability that the cue agrees with the label.
    pub signal_strength: f64,
    /// Probability that a graph gets one duplicated node pair.
    pub duplicate_rate: f64,
    /// Number of phrase-bank words in use.
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_examples: 512,
            signal_role: NodeRole::SituationMinus,
            signal_strength: 1.0,
            duplicate_rate: 0.0,
            vocab_size: 200,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bank = PhraseBank::builtin().words.len();
        if self.n_examples < 1 {
            return Err(SynthError::Config("n_examples must be >= 1".into()));
        }
        if !(0.5..=1.0).contains(&self.signal_strength) {
            return Err(SynthError::Config(format!(
                "signal_strength must be in [0.5, 1], got {}",
                self.signal_strength
            )));
        }
        if !(0.0..=1.0).contains(&self.duplicate_rate) {
            return Err(SynthError::Config(format!(
                "duplicate_rate must be in [0, 1], got {}",
                self.duplicate_rate
            )));
        }
        // 11 slots of up to 3 words each are drawn without replacement
        if !(40..=bank).contains(&self.vocab_size) {
            return Err(SynthError::Config(format!(
                "vocab_size must be in [40, {bank}], got {}",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

fn fill(template: &str, words: &mut impl Iterator<Item = String>) -> String {
    let mut out = template.to_string();
    for slot in ["{0}", "{1}", "{2}"] {
        if out.contains(slot) {
            out = out.replace(slot, &words.next().expect("enough words"));
        }
    }
    out
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    bank: PhraseBank,
    overlap: OverlapConfig,
}

impl Generator<'_> {
    fn example(&self, index: usize) -> Result<(DefeasibleQuery, InferenceGraph), SynthError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(index as u64);
        let label = if rng.gen_bool(0.5) { Label::Strengthens } else { Label::Weakens };
        let cue_label = if rng.gen::<f64>() < self.cfg.signal_strength { label } else { label.flipped() };
        let duplicate = rng.gen::<f64>() < self.cfg.duplicate_rate;
        let vocab = &self.bank.words[..self.cfg.vocab_size];

        for _ in 0..MAX_ATTEMPTS {
            let mut words = vocab.choose_multiple(&mut rng, 33).cloned().collect::<Vec<_>>().into_iter();
            let mut phrase = |rng: &mut ChaCha8Rng| {
                let t = self.bank.templates.choose(rng).expect("templates");
                fill(t, &mut words)
            };
            let premise = phrase(&mut rng);
            let hypothesis = phrase(&mut rng);
            let update = phrase(&mut rng);
            let mut labels: Vec<String> = NodeRole::ALL.iter().map(|_| phrase(&mut rng)).collect();
            let signal = self.cfg.signal_role.index();
            if cue_label == Label::Strengthens {
                labels[signal] = format!("{} {CUE_TOKEN}", labels[signal]);
            }
            if duplicate {
                let pair: Vec<usize> = rand::seq::index::sample(&mut rng, 8, 2).into_vec();
                // the signal node is always the copy source so the cue survives
                let (src, dst) = if pair[1] == signal { (pair[1], pair[0]) } else { (pair[0], pair[1]) };
                labels[dst] = labels[src].clone();
            }
            let graph = InferenceGraph::from_labels(
                <[String; 8]>::try_from(labels).expect("eight labels"),
            )
            .expect("phrases are non-empty");
            let clean = detect_overlaps(&graph, &self.overlap)
                .map(|r| r.is_clean())
                .unwrap_or(false);
            if duplicate || clean {
                let q = DefeasibleQuery::new(&premise, &hypothesis, &update, Some(label))
                    .expect("phrases are non-empty");
                return Ok((q, graph));
            }
        }
        Err(SynthError::Exhausted(index))
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<Corpus, SynthError> {
    cfg.validate()?;
    let gen = Generator {
        cfg,
        bank: PhraseBank::builtin(),
        overlap: OverlapConfig::default(),
    };
    let mut corpus = Corpus::default();
    for i in 0..cfg.n_examples {
        let (q, g) = gen.example(i)?;
        corpus.queries.push(q);
        corpus.graphs.push(g);
    }
    Ok(corpus)
}

/// Does the node at `role` carry the cue token?
pub fn has_cue(g: &InferenceGraph, role: NodeRole) -> bool {
    g.label(role).split_whitespace().any(|t| t == CUE_TOKEN)
}
