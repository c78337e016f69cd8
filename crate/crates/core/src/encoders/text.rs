use serde::{Deserialize, Serialize};

use super::{dropout, p, EncoderConfig, EncoderError, Mode};
use crate::graph::{InferenceGraph, NodeRole};
use crate::nn::{NnError, ParamRegistry, Tape, Var};
use crate::query::DefeasibleQuery;

/// How the STR encoder lays out its input string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrLayout {
    /// `P | H | nodes... | S`
    #[serde(rename = "PH_G_S")]
    PhGS,
    /// Node labels only.
    #[serde(rename = "nodes_only")]
    NodesOnly,
}

/// Builds the STR input text; node labels are joined in canonical role order.
pub fn str_text(q: &DefeasibleQuery, g: &InferenceGraph, layout: StrLayout) -> String {
    let nodes: Vec<&str> = NodeRole::ALL.iter().map(|r| g.label(*r)).collect();
    match layout {
        StrLayout::PhGS => format!("{} | {} | {} | {}", q.premise, q.hypothesis, nodes.join(" | "), q.update),
        StrLayout::NodesOnly => nodes.join(" | "),
    }
}

/// Linear classifier over a single frozen embedding (STR and baseline).
pub(crate) fn classify(
    tape: &mut Tape,
    params: &ParamRegistry,
    cfg: &EncoderConfig,
    embedding: &[f64],
    mode: &mut Mode<'_>,
) -> Result<Var, EncoderError> {
    if embedding.len() != cfg.d {
        return Err(NnError::ShapeMismatch(format!("expected width {}, got {}", cfg.d, embedding.len())).into());
    }
    let x = tape.input(embedding);
    let x = dropout(tape, x, cfg.dropout, mode)?;
    let (w, b) = (p(tape, params, "classifier.w")?, p(tape, params, "classifier.b")?);
    Ok(tape.linear(w, b, x)?)
}
