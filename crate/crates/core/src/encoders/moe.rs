//! Hierarchical mixture of experts.
//!
//! Node level: a gate reads the concatenated node embeddings and weights one
//! single-layer expert per role; the weighted sum is the graph vector `h_G`.
//! Graph/query level: a second gate reads `[h_G; h_x]` and weights a graph
//! expert and a question expert. A linear classifier maps the result to
//! logits.

use rand::Rng;

use super::{dropout, p, EncoderConfig, EncoderError, GateTrace, Mode};
use crate::nn::{NnError, ParamRegistry, Tape, Var};

pub(crate) fn register<R: Rng>(reg: &mut ParamRegistry, cfg: &EncoderConfig, rng: &mut R) -> Result<(), NnError> {
    let d = cfg.d;
    let n = cfg.moe_roles.len();
    reg.glorot("moe_v.gate.w", n, n * d, rng)?;
    reg.zeros("moe_v.gate.b", vec![n])?;
    for role in &cfg.moe_roles {
        reg.glorot(&format!("moe_v.expert.{}.w", role.tag()), d, d, rng)?;
        reg.zeros(&format!("moe_v.expert.{}.b", role.tag()), vec![d])?;
    }
    reg.glorot("moe_gx.gate.w", 2, 2 * d, rng)?;
    reg.zeros("moe_gx.gate.b", vec![2])?;
    reg.glorot("moe_gx.expert.graph.w", d, d, rng)?;
    reg.zeros("moe_gx.expert.graph.b", vec![d])?;
    reg.glorot("moe_gx.expert.query.w", d, d, rng)?;
    reg.zeros("moe_gx.expert.query.b", vec![d])?;
    reg.glorot("classifier.w", 2, d, rng)?;
    reg.zeros("classifier.b", vec![2])?;
    Ok(())
}

pub struct MoeOutput {
    pub logits: Var,
    pub graph: Var,
    pub combined: Var,
    pub trace: GateTrace,
}

/// `nodes` holds one embedding per entry of `cfg.moe_roles`, in that order.
pub fn moe_forward(
    tape: &mut Tape,
    params: &ParamRegistry,
    cfg: &EncoderConfig,
    nodes: &[Vec<f64>],
    query: &[f64],
    mode: &mut Mode<'_>,
) -> Result<MoeOutput, EncoderError> {
    if nodes.len() != cfg.moe_roles.len() || nodes.iter().any(|v| v.len() != cfg.d) || query.len() != cfg.d {
        return Err(NnError::ShapeMismatch(format!(
            "moe expects {} node vectors and a query of width {}",
            cfg.moe_roles.len(),
            cfg.d
        ))
        .into());
    }
    let node_vars: Vec<Var> = nodes.iter().map(|v| tape.input(v)).collect();
    let hx = tape.input(query);

    let flat = tape.concat(&node_vars);
    let (gw, gb) = (p(tape, params, "moe_v.gate.w")?, p(tape, params, "moe_v.gate.b")?);
    let gate_logits = tape.linear(gw, gb, flat)?;
    let gate_v = tape.softmax(gate_logits)?;
    let mut expert_outs = Vec::with_capacity(node_vars.len());
    for (role, &h) in cfg.moe_roles.iter().zip(&node_vars) {
        let w = p(tape, params, &format!("moe_v.expert.{}.w", role.tag()))?;
        let b = p(tape, params, &format!("moe_v.expert.{}.b", role.tag()))?;
        expert_outs.push(tape.linear(w, b, h)?);
    }
    let hg = tape.mix(gate_v, &expert_outs)?;

    let joint = tape.concat(&[hg, hx]);
    let (qw, qb) = (p(tape, params, "moe_gx.gate.w")?, p(tape, params, "moe_gx.gate.b")?);
    let gx_logits = tape.linear(qw, qb, joint)?;
    let gate_gx = tape.softmax(gx_logits)?;
    let (egw, egb) = (p(tape, params, "moe_gx.expert.graph.w")?, p(tape, params, "moe_gx.expert.graph.b")?);
    let eg = tape.linear(egw, egb, hg)?;
    let (eqw, eqb) = (p(tape, params, "moe_gx.expert.query.w")?, p(tape, params, "moe_gx.expert.query.b")?);
    let eq = tape.linear(eqw, eqb, hx)?;
    let hy = tape.mix(gate_gx, &[eg, eq])?;

    let hy_drop = dropout(tape, hy, cfg.dropout, mode)?;
    let (cw, cb) = (p(tape, params, "classifier.w")?, p(tape, params, "classifier.b")?);
    let logits = tape.linear(cw, cb, hy_drop)?;

    let gx = tape.value(gate_gx);
    Ok(MoeOutput {
        logits,
        graph: hg,
        combined: hy,
        trace: GateTrace {
            moe_v: tape.value(gate_v).to_vec(),
            moe_gx: [gx[0], gx[1]],
        },
    })
}
