//! Graph-convolution encoder with query-conditioned attention pooling.
//!
//! ```text
//! h_v^0     = W0 h_v
//! h_v^(l+1) = relu( mean_{w in A(v)} W_l h_w^l + W_l h_v^l )
//! a_i       = softmax( (Wq_i h_Q) . (Wk_i h_v^L) / sqrt(d) )   over nodes v
//! head_i    = sum_v a_i[v] Wv_i h_v^L
//! h_G       = Wo [head_1; ...; head_h]
//! logits    = W_out [h_G; h_Q]
//! ```
//!
//! A node without neighbors gets a zero neighbor term.

use rand::Rng;

use super::{dropout, p, EncoderConfig, EncoderError, Mode};
use crate::nn::{NnError, ParamRegistry, Tape, Var};

pub(crate) fn register<R: Rng>(reg: &mut ParamRegistry, cfg: &EncoderConfig, rng: &mut R) -> Result<(), NnError> {
    let (d, k, a, h) = (cfg.d, cfg.hidden(), cfg.attention_width(), cfg.attn_heads);
    reg.glorot("gcn.w0", k, d, rng)?;
    for l in 0..cfg.gcn_layers {
        reg.glorot(&format!("gcn.layer{l}.w"), k, k, rng)?;
    }
    for i in 0..h {
        reg.glorot(&format!("attn.head{i}.wq"), a, d, rng)?;
        reg.glorot(&format!("attn.head{i}.wk"), a, k, rng)?;
        reg.glorot(&format!("attn.head{i}.wv"), a, k, rng)?;
    }
    reg.glorot("attn.wo", d, h * a, rng)?;
    reg.glorot("classifier.w", 2, 2 * d, rng)?;
    Ok(())
}

/// One propagation step with shared weight `w` over an arbitrary undirected
/// neighbor list.
pub fn gcn_layer(tape: &mut Tape, w: Var, nodes: &[Var], adjacency: &[Vec<usize>]) -> Result<Vec<Var>, NnError> {
    if adjacency.len() != nodes.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} adjacency rows for {} nodes",
            adjacency.len(),
            nodes.len()
        )));
    }
    let transformed: Vec<Var> = nodes
        .iter()
        .map(|&h| tape.matvec(w, h))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(nodes.len());
    for (v, neigh) in adjacency.iter().enumerate() {
        if neigh.iter().any(|&u| u >= nodes.len()) {
            return Err(NnError::ShapeMismatch(format!("neighbor index out of range at node {v}")));
        }
        let pre = if neigh.is_empty() {
            transformed[v]
        } else {
            let ns: Vec<Var> = neigh.iter().map(|&u| transformed[u]).collect();
            let agg = tape.mean(&ns)?;
            tape.add(agg, transformed[v])?
        };
        out.push(tape.relu(pre));
    }
    Ok(out)
}

/// Returns the logits and the `heads x nodes` attention matrix.
pub fn gcn_forward(
    tape: &mut Tape,
    params: &ParamRegistry,
    cfg: &EncoderConfig,
    nodes: &[Vec<f64>],
    adjacency: &[Vec<usize>],
    query: &[f64],
    mode: &mut Mode<'_>,
) -> Result<(Var, Vec<Vec<f64>>), EncoderError> {
    if nodes.is_empty() || nodes.iter().any(|v| v.len() != cfg.d) || query.len() != cfg.d {
        return Err(NnError::ShapeMismatch(format!("gcn expects node and query vectors of width {}", cfg.d)).into());
    }
    let w0 = p(tape, params, "gcn.w0")?;
    let mut hs: Vec<Var> = Vec::with_capacity(nodes.len());
    for v in nodes {
        let x = tape.input(v);
        hs.push(tape.matvec(w0, x)?);
    }
    for l in 0..cfg.gcn_layers {
        let w = p(tape, params, &format!("gcn.layer{l}.w"))?;
        hs = gcn_layer(tape, w, &hs, adjacency)?;
    }

    let hq = tape.input(query);
    let inv_sqrt_d = 1.0 / (cfg.d as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.attn_heads);
    let mut attention = Vec::with_capacity(cfg.attn_heads);
    for i in 0..cfg.attn_heads {
        let wq = p(tape, params, &format!("attn.head{i}.wq"))?;
        let wk = p(tape, params, &format!("attn.head{i}.wk"))?;
        let wv = p(tape, params, &format!("attn.head{i}.wv"))?;
        let q = tape.matvec(wq, hq)?;
        let mut scores = Vec::with_capacity(hs.len());
        let mut values = Vec::with_capacity(hs.len());
        for &h in &hs {
            let k = tape.matvec(wk, h)?;
            let s = tape.dot(q, k)?;
            scores.push(tape.scale(s, inv_sqrt_d));
            values.push(tape.matvec(wv, h)?);
        }
        let s = tape.concat(&scores);
        let a = tape.softmax(s)?;
        attention.push(tape.value(a).to_vec());
        heads.push(tape.mix(a, &values)?);
    }
    let cat = tape.concat(&heads);
    let wo = p(tape, params, "attn.wo")?;
    let hg = tape.matvec(wo, cat)?;
    let joint = tape.concat(&[hg, hq]);
    let joint = dropout(tape, joint, cfg.dropout, mode)?;
    let wout = p(tape, params, "classifier.w")?;
    let logits = tape.matvec(wout, joint)?;
    Ok((logits, attention))
}
