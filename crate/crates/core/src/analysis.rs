//! Gate-value reports and paired model comparisons.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoders::GateTrace;
use crate::graph::NodeRole;
use crate::query::Label;
use crate::stats::{
    entropy, mcnemar_exact, micro_sign_test, paired_confusion, pearson_matrix, PairedOutcomes, StatsError,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub n: usize,
    pub accuracy: f64,
    pub roles: Vec<NodeRole>,
    /// Mean node-expert weight per role, in `roles` order.
    pub mean_moe_v: Vec<f64>,
    /// Mean `[graph, question]` weights, keyed by gold label.
    pub mean_moe_gx_by_label: BTreeMap<Label, [f64; 2]>,
    pub mean_moe_v_entropy: f64,
    pub mean_moe_gx_entropy: f64,
    /// Pearson correlation between node-expert weights across examples.
    pub moe_v_correlation: Vec<Vec<f64>>,
}

pub fn gate_report(
    traces: &[GateTrace],
    roles: &[NodeRole],
    gold: &[Label],
    preds: &[Label],
) -> Result<GateReport, StatsError> {
    if traces.len() != gold.len() {
        return Err(StatsError::LengthMismatch(traces.len(), gold.len()));
    }
    if preds.len() != gold.len() {
        return Err(StatsError::LengthMismatch(preds.len(), gold.len()));
    }
    if traces.is_empty() {
        return Err(StatsError::EmptyCorpus);
    }
    if let Some(t) = traces.iter().find(|t| t.moe_v.len() != roles.len()) {
        return Err(StatsError::LengthMismatch(t.moe_v.len(), roles.len()));
    }
    let n = traces.len() as f64;
    let k = roles.len();
    let mean_moe_v = (0..k).map(|j| traces.iter().map(|t| t.moe_v[j]).sum::<f64>() / n).collect();

    let mut by_label = BTreeMap::new();
    for label in Label::ALL {
        let part: Vec<&GateTrace> = traces.iter().zip(gold).filter(|(_, g)| **g == label).map(|(t, _)| t).collect();
        if part.is_empty() {
            continue;
        }
        let m = part.len() as f64;
        let sum = part.iter().fold([0.0; 2], |acc, t| [acc[0] + t.moe_gx[0], acc[1] + t.moe_gx[1]]);
        by_label.insert(label, [sum[0] / m, sum[1] / m]);
    }

    let mut v_ent = 0.0;
    let mut gx_ent = 0.0;
    for t in traces {
        v_ent += entropy(&t.moe_v)?;
        gx_ent += entropy(&t.moe_gx)?;
    }
    let moe_v_correlation = if traces.len() >= 2 {
        pearson_matrix(&traces.iter().map(|t| t.moe_v.clone()).collect::<Vec<_>>())?
    } else {
        (0..k).map(|a| (0..k).map(|b| f64::from(u8::from(a == b))).collect()).collect()
    };
    let correct = preds.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(GateReport {
        n: traces.len(),
        accuracy: correct as f64 / n,
        roles: roles.to_vec(),
        mean_moe_v,
        mean_moe_gx_by_label: by_label,
        mean_moe_v_entropy: v_ent / n,
        mean_moe_gx_entropy: gx_ent / n,
        moe_v_correlation,
    })
}

impl GateReport {
    /// Plain-text rendering for terminals.
    pub fn to_table(&self) -> String {
        let mut out = format!("examples {}  accuracy {:.4}\n", self.n, self.accuracy);
        out.push_str("role  mean_gate\n");
        for (r, m) in self.roles.iter().zip(&self.mean_moe_v) {
            out.push_str(&format!("{:<5} {m:.4}\n", r.tag()));
        }
        for (label, gx) in &self.mean_moe_gx_by_label {
            out.push_str(&format!("{label}: graph {:.4} question {:.4}\n", gx[0], gx[1]));
        }
        out.push_str(&format!(
            "entropy moe_v {:.4} (max {:.4})  moe_gx {:.4} (max {:.4})\n",
            self.mean_moe_v_entropy,
            (self.roles.len() as f64).ln(),
            self.mean_moe_gx_entropy,
            2f64.ln()
        ));
        out
    }
}

/// Histogram of node-expert weights as CSV `role,bin_lo,bin_hi,count` over
/// `bins` equal-width bins of [0, 1]; the last bin is closed.
pub fn gate_histogram_csv(traces: &[GateTrace], roles: &[NodeRole], bins: usize) -> String {
    let bins = bins.max(1);
    let mut out = String::from("role,bin_lo,bin_hi,count\n");
    for (j, role) in roles.iter().enumerate() {
        let mut counts = vec![0usize; bins];
        for t in traces {
            if let Some(&v) = t.moe_v.get(j) {
                let b = ((v * bins as f64).floor() as usize).min(bins - 1);
                counts[b] += 1;
            }
        }
        for (b, c) in counts.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{c}\n",
                role.tag(),
                b as f64 / bins as f64,
                (b + 1) as f64 / bins as f64
            ));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    #[serde(flatten)]
    pub outcomes: PairedOutcomes,
    pub mcnemar_p: f64,
    pub sign_p: f64,
}

pub fn compare_models(preds_a: &[Label], preds_b: &[Label], gold: &[Label]) -> Result<Comparison, StatsError> {
    let outcomes = paired_confusion(preds_a, preds_b, gold)?;
    Ok(Comparison {
        mcnemar_p: mcnemar_exact(outcomes.n01, outcomes.n10),
        sign_p: micro_sign_test(outcomes.n01, outcomes.n10),
        outcomes,
    })
}
