//! Closed-form gradients of a mixture of experts whose gated expert logits
//! feed a softmax cross-entropy loss:
//!
//! ```text
//! o_j   = sum_i p_i E_ij
//! yhat  = softmax(o)
//! L     = -ln yhat_c
//! dL/dp_m    = -E_mc (1 - yhat_c) + sum_{j != c} yhat_j E_mj
//! dL/dE_mc   = -p_m (1 - yhat_c)
//! ```
//!
//! Both vanish as `yhat_c -> 1`.

use super::tape::softmax;
use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct MoeClosedForm {
    /// `dL/dp`, one entry per expert.
    pub d_gate: Vec<f64>,
    /// `dL/dE[:, c]`, one entry per expert.
    pub d_correct_logit: Vec<f64>,
    pub yhat: Vec<f64>,
    pub loss: f64,
}

/// `experts[m][j]` is expert m's logit for class j; `gate` is a probability
/// vector over experts.
pub fn closed_form_moe_grads(
    experts: &[Vec<f64>],
    gate: &[f64],
    gold: usize,
) -> Result<MoeClosedForm, NnError> {
    let n = experts.len();
    if n == 0 || gate.len() != n {
        return Err(NnError::ShapeMismatch(format!("{} experts, {} gate weights", n, gate.len())));
    }
    let k = experts[0].len();
    if experts.iter().any(|e| e.len() != k) || gold >= k {
        return Err(NnError::ShapeMismatch("ragged expert logits or class out of range".into()));
    }
    let s: f64 = gate.iter().sum();
    if (s - 1.0).abs() > 1e-9 || gate.iter().any(|p| *p < 0.0) {
        return Err(NnError::NotNormalized(s));
    }
    let o: Vec<f64> = (0..k)
        .map(|j| (0..n).map(|i| gate[i] * experts[i][j]).sum())
        .collect();
    let yhat = softmax(&o)?;
    let m = o.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let loss = m + o.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - o[gold];
    let miss = 1.0 - yhat[gold];
    let d_gate = experts
        .iter()
        .map(|e| {
            let others: f64 = (0..k).filter(|&j| j != gold).map(|j| yhat[j] * e[j]).sum();
            -e[gold] * miss + others
        })
        .collect();
    let d_correct_logit = gate.iter().map(|p| -p * miss).collect();
    Ok(MoeClosedForm {
        d_gate,
        d_correct_logit,
        yhat,
        loss,
    })
}
