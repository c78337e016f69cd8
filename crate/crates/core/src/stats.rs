//! Corpus repetition metrics, gate statistics and paired significance tests.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::OverlapReport;
use crate::query::Label;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("probability vector sums to {0}, not 1")]
    NotNormalized(f64),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
}

/// How a repeated-node count is taken from an overlap group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepeatCount {
    /// Every node in a group counts (a pair contributes 2).
    #[default]
    AllMembers,
    /// Only nodes beyond the first count (a pair contributes 1).
    Surplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepetitionMetrics {
    pub per_graph: f64,
    pub pct_with_repetition: f64,
    pub n_graphs: usize,
}

pub fn repetition_metrics(corpus: &[OverlapReport]) -> Result<RepetitionMetrics, StatsError> {
    repetition_metrics_with(corpus, RepeatCount::AllMembers)
}

pub fn repetition_metrics_with(
    corpus: &[OverlapReport],
    mode: RepeatCount,
) -> Result<RepetitionMetrics, StatsError> {
    if corpus.is_empty() {
        return Err(StatsError::EmptyCorpus);
    }
    let n = corpus.len();
    let repeated: usize = corpus
        .iter()
        .map(|r| match mode {
            RepeatCount::AllMembers => r.repeated_nodes(),
            RepeatCount::Surplus => r.surplus_nodes(),
        })
        .sum();
    let with_rep = corpus.iter().filter(|r| !r.is_clean()).count();
    Ok(RepetitionMetrics {
        per_graph: repeated as f64 / n as f64,
        pct_with_repetition: 100.0 * with_rep as f64 / n as f64,
        n_graphs: n,
    })
}

/// `P(X <= k)` for `X ~ Binomial(n, 1/2)`.
///
/// Exact integer binomial sums up to n = 120 (the counts fit in u128); beyond
/// that the terms are summed in log space.
fn binom_half_cdf(k: u64, n: u64) -> f64 {
    let k = k.min(n);
    if n <= 120 {
        let mut coef: u128 = 1;
        let mut total: u128 = 1;
        for i in 1..=k {
            coef = coef * (n - i + 1) as u128 / i as u128;
            total += coef;
        }
        return total as f64 / 2f64.powi(n as i32);
    }
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let mut ln_coef = 0.0f64;
    let mut total = ln_half_n.exp();
    for i in 1..=k {
        ln_coef += ((n - i + 1) as f64).ln() - (i as f64).ln();
        total += (ln_coef + ln_half_n).exp();
    }
    total
}

/// Exact two-sided McNemar test on the discordant counts.
pub fn mcnemar_exact(n01: u64, n10: u64) -> f64 {
    let n = n01 + n10;
    if n == 0 {
        return 1.0;
    }
    (2.0 * binom_half_cdf(n01.min(n10), n)).min(1.0)
}

/// Sign test over per-example wins and losses between two systems; ties are
/// discarded. Uses the same exact binomial machinery as [`mcnemar_exact`].
pub fn micro_sign_test(wins: u64, losses: u64) -> f64 {
    mcnemar_exact(wins, losses)
}

/// Correct/incorrect cross-tabulation of two systems. `n01` counts examples
/// system A got wrong and system B got right.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedOutcomes {
    pub n00: u64,
    pub n01: u64,
    pub n10: u64,
    pub n11: u64,
}

impl PairedOutcomes {
    pub fn total(&self) -> u64 {
        self.n00 + self.n01 + self.n10 + self.n11
    }
}

pub fn paired_confusion(
    preds_a: &[Label],
    preds_b: &[Label],
    gold: &[Label],
) -> Result<PairedOutcomes, StatsError> {
    if preds_a.len() != gold.len() {
        return Err(StatsError::LengthMismatch(preds_a.len(), gold.len()));
    }
    if preds_b.len() != gold.len() {
        return Err(StatsError::LengthMismatch(preds_b.len(), gold.len()));
    }
    if gold.is_empty() {
        return Err(StatsError::EmptyCorpus);
    }
    let mut out = PairedOutcomes::default();
    for ((a, b), g) in preds_a.iter().zip(preds_b).zip(gold) {
        match (a == g, b == g) {
            (false, false) => out.n00 += 1,
            (false, true) => out.n01 += 1,
            (true, false) => out.n10 += 1,
            (true, true) => out.n11 += 1,
        }
    }
    Ok(out)
}

const NORM_TOL: f64 = 1e-9;

fn check_normalized(p: &[f64]) -> Result<(), StatsError> {
    let s: f64 = p.iter().sum();
    if p.iter().any(|x| *x < 0.0 || !x.is_finite()) || (s - 1.0).abs() > NORM_TOL {
        return Err(StatsError::NotNormalized(s));
    }
    Ok(())
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64, StatsError> {
    check_normalized(p)?;
    Ok(-p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>())
}

/// Shannon entropy in bits.
pub fn entropy_bits(p: &[f64]) -> Result<f64, StatsError> {
    entropy(p).map(|h| h / std::f64::consts::LN_2)
}

/// Pearson correlation between the columns of `rows` (each row one sample).
/// Columns with zero variance get 0 off the diagonal; the diagonal is 1.
pub fn pearson_matrix(rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, StatsError> {
    if rows.len() < 2 {
        return Err(StatsError::InsufficientData {
            needed: 2,
            got: rows.len(),
        });
    }
    let k = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != k) {
        return Err(StatsError::LengthMismatch(bad.len(), k));
    }
    let n = rows.len() as f64;
    let means: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0; k]; k];
    for r in rows {
        for a in 0..k {
            for b in 0..k {
                cov[a][b] += (r[a] - means[a]) * (r[b] - means[b]);
            }
        }
    }
    let mut out = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            out[a][b] = if a == b {
                1.0
            } else {
                let denom = (cov[a][a] * cov[b][b]).sqrt();
                if denom > 0.0 {
                    (cov[a][b] / denom).clamp(-1.0, 1.0)
                } else {
                    0.0
                }
            };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::OverlapGroup;
    use crate::graph::NodeRole::*;
    use approx::assert_abs_diff_eq;

    // Independent oracle: binomial(n, 1/2) pmf rows built by Pascal's rule on
    // probabilities, p[n][k] = (p[n-1][k-1] + p[n-1][k]) / 2.
    fn oracle_two_sided(n01: u64, n10: u64) -> f64 {
        let n = (n01 + n10) as usize;
        if n == 0 {
            return 1.0;
        }
        let mut row = vec![1.0f64];
        for _ in 0..n {
            let mut next = vec![0.0; row.len() + 1];
            for (k, p) in row.iter().enumerate() {
                next[k] += p / 2.0;
                next[k + 1] += p / 2.0;
            }
            row = next;
        }
        let k = n01.min(n10) as usize;
        (2.0 * row[..=k].iter().sum::<f64>()).min(1.0)
    }

    #[test]
    fn large_counts_use_log_space() {
        let p = mcnemar_exact(60, 100);
        assert_abs_diff_eq!(p, oracle_two_sided(60, 100), epsilon = 1e-12);
        assert!(p > 0.0 && p < 0.01);
        assert_eq!(mcnemar_exact(500, 500), 1.0);
    }

    #[test]
    fn mcnemar_examples() {
        assert_eq!(mcnemar_exact(7, 7), 1.0);
        assert_abs_diff_eq!(mcnemar_exact(10, 0), 2.0 * 0.5f64.powi(10), epsilon = 1e-15);
        assert_eq!(mcnemar_exact(5, 1), 0.21875);
        assert_eq!(mcnemar_exact(0, 0), 1.0);
        assert_eq!(micro_sign_test(0, 0), 1.0);
        assert_abs_diff_eq!(micro_sign_test(5, 1), 0.21875, epsilon = 1e-15);
        for a in 0..40 {
            for b in 0..40 {
                let p = mcnemar_exact(a, b);
                assert!((0.0..=1.0).contains(&p));
                assert_abs_diff_eq!(p, oracle_two_sided(a, b), epsilon = 1e-12);
                assert_eq!(p, mcnemar_exact(b, a));
            }
        }
    }

    #[test]
    fn repetition_examples() {
        let pair = OverlapReport::from_groups(vec![OverlapGroup::new([ContextPlus, ContextMinus]).unwrap()]);
        let triple = OverlapReport::from_groups(vec![
            OverlapGroup::new([Situation, MediatorPlus, HypothesisMinus]).unwrap(),
        ]);
        let clean = OverlapReport::from_groups(vec![]);
        let corpus = vec![pair.clone(), clean.clone(), triple, clean.clone()];
        let m = repetition_metrics(&corpus).unwrap();
        assert_eq!(m.per_graph, 1.25);
        assert_eq!(m.pct_with_repetition, 50.0);
        assert_eq!(m.n_graphs, 4);
        let s = repetition_metrics_with(&corpus, RepeatCount::Surplus).unwrap();
        assert_eq!(s.per_graph, 0.75);

        let m = repetition_metrics(&[clean.clone(), clean]).unwrap();
        assert_eq!((m.per_graph, m.pct_with_repetition), (0.0, 0.0));
        let m = repetition_metrics(&[pair]).unwrap();
        assert_eq!((m.per_graph, m.pct_with_repetition), (2.0, 100.0));
        assert_eq!(repetition_metrics(&[]), Err(StatsError::EmptyCorpus));
    }

    #[test]
    fn confusion_cells() {
        use Label::{Strengthens as S, Weakens as W};
        let gold = vec![S; 10];
        // cells (n00, n01, n10, n11) = (3, 2, 1, 4)
        let a = vec![W, W, W, W, W, S, S, S, S, S];
        let b = vec![W, W, W, S, S, W, S, S, S, S];
        let p = paired_confusion(&a, &b, &gold).unwrap();
        assert_eq!(p, PairedOutcomes { n00: 3, n01: 2, n10: 1, n11: 4 });
        assert_eq!(p.total(), 10);
        let p = paired_confusion(&gold, &gold, &gold).unwrap();
        assert_eq!(p.n11, 10);
        let wrong = vec![W; 10];
        assert_eq!(paired_confusion(&wrong, &gold, &gold).unwrap().n01, 10);
        assert_eq!(
            paired_confusion(&a[..3], &b, &gold),
            Err(StatsError::LengthMismatch(3, 10))
        );
    }

    #[test]
    fn entropy_values() {
        assert_abs_diff_eq!(entropy(&[0.2; 5]).unwrap(), 5f64.ln(), epsilon = 1e-12);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(entropy(&[0.5, 0.5]).unwrap(), 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(entropy_bits(&[0.2; 5]).unwrap(), 5f64.log2(), epsilon = 1e-12);
        assert!(matches!(entropy(&[0.5, 0.6]), Err(StatsError::NotNormalized(_))));
    }

    #[test]
    fn correlation_conventions() {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                let mut v = vec![0.0; 5];
                v[i % 2] = 1.0;
                v
            })
            .collect();
        let c = pearson_matrix(&rows).unwrap();
        assert_abs_diff_eq!(c[0][1], -1.0, epsilon = 1e-12);
        assert_eq!(c[2][3], 0.0);
        assert_eq!(c[4][4], 1.0);
        let same = vec![vec![0.2; 5]; 4];
        let c = pearson_matrix(&same).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                assert_eq!(c[a][b], if a == b { 1.0 } else { 0.0 });
            }
        }
        assert!(matches!(
            pearson_matrix(&same[..1]),
            Err(StatsError::InsufficientData { .. })
        ));
    }
}
