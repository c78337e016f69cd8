use infergraph::feedback::{detect_overlaps, OverlapConfig};
use infergraph::graph::{validate_graph, NodeRole};
use infergraph::query::Label;
use infergraph::stats::repetition_metrics;
use infergraph::synth::{generate, has_cue, SynthConfig, CUE_TOKEN};
use proptest::prelude::*;

/// Accuracy of "strengthens iff the cue is present" on a corpus.
fn cue_rule_accuracy(cfg: &SynthConfig) -> f64 {
    let c = generate(cfg).unwrap();
    let hits = c
        .queries
        .iter()
        .zip(&c.graphs)
        .filter(|(q, g)| (q.label == Some(Label::Strengthens)) == has_cue(g, cfg.signal_role))
        .count();
    hits as f64 / c.len() as f64
}

fn role() -> impl Strategy<Value = NodeRole> {
    prop::sample::select(NodeRole::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_graphs_are_valid_and_labelled(
        seed in any::<u64>(),
        n in 1usize..40,
        signal_role in role(),
        strength in 0.5f64..=1.0,
        dup in 0.0f64..=1.0,
    ) {
        let cfg = SynthConfig { n_examples: n, seed, signal_role, signal_strength: strength, duplicate_rate: dup, ..Default::default() };
        let c = generate(&cfg).unwrap();
        prop_assert_eq!(c.len(), n);
        for (q, g) in c.queries.iter().zip(&c.graphs) {
            prop_assert!(validate_graph(g).is_empty());
            prop_assert!(q.label.is_some());
            prop_assert!(!q.joined_text().contains(CUE_TOKEN));
            for r in NodeRole::ALL.into_iter().filter(|r| *r != signal_role) {
                prop_assert!(!has_cue(g, r) || dup > 0.0);
            }
        }
    }

    #[test]
    fn full_strength_cue_is_perfect(seed in any::<u64>(), signal_role in role()) {
        let cfg = SynthConfig { n_examples: 60, seed, signal_role, ..Default::default() };
        prop_assert_eq!(cue_rule_accuracy(&cfg), 1.0);
    }

    #[test]
    fn same_seed_same_corpus(seed in any::<u64>(), dup in 0.0f64..=1.0) {
        let cfg = SynthConfig { n_examples: 20, seed, duplicate_rate: dup, ..Default::default() };
        prop_assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    }

    #[test]
    fn without_injection_graphs_are_clean(seed in any::<u64>()) {
        let cfg = SynthConfig { n_examples: 20, seed, ..Default::default() };
        let c = generate(&cfg).unwrap();
        for g in &c.graphs {
            prop_assert!(detect_overlaps(g, &OverlapConfig::default()).unwrap().is_clean());
        }
    }
}

#[test]
fn labels_are_balanced() {
    for seed in 0..10 {
        let c = generate(&SynthConfig { n_examples: 500, seed, ..Default::default() }).unwrap();
        let pos = c.queries.iter().filter(|q| q.label == Some(Label::Strengthens)).count();
        let frac = pos as f64 / 500.0;
        assert!((frac - 0.5).abs() <= 0.05, "seed {seed}: {frac}");
    }
}

#[test]
fn weakened_cue_stump_matches_strength() {
    // the agreement rate is Binomial(n, strength) / n, so allow three standard errors
    let n = 2000;
    for (seed, strength) in [(0, 0.6), (1, 0.75), (2, 0.9)] {
        let cfg = SynthConfig { n_examples: n, seed, signal_strength: strength, ..Default::default() };
        let acc = cue_rule_accuracy(&cfg);
        let stump = acc.max(1.0 - acc);
        let se = (strength * (1.0 - strength) / n as f64).sqrt();
        assert!(stump >= strength - 3.0 * se, "seed {seed}: stump {stump} vs {strength}");
    }
}

#[test]
fn forced_duplicates_give_full_repetition() {
    let cfg = SynthConfig { n_examples: 100, duplicate_rate: 1.0, seed: 5, ..Default::default() };
    let c = generate(&cfg).unwrap();
    let reports: Vec<_> = c
        .graphs
        .iter()
        .map(|g| detect_overlaps(g, &OverlapConfig::default()).unwrap())
        .collect();
    assert_eq!(repetition_metrics(&reports).unwrap().pct_with_repetition, 100.0);
    for (q, g) in c.queries.iter().zip(&c.graphs) {
        assert_eq!(q.label == Some(Label::Strengthens), has_cue(g, NodeRole::SituationMinus));
    }
}
