use std::fs;

use infergraph::data::{load_dataset, load_split, split_corpus, write_splits, DataError, Split};
use infergraph::synth::{generate, SynthConfig};

const GOOD_GRAPH: &str = "[C+] sunny day [C-] heavy rain [S] kids outside [S-] kids inside [M+] more fun [M-] less fun [H+] children laugh [H-] children sulk";

fn query_line(i: usize) -> String {
    format!(r#"{{"premise":"p{i}","hypothesis":"h{i}","update":"u{i}","label":"strengthens"}}"#)
}

#[test]
fn three_line_fixture_loads() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("x.queries.jsonl");
    let g = dir.path().join("x.graphs");
    fs::write(&q, (0..3).map(|i| query_line(i) + "\n").collect::<String>()).unwrap();
    fs::write(&g, format!("{GOOD_GRAPH}\n").repeat(3)).unwrap();
    let c = load_dataset(&q, &g).unwrap();
    assert_eq!(c.len(), 3);
    assert_eq!(c.queries[2].premise, "p2");
}

#[test]
fn line_counts_must_agree() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("x.queries.jsonl");
    let g = dir.path().join("x.graphs");
    fs::write(&q, (0..3).map(|i| query_line(i) + "\n").collect::<String>()).unwrap();
    fs::write(&g, format!("{GOOD_GRAPH}\n").repeat(2)).unwrap();
    match load_dataset(&q, &g) {
        Err(DataError::LineCountMismatch { queries: 3, graphs: 2 }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn bad_graph_cites_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("x.queries.jsonl");
    let g = dir.path().join("x.graphs");
    fs::write(&q, (0..3).map(|i| query_line(i) + "\n").collect::<String>()).unwrap();
    let missing_h = GOOD_GRAPH.split(" [H-]").next().unwrap();
    fs::write(&g, format!("{GOOD_GRAPH}\n{missing_h}\n{GOOD_GRAPH}\n")).unwrap();
    let err = load_dataset(&q, &g).unwrap_err();
    assert!(matches!(err, DataError::Parse { line: 2, .. }), "{err:?}");
    assert!(err.to_string().contains(":2:"));
}

#[test]
fn bad_query_cites_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("x.queries.jsonl");
    let g = dir.path().join("x.graphs");
    fs::write(&q, format!("{}\n{}\nnot json\n", query_line(0), query_line(1))).unwrap();
    fs::write(&g, format!("{GOOD_GRAPH}\n").repeat(3)).unwrap();
    assert!(matches!(load_dataset(&q, &g), Err(DataError::Parse { line: 3, .. })));
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("absent.jsonl");
    assert!(matches!(load_dataset(&q, &q), Err(DataError::Io { .. })));
}

#[test]
fn splits_roundtrip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("syn").display().to_string();
    let corpus = generate(&SynthConfig { n_examples: 40, seed: 3, ..Default::default() }).unwrap();
    write_splits(&corpus, &prefix).unwrap();
    let parts = split_corpus(&corpus);
    for (split, part) in Split::ALL.into_iter().zip(parts.iter()) {
        assert_eq!(&load_split(&prefix, split).unwrap(), part);
    }
    assert_eq!("dev".parse::<Split>().unwrap(), Split::Dev);
    assert!("validation".parse::<Split>().is_err());
}
