//! Aligned query/graph corpora on disk.
//!
//! A corpus is two line-aligned files: JSON-lines queries
//! (`{"premise","hypothesis","update","label"}`) and one linearized graph per
//! line. A data prefix `p` names the three splits
//! `p.{train,dev,test}.queries.jsonl` and `p.{train,dev,test}.graphs`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::graph::{parse_graph, serialize_graph, validate_graph, InferenceGraph};
use crate::query::DefeasibleQuery;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{queries} query lines but {graphs} graph lines")]
    LineCountMismatch { queries: usize, graphs: usize },
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub queries: Vec<DefeasibleQuery>,
    pub graphs: Vec<InferenceGraph>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Corpus {
        Corpus {
            queries: self.queries[range.clone()].to_vec(),
            graphs: self.graphs[range].to_vec(),
        }
    }

    pub fn queries_jsonl(&self) -> String {
        self.queries.iter().map(|q| q.to_json_line() + "\n").collect()
    }

    pub fn graphs_text(&self) -> String {
        self.graphs.iter().map(|g| serialize_graph(g) + "\n").collect()
    }

    /// Writes both files, replacing existing ones.
    pub fn write(&self, queries_path: &Path, graphs_path: &Path) -> Result<(), DataError> {
        write_file(queries_path, &self.queries_jsonl())?;
        write_file(graphs_path, &self.graphs_text())
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), DataError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

/// Non-empty lines with their 1-based line numbers.
fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
}

pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(numbered_lines(&text).map(|(n, l)| (n, l.to_string())).collect())
}

/// Parses and validates a graph file; errors cite the 1-based line.
pub fn load_graphs(path: &Path) -> Result<Vec<InferenceGraph>, DataError> {
    let shown = path.display().to_string();
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            let g = parse_graph(&text).map_err(|e| DataError::Parse {
                path: shown.clone(),
                line,
                reason: e.to_string(),
            })?;
            if let Some(v) = validate_graph(&g).first() {
                return Err(DataError::Parse {
                    path: shown.clone(),
                    line,
                    reason: v.to_string(),
                });
            }
            Ok(g)
        })
        .collect()
}

pub fn load_queries(path: &Path) -> Result<Vec<DefeasibleQuery>, DataError> {
    let shown = path.display().to_string();
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            DefeasibleQuery::from_json_line(&text).map_err(|e| DataError::Parse {
                path: shown.clone(),
                line,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn load_dataset(queries_path: &Path, graphs_path: &Path) -> Result<Corpus, DataError> {
    let q_lines = read_lines(queries_path)?.len();
    let g_lines = read_lines(graphs_path)?.len();
    if q_lines != g_lines {
        return Err(DataError::LineCountMismatch {
            queries: q_lines,
            graphs: g_lines,
        });
    }
    Ok(Corpus {
        queries: load_queries(queries_path)?,
        graphs: load_graphs(graphs_path)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown split {s:?} (train, dev, test)"))
    }
}

pub fn split_paths(prefix: &str, split: Split) -> (PathBuf, PathBuf) {
    (
        PathBuf::from(format!("{prefix}.{}.queries.jsonl", split.as_str())),
        PathBuf::from(format!("{prefix}.{}.graphs", split.as_str())),
    )
}

pub fn load_split(prefix: &str, split: Split) -> Result<Corpus, DataError> {
    let (q, g) = split_paths(prefix, split);
    load_dataset(&q, &g)
}

/// Contiguous 75/12.5/12.5 split (train gets the rounding remainder).
pub fn split_corpus(c: &Corpus) -> [Corpus; 3] {
    let n = c.len();
    let held = n / 8;
    let train = n - 2 * held;
    [c.slice(0..train), c.slice(train..train + held), c.slice(train + held..n)]
}

pub fn write_splits(c: &Corpus, prefix: &str) -> Result<(), DataError> {
    for (split, part) in Split::ALL.into_iter().zip(split_corpus(c)) {
        let (q, g) = split_paths(prefix, split);
        part.write(&q, &g)?;
    }
    Ok(())
}
