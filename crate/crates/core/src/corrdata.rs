//! Assembles (graph, feedback, corrected graph) training triples for a
//! graph corrector from two aligned graph sources.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::{detect_overlaps, FeedbackError, OverlapConfig, NO_ISSUES};
use crate::graph::{parse_graph, serialize_graph, GraphError, InferenceGraph};

#[derive(Debug, Error)]
pub enum CorrDataError {
    #[error("source lists differ in length: {left} graphs vs {right} graphs")]
    AlignmentError { left: usize, right: usize },
    #[error("pair {index}: {source}")]
    Feedback {
        index: usize,
        #[source]
        source: FeedbackError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectionExample {
    pub input: InferenceGraph,
    pub feedback: String,
    pub target: InferenceGraph,
}

#[derive(Serialize, Deserialize)]
struct ExampleRecord {
    input: String,
    feedback: String,
    target: String,
}

#[derive(Debug, Error)]
pub enum ExampleParseError {
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl CorrectionExample {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&ExampleRecord {
            input: serialize_graph(&self.input),
            feedback: self.feedback.clone(),
            target: serialize_graph(&self.target),
        })
        .expect("example serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self, ExampleParseError> {
        let rec: ExampleRecord = serde_json::from_str(line)?;
        Ok(Self {
            input: parse_graph(&rec.input)?,
            feedback: rec.feedback,
            target: parse_graph(&rec.target)?,
        })
    }
}

/// Why a pair was not turned into an example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Source graph is clean but the reference graph is not.
    TargetDirty,
    /// Both graphs have repetitions.
    BothDirty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DroppedPair {
    pub index: usize,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AssemblySummary {
    pub total: usize,
    pub fixed: usize,
    pub both_clean: usize,
    pub target_dirty: usize,
    pub both_dirty: usize,
}

impl AssemblySummary {
    pub fn kept(&self) -> usize {
        self.fixed + self.both_clean
    }

    pub fn dropped(&self) -> usize {
        self.target_dirty + self.both_dirty
    }
}

#[derive(Debug, Clone)]
pub struct Assembly {
    pub examples: Vec<CorrectionExample>,
    pub dropped: Vec<DroppedPair>,
    pub summary: AssemblySummary,
}

/// Keeps a pair when the source has feedback and the reference is clean
/// (emitting the feedback), or when both are clean (emitting the no-issues
/// message). Every other pair is dropped and counted.
pub fn assemble_correction_dataset(
    sources: &[InferenceGraph],
    references: &[InferenceGraph],
    cfg: &OverlapConfig,
) -> Result<Assembly, CorrDataError> {
    if sources.len() != references.len() {
        return Err(CorrDataError::AlignmentError {
            left: sources.len(),
            right: references.len(),
        });
    }
    let mut out = Assembly {
        examples: Vec::new(),
        dropped: Vec::new(),
        summary: AssemblySummary {
            total: sources.len(),
            ..Default::default()
        },
    };
    for (index, (g, g_star)) in sources.iter().zip(references).enumerate() {
        let wrap = |source| CorrDataError::Feedback { index, source };
        let f = detect_overlaps(g, cfg).map_err(wrap)?;
        let f_star = detect_overlaps(g_star, cfg).map_err(wrap)?;
        match (f.is_clean(), f_star.is_clean()) {
            (false, true) => {
                out.summary.fixed += 1;
                out.examples.push(CorrectionExample {
                    input: g.clone(),
                    feedback: f.message().to_string(),
                    target: g_star.clone(),
                });
            }
            (true, true) => {
                out.summary.both_clean += 1;
                out.examples.push(CorrectionExample {
                    input: g.clone(),
                    feedback: NO_ISSUES.to_string(),
                    target: g_star.clone(),
                });
            }
            (true, false) => {
                out.summary.target_dirty += 1;
                out.dropped.push(DroppedPair {
                    index,
                    reason: DropReason::TargetDirty,
                });
            }
            (false, false) => {
                out.summary.both_dirty += 1;
                out.dropped.push(DroppedPair {
                    index,
                    reason: DropReason::BothDirty,
                });
            }
        }
    }
    Ok(out)
}
