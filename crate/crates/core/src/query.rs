use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Whether the update makes the hypothesis more or less likely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Strengthens,
    Weakens,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Strengthens, Label::Weakens];

    pub fn class(self) -> usize {
        match self {
            Label::Strengthens => 0,
            Label::Weakens => 1,
        }
    }

    pub fn from_class(c: usize) -> Label {
        if c == 0 {
            Label::Strengthens
        } else {
            Label::Weakens
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Strengthens => Label::Weakens,
            Label::Weakens => Label::Strengthens,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Strengthens => "strengthens",
            Label::Weakens => "weakens",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = QueryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "strengthens" | "strengthener" => Ok(Label::Strengthens),
            "weakens" | "weakener" => Ok(Label::Weakens),
            _ => Err(QueryError::UnknownLabel(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("empty field {0:?}")]
    EmptyField(&'static str),
    #[error("malformed query line: {0}")]
    Malformed(String),
}

/// Premise, hypothesis, update and (for training data) the gold label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefeasibleQuery {
    pub premise: String,
    pub hypothesis: String,
    pub update: String,
    pub label: Option<Label>,
}

#[derive(Serialize, Deserialize)]
struct QueryRecord {
    premise: String,
    hypothesis: String,
    update: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

impl DefeasibleQuery {
    pub fn new(
        premise: &str,
        hypothesis: &str,
        update: &str,
        label: Option<Label>,
    ) -> Result<Self, QueryError> {
        for (name, v) in [("premise", premise), ("hypothesis", hypothesis), ("update", update)] {
            if v.trim().is_empty() {
                return Err(QueryError::EmptyField(name));
            }
        }
        Ok(Self {
            premise: premise.to_string(),
            hypothesis: hypothesis.to_string(),
            update: update.to_string(),
            label,
        })
    }

    /// Parses one JSON-lines record. `"strengthener"`/`"weakener"` are accepted
    /// as label aliases.
    pub fn from_json_line(line: &str) -> Result<Self, QueryError> {
        let rec: QueryRecord =
            serde_json::from_str(line).map_err(|e| QueryError::Malformed(e.to_string()))?;
        let label = rec.label.as_deref().map(str::parse).transpose()?;
        Self::new(&rec.premise, &rec.hypothesis, &rec.update, label)
    }

    pub fn to_json_line(&self) -> String {
        let rec = QueryRecord {
            premise: self.premise.clone(),
            hypothesis: self.hypothesis.clone(),
            update: self.update.clone(),
            label: self.label.map(|l| l.as_str().to_string()),
        };
        serde_json::to_string(&rec).expect("query record serializes")
    }

    /// Query text as fed to the embedder: `P | H | S`.
    pub fn joined_text(&self) -> String {
        format!("{} | {} | {}", self.premise, self.hypothesis, self.update)
    }
}
