//! Rule-based repetition feedback over inference graphs.
//!
//! Two nodes overlap when their normalized texts are identical, or when their
//! content-token multisets have Jaccard similarity at or above the threshold
//! and they carry the same polarity tokens ("more erosion" never matches
//! "less erosion"). Overlapping pairs are merged into groups with union-find
//! and rendered as `C-, C+ are overlapping, and S, S- are overlapping`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{InferenceGraph, NodeRole};

pub const NO_ISSUES: &str = "No issues, looks good";

const DEFAULT_STOPWORDS: &str = include_str!("../assets/stopwords.txt");
const DEFAULT_POLARITY: &str = include_str!("../assets/polarity_lexicon.txt");

/// Order in which roles are listed inside feedback messages. Minus roles come
/// before their plus counterparts (`C-, C+`), matching the feedback wording
/// the corrector is trained on.
pub const FEEDBACK_ORDER: [NodeRole; 8] = [
    NodeRole::ContextMinus,
    NodeRole::ContextPlus,
    NodeRole::Situation,
    NodeRole::SituationMinus,
    NodeRole::MediatorMinus,
    NodeRole::MediatorPlus,
    NodeRole::HypothesisMinus,
    NodeRole::HypothesisPlus,
];

fn feedback_rank(role: NodeRole) -> usize {
    FEEDBACK_ORDER.iter().position(|r| *r == role).unwrap()
}

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("every node normalizes to empty content")]
    DegenerateLabels,
    #[error("jaccard threshold must be in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error("corrector failed: {0}")]
    CorrectorFailure(String),
    #[error("max_iters must be at least 1")]
    ZeroIterations,
}

fn read_word_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

pub fn default_stopwords() -> BTreeSet<String> {
    read_word_list(DEFAULT_STOPWORDS)
}

pub fn default_polarity_lexicon() -> BTreeSet<String> {
    read_word_list(DEFAULT_POLARITY)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapConfig {
    jaccard_threshold: f64,
    polarity_lexicon: BTreeSet<String>,
    stopwords: BTreeSet<String>,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        Self {
            jaccard_threshold: 0.8,
            polarity_lexicon: default_polarity_lexicon(),
            stopwords: default_stopwords(),
        }
    }
}

impl OverlapConfig {
    pub fn new<I, J, S, T>(threshold: f64, polarity: I, stopwords: J) -> Result<Self, FeedbackError>
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        Self::default()
            .with_threshold(threshold)
            .map(|cfg| Self {
                polarity_lexicon: polarity.into_iter().map(|s| s.as_ref().to_lowercase()).collect(),
                stopwords: stopwords.into_iter().map(|s| s.as_ref().to_lowercase()).collect(),
                ..cfg
            })
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self, FeedbackError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(FeedbackError::BadThreshold(threshold));
        }
        self.jaccard_threshold = threshold;
        Ok(self)
    }

    pub fn threshold(&self) -> f64 {
        self.jaccard_threshold
    }

    pub fn polarity_lexicon(&self) -> &BTreeSet<String> {
        &self.polarity_lexicon
    }

    pub fn stopwords(&self) -> &BTreeSet<String> {
        &self.stopwords
    }
}

pub type TokenBag = BTreeMap<String, usize>;

/// Content and polarity token multisets of one node label.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormalizedNode {
    pub content: TokenBag,
    pub polarity: TokenBag,
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn normalize_node(text: &str, cfg: &OverlapConfig) -> NormalizedNode {
    let mut out = NormalizedNode::default();
    for tok in tokenize(text) {
        if cfg.polarity_lexicon.contains(&tok) {
            *out.polarity.entry(tok).or_default() += 1;
        } else if !cfg.stopwords.contains(&tok) {
            *out.content.entry(tok).or_default() += 1;
        }
    }
    out
}

/// Multiset Jaccard: sum of minimum counts over sum of maximum counts.
/// Two empty bags have similarity 0.
pub fn multiset_jaccard(a: &TokenBag, b: &TokenBag) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (tok, &ca) in a {
        let cb = b.get(tok).copied().unwrap_or(0);
        inter += ca.min(cb);
        union += ca.max(cb);
    }
    for (tok, &cb) in b {
        if !a.contains_key(tok) {
            union += cb;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Group of overlapping roles, kept sorted in [`FEEDBACK_ORDER`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OverlapGroup(Vec<NodeRole>);

impl OverlapGroup {
    /// Sorts and deduplicates. Returns `None` for fewer than two roles.
    pub fn new(roles: impl IntoIterator<Item = NodeRole>) -> Option<Self> {
        let mut v: Vec<NodeRole> = roles.into_iter().collect();
        v.sort_by_key(|r| feedback_rank(*r));
        v.dedup();
        (v.len() >= 2).then_some(Self(v))
    }

    pub fn roles(&self) -> &[NodeRole] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn first(&self) -> NodeRole {
        self.0[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapReport {
    groups: Vec<OverlapGroup>,
    message: String,
}

impl OverlapReport {
    pub fn from_groups(mut groups: Vec<OverlapGroup>) -> Self {
        groups.sort_by_key(|g| feedback_rank(g.first()));
        let message = render_feedback(&groups);
        Self { groups, message }
    }

    pub fn groups(&self) -> &[OverlapGroup] {
        &self.groups
    }

    pub fn message(&self) -> &str {
        &self.message
    }

    pub fn is_clean(&self) -> bool {
        self.groups.is_empty()
    }

    /// Number of nodes taking part in any group (a pair counts 2).
    pub fn repeated_nodes(&self) -> usize {
        self.groups.iter().map(OverlapGroup::len).sum()
    }

    /// Nodes beyond the first in each group (a pair counts 1).
    pub fn surplus_nodes(&self) -> usize {
        self.groups.iter().map(|g| g.len() - 1).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct ReportRecord {
    line: usize,
    groups: Vec<Vec<NodeRole>>,
    message: String,
}

/// One line of the feedback report file.
pub fn report_json_line(line: usize, report: &OverlapReport) -> String {
    let rec = ReportRecord {
        line,
        groups: report.groups.iter().map(|g| g.0.clone()).collect(),
        message: report.message.clone(),
    };
    serde_json::to_string(&rec).expect("report serializes")
}

/// Parses a feedback report line back into `(line, report)`.
pub fn parse_report_json_line(text: &str) -> Result<(usize, OverlapReport), serde_json::Error> {
    let rec: ReportRecord = serde_json::from_str(text)?;
    let groups = rec.groups.into_iter().filter_map(OverlapGroup::new).collect();
    Ok((rec.line, OverlapReport::from_groups(groups)))
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let p = self.parent[x];
        if p == x {
            return x;
        }
        let root = self.find(p);
        self.parent[x] = root;
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index becomes root so components are deterministic
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

fn flagged(
    text_a: &[String],
    a: &NormalizedNode,
    text_b: &[String],
    b: &NormalizedNode,
    threshold: f64,
) -> bool {
    if text_a == text_b {
        return true;
    }
    a.polarity == b.polarity && multiset_jaccard(&a.content, &b.content) >= threshold
}

/// All unordered role pairs the detector flags, in canonical role order.
pub fn flagged_pairs(
    g: &InferenceGraph,
    cfg: &OverlapConfig,
) -> Result<Vec<(NodeRole, NodeRole)>, FeedbackError> {
    let roles = NodeRole::ALL;
    let texts: Vec<Vec<String>> = roles.iter().map(|r| tokenize(g.label(*r))).collect();
    let norm: Vec<NormalizedNode> = roles.iter().map(|r| normalize_node(g.label(*r), cfg)).collect();
    if norm.iter().all(|n| n.content.is_empty()) {
        return Err(FeedbackError::DegenerateLabels);
    }
    let mut out = Vec::new();
    for i in 0..roles.len() {
        for j in i + 1..roles.len() {
            if flagged(&texts[i], &norm[i], &texts[j], &norm[j], cfg.jaccard_threshold) {
                out.push((roles[i], roles[j]));
            }
        }
    }
    Ok(out)
}

pub fn detect_overlaps(g: &InferenceGraph, cfg: &OverlapConfig) -> Result<OverlapReport, FeedbackError> {
    let pairs = flagged_pairs(g, cfg)?;
    let mut uf = UnionFind::new(NodeRole::ALL.len());
    for (a, b) in &pairs {
        uf.union(a.index(), b.index());
    }
    let mut comps: BTreeMap<usize, Vec<NodeRole>> = BTreeMap::new();
    for role in NodeRole::ALL {
        comps.entry(uf.find(role.index())).or_default().push(role);
    }
    let groups = comps.into_values().filter_map(OverlapGroup::new).collect();
    Ok(OverlapReport::from_groups(groups))
}

pub fn render_feedback(groups: &[OverlapGroup]) -> String {
    if groups.is_empty() {
        return NO_ISSUES.to_string();
    }
    let mut sorted: Vec<&OverlapGroup> = groups.iter().collect();
    sorted.sort_by_key(|g| feedback_rank(g.first()));
    sorted
        .iter()
        .map(|g| {
            let names: Vec<&str> = g.roles().iter().map(|r| r.tag()).collect();
            format!("{} are overlapping", names.join(", "))
        })
        .collect::<Vec<_>>()
        .join(", and ")
}

/// Disambiguating phrases appended by [`reference_correct`]. Every phrase
/// carries role-specific content words.
fn phrase_table(role: NodeRole) -> &'static [&'static str] {
    match role {
        NodeRole::ContextPlus => &[
            "amid supportive surroundings",
            "given favorable backdrop",
            "thanks enabling milieu",
            "alongside encouraging climate",
        ],
        NodeRole::ContextMinus => &[
            "despite obstructive environs",
            "against unfavorable terrain",
            "facing hindering circumstances",
            "beneath discouraging atmosphere",
        ],
        NodeRole::Situation => &[
            "as triggering event",
            "when scenario unfolds",
            "upon initial occurrence",
            "once happening begins",
        ],
        NodeRole::SituationMinus => &[
            "whereas opposing counterevent",
            "instead alternative arises",
            "contrary episode emerges",
            "meanwhile reversal surfaces",
        ],
        NodeRole::MediatorPlus => &[
            "thus amplifying effects",
            "hence intensifying pathway",
            "thereby accelerating mechanism",
            "therefore reinforcing chain",
        ],
        NodeRole::MediatorMinus => &[
            "consequently dampening influence",
            "accordingly attenuating route",
            "subsequently braking process",
            "eventually suppressing sequence",
        ],
        NodeRole::HypothesisPlus => &[
            "so conclusion gains support",
            "making claim plausible",
            "backing outcome firmly",
            "proposition holds true",
        ],
        NodeRole::HypothesisMinus => &[
            "leaving verdict unsupported",
            "rendering assertion doubtful",
            "undercutting result sharply",
            "thesis fails outright",
        ],
    }
}

const MAX_SUFFIX_ROUNDS: usize = 10_000;

/// Rule-based stand-in for a learned corrector.
///
/// In every group the first role (in feedback order) is kept verbatim and the
/// others receive role-specific suffixes, chosen from the phrase table by
/// `salt`, until the detector reports no overlap.
pub fn reference_correct(
    g: &InferenceGraph,
    report: &OverlapReport,
    salt: u64,
    cfg: &OverlapConfig,
) -> InferenceGraph {
    if report.is_clean() {
        return g.clone();
    }
    let targets: Vec<NodeRole> = report
        .groups()
        .iter()
        .flat_map(|grp| grp.roles()[1..].iter().copied())
        .collect();
    let mut out = g.clone();
    for round in 0..MAX_SUFFIX_ROUNDS {
        for &role in &targets {
            let table = phrase_table(role);
            let phrase = table[(salt as usize).wrapping_add(round) % table.len()];
            let label = format!("{} {}", out.label(role), phrase);
            out = out.with_label(role, &label).expect("suffixed label is non-empty");
        }
        match detect_overlaps(&out, cfg) {
            Ok(r) if r.is_clean() => break,
            Ok(_) => {}
            Err(_) => break,
        }
    }
    out
}

/// A pluggable graph corrector: given a graph and its feedback, propose a
/// fixed graph.
pub trait Corrector {
    fn correct(
        &mut self,
        graph: &InferenceGraph,
        report: &OverlapReport,
    ) -> Result<InferenceGraph, FeedbackError>;
}

impl<F> Corrector for F
where
    F: FnMut(&InferenceGraph, &OverlapReport) -> Result<InferenceGraph, FeedbackError>,
{
    fn correct(
        &mut self,
        graph: &InferenceGraph,
        report: &OverlapReport,
    ) -> Result<InferenceGraph, FeedbackError> {
        self(graph, report)
    }
}

/// [`reference_correct`] packaged as a [`Corrector`].
#[derive(Debug, Clone)]
pub struct ReferenceCorrector {
    pub salt: u64,
    pub config: OverlapConfig,
}

impl Corrector for ReferenceCorrector {
    fn correct(
        &mut self,
        graph: &InferenceGraph,
        report: &OverlapReport,
    ) -> Result<InferenceGraph, FeedbackError> {
        Ok(reference_correct(graph, report, self.salt, &self.config))
    }
}

#[derive(Debug, Clone)]
pub struct CorrectionRun {
    pub graph: InferenceGraph,
    /// Initial state followed by the state after each corrector call.
    pub trace: Vec<(InferenceGraph, OverlapReport)>,
    pub converged: bool,
}

impl CorrectionRun {
    pub fn corrector_calls(&self) -> usize {
        self.trace.len() - 1
    }
}

/// Applies `corrector` while feedback is non-empty, at most `max_iters` times.
pub fn iterative_correct<C: Corrector + ?Sized>(
    g: &InferenceGraph,
    corrector: &mut C,
    cfg: &OverlapConfig,
    max_iters: usize,
) -> Result<CorrectionRun, FeedbackError> {
    if max_iters == 0 {
        return Err(FeedbackError::ZeroIterations);
    }
    let mut current = g.clone();
    let mut report = detect_overlaps(&current, cfg)?;
    let mut trace = vec![(current.clone(), report.clone())];
    let mut iters = 0;
    while !report.is_clean() && iters < max_iters {
        current = corrector.correct(&current, &report)?;
        report = detect_overlaps(&current, cfg)?;
        trace.push((current.clone(), report.clone()));
        iters += 1;
    }
    Ok(CorrectionRun {
        graph: current,
        converged: report.is_clean(),
        trace,
    })
}
