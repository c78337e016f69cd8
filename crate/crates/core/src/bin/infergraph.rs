//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 validation findings (invalid graphs, failed
//! gradient check, unconverged corrections), 2 usage or I/O errors. Logs go to
//! stderr and are controlled by `RUST_LOG`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use infergraph::analysis::{compare_models, gate_histogram_csv, gate_report};
use infergraph::corrdata::assemble_correction_dataset;
use infergraph::data::{load_graphs, load_queries, load_split, read_lines, write_splits, Split};
use infergraph::encoders::{
    gradcheck_config, gradcheck_random_instance, EncoderConfig, EncoderKind, GateTrace, DEFAULT_MOE_ROLES,
};
use infergraph::feedback::{detect_overlaps, iterative_correct, report_json_line, OverlapConfig, ReferenceCorrector};
use infergraph::graph::{parse_graph, serialize_graph, validate_graph, NodeRole};
use infergraph::query::Label;
use infergraph::stats::{repetition_metrics_with, RepeatCount};
use infergraph::synth::{generate, SynthConfig};
use infergraph::train::{checkpoint_id, evaluate, load_checkpoint, save_checkpoint, train, TrainConfig};

const FORMATS: &str = "\
File formats:
  graphs   one linearized graph per line: [C+] text [C-] text [S] text [S-] text [M+] text [M-] text [H+] text [H-] text
  queries  JSON lines: {\"premise\", \"hypothesis\", \"update\", \"label\"} with label strengthens|weakens (optional)
  preds    one label per line (strengthens|weakens)
  traces   JSON lines: {\"moe_v\": [..], \"moe_gx\": [graph, question]}
  data prefix P names P.{train,dev,test}.queries.jsonl and P.{train,dev,test}.graphs";

#[derive(Parser)]
#[command(name = "infergraph", version, about = "Inference-graph feedback, correction data and graph-augmented encoders", after_help = FORMATS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OverlapArgs {
    /// Multiset Jaccard threshold for calling two nodes overlapping.
    #[arg(long, default_value_t = 0.8)]
    threshold: f64,
}

impl OverlapArgs {
    fn config(&self) -> Result<OverlapConfig> {
        Ok(OverlapConfig::default().with_threshold(self.threshold)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CountMode {
    /// Every member of an overlap group counts.
    All,
    /// Only members beyond the first count.
    Surplus,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Moe,
    Gcn,
    Str,
    Baseline,
}

impl From<KindArg> for EncoderKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Moe => EncoderKind::Moe,
            KindArg::Gcn => EncoderKind::Gcn,
            KindArg::Str => EncoderKind::Str,
            KindArg::Baseline => EncoderKind::Baseline,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check every graph against the template; prints one line per finding.
    #[command(after_help = FORMATS)]
    Validate {
        /// Graph corpus file.
        graphs: PathBuf,
    },
    /// Detect repeated nodes and write one JSON report per graph:
    /// {"line", "groups", "message"}.
    #[command(after_help = FORMATS)]
    Feedback {
        graphs: PathBuf,
        #[command(flatten)]
        overlap: OverlapArgs,
        /// Report file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corpus repetition metrics as JSON {per_graph, pct_with_repetition, n_graphs}.
    #[command(after_help = FORMATS)]
    Metrics {
        graphs: PathBuf,
        #[command(flatten)]
        overlap: OverlapArgs,
        /// How repeated nodes are counted per overlap group.
        #[arg(long, value_enum, default_value_t = CountMode::All)]
        count: CountMode,
    },
    /// Build (graph, feedback, corrected graph) training triples from two
    /// aligned graph corpora; prints a JSON summary.
    #[command(after_help = FORMATS)]
    Assemble {
        /// Graphs from the original generator.
        #[arg(long = "m")]
        m: PathBuf,
        /// Aligned graphs from the reference generator.
        #[arg(long = "mstar")]
        mstar: PathBuf,
        /// Output JSON lines {"input", "feedback", "target"}.
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON lines {"index", "reason"} for pairs that were dropped.
        #[arg(long)]
        drops: Option<PathBuf>,
        #[command(flatten)]
        overlap: OverlapArgs,
    },
    /// Repair repeated nodes with the rule-based corrector until feedback is
    /// empty; writes the corrected graphs.
    #[command(after_help = FORMATS)]
    Correct {
        graphs: PathBuf,
        /// Maximum corrector calls per graph.
        #[arg(long, default_value_t = 3)]
        max_iters: usize,
        /// Selects the repair phrasing.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrected graph file (stdout when absent; a JSON summary is then
        /// printed to stdout instead).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overlap: OverlapArgs,
    },
    /// Generate a synthetic corpus with a planted node-level cue and write
    /// train/dev/test splits (75/12.5/12.5).
    #[command(after_help = FORMATS)]
    Synth {
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Role whose node carries the cue, e.g. S-.
        #[arg(long, default_value = "S-", value_parser = parse_role)]
        signal_role: NodeRole,
        /// Probability that the cue agrees with the label.
        #[arg(long, default_value_t = 1.0)]
        signal_strength: f64,
        /// Probability that a graph gets one duplicated node pair.
        #[arg(long, default_value_t = 0.0)]
        duplicate_rate: f64,
        /// Number of phrase-bank words in use.
        #[arg(long, default_value_t = 200)]
        vocab_size: usize,
        #[arg(long)]
        out_prefix: String,
    },
    /// Train an encoder on P.train, select on P.dev and save the best checkpoint.
    ///
    /// The TOML config has optional [encoder] and [train] tables whose keys
    /// mirror the encoder and training settings (e.g. encoder.d, encoder.dropout,
    /// train.lr, train.epochs, train.seed). Flags override the file. The
    /// embedder width always follows encoder.d.
    #[command(after_help = FORMATS)]
    Train {
        #[arg(long, value_enum)]
        encoder: Option<KindArg>,
        #[arg(long)]
        data_prefix: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint output path.
        #[arg(long)]
        ckpt: PathBuf,
        /// Per-epoch history CSV (epoch,loss,dev_acc).
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Evaluate a checkpoint on one split; prints JSON {split, n, accuracy, checkpoint_id}.
    #[command(after_help = FORMATS)]
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data_prefix: String,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Gate traces, one JSON line per example (MoE only).
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Predicted labels, one per line.
        #[arg(long)]
        preds: Option<PathBuf>,
    },
    /// Gate statistics and paired significance tests.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Compare analytic gradients with central differences on a random instance.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = KindArg::Moe)]
        encoder: KindArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Maximum relative error.
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        /// Finite-difference step.
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Model width.
        #[arg(long, default_value_t = 8)]
        d: usize,
    },
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Mean gate weights, entropies (nats) and gate correlations as JSON.
    #[command(after_help = FORMATS)]
    Gates {
        #[arg(long)]
        traces: PathBuf,
        /// Queries carrying the gold labels, aligned with the traces.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        /// Expert roles in trace order, comma separated.
        #[arg(long, value_delimiter = ',', value_parser = parse_role)]
        roles: Option<Vec<NodeRole>>,
        /// Also write a per-role histogram CSV (role,bin_lo,bin_hi,count).
        #[arg(long)]
        histogram: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Print a plain-text table instead of JSON.
        #[arg(long)]
        table: bool,
    },
    /// McNemar and sign tests for two prediction files; prints JSON
    /// {n00, n01, n10, n11, mcnemar_p, sign_p}.
    #[command(after_help = FORMATS)]
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        queries: PathBuf,
    },
}

fn parse_role(s: &str) -> Result<NodeRole, String> {
    s.trim().parse().map_err(|_| format!("unknown role {s:?} (C+, C-, S, S-, M+, M-, H+, H-)"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn gold_labels(path: &Path) -> Result<Vec<Label>> {
    load_queries(path)?
        .into_iter()
        .enumerate()
        .map(|(i, q)| q.label.ok_or_else(|| anyhow!("{}: query {} has no label", path.display(), i + 1)))
        .collect()
}

fn read_preds(path: &Path) -> Result<Vec<Label>> {
    read_lines(path)?
        .into_iter()
        .map(|(line, t)| t.parse().map_err(|e| anyhow!("{}:{line}: {e}", path.display())))
        .collect()
}

fn read_traces(path: &Path) -> Result<Vec<GateTrace>> {
    read_lines(path)?
        .into_iter()
        .map(|(line, t)| serde_json::from_str(&t).map_err(|e| anyhow!("{}:{line}: {e}", path.display())))
        .collect()
}

fn validate(graphs: &Path) -> Result<u8> {
    let lines = read_lines(graphs)?;
    let mut bad = 0;
    for (line, text) in &lines {
        let problems: Vec<String> = match parse_graph(text) {
            Ok(g) => validate_graph(&g).iter().map(ToString::to_string).collect(),
            Err(e) => vec![e.to_string()],
        };
        if !problems.is_empty() {
            bad += 1;
        }
        for p in problems {
            println!("line {line}: {p}");
        }
    }
    log::info!("{} graphs, {bad} invalid", lines.len());
    Ok(u8::from(bad > 0))
}

fn feedback(graphs: &Path, overlap: &OverlapArgs, out: Option<&Path>) -> Result<u8> {
    let cfg = overlap.config()?;
    let mut text = String::new();
    for (i, g) in load_graphs(graphs)?.iter().enumerate() {
        let r = detect_overlaps(g, &cfg).with_context(|| format!("{}:{}", graphs.display(), i + 1))?;
        text.push_str(&report_json_line(i + 1, &r));
        text.push('\n');
    }
    match out {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn metrics(graphs: &Path, overlap: &OverlapArgs, count: CountMode) -> Result<u8> {
    let cfg = overlap.config()?;
    let reports = load_graphs(graphs)?
        .iter()
        .enumerate()
        .map(|(i, g)| detect_overlaps(g, &cfg).with_context(|| format!("{}:{}", graphs.display(), i + 1)))
        .collect::<Result<Vec<_>>>()?;
    let mode = match count {
        CountMode::All => RepeatCount::AllMembers,
        CountMode::Surplus => RepeatCount::Surplus,
    };
    println!("{}", serde_json::to_string(&repetition_metrics_with(&reports, mode)?)?);
    Ok(0)
}

fn assemble(m: &Path, mstar: &Path, out: &Path, drops: Option<&Path>, overlap: &OverlapArgs) -> Result<u8> {
    let (nm, ns) = (read_lines(m)?.len(), read_lines(mstar)?.len());
    if nm != ns {
        bail!("--m has {nm} graphs but --mstar has {ns}; the corpora must be line-aligned");
    }
    let a = assemble_correction_dataset(&load_graphs(m)?, &load_graphs(mstar)?, &overlap.config()?)?;
    write_text(out, &a.examples.iter().map(|e| e.to_json_line() + "\n").collect::<String>())?;
    if let Some(p) = drops {
        let text: String = a
            .dropped
            .iter()
            .map(|d| serde_json::to_string(d).expect("drop serializes") + "\n")
            .collect();
        write_text(p, &text)?;
    }
    println!("{}", serde_json::to_string(&a.summary)?);
    Ok(0)
}

fn correct(graphs: &Path, max_iters: usize, seed: u64, out: Option<&Path>, overlap: &OverlapArgs) -> Result<u8> {
    let cfg = overlap.config()?;
    let mut text = String::new();
    let (mut repaired, mut failed, mut calls) = (0usize, 0usize, 0usize);
    let all = load_graphs(graphs)?;
    for (i, g) in all.iter().enumerate() {
        let mut fixer = ReferenceCorrector {
            salt: seed.wrapping_add(i as u64),
            config: cfg.clone(),
        };
        let run = iterative_correct(g, &mut fixer, &cfg, max_iters)
            .with_context(|| format!("{}:{}", graphs.display(), i + 1))?;
        calls += run.corrector_calls();
        if !run.converged {
            failed += 1;
            log::warn!("line {}: still overlapping after {max_iters} iterations", i + 1);
        } else if run.corrector_calls() > 0 {
            repaired += 1;
        }
        text.push_str(&serialize_graph(&run.graph));
        text.push('\n');
    }
    let summary = json!({ "graphs": all.len(), "repaired": repaired, "unconverged": failed, "corrector_calls": calls });
    match out {
        Some(p) => {
            write_text(p, &text)?;
            println!("{summary}");
        }
        None => {
            print!("{text}");
            log::info!("{summary}");
        }
    }
    Ok(u8::from(failed > 0))
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Manifest {
    encoder: EncoderConfig,
    train: TrainConfig,
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    encoder: Option<KindArg>,
    data_prefix: &str,
    config: Option<&Path>,
    ckpt: &Path,
    history: Option<&Path>,
    seed: Option<u64>,
    d: Option<usize>,
    lr: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
) -> Result<u8> {
    let mut m = match config {
        Some(p) => toml::from_str::<Manifest>(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => Manifest::default(),
    };
    if let Some(k) = encoder {
        m.encoder.kind = k.into();
    }
    if let Some(d) = d {
        m.encoder.d = d;
    }
    m.encoder.embedder.d = m.encoder.d;
    if let Some(s) = seed {
        m.train.seed = s;
    }
    if let Some(lr) = lr {
        m.train.lr = lr;
    }
    if let Some(e) = epochs {
        m.train.epochs = e;
    }
    if let Some(b) = batch_size {
        m.train.batch_size = b;
    }
    let train_data = load_split(data_prefix, Split::Train)?;
    let dev_data = load_split(data_prefix, Split::Dev)?;
    log::info!(
        "training {} (d = {}) on {} examples, {} dev",
        m.encoder.kind,
        m.encoder.d,
        train_data.len(),
        dev_data.len()
    );
    let (model, hist) = train(&train_data, &dev_data, &m.encoder, &m.train)?;
    save_checkpoint(&model, ckpt)?;
    if let Some(p) = history {
        write_text(p, &hist.to_csv())?;
    }
    let report = json!({
        "checkpoint_id": hist.checkpoint_id,
        "best_epoch": hist.best_epoch,
        "best_dev_accuracy": hist.epochs[hist.best_epoch].dev_accuracy,
        "epochs": hist.epochs.len(),
    });
    println!("{report}");
    Ok(0)
}

fn eval_cmd(ckpt: &Path, data_prefix: &str, split: Split, traces: Option<&Path>, preds: Option<&Path>) -> Result<u8> {
    let model = load_checkpoint(ckpt)?;
    if traces.is_some() && model.kind() != EncoderKind::Moe {
        bail!("--traces needs a moe checkpoint, {} holds {}", ckpt.display(), model.kind());
    }
    let data = load_split(data_prefix, split)?;
    let ev = evaluate(&model, &data)?;
    if let Some(p) = traces {
        let text: String = ev
            .traces
            .iter()
            .map(|t| serde_json::to_string(t).expect("trace serializes") + "\n")
            .collect();
        write_text(p, &text)?;
    }
    if let Some(p) = preds {
        write_text(p, &ev.predictions.iter().map(|l| format!("{l}\n")).collect::<String>())?;
    }
    let report = json!({
        "split": split.as_str(),
        "n": data.len(),
        "accuracy": ev.accuracy,
        "checkpoint_id": checkpoint_id(&model),
    });
    println!("{report}");
    Ok(0)
}

fn analyze(cmd: &AnalyzeCommand) -> Result<u8> {
    match cmd {
        AnalyzeCommand::Gates {
            traces,
            queries,
            preds,
            roles,
            histogram,
            bins,
            table,
        } => {
            let roles = roles.clone().unwrap_or_else(|| DEFAULT_MOE_ROLES.to_vec());
            let traces = read_traces(traces)?;
            if let Some(t) = traces.iter().find(|t| t.moe_v.len() != roles.len()) {
                bail!("traces have {} node weights but {} roles were given", t.moe_v.len(), roles.len());
            }
            let report = gate_report(&traces, &roles, &gold_labels(queries)?, &read_preds(preds)?)?;
            if let Some(p) = histogram {
                if *bins == 0 {
                    bail!("--bins must be >= 1");
                }
                write_text(p, &gate_histogram_csv(&traces, &roles, *bins))?;
            }
            if *table {
                print!("{}", report.to_table());
            } else {
                println!("{}", serde_json::to_string(&report)?);
            }
        }
        AnalyzeCommand::Compare { a, b, queries } => {
            let c = compare_models(&read_preds(a)?, &read_preds(b)?, &gold_labels(queries)?)?;
            println!("{}", serde_json::to_string(&c)?);
        }
    }
    Ok(0)
}

fn gradcheck(kind: EncoderKind, seed: u64, tol: f64, eps: f64, d: usize) -> Result<u8> {
    let r = gradcheck_random_instance(&gradcheck_config(kind, d), seed, eps, tol)?;
    if r.passed() {
        println!("PASS max_rel_err={:e}", r.max_rel_error);
        Ok(0)
    } else {
        let worst = match (r.worst, r.worst_values) {
            (Some((n, i)), Some((a, num))) => format!(" worst={n}[{i}] analytic={a:e} numeric={num:e}"),
            _ => String::new(),
        };
        println!("FAIL max_rel_err={:e}{worst}", r.max_rel_error);
        Ok(1)
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Validate { graphs } => validate(&graphs),
        Command::Feedback { graphs, overlap, out } => feedback(&graphs, &overlap, out.as_deref()),
        Command::Metrics { graphs, overlap, count } => metrics(&graphs, &overlap, count),
        Command::Assemble {
            m,
            mstar,
            out,
            drops,
            overlap,
        } => assemble(&m, &mstar, &out, drops.as_deref(), &overlap),
        Command::Correct {
            graphs,
            max_iters,
            seed,
            out,
            overlap,
        } => correct(&graphs, max_iters, seed, out.as_deref(), &overlap),
        Command::Synth {
            n,
            seed,
            signal_role,
            signal_strength,
            duplicate_rate,
            vocab_size,
            out_prefix,
        } => {
            let cfg = SynthConfig {
                n_examples: n,
                signal_role,
                signal_strength,
                duplicate_rate,
                vocab_size,
                seed,
            };
            write_splits(&generate(&cfg)?, &out_prefix)?;
            log::info!("wrote {out_prefix}.{{train,dev,test}}.{{queries.jsonl,graphs}}");
            Ok(0)
        }
        Command::Train {
            encoder,
            data_prefix,
            config,
            ckpt,
            history,
            seed,
            d,
            lr,
            epochs,
            batch_size,
        } => train_cmd(
            encoder,
            &data_prefix,
            config.as_deref(),
            &ckpt,
            history.as_deref(),
            seed,
            d,
            lr,
            epochs,
            batch_size,
        ),
        Command::Eval {
            ckpt,
            data_prefix,
            split,
            traces,
            preds,
        } => eval_cmd(&ckpt, &data_prefix, split.into(), traces.as_deref(), preds.as_deref()),
        Command::Analyze(cmd) => analyze(&cmd),
        Command::Gradcheck {
            encoder,
            seed,
            tol,
            eps,
            d,
        } => gradcheck(encoder.into(), seed, tol, eps, d),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
