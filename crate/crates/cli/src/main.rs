//! Command-line front end.
//!
//! Subcommands: `augment` (build permutation-variant datasets), `train`
//! (toy training runs and alpha sweeps), `eval` (audit a chat-completions
//! endpoint), `replay` (recompute metrics from a transcript), and `report`
//! (comparison tables with deltas against a baseline).
//!
//! Every run writes its outputs plus a `manifest.txt` (resolved config,
//! seed, and artifact hashes) under `--out`; nothing under the input paths
//! is ever modified. All randomness flows from `--seed` through labeled
//! stream derivation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dgao::grouping::{self, DEFAULT_SEPARATOR};
use dgao::report::{self, ReportRow};
use dgao::rewards::TaskKind;
use dgao::seed::derive_seed;
use dgao::toyrl::{self, TrainConfig, TrainMode};
use dgao_eval::{evaluate_endpoint, replay_eval, ApiKey, EndpointConfig};

#[derive(Parser)]
#[command(name = "dgao", version, about = "Order-stability training and auditing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand a raw JSONL dataset into order variants.
    Augment(AugmentArgs),
    /// Run the toy training loop (or an alpha sweep) and write curves.
    Train(TrainArgs),
    /// Audit a chat-completions endpoint for order bias.
    Eval(EvalArgs),
    /// Recompute metrics from a persisted transcript, offline.
    Replay(ReplayArgs),
    /// Render comparison tables from report CSVs.
    Report(ReportArgs),
}

#[derive(Args)]
struct AugmentArgs {
    /// Raw dataset: one JSON object per line with elements/question/label.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Variants per sample, identity order first.
    #[arg(long, default_value_t = 8)]
    variants: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value config file (defaults apply to unset keys).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a single config key, e.g. --set alpha=0.3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Training mode: dgao, grpo, paft, or alpha_sweep.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Alpha values for sweep mode, comma separated.
    #[arg(long, value_name = "LIST")]
    alphas: Option<String>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Augmented dataset produced by `augment`.
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Endpoint base URL up to the API version, e.g. https://host/v1.
    #[arg(long)]
    base_url: String,
    #[arg(long)]
    model: String,
    /// Environment variable holding the API key; unset means no auth.
    #[arg(long, default_value = "DGAO_API_KEY")]
    api_key_env: String,
    #[arg(long, default_value = "exact-match")]
    task_kind: String,
    /// Label set for --task-kind choice, comma separated.
    #[arg(long, value_name = "LIST")]
    choices: Option<String>,
    #[arg(long, default_value_t = 4)]
    max_concurrency: usize,
    #[arg(long, default_value_t = 30)]
    timeout_secs: u64,
    /// Sampling temperature; 0 requests greedy decoding.
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 128)]
    max_tokens: u32,
    #[arg(long, default_value = DEFAULT_SEPARATOR)]
    separator: String,
    /// Dataset tag used in the report rows; defaults to the data file stem.
    #[arg(long)]
    dataset_tag: Option<String>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long, value_name = "FILE")]
    transcript: PathBuf,
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    #[arg(long, default_value = "exact-match")]
    task_kind: String,
    #[arg(long, value_name = "LIST")]
    choices: Option<String>,
    #[arg(long)]
    dataset_tag: Option<String>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Baseline report CSV; deltas are taken against it.
    #[arg(long, value_name = "FILE")]
    baseline: Option<PathBuf>,
    /// Method report CSVs, in presentation order.
    #[arg(long = "method", value_name = "FILE", required = true)]
    methods: Vec<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

/// Errors that are the caller's fault exit with status 2, like flag errors.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Augment(args) => cmd_augment(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Accumulates artifacts and emits the reproducibility manifest.
struct Manifest {
    lines: Vec<String>,
    artifacts: Vec<(String, String)>,
}

impl Manifest {
    fn new(command: &str) -> Self {
        Self {
            lines: vec![format!("command = {command}")],
            artifacts: Vec::new(),
        }
    }

    fn kv(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push(format!("{key} = {value}"));
    }

    fn raw(&mut self, text: &str) {
        for line in text.lines() {
            self.lines.push(line.to_string());
        }
    }

    fn artifact(&mut self, out_dir: &Path, name: &str) -> Result<()> {
        let digest = dgao_eval::digest_request(&std::fs::read_to_string(out_dir.join(name))?);
        self.artifacts.push((name.to_string(), digest));
        Ok(())
    }

    fn write(mut self, out_dir: &Path) -> Result<()> {
        for (name, digest) in std::mem::take(&mut self.artifacts) {
            self.lines.push(format!("artifact {name} sha256={digest}"));
        }
        std::fs::write(out_dir.join("manifest.txt"), self.lines.join("\n") + "\n")?;
        Ok(())
    }
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn parse_task_kind(kind: &str, choices: &Option<String>) -> Result<TaskKind> {
    match kind.replace('_', "-").as_str() {
        "exact-match" => Ok(TaskKind::ExactMatch),
        "numeric" => Ok(TaskKind::Numeric),
        "choice" => {
            let labels: Vec<String> = choices
                .as_deref()
                .unwrap_or("")
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            if labels.is_empty() {
                bail!(UsageError("--task-kind choice requires --choices".into()));
            }
            Ok(TaskKind::Choice { labels })
        }
        other => bail!(UsageError(format!("unknown task kind {other:?}"))),
    }
}

fn cmd_augment(args: AugmentArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let samples = grouping::load_dataset(&args.input)?;
    let mut groups = Vec::with_capacity(samples.len());
    for (idx, sample) in samples.iter().enumerate() {
        let group_id = sample
            .group_id
            .clone()
            .unwrap_or_else(|| format!("g{idx:05}"));
        let elements = sample
            .elements
            .iter()
            .enumerate()
            .map(|(i, text)| grouping::PromptElement {
                element_id: format!("{group_id}/e{i}"),
                text: text.clone(),
            })
            .collect();
        groups.push(grouping::build_variants(
            group_id,
            elements,
            sample.question.clone(),
            sample.label.clone(),
            args.variants,
            derive_seed(args.seed, &format!("augment/{idx}")),
        )?);
    }
    let mut buf = Vec::new();
    grouping::write_augmented(&mut buf, &groups)?;
    std::fs::write(args.out.join("augmented.jsonl"), &buf)?;

    let mut manifest = Manifest::new("augment");
    manifest.kv("input", args.input.display());
    manifest.kv("variants", args.variants);
    manifest.kv("seed", args.seed);
    manifest.kv("samples", samples.len());
    manifest.artifact(&args.out, "augmented.jsonl")?;
    manifest.write(&args.out)?;
    println!(
        "augmented {} samples x {} variants -> {}",
        samples.len(),
        args.variants,
        args.out.join("augmented.jsonl").display()
    );
    Ok(())
}

/// Resolution order: defaults < config file < DGAO_* environment < --set
/// overrides < dedicated flags.
fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        cfg.merge_kv_str(&text)?;
    }
    let env: BTreeMap<String, String> = std::env::vars()
        .filter_map(|(k, v)| k.strip_prefix("DGAO_").map(|k| (k.to_lowercase(), v)))
        .collect();
    for (key, value) in env {
        if let Err(e) = cfg.apply(&key, &value) {
            log::warn!("ignoring environment override DGAO_{}: {e}", key.to_uppercase());
        }
    }
    for pair in &args.overrides {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        cfg.apply(key.trim(), value.trim())
            .map_err(|e| UsageError(e.to_string()))?;
    }
    if let Some(mode) = &args.mode {
        cfg.mode = mode.parse().map_err(|e: dgao::Error| UsageError(e.to_string()))?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(alphas) = &args.alphas {
        cfg.apply("alphas", alphas)
            .map_err(|e| UsageError(e.to_string()))?;
    }
    Ok(cfg)
}

fn write_report_files(
    out_dir: &Path,
    rows: &[ReportRow],
    baseline: &[ReportRow],
    manifest: &mut Manifest,
) -> Result<()> {
    std::fs::write(out_dir.join("report.csv"), report::to_csv(rows, baseline))?;
    std::fs::write(out_dir.join("report.txt"), report::render_text(rows, baseline))?;
    manifest.artifact(out_dir, "report.csv")?;
    manifest.artifact(out_dir, "report.txt")?;
    if rows.len() > 1 {
        let series = report::consistency_series(rows);
        std::fs::write(out_dir.join("cr_series.csv"), series.to_csv())?;
        manifest.artifact(out_dir, "cr_series.csv")?;
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let cfg = resolve_train_config(&args)?;
    let mut manifest = Manifest::new("train");
    manifest.raw(&cfg.to_kv_string());

    if cfg.mode == TrainMode::AlphaSweep {
        if cfg.alphas.is_empty() {
            bail!(UsageError("alpha sweep requires a non-empty --alphas list".into()));
        }
        let mut rows: Vec<ReportRow> = Vec::new();
        // write partial results after every completed run so an aborted
        // sweep still leaves a usable table behind
        let mut ordered = cfg.alphas.clone();
        ordered.sort_by(|a, b| a.partial_cmp(b).expect("finite alphas"));
        for alpha in ordered {
            let mut run_cfg = cfg.clone();
            run_cfg.alpha = alpha;
            run_cfg.mode = TrainMode::Dgao;
            match toyrl::run_experiment::<f64>(&run_cfg) {
                Ok(res) => {
                    rows.push(ReportRow::from_report(
                        "toy",
                        format!("dgao(alpha={alpha})"),
                        &res.final_report,
                    ));
                    let csv_name = format!("curves_alpha_{alpha}.csv");
                    std::fs::write(args.out.join(&csv_name), toyrl::curves_csv(&res.curves))?;
                    std::fs::write(args.out.join("report.csv"), report::to_csv(&rows, &[]))?;
                    std::fs::write(args.out.join("report.txt"), report::render_text(&rows, &[]))?;
                }
                Err(e) => {
                    bail!(
                        "sweep aborted at alpha={alpha}: {e} (partial results in {})",
                        args.out.display()
                    );
                }
            }
        }
        manifest.artifact(&args.out, "report.csv")?;
        manifest.artifact(&args.out, "report.txt")?;
        manifest.write(&args.out)?;
        println!("{}", std::fs::read_to_string(args.out.join("report.txt"))?);
        return Ok(());
    }

    let result = toyrl::run_experiment::<f64>(&cfg)?;
    std::fs::write(args.out.join("curves.csv"), toyrl::curves_csv(&result.curves))?;
    let rows = vec![ReportRow::from_report(
        "toy",
        cfg.mode.to_string(),
        &result.final_report,
    )];
    manifest.artifact(&args.out, "curves.csv")?;
    write_report_files(&args.out, &rows, &[], &mut manifest)?;
    manifest.write(&args.out)?;
    let last = result.final_point();
    println!(
        "{} final: accuracy {:.4} consistency_rate {:.4} overconfidence_rate {:.4}",
        cfg.mode, last.accuracy, last.consistency_rate, last.overconfidence_rate
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let task_kind = parse_task_kind(&args.task_kind, &args.choices)?;
    let dataset = grouping::load_augmented(&args.data)?;
    if dataset.is_empty() {
        bail!(UsageError(format!("{} holds no groups", args.data.display())));
    }
    let mut endpoint = EndpointConfig::new(args.base_url.clone(), args.model.clone());
    endpoint.api_key = ApiKey::from_env(&args.api_key_env);
    endpoint.max_concurrency = args.max_concurrency;
    endpoint.timeout = std::time::Duration::from_secs(args.timeout_secs);
    endpoint.temperature = args.temperature;
    endpoint.max_tokens = args.max_tokens;

    let transcript_path = args.out.join("transcript.jsonl");
    let outcome =
        evaluate_endpoint(&dataset, endpoint, task_kind, &args.separator, &transcript_path)?;

    let tag = args
        .dataset_tag
        .clone()
        .or_else(|| args.data.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "dataset".into());
    let rows = vec![ReportRow::from_report(tag, args.model.clone(), &outcome.report)];
    let mut manifest = Manifest::new("eval");
    manifest.kv("data", args.data.display());
    manifest.kv("base_url", &args.base_url);
    manifest.kv("model", &args.model);
    manifest.kv("task_kind", &args.task_kind);
    manifest.kv("groups", dataset.len());
    manifest.kv("failed_requests", outcome.failed_requests);
    manifest.artifact(&args.out, "transcript.jsonl")?;
    write_report_files(&args.out, &rows, &[], &mut manifest)?;
    manifest.write(&args.out)?;

    if outcome.failed_requests > 0 {
        eprintln!(
            "warning: {} requests failed after retries and scored 0",
            outcome.failed_requests
        );
    }
    println!("{}", report::render_text(&rows, &[]));
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let task_kind = parse_task_kind(&args.task_kind, &args.choices)?;
    let dataset = grouping::load_augmented(&args.data)?;
    let report_values = replay_eval(&args.transcript, &dataset, &task_kind)?;
    let tag = args
        .dataset_tag
        .clone()
        .or_else(|| args.data.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "dataset".into());
    let rows = vec![ReportRow::from_report(tag, "replay", &report_values)];
    let mut manifest = Manifest::new("replay");
    manifest.kv("transcript", args.transcript.display());
    manifest.kv("data", args.data.display());
    write_report_files(&args.out, &rows, &[], &mut manifest)?;
    manifest.write(&args.out)?;
    println!("{}", report::render_text(&rows, &[]));
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let baseline = match &args.baseline {
        Some(path) => report::parse_csv(&std::fs::read_to_string(path)?)?,
        None => Vec::new(),
    };
    let mut rows = Vec::new();
    for path in &args.methods {
        rows.extend(report::parse_csv(&std::fs::read_to_string(path)?)?);
    }
    if rows.is_empty() {
        bail!(UsageError("method files contain no rows".into()));
    }
    let mut manifest = Manifest::new("report");
    if let Some(b) = &args.baseline {
        manifest.kv("baseline", b.display());
    }
    write_report_files(&args.out, &rows, &baseline, &mut manifest)?;
    manifest.write(&args.out)?;
    println!("{}", report::render_text(&rows, &baseline));
    Ok(())
}
