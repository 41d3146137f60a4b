//! Command-line surface: one subcommand per evaluation stage, plus `report`
//! to aggregate artifacts into tables.
//!
//! Every subcommand is idempotent — identical inputs, flags, and seed rewrite
//! byte-identical outputs. Randomized subcommands default to seed
//! [`DEFAULT_SEED`] unless `--seed` is given.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::calibration::{
    load_calibration, save_calibration, summarize_posterior, CalibrationArtifact,
};
use crate::comparison::{compare_models, idk_rate, ComparisonResult, IdkRate};
use crate::dataset::{
    align_paired_runs, join_calibration, load_records, save_records, test_set_index, LabelRecord,
    RunRecord, TestExample, VerdictRecord,
};
use crate::error::{Error, Result};
use crate::judge::{judge_run, JudgeConfig, TemplateId};
use crate::pipeline::{
    conformance_gate, correctness_idk_latency_gate, filter_vetted, select_models, style_gate,
    GatePolicy, GateReport, ModelProfile, SelectionRequirements, SelectionResult,
};
use crate::quality_checks::{summarize_style, StyleRules, StyleSummary};
use crate::report::{
    render_calibration, render_comparisons, render_gate_trail, render_selection, render_styles,
    Format,
};

/// Seed used when a randomized subcommand is run without `--seed`.
pub const DEFAULT_SEED: u64 = 17;

#[derive(Parser)]
#[command(name = "migrateval", version, about = "Calibrated paired evaluation for LLM migrations")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit judge TPR/FPR posteriors from human labels and judge verdicts.
    Calibrate(CalibrateArgs),
    /// Produce judge verdicts for model runs via a chat-completion endpoint.
    Judge(JudgeArgs),
    /// Monte-Carlo comparison of a candidate against a baseline.
    Compare(CompareArgs),
    /// Style, formatting, and IDK summaries per (model, test set).
    Style(StyleArgs),
    /// Apply the staged elimination gates to a candidate pool.
    Gate(GateArgs),
    /// Pick a minimal covering model set from the gate survivors.
    Select(SelectArgs),
    /// Render artifacts as markdown, CSV, or structured JSON tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// Human label records (JSONL).
    #[arg(long)]
    labels: PathBuf,
    /// Judge verdict records (JSONL).
    #[arg(long)]
    verdicts: PathBuf,
    /// Test-example records (JSONL), used to scope by test set.
    #[arg(long)]
    examples: PathBuf,
    #[arg(long)]
    metric: String,
    #[arg(long = "test-set")]
    test_set: String,
    /// Credible-interval level stored with the artifact.
    #[arg(long, default_value_t = 0.90)]
    level: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct JudgeArgs {
    #[arg(long)]
    examples: PathBuf,
    #[arg(long)]
    runs: PathBuf,
    /// Judge template: new_correctness or llm_correctness.
    #[arg(long)]
    template: String,
    /// Chat-completion endpoint URL.
    #[arg(long)]
    endpoint: String,
    /// Judge model name sent in the request body.
    #[arg(long)]
    model: String,
    #[arg(long = "max-parallel", default_value_t = 4)]
    max_parallel: usize,
    #[arg(long = "timeout-s", default_value_t = 60.0)]
    timeout_s: f64,
    #[arg(long = "max-retries", default_value_t = 3)]
    max_retries: u32,
    #[arg(long = "backoff-base-s", default_value_t = 1.0)]
    backoff_base_s: f64,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Output verdict records (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Verdict records for both models (JSONL).
    #[arg(long)]
    verdicts: PathBuf,
    #[arg(long)]
    examples: PathBuf,
    /// Calibration artifact; its metric and test set scope the comparison.
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long)]
    baseline: String,
    #[arg(long)]
    candidate: String,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 0.90)]
    level: f64,
    /// Output comparison result (single JSON line, appendable).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StyleArgs {
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    examples: PathBuf,
    /// Optional trigger-phrase rules (JSON); defaults built in.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Output style summaries (JSONL, one per model x test set).
    #[arg(long)]
    out: PathBuf,
    /// Also write IDK rates (JSONL, one per model x test set).
    #[arg(long = "idk-out")]
    idk_out: Option<PathBuf>,
}

#[derive(Args)]
struct GateArgs {
    /// Gate thresholds (JSON); defaults apply for missing fields.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Candidate model profiles (JSON array).
    #[arg(long)]
    profiles: PathBuf,
    /// Comparison results vs the baseline (JSONL).
    #[arg(long)]
    comparisons: PathBuf,
    /// Style summaries for candidates and baseline (JSONL).
    #[arg(long)]
    styles: PathBuf,
    /// IDK rates for candidates and baseline (JSONL).
    #[arg(long)]
    idk: PathBuf,
    /// Schema conformance rates, percent (JSON object model -> rate).
    /// Omit to skip the conformance gate.
    #[arg(long)]
    conformance: Option<PathBuf>,
    /// Baseline model name the comparisons were run against.
    #[arg(long)]
    baseline: String,
    /// Output gate trail (JSONL, one decision per model per step).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    /// Surviving model profiles (JSON array).
    #[arg(long)]
    profiles: PathBuf,
    /// Required regions and modalities (JSON).
    #[arg(long)]
    requirements: PathBuf,
    /// Correctness scores used as the final tie-break (JSON object).
    #[arg(long)]
    ranks: PathBuf,
    /// Output selection result (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Artifact files: calibration, comparison, IDK, style, gate, selection.
    /// Kinds are detected from content.
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "markdown")]
    format: String,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Load(format!("{}: {e}", path.display())))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_jsonl<T: serde::Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row)?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn run_calibrate(a: &CalibrateArgs) -> Result<()> {
    let labels: Vec<LabelRecord> = load_records(&a.labels)?;
    let verdicts: Vec<VerdictRecord> = load_records(&a.verdicts)?;
    let examples: Vec<TestExample> = load_records(&a.examples)?;
    let pairs = join_calibration(&labels, &verdicts, &examples, &a.metric, &a.test_set)?;
    let cm = crate::calibration::confusion_matrix(&pairs)?;
    let artifact = CalibrationArtifact::from_matrix(cm, &a.metric, &a.test_set, a.level);
    save_calibration(&artifact, &a.out)?;
    eprintln!(
        "calibrated {}/{} from {} pairs (tp={} fn={} fp={} tn={})",
        a.metric, a.test_set, pairs.len(), cm.tp, cm.fnn, cm.fp, cm.tn
    );
    Ok(())
}

fn run_judge(a: &JudgeArgs) -> Result<()> {
    let examples: Vec<TestExample> = load_records(&a.examples)?;
    let runs: Vec<RunRecord> = load_records(&a.runs)?;
    let template: TemplateId = a.template.parse()?;
    let config = JudgeConfig {
        endpoint_url: a.endpoint.clone(),
        model_name: a.model.clone(),
        max_parallel_requests: a.max_parallel,
        timeout_s: a.timeout_s,
        max_retries: a.max_retries,
        backoff_base_s: a.backoff_base_s,
        temperature: a.temperature,
    };
    let (outcomes, verdicts) = judge_run(&examples, &runs, template, &config)?;
    save_records(&verdicts, &a.out)?;
    let failures: Vec<&str> = outcomes
        .iter()
        .filter(|o| !o.parse_ok)
        .map(|o| o.example_id.as_str())
        .collect();
    eprintln!(
        "judged {} runs, {} verdicts written, {} parse failures{}",
        outcomes.len(),
        verdicts.len(),
        failures.len(),
        if failures.is_empty() {
            String::new()
        } else {
            format!(" ({})", failures.join(", "))
        }
    );
    Ok(())
}

fn run_compare(a: &CompareArgs) -> Result<()> {
    let verdicts: Vec<VerdictRecord> = load_records(&a.verdicts)?;
    let examples: Vec<TestExample> = load_records(&a.examples)?;
    let artifact = load_calibration(&a.calibration)?;
    let (paired, dropped) = align_paired_runs(
        &verdicts,
        &examples,
        &a.baseline,
        &a.candidate,
        &artifact.metric,
        &artifact.test_set,
    )?;
    if dropped > 0 {
        eprintln!("dropped {dropped} unpaired verdict(s)");
    }
    let (tpr, fpr) = artifact.posteriors();
    let result = compare_models(
        &paired, &tpr, &fpr, &a.baseline, &a.candidate, a.samples, a.seed, a.level,
    )?;
    write_jsonl(std::slice::from_ref(&result), &a.out)?;
    eprintln!(
        "{} vs {} on {}/{}: delta {:+.2} pp, {:.0}% CI [{:.2}, {:.2}], p = {:.3}",
        a.candidate,
        a.baseline,
        artifact.metric,
        artifact.test_set,
        result.delta_mean_pp,
        100.0 * a.level,
        result.ci_low_pp,
        result.ci_high_pp,
        result.p_improvement
    );
    Ok(())
}

fn run_style(a: &StyleArgs) -> Result<()> {
    let runs: Vec<RunRecord> = load_records(&a.runs)?;
    let examples: Vec<TestExample> = load_records(&a.examples)?;
    let rules: StyleRules = match &a.rules {
        Some(path) => read_json(path)?,
        None => StyleRules::default(),
    };
    let sets = test_set_index(&examples);
    let groups: BTreeSet<(String, String)> = runs
        .iter()
        .filter_map(|r| {
            sets.get(&r.example_id)
                .map(|s| (r.model.clone(), s.clone()))
        })
        .collect();
    if groups.is_empty() {
        return Err(Error::EmptyData("no runs match any known example".into()));
    }
    let mut summaries = Vec::new();
    let mut idk = Vec::new();
    for (model, set) in &groups {
        summaries.push(summarize_style(&runs, &examples, model, set, &rules)?);
        idk.push(idk_rate(&runs, &examples, model, set)?);
    }
    write_jsonl(&summaries, &a.out)?;
    if let Some(path) = &a.idk_out {
        write_jsonl(&idk, path)?;
    }
    eprintln!("summarized {} model/test-set group(s)", groups.len());
    Ok(())
}

fn run_gate(a: &GateArgs) -> Result<()> {
    let policy: GatePolicy = match &a.policy {
        Some(path) => read_json(path)?,
        None => GatePolicy::default(),
    };
    let profiles: Vec<ModelProfile> = read_json(&a.profiles)?;
    let comparisons: Vec<ComparisonResult> = read_jsonl(&a.comparisons)?;
    let styles: Vec<StyleSummary> = read_jsonl(&a.styles)?;
    let idk: Vec<IdkRate> = read_jsonl(&a.idk)?;

    let mut trail: Vec<GateReport> = Vec::new();
    let (vetted, reports) = filter_vetted(&profiles, &policy)?;
    trail.extend(reports);
    let mut live: Vec<String> = vetted.iter().map(|p| p.name.clone()).collect();

    if let Some(path) = &a.conformance {
        let rates: BTreeMap<String, f64> = read_json(path)?;
        let (survivors, reports) = conformance_gate(&live, &rates, &policy)?;
        trail.extend(reports);
        live = survivors;
    }
    if live.is_empty() {
        return Err(Error::EmptyCandidatePool { step: 2 });
    }

    let (survivors, reports) =
        correctness_idk_latency_gate(&live, &comparisons, &idk, &styles, &a.baseline, &policy)?;
    trail.extend(reports);
    live = survivors;
    if live.is_empty() {
        return Err(Error::EmptyCandidatePool { step: 4 });
    }

    let (survivors, reports) = style_gate(&live, &styles, &policy)?;
    trail.extend(reports);
    live = survivors;
    if live.is_empty() {
        return Err(Error::EmptyCandidatePool { step: 5 });
    }

    write_jsonl(&trail, &a.out)?;
    eprintln!("survivors: {}", live.join(", "));
    Ok(())
}

fn run_select(a: &SelectArgs) -> Result<()> {
    let profiles: Vec<ModelProfile> = read_json(&a.profiles)?;
    let requirements: SelectionRequirements = read_json(&a.requirements)?;
    let ranks: BTreeMap<String, f64> = read_json(&a.ranks)?;
    let result = select_models(&profiles, &requirements, &ranks)?;
    let mut text = serde_json::to_string_pretty(&result)?;
    text.push('\n');
    fs::write(&a.out, text)?;
    eprintln!(
        "selected: {}",
        result.chosen.iter().cloned().collect::<Vec<_>>().join(", ")
    );
    Ok(())
}

/// What an artifact file turned out to contain, detected from its JSON shape.
enum Artifact {
    Calibration(CalibrationArtifact),
    Comparisons(Vec<ComparisonResult>),
    IdkRates(Vec<IdkRate>),
    Styles(Vec<StyleSummary>),
    GateTrail(Vec<GateReport>),
    Selection(SelectionResult),
}

fn classify(path: &Path) -> Result<Artifact> {
    let text = fs::read_to_string(path)?;
    let values: Vec<serde_json::Value> = if let Ok(v) = serde_json::from_str(&text) {
        vec![v]
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_>>()?
    };
    let first = values.first().ok_or_else(|| {
        Error::EmptyReport(format!("{} contains no records", path.display()))
    })?;
    let from = |v: &[serde_json::Value]| serde_json::Value::Array(v.to_vec());
    let unknown = || Error::Load(format!("{}: unrecognized artifact shape", path.display()));
    if first.get("matrix").is_some() {
        Ok(Artifact::Calibration(
            serde_json::from_value(first.clone()).map_err(|_| unknown())?,
        ))
    } else if first.get("delta_mean_pp").is_some() {
        Ok(Artifact::Comparisons(
            serde_json::from_value(from(&values)).map_err(|_| unknown())?,
        ))
    } else if first.get("n_idk").is_some() {
        Ok(Artifact::IdkRates(
            serde_json::from_value(from(&values)).map_err(|_| unknown())?,
        ))
    } else if first.get("pct_bad_style").is_some() {
        Ok(Artifact::Styles(
            serde_json::from_value(from(&values)).map_err(|_| unknown())?,
        ))
    } else if first.get("step").is_some() {
        Ok(Artifact::GateTrail(
            serde_json::from_value(from(&values)).map_err(|_| unknown())?,
        ))
    } else if first.get("chosen").is_some() {
        Ok(Artifact::Selection(
            serde_json::from_value(first.clone()).map_err(|_| unknown())?,
        ))
    } else {
        Err(unknown())
    }
}

fn run_report(a: &ReportArgs) -> Result<()> {
    let format: Format = a.format.parse()?;
    let mut calibrations = Vec::new();
    let mut comparisons = Vec::new();
    let mut idk = Vec::new();
    let mut styles = Vec::new();
    let mut gates = Vec::new();
    let mut selections = Vec::new();
    for path in &a.inputs {
        match classify(path)? {
            Artifact::Calibration(c) => calibrations.push(c),
            Artifact::Comparisons(mut v) => comparisons.append(&mut v),
            Artifact::IdkRates(mut v) => idk.append(&mut v),
            Artifact::Styles(mut v) => styles.append(&mut v),
            Artifact::GateTrail(mut v) => gates.append(&mut v),
            Artifact::Selection(s) => selections.push(s),
        }
    }

    let mut sections: Vec<(String, String)> = Vec::new();
    if !calibrations.is_empty() {
        let entries = calibrations
            .iter()
            .map(|c| {
                let (tpr, fpr) = c.posteriors();
                Ok((
                    c.clone(),
                    summarize_posterior(&tpr, c.level)?,
                    summarize_posterior(&fpr, c.level)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        sections.push((
            "Judge calibration".into(),
            render_calibration(&entries, format)?,
        ));
    }
    if !comparisons.is_empty() {
        sections.push((
            "Model comparisons".into(),
            render_comparisons(&comparisons, &idk, format)?,
        ));
    }
    if !styles.is_empty() {
        sections.push(("Style metrics".into(), render_styles(&styles, format)?));
    }
    if !gates.is_empty() {
        sections.push(("Gate trail".into(), render_gate_trail(&gates, format)?));
    }
    for s in &selections {
        sections.push(("Selection".into(), render_selection(s, format)?));
    }
    if sections.is_empty() {
        return Err(Error::EmptyReport("no renderable artifacts".into()));
    }

    let mut out = String::new();
    for (title, body) in &sections {
        if format == Format::Markdown {
            out.push_str(&format!("## {title}\n\n"));
        }
        out.push_str(body);
        out.push('\n');
    }
    match &a.out {
        Some(path) => fs::write(path, out)?,
        None => print!("{out}"),
    }
    Ok(())
}

/// Parse argv, dispatch, and map errors to exit codes: 0 success, 1 for
/// validation and gate failures, 2 for I/O and transport errors.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Calibrate(a) => run_calibrate(a),
        Command::Judge(a) => run_judge(a),
        Command::Compare(a) => run_compare(a),
        Command::Style(a) => run_style(a),
        Command::Gate(a) => run_gate(a),
        Command::Select(a) => run_select(a),
        Command::Report(a) => run_report(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
