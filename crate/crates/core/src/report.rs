//! Table renderers for calibration, comparison, style, gate, and selection
//! results: markdown, CSV, and structured JSON from one source of numbers.
//!
//! Displayed values are rounded to 3 significant figures; structured output
//! keeps full precision.

use serde::Serialize;

use crate::calibration::{CalibrationArtifact, PosteriorSummary};
use crate::comparison::{ComparisonResult, IdkRate};
use crate::error::{Error, Result};
use crate::pipeline::{GateOutcome, GateReport, SelectionResult};
use crate::quality_checks::StyleSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Markdown,
    Csv,
    Structured,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" => Ok(Format::Markdown),
            "csv" => Ok(Format::Csv),
            "structured" => Ok(Format::Structured),
            other => Err(Error::Configuration(format!("unknown format {other}"))),
        }
    }
}

/// Round to 3 significant figures, rendered the way the summary tables do:
/// 12.8, 9.89, 0.643.
pub fn sig3(x: f64) -> String {
    if x == 0.0 {
        return "0.00".to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (2 - magnitude).max(0) as usize;
    let rendered = format!("{x:.decimals$}");
    // rounding can push the magnitude up (9.996 -> 10.0); re-derive once
    let rounded: f64 = rendered.parse().unwrap_or(x);
    if rounded != 0.0 {
        let new_magnitude = rounded.abs().log10().floor() as i32;
        if new_magnitude != magnitude {
            let decimals = (2 - new_magnitude).max(0) as usize;
            return format!("{rounded:.decimals$}");
        }
    }
    rendered
}

fn csv_quote(field: &str) -> String {
    if field.contains(['"', ',', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn render_table(format: Format, header: &[&str], rows: &[Vec<String>]) -> String {
    match format {
        Format::Markdown => {
            let mut out = String::new();
            out.push_str(&format!("| {} |\n", header.join(" | ")));
            out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
            for row in rows {
                out.push_str(&format!("| {} |\n", row.join(" | ")));
            }
            out
        }
        Format::Csv => {
            let mut out = String::new();
            out.push_str(
                &header.iter().map(|h| csv_quote(h)).collect::<Vec<_>>().join(","),
            );
            out.push('\n');
            for row in rows {
                out.push_str(
                    &row.iter().map(|f| csv_quote(f)).collect::<Vec<_>>().join(","),
                );
                out.push('\n');
            }
            out
        }
        Format::Structured => unreachable!("structured output is serialized, not tabulated"),
    }
}

fn structured<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    Ok(out)
}

/// Calibration rows: TPR/FPR mean and CI per (metric, test set).
pub fn render_calibration(
    entries: &[(CalibrationArtifact, PosteriorSummary, PosteriorSummary)],
    format: Format,
) -> Result<String> {
    if entries.is_empty() {
        return Err(Error::EmptyReport("no calibration entries".into()));
    }
    if format == Format::Structured {
        #[derive(Serialize)]
        struct Row<'a> {
            #[serde(flatten)]
            artifact: &'a CalibrationArtifact,
            tpr_summary: &'a PosteriorSummary,
            fpr_summary: &'a PosteriorSummary,
        }
        let rows: Vec<Row> = entries
            .iter()
            .map(|(a, t, f)| Row {
                artifact: a,
                tpr_summary: t,
                fpr_summary: f,
            })
            .collect();
        return structured(&rows);
    }
    let rows: Vec<Vec<String>> = entries
        .iter()
        .map(|(a, tpr, fpr)| {
            vec![
                a.test_set.clone(),
                a.metric.clone(),
                sig3(tpr.mean),
                format!("[{}, {}]", sig3(tpr.ci_low), sig3(tpr.ci_high)),
                sig3(fpr.mean),
                format!("[{}, {}]", sig3(fpr.ci_low), sig3(fpr.ci_high)),
            ]
        })
        .collect();
    Ok(render_table(
        format,
        &["Test-set", "Metric", "TPR Mean", "TPR CI", "FPR Mean", "FPR CI"],
        &rows,
    ))
}

/// Comparison rows with the IDK column when rates are supplied.
pub fn render_comparisons(
    results: &[ComparisonResult],
    idk: &[IdkRate],
    format: Format,
) -> Result<String> {
    if results.is_empty() {
        return Err(Error::EmptyReport("no comparison results".into()));
    }
    if format == Format::Structured {
        return structured(results);
    }
    let idk_for = |model: &str, set: &str| {
        idk.iter()
            .find(|r| r.model == model && r.test_set == set)
            .map(|r| sig3(r.pct))
            .unwrap_or_else(|| "---".into())
    };
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.test_set.clone(),
                r.candidate.clone(),
                idk_for(&r.candidate, &r.test_set),
                sig3(r.delta_mean_pp),
                format!("[{}, {}]", sig3(r.ci_low_pp), sig3(r.ci_high_pp)),
                sig3(r.p_improvement),
            ]
        })
        .collect();
    Ok(render_table(
        format,
        &["Set", "Model", "IDK", "Diff", "90% CI", "p"],
        &rows,
    ))
}

/// Style metric rows matching the per-model summary table layout.
pub fn render_styles(summaries: &[StyleSummary], format: Format) -> Result<String> {
    if summaries.is_empty() {
        return Err(Error::EmptyReport("no style summaries".into()));
    }
    if format == Format::Structured {
        return structured(summaries);
    }
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.test_set.clone(),
                s.model.clone(),
                sig3(s.median_response_time),
                s.median_words.to_string(),
                sig3(s.pct_bad_style),
                sig3(s.pct_poor_formatting),
                sig3(s.pct_according_to),
                sig3(s.pct_mention_knowledge),
                sig3(s.pct_mention_sources),
            ]
        })
        .collect();
    Ok(render_table(
        format,
        &[
            "Test Set",
            "Model",
            "Median Time (s)",
            "Median Words",
            "% Bad Style",
            "% Poor Formatting",
            "% According To",
            "% Mention Knowledge",
            "% Mention Sources",
        ],
        &rows,
    ))
}

/// Gate trail: one row per (model, step) decision with its evidence.
pub fn render_gate_trail(reports: &[GateReport], format: Format) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::EmptyReport("no gate reports".into()));
    }
    if format == Format::Structured {
        return structured(reports);
    }
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let outcome = match r.outcome {
                GateOutcome::Pass => "pass",
                GateOutcome::Eliminated => "eliminated",
                GateOutcome::Flagged => "flagged",
            };
            let evidence = r
                .evidence
                .iter()
                .map(|e| format!("{} = {} (threshold {})", e.quantity, sig3(e.value), sig3(e.threshold)))
                .collect::<Vec<_>>()
                .join("; ");
            vec![r.step.to_string(), r.model.clone(), outcome.to_string(), evidence]
        })
        .collect();
    Ok(render_table(format, &["Step", "Model", "Outcome", "Evidence"], &rows))
}

/// Selection outcome with the per-combination assignment.
pub fn render_selection(result: &SelectionResult, format: Format) -> Result<String> {
    if format == Format::Structured {
        let mut out = serde_json::to_string(result)?;
        out.push('\n');
        return Ok(out);
    }
    let mut rows: Vec<Vec<String>> = result
        .assignment
        .iter()
        .map(|(combo, model)| vec![combo.clone(), model.clone()])
        .collect();
    rows.push(vec![
        "chosen".into(),
        result.chosen.iter().cloned().collect::<Vec<_>>().join(" + "),
    ]);
    rows.push(vec!["total price score".into(), result.total_price_score.to_string()]);
    let mut table = render_table(format, &["Requirement", "Model"], &rows);
    if format == Format::Markdown {
        table.push_str(&format!("\n{}\n", result.rationale));
    }
    Ok(table)
}
