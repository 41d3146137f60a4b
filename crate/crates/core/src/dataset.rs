//! Record ingestion and alignment.
//!
//! Four line-delimited JSON streams make up an evaluation corpus: test
//! examples, model runs, metric verdicts, and human labels. Loading validates
//! per-record invariants and duplicate keys with line numbers retained;
//! joining produces the calibration pairs and paired verdict vectors the
//! statistics modules consume.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary pass/fail verdict from an automated metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn is_pass(self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

/// Raw human label; anything but `correct` binarizes to incorrect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawLabel {
    Correct,
    Incomplete,
    Irrelevant,
    Incorrect,
    Idk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestExample {
    pub id: String,
    pub test_set: String,
    pub question: String,
    pub contexts: Vec<String>,
    pub ground_truth: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub example_id: String,
    pub model: String,
    pub prompt_id: String,
    pub answer_text: String,
    pub is_idk: bool,
    pub response_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub example_id: String,
    pub model: String,
    pub metric: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub example_id: String,
    pub model: String,
    pub raw_label: RawLabel,
}

impl LabelRecord {
    /// Binary human judgment: correct iff the raw label is `correct`.
    pub fn binary_label(&self) -> bool {
        self.raw_label == RawLabel::Correct
    }
}

/// One (human, metric) judgment pair on the same (example, model) answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPair {
    pub example_id: String,
    pub model: String,
    pub human: bool,
    pub metric: bool,
}

/// Verdict vectors for a baseline/candidate pair, aligned on the example ids
/// both models were judged on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedVerdicts {
    pub example_ids: Vec<String>,
    pub baseline_verdicts: Vec<bool>,
    pub candidate_verdicts: Vec<bool>,
    pub metric: String,
    pub test_set: String,
}

impl PairedVerdicts {
    pub fn len(&self) -> usize {
        self.example_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.example_ids.is_empty()
    }
}

/// A loadable record stream with a per-file uniqueness key.
pub trait Record: DeserializeOwned + Serialize {
    const KIND: &'static str;
    fn key(&self) -> String;
    fn validate(&self) -> std::result::Result<(), String> {
        Ok(())
    }
}

impl Record for TestExample {
    const KIND: &'static str = "examples";
    fn key(&self) -> String {
        self.id.clone()
    }
    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("id must be non-empty".into());
        }
        if self.test_set.is_empty() {
            return Err("test_set must be non-empty".into());
        }
        if self.contexts.is_empty() {
            return Err("contexts must be non-empty".into());
        }
        Ok(())
    }
}

impl Record for RunRecord {
    const KIND: &'static str = "runs";
    fn key(&self) -> String {
        format!("{}\u{1f}{}\u{1f}{}", self.example_id, self.model, self.prompt_id)
    }
    fn validate(&self) -> std::result::Result<(), String> {
        if !(self.response_time_s >= 0.0) {
            return Err(format!(
                "response_time_s must be >= 0, got {}",
                self.response_time_s
            ));
        }
        Ok(())
    }
}

impl Record for VerdictRecord {
    const KIND: &'static str = "verdicts";
    fn key(&self) -> String {
        format!("{}\u{1f}{}\u{1f}{}", self.example_id, self.model, self.metric)
    }
}

impl Record for LabelRecord {
    const KIND: &'static str = "labels";
    fn key(&self) -> String {
        format!("{}\u{1f}{}", self.example_id, self.model)
    }
}

/// Load a line-delimited record file, enforcing invariants and key uniqueness.
/// Parse errors name the offending line.
pub fn load_records<T: Record>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: format!("{} record: {e}", T::KIND),
        })?;
        record.validate().map_err(|m| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: m,
        })?;
        if !seen.insert(record.key()) {
            return Err(Error::DuplicateKey {
                path: path.display().to_string(),
                line: idx + 1,
                key: record.key().replace('\u{1f}', "/"),
            });
        }
        out.push(record);
    }
    Ok(out)
}

/// Serialize records back to line-delimited JSON, one per line.
pub fn save_records<T: Record>(records: &[T], path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

/// Index test-set membership by example id.
pub fn test_set_index(examples: &[TestExample]) -> BTreeMap<String, String> {
    examples
        .iter()
        .map(|e| (e.id.clone(), e.test_set.clone()))
        .collect()
}

/// Intersect human labels with metric verdicts for one metric on one test
/// set. One pair per (example, model) holding both judgments, sorted by
/// (example_id, model).
pub fn join_calibration(
    labels: &[LabelRecord],
    verdicts: &[VerdictRecord],
    examples: &[TestExample],
    metric: &str,
    test_set: &str,
) -> Result<Vec<CalibrationPair>> {
    let sets = test_set_index(examples);
    let verdict_index: BTreeMap<(String, String), Verdict> = verdicts
        .iter()
        .filter(|v| v.metric == metric)
        .map(|v| ((v.example_id.clone(), v.model.clone()), v.verdict))
        .collect();

    let mut pairs = Vec::new();
    for label in labels {
        if sets.get(&label.example_id).map(String::as_str) != Some(test_set) {
            continue;
        }
        let key = (label.example_id.clone(), label.model.clone());
        if let Some(v) = verdict_index.get(&key) {
            pairs.push(CalibrationPair {
                example_id: label.example_id.clone(),
                model: label.model.clone(),
                human: label.binary_label(),
                metric: v.is_pass(),
            });
        }
    }
    pairs.sort_by(|a, b| (&a.example_id, &a.model).cmp(&(&b.example_id, &b.model)));
    if pairs.is_empty() {
        return Err(Error::EmptyCalibration {
            metric: metric.to_string(),
            test_set: test_set.to_string(),
        });
    }
    Ok(pairs)
}

/// Align two models' verdicts for one metric on one test set. Only example
/// ids judged for BOTH models survive (paired design); ordering is by
/// example id. The second return value counts unpaired ids dropped.
pub fn align_paired_runs(
    verdicts: &[VerdictRecord],
    examples: &[TestExample],
    baseline: &str,
    candidate: &str,
    metric: &str,
    test_set: &str,
) -> Result<(PairedVerdicts, usize)> {
    let sets = test_set_index(examples);
    let in_set = |id: &str| sets.get(id).map(String::as_str) == Some(test_set);

    let collect = |model: &str| -> BTreeMap<String, bool> {
        verdicts
            .iter()
            .filter(|v| v.metric == metric && v.model == model && in_set(&v.example_id))
            .map(|v| (v.example_id.clone(), v.verdict.is_pass()))
            .collect()
    };
    let base = collect(baseline);
    let cand = collect(candidate);

    let mut example_ids = Vec::new();
    let mut baseline_verdicts = Vec::new();
    let mut candidate_verdicts = Vec::new();
    for (id, &bv) in &base {
        if let Some(&cv) = cand.get(id) {
            example_ids.push(id.clone());
            baseline_verdicts.push(bv);
            candidate_verdicts.push(cv);
        }
    }
    let dropped = base.len() + cand.len() - 2 * example_ids.len();

    if example_ids.is_empty() {
        return Err(Error::Alignment(format!(
            "no shared examples between {baseline} and {candidate} for metric {metric} on {test_set}"
        )));
    }
    Ok((
        PairedVerdicts {
            example_ids,
            baseline_verdicts,
            candidate_verdicts,
            metric: metric.to_string(),
            test_set: test_set.to_string(),
        },
        dropped,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn example(id: &str, test_set: &str) -> TestExample {
        TestExample {
            id: id.into(),
            test_set: test_set.into(),
            question: "q".into(),
            contexts: vec!["c".into()],
            ground_truth: "g".into(),
        }
    }

    fn verdict(id: &str, model: &str, metric: &str, pass: bool) -> VerdictRecord {
        VerdictRecord {
            example_id: id.into(),
            model: model.into(),
            metric: metric.into(),
            verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        }
    }

    #[test]
    fn empty_file_loads_empty() {
        let f = write_lines(&[]);
        let records: Vec<RunRecord> = load_records(f.path()).unwrap();
        assert!(records.is_empty());
    }

    #[test]
    fn single_run_line_loads() {
        let f = write_lines(&[
            r#"{"example_id":"e1","model":"m","prompt_id":"p1","answer_text":"a","is_idk":false,"response_time_s":1.2}"#,
        ]);
        let records: Vec<RunRecord> = load_records(f.path()).unwrap();
        assert_eq!(records.len(), 1);
        assert!(records[0].response_time_s >= 0.0);
    }

    #[test]
    fn negative_response_time_rejected() {
        let f = write_lines(&[
            r#"{"example_id":"e1","model":"m","prompt_id":"p1","answer_text":"a","is_idk":false,"response_time_s":-0.5}"#,
        ]);
        let err = load_records::<RunRecord>(f.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn duplicate_run_key_rejected() {
        let line = r#"{"example_id":"e1","model":"m","prompt_id":"p1","answer_text":"a","is_idk":false,"response_time_s":1.0}"#;
        let f = write_lines(&[line, line]);
        let err = load_records::<RunRecord>(f.path()).unwrap_err();
        assert!(matches!(err, Error::DuplicateKey { line: 2, .. }));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let f = write_lines(&[
            r#"{"example_id":"e1","model":"m","metric":"x","verdict":"pass"}"#,
            r#"{"example_id":"e2","model":"m","metric":"x","verdict":"maybe"}"#,
        ]);
        let err = load_records::<VerdictRecord>(f.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn roundtrip_is_lossless() {
        let records = vec![
            verdict("e1", "m1", "acc", true),
            verdict("e2", "m1", "acc", false),
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        save_records(&records, f.path()).unwrap();
        let back: Vec<VerdictRecord> = load_records(f.path()).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn binary_label_only_correct_maps_true() {
        for (raw, expect) in [
            (RawLabel::Correct, true),
            (RawLabel::Incomplete, false),
            (RawLabel::Irrelevant, false),
            (RawLabel::Incorrect, false),
            (RawLabel::Idk, false),
        ] {
            let l = LabelRecord {
                example_id: "e".into(),
                model: "m".into(),
                raw_label: raw,
            };
            assert_eq!(l.binary_label(), expect);
        }
    }

    #[test]
    fn join_calibration_intersects() {
        let examples = vec![example("e1", "t"), example("e2", "t"), example("e3", "t")];
        let labels = vec![
            LabelRecord { example_id: "e1".into(), model: "m".into(), raw_label: RawLabel::Correct },
            LabelRecord { example_id: "e2".into(), model: "m".into(), raw_label: RawLabel::Incorrect },
            LabelRecord { example_id: "e3".into(), model: "m".into(), raw_label: RawLabel::Correct },
        ];
        let verdicts = vec![
            verdict("e1", "m", "acc", true),
            verdict("e2", "m", "acc", true),
        ];
        let pairs = join_calibration(&labels, &verdicts, &examples, "acc", "t").unwrap();
        assert_eq!(pairs.len(), 2);
        assert!(pairs[0].human && pairs[0].metric);
        assert!(!pairs[1].human && pairs[1].metric);
    }

    #[test]
    fn join_calibration_missing_metric_errors() {
        let examples = vec![example("e1", "t")];
        let labels = vec![LabelRecord {
            example_id: "e1".into(),
            model: "m".into(),
            raw_label: RawLabel::Correct,
        }];
        let verdicts = vec![verdict("e1", "m", "metric_a", true)];
        let err = join_calibration(&labels, &verdicts, &examples, "metric_b", "t").unwrap_err();
        assert!(matches!(err, Error::EmptyCalibration { .. }));
    }

    #[test]
    fn align_intersection_drops_unpaired() {
        let examples: Vec<TestExample> =
            (0..200).map(|i| example(&format!("e{i:03}"), "t")).collect();
        let verdicts: Vec<VerdictRecord> = (0..200)
            .map(|i| verdict(&format!("e{i:03}"), "base", "acc", true))
            .chain((0..199).map(|i| verdict(&format!("e{i:03}"), "cand", "acc", false)))
            .collect();
        let (paired, dropped) =
            align_paired_runs(&verdicts, &examples, "base", "cand", "acc", "t").unwrap();
        assert_eq!(paired.len(), 199);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn align_identity_case() {
        let examples = vec![example("e1", "t"), example("e2", "t")];
        let verdicts = vec![
            verdict("e1", "a", "acc", true),
            verdict("e2", "a", "acc", false),
            verdict("e1", "b", "acc", true),
            verdict("e2", "b", "acc", false),
        ];
        let (paired, _) = align_paired_runs(&verdicts, &examples, "a", "b", "acc", "t").unwrap();
        assert_eq!(paired.baseline_verdicts, paired.candidate_verdicts);
    }

    #[test]
    fn align_swap_symmetry() {
        let examples = vec![example("e1", "t"), example("e2", "t"), example("e3", "t")];
        let verdicts = vec![
            verdict("e1", "a", "acc", true),
            verdict("e2", "a", "acc", false),
            verdict("e1", "b", "acc", false),
            verdict("e2", "b", "acc", true),
            verdict("e3", "b", "acc", true),
        ];
        let (ab, _) = align_paired_runs(&verdicts, &examples, "a", "b", "acc", "t").unwrap();
        let (ba, _) = align_paired_runs(&verdicts, &examples, "b", "a", "acc", "t").unwrap();
        assert_eq!(ab.example_ids, ba.example_ids);
        assert_eq!(ab.baseline_verdicts, ba.candidate_verdicts);
        assert_eq!(ab.candidate_verdicts, ba.baseline_verdicts);
    }

    #[test]
    fn align_empty_intersection_errors() {
        let examples = vec![example("e1", "t"), example("e2", "t")];
        let verdicts = vec![
            verdict("e1", "a", "acc", true),
            verdict("e2", "b", "acc", true),
        ];
        let err =
            align_paired_runs(&verdicts, &examples, "a", "b", "acc", "t").unwrap_err();
        assert!(matches!(err, Error::Alignment(_)));
    }
}
