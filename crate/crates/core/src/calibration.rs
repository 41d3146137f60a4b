//! Metric calibration: confusion matrices from human-vs-metric pairs and
//! Beta posteriors for the metric's true- and false-positive rates.
//!
//! With a flat prior the posteriors are `Beta(TP + 1, FN + 1)` for the TPR
//! and `Beta(FP + 1, TN + 1)` for the FPR. Calibration is keyed per
//! (metric, test set) and persisted with the raw counts so it can be reused
//! across every later model comparison.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::CalibrationPair;
use crate::error::{Error, Result};
use crate::stochastics::{beta_quantile, BetaParams};

/// Artifact format version; bumped on any schema change.
pub const CALIBRATION_FORMAT_VERSION: u32 = 1;

/// Calibration sets with fewer true negatives + false positives than this
/// cannot pin down the FPR; loading and building warn below it.
pub const MIN_NEGATIVE_COUNT: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fnn: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fnn + self.tn
    }

    /// True when the negative side is too thin to calibrate the FPR.
    pub fn insufficient_negatives(&self) -> bool {
        self.tn + self.fp < MIN_NEGATIVE_COUNT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RateKind {
    Tpr,
    Fpr,
}

/// Beta posterior for one rate of one metric on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePosterior {
    pub rate_kind: RateKind,
    pub params: BetaParams,
    pub source_matrix: ConfusionMatrix,
    pub metric: String,
    pub test_set: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
}

/// Count the four-way partition of human-vs-metric agreement.
pub fn confusion_matrix(pairs: &[CalibrationPair]) -> Result<ConfusionMatrix> {
    if pairs.is_empty() {
        return Err(Error::EmptyCalibration {
            metric: String::new(),
            test_set: String::new(),
        });
    }
    let mut m = ConfusionMatrix {
        tp: 0,
        fp: 0,
        fnn: 0,
        tn: 0,
    };
    for p in pairs {
        match (p.human, p.metric) {
            (true, true) => m.tp += 1,
            (false, true) => m.fp += 1,
            (true, false) => m.fnn += 1,
            (false, false) => m.tn += 1,
        }
    }
    Ok(m)
}

/// TPR and FPR posteriors under the flat prior. Valid even for the all-zero
/// matrix, which yields Beta(1, 1) on both rates.
pub fn rate_posteriors(
    cm: ConfusionMatrix,
    metric: &str,
    test_set: &str,
) -> (RatePosterior, RatePosterior) {
    let tpr = RatePosterior {
        rate_kind: RateKind::Tpr,
        params: BetaParams {
            alpha: cm.tp as f64 + 1.0,
            beta: cm.fnn as f64 + 1.0,
        },
        source_matrix: cm,
        metric: metric.to_string(),
        test_set: test_set.to_string(),
    };
    let fpr = RatePosterior {
        rate_kind: RateKind::Fpr,
        params: BetaParams {
            alpha: cm.fp as f64 + 1.0,
            beta: cm.tn as f64 + 1.0,
        },
        source_matrix: cm,
        metric: metric.to_string(),
        test_set: test_set.to_string(),
    };
    (tpr, fpr)
}

/// Analytic mean plus equal-tailed interval at the given level.
pub fn summarize_posterior(post: &RatePosterior, level: f64) -> Result<PosteriorSummary> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!(
            "credible level must be in (0, 1), got {level}"
        )));
    }
    let tail = (1.0 - level) / 2.0;
    Ok(PosteriorSummary {
        mean: post.params.mean(),
        ci_low: beta_quantile(post.params, tail)?,
        ci_high: beta_quantile(post.params, 1.0 - tail)?,
        level,
    })
}

/// Persisted calibration for one (metric, test set): the matrix counts, not
/// just the Beta params, so a different prior can be re-derived later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub version: u32,
    pub metric: String,
    pub test_set: String,
    pub matrix: ConfusionMatrix,
    pub tpr: BetaParams,
    pub fpr: BetaParams,
    pub level: f64,
}

impl CalibrationArtifact {
    pub fn from_matrix(cm: ConfusionMatrix, metric: &str, test_set: &str, level: f64) -> Self {
        let (tpr, fpr) = rate_posteriors(cm, metric, test_set);
        Self {
            version: CALIBRATION_FORMAT_VERSION,
            metric: metric.to_string(),
            test_set: test_set.to_string(),
            matrix: cm,
            tpr: tpr.params,
            fpr: fpr.params,
            level,
        }
    }

    pub fn posteriors(&self) -> (RatePosterior, RatePosterior) {
        rate_posteriors(self.matrix, &self.metric, &self.test_set)
    }
}

pub fn save_calibration(artifact: &CalibrationArtifact, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(artifact)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_calibration(path: &Path) -> Result<CalibrationArtifact> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let artifact: CalibrationArtifact = serde_json::from_str(&text)
        .map_err(|e| Error::Load(format!("{}: corrupt calibration file: {e}", path.display())))?;
    if artifact.version != CALIBRATION_FORMAT_VERSION {
        return Err(Error::Load(format!(
            "{}: unknown calibration format version {}",
            path.display(),
            artifact.version
        )));
    }
    let derived = CalibrationArtifact::from_matrix(
        artifact.matrix,
        &artifact.metric,
        &artifact.test_set,
        artifact.level,
    );
    if derived.tpr != artifact.tpr || derived.fpr != artifact.fpr {
        return Err(Error::Load(format!(
            "{}: beta params inconsistent with matrix counts",
            path.display()
        )));
    }
    Ok(artifact)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs_from_counts(tp: u64, fp: u64, fnn: u64, tn: u64) -> Vec<CalibrationPair> {
        let mut out = Vec::new();
        let mut push = |human: bool, metric: bool, n: u64| {
            for _ in 0..n {
                let i = out.len();
                out.push(CalibrationPair {
                    example_id: format!("e{i}"),
                    model: "m".into(),
                    human,
                    metric,
                });
            }
        };
        push(true, true, tp);
        push(false, true, fp);
        push(true, false, fnn);
        push(false, false, tn);
        out
    }

    #[test]
    fn hotpot_strongest_metric_matrix() {
        let cm = confusion_matrix(&pairs_from_counts(52, 0, 6, 8)).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 52, fp: 0, fnn: 6, tn: 8 });
        assert_eq!(cm.total(), 66);
    }

    #[test]
    fn all_agree_correct_matrix() {
        let cm = confusion_matrix(&pairs_from_counts(5, 0, 0, 0)).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 5, fp: 0, fnn: 0, tn: 0 });
    }

    #[test]
    fn empty_pairs_error() {
        assert!(confusion_matrix(&[]).is_err());
    }

    #[test]
    fn posterior_params_from_counts() {
        let (tpr, fpr) = rate_posteriors(
            ConfusionMatrix { tp: 52, fp: 0, fnn: 6, tn: 8 },
            "new_correctness",
            "hotpot",
        );
        assert_eq!(tpr.params, BetaParams { alpha: 53.0, beta: 7.0 });
        assert_eq!(fpr.params, BetaParams { alpha: 1.0, beta: 9.0 });

        let (tpr, fpr) = rate_posteriors(
            ConfusionMatrix { tp: 31, fp: 10, fnn: 9, tn: 4 },
            "correctness",
            "basic",
        );
        assert_eq!(tpr.params, BetaParams { alpha: 32.0, beta: 10.0 });
        assert_eq!(fpr.params, BetaParams { alpha: 11.0, beta: 5.0 });
    }

    #[test]
    fn zero_matrix_gives_flat_posteriors() {
        let (tpr, fpr) = rate_posteriors(
            ConfusionMatrix { tp: 0, fp: 0, fnn: 0, tn: 0 },
            "m",
            "t",
        );
        assert_eq!(tpr.params, BetaParams { alpha: 1.0, beta: 1.0 });
        assert_eq!(fpr.params, BetaParams { alpha: 1.0, beta: 1.0 });
    }

    #[test]
    fn summaries_match_reported_rows() {
        let (tpr, _) = rate_posteriors(
            ConfusionMatrix { tp: 52, fp: 0, fnn: 6, tn: 8 },
            "new_correctness",
            "hotpot",
        );
        let s = summarize_posterior(&tpr, 0.90).unwrap();
        assert!((s.mean - 0.883).abs() < 0.001);
        assert!((s.ci_low - 0.809).abs() < 0.01);
        assert!((s.ci_high - 0.943).abs() < 0.01);

        let (tpr, _) = rate_posteriors(
            ConfusionMatrix { tp: 35, fp: 8, fnn: 5, tn: 8 },
            "llm_correctness",
            "basic",
        );
        let s = summarize_posterior(&tpr, 0.90).unwrap();
        assert!((s.mean - 0.857).abs() < 0.001);
        assert!((s.ci_low - 0.761).abs() < 0.01);
        assert!((s.ci_high - 0.934).abs() < 0.01);
    }

    #[test]
    fn flat_posterior_summary() {
        let (tpr, _) = rate_posteriors(
            ConfusionMatrix { tp: 0, fp: 0, fnn: 0, tn: 0 },
            "m",
            "t",
        );
        let s = summarize_posterior(&tpr, 0.90).unwrap();
        assert!((s.mean - 0.5).abs() < 1e-12);
        assert!((s.ci_low - 0.05).abs() < 1e-9);
        assert!((s.ci_high - 0.95).abs() < 1e-9);
    }

    #[test]
    fn invalid_level_rejected() {
        let (tpr, _) = rate_posteriors(
            ConfusionMatrix { tp: 1, fp: 1, fnn: 1, tn: 1 },
            "m",
            "t",
        );
        assert!(summarize_posterior(&tpr, 0.0).is_err());
        assert!(summarize_posterior(&tpr, 1.0).is_err());
    }

    #[test]
    fn tpr_mean_monotone_in_counts() {
        let base = ConfusionMatrix { tp: 10, fp: 2, fnn: 4, tn: 3 };
        let more_tp = ConfusionMatrix { tp: 11, ..base };
        let more_fn = ConfusionMatrix { fnn: 5, ..base };
        let mean = |cm| rate_posteriors(cm, "m", "t").0.params.mean();
        assert!(mean(more_tp) > mean(base));
        assert!(mean(more_fn) < mean(base));
    }

    #[test]
    fn interval_narrows_with_scale() {
        let width = |k: u64| {
            let cm = ConfusionMatrix { tp: 10 * k, fp: 2 * k, fnn: 4 * k, tn: 3 * k };
            let (tpr, _) = rate_posteriors(cm, "m", "t");
            let s = summarize_posterior(&tpr, 0.90).unwrap();
            s.ci_high - s.ci_low
        };
        assert!(width(10) < width(1));
        assert!(width(100) < width(10));
    }

    #[test]
    fn artifact_roundtrip() {
        let art = CalibrationArtifact::from_matrix(
            ConfusionMatrix { tp: 37, fp: 5, fnn: 3, tn: 9 },
            "new_correctness",
            "basic",
            0.90,
        );
        let f = tempfile::NamedTempFile::new().unwrap();
        save_calibration(&art, f.path()).unwrap();
        let back = load_calibration(f.path()).unwrap();
        assert_eq!(art, back);
    }

    #[test]
    fn unknown_version_rejected() {
        let mut art = CalibrationArtifact::from_matrix(
            ConfusionMatrix { tp: 1, fp: 1, fnn: 1, tn: 1 },
            "m",
            "t",
            0.90,
        );
        art.version = 99;
        let f = tempfile::NamedTempFile::new().unwrap();
        save_calibration(&art, f.path()).unwrap();
        assert!(matches!(load_calibration(f.path()), Err(Error::Load(_))));
    }

    #[test]
    fn corrupt_file_rejected() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), "not json").unwrap();
        assert!(matches!(load_calibration(f.path()), Err(Error::Load(_))));
    }

    #[test]
    fn insufficient_negatives_flagged() {
        assert!(ConfusionMatrix { tp: 20, fp: 1, fnn: 2, tn: 3 }.insufficient_negatives());
        assert!(!ConfusionMatrix { tp: 20, fp: 2, fnn: 2, tn: 3 }.insufficient_negatives());
    }
}
