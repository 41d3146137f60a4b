//! Monte Carlo posterior for the true correctness-rate difference between a
//! baseline and a candidate model.
//!
//! Each sample draws (TPR, FPR) from the calibrated posteriors, converts the
//! metric verdicts into per-example correctness probabilities by Bayes'
//! theorem, and draws the mean difference from a Gaussian with the sample
//! mean and variance-of-the-mean of those per-example differences. Sample
//! `i` always comes from `substream(seed, i)`, so results are identical
//! whatever the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::RatePosterior;
use crate::dataset::{PairedVerdicts, RunRecord, TestExample};
use crate::error::{Error, Result};
use crate::stochastics::{beta_sample, normal_sample, substream, RandomStream};

/// Posterior summary of the correctness difference, in percentage points
/// with candidate − baseline sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub baseline: String,
    pub candidate: String,
    pub metric: String,
    pub test_set: String,
    pub delta_mean_pp: f64,
    pub ci_low_pp: f64,
    pub ci_high_pp: f64,
    pub p_improvement: f64,
    pub n_examples: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub level: f64,
}

/// One Monte Carlo draw of the difference, reproducible from
/// `(seed, sample_index)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaSample {
    pub value: f64,
    pub sample_index: u64,
}

/// IDK share with explicit counts so denominators are never guessed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdkRate {
    pub model: String,
    pub test_set: String,
    pub pct: f64,
    pub n_idk: usize,
    pub n_runs: usize,
}

/// P(correct | verdict, rates) under a uniform prior on correctness.
pub fn posterior_correct_prob(pass: bool, tpr: f64, fpr: f64) -> f64 {
    if pass {
        tpr / (tpr + fpr)
    } else {
        (1.0 - tpr) / (2.0 - tpr - fpr)
    }
}

/// Verdict-pair tallies; the per-example difference only depends on which
/// of the four (baseline, candidate) verdict cells an example falls in.
struct PairCounts {
    n: usize,
    base_fail_cand_pass: usize,
    base_pass_cand_fail: usize,
}

impl PairCounts {
    fn of(paired: &PairedVerdicts) -> Self {
        let mut fp = 0;
        let mut pf = 0;
        for (&b, &c) in paired.baseline_verdicts.iter().zip(&paired.candidate_verdicts) {
            match (b, c) {
                (false, true) => fp += 1,
                (true, false) => pf += 1,
                _ => {}
            }
        }
        Self {
            n: paired.len(),
            base_fail_cand_pass: fp,
            base_pass_cand_fail: pf,
        }
    }

    /// Mean and variance-of-the-mean of the per-example differences
    /// `p_candidate - p_baseline` at the given rates.
    fn moments(&self, tpr: f64, fpr: f64) -> (f64, f64) {
        let n = self.n as f64;
        let gap = posterior_correct_prob(true, tpr, fpr) - posterior_correct_prob(false, tpr, fpr);
        let sum = (self.base_fail_cand_pass as f64 - self.base_pass_cand_fail as f64) * gap;
        let sum_sq = (self.base_fail_cand_pass + self.base_pass_cand_fail) as f64 * gap * gap;
        let mean = sum / n;
        let sample_var = (sum_sq - n * mean * mean).max(0.0) / (n - 1.0);
        (mean, sample_var / n)
    }
}

/// One Monte Carlo sample of the difference in correctness rates
/// (candidate − baseline, probability units).
pub fn delta_sample(
    paired: &PairedVerdicts,
    tpr_post: &RatePosterior,
    fpr_post: &RatePosterior,
    stream: &mut RandomStream,
) -> Result<DeltaSample> {
    if paired.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "paired comparison needs at least 2 examples, got {}",
            paired.len()
        )));
    }
    let counts = PairCounts::of(paired);
    let value = draw(&counts, tpr_post, fpr_post, stream)?;
    Ok(DeltaSample {
        value,
        sample_index: stream.stream_index,
    })
}

fn draw(
    counts: &PairCounts,
    tpr_post: &RatePosterior,
    fpr_post: &RatePosterior,
    stream: &mut RandomStream,
) -> Result<f64> {
    let tpr = beta_sample(tpr_post.params, stream)?;
    let fpr = beta_sample(fpr_post.params, stream)?;
    let (mean, var_mean) = counts.moments(tpr, fpr);
    normal_sample(mean, var_mean.sqrt(), stream)
}

/// Equal-tailed empirical quantile with linear interpolation over a sorted
/// slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * q;
    let k = h.floor() as usize;
    let f = h - k as f64;
    if k + 1 < n {
        (1.0 - f) * sorted[k] + f * sorted[k + 1]
    } else {
        sorted[n - 1]
    }
}

/// Full Monte Carlo comparison. Deterministic for a fixed seed regardless of
/// thread count; sample `i` uses `substream(seed, i)`.
///
/// Internally the pair is oriented by lexicographic model name and the sign
/// flipped back at the end, so swapping baseline and candidate mirrors the
/// result exactly, not just statistically. Samples equal to zero count half
/// toward the probability of improvement.
pub fn compare_models(
    paired: &PairedVerdicts,
    tpr_post: &RatePosterior,
    fpr_post: &RatePosterior,
    baseline: &str,
    candidate: &str,
    n_samples: usize,
    seed: u64,
    level: f64,
) -> Result<ComparisonResult> {
    if n_samples < 1000 {
        return Err(Error::Domain(format!(
            "n_samples must be at least 1000, got {n_samples}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("level must be in (0, 1), got {level}")));
    }
    for post in [tpr_post, fpr_post] {
        if post.metric != paired.metric || post.test_set != paired.test_set {
            return Err(Error::Configuration(format!(
                "calibration is for {}/{} but verdicts are for {}/{}",
                post.metric, post.test_set, paired.metric, paired.test_set
            )));
        }
    }
    if paired.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "paired comparison needs at least 2 examples, got {}",
            paired.len()
        )));
    }

    let flipped = baseline > candidate;
    let counts = {
        let c = PairCounts::of(paired);
        if flipped {
            PairCounts {
                n: c.n,
                base_fail_cand_pass: c.base_pass_cand_fail,
                base_pass_cand_fail: c.base_fail_cand_pass,
            }
        } else {
            c
        }
    };

    let mut samples: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut stream = substream(seed, i);
            draw(&counts, tpr_post, fpr_post, &mut stream)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mean = samples.iter().sum::<f64>() / n_samples as f64;
    let above = samples.iter().filter(|&&x| x > 0.0).count() as f64;
    let ties = samples.iter().filter(|&&x| x == 0.0).count() as f64;
    let p_improvement = (above + 0.5 * ties) / n_samples as f64;
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tail = (1.0 - level) / 2.0;
    let ci_low = quantile_sorted(&samples, tail);
    let ci_high = quantile_sorted(&samples, 1.0 - tail);

    let (delta_mean_pp, ci_low_pp, ci_high_pp, p_improvement) = if flipped {
        (-100.0 * mean, -100.0 * ci_high, -100.0 * ci_low, 1.0 - p_improvement)
    } else {
        (100.0 * mean, 100.0 * ci_low, 100.0 * ci_high, p_improvement)
    };

    Ok(ComparisonResult {
        baseline: baseline.to_string(),
        candidate: candidate.to_string(),
        metric: paired.metric.clone(),
        test_set: paired.test_set.clone(),
        delta_mean_pp,
        ci_low_pp,
        ci_high_pp,
        p_improvement,
        n_examples: paired.len(),
        n_samples,
        seed,
        level,
    })
}

/// IDK percentage for one model on one test set, with raw counts.
pub fn idk_rate(
    runs: &[RunRecord],
    examples: &[TestExample],
    model: &str,
    test_set: &str,
) -> Result<IdkRate> {
    let sets = crate::dataset::test_set_index(examples);
    let in_scope: Vec<&RunRecord> = runs
        .iter()
        .filter(|r| {
            r.model == model && sets.get(&r.example_id).map(String::as_str) == Some(test_set)
        })
        .collect();
    if in_scope.is_empty() {
        return Err(Error::EmptyData(format!(
            "no runs for model {model} on test set {test_set}"
        )));
    }
    let n_idk = in_scope.iter().filter(|r| r.is_idk).count();
    Ok(IdkRate {
        model: model.to_string(),
        test_set: test_set.to_string(),
        pct: 100.0 * n_idk as f64 / in_scope.len() as f64,
        n_idk,
        n_runs: in_scope.len(),
    })
}
