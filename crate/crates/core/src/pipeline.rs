//! The six-step gating and selection sequence over candidate models.
//!
//! Steps: 1 vetting filter, 2 schema-conformance gate, 3 metric computation
//! (done by the comparison and quality modules), 4 correctness/IDK/latency
//! gate against the baseline, 5 style gate, 6 coverage-minimal selection.
//! Every elimination carries (quantity, value, threshold) evidence so the
//! decision can be recomputed from the report alone.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::comparison::{ComparisonResult, IdkRate};
use crate::error::{Error, Result};
use crate::quality_checks::StyleSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PriceTier {
    Low,
    Middle,
    High,
}

impl PriceTier {
    pub fn score(self) -> u32 {
        match self {
            PriceTier::Low => 1,
            PriceTier::Middle => 2,
            PriceTier::High => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    pub regions: BTreeSet<String>,
    pub modalities: BTreeSet<String>,
    pub price_tier: PriceTier,
    pub vetted: bool,
    #[serde(default)]
    pub reasoning_variant: Option<bool>,
}

/// Gate thresholds. The defaults reproduce the case study's eliminations and
/// are configuration, not canon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatePolicy {
    /// Eliminate when the CI lower bound falls below this (pp).
    pub ci_lower_min: f64,
    /// IDK elimination needs BOTH the ratio and the absolute increase exceeded.
    pub idk_ratio_max: f64,
    pub idk_abs_increase_max: f64,
    pub latency_ratio_max: f64,
    /// Conformance rate required to survive step 2 (inclusive).
    pub conformance_min_rate: f64,
    /// Bad-style percentage above which step 5 eliminates.
    pub style_bad_max: f64,
}

impl Default for GatePolicy {
    fn default() -> Self {
        GatePolicy {
            ci_lower_min: 0.0,
            idk_ratio_max: 2.0,
            idk_abs_increase_max: 10.0,
            latency_ratio_max: 1.4,
            conformance_min_rate: 95.0,
            style_bad_max: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateOutcome {
    Pass,
    Eliminated,
    Flagged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub quantity: String,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub model: String,
    pub step: u8,
    pub outcome: GateOutcome,
    pub evidence: Vec<Evidence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRequirements {
    pub required_regions: BTreeSet<String>,
    pub required_modalities: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen: BTreeSet<String>,
    pub assignment: BTreeMap<String, String>,
    pub total_price_score: u32,
    pub rationale: String,
}

fn report(model: &str, step: u8, outcome: GateOutcome, evidence: Vec<Evidence>) -> GateReport {
    GateReport {
        model: model.to_string(),
        step,
        outcome,
        evidence,
    }
}

/// Step 1: drop profiles that failed internal vetting.
pub fn filter_vetted(
    profiles: &[ModelProfile],
    _policy: &GatePolicy,
) -> Result<(Vec<ModelProfile>, Vec<GateReport>)> {
    if profiles.is_empty() {
        return Err(Error::EmptyCandidatePool { step: 1 });
    }
    let mut reports = Vec::new();
    let mut survivors = Vec::new();
    for p in profiles {
        let outcome = if p.vetted {
            survivors.push(p.clone());
            GateOutcome::Pass
        } else {
            GateOutcome::Eliminated
        };
        reports.push(report(
            &p.name,
            1,
            outcome,
            vec![Evidence {
                quantity: "vetted".into(),
                value: p.vetted as u8 as f64,
                threshold: 1.0,
            }],
        ));
    }
    if survivors.is_empty() {
        return Err(Error::EmptyCandidatePool { step: 1 });
    }
    Ok((survivors, reports))
}

/// Step 2: eliminate models whose schema conformance rate is below the
/// threshold. The threshold is inclusive: exactly meeting it passes.
pub fn conformance_gate(
    candidates: &[String],
    rates: &BTreeMap<String, f64>,
    policy: &GatePolicy,
) -> Result<(Vec<String>, Vec<GateReport>)> {
    let mut reports = Vec::new();
    let mut survivors = Vec::new();
    for model in candidates {
        let rate = *rates.get(model).ok_or_else(|| {
            Error::Configuration(format!("no conformance rate for live candidate {model}"))
        })?;
        let outcome = if rate >= policy.conformance_min_rate {
            survivors.push(model.clone());
            GateOutcome::Pass
        } else {
            GateOutcome::Eliminated
        };
        reports.push(report(
            model,
            2,
            outcome,
            vec![Evidence {
                quantity: "conformance_rate_pct".into(),
                value: rate,
                threshold: policy.conformance_min_rate,
            }],
        ));
    }
    Ok((survivors, reports))
}

/// Step 4: eliminate when on any test set (a) the correctness CI lower bound
/// is below `ci_lower_min`, or (b) the IDK rate exceeds the baseline's by
/// both the ratio and the absolute thresholds, or (c) the median latency
/// ratio against the baseline exceeds `latency_ratio_max`. Clauses fire in
/// that order and the evidence names the one that did.
pub fn correctness_idk_latency_gate(
    candidates: &[String],
    comparisons: &[ComparisonResult],
    idk_rates: &[IdkRate],
    styles: &[StyleSummary],
    baseline: &str,
    policy: &GatePolicy,
) -> Result<(Vec<String>, Vec<GateReport>)> {
    let test_sets: BTreeSet<&str> = comparisons.iter().map(|c| c.test_set.as_str()).collect();
    if test_sets.is_empty() {
        return Err(Error::Configuration("no comparisons provided".into()));
    }
    let comparison = |model: &str, set: &str| {
        comparisons
            .iter()
            .find(|c| c.candidate == model && c.baseline == baseline && c.test_set == set)
    };
    let idk = |model: &str, set: &str| {
        idk_rates
            .iter()
            .find(|r| r.model == model && r.test_set == set)
            .map(|r| r.pct)
    };
    let latency = |model: &str, set: &str| {
        styles
            .iter()
            .find(|s| s.model == model && s.test_set == set)
            .map(|s| s.median_response_time)
    };

    let mut reports = Vec::new();
    let mut survivors = Vec::new();
    'models: for model in candidates {
        // clause (a): correctness CI
        for set in &test_sets {
            let c = comparison(model, set).ok_or_else(|| {
                Error::Configuration(format!(
                    "no comparison vs {baseline} for live candidate {model} on {set}"
                ))
            })?;
            if c.ci_low_pp < policy.ci_lower_min {
                reports.push(report(
                    model,
                    4,
                    GateOutcome::Eliminated,
                    vec![Evidence {
                        quantity: format!("correctness_ci_low_pp[{set}]"),
                        value: c.ci_low_pp,
                        threshold: policy.ci_lower_min,
                    }],
                ));
                continue 'models;
            }
        }
        // clause (b): IDK rate vs baseline
        for set in &test_sets {
            let cand_idk = idk(model, set).ok_or_else(|| {
                Error::Configuration(format!("no IDK rate for live candidate {model} on {set}"))
            })?;
            let base_idk = idk(baseline, set).ok_or_else(|| {
                Error::Configuration(format!("no IDK rate for baseline {baseline} on {set}"))
            })?;
            let ratio = if base_idk > 0.0 {
                cand_idk / base_idk
            } else if cand_idk > 0.0 {
                f64::INFINITY
            } else {
                1.0
            };
            let increase = cand_idk - base_idk;
            if ratio > policy.idk_ratio_max && increase > policy.idk_abs_increase_max {
                reports.push(report(
                    model,
                    4,
                    GateOutcome::Eliminated,
                    vec![
                        Evidence {
                            quantity: format!("idk_ratio[{set}]"),
                            value: ratio,
                            threshold: policy.idk_ratio_max,
                        },
                        Evidence {
                            quantity: format!("idk_abs_increase_pp[{set}]"),
                            value: increase,
                            threshold: policy.idk_abs_increase_max,
                        },
                    ],
                ));
                continue 'models;
            }
        }
        // clause (c): median latency vs baseline
        for set in &test_sets {
            let cand_t = latency(model, set).ok_or_else(|| {
                Error::Configuration(format!(
                    "no latency median for live candidate {model} on {set}"
                ))
            })?;
            let base_t = latency(baseline, set).ok_or_else(|| {
                Error::Configuration(format!("no latency median for baseline {baseline} on {set}"))
            })?;
            let ratio = cand_t / base_t;
            if ratio > policy.latency_ratio_max {
                reports.push(report(
                    model,
                    4,
                    GateOutcome::Eliminated,
                    vec![Evidence {
                        quantity: format!("latency_ratio[{set}]"),
                        value: ratio,
                        threshold: policy.latency_ratio_max,
                    }],
                ));
                continue 'models;
            }
        }
        survivors.push(model.clone());
        reports.push(report(model, 4, GateOutcome::Pass, Vec::new()));
    }
    Ok((survivors, reports))
}

/// Step 5: eliminate models whose bad-style share exceeds the threshold on
/// any test set; models with nonzero but tolerable bad style are flagged for
/// a prompt-fix iteration and stay live.
pub fn style_gate(
    candidates: &[String],
    styles: &[StyleSummary],
    policy: &GatePolicy,
) -> Result<(Vec<String>, Vec<GateReport>)> {
    let mut reports = Vec::new();
    let mut survivors = Vec::new();
    for model in candidates {
        let rows: Vec<&StyleSummary> = styles.iter().filter(|s| &s.model == model).collect();
        let worst = rows
            .iter()
            .map(|s| (s.pct_bad_style, s.test_set.as_str()))
            .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let (outcome, evidence) = match worst {
            Some((pct, set)) if pct > policy.style_bad_max => (
                GateOutcome::Eliminated,
                vec![Evidence {
                    quantity: format!("pct_bad_style[{set}]"),
                    value: pct,
                    threshold: policy.style_bad_max,
                }],
            ),
            Some((pct, set)) if pct > 0.0 => (
                GateOutcome::Flagged,
                vec![Evidence {
                    quantity: format!("pct_bad_style[{set}]"),
                    value: pct,
                    threshold: policy.style_bad_max,
                }],
            ),
            _ => (GateOutcome::Pass, Vec::new()),
        };
        if outcome != GateOutcome::Eliminated {
            survivors.push(model.clone());
        }
        reports.push(report(model, 5, outcome, evidence));
    }
    Ok((survivors, reports))
}

/// Step 6: exhaustive minimum-cardinality cover of the required regions and
/// modalities. Ties break by total price score, then by best summed
/// correctness score, then lexicographically.
///
/// Coverage means every required region is served by some chosen model and
/// every required modality is supported by some chosen model.
pub fn select_models(
    profiles: &[ModelProfile],
    requirements: &SelectionRequirements,
    correctness_scores: &BTreeMap<String, f64>,
) -> Result<SelectionResult> {
    if requirements.required_regions.is_empty() && requirements.required_modalities.is_empty() {
        return Err(Error::Configuration("selection requirements are empty".into()));
    }
    let n = profiles.len();
    if n == 0 {
        return Err(Error::EmptyCandidatePool { step: 6 });
    }

    let feasible = |mask: u32| -> bool {
        let covered_region = |r: &String| {
            (0..n).any(|i| mask & (1 << i) != 0 && profiles[i].regions.contains(r))
        };
        let covered_modality = |m: &String| {
            (0..n).any(|i| mask & (1 << i) != 0 && profiles[i].modalities.contains(m))
        };
        requirements.required_regions.iter().all(covered_region)
            && requirements.required_modalities.iter().all(covered_modality)
    };

    let mut best: Option<(usize, u32, f64, Vec<String>, u32)> = None;
    for mask in 1u32..(1 << n) {
        if !feasible(mask) {
            continue;
        }
        let card = mask.count_ones() as usize;
        let price: u32 = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| profiles[i].price_tier.score())
            .sum();
        let score: f64 = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| correctness_scores.get(&profiles[i].name).copied().unwrap_or(0.0))
            .sum();
        let names: Vec<String> = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| profiles[i].name.clone())
            .collect();
        let better = match &best {
            None => true,
            Some((bc, bp, bs, bn, _)) => {
                (card, price, -score, &names) < (*bc, *bp, -bs, bn)
            }
        };
        if better {
            best = Some((card, price, score, names, mask));
        }
    }

    let Some((_, price, score, chosen_names, mask)) = best else {
        let mut uncovered: Vec<String> = requirements
            .required_regions
            .iter()
            .filter(|r| !profiles.iter().any(|p| p.regions.contains(*r)))
            .map(|r| format!("region:{r}"))
            .collect();
        uncovered.extend(
            requirements
                .required_modalities
                .iter()
                .filter(|m| !profiles.iter().any(|p| p.modalities.contains(*m)))
                .map(|m| format!("modality:{m}")),
        );
        return Err(Error::Infeasible { uncovered });
    };

    let chosen: BTreeSet<String> = chosen_names.iter().cloned().collect();
    let chosen_profiles: Vec<&ModelProfile> = (0..n)
        .filter(|i| mask & (1 << i) != 0)
        .map(|i| &profiles[i])
        .collect();

    // map each satisfiable required (region, modality) combination to the
    // cheapest chosen model supporting both
    let mut assignment = BTreeMap::new();
    for r in &requirements.required_regions {
        for m in &requirements.required_modalities {
            let pick = chosen_profiles
                .iter()
                .filter(|p| p.regions.contains(r) && p.modalities.contains(m))
                .min_by_key(|p| (p.price_tier.score(), p.name.clone()));
            if let Some(p) = pick {
                assignment.insert(format!("{r}/{m}"), p.name.clone());
            }
        }
    }

    let rationale = format!(
        "minimum cover of {} region(s) and {} modality requirement(s) with {} model(s); \
         total price score {price}, summed correctness score {score:.3}",
        requirements.required_regions.len(),
        requirements.required_modalities.len(),
        chosen.len(),
    );
    Ok(SelectionResult {
        chosen,
        assignment,
        total_price_score: price,
        rationale,
    })
}
