//! School effects: per-school mean residuals, confidence intervals,
//! effect-size categories, variance decomposition and empirical-Bayes
//! shrinkage.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::design::ModelSpec;
use crate::error::{estimation, validation, Result, VamError};
use crate::estimation::FittedModel;

/// Two-sided 95% normal critical value.
pub const Z_95: f64 = 1.96;

/// Lower edges of the Small, Moderate and Large bands (SD units).
pub const SMALL_EFFECT: f64 = 0.1;
pub const MODERATE_EFFECT: f64 = 0.2;
pub const LARGE_EFFECT: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectCategory {
    NoneOrVerySmall,
    Small,
    Moderate,
    Large,
}

impl EffectCategory {
    pub const ALL: [EffectCategory; 4] = [
        EffectCategory::NoneOrVerySmall,
        EffectCategory::Small,
        EffectCategory::Moderate,
        EffectCategory::Large,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EffectCategory::NoneOrVerySmall => "none_or_very_small",
            EffectCategory::Small => "small",
            EffectCategory::Moderate => "moderate",
            EffectCategory::Large => "large",
        }
    }
}

impl fmt::Display for EffectCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EffectCategory {
    type Err = VamError;

    fn from_str(s: &str) -> Result<Self> {
        EffectCategory::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| validation(format!("unknown effect category `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchoolEffect {
    pub school_id: String,
    pub n: usize,
    pub effect: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub category: EffectCategory,
    pub significant: bool,
    pub shrunk_effect: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectTable {
    pub spec: ModelSpec,
    /// One row per school, in school_id order.
    pub effects: Vec<SchoolEffect>,
    /// Student-weighted variance of school effects.
    pub between_school_variance: f64,
    /// Variance of school effects with each school counted once.
    pub between_school_variance_unweighted: f64,
    pub pct_due_to_schools: f64,
    pub pct_significant: f64,
    /// Percent of schools per category, in [`EffectCategory::ALL`] order.
    pub category_shares: [f64; 4],
}

impl EffectTable {
    /// Assemble a table from finished per-school rows (e.g. read back from
    /// `effects.csv`); variance fields are not recoverable and set to NaN.
    pub fn from_effects(spec: ModelSpec, effects: Vec<SchoolEffect>) -> EffectTable {
        let mut t = EffectTable {
            spec,
            effects,
            between_school_variance: f64::NAN,
            between_school_variance_unweighted: f64::NAN,
            pct_due_to_schools: f64::NAN,
            pct_significant: f64::NAN,
            category_shares: [0.0; 4],
        };
        t.refresh_summaries();
        t
    }

    pub fn effect_values(&self) -> Vec<f64> {
        self.effects.iter().map(|e| e.effect).collect()
    }

    pub fn school_ids(&self) -> Vec<&str> {
        self.effects.iter().map(|e| e.school_id.as_str()).collect()
    }

    fn refresh_summaries(&mut self) {
        self.category_shares = category_shares(&self.effects);
        let j = self.effects.len().max(1) as f64;
        self.pct_significant =
            100.0 * self.effects.iter().filter(|e| e.significant).count() as f64 / j;
    }
}

/// Student-weighted summary of a fit's residuals across schools.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceDecomposition {
    pub between_school_variance: f64,
    pub between_school_variance_unweighted: f64,
    /// Pooled within-school variance, same divisor as the between part.
    pub within_school_variance: f64,
    pub variance_of_residuals: f64,
    pub pct_due_to_schools: f64,
    pub pct_significant: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceComponents {
    pub sigma2_u: f64,
    pub sigma2_e: f64,
}

/// Mean residual per school. Rows come back in school_id order.
pub fn compute_school_effects<S: AsRef<str>>(
    residuals: &[f64],
    school_ids: &[S],
) -> Result<Vec<SchoolEffect>> {
    if residuals.len() != school_ids.len() {
        return Err(validation("residuals and school ids differ in length"));
    }
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (r, id) in residuals.iter().zip(school_ids) {
        let e = acc.entry(id.as_ref()).or_insert((0.0, 0));
        e.0 += r;
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(id, (sum, n))| {
            let effect = sum / n as f64;
            SchoolEffect {
                school_id: id.to_string(),
                n,
                effect,
                ci_low: effect,
                ci_high: effect,
                category: EffectCategory::NoneOrVerySmall,
                significant: false,
                shrunk_effect: None,
            }
        })
        .collect())
}

/// effect +/- 1.96 * residual_sd / sqrt(n), then significance and category.
pub fn confidence_intervals(effects: &mut [SchoolEffect], residual_sd: f64) -> Result<()> {
    if !(residual_sd > 0.0) {
        return Err(estimation("residual SD must be positive for confidence intervals"));
    }
    for e in effects.iter_mut() {
        if e.n == 0 {
            return Err(validation(format!("school `{}` has no students", e.school_id)));
        }
        let half = Z_95 * residual_sd / (e.n as f64).sqrt();
        e.ci_low = e.effect - half;
        e.ci_high = e.effect + half;
        e.significant = !(e.ci_low <= 0.0 && 0.0 <= e.ci_high);
        e.category = classify_effect(e.effect, (e.ci_low, e.ci_high));
    }
    Ok(())
}

/// Effect-size band by |effect|; intervals covering zero are always
/// NoneOrVerySmall. Bands are closed on the left.
pub fn classify_effect(effect: f64, ci: (f64, f64)) -> EffectCategory {
    if ci.0 <= 0.0 && 0.0 <= ci.1 {
        return EffectCategory::NoneOrVerySmall;
    }
    let a = effect.abs();
    if a < SMALL_EFFECT {
        EffectCategory::NoneOrVerySmall
    } else if a < MODERATE_EFFECT {
        EffectCategory::Small
    } else if a < LARGE_EFFECT {
        EffectCategory::Moderate
    } else {
        EffectCategory::Large
    }
}

pub fn category_shares(effects: &[SchoolEffect]) -> [f64; 4] {
    let mut counts = [0usize; 4];
    for e in effects {
        counts[e.category as usize] += 1;
    }
    let j = effects.len().max(1) as f64;
    counts.map(|c| 100.0 * c as f64 / j)
}

/// Between/within split of residual variance. Both parts use the n - 1
/// divisor so that between + within equals the residual variance.
pub fn variance_decomposition<S: AsRef<str>>(
    effects: &[SchoolEffect],
    residuals: &[f64],
    school_ids: &[S],
) -> Result<VarianceDecomposition> {
    let n = residuals.len();
    if n < 2 || school_ids.len() != n {
        return Err(validation("variance decomposition needs matching residuals and ids"));
    }
    let by_id: BTreeMap<&str, &SchoolEffect> =
        effects.iter().map(|e| (e.school_id.as_str(), e)).collect();
    let denom = n as f64 - 1.0;
    let mean_r = residuals.iter().sum::<f64>() / n as f64;

    let mut between = 0.0;
    let mut within = 0.0;
    for (r, id) in residuals.iter().zip(school_ids) {
        let e = by_id
            .get(id.as_ref())
            .ok_or_else(|| validation(format!("no effect for school `{}`", id.as_ref())))?;
        between += (e.effect - mean_r) * (e.effect - mean_r);
        within += (r - e.effect) * (r - e.effect);
    }
    let between = between / denom;
    let within = within / denom;
    let variance_of_residuals =
        residuals.iter().map(|r| (r - mean_r) * (r - mean_r)).sum::<f64>() / denom;

    let j = effects.len() as f64;
    let mean_e = effects.iter().map(|e| e.effect).sum::<f64>() / j;
    let unweighted = if effects.len() > 1 {
        effects.iter().map(|e| (e.effect - mean_e).powi(2)).sum::<f64>() / (j - 1.0)
    } else {
        0.0
    };
    let pct_significant =
        100.0 * effects.iter().filter(|e| e.significant).count() as f64 / j.max(1.0);
    Ok(VarianceDecomposition {
        between_school_variance: between,
        between_school_variance_unweighted: unweighted,
        within_school_variance: within,
        variance_of_residuals,
        pct_due_to_schools: if variance_of_residuals > 0.0 {
            100.0 * between / variance_of_residuals
        } else {
            0.0
        },
        pct_significant,
    })
}

/// One-way ANOVA moment estimates of between- and within-school variance.
pub fn estimate_variance_components<S: AsRef<str>>(
    residuals: &[f64],
    school_ids: &[S],
) -> Result<VarianceComponents> {
    let effects = compute_school_effects(residuals, school_ids)?;
    let j = effects.len();
    let n = residuals.len();
    if j < 2 {
        return Err(validation("variance components need at least 2 schools"));
    }
    if n <= j {
        return Err(estimation("variance components need more students than schools"));
    }
    let by_id: BTreeMap<&str, f64> =
        effects.iter().map(|e| (e.school_id.as_str(), e.effect)).collect();
    let grand = residuals.iter().sum::<f64>() / n as f64;
    let ssw: f64 = residuals
        .iter()
        .zip(school_ids)
        .map(|(r, id)| (r - by_id[id.as_ref()]).powi(2))
        .sum();
    let ssb: f64 = effects
        .iter()
        .map(|e| e.n as f64 * (e.effect - grand).powi(2))
        .sum();
    let msw = ssw / (n - j) as f64;
    let msb = ssb / (j - 1) as f64;
    if !(msw > 0.0) {
        return Err(estimation(
            "within-school residual variance is zero; variance components undefined",
        ));
    }
    let sum_sq: f64 = effects.iter().map(|e| (e.n * e.n) as f64).sum();
    let n0 = (n as f64 - sum_sq / n as f64) / (j - 1) as f64;
    let sigma2_u = ((msb - msw) / n0).max(0.0);
    Ok(VarianceComponents {
        sigma2_u,
        sigma2_e: msw,
    })
}

/// Reliability weight sigma2_u / (sigma2_u + sigma2_e / n).
pub fn shrinkage_factor(sigma2_u: f64, sigma2_e: f64, n: usize) -> f64 {
    if sigma2_u == 0.0 {
        return 0.0;
    }
    sigma2_u / (sigma2_u + sigma2_e / n as f64)
}

pub fn shrink_effects(effects: &mut [SchoolEffect], components: VarianceComponents) -> Result<()> {
    let VarianceComponents { sigma2_u, sigma2_e } = components;
    if !(sigma2_u >= 0.0) || !(sigma2_e > 0.0) {
        return Err(validation("shrinkage needs sigma2_u >= 0 and sigma2_e > 0"));
    }
    for e in effects.iter_mut() {
        e.shrunk_effect = Some(shrinkage_factor(sigma2_u, sigma2_e, e.n) * e.effect);
    }
    Ok(())
}

/// Everything derived from one fit: the effect table and its variance split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchoolEffectsResult {
    pub table: EffectTable,
    pub decomposition: VarianceDecomposition,
    pub components: Option<VarianceComponents>,
}

/// Full per-school pipeline for a fitted model on its cohort.
pub fn school_effects_for_fit(
    fit: &FittedModel,
    cohort: &Cohort,
    shrink: bool,
) -> Result<SchoolEffectsResult> {
    let ids = cohort.student_school_ids();
    let mut effects = compute_school_effects(&fit.residuals, &ids)?;
    if effects.len() != cohort.n_schools() {
        return Err(validation("some cohort schools have no students"));
    }
    confidence_intervals(&mut effects, fit.residual_sd)?;
    let components = if shrink {
        match estimate_variance_components(&fit.residuals, &ids) {
            Ok(c) => {
                shrink_effects(&mut effects, c)?;
                Some(c)
            }
            Err(e) => {
                log::warn!("{}: no shrinkage ({e})", fit.spec);
                None
            }
        }
    } else {
        None
    };
    let decomposition = variance_decomposition(&effects, &fit.residuals, &ids)?;
    let table = EffectTable {
        spec: fit.spec,
        category_shares: category_shares(&effects),
        effects,
        between_school_variance: decomposition.between_school_variance,
        between_school_variance_unweighted: decomposition.between_school_variance_unweighted,
        pct_due_to_schools: decomposition.pct_due_to_schools,
        pct_significant: decomposition.pct_significant,
    };
    Ok(SchoolEffectsResult {
        table,
        decomposition,
        components,
    })
}
