//! Synthetic cohorts with known ground truth, plus test oracles.
//!
//! Schools carry a latent intake level `m`. A student's latent prior
//! achievement and socioeconomic advantage both load on `m`, so
//! `sorting_strength` and `ses_sorting` are their intraclass correlations.
//! True school effects mix a standardized school-mean prior term (weight
//! `selection_strength`) with independent noise. The outcome is a sum of
//! per-level effects over the same bands and categories the model designs
//! use, plus age, the school effect and student noise, so the CVA-A design
//! with prior included is correctly specified when the school-level
//! coefficients are zero.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cohort::{rank_groups, Cohort, SchoolInput, StudentInput, Variable, MISSING_LEVEL};
use crate::config::IngestConfig;
use crate::design::DesignMatrix;
use crate::effects::EffectTable;
use crate::error::{estimation, validation, Result};
use crate::estimation::FittedModel;

/// Outcome coefficients, in outcome SD units before standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Coefficients {
    /// Prior band effect is `linear * q + quadratic * q^2`, `q` the band's
    /// mean latent prior achievement.
    pub prior_linear: f64,
    pub prior_quadratic: f64,
    /// Early band effect is `early_linear * q` on the early latent scale.
    pub early_linear: f64,
    pub age_per_month: f64,
    pub female: f64,
    pub eal: f64,
    pub sen: f64,
    pub fsm: f64,
    /// Per decile above the most deprived.
    pub deprivation_per_decile: f64,
    /// Ethnicity level effects relative to the majority group.
    pub ethnicity: BTreeMap<String, f64>,
    /// Per prior composition ventile above the lowest.
    pub prior_ventile_per_step: f64,
    pub grammar: f64,
    pub school_deprivation_per_decile: f64,
}

impl Default for Coefficients {
    fn default() -> Self {
        let ethnicity = [
            ("asian", 0.20),
            ("black", 0.05),
            ("chinese", 0.45),
            ("mixed", 0.03),
            ("other", 0.12),
            ("white", 0.0),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Coefficients {
            prior_linear: 0.68,
            prior_quadratic: 0.06,
            early_linear: 0.05,
            age_per_month: -0.006,
            female: 0.14,
            eal: 0.12,
            sen: -0.45,
            fsm: -0.30,
            deprivation_per_decile: 0.05,
            ethnicity,
            prior_ventile_per_step: 0.0,
            grammar: 0.0,
            school_deprivation_per_decile: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_schools: usize,
    pub min_students: usize,
    pub max_students: usize,
    /// Variance of true school effects (outcome SD^2 units).
    pub sigma2_u_true: f64,
    /// Student-level noise variance.
    pub sigma2_e: f64,
    /// Intraclass correlation of latent prior achievement.
    pub sorting_strength: f64,
    /// Intraclass correlation of latent socioeconomic advantage.
    pub ses_sorting: f64,
    /// Correlation of true school effects with standardized school mean
    /// latent prior achievement.
    pub selection_strength: f64,
    /// Correlation between latent early and latent prior achievement.
    pub early_correlation: f64,
    pub early_missing_rate: f64,
    pub coefficients: Coefficients,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_schools: 500,
            min_students: 100,
            max_students: 200,
            sigma2_u_true: 0.035,
            sigma2_e: 0.40,
            sorting_strength: 0.19,
            ses_sorting: 0.50,
            selection_strength: 0.3,
            early_correlation: 0.8,
            early_missing_rate: 0.0424,
            coefficients: Coefficients::default(),
            seed: 42,
        }
    }
}

impl SimConfig {
    /// Named starting points: `default` (500 schools of 100-200) and
    /// `full-scale` (3200 schools of 6-308, about 500k students).
    pub fn preset(name: &str) -> Result<SimConfig> {
        match name {
            "default" => Ok(SimConfig::default()),
            "full-scale" => Ok(SimConfig {
                n_schools: 3200,
                min_students: 6,
                max_students: 308,
                ..SimConfig::default()
            }),
            other => Err(validation(format!(
                "unknown simulation preset `{other}` (expected default or full-scale)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(validation(format!("{name} must lie in [0, 1), got {v}")))
            }
        };
        unit("sorting_strength", self.sorting_strength)?;
        unit("ses_sorting", self.ses_sorting)?;
        unit("selection_strength", self.selection_strength)?;
        unit("early_missing_rate", self.early_missing_rate)?;
        if !(self.early_correlation.abs() < 1.0) {
            return Err(validation("early_correlation must lie in (-1, 1)"));
        }
        if !(self.sigma2_u_true >= 0.0 && self.sigma2_e >= 0.0) {
            return Err(validation("variances must be non-negative"));
        }
        if self.n_schools < 20 {
            return Err(validation(format!(
                "n_schools must be at least 20 for composition ventiles, got {}",
                self.n_schools
            )));
        }
        if self.min_students < 1 || self.min_students > self.max_students {
            return Err(validation("need 1 <= min_students <= max_students"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrueSchoolEffect {
    pub school_id: String,
    /// In standardized outcome units.
    pub true_effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrueCoefficient {
    pub term: String,
    pub level: String,
    /// Outcome SD units before standardization.
    pub effect_raw: f64,
    /// Standardized outcome units.
    pub effect: f64,
}

/// What the generator put into the outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    /// One row per school in cohort (school_id) order.
    pub school_effects: Vec<TrueSchoolEffect>,
    /// Level effects per categorical term, numeric slopes with an empty level.
    pub coefficients: Vec<TrueCoefficient>,
    /// Constant of the raw outcome index.
    pub intercept_raw: f64,
    pub outcome_mean: f64,
    pub outcome_sd: f64,
}

impl GroundTruth {
    fn effect_raw(&self, term: &str, level: &str) -> f64 {
        self.coefficients
            .iter()
            .find(|c| c.term == term && c.level == level)
            .map_or(0.0, |c| c.effect_raw)
    }

    /// True value of each design column in standardized units: contrasts
    /// against the design's reference level, slopes for numeric terms and
    /// the implied intercept. Meaningful when the design covers every term
    /// with a nonzero effect.
    pub fn design_truth(&self, design: &DesignMatrix) -> Vec<f64> {
        let sd = self.outcome_sd;
        let mut intercept = self.intercept_raw - self.outcome_mean;
        for (term, level) in &design.reference_levels {
            intercept += self.effect_raw(term, level);
        }
        design
            .columns
            .iter()
            .map(|c| {
                if c.term == "intercept" {
                    intercept / sd
                } else if c.level.is_empty() {
                    self.effect_raw(&c.term, "") / sd
                } else {
                    let reference = design
                        .reference_levels
                        .get(&c.term)
                        .map_or(0.0, |r| self.effect_raw(&c.term, r));
                    (self.effect_raw(&c.term, &c.level) - reference) / sd
                }
            })
            .collect()
    }

    /// Student-weighted variance (n - 1 divisor) of the true effects.
    pub fn between_variance(&self, cohort: &Cohort) -> f64 {
        let per_student: Vec<f64> = cohort
            .student_school_index()
            .iter()
            .map(|&j| self.school_effects[j].true_effect)
            .collect();
        sample_variance(&per_student)
    }
}

fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

/// Generated data in ingest form plus the cohort built from it.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub students: Vec<StudentInput>,
    pub schools: Vec<SchoolInput>,
    pub cohort: Cohort,
    pub truth: GroundTruth,
}

const ETHNICITIES: [(&str, f64); 5] = [
    ("asian", 0.42),
    ("black", 0.22),
    ("mixed", 0.20),
    ("chinese", 0.03),
    ("other", 0.13),
];
const REGIONS: [&str; 9] = [
    "east_midlands",
    "east_of_england",
    "london",
    "north_east",
    "north_west",
    "south_east",
    "south_west",
    "west_midlands",
    "yorkshire",
];

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[(&'a str, f64)]) -> &'a str {
    let total: f64 = items.iter().map(|i| i.1).sum();
    let mut u = rng.random::<f64>() * total;
    for &(name, w) in items {
        if u < w {
            return name;
        }
        u -= w;
    }
    items[items.len() - 1].0
}

fn round_to(x: f64, places: i32) -> f64 {
    let f = 10f64.powi(places);
    (x * f).round() / f
}

struct Latent {
    prior: Vec<f64>,
    early: Vec<f64>,
    ses: Vec<f64>,
    school: Vec<usize>,
    school_level: Vec<f64>,
}

/// Draw a cohort. Identical configs give identical output on every platform.
pub fn generate_cohort(config: &SimConfig, ingest: &IngestConfig) -> Result<Simulated> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let rho = config.sorting_strength;
    let rho_s = config.ses_sorting;
    let r = config.early_correlation;
    let j = config.n_schools;

    let mut schools = Vec::with_capacity(j);
    let mut latent = Latent {
        prior: Vec::new(),
        early: Vec::new(),
        ses: Vec::new(),
        school: Vec::new(),
        school_level: Vec::with_capacity(j),
    };
    let mut students = Vec::new();
    let mut minority_share = Vec::with_capacity(j);

    let school_m: Vec<f64> = (0..j).map(|_| normal(&mut rng)).collect();
    // grammar schools: the most advantaged 4% of intakes
    let mut sorted_m = school_m.clone();
    sorted_m.sort_by(f64::total_cmp);
    let grammar_cut = sorted_m[j - (j / 25).max(1)];

    for (k, &m) in school_m.iter().enumerate() {
        let grammar = m >= grammar_cut;
        let gender_mix = if grammar {
            pick(&mut rng, &[("mixed", 0.6), ("boys", 0.2), ("girls", 0.2)])
        } else {
            pick(&mut rng, &[("mixed", 0.93), ("boys", 0.03), ("girls", 0.04)])
        };
        let school_type = if grammar {
            "grammar"
        } else {
            pick(
                &mut rng,
                &[
                    ("academy", 0.55),
                    ("community", 0.22),
                    ("foundation", 0.1),
                    ("voluntary_aided", 0.1),
                    ("free_school", 0.03),
                ],
            )
        };
        let admissions = if grammar { "selective" } else { "non_selective" };
        let age_range = pick(&mut rng, &[("11-16", 0.45), ("11-18", 0.55)]);
        let religious_denom = pick(
            &mut rng,
            &[("none", 0.8), ("church_of_england", 0.1), ("roman_catholic", 0.1)],
        );
        let region = REGIONS[rng.random_range(0..REGIONS.len())];
        minority_share.push(logistic(-1.4 + 1.1 * normal(&mut rng)));
        schools.push(SchoolInput {
            school_id: format!("S{:05}", k + 1),
            region: region.to_string(),
            school_type: school_type.to_string(),
            admissions: admissions.to_string(),
            age_range: age_range.to_string(),
            gender_mix: gender_mix.to_string(),
            religious_denom: religious_denom.to_string(),
            // placeholder until school SES means are known
            school_deprivation_decile: 1,
        });
        latent.school_level.push(m);
    }

    let mut serial = 0usize;
    for k in 0..j {
        let m = school_m[k];
        let size = rng.random_range(config.min_students..=config.max_students);
        for _ in 0..size {
            serial += 1;
            let eps = normal(&mut rng);
            let z = rho.sqrt() * m + (1.0 - rho).sqrt() * eps;
            let eta = normal(&mut rng);
            // student advantage tracks student achievement a little
            let own = 0.3 * eps + (1.0 - 0.09f64).sqrt() * eta;
            let s = rho_s.sqrt() * m + (1.0 - rho_s).sqrt() * own;
            let early = r * z + (1.0 - r * r).sqrt() * normal(&mut rng);

            let female = match schools[k].gender_mix.as_str() {
                "boys" => false,
                "girls" => true,
                _ => rng.random_bool(0.5),
            };
            let ethnicity = if rng.random_bool(minority_share[k]) {
                pick(&mut rng, &ETHNICITIES)
            } else {
                "white"
            };
            let eal_p = match ethnicity {
                "white" => 0.03,
                "black" => 0.35,
                "mixed" => 0.1,
                _ => 0.55,
            };
            let eal = rng.random_bool(eal_p);
            let fsm = rng.random_bool(logistic(-1.7 - 1.1 * s));
            let sen = rng.random_bool(logistic(-2.1 - 0.9 * z));
            let ks1_missing = rng.random_bool(config.early_missing_rate);
            let age = rng.random_range(0..12u32) as f64;
            let dep_noise = 0.6 * normal(&mut rng);

            students.push(StudentInput {
                student_id: format!("P{serial:08}"),
                school_id: schools[k].school_id.clone(),
                attainment8: 0.0,
                ks2_score: round_to(100.0 + 6.0 * z, 2),
                ks1_score: (!ks1_missing).then(|| round_to(15.0 + 3.0 * early, 1)),
                age_months: age,
                gender: if female { "female" } else { "male" }.to_string(),
                ethnicity: ethnicity.to_string(),
                eal,
                sen,
                fsm,
                // placeholder score; replaced by deciles below
                deprivation_decile: 1,
            });
            latent.prior.push(z);
            latent.early.push(early);
            latent.ses.push(s + dep_noise);
            latent.school.push(k);
        }
    }

    // deprivation deciles: 1 = most deprived (lowest advantage)
    let dep_keys: Vec<Option<f64>> = latent.ses.iter().map(|&v| Some(v)).collect();
    let dep = rank_groups(&dep_keys, 10)?;
    for (st, d) in students.iter_mut().zip(&dep) {
        st.deprivation_decile = *d as u8;
    }
    let mut ses_sum = vec![0.0; j];
    let mut size = vec![0usize; j];
    for (i, &k) in latent.school.iter().enumerate() {
        ses_sum[k] += latent.ses[i];
        size[k] += 1;
    }
    let school_ses: Vec<Option<f64>> = (0..j).map(|k| Some(ses_sum[k] / size[k] as f64)).collect();
    let school_dep = rank_groups(&school_ses, 10)?;
    for (sc, d) in schools.iter_mut().zip(&school_dep) {
        sc.school_deprivation_decile = *d as u8;
    }

    // Provisional outcome so the cohort builder derives bands and ventiles;
    // the outcome never feeds into them.
    for (st, z) in students.iter_mut().zip(&latent.prior) {
        st.attainment8 = *z;
    }
    let provisional = Cohort::build(students.clone(), schools.clone(), ingest)?;
    if !provisional.has_composition() {
        return Err(validation("simulated cohort has too few schools for composition groups"));
    }

    // true school effects
    let mut prior_sum = vec![0.0; j];
    for (i, &k) in latent.school.iter().enumerate() {
        prior_sum[k] += latent.prior[i];
    }
    let school_prior: Vec<f64> = (0..j).map(|k| prior_sum[k] / size[k] as f64).collect();
    let sp_mean = school_prior.iter().sum::<f64>() / j as f64;
    let sp_sd = sample_variance(&school_prior).sqrt();
    let sel = config.selection_strength;
    let sigma_u = config.sigma2_u_true.sqrt();
    let u: Vec<f64> = school_prior
        .iter()
        .map(|&p| {
            let std = if sp_sd > 0.0 { (p - sp_mean) / sp_sd } else { 0.0 };
            sigma_u * (sel * std + (1.0 - sel * sel).sqrt() * normal(&mut rng))
        })
        .collect();

    // per-level effects over the bands the cohort actually uses
    let c = &config.coefficients;
    let records = provisional.students();
    let n = records.len();
    let mut band_sum: BTreeMap<u16, (f64, usize)> = BTreeMap::new();
    let mut early_sum: BTreeMap<u16, (f64, usize)> = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        let e = band_sum.entry(rec.prior_band).or_insert((0.0, 0));
        e.0 += latent.prior[i];
        e.1 += 1;
        if let Some(b) = rec.early_band {
            let e = early_sum.entry(b).or_insert((0.0, 0));
            e.0 += latent.early[i];
            e.1 += 1;
        }
    }
    let prior_effect: BTreeMap<u16, f64> = band_sum
        .iter()
        .map(|(&b, &(s, cnt))| {
            let q = s / cnt as f64;
            (b, c.prior_linear * q + c.prior_quadratic * q * q)
        })
        .collect();
    let early_effect: BTreeMap<u16, f64> = early_sum
        .iter()
        .map(|(&b, &(s, cnt))| (b, c.early_linear * s / cnt as f64))
        .collect();

    let mut coefficients = Vec::new();
    let mut push = |term: Variable, level: String, v: f64| {
        coefficients.push(TrueCoefficient {
            term: term.name().to_string(),
            level,
            effect_raw: v,
            effect: 0.0,
        })
    };
    for (b, v) in &prior_effect {
        push(Variable::PriorBand, b.to_string(), *v);
    }
    for (b, v) in &early_effect {
        push(Variable::EarlyBand, b.to_string(), *v);
    }
    push(Variable::EarlyBand, MISSING_LEVEL.to_string(), 0.0);
    push(Variable::Age, String::new(), c.age_per_month);
    push(Variable::Gender, "female".into(), c.female);
    push(Variable::Gender, "male".into(), 0.0);
    for (name, v) in &c.ethnicity {
        push(Variable::Ethnicity, name.clone(), *v);
    }
    for (var, v) in [(Variable::Eal, c.eal), (Variable::Sen, c.sen), (Variable::Fsm, c.fsm)] {
        push(var, "0".into(), 0.0);
        push(var, "1".into(), v);
    }
    for d in 1..=10u16 {
        push(Variable::Deprivation, d.to_string(), c.deprivation_per_decile * (d - 1) as f64);
        push(
            Variable::SchoolDeprivation,
            d.to_string(),
            c.school_deprivation_per_decile * (d - 1) as f64,
        );
    }
    for v in 1..=ingest.n_composition_ventiles as u16 {
        push(Variable::PriorVentile, v.to_string(), c.prior_ventile_per_step * (v - 1) as f64);
    }
    push(Variable::SchoolType, "grammar".into(), c.grammar);

    let ethnic = |name: &str| c.ethnicity.get(name).copied().unwrap_or(0.0);
    let school_index = provisional.student_school_index();
    let school_recs = provisional.schools();
    let mut outcome = Vec::with_capacity(n);
    for (i, (rec, st)) in records.iter().zip(&students).enumerate() {
        let k = school_index[i];
        let sc = &school_recs[k];
        let mut y = prior_effect[&rec.prior_band];
        if let Some(b) = rec.early_band {
            y += early_effect[&b];
        }
        y += c.age_per_month * st.age_months;
        if st.gender == "female" {
            y += c.female;
        }
        y += ethnic(&st.ethnicity);
        y += c.eal * st.eal as u8 as f64 + c.sen * st.sen as u8 as f64 + c.fsm * st.fsm as u8 as f64;
        y += c.deprivation_per_decile * (st.deprivation_decile - 1) as f64;
        y += c.school_deprivation_per_decile * (sc.school_deprivation_decile - 1) as f64;
        y += c.prior_ventile_per_step * (sc.mean_prior_ventile.unwrap_or(1) - 1) as f64;
        if sc.school_type == "grammar" {
            y += c.grammar;
        }
        // cohort schools are in id order, which is generation order
        y += u[k];
        y += config.sigma2_e.sqrt() * normal(&mut rng);
        outcome.push(y);
    }

    let mean = outcome.iter().sum::<f64>() / n as f64;
    let sd = sample_variance(&outcome).sqrt();
    for (st, y) in students.iter_mut().zip(&outcome) {
        // Attainment 8 style scale, kept unrounded so the truth is exact
        st.attainment8 = 50.0 + 15.0 * y;
    }
    for c in coefficients.iter_mut() {
        c.effect = c.effect_raw / sd;
    }
    let cohort = Cohort::build(students.clone(), schools.clone(), ingest)?;
    let truth = GroundTruth {
        school_effects: cohort
            .schools()
            .iter()
            .zip(&u)
            .map(|(sc, uk)| TrueSchoolEffect {
                school_id: sc.school_id.clone(),
                true_effect: uk / sd,
            })
            .collect(),
        coefficients,
        intercept_raw: 0.0,
        outcome_mean: mean,
        outcome_sd: sd,
    };
    Ok(Simulated {
        students,
        schools,
        cohort,
        truth,
    })
}

/// Normal-equations least squares by Gaussian elimination with partial
/// pivoting. Test oracle for small full-rank problems.
pub fn oracle_fit(x: ArrayView2<f64>, y: &[f64]) -> Result<Vec<f64>> {
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(validation("outcome length does not match design rows"));
    }
    let mut a = vec![vec![0.0; p + 1]; p];
    for i in 0..n {
        for r in 0..p {
            let xr = x[[i, r]];
            for c in 0..p {
                a[r][c] += xr * x[[i, c]];
            }
            a[r][p] += xr * y[i];
        }
    }
    let scale = (0..p).map(|r| a[r][r].abs()).fold(0.0, f64::max);
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&i, &k| a[i][col].abs().total_cmp(&a[k][col].abs()))
            .unwrap_or(col);
        if a[piv][col].abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(estimation("singular normal equations"));
        }
        a.swap(col, piv);
        for r in col + 1..p {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..=p {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let mut b = vec![0.0; p];
    for r in (0..p).rev() {
        let mut s = a[r][p];
        for c in r + 1..p {
            s -= a[r][c] * b[c];
        }
        b[r] = s / a[r][r];
    }
    Ok(b)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRecovery {
    pub model: String,
    /// Retained columns compared against truth.
    pub n_coefficients: usize,
    pub n_within_3se: usize,
    pub share_within_3se: f64,
    /// Largest |estimate - truth| / SE.
    pub max_abs_z: f64,
    pub effect_correlation: f64,
    pub between_variance_estimated: f64,
    pub between_variance_true: f64,
    pub between_variance_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub models: Vec<ModelRecovery>,
}

/// Compare one fit against the truth. The fit must carry cluster-robust
/// covariance for the coefficient check; without it the share is NaN.
pub fn model_recovery(
    design: &DesignMatrix,
    fit: &FittedModel,
    table: &EffectTable,
    truth: &GroundTruth,
    cohort: &Cohort,
) -> Result<ModelRecovery> {
    let expected = truth.design_truth(design);
    let se = fit.cluster_robust_se();
    let mut n_coef = 0;
    let mut within = 0;
    let mut max_z: f64 = 0.0;
    if let Some(se) = &se {
        for j in 0..expected.len() {
            if !fit.retained[j] || se[j] <= 0.0 {
                continue;
            }
            let z = (fit.coefficients[j] - expected[j]).abs() / se[j];
            n_coef += 1;
            if z <= 3.0 {
                within += 1;
            }
            max_z = max_z.max(z);
        }
    }
    let true_by_id: BTreeMap<&str, f64> = truth
        .school_effects
        .iter()
        .map(|t| (t.school_id.as_str(), t.true_effect))
        .collect();
    let mut est = Vec::with_capacity(table.effects.len());
    let mut tru = Vec::with_capacity(table.effects.len());
    for e in &table.effects {
        let t = true_by_id
            .get(e.school_id.as_str())
            .ok_or_else(|| validation(format!("no true effect for school `{}`", e.school_id)))?;
        est.push(e.effect);
        tru.push(*t);
    }
    let effect_correlation = crate::comparison::pearson(&est, &tru).unwrap_or(f64::NAN);
    let true_between = truth.between_variance(cohort);
    Ok(ModelRecovery {
        model: fit.spec.label(),
        n_coefficients: n_coef,
        n_within_3se: within,
        share_within_3se: if se.is_some() && n_coef > 0 {
            within as f64 / n_coef as f64
        } else {
            f64::NAN
        },
        max_abs_z: max_z,
        effect_correlation,
        between_variance_estimated: table.between_school_variance,
        between_variance_true: true_between,
        between_variance_error: table.between_school_variance - true_between,
    })
}

pub fn recovery_report(
    fits: &[(&DesignMatrix, &FittedModel, &EffectTable)],
    truth: &GroundTruth,
    cohort: &Cohort,
) -> Result<RecoveryReport> {
    let models = fits
        .iter()
        .map(|(d, f, t)| model_recovery(d, f, t, truth, cohort))
        .collect::<Result<Vec<_>>>()?;
    Ok(RecoveryReport { models })
}

/// `truth.csv`: school_id, true_effect.
pub fn write_truth<W: Write>(writer: W, truth: &GroundTruth) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["school_id", "true_effect"])?;
    for t in &truth.school_effects {
        w.write_record([t.school_id.as_str(), &format!("{}", t.true_effect)])?;
    }
    w.flush().map_err(|e| crate::error::VamError::io("truth.csv", e))?;
    Ok(())
}

/// `truth_coefficients.csv`: term, level, effect_raw, effect.
pub fn write_truth_coefficients<W: Write>(writer: W, truth: &GroundTruth) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["term", "level", "effect_raw", "effect"])?;
    w.write_record([
        "intercept",
        "",
        &format!("{}", truth.intercept_raw),
        &format!("{}", (truth.intercept_raw - truth.outcome_mean) / truth.outcome_sd),
    ])?;
    for c in &truth.coefficients {
        w.write_record([
            c.term.as_str(),
            c.level.as_str(),
            &format!("{}", c.effect_raw),
            &format!("{}", c.effect),
        ])?;
    }
    w.flush().map_err(|e| crate::error::VamError::io("truth_coefficients.csv", e))?;
    Ok(())
}
