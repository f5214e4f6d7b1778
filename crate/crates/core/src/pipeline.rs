//! End-to-end steps shared by the command line and the bindings: fitting a
//! set of specs, writing and reading their outputs, comparing them, and
//! writing simulated data.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::cohort::{write_schools, write_students, Cohort};
use crate::comparison::{compare_tables, ComparisonReport, SchoolFlags};
use crate::design::{build_design, canonical_specs, DesignMatrix, DroppedColumn, ModelSpec};
use crate::effects::{
    school_effects_for_fit, EffectCategory, EffectTable, SchoolEffect, SchoolEffectsResult,
    VarianceComponents,
};
use crate::error::{validation, Result, VamError};
use crate::estimation::{fit_with_clusters, FittedModel};
use crate::format::{fmt_num, fmt_opt, to_json};
use crate::simulation::{write_truth, write_truth_coefficients, Simulated};
use crate::svg;

/// One fitted spec and everything derived from it.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub spec: ModelSpec,
    /// Grid spec with the identical design, when this spec is a duplicate.
    pub equivalent_to: Option<ModelSpec>,
    pub fit: FittedModel,
    pub effects: SchoolEffectsResult,
    pub reference_levels: BTreeMap<String, String>,
    pub n_schools: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSettings {
    pub shrinkage: bool,
    pub threads: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            shrinkage: true,
            threads: 1,
        }
    }
}

fn fit_one(spec: ModelSpec, cohort: &Cohort, shrink: bool) -> Result<FitOutput> {
    let design = build_design(spec, cohort)?;
    let outcome = cohort.outcome();
    let ids = cohort.student_school_ids();
    let fit = fit_with_clusters(&design, &outcome, &ids)?;
    let effects = school_effects_for_fit(&fit, cohort, shrink)?;
    info!(
        "{}: {} columns, rank {}, adjusted R2 {:.4}",
        spec,
        design.ncols(),
        fit.rank,
        fit.adjusted_r_squared
    );
    Ok(FitOutput {
        spec,
        equivalent_to: None,
        fit,
        effects,
        reference_levels: design.reference_levels,
        n_schools: cohort.n_schools(),
    })
}

fn relabel(out: &FitOutput, spec: ModelSpec, equivalent_to: ModelSpec) -> FitOutput {
    let mut copy = out.clone();
    copy.spec = spec;
    copy.equivalent_to = Some(equivalent_to);
    copy.fit.spec = spec;
    copy.effects.table.spec = spec;
    copy
}

/// Fit `specs` in the given order. Specs with identical designs are fitted
/// once; results do not depend on the thread count.
pub fn fit_specs(cohort: &Cohort, specs: &[ModelSpec], settings: FitSettings) -> Result<Vec<FitOutput>> {
    let grid: BTreeMap<ModelSpec, Option<ModelSpec>> = canonical_specs()
        .into_iter()
        .map(|c| (c.spec, c.equivalent_to))
        .collect();
    // representative = first requested spec with the same block list
    let mut reps: Vec<ModelSpec> = Vec::new();
    let mut rep_of: Vec<usize> = Vec::with_capacity(specs.len());
    for spec in specs {
        let blocks = spec.blocks();
        match reps.iter().position(|r| r.blocks() == blocks) {
            Some(i) => rep_of.push(i),
            None => {
                rep_of.push(reps.len());
                reps.push(*spec);
            }
        }
    }
    let run = || -> Result<Vec<FitOutput>> {
        reps.par_iter()
            .map(|s| fit_one(*s, cohort, settings.shrinkage))
            .collect()
    };
    let fitted = if settings.threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(settings.threads)
            .build()
            .map_err(|e| validation(format!("cannot start worker threads: {e}")))?
            .install(run)?
    } else {
        reps.iter()
            .map(|s| fit_one(*s, cohort, settings.shrinkage))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(specs
        .iter()
        .zip(&rep_of)
        .map(|(spec, &i)| {
            let src = &fitted[i];
            let equivalent = grid.get(spec).copied().flatten().or_else(|| {
                (src.spec != *spec).then_some(src.spec)
            });
            match equivalent {
                Some(eq) => relabel(src, *spec, eq),
                None => src.clone(),
            }
        })
        .collect())
}

/// `summary.json` contents; the first block of keys mirrors the rows of
/// the usual model summary table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub model: String,
    pub equivalent_to: Option<String>,
    pub adjusted_r_squared: f64,
    pub sd_of_residuals: f64,
    pub sd_of_school_effects: f64,
    pub variance_of_residuals: f64,
    pub variance_of_school_effects: f64,
    pub pct_residual_variance_due_to_schools: f64,
    pub pct_schools_statistically_significant: f64,
    pub r_squared: f64,
    pub variance_of_school_effects_unweighted: f64,
    pub within_school_variance: f64,
    pub category_shares: BTreeMap<String, f64>,
    pub variance_components: Option<VarianceComponents>,
    pub n_students: usize,
    pub n_schools: usize,
    pub n_columns: usize,
    pub rank: usize,
    pub reference_levels: BTreeMap<String, String>,
    pub dropped_columns: Vec<DroppedColumn>,
}

impl FitOutput {
    pub fn summary(&self) -> FitSummary {
        let d = &self.effects.decomposition;
        let t = &self.effects.table;
        FitSummary {
            model: self.spec.label(),
            equivalent_to: self.equivalent_to.map(|s| s.label()),
            adjusted_r_squared: self.fit.adjusted_r_squared,
            sd_of_residuals: self.fit.residual_sd,
            sd_of_school_effects: d.between_school_variance.sqrt(),
            variance_of_residuals: self.fit.variance_of_residuals(),
            variance_of_school_effects: d.between_school_variance,
            pct_residual_variance_due_to_schools: d.pct_due_to_schools,
            pct_schools_statistically_significant: d.pct_significant,
            r_squared: self.fit.r_squared,
            variance_of_school_effects_unweighted: d.between_school_variance_unweighted,
            within_school_variance: d.within_school_variance,
            category_shares: EffectCategory::ALL
                .iter()
                .zip(t.category_shares)
                .map(|(c, v)| (c.label().to_string(), v))
                .collect(),
            variance_components: self.effects.components,
            n_students: self.fit.n,
            n_schools: self.n_schools,
            n_columns: self.fit.columns.len(),
            rank: self.fit.rank,
            reference_levels: self.reference_levels.clone(),
            dropped_columns: self.fit.dropped_columns.clone(),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| VamError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| VamError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| VamError::io(path, e))
}

pub const EFFECTS_COLUMNS: [&str; 8] = [
    "school_id",
    "n",
    "effect",
    "ci_low",
    "ci_high",
    "category",
    "significant",
    "shrunk_effect",
];

pub fn write_effects_csv<W: std::io::Write>(writer: W, table: &EffectTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EFFECTS_COLUMNS)?;
    for e in &table.effects {
        w.write_record([
            e.school_id.clone(),
            e.n.to_string(),
            fmt_num(e.effect),
            fmt_num(e.ci_low),
            fmt_num(e.ci_high),
            e.category.label().to_string(),
            (e.significant as u8).to_string(),
            fmt_opt(e.shrunk_effect),
        ])?;
    }
    w.flush().map_err(|e| VamError::io("<effects>", e))?;
    Ok(())
}

pub fn write_coefficients_csv<W: std::io::Write>(writer: W, fit: &FittedModel) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["term", "level", "estimate", "cluster_robust_se", "status"])?;
    for row in fit.coefficient_table() {
        let status = if row.estimate.is_some() { "estimated" } else { "dropped" };
        w.write_record([
            row.term,
            row.level,
            fmt_opt(row.estimate),
            fmt_opt(row.cluster_robust_se),
            status.to_string(),
        ])?;
    }
    w.flush().map_err(|e| VamError::io("<coefficients>", e))?;
    Ok(())
}

/// Column names followed by the rows of the design, for inspection.
pub fn write_design_csv<W: std::io::Write>(writer: W, design: &DesignMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(design.column_names())?;
    for row in design.values.rows() {
        w.write_record(row.iter().map(|v| fmt_num(*v)))?;
    }
    w.flush().map_err(|e| VamError::io("<design>", e))?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(value: &str, file: &str, row: usize, column: &str) -> Result<T> {
    value.trim().parse().map_err(|_| VamError::BadCell {
        file: file.to_string(),
        row,
        column: column.to_string(),
        message: format!("cannot parse `{value}`"),
    })
}

/// Read an `effects.csv` written by [`write_effects_csv`].
pub fn read_effects_csv(path: &Path, spec: ModelSpec) -> Result<EffectTable> {
    let file = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => VamError::io(path, std::io::Error::other(e.to_string())),
        _ => VamError::Csv(e),
    })?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| VamError::MissingColumn {
                file: file.clone(),
                column: name.to_string(),
            })
    };
    let idx: Vec<usize> = EFFECTS_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let mut effects = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        let get = |i: usize| rec.get(idx[i]).unwrap_or("");
        let shrunk = get(7);
        effects.push(SchoolEffect {
            school_id: get(0).to_string(),
            n: parse_field(get(1), &file, row, EFFECTS_COLUMNS[1])?,
            effect: parse_field(get(2), &file, row, EFFECTS_COLUMNS[2])?,
            ci_low: parse_field(get(3), &file, row, EFFECTS_COLUMNS[3])?,
            ci_high: parse_field(get(4), &file, row, EFFECTS_COLUMNS[4])?,
            category: get(5).parse()?,
            significant: match get(6) {
                "1" => true,
                "0" => false,
                other => {
                    return Err(VamError::BadCell {
                        file: file.clone(),
                        row,
                        column: "significant".into(),
                        message: format!("expected 0 or 1, got `{other}`"),
                    })
                }
            },
            shrunk_effect: if shrunk.is_empty() {
                None
            } else {
                Some(parse_field(shrunk, &file, row, EFFECTS_COLUMNS[7])?)
            },
        });
    }
    if effects.is_empty() {
        return Err(validation(format!("{file} has no rows")));
    }
    effects.sort_by(|a, b| a.school_id.cmp(&b.school_id));
    Ok(EffectTable::from_effects(spec, effects))
}

/// Subgroup flags used to highlight points in scatter exports.
pub fn school_flags(cohort: &Cohort) -> BTreeMap<String, SchoolFlags> {
    let top = cohort.config().n_composition_ventiles as u16;
    cohort
        .schools()
        .iter()
        .map(|s| {
            (
                s.school_id.clone(),
                SchoolFlags {
                    school_type: s.school_type.clone(),
                    top_prior_ventile: s.mean_prior_ventile == Some(top),
                },
            )
        })
        .collect()
}

pub const FLAGS_FILE: &str = "school_flags.csv";

pub fn write_school_flags(path: &Path, flags: &BTreeMap<String, SchoolFlags>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["school_id", "school_type", "top_prior_ventile"])?;
    for (id, f) in flags {
        w.write_record([id.as_str(), &f.school_type, if f.top_prior_ventile { "1" } else { "0" }])?;
    }
    w.flush().map_err(|e| VamError::io(path, e))?;
    Ok(())
}

pub fn read_school_flags(path: &Path) -> Result<BTreeMap<String, SchoolFlags>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        out.insert(
            rec.get(0).unwrap_or("").to_string(),
            SchoolFlags {
                school_type: rec.get(1).unwrap_or("").to_string(),
                top_prior_ventile: rec.get(2) == Some("1"),
            },
        );
    }
    Ok(out)
}

/// Write `<slug>/{effects.csv,coefficients.csv,summary.json}` per output and
/// `school_flags.csv` at the top level.
pub fn write_fit_outputs(dir: &Path, outputs: &[FitOutput], cohort: &Cohort) -> Result<()> {
    ensure_dir(dir)?;
    for out in outputs {
        let sub = dir.join(out.spec.slug());
        ensure_dir(&sub)?;
        write_effects_csv(create(&sub.join("effects.csv"))?, &out.effects.table)?;
        write_coefficients_csv(create(&sub.join("coefficients.csv"))?, &out.fit)?;
        write_text(&sub.join("summary.json"), &to_json(&out.summary())?)?;
    }
    write_school_flags(&dir.join(FLAGS_FILE), &school_flags(cohort))
}

/// Effect tables found under a fit output directory, in grid order.
pub fn load_fit_tables(dir: &Path) -> Result<Vec<(String, EffectTable)>> {
    let mut out = Vec::new();
    for c in canonical_specs() {
        let path = dir.join(c.spec.slug()).join("effects.csv");
        if path.is_file() {
            out.push((c.spec.label(), read_effects_csv(&path, c.spec)?));
        }
    }
    if out.len() < 2 {
        return Err(validation(format!(
            "{} holds {} effect table(s); comparison needs at least two",
            dir.display(),
            out.len()
        )));
    }
    Ok(out)
}

/// Tables as a later `compare` would see them after a write/read cycle,
/// so in-process reports match file-based ones exactly.
pub fn exported_table(table: &EffectTable) -> EffectTable {
    let r = crate::format::round_sig;
    let effects = table
        .effects
        .iter()
        .map(|e| SchoolEffect {
            effect: r(e.effect),
            ci_low: r(e.ci_low),
            ci_high: r(e.ci_high),
            shrunk_effect: e.shrunk_effect.map(r),
            ..e.clone()
        })
        .collect();
    EffectTable::from_effects(table.spec, effects)
}

pub fn compare(
    tables: &[(String, EffectTable)],
    flags: &BTreeMap<String, SchoolFlags>,
) -> Result<ComparisonReport> {
    let refs: Vec<(String, &EffectTable)> = tables.iter().map(|(l, t)| (l.clone(), t)).collect();
    compare_tables(&refs, flags)
}

fn family_labels() -> Vec<&'static str> {
    crate::design::Family::ALL.iter().map(|f| f.label()).collect()
}

/// Write `report.json`, CSV tables and SVG figures for a comparison.
pub fn write_comparison(dir: &Path, report: &ComparisonReport) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        write_text(&p, &text)?;
        written.push(p);
        Ok(())
    };
    put("report.json", to_json(report)?)?;

    let mut m = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model".to_string()];
    header.extend(report.model_labels.iter().cloned());
    m.write_record(&header)?;
    for (label, row) in report.model_labels.iter().zip(report.dual_triangle()) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|v| fmt_num(*v)));
        m.write_record(&rec)?;
    }
    put("matrix.csv", csv_text(m)?)?;

    let mut c = csv::Writer::from_writer(Vec::new());
    c.write_record(["model", "none_or_very_small", "small", "moderate", "large", "moderate_or_large"])?;
    for row in &report.category_share_table {
        c.write_record([
            row.model.clone(),
            fmt_num(row.none_or_very_small),
            fmt_num(row.small),
            fmt_num(row.moderate),
            fmt_num(row.large),
            fmt_num(report.moderate_or_large_shares[&row.model]),
        ])?;
    }
    put("category_shares.csv", csv_text(c)?)?;

    let bars: Vec<String> = report.category_share_table.iter().map(|r| r.model.clone()).collect();
    let series = vec![
        ("none/very small".to_string(), report.category_share_table.iter().map(|r| r.none_or_very_small).collect()),
        ("small".to_string(), report.category_share_table.iter().map(|r| r.small).collect()),
        ("moderate".to_string(), report.category_share_table.iter().map(|r| r.moderate).collect()),
        ("large".to_string(), report.category_share_table.iter().map(|r| r.large).collect()),
    ];
    let short_bars: Vec<String> = if bars.len() > 8 {
        (1..=bars.len()).map(|i| i.to_string()).collect()
    } else {
        bars
    };
    put(
        "fig1_effect_categories.svg",
        svg::stacked_bars("School effect size categories", &short_bars, &series),
    )?;

    for s in &report.scatter_exports {
        let stem = format!(
            "{}_vs_{}",
            slug_of_label(&s.model_a),
            slug_of_label(&s.model_b)
        );
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "school_id", "effect_a", "effect_b", "rank_a", "rank_b", "school_type", "top_prior_ventile",
        ])?;
        for r in &s.rows {
            w.write_record([
                r.school_id.clone(),
                fmt_num(r.effect_a),
                fmt_num(r.effect_b),
                fmt_num(r.rank_a),
                fmt_num(r.rank_b),
                r.school_type.clone(),
                (r.top_prior_ventile as u8).to_string(),
            ])?;
        }
        put(&format!("scatter_{stem}.csv"), csv_text(w)?)?;
        let pts: Vec<(f64, f64, bool)> = s
            .rows
            .iter()
            .map(|r| (r.rank_b, r.rank_a, r.school_type == "grammar"))
            .collect();
        put(
            &format!("fig2_scatter_{stem}.svg"),
            svg::scatter(
                &format!("School effect ranks: {} against {}", s.model_a, s.model_b),
                &format!("{} rank", s.model_b),
                &format!("{} rank", s.model_a),
                &pts,
                "grammar",
            ),
        )?;
    }

    if let Some(v) = &report.variant_analysis {
        let families = family_labels();
        for (name, lines, title, y_label, range) in [
            (
                "moderate_or_large",
                &v.moderate_or_large_line,
                "Schools with moderate or large effects",
                "% of schools",
                (0.0, 100.0),
            ),
            (
                "correlation_to_original",
                &v.correlation_to_original_line,
                "Correlation with prior-included effects",
                "Pearson r",
                (0.0, 1.0),
            ),
        ] {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["treatment".to_string()];
            header.extend(families.iter().map(|f| f.to_string()));
            w.write_record(&header)?;
            for line in lines.iter() {
                let mut rec = vec![line.treatment.label().to_string()];
                rec.extend(line.values.iter().map(|x| fmt_num(*x)));
                w.write_record(&rec)?;
            }
            put(&format!("{name}_lines.csv"), csv_text(w)?)?;
            let series: Vec<(String, Vec<f64>)> = lines
                .iter()
                .map(|l| (l.treatment.label().to_string(), l.values.to_vec()))
                .collect();
            let fig = if name == "moderate_or_large" { "fig3" } else { "fig4" };
            put(
                &format!("{fig}_{name}.svg"),
                svg::lines(title, y_label, &families, &series, range),
            )?;
        }
    }
    Ok(written)
}

fn slug_of_label(label: &str) -> String {
    ModelSpec::parse_label(label)
        .map(|s| s.slug())
        .unwrap_or_else(|_| label.to_ascii_lowercase().replace([':', ' '], "_"))
}

fn csv_text(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| validation(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| validation(format!("csv buffer: {e}")))
}

/// `students.csv`, `schools.csv`, `truth.csv` and `truth_coefficients.csv`.
pub fn write_simulation(dir: &Path, sim: &Simulated) -> Result<()> {
    ensure_dir(dir)?;
    write_students(create(&dir.join("students.csv"))?, &sim.students)?;
    write_schools(create(&dir.join("schools.csv"))?, &sim.schools)?;
    write_truth(create(&dir.join("truth.csv"))?, &sim.truth)?;
    write_truth_coefficients(create(&dir.join("truth_coefficients.csv"))?, &sim.truth)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::IngestConfig;
    use crate::design::{Family, PriorTreatment};
    use crate::simulation::{generate_cohort, SimConfig};

    fn cohort() -> Cohort {
        let cfg = SimConfig {
            n_schools: 24,
            min_students: 15,
            max_students: 30,
            seed: 9,
            ..SimConfig::default()
        };
        generate_cohort(&cfg, &IngestConfig::default()).unwrap().cohort
    }

    #[test]
    fn equivalent_specs_share_results() {
        let c = cohort();
        let specs = [
            ModelSpec::new(Family::Raw, PriorTreatment::Included),
            ModelSpec::new(Family::Va, PriorTreatment::Omitted),
            ModelSpec::new(Family::Va, PriorTreatment::Included),
        ];
        let out = fit_specs(&c, &specs, FitSettings::default()).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[1].equivalent_to, Some(specs[0]));
        assert_eq!(out[1].fit.residuals, out[0].fit.residuals);
        assert_eq!(out[1].effects.table.spec, specs[1]);
        assert_eq!(out[0].equivalent_to, None);
        assert_eq!(out[0].summary().adjusted_r_squared, 0.0);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let c = cohort();
        let specs: Vec<ModelSpec> = canonical_specs().into_iter().map(|s| s.spec).take(8).collect();
        let a = fit_specs(&c, &specs, FitSettings { shrinkage: true, threads: 1 }).unwrap();
        let b = fit_specs(&c, &specs, FitSettings { shrinkage: true, threads: 3 }).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.fit.coefficients, y.fit.coefficients);
            assert_eq!(x.effects.table, y.effects.table);
        }
    }

    #[test]
    fn effects_round_trip_through_csv() {
        let c = cohort();
        let spec = ModelSpec::new(Family::Va, PriorTreatment::Included);
        let out = fit_specs(&c, &[spec], FitSettings::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_fit_outputs(dir.path(), &out, &c).unwrap();
        let path = dir.path().join(spec.slug()).join("effects.csv");
        let back = read_effects_csv(&path, spec).unwrap();
        let expected = exported_table(&out[0].effects.table);
        assert_eq!(back.effects, expected.effects);
        assert_eq!(back.category_shares, expected.category_shares);
        let flags = read_school_flags(&dir.path().join(FLAGS_FILE)).unwrap();
        assert_eq!(flags, school_flags(&c));
        let summary = fs::read_to_string(dir.path().join(spec.slug()).join("summary.json")).unwrap();
        for key in [
            "adjusted_r_squared",
            "sd_of_residuals",
            "sd_of_school_effects",
            "variance_of_residuals",
            "variance_of_school_effects",
            "pct_residual_variance_due_to_schools",
            "pct_schools_statistically_significant",
        ] {
            assert!(summary.contains(&format!("\"{key}\"")), "{key}");
        }
    }

    #[test]
    fn comparison_files_for_two_tables() {
        let c = cohort();
        let specs = [
            ModelSpec::new(Family::Raw, PriorTreatment::Included),
            ModelSpec::new(Family::Va, PriorTreatment::Included),
        ];
        let out = fit_specs(&c, &specs, FitSettings::default()).unwrap();
        let tables: Vec<(String, EffectTable)> = out
            .iter()
            .map(|o| (o.spec.label(), exported_table(&o.effects.table)))
            .collect();
        let report = compare(&tables, &school_flags(&c)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_comparison(dir.path(), &report).unwrap();
        let names: Vec<String> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        for n in [
            "report.json",
            "matrix.csv",
            "category_shares.csv",
            "fig1_effect_categories.svg",
            "scatter_va_included_vs_raw_included.csv",
        ] {
            assert!(names.iter().any(|x| x == n), "{n} missing from {names:?}");
        }
        let matrix = fs::read_to_string(dir.path().join("matrix.csv")).unwrap();
        assert_eq!(matrix.lines().count(), 3);
    }

    #[test]
    fn missing_effects_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_fit_tables(dir.path()).is_err());
    }
}
