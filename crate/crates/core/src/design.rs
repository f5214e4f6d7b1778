//! Model families, prior-achievement treatments, and dummy-coded design
//! matrices.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, LevelKey, Variable};
use crate::error::{validation, Result, VamError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    Raw,
    #[serde(rename = "VA")]
    Va,
    #[serde(rename = "CVA-A")]
    CvaA,
    #[serde(rename = "CVA-B")]
    CvaB,
    #[serde(rename = "CVA-X")]
    CvaX,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Raw, Family::Va, Family::CvaA, Family::CvaB, Family::CvaX];

    pub fn label(self) -> &'static str {
        match self {
            Family::Raw => "Raw",
            Family::Va => "VA",
            Family::CvaA => "CVA-A",
            Family::CvaB => "CVA-B",
            Family::CvaX => "CVA-X",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Family {
    type Err = VamError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "raw" => Ok(Family::Raw),
            "va" => Ok(Family::Va),
            "cva-a" => Ok(Family::CvaA),
            "cva-b" => Ok(Family::CvaB),
            "cva-x" => Ok(Family::CvaX),
            _ => Err(validation(format!("unknown model family `{s}`"))),
        }
    }
}

/// How student prior (KS2) and early (KS1) achievement enter the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorTreatment {
    Included,
    Omitted,
    EarlySubstituted,
    Both,
}

impl PriorTreatment {
    pub const ALL: [PriorTreatment; 4] = [
        PriorTreatment::Included,
        PriorTreatment::Omitted,
        PriorTreatment::EarlySubstituted,
        PriorTreatment::Both,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PriorTreatment::Included => "included",
            PriorTreatment::Omitted => "omitted",
            PriorTreatment::EarlySubstituted => "early",
            PriorTreatment::Both => "both",
        }
    }

    fn uses_prior(self) -> bool {
        matches!(self, PriorTreatment::Included | PriorTreatment::Both)
    }

    fn uses_early(self) -> bool {
        matches!(self, PriorTreatment::EarlySubstituted | PriorTreatment::Both)
    }
}

impl fmt::Display for PriorTreatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PriorTreatment {
    type Err = VamError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "included" => Ok(PriorTreatment::Included),
            "omitted" => Ok(PriorTreatment::Omitted),
            "early" | "early_substituted" | "earlysubstituted" => {
                Ok(PriorTreatment::EarlySubstituted)
            }
            "both" => Ok(PriorTreatment::Both),
            _ => Err(validation(format!("unknown prior treatment `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub prior_treatment: PriorTreatment,
}

const SOCIODEMOGRAPHICS: [Variable; 6] = [
    Variable::Gender,
    Variable::Ethnicity,
    Variable::Eal,
    Variable::Sen,
    Variable::Fsm,
    Variable::Deprivation,
];

const SCHOOL_CHARACTERISTICS: [Variable; 7] = [
    Variable::Region,
    Variable::SchoolType,
    Variable::Admissions,
    Variable::AgeRange,
    Variable::GenderMix,
    Variable::ReligiousDenom,
    Variable::SchoolDeprivation,
];

impl ModelSpec {
    pub fn new(family: Family, prior_treatment: PriorTreatment) -> Self {
        ModelSpec {
            family,
            prior_treatment,
        }
    }

    /// Display label, e.g. `CVA-A:included`.
    pub fn label(&self) -> String {
        format!("{}:{}", self.family, self.prior_treatment)
    }

    /// File-system friendly label, e.g. `cva-a_included`.
    pub fn slug(&self) -> String {
        format!("{}_{}", self.family.label().to_ascii_lowercase(), self.prior_treatment)
    }

    pub fn parse_label(label: &str) -> Result<ModelSpec> {
        let (fam, treat) = label
            .split_once(':')
            .ok_or_else(|| validation(format!("model label `{label}` is not FAMILY:TREATMENT")))?;
        Ok(ModelSpec::new(fam.parse()?, treat.parse()?))
    }

    /// Covariate blocks after the intercept, in column order.
    pub fn blocks(&self) -> Vec<Variable> {
        let t = self.prior_treatment;
        let mut out = Vec::new();
        if self.family >= Family::Va {
            if t.uses_prior() {
                out.push(Variable::PriorBand);
            }
            if t.uses_early() {
                out.push(Variable::EarlyBand);
            }
        }
        if self.family >= Family::CvaA {
            out.push(Variable::Age);
            out.extend(SOCIODEMOGRAPHICS);
        }
        if self.family >= Family::CvaB {
            // composition tracks whichever intake measures the variant uses
            if t.uses_prior() {
                out.push(Variable::PriorVentile);
            }
            if t.uses_early() {
                out.push(Variable::EarlyVentile);
            }
        }
        if self.family >= Family::CvaX {
            out.extend(SCHOOL_CHARACTERISTICS);
        }
        out
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// A grid cell together with the first grid spec sharing its exact block
/// list, if that is a different spec.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CanonicalSpec {
    pub spec: ModelSpec,
    pub equivalent_to: Option<ModelSpec>,
}

/// The 5 family x 4 treatment grid in family-major order.
pub fn canonical_specs() -> Vec<CanonicalSpec> {
    let mut out: Vec<CanonicalSpec> = Vec::with_capacity(20);
    for family in Family::ALL {
        for treatment in PriorTreatment::ALL {
            let spec = ModelSpec::new(family, treatment);
            let blocks = spec.blocks();
            let equivalent_to = out
                .iter()
                .find(|c| c.equivalent_to.is_none() && c.spec.blocks() == blocks)
                .map(|c| c.spec);
            out.push(CanonicalSpec {
                spec,
                equivalent_to,
            });
        }
    }
    out
}

/// Why a potential column is absent from the design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DroppedColumn {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColumnLabel {
    /// Term (block) name, `intercept` for the constant.
    pub term: String,
    /// Category level; empty for the intercept and numeric terms.
    pub level: String,
}

impl ColumnLabel {
    pub fn name(&self) -> String {
        if self.level.is_empty() {
            self.term.clone()
        } else {
            format!("{}={}", self.term, self.level)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub spec: ModelSpec,
    /// Rows are students in cohort order; column 0 is the intercept.
    pub values: Array2<f64>,
    pub columns: Vec<ColumnLabel>,
    /// Block name to the column range it occupies.
    pub term_map: BTreeMap<String, Range<usize>>,
    /// Reference level chosen for each categorical block.
    pub reference_levels: BTreeMap<String, String>,
    pub dropped_columns: Vec<DroppedColumn>,
}

impl DesignMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(ColumnLabel::name).collect()
    }

    /// Build from raw values and names; the first column must be all ones.
    pub fn from_columns(spec: ModelSpec, values: Array2<f64>, names: Vec<String>) -> Result<Self> {
        if names.len() != values.ncols() {
            return Err(validation("column name count does not match matrix width"));
        }
        if values.ncols() == 0 || values.column(0).iter().any(|&v| v != 1.0) {
            return Err(validation("first design column must be the intercept"));
        }
        let columns = names
            .into_iter()
            .map(|n| match n.split_once('=') {
                Some((t, l)) => ColumnLabel {
                    term: t.to_string(),
                    level: l.to_string(),
                },
                None => ColumnLabel {
                    term: n,
                    level: String::new(),
                },
            })
            .collect();
        Ok(DesignMatrix {
            spec,
            values,
            columns,
            term_map: BTreeMap::new(),
            reference_levels: BTreeMap::new(),
            dropped_columns: Vec::new(),
        })
    }
}

/// Per-call overrides; the default picks each block's most frequent level
/// as reference, ties to the earliest level in natural order.
#[derive(Debug, Clone, Default)]
pub struct DesignOptions {
    pub reference_overrides: BTreeMap<Variable, String>,
}

pub fn build_design(spec: ModelSpec, cohort: &Cohort) -> Result<DesignMatrix> {
    build_design_with(spec, cohort, &DesignOptions::default())
}

fn reference_index(levels: &[LevelKey], counts: &[usize]) -> usize {
    let mut best = 0;
    for i in 1..levels.len() {
        if counts[i] > counts[best] {
            best = i;
        }
    }
    best
}

pub fn build_design_with(
    spec: ModelSpec,
    cohort: &Cohort,
    options: &DesignOptions,
) -> Result<DesignMatrix> {
    let n = cohort.n_students();
    let blocks = spec.blocks();

    enum Block<'a> {
        Numeric(Vec<f64>),
        Dummies { codes: &'a [u32], column_of: Vec<Option<usize>> },
    }

    let mut columns = vec![ColumnLabel {
        term: "intercept".into(),
        level: String::new(),
    }];
    let mut term_map = BTreeMap::new();
    term_map.insert("intercept".to_string(), 0..1);
    let mut reference_levels = BTreeMap::new();
    let mut dropped = Vec::new();
    let mut planned: Vec<(usize, Block)> = Vec::new();

    for var in blocks {
        let start = columns.len();
        if var.is_numeric() {
            let values = cohort.age_months();
            let first = values[0];
            if values.iter().all(|&v| v == first) {
                warn!("{}: numeric term is constant; dropped", var);
                dropped.push(DroppedColumn {
                    name: var.name().into(),
                    reason: "constant column".into(),
                });
            } else {
                columns.push(ColumnLabel {
                    term: var.name().into(),
                    level: String::new(),
                });
                planned.push((start, Block::Numeric(values)));
            }
        } else {
            let factor = cohort.factor(var).ok_or_else(|| {
                validation(format!(
                    "{} requires school composition ventiles, which were not derived \
                     (need at least n_composition_ventiles schools; lower it in the config)",
                    spec
                ))
            })?;
            let counts = factor.counts();
            if factor.levels.len() < 2 {
                let only = factor.levels.first().map(LevelKey::label).unwrap_or_default();
                warn!("{}: single level `{}` across the cohort; block dropped", var, only);
                dropped.push(DroppedColumn {
                    name: format!("{}={}", var.name(), only),
                    reason: "single-level categorical".into(),
                });
                term_map.insert(var.name().to_string(), start..start);
                continue;
            }
            let reference = match options.reference_overrides.get(&var) {
                Some(label) => factor
                    .levels
                    .iter()
                    .position(|l| &l.label() == label)
                    .ok_or_else(|| {
                        validation(format!("reference level `{label}` not found in {var}"))
                    })?,
                None => reference_index(&factor.levels, &counts),
            };
            reference_levels.insert(var.name().to_string(), factor.levels[reference].label());
            let mut column_of = vec![None; factor.levels.len()];
            for (i, level) in factor.levels.iter().enumerate() {
                if i == reference {
                    continue;
                }
                column_of[i] = Some(columns.len());
                columns.push(ColumnLabel {
                    term: var.name().into(),
                    level: level.label(),
                });
            }
            planned.push((
                start,
                Block::Dummies {
                    codes: &factor.codes,
                    column_of,
                },
            ));
        }
        term_map.insert(var.name().to_string(), start..columns.len());
    }

    let p = columns.len();
    let mut values = Array2::<f64>::zeros((n, p));
    values.column_mut(0).fill(1.0);
    for (start, block) in &planned {
        match block {
            Block::Numeric(v) => {
                values.column_mut(*start).assign(&ndarray::ArrayView1::from(v.as_slice()));
            }
            Block::Dummies { codes, column_of } => {
                for (i, &c) in codes.iter().enumerate() {
                    if let Some(col) = column_of[c as usize] {
                        values[[i, col]] = 1.0;
                    }
                }
            }
        }
    }

    Ok(DesignMatrix {
        spec,
        values,
        columns,
        term_map,
        reference_levels,
        dropped_columns: dropped,
    })
}
