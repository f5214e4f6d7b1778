//! Cross-model comparison of school effect tables.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::design::{Family, ModelSpec, PriorTreatment};
use crate::effects::{EffectCategory, EffectTable};
use crate::error::{validation, Result};

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(validation("correlation inputs differ in length"));
    }
    if a.len() < 3 {
        return Err(validation("correlation needs at least 3 pairs"));
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(validation("correlation input has zero variance"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]).then(i.cmp(&j)));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    pearson(&average_ranks(a), &average_ranks(b))
        .map_err(|_| validation("rank correlation input has zero rank variance"))
}

/// Effect vectors of two tables aligned by school id.
fn aligned(a: &EffectTable, b: &EffectTable) -> Result<(Vec<f64>, Vec<f64>)> {
    let bmap: BTreeMap<&str, f64> = b.effects.iter().map(|e| (e.school_id.as_str(), e.effect)).collect();
    if a.effects.len() != bmap.len() {
        return Err(validation(format!(
            "{} and {} cover different school sets",
            a.spec, b.spec
        )));
    }
    let mut va = Vec::with_capacity(a.effects.len());
    let mut vb = Vec::with_capacity(a.effects.len());
    for e in &a.effects {
        let other = bmap.get(e.school_id.as_str()).ok_or_else(|| {
            validation(format!(
                "school `{}` is in {} but not {}",
                e.school_id, a.spec, b.spec
            ))
        })?;
        va.push(e.effect);
        vb.push(*other);
    }
    Ok((va, vb))
}

pub fn table_pearson(a: &EffectTable, b: &EffectTable) -> Result<f64> {
    let (x, y) = aligned(a, b)?;
    pearson(&x, &y)
}

pub fn table_spearman(a: &EffectTable, b: &EffectTable) -> Result<f64> {
    let (x, y) = aligned(a, b)?;
    spearman(&x, &y)
}

/// Pearson below the diagonal, Spearman above, ones on it.
pub fn correlation_matrix(tables: &[&EffectTable]) -> Result<Vec<Vec<f64>>> {
    let k = tables.len();
    let mut m = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in 0..i {
            let (x, y) = aligned(tables[i], tables[j])?;
            m[i][j] = pearson(&x, &y)?;
            m[j][i] = spearman(&x, &y)?;
        }
    }
    Ok(m)
}

/// Percent of schools with Moderate or Large (significant, |effect| >= 0.2) effects.
pub fn moderate_or_large_share(table: &EffectTable) -> f64 {
    let hits = table
        .effects
        .iter()
        .filter(|e| matches!(e.category, EffectCategory::Moderate | EffectCategory::Large))
        .count();
    100.0 * hits as f64 / table.effects.len().max(1) as f64
}

/// School attributes carried into scatter exports for subgroup highlighting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchoolFlags {
    pub school_type: String,
    /// In the highest school-mean prior achievement group.
    pub top_prior_ventile: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterRow {
    pub school_id: String,
    pub effect_a: f64,
    pub effect_b: f64,
    pub rank_a: f64,
    pub rank_b: f64,
    pub school_type: String,
    pub top_prior_ventile: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterExport {
    pub model_a: String,
    pub model_b: String,
    pub pearson: f64,
    pub spearman: f64,
    pub rows: Vec<ScatterRow>,
}

pub fn scatter_export(
    a: &EffectTable,
    b: &EffectTable,
    flags: &BTreeMap<String, SchoolFlags>,
) -> Result<ScatterExport> {
    let (x, y) = aligned(a, b)?;
    let rx = average_ranks(&x);
    let ry = average_ranks(&y);
    let rows = a
        .effects
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let f = flags.get(&e.school_id);
            ScatterRow {
                school_id: e.school_id.clone(),
                effect_a: x[i],
                effect_b: y[i],
                rank_a: rx[i],
                rank_b: ry[i],
                school_type: f.map(|f| f.school_type.clone()).unwrap_or_default(),
                top_prior_ventile: f.is_some_and(|f| f.top_prior_ventile),
            }
        })
        .collect();
    Ok(ScatterExport {
        model_a: a.spec.label(),
        model_b: b.spec.label(),
        pearson: pearson(&x, &y)?,
        spearman: pearson(&rx, &ry)?,
        rows,
    })
}

/// One line of a variant plot: a value per family, Raw..CVA-X.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantLine {
    pub treatment: PriorTreatment,
    pub values: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantAnalysis {
    pub moderate_or_large_line: Vec<VariantLine>,
    pub correlation_to_original_line: Vec<VariantLine>,
}

/// Moderate-or-large shares and Pearson correlation with the same family's
/// prior-included table, for every treatment.
pub fn variant_analysis(grid: &BTreeMap<ModelSpec, &EffectTable>) -> Result<VariantAnalysis> {
    let get = |f: Family, t: PriorTreatment| {
        grid.get(&ModelSpec::new(f, t))
            .copied()
            .ok_or_else(|| validation(format!("variant grid is missing {}", ModelSpec::new(f, t))))
    };
    let mut shares = Vec::new();
    let mut corrs = Vec::new();
    for t in PriorTreatment::ALL {
        let mut s = [0.0; 5];
        let mut c = [0.0; 5];
        for (i, f) in Family::ALL.into_iter().enumerate() {
            let table = get(f, t)?;
            let original = get(f, PriorTreatment::Included)?;
            s[i] = moderate_or_large_share(table);
            c[i] = if f == Family::Raw || t == PriorTreatment::Included {
                1.0
            } else {
                table_pearson(table, original)?
            };
        }
        shares.push(VariantLine { treatment: t, values: s });
        corrs.push(VariantLine { treatment: t, values: c });
    }
    Ok(VariantAnalysis {
        moderate_or_large_line: shares,
        correlation_to_original_line: corrs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryShareRow {
    pub model: String,
    pub none_or_very_small: f64,
    pub small: f64,
    pub moderate: f64,
    pub large: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub model_labels: Vec<String>,
    pub pearson_matrix: Vec<Vec<f64>>,
    pub spearman_matrix: Vec<Vec<f64>>,
    pub category_share_table: Vec<CategoryShareRow>,
    pub moderate_or_large_shares: BTreeMap<String, f64>,
    pub variant_analysis: Option<VariantAnalysis>,
    pub scatter_exports: Vec<ScatterExport>,
}

impl ComparisonReport {
    /// Dual-triangle layout: Pearson below the diagonal, Spearman above.
    pub fn dual_triangle(&self) -> Vec<Vec<f64>> {
        let k = self.model_labels.len();
        (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| match i.cmp(&j) {
                        std::cmp::Ordering::Greater => self.pearson_matrix[i][j],
                        std::cmp::Ordering::Less => self.spearman_matrix[i][j],
                        std::cmp::Ordering::Equal => 1.0,
                    })
                    .collect()
            })
            .collect()
    }
}

/// Compare `tables` in the given order. When the full 20-cell grid is
/// present the matrix and adjacent-pair scatters use the five
/// prior-included models and variant lines are added.
pub fn compare_tables(
    tables: &[(String, &EffectTable)],
    flags: &BTreeMap<String, SchoolFlags>,
) -> Result<ComparisonReport> {
    if tables.len() < 2 {
        return Err(validation("comparison needs at least two effect tables"));
    }
    let mut grid: BTreeMap<ModelSpec, &EffectTable> = BTreeMap::new();
    for (_, t) in tables {
        grid.entry(t.spec).or_insert(*t);
    }
    let full_grid = grid.len() == 20;
    let focus: Vec<(String, &EffectTable)> = if full_grid {
        Family::ALL
            .into_iter()
            .map(|f| {
                let s = ModelSpec::new(f, PriorTreatment::Included);
                (s.label(), grid[&s])
            })
            .collect()
    } else {
        tables.to_vec()
    };

    let refs: Vec<&EffectTable> = focus.iter().map(|(_, t)| *t).collect();
    let k = refs.len();
    let mut pearson_m = vec![vec![1.0; k]; k];
    let mut spearman_m = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in 0..i {
            let (x, y) = aligned(refs[i], refs[j])?;
            let p = pearson(&x, &y)?;
            let s = spearman(&x, &y)?;
            pearson_m[i][j] = p;
            pearson_m[j][i] = p;
            spearman_m[i][j] = s;
            spearman_m[j][i] = s;
        }
    }

    let category_share_table = tables
        .iter()
        .map(|(label, t)| CategoryShareRow {
            model: label.clone(),
            none_or_very_small: t.category_shares[0],
            small: t.category_shares[1],
            moderate: t.category_shares[2],
            large: t.category_shares[3],
        })
        .collect();
    let moderate_or_large_shares = tables
        .iter()
        .map(|(label, t)| (label.clone(), moderate_or_large_share(t)))
        .collect();

    let scatter_exports = focus
        .windows(2)
        .map(|w| scatter_export(w[1].1, w[0].1, flags))
        .collect::<Result<Vec<_>>>()?;

    let variant = if full_grid {
        Some(variant_analysis(&grid)?)
    } else {
        None
    };

    Ok(ComparisonReport {
        model_labels: focus.iter().map(|(l, _)| l.clone()).collect(),
        pearson_matrix: pearson_m,
        spearman_matrix: spearman_m,
        category_share_table,
        moderate_or_large_shares,
        variant_analysis: variant,
        scatter_exports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effects::{confidence_intervals, SchoolEffect};
    use proptest::prelude::*;

    fn table(spec: ModelSpec, values: &[f64]) -> EffectTable {
        let mut effects: Vec<SchoolEffect> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| SchoolEffect {
                school_id: format!("S{i:03}"),
                n: 100,
                effect: v,
                ci_low: v,
                ci_high: v,
                category: EffectCategory::NoneOrVerySmall,
                significant: false,
                shrunk_effect: None,
            })
            .collect();
        confidence_intervals(&mut effects, 0.5).unwrap();
        EffectTable::from_effects(spec, effects)
    }

    fn va() -> ModelSpec {
        ModelSpec::new(Family::Va, PriorTreatment::Included)
    }

    #[test]
    fn pearson_examples() {
        let x = [0.3, -1.2, 2.5, 0.7];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 3.0 / (2.0f64 * 42.0 / 9.0).sqrt()).abs() < 1e-15);
        assert!((r - 0.98198).abs() < 1e-5);
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn spearman_examples() {
        let x = [0.3, -1.2, 2.5, 0.7, 1.1];
        let ex: Vec<f64> = x.iter().map(|v: &f64| v.exp()).collect();
        assert!((spearman(&x, &ex).unwrap() - 1.0).abs() < 1e-15);
        let rev: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((spearman(&x, &rev).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn matrix_of_identical_tables_is_all_ones() {
        let t = table(va(), &[0.1, -0.3, 0.5, 0.0, 0.2]);
        let m = correlation_matrix(&[&t, &t, &t]).unwrap();
        assert!(m.iter().flatten().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn two_table_matrix() {
        let a = table(va(), &[0.1, -0.3, 0.5, 0.0, 0.2]);
        let b = table(va(), &[0.2, -0.1, 0.4, 0.1, -0.2]);
        let m = correlation_matrix(&[&a, &b]).unwrap();
        assert_eq!(m[1][0], pearson(&a.effect_values(), &b.effect_values()).unwrap());
        assert_eq!(m[0][1], spearman(&a.effect_values(), &b.effect_values()).unwrap());
    }

    #[test]
    fn mismatched_schools_rejected() {
        let a = table(va(), &[0.1, -0.3, 0.5, 0.0]);
        let b = table(va(), &[0.1, -0.3, 0.5]);
        assert!(correlation_matrix(&[&a, &b]).is_err());
    }

    #[test]
    fn moderate_share_examples() {
        let none = table(va(), &[0.0, 0.01, -0.02, 0.03]);
        assert_eq!(moderate_or_large_share(&none), 0.0);
        // n = 100, sd 0.5 -> half-width 0.098; only 0.3 is moderate
        let one = table(va(), &[0.3, 0.01, -0.02, 0.15]);
        assert_eq!(moderate_or_large_share(&one), 25.0);
    }

    #[test]
    fn scatter_of_identical_tables_lies_on_diagonal() {
        let t = table(va(), &[0.1, -0.3, 0.5]);
        let mut flags = BTreeMap::new();
        flags.insert(
            "S002".to_string(),
            SchoolFlags { school_type: "grammar".into(), top_prior_ventile: true },
        );
        let s = scatter_export(&t, &t, &flags).unwrap();
        assert_eq!(s.rows.len(), 3);
        assert!(s.rows.iter().all(|r| r.effect_a == r.effect_b && r.rank_a == r.rank_b));
        let mut ranks: Vec<f64> = s.rows.iter().map(|r| r.rank_a).collect();
        ranks.sort_by(f64::total_cmp);
        assert_eq!(ranks, vec![1.0, 2.0, 3.0]);
        assert!(s.rows[2].top_prior_ventile && !s.rows[0].top_prior_ventile);
    }

    fn full_grid(values: &[f64]) -> Vec<EffectTable> {
        let mut out = Vec::new();
        for f in Family::ALL {
            for t in PriorTreatment::ALL {
                let shift = (f as usize * 4 + t as usize) as f64;
                let v: Vec<f64> = values
                    .iter()
                    .enumerate()
                    .map(|(i, x)| if f == Family::Raw { *x } else { x + 0.01 * shift * ((i * 7) % 5) as f64 })
                    .collect();
                out.push(table(ModelSpec::new(f, t), &v));
            }
        }
        out
    }

    #[test]
    fn variant_lines_shape_and_unit_originals() {
        let tables = full_grid(&[0.1, -0.3, 0.5, 0.0, 0.25, -0.6, 0.05]);
        let grid: BTreeMap<ModelSpec, &EffectTable> = tables.iter().map(|t| (t.spec, t)).collect();
        let va = variant_analysis(&grid).unwrap();
        assert_eq!(va.moderate_or_large_line.len(), 4);
        assert_eq!(va.correlation_to_original_line.len(), 4);
        let included = &va.correlation_to_original_line[0];
        assert_eq!(included.treatment, PriorTreatment::Included);
        assert_eq!(included.values, [1.0; 5]);
        let raw_shares: Vec<f64> = va.moderate_or_large_line.iter().map(|l| l.values[0]).collect();
        assert!(raw_shares.windows(2).all(|w| w[0] == w[1]));

        let mut partial = grid.clone();
        partial.remove(&ModelSpec::new(Family::CvaB, PriorTreatment::Both));
        assert!(variant_analysis(&partial).is_err());
    }

    #[test]
    fn compare_full_grid_uses_originals() {
        let tables = full_grid(&[0.1, -0.3, 0.5, 0.0, 0.25, -0.6, 0.05]);
        let labelled: Vec<(String, &EffectTable)> =
            tables.iter().map(|t| (t.spec.label(), t)).collect();
        let r = compare_tables(&labelled, &BTreeMap::new()).unwrap();
        assert_eq!(r.model_labels.len(), 5);
        assert_eq!(r.scatter_exports.len(), 4);
        assert_eq!(r.scatter_exports[0].model_a, "VA:included");
        assert_eq!(r.scatter_exports[0].model_b, "Raw:included");
        assert_eq!(r.category_share_table.len(), 20);
        assert!(r.variant_analysis.is_some());
        for row in &r.category_share_table {
            let s = row.none_or_very_small + row.small + row.moderate + row.large;
            assert!((s - 100.0).abs() < 0.01);
        }
    }

    /// Independent O(n^2) average rank: 1 + #below + (#equal - 1)/2.
    fn brute_ranks(x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|&v| {
                let below = x.iter().filter(|&&w| w < v).count() as f64;
                let equal = x.iter().filter(|&&w| w == v).count() as f64;
                1.0 + below + (equal - 1.0) / 2.0
            })
            .collect()
    }

    proptest! {
        #[test]
        fn spearman_equals_pearson_of_brute_ranks(
            pairs in prop::collection::vec((0u8..6, 0u8..6), 3..50),
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            let ra = brute_ranks(&a);
            let rb = brute_ranks(&b);
            prop_assert_eq!(&average_ranks(&a), &ra);
            match (spearman(&a, &b), pearson(&ra, &rb)) {
                (Ok(s), Ok(p)) => prop_assert_eq!(s.to_bits(), p.to_bits()),
                (Err(_), Err(_)) => {}
                other => prop_assert!(false, "mismatch {:?}", other),
            }
        }

        #[test]
        fn correlations_affine_invariant(
            xs in prop::collection::vec(-5.0f64..5.0, 4..40),
            ys in prop::collection::vec(-5.0f64..5.0, 4..40),
            scale in 0.1f64..10.0, shift in -3.0f64..3.0,
        ) {
            let n = xs.len().min(ys.len());
            let (x, y) = (&xs[..n], &ys[..n]);
            if let Ok(r) = pearson(x, y) {
                let tx: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
                prop_assert!((pearson(&tx, y).unwrap() - r).abs() < 1e-12);
                prop_assert!((spearman(&tx, y).unwrap() - spearman(x, y).unwrap()).abs() < 1e-12);
            }
        }
    }
}
