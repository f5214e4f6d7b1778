//! Least-squares fits with fit statistics and cluster-robust covariance.

use std::collections::BTreeMap;

use log::debug;
use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::design::{ColumnLabel, DesignMatrix, DroppedColumn, ModelSpec};
use crate::error::{estimation, validation, Result};
use crate::linalg::{qr_least_squares, QrSolution};

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub columns: Vec<ColumnLabel>,
    /// Aligned to `columns`; dropped columns carry 0.
    pub coefficients: Vec<f64>,
    pub retained: Vec<bool>,
    /// Columns excluded by the design builder or by rank detection.
    pub dropped_columns: Vec<DroppedColumn>,
    pub residuals: Vec<f64>,
    pub fitted_values: Vec<f64>,
    pub r_squared: f64,
    pub adjusted_r_squared: f64,
    /// Sample SD of the residuals.
    pub residual_sd: f64,
    pub rank: usize,
    pub n: usize,
    /// CR1 sandwich over all columns (zero rows/columns for dropped ones).
    pub cluster_robust_cov: Option<Array2<f64>>,
}

impl FittedModel {
    pub fn cluster_robust_se(&self) -> Option<Vec<f64>> {
        self.cluster_robust_cov
            .as_ref()
            .map(|v| (0..v.nrows()).map(|j| v[[j, j]].max(0.0).sqrt()).collect())
    }

    pub fn variance_of_residuals(&self) -> f64 {
        self.residual_sd * self.residual_sd
    }

    /// Coefficient table rows: term, level, estimate, cluster-robust SE.
    /// Dropped columns report `None` for both numbers.
    pub fn coefficient_table(&self) -> Vec<CoefficientRow> {
        let se = self.cluster_robust_se();
        self.columns
            .iter()
            .enumerate()
            .map(|(j, c)| CoefficientRow {
                term: c.term.clone(),
                level: c.level.clone(),
                estimate: self.retained[j].then_some(self.coefficients[j]),
                cluster_robust_se: if self.retained[j] {
                    se.as_ref().map(|s| s[j])
                } else {
                    None
                },
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientRow {
    pub term: String,
    pub level: String,
    pub estimate: Option<f64>,
    pub cluster_robust_se: Option<f64>,
}

/// 1 - (1 - R^2)(n - 1)/(n - p - 1) with `p` non-intercept columns.
pub fn adjusted_r_squared(r_squared: f64, n: usize, p: usize) -> Result<f64> {
    if n <= p + 1 {
        return Err(estimation(format!(
            "adjusted R-squared needs n > p + 1 (n = {n}, p = {p})"
        )));
    }
    Ok(1.0 - (1.0 - r_squared) * (n as f64 - 1.0) / (n as f64 - p as f64 - 1.0))
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

pub fn fit_least_squares(design: &DesignMatrix, outcome: &[f64]) -> Result<FittedModel> {
    fit_internal(design, outcome).map(|(fit, _)| fit)
}

/// Fit and attach the cluster-robust covariance for `clusters` (one label
/// per row, typically the school id).
pub fn fit_with_clusters<K: Ord>(
    design: &DesignMatrix,
    outcome: &[f64],
    clusters: &[K],
) -> Result<FittedModel> {
    let (mut fit, qr) = fit_internal(design, outcome)?;
    let cov = sandwich(design.values.view(), &fit.residuals, clusters, &qr)?;
    fit.cluster_robust_cov = Some(cov);
    Ok(fit)
}

fn fit_internal(design: &DesignMatrix, outcome: &[f64]) -> Result<(FittedModel, QrSolution)> {
    let (n, p) = design.values.dim();
    if outcome.len() != n {
        return Err(validation(format!(
            "outcome length {} does not match design rows {n}",
            outcome.len()
        )));
    }
    if n < p {
        return Err(estimation(format!("fewer rows ({n}) than design columns ({p})")));
    }
    let qr = qr_least_squares(design.values.view(), outcome);
    if n <= qr.rank {
        return Err(estimation(format!(
            "fewer rows ({n}) than needed for {} retained columns plus residual",
            qr.rank
        )));
    }

    let fitted_values: Vec<f64> = design
        .values
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(&qr.coefficients).map(|(x, b)| x * b).sum())
        .collect();
    let residuals: Vec<f64> = outcome
        .iter()
        .zip(&fitted_values)
        .map(|(y, f)| y - f)
        .collect();

    let mean_y = outcome.iter().sum::<f64>() / n as f64;
    let tss: f64 = outcome.iter().map(|y| (y - mean_y) * (y - mean_y)).sum();
    if tss == 0.0 {
        return Err(estimation("outcome has zero variance"));
    }
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let r_squared = (1.0 - rss / tss).clamp(0.0, 1.0);
    let adjusted = adjusted_r_squared(r_squared, n, qr.rank - 1)?;

    let mut dropped_columns = design.dropped_columns.clone();
    for j in qr.dropped() {
        debug!("{}: column {} is collinear; dropped", design.spec, design.columns[j].name());
        dropped_columns.push(DroppedColumn {
            name: design.columns[j].name(),
            reason: "linearly dependent on earlier columns".into(),
        });
    }

    let fit = FittedModel {
        spec: design.spec,
        columns: design.columns.clone(),
        coefficients: qr.coefficients.clone(),
        retained: qr.retained.clone(),
        dropped_columns,
        residual_sd: sample_sd(&residuals),
        residuals,
        fitted_values,
        r_squared,
        adjusted_r_squared: adjusted,
        rank: qr.rank,
        n,
        cluster_robust_cov: None,
    };
    Ok((fit, qr))
}

/// CR1 cluster-robust covariance,
/// c (X'X)^-1 (sum_g X_g' r_g r_g' X_g) (X'X)^-1 with
/// c = G/(G-1) * (n-1)/(n-k), k the retained column count.
pub fn cluster_robust_covariance<K: Ord>(
    design: &DesignMatrix,
    residuals: &[f64],
    clusters: &[K],
) -> Result<Array2<f64>> {
    let y = vec![0.0; design.nrows()];
    let qr = qr_least_squares(design.values.view(), &y);
    sandwich(design.values.view(), residuals, clusters, &qr)
}

fn sandwich<K: Ord>(
    x: ArrayView2<f64>,
    residuals: &[f64],
    clusters: &[K],
    qr: &QrSolution,
) -> Result<Array2<f64>> {
    let (n, p) = x.dim();
    if residuals.len() != n || clusters.len() != n {
        return Err(validation("residuals and clusters must have one entry per row"));
    }
    let mut ids: BTreeMap<&K, usize> = BTreeMap::new();
    for k in clusters {
        let next = ids.len();
        ids.entry(k).or_insert(next);
    }
    let g = ids.len();
    if g < 2 {
        return Err(estimation("cluster-robust covariance needs at least 2 clusters"));
    }
    let rank = qr.rank;
    if n <= rank {
        return Err(estimation("no residual degrees of freedom"));
    }

    // per-cluster score sums, accumulated in row order
    let mut scores = vec![0.0f64; g * p];
    for (i, (row, &r)) in x.rows().into_iter().zip(residuals).enumerate() {
        let gi = ids[&clusters[i]];
        let s = &mut scores[gi * p..(gi + 1) * p];
        for ((sj, &xj), &keep) in s.iter_mut().zip(row.iter()).zip(&qr.retained) {
            if keep {
                *sj += xj * r;
            }
        }
    }
    // clusters visited in key order so the sum is independent of row order
    let mut meat = Array2::<f64>::zeros((p, p));
    for &gi in ids.values() {
        let s = &scores[gi * p..(gi + 1) * p];
        for a in 0..p {
            if s[a] == 0.0 {
                continue;
            }
            for b in a..p {
                meat[[a, b]] += s[a] * s[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            meat[[a, b]] = meat[[b, a]];
        }
    }

    let bread = qr.xtx_inverse();
    let c = (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n as f64 - rank as f64));
    let mut v = bread.dot(&meat).dot(&bread) * c;
    for a in 0..p {
        for b in 0..a {
            let m = 0.5 * (v[[a, b]] + v[[b, a]]);
            v[[a, b]] = m;
            v[[b, a]] = m;
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{Family, PriorTreatment};
    use ndarray::{array, Array2};

    fn spec() -> ModelSpec {
        ModelSpec::new(Family::Va, PriorTreatment::Included)
    }

    fn design(values: Array2<f64>) -> DesignMatrix {
        let names = (0..values.ncols())
            .map(|j| if j == 0 { "intercept".to_string() } else { format!("x{j}") })
            .collect();
        DesignMatrix::from_columns(spec(), values, names).unwrap()
    }

    #[test]
    fn intercept_only_on_standardized_outcome() {
        let y = crate::cohort::standardize_outcome(&[3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0]).unwrap();
        let d = design(Array2::ones((8, 1)));
        let fit = fit_least_squares(&d, &y).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-15);
        assert!((fit.variance_of_residuals() - 1.0).abs() < 1e-12);
        assert!(fit.adjusted_r_squared.abs() < 1e-12);
        assert!(fit.r_squared.abs() < 1e-12);
    }

    #[test]
    fn outcome_equal_to_dummy_is_perfect_fit() {
        let d = design(array![[1.0, 0.0], [1.0, 1.0], [1.0, 1.0], [1.0, 0.0], [1.0, 1.0]]);
        let y = [0.0, 1.0, 1.0, 0.0, 1.0];
        let fit = fit_least_squares(&d, &y).unwrap();
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-14));
        assert!((fit.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn adjusted_r_squared_examples() {
        assert_eq!(adjusted_r_squared(0.0, 50, 0).unwrap(), 0.0);
        assert_eq!(adjusted_r_squared(1.0, 50, 7).unwrap(), 1.0);
        let v = adjusted_r_squared(0.5, 101, 10).unwrap();
        assert!((v - (1.0 - 0.5 * 100.0 / 90.0)).abs() < 1e-15);
        assert!((v - 0.4444).abs() < 1e-4);
        assert!(adjusted_r_squared(0.5, 11, 10).is_err());
    }

    #[test]
    fn residuals_are_outcome_minus_fitted() {
        let d = design(array![[1.0, 0.3], [1.0, 1.7], [1.0, 2.2], [1.0, 3.9], [1.0, 5.0]]);
        let y = [1.0, 2.5, 2.0, 4.5, 4.0];
        let fit = fit_least_squares(&d, &y).unwrap();
        for i in 0..5 {
            assert_eq!(fit.residuals[i], y[i] - fit.fitted_values[i]);
        }
    }

    #[test]
    fn all_zero_residuals_give_zero_covariance() {
        let d = design(array![[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0]]);
        let v = cluster_robust_covariance(&d, &[0.0; 4], &["a", "a", "b", "b"]).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn two_clusters_intercept_only_by_hand() {
        let r = [1.0, 2.0, 0.5, -1.0, -2.0, -0.5];
        let clusters = ["A", "A", "A", "B", "B", "B"];
        let d = design(Array2::ones((6, 1)));
        let v = cluster_robust_covariance(&d, &r, &clusters).unwrap();
        // meat = 3.5^2 + 3.5^2 = 24.5; bread^2 = 1/36; c = 2/1 * 5/5 = 2
        let expected = 2.0 * 24.5 / 36.0;
        assert!((v[[0, 0]] - expected).abs() < 1e-14);
    }

    #[test]
    fn one_cluster_is_an_error() {
        let d = design(Array2::ones((3, 1)));
        assert!(cluster_robust_covariance(&d, &[1.0, -1.0, 0.0], &[1, 1, 1]).is_err());
    }

    #[test]
    fn duplicate_column_recorded_and_residuals_unchanged() {
        let base = array![[1.0, 0.5], [1.0, 1.5], [1.0, 2.0], [1.0, 4.0], [1.0, 4.5]];
        let y = [1.0, 2.0, 2.2, 5.0, 4.1];
        let f1 = fit_least_squares(&design(base.clone()), &y).unwrap();
        let mut dup = Array2::zeros((5, 3));
        dup.slice_mut(ndarray::s![.., ..2]).assign(&base);
        dup.column_mut(2).assign(&base.column(1));
        let f2 = fit_least_squares(&design(dup), &y).unwrap();
        assert_eq!(f2.rank, 2);
        assert_eq!(f2.dropped_columns.len(), 1);
        assert_eq!(f2.dropped_columns[0].name, "x2");
        for (a, b) in f1.residuals.iter().zip(&f2.residuals) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn coefficient_table_marks_dropped() {
        let d = design(array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]);
        let fit = fit_with_clusters(&d, &[1.0, 2.0, 3.0], &[0, 1, 1]).unwrap();
        let t = fit.coefficient_table();
        assert!(t[0].estimate.is_some() && t[0].cluster_robust_se.is_some());
        assert!(t[1].estimate.is_none() && t[1].cluster_robust_se.is_none());
    }
}
