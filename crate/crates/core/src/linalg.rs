//! Householder least squares for tall dummy-coded designs.
//!
//! Rows are folded into a p x p triangle in fixed-size chunks, so the cost is
//! O(n p^2) with O(chunk p) scratch. Rank is then decided on the triangle by
//! a second Householder pass with limited column pivoting: a column whose
//! remaining norm falls to `RANK_TOL` times the largest column norm is moved
//! behind all others and excluded. Columns keep their original order
//! otherwise, so when two columns are collinear the later one is dropped.

use ndarray::{Array2, ArrayView2};

pub const RANK_TOL: f64 = 1e-10;
const CHUNK_ROWS: usize = 256;

/// Upper-triangular R (row-major p x p) and Q^T y from a row-streamed QR.
pub(crate) struct Triangle {
    pub p: usize,
    pub r: Vec<f64>,
    pub qty: Vec<f64>,
}

pub(crate) fn triangularize(x: ArrayView2<f64>, y: &[f64]) -> Triangle {
    let (n, p) = x.dim();
    let mut r = vec![0.0; p * p];
    let mut qty = vec![0.0; p];
    let mut buf = vec![0.0; p * CHUNK_ROWS];
    let mut ybuf = vec![0.0; CHUNK_ROWS];

    let mut start = 0;
    while start < n {
        let c = CHUNK_ROWS.min(n - start);
        // column-major chunk: column j lives at buf[j*c .. (j+1)*c]
        for i in 0..c {
            let row = x.row(start + i);
            for (j, &v) in row.iter().enumerate() {
                buf[j * c + i] = v;
            }
            ybuf[i] = y[start + i];
        }
        let chunk = &mut buf[..p * c];
        let yc = &mut ybuf[..c];

        for k in 0..p {
            let (left, right) = chunk.split_at_mut((k + 1) * c);
            let v = &left[k * c..];
            let sigma: f64 = v.iter().map(|a| a * a).sum();
            if sigma == 0.0 {
                continue;
            }
            let rkk = r[k * p + k];
            let norm = (rkk * rkk + sigma).sqrt();
            let alpha = if rkk >= 0.0 { -norm } else { norm };
            let v0 = rkk - alpha;
            let scale = 2.0 / (v0 * v0 + sigma);

            for (jj, col) in right.chunks_exact_mut(c).enumerate() {
                let j = k + 1 + jj;
                let dot = v0 * r[k * p + j] + dot(v, col);
                let f = scale * dot;
                r[k * p + j] -= f * v0;
                axpy(-f, v, col);
            }
            let dot_y = v0 * qty[k] + dot(v, yc);
            let f = scale * dot_y;
            qty[k] -= f * v0;
            axpy(-f, v, yc);

            r[k * p + k] = alpha;
        }
        start += c;
    }
    Triangle { p, r, qty }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Rank-revealed least-squares solution.
#[derive(Debug, Clone, PartialEq)]
pub struct QrSolution {
    /// Coefficients aligned to the original columns; 0 for dropped columns.
    pub coefficients: Vec<f64>,
    pub retained: Vec<bool>,
    pub rank: usize,
    /// Retained original column indices in pivot order.
    kept: Vec<usize>,
    /// Leading rank x rank triangle (row-major) in pivot order.
    t: Vec<f64>,
}

impl QrSolution {
    /// (X^T X)^-1 over retained columns, embedded in a p x p matrix with
    /// zero rows and columns for dropped ones.
    pub fn xtx_inverse(&self) -> Array2<f64> {
        let p = self.coefficients.len();
        let k = self.rank;
        let tinv = upper_inverse(&self.t, k);
        let mut out = Array2::zeros((p, p));
        for a in 0..k {
            for b in a..k {
                // (T^-1 T^-T)[a][b] = sum_m Tinv[a][m] Tinv[b][m], m >= max(a,b)
                let mut s = 0.0;
                for m in b..k {
                    s += tinv[a * k + m] * tinv[b * k + m];
                }
                out[[self.kept[a], self.kept[b]]] = s;
                out[[self.kept[b], self.kept[a]]] = s;
            }
        }
        out
    }

    pub fn dropped(&self) -> Vec<usize> {
        (0..self.retained.len()).filter(|&j| !self.retained[j]).collect()
    }
}

fn upper_inverse(t: &[f64], k: usize) -> Vec<f64> {
    let mut inv = vec![0.0; k * k];
    for col in 0..k {
        // solve T x = e_col by back substitution
        for i in (0..=col).rev() {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for m in i + 1..=col {
                s -= t[i * k + m] * inv[m * k + col];
            }
            inv[i * k + col] = s / t[i * k + i];
        }
    }
    inv
}

pub(crate) fn solve_triangle(tri: &Triangle) -> QrSolution {
    let p = tri.p;
    let mut a = tri.r.clone();
    let mut b = tri.qty.clone();
    let col_norm = |a: &[f64], j: usize, from: usize| -> f64 {
        (from..p).map(|i| a[i * p + j] * a[i * p + j]).sum::<f64>().sqrt()
    };
    let scale = (0..p).map(|j| col_norm(&a, j, 0)).fold(0.0, f64::max);
    let tol = RANK_TOL * scale;
    let mut perm: Vec<usize> = (0..p).collect();

    let mut k = 0;
    let mut last = p;
    while k < last {
        let nrm = col_norm(&a, k, k);
        if nrm <= tol {
            for i in 0..p {
                a[i * p + k..(i + 1) * p].rotate_left(1);
            }
            perm[k..].rotate_left(1);
            last -= 1;
            continue;
        }
        let akk = a[k * p + k];
        let alpha = if akk >= 0.0 { -nrm } else { nrm };
        let v0 = akk - alpha;
        let vtv = v0 * v0 + (k + 1..p).map(|i| a[i * p + k] * a[i * p + k]).sum::<f64>();
        if vtv > 0.0 {
            let scale = 2.0 / vtv;
            let vk = |a: &[f64], i: usize| if i == k { v0 } else { a[i * p + k] };
            for j in k + 1..p {
                let d: f64 = (k..p).map(|i| vk(&a, i) * a[i * p + j]).sum();
                let f = scale * d;
                for i in k..p {
                    let vi = vk(&a, i);
                    a[i * p + j] -= f * vi;
                }
            }
            let d: f64 = (k..p).map(|i| vk(&a, i) * b[i]).sum();
            let f = scale * d;
            for i in k..p {
                b[i] -= f * vk(&a, i);
            }
        }
        a[k * p + k] = alpha;
        for i in k + 1..p {
            a[i * p + k] = 0.0;
        }
        k += 1;
    }

    let rank = last;
    let mut t = vec![0.0; rank * rank];
    for i in 0..rank {
        for j in i..rank {
            t[i * rank + j] = a[i * p + j];
        }
    }
    let mut beta = vec![0.0; rank];
    for i in (0..rank).rev() {
        let mut s = b[i];
        for j in i + 1..rank {
            s -= t[i * rank + j] * beta[j];
        }
        beta[i] = s / t[i * rank + i];
    }
    let mut coefficients = vec![0.0; p];
    let mut retained = vec![false; p];
    for (i, &col) in perm[..rank].iter().enumerate() {
        coefficients[col] = beta[i];
        retained[col] = true;
    }
    QrSolution {
        coefficients,
        retained,
        rank,
        kept: perm[..rank].to_vec(),
        t,
    }
}

/// Least-squares solve of `x b = y` with rank detection.
pub fn qr_least_squares(x: ArrayView2<f64>, y: &[f64]) -> QrSolution {
    solve_triangle(&triangularize(x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn exact_solution_small() {
        let x = array![[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]];
        let y = [1.0, 3.0, 5.0];
        let s = qr_least_squares(x.view(), &y);
        assert_eq!(s.rank, 2);
        assert!((s.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((s.coefficients[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_column_is_dropped_last() {
        let x = array![[1.0, 0.0, 0.0], [1.0, 1.0, 1.0], [1.0, 2.0, 2.0], [1.0, 5.0, 5.0]];
        let y = [1.0, 2.0, 2.5, 7.0];
        let s = qr_least_squares(x.view(), &y);
        assert_eq!(s.rank, 2);
        assert_eq!(s.retained, vec![true, true, false]);
        assert_eq!(s.coefficients[2], 0.0);
    }

    #[test]
    fn spans_multiple_chunks() {
        let n = 3 * CHUNK_ROWS + 17;
        let x = Array2::from_shape_fn((n, 3), |(i, j)| match j {
            0 => 1.0,
            1 => (i % 7) as f64,
            _ => ((i * 13) % 11) as f64 * 0.5,
        });
        let y: Vec<f64> = (0..n)
            .map(|i| 0.5 + 2.0 * x[[i, 1]] - 1.5 * x[[i, 2]])
            .collect();
        let s = qr_least_squares(x.view(), &y);
        assert!((s.coefficients[0] - 0.5).abs() < 1e-10);
        assert!((s.coefficients[1] - 2.0).abs() < 1e-10);
        assert!((s.coefficients[2] + 1.5).abs() < 1e-10);
    }

    #[test]
    fn xtx_inverse_matches_direct() {
        let x = array![[1.0, 2.0], [1.0, 3.0], [1.0, 7.0], [1.0, -1.0]];
        let s = qr_least_squares(x.view(), &[0.0; 4]);
        let inv = s.xtx_inverse();
        let xtx = x.t().dot(&x);
        let prod = xtx.dot(&inv);
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((prod[[i, j]] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_column_dropped() {
        let x = array![[1.0, 0.0, 1.0], [1.0, 0.0, 2.0], [1.0, 0.0, 4.0]];
        let s = qr_least_squares(x.view(), &[1.0, 2.0, 3.0]);
        assert_eq!(s.retained, vec![true, false, true]);
        assert_eq!(s.dropped(), vec![1]);
    }
}
