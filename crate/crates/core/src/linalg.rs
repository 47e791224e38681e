//! Small dense kernel: sample-mean inner products, a row-major [`Matrix`],
//! and a rank-revealing minimum-norm least-squares solver.
//!
//! Inner products are normalized by the sample count, so `norm_sq` of a
//! residual is its mean squared value and `sqrt(norm_sq)` is directly an RMSE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative threshold below which a pivoted column is treated as linearly
/// dependent on the columns already factored.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dim(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::dim(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Builds an `n x columns.len()` matrix; every column must have length `n`.
    pub fn from_columns(n: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let mut m = Matrix::zeros(n, cols);
        for (j, c) in columns.iter().enumerate() {
            if c.len() != n {
                return Err(Error::dim(format!(
                    "column {j} has {} entries, expected {n}",
                    c.len()
                )));
            }
            for (i, &v) in c.iter().enumerate() {
                m.data[i * cols + j] = v;
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.cols).map(|j| self.column(j)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::dim(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rrow = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &r) in orow.iter_mut().zip(rrow) {
                    *o += a * r;
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::dim(format!(
                "cannot subtract {}x{} from {}x{}",
                rhs.rows, rhs.cols, self.rows, self.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }
}

/// `(1/N) * sum(u_i * v_i)`.
pub fn mean_inner(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::dim(format!(
            "vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    if u.is_empty() {
        return Err(Error::Empty("vector"));
    }
    Ok(mean_dot(u, v))
}

/// Mean squared entry of `u`.
pub fn norm_sq(u: &[f64]) -> Result<f64> {
    if u.is_empty() {
        return Err(Error::Empty("vector"));
    }
    Ok(mean_dot(u, u))
}

/// Unchecked hot-path version of [`mean_inner`]; callers guarantee equal,
/// non-zero lengths.
#[inline]
pub(crate) fn mean_dot(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    dot(u, v) / u.len() as f64
}

#[inline]
pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Minimum-norm solution of `min_beta || F - H beta ||`.
///
/// Uses Householder QR with column pivoting to find the numerical rank
/// (pivot magnitude relative to the largest column norm, see
/// [`RANK_TOLERANCE`]), followed by a complete orthogonal decomposition so
/// rank-deficient designs get the minimum-norm minimizer. A single-column
/// design reduces to the projection coefficient `<h, f> / <h, h>`.
pub fn solve_least_squares(h: &Matrix, f: &Matrix) -> Result<Matrix> {
    if h.rows() != f.rows() {
        return Err(Error::dim(format!(
            "design has {} rows, targets have {}",
            h.rows(),
            f.rows()
        )));
    }
    if h.rows() == 0 || h.cols() == 0 {
        return Err(Error::Empty("design matrix"));
    }
    h.ensure_finite("design matrix")?;
    f.ensure_finite("target matrix")?;

    let l = h.cols();
    let m = f.cols();

    if l == 1 {
        let col = h.column(0);
        let hh = mean_dot(&col, &col);
        let mut beta = Matrix::zeros(1, m);
        if hh > 0.0 {
            for q in 0..m {
                beta.set(0, q, mean_dot(&col, &f.column(q)) / hh);
            }
        }
        return Ok(beta);
    }

    let mut a = h.columns();
    let mut b = f.columns();
    let n = h.rows();
    let steps = n.min(l);
    let mut perm: Vec<usize> = (0..l).collect();
    let mut r_diag = vec![0.0; steps];
    let mut rank = 0;
    let mut lead = 0.0;

    for k in 0..steps {
        let (jmax, nmax) = (k..l)
            .map(|j| (j, tail_norm(&a[j], k)))
            .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if k == 0 {
            lead = nmax;
        }
        if nmax <= RANK_TOLERANCE * lead || nmax == 0.0 {
            break;
        }
        a.swap(k, jmax);
        perm.swap(k, jmax);

        let alpha = if a[k][k] > 0.0 { -nmax } else { nmax };
        let mut v = a[k][k..].to_vec();
        v[0] -= alpha;
        let vv = dot(&v, &v);
        if vv > 0.0 {
            for col in a.iter_mut().skip(k + 1).chain(b.iter_mut()) {
                reflect(&v, vv, &mut col[k..]);
            }
        }
        a[k][k] = alpha;
        for x in a[k][k + 1..].iter_mut() {
            *x = 0.0;
        }
        r_diag[k] = alpha;
        rank = k + 1;
    }

    let mut beta = Matrix::zeros(l, m);
    if rank == 0 {
        return Ok(beta);
    }

    // T = [R11 R12], rank x l, stored by rows.
    let t: Vec<Vec<f64>> = (0..rank)
        .map(|i| (0..l).map(|j| if j < i { 0.0 } else { a[j][i] }).collect())
        .collect();

    let solutions: Vec<Vec<f64>> = if rank == l {
        b.iter()
            .map(|bc| back_substitute(&t, &bc[..rank]))
            .collect()
    } else {
        min_norm_underdetermined(&t, &b, rank, l)
    };

    for (q, xp) in solutions.iter().enumerate() {
        for (k, &v) in xp.iter().enumerate() {
            beta.set(perm[k], q, v);
        }
    }
    debug_assert!(r_diag[..rank].iter().all(|d| *d != 0.0));
    Ok(beta)
}

fn tail_norm(col: &[f64], from: usize) -> f64 {
    col[from..].iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Applies `I - 2 v v^T / (v^T v)` to `x` in place.
fn reflect(v: &[f64], vv: f64, x: &mut [f64]) {
    let s = 2.0 * dot(v, x) / vv;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= s * vi;
    }
}

/// Solves the square upper-triangular system formed by the leading block of `t`.
fn back_substitute(t: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let r = y.len();
    let mut x = vec![0.0; r];
    for i in (0..r).rev() {
        let mut s = y[i];
        for j in i + 1..r {
            s -= t[i][j] * x[j];
        }
        x[i] = s / t[i][i];
    }
    x
}

/// Minimum-norm solution of `T x = y` for a full-row-rank `rank x l` upper
/// trapezoidal `T`, via Householder QR of `T^T = Z [S; 0]`.
fn min_norm_underdetermined(
    t: &[Vec<f64>],
    b: &[Vec<f64>],
    rank: usize,
    l: usize,
) -> Vec<Vec<f64>> {
    // Columns of T^T are the rows of T.
    let mut tt: Vec<Vec<f64>> = t.to_vec();
    let mut reflectors: Vec<(usize, Vec<f64>, f64)> = Vec::with_capacity(rank);
    for k in 0..rank {
        let nrm = tail_norm(&tt[k], k);
        let alpha = if tt[k][k] > 0.0 { -nrm } else { nrm };
        let mut v = tt[k][k..].to_vec();
        v[0] -= alpha;
        let vv = dot(&v, &v);
        if vv > 0.0 {
            for col in tt.iter_mut().skip(k + 1) {
                reflect(&v, vv, &mut col[k..]);
            }
            reflectors.push((k, v, vv));
        }
        tt[k][k] = alpha;
    }
    // S is upper triangular with S[i][j] = tt[j][i] for i <= j; solve S^T u = y.
    b.iter()
        .map(|bc| {
            let y = &bc[..rank];
            let mut u = vec![0.0; l];
            for i in 0..rank {
                let mut s = y[i];
                for j in 0..i {
                    s -= tt[i][j] * u[j];
                }
                u[i] = s / tt[i][i];
            }
            for (k, v, vv) in reflectors.iter().rev() {
                reflect(v, *vv, &mut u[*k..]);
            }
            u
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Matrix {
        Matrix::new(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn mean_inner_examples() {
        assert_eq!(mean_inner(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mean_inner(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(mean_inner(&[1.0, 0.0], &[1.0, 1.0]).unwrap(), 0.5);
    }

    #[test]
    fn mean_inner_errors() {
        assert!(matches!(
            mean_inner(&[1.0], &[1.0, 2.0]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(mean_inner(&[], &[]), Err(Error::Empty(_))));
        assert!(matches!(norm_sq(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn norm_sq_examples() {
        assert_eq!(norm_sq(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(norm_sq(&[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(norm_sq(&[3.0, 4.0]).unwrap(), 12.5);
    }

    #[test]
    fn identity_design() {
        let h = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let beta = solve_least_squares(&h, &col(&[1.0, 2.0])).unwrap();
        assert!((beta.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((beta.get(1, 0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn duplicate_columns_split_evenly() {
        let h = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let beta = solve_least_squares(&h, &col(&[1.0, 1.0])).unwrap();
        assert!((beta.get(0, 0) - 0.5).abs() < 1e-12, "{beta:?}");
        assert!((beta.get(1, 0) - 0.5).abs() < 1e-12, "{beta:?}");
    }

    #[test]
    fn rank_deficient_tall_design_matches_ridge_limit() {
        // Third column = first + second; ridge solution with tiny epsilon is
        // the minimum-norm minimizer.
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                let a = (i as f64 * 0.7).sin();
                let b = (i as f64 * 1.3).cos();
                vec![a, b, a + b]
            })
            .collect();
        let h = Matrix::from_rows(&rows).unwrap();
        let f = col(&[0.3, -1.0, 2.0, 0.1, 0.5, -0.2]);
        let beta = solve_least_squares(&h, &f).unwrap();

        let hth = h.transpose().matmul(&h).unwrap();
        let htf = h.transpose().matmul(&f).unwrap();
        let eps = 1e-9;
        let mut a = hth.to_rows();
        for (i, r) in a.iter_mut().enumerate() {
            r[i] += eps;
        }
        let ridge = gauss_solve(a, htf.column(0));
        for (i, r) in ridge.iter().enumerate() {
            assert!((beta.get(i, 0) - r).abs() < 1e-6, "{beta:?} vs {ridge:?}");
        }
    }

    #[test]
    fn zero_design_gives_zero_beta() {
        let h = Matrix::zeros(3, 2);
        let beta = solve_least_squares(&h, &col(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(beta, Matrix::zeros(2, 1));
    }

    #[test]
    fn solver_rejects_bad_input() {
        let h = Matrix::zeros(3, 2);
        assert!(matches!(
            solve_least_squares(&h, &col(&[1.0, 2.0])),
            Err(Error::Dimension(_))
        ));
        let bad = col(&[1.0, f64::NAN, 3.0]);
        assert!(matches!(
            solve_least_squares(&h, &bad),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn wide_design_min_norm() {
        // One equation, three unknowns: x1 + 2 x2 + 3 x3 = 14 -> x = 14/14 * (1,2,3)
        let h = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let beta = solve_least_squares(&h, &col(&[14.0])).unwrap();
        for (i, want) in [1.0, 2.0, 3.0].iter().enumerate() {
            assert!((beta.get(i, 0) - want).abs() < 1e-12);
        }
    }

    fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
                .unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        prop::collection::vec(-10.0f64..10.0, rows * cols)
            .prop_map(move |v| Matrix::new(rows, cols, v).unwrap())
    }

    fn shape() -> impl Strategy<Value = (usize, usize)> {
        (1usize..12).prop_flat_map(|cols| (cols..30, Just(cols)))
    }

    proptest! {
        #[test]
        fn mean_inner_is_symmetric_and_linear(
            u in prop::collection::vec(-5.0f64..5.0, 1..50),
            a in -3.0f64..3.0,
        ) {
            let v: Vec<f64> = u.iter().rev().copied().collect();
            prop_assert_eq!(mean_inner(&u, &v).unwrap(), mean_inner(&v, &u).unwrap());
            let au: Vec<f64> = u.iter().map(|x| a * x).collect();
            let lhs = mean_inner(&au, &v).unwrap();
            let rhs = a * mean_inner(&u, &v).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            prop_assert!(norm_sq(&u).unwrap() >= 0.0);
        }

        #[test]
        fn residual_is_orthogonal_to_columns(
            (h, f) in shape().prop_flat_map(|(n, l)| (matrix(n, l), matrix(n, 2)))
        ) {
            let beta = solve_least_squares(&h, &f).unwrap();
            let r = f.sub(&h.matmul(&beta).unwrap()).unwrap();
            for j in 0..h.cols() {
                for q in 0..f.cols() {
                    let c = mean_inner(&h.column(j), &r.column(q)).unwrap();
                    prop_assert!(c.abs() <= 1e-8 * 100.0, "column {} target {}: {}", j, q, c);
                }
            }
        }

        #[test]
        fn no_perturbation_does_better(
            (h, f, dir) in shape().prop_flat_map(|(n, l)| (matrix(n, l), matrix(n, 1), matrix(l, 1)))
        ) {
            let beta = solve_least_squares(&h, &f).unwrap();
            let sse = |b: &Matrix| {
                let r = f.sub(&h.matmul(b).unwrap()).unwrap();
                norm_sq(r.as_slice()).unwrap()
            };
            let moved = beta.sub(&dir.scale(1e-3)).unwrap();
            prop_assert!(sse(&beta) <= sse(&moved) * (1.0 + 1e-10) + 1e-12);
        }
    }
}
