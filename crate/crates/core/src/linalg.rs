//! Dense row-major `f64` matrices and a one-sided Jacobi SVD.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match {rows}x{cols}");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Matrix::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `None` when inner dimensions differ.
    pub fn matmul(&self, rhs: &Matrix) -> Option<Matrix> {
        if self.cols != rhs.rows {
            return None;
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Some(out)
    }

    fn zip_with(&self, rhs: &Matrix, f: impl Fn(f64, f64) -> f64) -> Option<Matrix> {
        if self.shape() != rhs.shape() {
            return None;
        }
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect();
        Some(Matrix::from_vec(self.rows, self.cols, data))
    }

    pub fn add(&self, rhs: &Matrix) -> Option<Matrix> {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Option<Matrix> {
        self.zip_with(rhs, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.data.iter().map(|v| v * factor).collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, rhs: &Matrix) -> f64 {
        assert_eq!(self.shape(), rhs.shape());
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Thin SVD `A = U diag(sigma) V^T` with `sigma` non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    /// m x p, orthonormal columns (p = min(m, n))
    pub u: Matrix,
    pub sigma: Vec<f64>,
    /// n x p, orthonormal columns
    pub v: Matrix,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SvdError {
    pub sweeps: usize,
}

const MAX_SWEEPS: usize = 80;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Gram-Schmidt a standard basis vector against `basis` to fill a missing
/// direction.
fn orthonormal_complement(basis: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = 0.0;
    for e in 0..dim {
        let mut v = vec![0.0; dim];
        v[e] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let proj = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let n = norm(&v);
        if n > best_norm {
            best_norm = n;
            best = Some(v);
        }
        if n > 0.5 {
            break;
        }
    }
    let v = best.expect("dim > basis length");
    v.iter().map(|x| x / best_norm).collect()
}

/// One-sided (Hestenes) Jacobi SVD. Column pairs are rotated until mutually
/// orthogonal to working precision; singular values are the final column norms.
pub fn svd(a: &Matrix) -> Result<Svd, SvdError> {
    if a.rows() < a.cols() {
        let t = svd(&a.transpose())?;
        return Ok(Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        });
    }
    let (m, n) = a.shape();
    let mut work: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = n < 2;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(SvdError { sweeps });
        }
        sweeps += 1;
        converged = true;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&work[p], &work[p]);
                let beta = dot(&work[q], &work[q]);
                let gamma = dot(&work[p], &work[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut work, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
    }

    let mut order: Vec<(usize, f64)> = work.iter().map(|c| norm(c)).enumerate().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let sigma_max = order.first().map_or(0.0, |o| o.1);
    let negligible = sigma_max * (m.max(n) as f64) * f64::EPSILON;

    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    for &(j, s) in &order {
        let u = if s > negligible && s > 0.0 {
            work[j].iter().map(|x| x / s).collect()
        } else {
            orthonormal_complement(&ucols, m)
        };
        ucols.push(u);
        vs.push(vcols[j].clone());
        sigma.push(s);
    }
    Ok(Svd {
        u: Matrix::from_fn(m, n, |i, j| ucols[j][i]),
        sigma,
        v: Matrix::from_fn(n, n, |i, j| vs[j][i]),
    })
}

/// Top-`r` singular triplets. `r` is clipped to `min(m, n)`. Each kept pair of
/// singular vectors is sign-normalised so the largest-magnitude entry of the
/// `U` column is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let (m, r) = self.u.shape();
        let us = Matrix::from_fn(m, r, |i, j| self.u[(i, j)] * self.sigma[j]);
        us.matmul(&self.v.transpose()).expect("inner dimension r")
    }
}

pub fn truncated_svd(a: &Matrix, r: usize) -> Result<TruncatedSvd, SvdError> {
    let full = svd(a)?;
    let r = r.min(full.sigma.len());
    let (m, n) = a.shape();
    let mut u = Matrix::zeros(m, r);
    let mut v = Matrix::zeros(n, r);
    for j in 0..r {
        let col = full.u.column(j);
        let pivot = col
            .iter()
            .enumerate()
            .fold(
                (0, 0.0f64),
                |best, (i, &x)| if x.abs() > best.1.abs() { (i, x) } else { best },
            )
            .0;
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..m {
            u[(i, j)] = sign * full.u[(i, j)];
        }
        for i in 0..n {
            v[(i, j)] = sign * full.v[(i, j)];
        }
    }
    Ok(TruncatedSvd {
        u,
        sigma: full.sigma[..r].to_vec(),
        v,
    })
}

/// Number of singular values above `1e-8 * sigma_1`.
pub fn numerical_rank(a: &Matrix) -> Result<usize, SvdError> {
    let s = svd(a)?.sigma;
    let top = s.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&x| x > 1e-8 * top).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn gram_deviation(q: &Matrix) -> f64 {
        let g = q.transpose().matmul(q).unwrap();
        g.max_abs_diff(&Matrix::identity(q.cols()))
    }

    #[test]
    fn matmul_small() {
        let up = Matrix::from_rows(&[vec![1.0], vec![0.0]]);
        let down = Matrix::from_rows(&[vec![2.0, 3.0]]);
        assert_eq!(
            up.matmul(&down).unwrap(),
            Matrix::from_rows(&[vec![2.0, 3.0], vec![0.0, 0.0]])
        );
        assert!(down.matmul(&down).is_none());
    }

    #[test]
    fn svd_of_diagonal() {
        let t = truncated_svd(&Matrix::diag(&[3.0, 1.0]), 1).unwrap();
        assert_eq!(t.sigma, [3.0]);
        assert_eq!(t.reconstruct(), Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 0.0]]));
    }

    #[test]
    fn svd_reconstructs_tall_and_wide() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (m, n) in [(8, 6), (6, 8), (5, 5), (1, 4), (4, 1)] {
            let a = random(m, n, &mut rng);
            let s = svd(&a).unwrap();
            assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
            let full = TruncatedSvd {
                u: s.u.clone(),
                sigma: s.sigma.clone(),
                v: s.v.clone(),
            };
            assert!(full.reconstruct().max_abs_diff(&a) < 1e-12, "{m}x{n}");
            assert!(gram_deviation(&s.u) < 1e-12);
            assert!(gram_deviation(&s.v) < 1e-12);
        }
    }

    #[test]
    fn rank_deficient_input_keeps_orthonormal_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(7, 2, &mut rng).matmul(&random(2, 5, &mut rng)).unwrap();
        assert_eq!(numerical_rank(&a).unwrap(), 2);
        let t = truncated_svd(&a, 4).unwrap();
        assert!(gram_deviation(&t.u) < 1e-10);
        assert!(gram_deviation(&t.v) < 1e-10);
        assert!(t.reconstruct().max_abs_diff(&a) < 1e-12);
        assert_eq!(numerical_rank(&Matrix::zeros(3, 3)).unwrap(), 0);
    }

    #[test]
    fn sign_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(6, 4, &mut rng);
        let t = truncated_svd(&a, 3).unwrap();
        let neg = truncated_svd(&a.scale(-1.0), 3).unwrap();
        for j in 0..3 {
            let col = t.u.column(j);
            let max = col
                .iter()
                .cloned()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(max > 0.0);
            // -A has the same U columns after normalisation and negated V columns
            for i in 0..6 {
                assert!((t.u[(i, j)] - neg.u[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clip_rank_to_dimensions() {
        let a = Matrix::diag(&[2.0, 1.0]);
        assert_eq!(truncated_svd(&a, 10).unwrap().rank(), 2);
    }
}
