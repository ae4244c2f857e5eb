//! Small dense linear algebra: row-major matrices, Cholesky, triangular solves.

use crate::error::{Error, Result};

/// Jitter ladder added to the diagonal when a factorization fails.
pub const JITTER_LADDER: [f64; 5] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.rows.min(self.cols) {
            self.data[i * self.cols + i] += v;
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular Cholesky factor `L` with `L L^T = A + jitter I`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
    jitter: f64,
}

impl Cholesky {
    /// Factorizes without added jitter.
    pub fn new(a: &Matrix) -> Option<Self> {
        factor(a.clone()).map(|l| Cholesky { l, jitter: 0.0 })
    }

    /// Factorizes, escalating diagonal jitter along [`JITTER_LADDER`] on failure.
    pub fn with_jitter(a: &Matrix) -> Result<Self> {
        if let Some(c) = Self::new(a) {
            return Ok(c);
        }
        for &jitter in &JITTER_LADDER {
            let mut b = a.clone();
            b.add_diagonal(jitter);
            if let Some(l) = factor(b) {
                return Ok(Cholesky { l, jitter });
            }
        }
        Err(Error::Numerical(format!(
            "cholesky of {}x{} matrix failed at jitter {}",
            a.rows(),
            a.cols(),
            JITTER_LADDER[JITTER_LADDER.len() - 1]
        )))
    }

    pub fn factor(&self) -> &Matrix {
        &self.l
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    /// Solves `L v = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut v = b.to_vec();
        for i in 0..n {
            let row = self.l.row(i);
            let s = dot(&row[..i], &v[..i]);
            v[i] = (v[i] - s) / row[i];
        }
        v
    }

    /// Solves `L^T x = v`.
    pub fn solve_upper(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut x = v.to_vec();
        for i in (0..n).rev() {
            let row = self.l.row(i);
            x[i] /= row[i];
            let xi = x[i];
            for (xk, &lik) in x[..i].iter_mut().zip(&row[..i]) {
                *xk -= lik * xi;
            }
        }
        x
    }

    /// Solves `(L L^T) x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// Solves `L V = B` for a matrix right-hand side.
    pub fn solve_lower_matrix(&self, b: &Matrix) -> Matrix {
        let n = self.dim();
        assert_eq!(b.rows(), n);
        let mut v = b.clone();
        let cols = v.cols();
        let mut acc = vec![0.0; cols];
        for i in 0..n {
            acc.copy_from_slice(v.row(i));
            let lrow = self.l.row(i);
            for k in 0..i {
                let lik = lrow[k];
                if lik == 0.0 {
                    continue;
                }
                for (a, &vk) in acc.iter_mut().zip(v.row(k)) {
                    *a -= lik * vk;
                }
            }
            let d = lrow[i];
            for (dst, a) in v.row_mut(i).iter_mut().zip(&acc) {
                *dst = a / d;
            }
        }
        v
    }

    /// `(L L^T)^{-1}`.
    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        // L^{-1} column by column via the identity, then Linv^T Linv
        let linv = self.solve_lower_matrix(&Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 }));
        let mut out = Matrix::zeros(n, n);
        for k in 0..n {
            let r = linv.row(k);
            for i in 0..=k {
                let a = r[i];
                if a == 0.0 {
                    continue;
                }
                for j in 0..=i {
                    out.data[i * n + j] += a * r[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                out.data[j * n + i] = out.data[i * n + j];
            }
        }
        out
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l.get(i, i).ln()).sum::<f64>()
    }

    /// `L z`, used to turn standard normal draws into correlated samples.
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        (0..self.dim()).map(|i| dot(&self.l.row(i)[..=i], &z[..=i])).collect()
    }
}

fn factor(mut a: Matrix) -> Option<Matrix> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let mut rowj = vec![0.0; n];
    for j in 0..n {
        rowj[..j].copy_from_slice(&a.row(j)[..j]);
        let d = a.get(j, j) - dot(&rowj[..j], &rowj[..j]);
        if !(d > 0.0 && d.is_finite()) {
            return None;
        }
        let d = d.sqrt();
        a.set(j, j, d);
        a.row_mut(j)[j + 1..].fill(0.0);
        for i in j + 1..n {
            let rowi = a.row_mut(i);
            let s = dot(&rowi[..j], &rowj[..j]);
            rowi[j] = (rowi[j] - s) / d;
        }
    }
    Some(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spd(n: usize, seed: &[f64]) -> Matrix {
        let b = Matrix::from_fn(n, n, |i, j| seed[(i * n + j) % seed.len()] + if i == j { 0.5 } else { 0.0 });
        let mut a = b.matmul(&b.transpose());
        a.add_diagonal(0.1);
        a
    }

    #[test]
    fn factor_reproduces_matrix() {
        let a = spd(5, &[0.3, -1.2, 0.7, 2.0, 0.1, -0.4, 0.9]);
        let c = Cholesky::new(&a).unwrap();
        let l = c.factor();
        let r = l.matmul(&l.transpose());
        for (x, y) in r.data().iter().zip(a.data()) {
            assert!((x - y).abs() < 1e-10);
        }
        for i in 0..5 {
            for j in i + 1..5 {
                assert_eq!(l.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let a = Matrix::from_fn(3, 3, |_, _| 1.0);
        assert!(Cholesky::new(&a).is_none());
        let c = Cholesky::with_jitter(&a).unwrap();
        assert!(c.jitter() > 0.0 && c.jitter() <= 1e-4);
    }

    #[test]
    fn indefinite_matrix_fails() {
        let a = Matrix::from_rows(2, 2, vec![1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(Cholesky::with_jitter(&a), Err(Error::Numerical(_))));
    }

    proptest! {
        #[test]
        fn solves_agree(seed in proptest::collection::vec(-2.0f64..2.0, 7..30), n in 1usize..8) {
            let a = spd(n, &seed);
            let c = Cholesky::new(&a).unwrap();
            let b: Vec<f64> = (0..n).map(|i| seed[i % seed.len()] * 3.0 - 1.0).collect();
            let x = c.solve(&b);
            for i in 0..n {
                let r = dot(a.row(i), &x);
                prop_assert!((r - b[i]).abs() < 1e-8 * (1.0 + b[i].abs()));
            }
            let inv = c.inverse();
            let id = a.matmul(&inv);
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((id.get(i, j) - want).abs() < 1e-7);
                }
            }
            let bm = Matrix::from_fn(n, 3, |i, j| b[i] + j as f64);
            let vm = c.solve_lower_matrix(&bm);
            for j in 0..3 {
                let col: Vec<f64> = (0..n).map(|i| bm.get(i, j)).collect();
                let v = c.solve_lower(&col);
                for i in 0..n {
                    prop_assert!((vm.get(i, j) - v[i]).abs() < 1e-10);
                }
            }
        }
    }
}
