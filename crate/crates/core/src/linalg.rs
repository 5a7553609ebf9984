//! Small dense linear algebra for the ridge regressions.
//!
//! Matrices are row-major `f64` buffers. Only what the regression engine
//! needs is provided: symmetric rank-one updates, Cholesky factorization,
//! triangular solves and a sparse-aware quadratic form.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    /// `scale * I_n`.
    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = scale;
        }
        m
    }

    pub fn from_rows(n: usize, data: Vec<f64>) -> Result<Self> {
        check_dim(n * n, data.len())?;
        Ok(Self { n, data })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// `self += alpha * v v^T`, touching only the nonzero entries of `v`.
    pub fn add_outer(&mut self, v: &[f64], alpha: f64) {
        debug_assert_eq!(v.len(), self.n);
        let nz = nonzero_indices(v);
        for &i in &nz {
            let vi = alpha * v[i];
            let row = i * self.n;
            for &j in &nz {
                self.data[row + j] += vi * v[j];
            }
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.n);
        let nz = nonzero_indices(v);
        (0..self.n)
            .map(|i| {
                let row = self.row(i);
                nz.iter().map(|&j| row[j] * v[j]).sum()
            })
            .collect()
    }

    pub fn mul(&self, other: &SquareMatrix) -> SquareMatrix {
        debug_assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    /// `v^T M v` summed over the nonzero support of `v` only.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.n);
        let nz = nonzero_indices(v);
        let mut acc = 0.0;
        for &i in &nz {
            let row = self.row(i);
            let mut s = 0.0;
            for &j in &nz {
                s += row[j] * v[j];
            }
            acc += v[i] * s;
        }
        acc
    }

    /// Frobenius norm of `self * other - I`.
    pub fn identity_residual(&self, other: &SquareMatrix) -> f64 {
        let p = self.mul(other);
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                let target = if i == j { 1.0 } else { 0.0 };
                let d = p.get(i, j) - target;
                acc += d * d;
            }
        }
        libm::sqrt(acc)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| libm::fabs(self.get(i, j) - self.get(j, i)) <= tol))
    }

    /// Symmetric Sherman–Morrison update of an inverse: given `self = A^{-1}`,
    /// overwrite with `(A + v v^T)^{-1}`.
    pub fn sherman_morrison_update(&mut self, v: &[f64]) {
        let av = self.mul_vec(v);
        let denom = 1.0 + dot(v, &av);
        let nz = nonzero_indices(&av);
        let n = self.n;
        for &i in &nz {
            let ai = av[i] / denom;
            for &j in &nz {
                self.data[i * n + j] -= ai * av[j];
            }
        }
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    l: SquareMatrix,
}

impl Cholesky {
    pub fn factor(a: &SquareMatrix) -> Result<Self> {
        let n = a.dim();
        let mut l = SquareMatrix::zeros(n);
        for j in 0..n {
            let mut diag = a.get(j, j);
            for k in 0..j {
                let v = l.get(j, k);
                diag -= v * v;
            }
            if !(diag > 0.0) {
                return Err(Error::NotPositiveDefinite);
            }
            let ljj = libm::sqrt(diag);
            l.set(j, j, ljj);
            for i in j + 1..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / ljj);
            }
        }
        Ok(Self { l })
    }

    pub fn factor_matrix(&self) -> &SquareMatrix {
        &self.l
    }

    /// Solves `L z = b`, skipping the leading zeros of `b`.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.dim();
        let mut z = vec![0.0; n];
        let start = b.iter().position(|&x| x != 0.0).unwrap_or(n);
        for i in start..n {
            let row = self.l.row(i);
            let mut s = b[i];
            for k in start..i {
                s -= row[k] * z[k];
            }
            z[i] = s / row[i];
        }
        z
    }

    /// Solves `L^T x = z`.
    pub fn backward(&self, z: &[f64]) -> Vec<f64> {
        let n = self.l.dim();
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in i + 1..n {
                s -= self.l.get(k, i) * x[k];
            }
            x[i] = s / self.l.get(i, i);
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(b))
    }

    pub fn inverse(&self) -> SquareMatrix {
        let n = self.l.dim();
        let mut inv = SquareMatrix::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e);
            e[j] = 0.0;
            for i in 0..n {
                inv.set(i, j, col[i]);
            }
        }
        // Symmetrize to remove round-off asymmetry.
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (inv.get(i, j) + inv.get(j, i));
                inv.set(i, j, v);
                inv.set(j, i, v);
            }
        }
        inv
    }

    /// `b^T A^{-1} b` as `||L^{-1} b||^2`.
    pub fn inverse_quadratic_form(&self, b: &[f64]) -> f64 {
        self.forward(b).iter().map(|z| z * z).sum()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn nonzero_indices(v: &[f64]) -> Vec<usize> {
    v.iter()
        .enumerate()
        .filter_map(|(i, &x)| (x != 0.0).then_some(i))
        .collect()
}
