//! Dense complex matrices, Cholesky factorization with a jitter ladder, and
//! Hermitian solves.

use num_complex::Complex64;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
    hermitian: bool,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
            hermitian: false,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m.hermitian = true;
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self {
            rows,
            cols,
            data,
            hermitian: false,
        }
    }

    /// Builds a Hermitian matrix from its lower triangle; `f(i, j)` is only
    /// called for `j <= i`.
    pub fn hermitian_from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                if i == j {
                    m[(i, i)] = Complex64::new(v.re, 0.0);
                } else {
                    m[(i, j)] = v;
                    m[(j, i)] = v.conj();
                }
            }
        }
        m.hermitian = true;
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Whether the matrix was constructed as (or marked) Hermitian.
    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    /// Checks the Hermitian property numerically and sets the flag on success.
    pub fn mark_hermitian(&mut self, tol: f64) -> Result<()> {
        if !self.is_square() {
            return Err(Error::config("non-square matrix cannot be Hermitian"));
        }
        for i in 0..self.rows {
            for j in 0..=i {
                if (self[(i, j)] - self[(j, i)].conj()).norm() > tol {
                    return Err(Error::config(format!("matrix is not Hermitian at ({i}, {j})")));
                }
            }
        }
        self.hermitian = true;
        Ok(())
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn conj_transpose(&self) -> ComplexMatrix {
        let mut out = ComplexMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj());
        out.hermitian = self.hermitian;
        out
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.cols, "dimension mismatch in mul_vec");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn matmul(&self, other: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.cols, other.rows, "dimension mismatch in matmul");
        let mut out = ComplexMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn sub(&self, other: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
            hermitian: self.hermitian && other.hermitian,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;

    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Largest diagonal jitter tried before giving up.
pub const MAX_JITTER: f64 = 1e-6;
/// First non-zero rung of the jitter ladder.
pub const MIN_JITTER: f64 = 1e-9;

/// Lower-triangular Cholesky factor together with the jitter that was
/// actually added to the diagonal.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: ComplexMatrix,
    jitter: f64,
}

impl Cholesky {
    pub fn lower(&self) -> &ComplexMatrix {
        &self.lower
    }

    pub fn into_lower(self) -> ComplexMatrix {
        self.lower
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.lower.rows
    }

    /// `L · w` for a vector `w`, using the triangular structure.
    pub fn mul_lower(&self, w: &[Complex64]) -> Vec<Complex64> {
        let n = self.dim();
        assert_eq!(w.len(), n);
        (0..n)
            .map(|i| self.lower.row(i)[..=i].iter().zip(w).map(|(l, x)| l * x).sum())
            .collect()
    }

    /// Solves `(L Lᴴ) y = b`.
    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.dim();
        assert_eq!(b.len(), n, "dimension mismatch in solve");
        let l = &self.lower;
        // forward: L u = b
        let mut u = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[(i, k)] * u[k];
            }
            u[i] = s / l[(i, i)].re;
        }
        // backward: Lᴴ y = u
        let mut y = vec![Complex64::new(0.0, 0.0); n];
        for i in (0..n).rev() {
            let mut s = u[i];
            for k in i + 1..n {
                s -= l[(k, i)].conj() * y[k];
            }
            y[i] = s / l[(i, i)].re;
        }
        y
    }
}

fn try_cholesky(h: &ComplexMatrix, jitter: f64) -> std::result::Result<ComplexMatrix, usize> {
    let n = h.rows;
    let mut l = ComplexMatrix::zeros(n, n);
    for j in 0..n {
        let mut diag = h[(j, j)].re + jitter;
        for k in 0..j {
            diag -= l[(j, k)].norm_sqr();
        }
        if !(diag > 0.0) {
            return Err(j);
        }
        let d = diag.sqrt();
        l[(j, j)] = Complex64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = h[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Cholesky factor of `h + jitter·I`.
///
/// On a non-positive pivot the jitter is raised (×10, starting from
/// [`MIN_JITTER`] when zero was requested) up to [`MAX_JITTER`]. Any repair
/// beyond the requested jitter is logged.
pub fn cholesky_psd(h: &ComplexMatrix, jitter: f64) -> Result<Cholesky> {
    if !h.is_square() {
        return Err(Error::config(format!(
            "cholesky of non-square {}x{} matrix",
            h.rows, h.cols
        )));
    }
    if !(jitter >= 0.0) {
        return Err(Error::config(format!("negative jitter {jitter}")));
    }
    let mut current = jitter;
    loop {
        match try_cholesky(h, current) {
            Ok(lower) => {
                if current > jitter {
                    log::debug!("cholesky succeeded after jitter repair {current:e}");
                }
                return Ok(Cholesky { lower, jitter: current });
            }
            Err(pivot) => {
                let next = if current == 0.0 { MIN_JITTER } else { current * 10.0 };
                if next > MAX_JITTER * (1.0 + 1e-9) {
                    return Err(Error::Singular { pivot, jitter: current });
                }
                log::debug!("non-positive pivot {pivot} at jitter {current:e}, retrying");
                current = next;
            }
        }
    }
}

/// Solves `h · y = b` for Hermitian positive-definite `h`.
pub fn hermitian_solve(h: &ComplexMatrix, b: &[Complex64]) -> Result<Vec<Complex64>> {
    if b.len() != h.rows {
        return Err(Error::config("right-hand side length does not match matrix"));
    }
    Ok(cholesky_psd(h, 0.0)?.solve(b))
}
