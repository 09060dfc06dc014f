//! Dense complex matrices and the handful of numerical kernels the lab
//! needs: products, power iteration for the largest singular value, a cyclic
//! Jacobi eigensolver for Hermitian matrices, and a scaling-and-squaring
//! matrix exponential.
//!
//! Everything here is deterministic: the power iteration starts from a
//! fixed-seed pseudorandom vector and all parallelism is across independent
//! output rows, so results are bitwise reproducible regardless of the
//! thread count.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Fixed seed for the power-iteration start vector.
const POWER_ITERATION_SEED: u64 = 0x726f_655f_6e6f_726d;

/// Work threshold (in multiply-accumulate count) above which matrix
/// products fan out over the rayon pool.
const PAR_THRESHOLD: usize = 1 << 18;

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix { rows, cols, data: vec![Complex64::ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMatrix { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "expected {}x{} = {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(CMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn adjoint(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.get(i, j).conj();
            }
        }
        out
    }

    pub fn add(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "add: shape mismatch");
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect();
        CMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "sub: shape mismatch");
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        CMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn scaled(&self, c: Complex64) -> CMatrix {
        let data = self.data.iter().map(|a| a * c).collect();
        CMatrix { rows: self.rows, cols: self.cols, data }
    }

    /// `self * rhs`, parallel over output rows for large products.
    pub fn mul(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, rhs.rows, "mul: inner dimension mismatch");
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        let inner = self.cols;
        let ocols = rhs.cols;
        let work = self.rows * inner * ocols;
        let body = |(i, orow): (usize, &mut [Complex64])| {
            let arow = &self.data[i * inner..(i + 1) * inner];
            for (k, &aik) in arow.iter().enumerate() {
                if aik == Complex64::ZERO {
                    continue;
                }
                let brow = &rhs.data[k * ocols..(k + 1) * ocols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += aik * b;
                }
            }
        };
        if work >= PAR_THRESHOLD {
            out.data.par_chunks_mut(ocols).enumerate().for_each(body);
        } else {
            out.data.chunks_mut(ocols).enumerate().for_each(body);
        }
        out
    }

    pub fn matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.cols, v.len(), "matvec: dimension mismatch");
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .fold(Complex64::ZERO, |acc, (&a, &x)| acc + a * x)
            })
            .collect()
    }

    pub fn adjoint_matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.rows, v.len(), "adjoint_matvec: dimension mismatch");
        let mut out = vec![Complex64::ZERO; self.cols];
        for i in 0..self.rows {
            let vi = v[i].conj();
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += (vi * a).conj();
            }
        }
        out
    }

    pub fn fro_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Maximum absolute row sum (the induced infinity norm).
    pub fn inf_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Maximum absolute column sum (the induced one norm).
    pub fn one_norm(&self) -> f64 {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, z) in sums.iter_mut().zip(self.row(i)) {
                *s += z.norm();
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Largest singular value by block power iteration on `a* a` with
    /// Rayleigh-Ritz extraction (block size 4, which rides out nearly
    /// degenerate top singular values).
    ///
    /// The start block comes from a fixed-seed generator, so the result is
    /// deterministic. Convergence is declared after the relative change of
    /// the estimate stays below `tol` for three consecutive iterations.
    pub fn op_norm(&self, tol: f64, max_iter: usize) -> Result<f64> {
        if tol <= 0.0 {
            return Err(Error::domain("op_norm: tolerance must be positive"));
        }
        if self.rows == 0 || self.cols == 0 || self.max_abs() == 0.0 {
            return Ok(0.0);
        }
        // Schur bound: an always-valid upper estimate used for the failure
        // bracket.
        let upper = (self.inf_norm() * self.one_norm()).sqrt();
        let b = 4.min(self.cols);
        let mut rng = ChaCha12Rng::seed_from_u64(POWER_ITERATION_SEED);
        let fresh = |rng: &mut ChaCha12Rng| -> Vec<Complex64> {
            (0..self.cols)
                .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect()
        };
        let mut basis: Vec<Vec<Complex64>> = (0..b).map(|_| fresh(&mut rng)).collect();
        orthonormalize(&mut basis, || fresh(&mut rng));
        let mut sigma = 0.0_f64;
        let mut best = 0.0_f64;
        let mut streak = 0;
        for _ in 0..max_iter {
            let images: Vec<Vec<Complex64>> = basis
                .iter()
                .map(|v| {
                    let av = self.matvec(v);
                    self.adjoint_matvec(&av)
                })
                .collect();
            if images.iter().all(|w| vec_norm(w) == 0.0) {
                return Ok(0.0);
            }
            // Ritz block M = V* (a*a) V, Hermitian by construction.
            let mut m = CMatrix::zeros(b, b);
            for i in 0..b {
                for j in 0..b {
                    m.set(i, j, inner(&basis[i], &images[j]));
                }
            }
            let m = m.add(&m.adjoint()).scaled(Complex64::new(0.5, 0.0));
            let (eigs, _) = m.hermitian_eigen();
            let new_sigma = eigs.first().copied().unwrap_or(0.0).max(0.0).sqrt();
            best = best.max(new_sigma);
            basis = images;
            orthonormalize(&mut basis, || fresh(&mut rng));
            let change = (new_sigma - sigma).abs();
            sigma = new_sigma;
            if change <= tol * sigma.max(f64::MIN_POSITIVE) {
                streak += 1;
                if streak >= 3 {
                    return Ok(sigma);
                }
            } else {
                streak = 0;
            }
        }
        Err(Error::Numeric {
            msg: format!("op_norm power iteration did not converge in {max_iter} iterations"),
            lo: best,
            hi: upper,
        })
    }

    /// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
    ///
    /// Returns `(eigenvalues, v)` with eigenvalues sorted descending and the
    /// columns of `v` the matching orthonormal eigenvectors, so that
    /// `self = v diag(eigenvalues) v*` up to roundoff. The matrix is assumed
    /// Hermitian; only its Hermitian part drives the rotations.
    pub fn hermitian_eigen(&self) -> (Vec<f64>, CMatrix) {
        assert!(self.is_square(), "hermitian_eigen: matrix must be square");
        let n = self.rows;
        let mut a = self.clone();
        let mut v = CMatrix::identity(n);
        let scale = self.fro_norm().max(f64::MIN_POSITIVE);
        for _sweep in 0..60 {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a.get(p, q).norm_sqr();
                }
            }
            if off.sqrt() <= 1e-14 * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let g = a.get(p, q);
                    let gn = g.norm();
                    if gn <= 1e-300 {
                        continue;
                    }
                    let app = a.get(p, p).re;
                    let aqq = a.get(q, q).re;
                    let phase = g / gn; // e^{i phi}
                    let tau = (aqq - app) / (2.0 * gn);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    // Rotation R: identity except R[p][p]=R[q][q]=c,
                    // R[p][q] = s e^{i phi}, R[q][p] = -s e^{-i phi}.
                    // a <- R* a R zeroes a[p][q] for this (c, s, phi).
                    let spq = phase * s; // s e^{i phi}
                    let sqp = -spq.conj(); // -s e^{-i phi}
                    for i in 0..n {
                        let aip = a.get(i, p);
                        let aiq = a.get(i, q);
                        a.set(i, p, aip * c + aiq * sqp);
                        a.set(i, q, aip * spq + aiq * c);
                    }
                    for j in 0..n {
                        let apj = a.get(p, j);
                        let aqj = a.get(q, j);
                        a.set(p, j, apj * c - aqj * spq);
                        a.set(q, j, apj * spq.conj() + aqj * c);
                    }
                    for i in 0..n {
                        let vip = v.get(i, p);
                        let viq = v.get(i, q);
                        v.set(i, p, vip * c + viq * sqp);
                        v.set(i, q, vip * spq + viq * c);
                    }
                }
            }
        }
        let mut pairs: Vec<(f64, usize)> = (0..n).map(|i| (a.get(i, i).re, i)).collect();
        pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
        let eigenvalues: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let mut vs = CMatrix::zeros(n, n);
        for (newcol, &(_, oldcol)) in pairs.iter().enumerate() {
            for i in 0..n {
                vs.set(i, newcol, v.get(i, oldcol));
            }
        }
        (eigenvalues, vs)
    }

    /// Spectral norm of a small matrix via the Hermitian eigenproblem for
    /// `a* a`. Intended for fiber-sized blocks; for large matrices prefer
    /// [`CMatrix::op_norm`].
    pub fn spectral_norm_small(&self) -> f64 {
        if self.rows == 1 && self.cols == 1 {
            return self.data[0].norm();
        }
        let gram = self.adjoint().mul(self);
        let (eigs, _) = gram.hermitian_eigen();
        eigs.first().copied().unwrap_or(0.0).max(0.0).sqrt()
    }
}

/// Matrix exponential by scaling and squaring with a Taylor kernel.
pub fn expm(a: &CMatrix) -> CMatrix {
    assert!(a.is_square(), "expm: matrix must be square");
    let eta = a.inf_norm();
    let squarings = if eta > 0.5 { (eta / 0.5).log2().ceil() as u32 } else { 0 };
    let t = a.scaled(Complex64::new(1.0 / f64::from(2u32.pow(squarings)), 0.0));
    let n = a.rows();
    let mut sum = CMatrix::identity(n);
    let mut term = CMatrix::identity(n);
    for k in 1..=80u32 {
        term = term.mul(&t).scaled(Complex64::new(1.0 / f64::from(k), 0.0));
        sum = sum.add(&term);
        if term.fro_norm() <= 1e-18 * sum.fro_norm() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum.mul(&sum);
    }
    sum
}

pub fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `<a, b>` with conjugation in the first slot.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).fold(Complex64::ZERO, |acc, (x, y)| acc + x.conj() * y)
}

/// Modified Gram-Schmidt with a second projection pass. A vector whose
/// post-projection norm collapses relative to its pre-projection norm is
/// linearly dependent on the earlier ones (the residue direction is pure
/// roundoff) and gets replaced with a fresh draw.
fn orthonormalize(basis: &mut [Vec<Complex64>], mut fresh: impl FnMut() -> Vec<Complex64>) {
    let k = basis.len();
    for i in 0..k {
        let mut done = false;
        for _attempt in 0..6 {
            let pre = vec_norm(&basis[i]);
            if pre > 0.0 {
                for _pass in 0..2 {
                    for j in 0..i {
                        let proj = inner(&basis[j], &basis[i]);
                        let prev = basis[j].clone();
                        for (x, p) in basis[i].iter_mut().zip(&prev) {
                            *x -= proj * p;
                        }
                    }
                }
                let n = vec_norm(&basis[i]);
                if n > 1e-7 * pre {
                    for x in basis[i].iter_mut() {
                        *x /= n;
                    }
                    done = true;
                    break;
                }
            }
            basis[i] = fresh();
        }
        if !done {
            // fresh random draws are independent of any proper subspace;
            // reaching this would mean the draws themselves collapsed
            let len = basis[i].len();
            for x in basis[i].iter_mut() {
                *x = Complex64::ZERO;
            }
            basis[i][i % len] = Complex64::ONE;
        }
    }
}

pub fn normalize(v: &mut [Complex64]) {
    let n = vec_norm(v);
    if n > 0.0 {
        for z in v.iter_mut() {
            *z /= n;
        }
    }
}

pub fn vec_sub(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn op_norm_identity_and_nilpotent() {
        let id = CMatrix::identity(8);
        assert!((id.op_norm(1e-10, 10_000).unwrap() - 1.0).abs() < 1e-10);
        let mut n = CMatrix::zeros(2, 2);
        n.set(0, 1, c(2.0, 0.0));
        assert!((n.op_norm(1e-10, 10_000).unwrap() - 2.0).abs() < 1e-10);
        assert_eq!(CMatrix::zeros(3, 3).op_norm(1e-10, 100).unwrap(), 0.0);
    }

    #[test]
    fn hermitian_eigen_reconstructs() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n = 6;
        let mut h = CMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let z = c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                if i == j {
                    h.set(i, j, c(z.re, 0.0));
                } else {
                    h.set(i, j, z);
                    h.set(j, i, z.conj());
                }
            }
        }
        let (eigs, v) = h.hermitian_eigen();
        // v is unitary
        let vtv = v.adjoint().mul(&v);
        assert!(vtv.sub(&CMatrix::identity(n)).max_abs() < 1e-12);
        // reconstruction
        let mut lam = CMatrix::zeros(n, n);
        for (i, &e) in eigs.iter().enumerate() {
            lam.set(i, i, c(e, 0.0));
        }
        let rec = v.mul(&lam).mul(&v.adjoint());
        assert!(rec.sub(&h).max_abs() < 1e-12);
        // sorted descending
        for w in eigs.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn expm_of_zero_and_diagonal() {
        let z = CMatrix::zeros(4, 4);
        assert!(expm(&z).sub(&CMatrix::identity(4)).max_abs() < 1e-15);
        let mut d = CMatrix::zeros(2, 2);
        d.set(0, 0, c(0.0, 1.0));
        d.set(1, 1, c(0.0, -2.0));
        let e = expm(&d);
        assert!((e.get(0, 0) - c(1.0_f64.cos(), 1.0_f64.sin())).norm() < 1e-14);
        assert!((e.get(1, 1) - c(2.0_f64.cos(), -(2.0_f64.sin()))).norm() < 1e-14);
    }

    #[test]
    fn expm_of_i_hermitian_is_unitary() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let n = 12;
        let mut h = CMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let z = c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                if i == j {
                    h.set(i, j, c(z.re, 0.0));
                } else {
                    h.set(i, j, z);
                    h.set(j, i, z.conj());
                }
            }
        }
        let u = expm(&h.scaled(c(0.0, 1.0)));
        let defect = u.adjoint().mul(&u).sub(&CMatrix::identity(n)).max_abs();
        assert!(defect < 1e-13, "unitarity defect {defect}");
    }

    #[test]
    fn adjoint_matvec_matches_adjoint() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let m = CMatrix::from_fn(5, 7, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let v: Vec<Complex64> = (0..5).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        let a = m.adjoint().matvec(&v);
        let b = m.adjoint_matvec(&v);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-14);
        }
    }
}
