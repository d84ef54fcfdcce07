//! Dense complex helpers: thin SVD (via faer), Hermitian solves, and a
//! per-realization cache of the matrices the detectors need.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-12;

/// Thin SVD `H = U diag(s) Vᴴ` truncated to the numerical rank.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<Complex64>,
    pub s: Vec<f64>,
    pub v: DMatrix<Complex64>,
}

impl Svd {
    pub fn compute(h: &DMatrix<Complex64>) -> Result<Self> {
        let (rows, cols) = h.shape();
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("SVD of an empty matrix".into()));
        }
        if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NumericalFailure("non-finite channel matrix".into()));
        }
        let m = faer::Mat::<Complex64>::from_fn(rows, cols, |i, j| h[(i, j)]);
        let svd = m.thin_svd();
        let (fu, fs, fv) = (svd.u(), svd.s_diagonal(), svd.v());
        let k = rows.min(cols);
        let s_all: Vec<f64> = (0..k).map(|i| fs.read(i).re).collect();
        let s_max = s_all.iter().copied().fold(0.0, f64::max);
        let rank = s_all.iter().filter(|&&s| s > RANK_TOL * s_max).count();
        let u = DMatrix::from_fn(rows, rank, |i, j| {
            let z = fu.read(i, j);
            Complex64::new(z.re, z.im)
        });
        let v = DMatrix::from_fn(cols, rank, |i, j| {
            let z = fv.read(i, j);
            Complex64::new(z.re, z.im)
        });
        Ok(Self {
            u,
            s: s_all[..rank].to_vec(),
            v,
        })
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Rows of the decomposed matrix.
    pub fn nrows(&self) -> usize {
        self.u.nrows()
    }

    /// Columns of the decomposed matrix.
    pub fn ncols(&self) -> usize {
        self.v.nrows()
    }
}

/// A channel matrix with lazily computed derived quantities. Shareable
/// across threads once built.
#[derive(Debug)]
pub struct LinearSystem {
    h: DMatrix<Complex64>,
    abs2: OnceLock<DMatrix<f64>>,
    svd: OnceLock<Svd>,
}

impl Clone for LinearSystem {
    fn clone(&self) -> Self {
        let out = Self::new(self.h.clone());
        if let Some(a) = self.abs2.get() {
            let _ = out.abs2.set(a.clone());
        }
        if let Some(s) = self.svd.get() {
            let _ = out.svd.set(s.clone());
        }
        out
    }
}

impl LinearSystem {
    pub fn new(h: DMatrix<Complex64>) -> Self {
        Self {
            h,
            abs2: OnceLock::new(),
            svd: OnceLock::new(),
        }
    }

    pub fn h(&self) -> &DMatrix<Complex64> {
        &self.h
    }

    pub fn nrows(&self) -> usize {
        self.h.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.h.ncols()
    }

    /// Elementwise `|H|²`.
    pub fn abs2(&self) -> &DMatrix<f64> {
        self.abs2.get_or_init(|| self.h.map(|z| z.norm_sqr()))
    }

    pub fn svd(&self) -> Result<&Svd> {
        if let Some(s) = self.svd.get() {
            return Ok(s);
        }
        let s = Svd::compute(&self.h)?;
        Ok(self.svd.get_or_init(|| s))
    }

    pub fn mul(&self, x: &[Complex64]) -> Vec<Complex64> {
        mat_vec(&self.h, x)
    }

    pub fn adjoint_mul(&self, y: &[Complex64]) -> Vec<Complex64> {
        adjoint_mat_vec(&self.h, y)
    }
}

pub fn mat_vec(a: &DMatrix<Complex64>, x: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == Complex64::default() {
            continue;
        }
        for (o, &v) in out.iter_mut().zip(a.column(j).iter()) {
            *o += v * xj;
        }
    }
    out
}

pub fn adjoint_mat_vec(a: &DMatrix<Complex64>, y: &[Complex64]) -> Vec<Complex64> {
    (0..a.ncols())
        .map(|j| {
            a.column(j)
                .iter()
                .zip(y)
                .map(|(v, &yi)| v.conj() * yi)
                .sum()
        })
        .collect()
}

pub fn real_mat_vec(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        for (o, &v) in out.iter_mut().zip(a.column(j).iter()) {
            *o += v * xj;
        }
    }
    out
}

pub fn real_tr_mat_vec(a: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    (0..a.ncols())
        .map(|j| a.column(j).iter().zip(y).map(|(v, yi)| v * yi).sum())
        .collect()
}

pub fn to_dvector(x: &[Complex64]) -> DVector<Complex64> {
    DVector::from_column_slice(x)
}

pub fn norm_sqr(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum()
}

pub fn dist_sqr(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| crate::channel::sample_cn(&mut rng, 1.0))
    }

    #[test]
    fn svd_reconstructs_and_is_orthonormal() {
        for (r, c) in [(6usize, 4usize), (5, 5), (12, 9)] {
            let h = random_matrix(r, c, (r * c) as u64);
            let svd = Svd::compute(&h).unwrap();
            assert_eq!(svd.rank(), c);
            let rebuilt = &svd.u
                * DMatrix::from_diagonal(&DVector::from_iterator(
                    svd.rank(),
                    svd.s.iter().map(|&s| Complex64::new(s, 0.0)),
                ))
                * svd.v.adjoint();
            assert!((rebuilt - &h).norm() < 1e-10 * h.norm());
            let g = svd.v.adjoint() * &svd.v;
            assert!((g - DMatrix::<Complex64>::identity(c, c)).norm() < 1e-10);
            assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn svd_rank_truncation() {
        let a = random_matrix(6, 2, 1);
        let b = random_matrix(2, 5, 2);
        let svd = Svd::compute(&(a * b)).unwrap();
        assert_eq!(svd.rank(), 2);
        assert_eq!(svd.ncols(), 5);
    }

    #[test]
    fn cached_products_match_dense() {
        let h = random_matrix(7, 5, 3);
        let sys = LinearSystem::new(h.clone());
        let x: Vec<Complex64> = (0..5).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let y = sys.mul(&x);
        let want = &h * to_dvector(&x);
        assert!(y
            .iter()
            .zip(want.iter())
            .all(|(a, b)| (a - b).norm() < 1e-12));
        let z = sys.adjoint_mul(&y);
        let want = h.adjoint() * to_dvector(&y);
        assert!(z
            .iter()
            .zip(want.iter())
            .all(|(a, b)| (a - b).norm() < 1e-10));
        assert!((sys.abs2()[(2, 3)] - h[(2, 3)].norm_sqr()).abs() < 1e-15);
        let cloned = sys.clone();
        assert_eq!(cloned.h(), sys.h());
    }
}
