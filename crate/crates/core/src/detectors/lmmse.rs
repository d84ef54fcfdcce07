use nalgebra::{Cholesky, DMatrix};
use num_complex::Complex64;

use super::{nearest_all, DetectorResult};
use crate::error::{invalid_arg, Error, Result};
use crate::linalg::{adjoint_mat_vec, Svd};
use crate::modem::Constellation;

fn check_gamma(gamma_s: f64) -> Result<()> {
    if !(gamma_s > 0.0 && gamma_s.is_finite()) {
        return Err(invalid_arg(format!(
            "SNR {gamma_s} must be positive and finite"
        )));
    }
    Ok(())
}

fn finish(mean: Vec<Complex64>, var: Vec<f64>, c: &Constellation) -> DetectorResult {
    DetectorResult {
        hard: nearest_all(&mean, c),
        extrinsic_mean: mean.clone(),
        posterior_mean: mean,
        extrinsic_var: var,
        iterations: 1,
        noise_precision: None,
        trajectory: Vec::new(),
    }
}

/// `x̂ = (HᴴH + γ_s⁻¹ I)⁻¹ Hᴴ y` by Cholesky. The reported variances are the
/// diagonal of the error covariance `(γ_s HᴴH + I)⁻¹`.
pub fn lmmse_detect(
    y: &[Complex64],
    h: &DMatrix<Complex64>,
    gamma_s: f64,
    c: &Constellation,
) -> Result<DetectorResult> {
    check_gamma(gamma_s)?;
    if y.len() != h.nrows() {
        return Err(invalid_arg("observation length does not match H"));
    }
    let mut a = h.adjoint() * h;
    for i in 0..a.nrows() {
        a[(i, i)] += Complex64::new(1.0 / gamma_s, 0.0);
    }
    let chol = Cholesky::new(a)
        .ok_or_else(|| Error::NumericalFailure("LMMSE system is not positive definite".into()))?;
    let rhs = nalgebra::DVector::from_vec(adjoint_mat_vec(h, y));
    let x = chol.solve(&rhs);
    let inv = chol.inverse();
    let var = (0..inv.nrows()).map(|i| inv[(i, i)].re / gamma_s).collect();
    let mean: Vec<Complex64> = x.iter().copied().collect();
    if !super::all_finite(&mean) {
        return Err(Error::NumericalFailure(
            "LMMSE produced non-finite estimates".into(),
        ));
    }
    Ok(finish(mean, var, c))
}

/// The same estimator through a thin SVD, `x̂ = V diag(s/(s² + γ_s⁻¹)) Uᴴ y`.
pub fn lmmse_detect_svd(
    y: &[Complex64],
    svd: &Svd,
    gamma_s: f64,
    c: &Constellation,
) -> Result<DetectorResult> {
    check_gamma(gamma_s)?;
    if y.len() != svd.nrows() {
        return Err(invalid_arg("observation length does not match H"));
    }
    let uhy = adjoint_mat_vec(&svd.u, y);
    let w: Vec<Complex64> = uhy
        .iter()
        .zip(&svd.s)
        .map(|(z, &s)| z * (s / (s * s + 1.0 / gamma_s)))
        .collect();
    let mean = crate::linalg::mat_vec(&svd.v, &w);
    let j = svd.ncols();
    let var = (0..j)
        .map(|row| {
            let mut in_range = 0.0;
            let mut v = 0.0;
            for (k, &s) in svd.s.iter().enumerate() {
                let p = svd.v[(row, k)].norm_sqr();
                in_range += p;
                v += p / (gamma_s * s * s + 1.0);
            }
            v + (1.0 - in_range).max(0.0)
        })
        .collect();
    Ok(finish(mean, var, c))
}
