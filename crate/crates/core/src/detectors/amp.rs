use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::denoise::{denoise_posterior, NoiseLevel, SymbolPriors};
use super::{all_finite, nearest_all, DetectorResult};
use crate::error::{invalid_arg, Error, Result};
use crate::linalg::{dist_sqr, norm_sqr, real_mat_vec, real_tr_mat_vec, LinearSystem};
use crate::modem::Constellation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AmpOptions {
    /// `T_AMP`.
    pub max_iters: usize,
    /// `ε` in the stopping rule.
    pub tolerance: f64,
    #[serde(skip)]
    pub record_trajectory: bool,
}

impl Default for AmpOptions {
    fn default() -> Self {
        Self {
            max_iters: 6,
            tolerance: 1e-10,
            record_trajectory: false,
        }
    }
}

/// Approximate message passing with a Bayes symbol denoiser and the Onsager
/// corrected residual. Returns the last denoiser output as the estimate and
/// `(r, υ_r)` from the last linear stage as extrinsic output.
pub fn amp_detect(
    y: &[Complex64],
    sys: &LinearSystem,
    gamma_n: f64,
    c: &Constellation,
    opts: &AmpOptions,
    priors: Option<&SymbolPriors>,
) -> Result<DetectorResult> {
    let (rows, j) = (sys.nrows(), sys.ncols());
    if y.len() != rows {
        return Err(invalid_arg("observation length does not match H"));
    }
    if !(gamma_n > 0.0 && gamma_n.is_finite()) {
        return Err(invalid_arg("AMP needs a positive, finite noise precision"));
    }
    if opts.max_iters == 0 {
        return Err(invalid_arg("AMP needs at least one iteration"));
    }
    let abs2 = sys.abs2();
    let noise_var = 1.0 / gamma_n;

    let mut s = vec![Complex64::default(); rows];
    let mut v_r = vec![1.0; j];
    let mut r = vec![Complex64::default(); j];
    let mut x_prev: Option<Vec<Complex64>> = None;
    let mut last_hard = vec![0usize; j];
    let mut last_mean = vec![Complex64::default(); j];
    let mut trajectory = Vec::new();
    let mut iterations = 0;

    for t in 1..=opts.max_iters {
        iterations = t;
        let post = denoise_posterior(&r, NoiseLevel::Variances(&v_r), c, priors)?;
        let x_hat = post.mean;
        if !all_finite(&x_hat) {
            return Err(Error::Divergence {
                iterations: t,
                last_hard,
                last_mean,
            });
        }
        last_hard = nearest_all(&x_hat, c);
        last_mean.clone_from(&x_hat);
        if opts.record_trajectory {
            trajectory.push(last_hard.clone());
        }

        let v_p = real_mat_vec(abs2, &post.var);
        let hx = sys.mul(&x_hat);
        let v_s: Vec<f64> = v_p.iter().map(|&vp| 1.0 / (vp + noise_var)).collect();
        for i in 0..rows {
            let p = hx[i] - s[i] * v_p[i];
            s[i] = (y[i] - p) * v_s[i];
        }
        let hs = sys.adjoint_mul(&s);
        let denom = real_tr_mat_vec(abs2, &v_s);
        for k in 0..j {
            v_r[k] = 1.0 / denom[k];
            r[k] = x_hat[k] + hs[k] * v_r[k];
        }
        if !all_finite(&r) || v_r.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Divergence {
                iterations: t,
                last_hard,
                last_mean,
            });
        }
        if let Some(prev) = &x_prev {
            if dist_sqr(&x_hat, prev) < opts.tolerance * norm_sqr(prev) {
                break;
            }
        }
        x_prev = Some(x_hat);
    }

    Ok(DetectorResult {
        hard: last_hard,
        posterior_mean: last_mean,
        extrinsic_mean: r,
        extrinsic_var: v_r,
        iterations,
        noise_precision: None,
        trajectory,
    })
}
