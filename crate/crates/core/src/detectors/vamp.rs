use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::denoise::{denoise_posterior, NoiseLevel, SymbolPriors};
use super::{all_finite, nearest_all, DetectorResult};
use crate::error::{invalid_arg, Error, Result};
use crate::linalg::{adjoint_mat_vec, dist_sqr, mat_vec, norm_sqr, LinearSystem, Svd};
use crate::modem::Constellation;

/// Lower clamp for message precisions (and for inverse precisions).
pub const PRECISION_FLOOR: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VampOptions {
    /// Outer iterations `T`.
    pub max_iters: usize,
    /// Denoising passes `T₁`.
    pub sd_iters: usize,
    /// Linear-stage passes `T₂`.
    pub le_iters: usize,
    /// Damping `θ ∈ (0, 1]`.
    pub damping: f64,
    pub tolerance: f64,
    /// Re-estimate `γ₁` and `γ₂` from the message residuals.
    pub auto_tune: bool,
    /// Which linear-stage outputs are re-evaluated at the tuned `γ₂` before
    /// the message to the denoiser is formed.
    pub refresh: StageRefresh,
    #[serde(skip)]
    pub record_trajectory: bool,
}

/// Treatment of the linear stage after `γ₂` auto-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageRefresh {
    /// `x̂₂`, `η₂` from the last pass with the tuned `γ₂`.
    Off,
    /// `η₂` at the tuned `γ₂`, `x̂₂` from the last pass.
    Precision,
    /// Both `x̂₂` and `η₂` at the tuned `γ₂`.
    Full,
}

impl Default for VampOptions {
    fn default() -> Self {
        Self {
            max_iters: 4,
            sd_iters: 2,
            le_iters: 1,
            damping: 0.8,
            tolerance: 1e-10,
            auto_tune: true,
            refresh: StageRefresh::Full,
            record_trajectory: false,
        }
    }
}

impl VampOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.sd_iters == 0 || self.le_iters == 0 {
            return Err(invalid_arg("VAMP-EM iteration counts must be at least 1"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(invalid_arg(format!(
                "damping {} outside (0, 1]",
                self.damping
            )));
        }
        Ok(())
    }
}

fn from_inverse(inv: f64) -> f64 {
    1.0 / inv.max(PRECISION_FLOOR)
}

/// Output of the linear stage. `one_minus_alpha` and `step = x̂₂ - r₂` are
/// formed directly, without cancellation, so the message survives `α₂ → 1`.
struct StageOutput {
    step: Vec<Complex64>,
    alpha: f64,
    one_minus_alpha: f64,
}

/// Linear stage through the thin SVD:
/// `x̂₂ = r₂ + V[Ξ(ȳ + γ₂Vᴴr₂) - Vᴴr₂]` with `ȳ = γ_n S Uᴴy`,
/// `Ξ = diag(1/(γ_n s² + γ₂))`, and the divergence
/// `α₂ = (1/J) Σ_j γ₂/(γ_n s_j² + γ₂)` (with `s_j = 0` beyond the rank).
pub fn vamp_lmmse_stage(
    r2: &[Complex64],
    gamma2: f64,
    gamma_n: f64,
    svd: &Svd,
    y: &[Complex64],
) -> Result<(Vec<Complex64>, f64)> {
    if y.len() != svd.nrows() || r2.len() != svd.ncols() {
        return Err(invalid_arg("dimensions do not match the decomposition"));
    }
    if !(gamma2 > 0.0 && gamma_n > 0.0) {
        return Err(invalid_arg("precisions must be positive"));
    }
    let uhy = adjoint_mat_vec(&svd.u, y);
    let out = lmmse_stage(r2, gamma2, gamma_n, svd, &uhy);
    let x2 = r2.iter().zip(&out.step).map(|(a, b)| a + b).collect();
    Ok((x2, out.alpha))
}

fn lmmse_stage(
    r2: &[Complex64],
    gamma2: f64,
    gamma_n: f64,
    svd: &Svd,
    uhy: &[Complex64],
) -> StageOutput {
    let jf = svd.ncols() as f64;
    let vhr = adjoint_mat_vec(&svd.v, r2);
    let mut alpha = (svd.ncols() - svd.rank()) as f64;
    let mut complement = 0.0;
    let inner: Vec<Complex64> = svd
        .s
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let xi = 1.0 / (gamma_n * s * s + gamma2);
            alpha += gamma2 * xi;
            complement += gamma_n * s * s * xi;
            (uhy[k] - vhr[k] * s) * (gamma_n * s * xi)
        })
        .collect();
    StageOutput {
        step: mat_vec(&svd.v, &inner),
        alpha: alpha / jf,
        one_minus_alpha: complement / jf,
    }
}

/// EM update of the noise precision:
/// `1/γ_n' = (1/n)[‖y - Hx̂₂‖² + Σ_k s_k²/(γ_n s_k² + γ₂)]`.
pub fn em_noise_update(
    y: &[Complex64],
    sys: &LinearSystem,
    x2: &[Complex64],
    gamma2: f64,
    gamma_n_prev: f64,
    singular_values: &[f64],
) -> Result<f64> {
    if y.len() != sys.nrows() || x2.len() != sys.ncols() {
        return Err(invalid_arg("dimensions do not match H"));
    }
    Ok(em_update(
        y,
        &sys.mul(x2),
        gamma2,
        gamma_n_prev,
        singular_values,
    ))
}

fn em_update(y: &[Complex64], hx2: &[Complex64], gamma2: f64, gamma_n: f64, s: &[f64]) -> f64 {
    let resid = dist_sqr(y, hx2);
    let trace: f64 = s.iter().map(|&s| s * s / (gamma_n * s * s + gamma2)).sum();
    from_inverse((resid + trace) / y.len() as f64)
}

/// Extrinsic message `r' = (ηx̂ - γr)/(η - γ)`, `γ' = η - γ`, written with
/// `α = γ/η` as `r' = r + (x̂ - r)/(1 - α)` and `γ' = γ(1 - α)/α`.
fn extrinsic(x: &[Complex64], r: &[Complex64], one_minus_alpha: f64) -> Vec<Complex64> {
    let scale = 1.0 / one_minus_alpha.max(PRECISION_FLOOR);
    r.iter().zip(x).map(|(a, b)| a + (b - a) * scale).collect()
}

/// VAMP with EM noise learning, auto-tuned message precisions and damping.
///
/// With `known_gamma_n` the noise precision stays fixed. The extrinsic output
/// is `(r₁, 1/γ₁)`; the estimate is the last denoiser output.
pub fn vamp_em_detect(
    y: &[Complex64],
    sys: &LinearSystem,
    c: &Constellation,
    opts: &VampOptions,
    known_gamma_n: Option<f64>,
    priors: Option<&SymbolPriors>,
) -> Result<DetectorResult> {
    opts.validate()?;
    let (rows, j) = (sys.nrows(), sys.ncols());
    if y.len() != rows {
        return Err(invalid_arg("observation length does not match H"));
    }
    if let Some(g) = known_gamma_n {
        if !(g > 0.0 && g.is_finite()) {
            return Err(invalid_arg(
                "known noise precision must be positive and finite",
            ));
        }
    }
    let svd = sys.svd()?;
    let uhy = adjoint_mat_vec(&svd.u, y);
    let jf = j as f64;
    let theta = opts.damping;

    let mut gamma_n = known_gamma_n.unwrap_or_else(|| from_inverse(norm_sqr(y) / rows as f64));
    let mut g1 = 0.0;
    let mut r1 = vec![Complex64::default(); j];
    let mut x1_prev: Option<Vec<Complex64>> = None;
    let mut x1 = vec![Complex64::default(); j];
    let mut hard = vec![0usize; j];
    let mut trajectory = Vec::new();
    let mut iterations = 0;

    for t in 1..=opts.max_iters {
        iterations = t;
        // symbol denoising
        let mut inv_eta1 = 1.0;
        for _ in 0..opts.sd_iters {
            let post = denoise_posterior(&r1, NoiseLevel::Precision(g1), c, priors)?;
            x1 = post.mean;
            inv_eta1 = (post.var.iter().sum::<f64>() / jf).max(PRECISION_FLOOR);
            if opts.auto_tune {
                g1 = from_inverse(dist_sqr(&x1, &r1) / jf + inv_eta1);
            }
        }
        if !all_finite(&x1) {
            return Err(Error::Divergence {
                iterations: t,
                last_hard: hard,
                last_mean: x1_prev.unwrap_or_default(),
            });
        }
        hard = nearest_all(&x1, c);
        if opts.record_trajectory {
            trajectory.push(hard.clone());
        }
        let one_minus_alpha1 = 1.0 - (g1 * inv_eta1).min(1.0);
        let mut g2 = (one_minus_alpha1 / inv_eta1).max(PRECISION_FLOOR);
        let r2 = extrinsic(&x1, &r1, one_minus_alpha1);

        // LMMSE estimation
        let mut stage = lmmse_stage(&r2, g2, gamma_n, svd, &uhy);
        let mut g2_eval = g2;
        for pass in 0..opts.le_iters {
            if pass > 0 {
                stage = lmmse_stage(&r2, g2, gamma_n, svd, &uhy);
                g2_eval = g2;
            }
            let inv_eta2 = stage.alpha / g2;
            let g2_next = if opts.auto_tune {
                from_inverse(norm_sqr(&stage.step) / jf + inv_eta2)
            } else {
                g2
            };
            if known_gamma_n.is_none() {
                let x2: Vec<Complex64> = r2.iter().zip(&stage.step).map(|(a, b)| a + b).collect();
                gamma_n = em_update(y, &sys.mul(&x2), g2_next, gamma_n, &svd.s);
            }
            g2 = g2_next;
        }
        // x̂₂ from the last pass; η₂ (and x̂₂ with `Full`) at the tuned γ₂
        let mut prec = (stage.alpha, stage.one_minus_alpha, g2_eval);
        if g2_eval != g2 && opts.refresh != StageRefresh::Off {
            let fresh = lmmse_stage(&r2, g2, gamma_n, svd, &uhy);
            prec = (fresh.alpha, fresh.one_minus_alpha, g2);
            if opts.refresh == StageRefresh::Full {
                stage = fresh;
            }
        }

        // damped message back to the denoiser, r₁ = r₂ + (η₂/(η₂ - γ₂))(x̂₂ - r₂)
        let (alpha2, oma2, g2_prec) = (prec.0.max(PRECISION_FLOOR), prec.1, prec.2);
        let (g1_msg, gain) = if g2_prec == g2 {
            let oma = oma2.max(PRECISION_FLOOR);
            ((g2 * oma / alpha2).max(PRECISION_FLOOR), 1.0 / oma)
        } else {
            let eta2 = g2_prec / alpha2;
            let d = (eta2 - g2).max(PRECISION_FLOOR);
            (d, eta2 / d)
        };
        for (r, (a, d)) in r1.iter_mut().zip(r2.iter().zip(&stage.step)) {
            let m = a + d * gain;
            *r = *r * (1.0 - theta) + m * theta;
        }
        g1 = (1.0 - theta) * g1 + theta * g1_msg;

        if !all_finite(&r1) || !g1.is_finite() || !gamma_n.is_finite() {
            return Err(Error::Divergence {
                iterations: t,
                last_hard: hard,
                last_mean: x1,
            });
        }
        if let Some(prev) = &x1_prev {
            if dist_sqr(&x1, prev) < opts.tolerance * norm_sqr(prev) {
                break;
            }
        }
        x1_prev = Some(x1.clone());
    }

    Ok(DetectorResult {
        hard,
        posterior_mean: x1,
        extrinsic_mean: r1,
        extrinsic_var: vec![1.0 / g1; j],
        iterations,
        noise_precision: Some(gamma_n),
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn identity_stage_is_scalar_combination() {
        let sys = LinearSystem::new(DMatrix::identity(3, 3));
        let svd = sys.svd().unwrap();
        let y = [
            Complex64::new(1.0, 0.5),
            Complex64::new(-0.2, 0.0),
            Complex64::new(0.0, 2.0),
        ];
        let r2 = [
            Complex64::new(0.1, 0.1),
            Complex64::new(0.0, -1.0),
            Complex64::new(0.3, 0.0),
        ];
        let (gn, g2) = (5.0, 2.0);
        let (x2, alpha) = vamp_lmmse_stage(&r2, g2, gn, svd, &y).unwrap();
        for k in 0..3 {
            let want = (y[k] * gn + r2[k] * g2) / (gn + g2);
            assert!((x2[k] - want).norm() < 1e-12);
        }
        assert!((alpha - g2 / (gn + g2)).abs() < 1e-12);
        let (x2, alpha) = vamp_lmmse_stage(&r2, 1e12, gn, svd, &y).unwrap();
        assert!((alpha - 1.0).abs() < 1e-9);
        assert!(x2.iter().zip(&r2).all(|(a, b)| (a - b).norm() < 1e-9));
    }

    #[test]
    fn em_update_limits() {
        let sys = LinearSystem::new(DMatrix::identity(4, 4));
        let y = vec![Complex64::new(1.0, 0.0); 4];
        let g = em_noise_update(&y, &sys, &y, 3.0, 2.0, &[1.0; 4]).unwrap();
        assert!((1.0 / g - 1.0 / (2.0 + 3.0)).abs() < 1e-12);
        let x = vec![Complex64::default(); 4];
        let big: Vec<Complex64> = vec![Complex64::new(100.0, 0.0); 4];
        let g = em_noise_update(&big, &sys, &x, 3.0, 2.0, &[1.0; 4]).unwrap();
        assert!((g * 1e4 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn options_validation() {
        let bad = VampOptions {
            damping: 0.0,
            ..VampOptions::default()
        };
        assert!(bad.validate().is_err());
        assert!(VampOptions::default().validate().is_ok());
    }
}
