//! Exact Bayes posterior of a discrete symbol observed in Gaussian noise.

use num_complex::Complex64;

use crate::error::{invalid_arg, Result};
use crate::modem::Constellation;

/// Per-symbol prior probabilities, `J` rows of `K` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolPriors {
    order: usize,
    probs: Vec<f64>,
}

impl SymbolPriors {
    pub fn new(order: usize, probs: Vec<f64>) -> Result<Self> {
        if order == 0 || probs.len() % order != 0 {
            return Err(invalid_arg("prior table is not a whole number of rows"));
        }
        for (j, row) in probs.chunks_exact(order).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || (sum - 1.0).abs() > 1e-9 {
                return Err(invalid_arg(format!(
                    "prior row {j} is not a probability vector"
                )));
            }
        }
        Ok(Self { order, probs })
    }

    pub fn uniform(len: usize, order: usize) -> Self {
        Self {
            order,
            probs: vec![1.0 / order as f64; len * order],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.probs.len() / self.order
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.probs[j * self.order..(j + 1) * self.order]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

/// Observation noise: one precision for all components, or one variance each.
#[derive(Debug, Clone, Copy)]
pub enum NoiseLevel<'a> {
    Precision(f64),
    Variances(&'a [f64]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: Vec<Complex64>,
    pub var: Vec<f64>,
}

impl Posterior {
    pub fn mean_variance(&self) -> f64 {
        self.var.iter().sum::<f64>() / self.var.len().max(1) as f64
    }
}

/// Posterior mean and variance of each `x(j)` given `r(j) = x(j) + w`,
/// `w ~ CN(0, υ(j))`, with `β_{j,k} ∝ P(x(j) = a_k) exp(-|a_k - r(j)|²/υ(j))`.
///
/// A precision of zero yields the prior mean and variance.
pub fn denoise_posterior(
    r: &[Complex64],
    level: NoiseLevel<'_>,
    c: &Constellation,
    priors: Option<&SymbolPriors>,
) -> Result<Posterior> {
    match level {
        NoiseLevel::Precision(g) => {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(invalid_arg(format!(
                    "precision {g} must be finite and non-negative"
                )));
            }
        }
        NoiseLevel::Variances(v) => {
            if v.len() != r.len() {
                return Err(invalid_arg(
                    "variance vector length does not match the means",
                ));
            }
            if let Some(bad) = v.iter().find(|&&x| !(x > 0.0)) {
                return Err(invalid_arg(format!("variance {bad} must be positive")));
            }
        }
    }
    if let Some(p) = priors {
        if p.order() != c.order() || p.len() != r.len() {
            return Err(invalid_arg("prior table shape does not match the input"));
        }
    }
    let pts = c.points();
    let k = pts.len();
    let mut logw = vec![0.0; k];
    let mut mean = Vec::with_capacity(r.len());
    let mut var = Vec::with_capacity(r.len());
    for (j, &rj) in r.iter().enumerate() {
        let prec = match level {
            NoiseLevel::Precision(g) => g,
            NoiseLevel::Variances(v) => 1.0 / v[j],
        };
        let mut top = f64::NEG_INFINITY;
        for (i, a) in pts.iter().enumerate() {
            let prior = priors.map_or(0.0, |p| p.row(j)[i].ln());
            logw[i] = prior - prec * (a - rj).norm_sqr();
            top = top.max(logw[i]);
        }
        let mut sum = 0.0;
        for w in logw.iter_mut() {
            *w = (*w - top).exp();
            sum += *w;
        }
        let mut m = Complex64::default();
        for (w, a) in logw.iter_mut().zip(pts) {
            *w /= sum;
            m += a * *w;
        }
        let v: f64 = logw
            .iter()
            .zip(pts)
            .map(|(w, a)| w * (a - m).norm_sqr())
            .sum();
        mean.push(m);
        var.push(v.max(0.0));
    }
    Ok(Posterior { mean, var })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bpsk_symmetric_point() {
        let c = Constellation::bpsk();
        let p = denoise_posterior(
            &[Complex64::default()],
            NoiseLevel::Precision(3.0),
            &c,
            None,
        )
        .unwrap();
        assert!(p.mean[0].norm() < 1e-15);
        assert!((p.var[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn small_variance_snaps_to_nearest_point() {
        let c = Constellation::new(16).unwrap();
        let r = c.point(5) + Complex64::new(0.01, -0.02);
        let p = denoise_posterior(&[r], NoiseLevel::Variances(&[1e-6]), &c, None).unwrap();
        assert!((p.mean[0] - c.point(5)).norm() < 1e-12);
        assert!(p.var[0] < 1e-12);
    }

    #[test]
    fn zero_precision_returns_prior_moments() {
        let c = Constellation::qpsk();
        let pri = SymbolPriors::new(4, vec![0.7, 0.1, 0.1, 0.1]).unwrap();
        let p = denoise_posterior(
            &[Complex64::new(5.0, 5.0)],
            NoiseLevel::Precision(0.0),
            &c,
            Some(&pri),
        )
        .unwrap();
        let m: Complex64 = c.points().iter().zip(pri.row(0)).map(|(a, w)| a * *w).sum();
        assert!((p.mean[0] - m).norm() < 1e-14);
    }

    #[test]
    fn argument_checks() {
        let c = Constellation::qpsk();
        let r = [Complex64::default(); 2];
        assert!(denoise_posterior(&r, NoiseLevel::Variances(&[1.0]), &c, None).is_err());
        assert!(denoise_posterior(&r, NoiseLevel::Variances(&[1.0, 0.0]), &c, None).is_err());
        assert!(denoise_posterior(&r, NoiseLevel::Precision(-1.0), &c, None).is_err());
        let pri = SymbolPriors::uniform(3, 4);
        assert!(denoise_posterior(&r, NoiseLevel::Precision(1.0), &c, Some(&pri)).is_err());
        assert!(SymbolPriors::new(2, vec![0.5, 0.6]).is_err());
    }
}
