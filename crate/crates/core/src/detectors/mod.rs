//! Detectors for the DS-domain model `y = Hx + n`.

mod amp;
mod denoise;
mod lmmse;
mod ml;
mod vamp;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::modem::Constellation;

pub use amp::{amp_detect, AmpOptions};
pub use denoise::{denoise_posterior, NoiseLevel, Posterior, SymbolPriors};
pub use lmmse::{lmmse_detect, lmmse_detect_svd};
pub use ml::{ml_detect, DEFAULT_ML_CAP};
pub use vamp::{
    em_noise_update, vamp_em_detect, vamp_lmmse_stage, StageRefresh, VampOptions, PRECISION_FLOOR,
};

/// Output of one detector activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorResult {
    /// Constellation indices of the hard decisions.
    pub hard: Vec<usize>,
    pub posterior_mean: Vec<Complex64>,
    /// Extrinsic mean `χ` handed to the decoder.
    pub extrinsic_mean: Vec<Complex64>,
    /// Extrinsic variance `σ`, one per symbol.
    pub extrinsic_var: Vec<f64>,
    pub iterations: usize,
    /// Learned noise precision (VAMP-EM without a known `γ_n`).
    pub noise_precision: Option<f64>,
    /// Hard decisions after every outer iteration, if requested.
    pub trajectory: Vec<Vec<usize>>,
}

impl DetectorResult {
    pub fn hard_symbols(&self, c: &Constellation) -> Vec<Complex64> {
        self.hard.iter().map(|&k| c.point(k)).collect()
    }
}

/// Detector choice, as named in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    Ml,
    Lmmse,
    Amp,
    VampEm,
}

impl DetectorKind {
    pub fn name(&self) -> &'static str {
        match self {
            DetectorKind::Ml => "ml",
            DetectorKind::Lmmse => "lmmse",
            DetectorKind::Amp => "amp",
            DetectorKind::VampEm => "vamp-em",
        }
    }
}

pub(crate) fn nearest_all(x: &[Complex64], c: &Constellation) -> Vec<usize> {
    x.iter().map(|&z| c.nearest(z)).collect()
}

pub(crate) fn all_finite(x: &[Complex64]) -> bool {
    x.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}
