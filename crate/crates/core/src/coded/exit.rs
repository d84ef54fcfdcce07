use std::fmt;
use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ldpc::LdpcCode;
use super::llr::{clip_llr, llr_to_symbol_priors, symbols_to_extrinsic_llr};
use super::turbo::soft_detect;
use crate::detectors::{AmpOptions, DetectorKind, VampOptions};
use crate::error::{invalid_arg, Result};
use crate::linalg::LinearSystem;
use crate::modem::Constellation;
use crate::rng::stream_rng;

/// `−log₂(1 + e^{−z})` without overflow.
fn log2_one_plus_exp_neg(z: f64) -> f64 {
    let v = if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    };
    v / std::f64::consts::LN_2
}

/// Time-average estimate `1 − E[log₂(1 + e^{−(1−2b)L})]`, valid for
/// consistent LLRs. Positive LLRs favour bit 0.
pub fn mutual_information(llr: &[f64], bits: &[u8]) -> f64 {
    assert_eq!(llr.len(), bits.len(), "LLR and bit lengths differ");
    if llr.is_empty() {
        return 0.0;
    }
    let loss: f64 = llr
        .iter()
        .zip(bits)
        .map(|(&l, &b)| log2_one_plus_exp_neg(if b == 0 { l } else { -l }))
        .sum();
    (1.0 - loss / llr.len() as f64).clamp(0.0, 1.0)
}

/// MI of a consistent Gaussian LLR `N(σ²/2, σ²)` conditioned on bit 0.
pub fn j_function(sigma: f64) -> f64 {
    if !(sigma > 1e-9) {
        return 0.0;
    }
    if sigma > 80.0 {
        return 1.0;
    }
    let mu = sigma * sigma / 2.0;
    let (lo, hi) = (mu - 12.0 * sigma, mu + 12.0 * sigma);
    let n = 2000;
    let h = (hi - lo) / n as f64;
    let f = |x: f64| {
        let z = (x - mu) / sigma;
        (-0.5 * z * z).exp() * log2_one_plus_exp_neg(x)
    };
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let integral = s * h / 3.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    (1.0 - integral).clamp(0.0, 1.0)
}

/// Inverse of [`j_function`] by bisection.
pub fn j_inverse(i: f64) -> f64 {
    if i <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 80.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if j_function(mid) < i {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Gaussian a priori LLRs with mutual information `i_a` about `bits`.
pub fn synthesize_apriori_llr<R: Rng + ?Sized>(bits: &[u8], i_a: f64, rng: &mut R) -> Vec<f64> {
    let sigma = j_inverse(i_a.clamp(0.0, 1.0));
    let mu = sigma * sigma / 2.0;
    bits.iter()
        .map(|&b| {
            let n: f64 = rng.sample(StandardNormal);
            let sign = if b == 0 { 1.0 } else { -1.0 };
            clip_llr(sign * mu + sigma * n)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitComponent {
    Detector(DetectorKind),
    Decoder,
    /// Measured detector activation inside the turbo loop.
    TrajectoryDetector(DetectorKind),
    /// Measured decoder activation inside the turbo loop.
    TrajectoryDecoder(DetectorKind),
}

impl fmt::Display for ExitComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExitComponent::Detector(k) => write!(f, "detector:{}", k.name()),
            ExitComponent::Decoder => f.write_str("decoder"),
            ExitComponent::TrajectoryDetector(k) => write!(f, "trajectory:{}:detector", k.name()),
            ExitComponent::TrajectoryDecoder(k) => write!(f, "trajectory:{}:decoder", k.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitPoint {
    pub i_a: f64,
    pub i_e: f64,
    pub component: ExitComponent,
}

/// One received frame with its transmitted bits in symbol (interleaved) order.
#[derive(Debug, Clone)]
pub struct ExitFrame {
    pub y: Vec<Complex64>,
    pub sys: LinearSystem,
    pub bits: Vec<u8>,
    pub gamma_n: f64,
}

/// Detector extrinsic MI for every frame and every a priori level, indexed
/// `[frame][grid point]`. A diverged activation counts as zero information.
#[allow(clippy::too_many_arguments)]
pub fn detector_exit_samples(
    frames: &[ExitFrame],
    c: &Constellation,
    kind: DetectorKind,
    grid: &[f64],
    amp: &AmpOptions,
    vamp: &VampOptions,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let q = c.bits_per_symbol();
    for f in frames {
        if f.bits.len() != f.sys.ncols() * q {
            return Err(invalid_arg("frame bits do not match the symbol count"));
        }
    }
    frames
        .par_iter()
        .enumerate()
        .map(|(fi, f)| {
            let mut rng = stream_rng(seed, fi as u64);
            grid.iter()
                .map(|&i_a| {
                    let la = synthesize_apriori_llr(&f.bits, i_a, &mut rng);
                    let priors = llr_to_symbol_priors(&la, c)?;
                    let soft =
                        soft_detect(kind, &f.y, &f.sys, c, f.gamma_n, amp, vamp, Some(&priors))?;
                    Ok(match soft {
                        Some(s) => {
                            let le = symbols_to_extrinsic_llr(&s.chi, &s.sigma, Some(&la), c)?;
                            mutual_information(&le, &f.bits)
                        }
                        None => 0.0,
                    })
                })
                .collect()
        })
        .collect()
}

/// How per-frame EXIT samples are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregate {
    Mean,
    Median,
}

/// Combines `[frame][grid]` samples into one curve.
pub fn exit_curve(
    samples: &[Vec<f64>],
    grid: &[f64],
    component: ExitComponent,
    how: Aggregate,
) -> Vec<ExitPoint> {
    grid.iter()
        .enumerate()
        .map(|(g, &i_a)| {
            let mut col: Vec<f64> = samples.iter().map(|s| s[g]).collect();
            let i_e = if col.is_empty() {
                0.0
            } else {
                match how {
                    Aggregate::Mean => col.iter().sum::<f64>() / col.len() as f64,
                    Aggregate::Median => {
                        col.sort_by(f64::total_cmp);
                        let m = col.len() / 2;
                        if col.len() % 2 == 1 {
                            col[m]
                        } else {
                            0.5 * (col[m - 1] + col[m])
                        }
                    }
                }
            };
            ExitPoint {
                i_a,
                i_e,
                component,
            }
        })
        .collect()
}

/// Decoder EXIT curve: the decoder sees Gaussian LLRs with MI `I_a` as its
/// only input and `I_e` is the MI of its extrinsic output.
pub fn decoder_exit(
    code: &LdpcCode,
    grid: &[f64],
    draws: usize,
    inner_iters: usize,
    seed: u64,
) -> Result<Vec<ExitPoint>> {
    if draws == 0 {
        return Err(invalid_arg("need at least one draw"));
    }
    grid.iter()
        .enumerate()
        .map(|(g, &i_a)| {
            let total = (0..draws)
                .into_par_iter()
                .map(|d| {
                    let mut rng = stream_rng(seed, ((g as u64) << 32) | d as u64);
                    let info: Vec<u8> = (0..code.k()).map(|_| rng.gen_range(0..2u8)).collect();
                    let cw = code.encode(&info)?;
                    let la = synthesize_apriori_llr(&cw, i_a, &mut rng);
                    let out = code.decode(&la, inner_iters)?;
                    Ok(mutual_information(&out.extrinsic, &cw))
                })
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .sum::<f64>();
            Ok(ExitPoint {
                i_a,
                i_e: total / draws as f64,
                component: ExitComponent::Decoder,
            })
        })
        .collect()
}

/// Writes points as CSV with columns `I_a,I_e,component,ebn0_db`.
pub fn write_exit_csv<W: Write>(points: &[ExitPoint], ebn0_db: f64, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["I_a", "I_e", "component", "ebn0_db"])?;
    for p in points {
        wr.write_record([
            p.i_a.to_string(),
            p.i_e.to_string(),
            p.component.to_string(),
            ebn0_db.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
