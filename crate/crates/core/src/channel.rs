//! Delay-Doppler multipath channels: path sampling, discrete channel
//! matrices for ZP and CP frames, and AWGN.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, invalid_cfg, Error, Result};
use crate::modem::{Guard, OtsmConfig, OtsmModem};
use crate::sparse::CsrMatrix;
use crate::transforms::WalshMatrix;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// EVA excess tap delays (ns) and relative powers (dB).
pub const EVA_DELAYS_NS: [f64; 9] = [
    0.0, 30.0, 150.0, 310.0, 370.0, 710.0, 1090.0, 1730.0, 2510.0,
];
pub const EVA_POWERS_DB: [f64; 9] = [0.0, -1.5, -1.4, -3.6, -0.6, -9.1, -7.0, -12.0, -16.9];

/// One propagation path. `delay` and `doppler` are in bins of `1/(MΔf)` and
/// `1/(NT)` respectively.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PathRecord", into = "PathRecord")]
pub struct DelayDopplerPath {
    pub gain: Complex64,
    pub delay: f64,
    pub doppler: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathRecord {
    gain_re: f64,
    gain_im: f64,
    delay: f64,
    doppler: f64,
}

impl From<PathRecord> for DelayDopplerPath {
    fn from(r: PathRecord) -> Self {
        Self {
            gain: Complex64::new(r.gain_re, r.gain_im),
            delay: r.delay,
            doppler: r.doppler,
        }
    }
}

impl From<DelayDopplerPath> for PathRecord {
    fn from(p: DelayDopplerPath) -> Self {
        Self {
            gain_re: p.gain.re,
            gain_im: p.gain.im,
            delay: p.delay,
            doppler: p.doppler,
        }
    }
}

impl DelayDopplerPath {
    pub fn new(gain: Complex64, delay: f64, doppler: f64) -> Self {
        Self {
            gain,
            delay,
            doppler,
        }
    }

    /// Integer delay bin, or an error for fractional delays.
    pub fn integer_delay(&self) -> Result<usize> {
        let a = self.delay.round();
        if (self.delay - a).abs() > 1e-9 || a < 0.0 {
            return Err(Error::Unsupported(format!(
                "delay {} is not a non-negative integer bin; fractional delays are not modelled",
                self.delay
            )));
        }
        Ok(a as usize)
    }
}

/// Draws one `CN(0, variance)` sample.
pub fn sample_cn<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Paths with `a_1 = 0`, `a_i ~ U{1..l_max}`, `b_i ~ U{-k_max..k_max}` and
/// gains `CN(0, 1/P)`. With `fractional`, a `U[-1/2, 1/2]` offset is added to
/// each Doppler index.
pub fn sample_paths_uniform<R: Rng + ?Sized>(
    p: usize,
    l_max: i64,
    k_max: i64,
    fractional: bool,
    rng: &mut R,
) -> Result<Vec<DelayDopplerPath>> {
    if p == 0 {
        return Err(invalid_arg("path count must be at least 1"));
    }
    if l_max < 0 || k_max < 0 {
        return Err(invalid_arg("l_max and k_max must be non-negative"));
    }
    let var = 1.0 / p as f64;
    Ok((0..p)
        .map(|i| {
            let gain = sample_cn(rng, var);
            let delay = if i == 0 || l_max == 0 {
                0
            } else {
                rng.gen_range(1..=l_max)
            };
            let mut doppler = rng.gen_range(-k_max..=k_max) as f64;
            if fractional {
                doppler += rng.gen_range(-0.5..=0.5);
            }
            DelayDopplerPath::new(gain, delay as f64, doppler)
        })
        .collect())
}

/// As [`sample_paths_uniform`] with integer Doppler, but no two paths share a
/// `(delay, Doppler)` bin. Bins are drawn without replacement.
pub fn sample_paths_uniform_distinct<R: Rng + ?Sized>(
    p: usize,
    l_max: i64,
    k_max: i64,
    rng: &mut R,
) -> Result<Vec<DelayDopplerPath>> {
    if p == 0 {
        return Err(invalid_arg("path count must be at least 1"));
    }
    if l_max < 0 || k_max < 0 {
        return Err(invalid_arg("l_max and k_max must be non-negative"));
    }
    let dopplers = 2 * k_max + 1;
    let later = if l_max == 0 {
        dopplers - 1
    } else {
        l_max * dopplers
    };
    if (p - 1) as i64 > later {
        return Err(invalid_arg(format!(
            "{p} paths do not fit in distinct bins with l_max = {l_max}, k_max = {k_max}"
        )));
    }
    let var = 1.0 / p as f64;
    let mut used: Vec<(i64, i64)> = Vec::with_capacity(p);
    let mut out = Vec::with_capacity(p);
    for i in 0..p {
        let bin = loop {
            let delay = if i == 0 || l_max == 0 {
                0
            } else {
                rng.gen_range(1..=l_max)
            };
            let b = (delay, rng.gen_range(-k_max..=k_max));
            if !used.contains(&b) {
                break b;
            }
        };
        used.push(bin);
        out.push(DelayDopplerPath::new(
            sample_cn(rng, var),
            bin.0 as f64,
            bin.1 as f64,
        ));
    }
    Ok(out)
}

/// `k_max = ν_max N T` for a terminal speed in km/h.
pub fn max_doppler_index(
    speed_kmh: f64,
    carrier_hz: f64,
    subcarrier_spacing: f64,
    n: usize,
) -> f64 {
    let nu_max = speed_kmh * carrier_hz / (3.6 * SPEED_OF_LIGHT);
    nu_max * n as f64 / subcarrier_spacing
}

/// EVA delay bins at sample rate `MΔf`.
pub fn eva_delay_bins(cfg: &OtsmConfig) -> Vec<usize> {
    let fs = cfg.bandwidth();
    EVA_DELAYS_NS
        .iter()
        .map(|t| (t * 1e-9 * fs).round() as usize)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaOptions {
    pub speed_kmh: f64,
    pub carrier_hz: f64,
    /// Round each `k_i` to the nearest integer.
    pub integer_doppler: bool,
}

/// Nine EVA paths with Jakes Doppler `k_i = k_max cos φ_i`.
///
/// Taps that land in the same delay bin stay separate paths because their
/// Doppler indices differ.
pub fn sample_paths_eva<R: Rng + ?Sized>(
    opts: &EvaOptions,
    cfg: &OtsmConfig,
    rng: &mut R,
) -> Result<Vec<DelayDopplerPath>> {
    if !(opts.speed_kmh > 0.0 && opts.speed_kmh.is_finite()) {
        return Err(invalid_arg("speed must be positive"));
    }
    if !(opts.carrier_hz > 0.0 && opts.carrier_hz.is_finite()) {
        return Err(invalid_arg("carrier frequency must be positive"));
    }
    let bins = eva_delay_bins(cfg);
    let limit = guard_len(cfg).saturating_sub(1);
    if let Some(&b) = bins.iter().find(|&&b| b > limit) {
        return Err(invalid_cfg(format!(
            "EVA delay bin {b} exceeds the guard limit {limit}"
        )));
    }
    let k_max = max_doppler_index(
        opts.speed_kmh,
        opts.carrier_hz,
        cfg.subcarrier_spacing,
        cfg.n,
    );
    let lin: Vec<f64> = EVA_POWERS_DB.iter().map(|d| 10f64.powf(d / 10.0)).collect();
    let total: f64 = lin.iter().sum();
    Ok(bins
        .iter()
        .zip(&lin)
        .map(|(&bin, &pw)| {
            let phi = rng.gen_range(0.0..2.0 * PI);
            let mut k = k_max * phi.cos();
            if opts.integer_doppler {
                k = k.round();
            }
            DelayDopplerPath::new(sample_cn(rng, pw / total), bin as f64, k)
        })
        .collect())
}

fn guard_len(cfg: &OtsmConfig) -> usize {
    match cfg.guard {
        Guard::Zp(l) | Guard::Cp(l) => l,
    }
}

// A guard of L samples absorbs any delay up to L without inter-block leakage.
fn check_delays(paths: &[DelayDopplerPath], cfg: &OtsmConfig) -> Result<Vec<usize>> {
    let limit = guard_len(cfg);
    paths
        .iter()
        .map(|p| {
            let a = p.integer_delay()?;
            if a > limit {
                return Err(invalid_cfg(format!(
                    "path delay {a} exceeds the guard limit {limit}"
                )));
            }
            Ok(a)
        })
        .collect()
}

/// `H_T` of a ZP frame: block-diagonal with `M x M` blocks and
/// `H_T(q, q-l) = Σ_i h_i z_i^(q-l) [l = a_i]`, `z_i = exp(j2πk_i/MN)`.
pub fn build_time_domain_channel(
    paths: &[DelayDopplerPath],
    cfg: &OtsmConfig,
) -> Result<CsrMatrix> {
    cfg.validate()?;
    if !cfg.is_zp() {
        return build_time_domain_channel_cp(paths, cfg);
    }
    let delays = check_delays(paths, cfg)?;
    let mn = cfg.frame_len();
    let mut trip = Vec::with_capacity(mn * paths.len());
    for (p, &a) in paths.iter().zip(&delays) {
        let w = 2.0 * PI * p.doppler / mn as f64;
        for q in 0..mn {
            if q % cfg.m >= a {
                let src = q - a;
                trip.push((q, src, p.gain * Complex64::from_polar(1.0, w * src as f64)));
            }
        }
    }
    CsrMatrix::from_triplets(mn, mn, trip)
}

/// Circulant time-domain channel of a CP frame, `Σ_i h_i Π^{l_i} Δ^{k_i}`.
pub fn build_time_domain_channel_cp(
    paths: &[DelayDopplerPath],
    cfg: &OtsmConfig,
) -> Result<CsrMatrix> {
    let delays = check_delays(paths, cfg)?;
    let mn = cfg.frame_len();
    let mut trip = Vec::with_capacity(mn * paths.len());
    for (p, &a) in paths.iter().zip(&delays) {
        let w = 2.0 * PI * p.doppler / mn as f64;
        for q in 0..mn {
            let src = (q + mn - a % mn) % mn;
            trip.push((q, src, p.gain * Complex64::from_polar(1.0, w * src as f64)));
        }
    }
    CsrMatrix::from_triplets(mn, mn, trip)
}

/// DS-domain channel `H = (I_M ⊗ W)(Pᵀ H_T P)(I_M ⊗ W)` of a ZP frame, built
/// from its `W diag(h̄) W` sub-blocks. Strictly upper blocks are zero.
pub fn build_ds_channel_zp(h_t: &CsrMatrix, cfg: &OtsmConfig) -> Result<CsrMatrix> {
    cfg.validate()?;
    let (m, n) = (cfg.m, cfg.n);
    let mn = cfg.frame_len();
    if h_t.nrows() != mn || h_t.ncols() != mn {
        return Err(invalid_arg("H_T does not match the frame size"));
    }
    let w = WalshMatrix::new(n)?;
    let w = w.as_matrix();
    let mut trip = Vec::new();
    let mut hbar = vec![Complex64::default(); n];
    for row_blk in 0..m {
        for col_blk in 0..m {
            let mut any = false;
            for (k, hb) in hbar.iter_mut().enumerate() {
                *hb = h_t.get(row_blk + k * m, col_blk + k * m);
                any |= *hb != Complex64::default();
            }
            if !any {
                continue;
            }
            for a in 0..n {
                for b in 0..n {
                    let v: Complex64 = (0..n).map(|k| hbar[k] * (w[(a, k)] * w[(k, b)])).sum();
                    trip.push((row_blk * n + a, col_blk * n + b, v));
                }
            }
        }
    }
    let mut h = CsrMatrix::from_triplets(mn, mn, trip)?;
    h.prune(1e-14);
    Ok(h)
}

/// CP DS-domain channel with its per-path factors `D_p`.
#[derive(Debug, Clone)]
pub struct CpChannel {
    pub h_bar: DMatrix<Complex64>,
    pub factors: Vec<DMatrix<Complex64>>,
}

/// `D = (I_M ⊗ W)(Pᵀ Π^l Δ^k P)(I_M ⊗ W)` for a single unit-gain path.
pub fn cp_path_factor(delay: usize, doppler: f64, modem: &OtsmModem) -> Result<DMatrix<Complex64>> {
    let mn = modem.config().frame_len();
    let w = 2.0 * PI * doppler / mn as f64;
    let mut d = DMatrix::zeros(mn, mn);
    let mut e = vec![Complex64::default(); mn];
    for j in 0..mn {
        e.iter_mut().for_each(|v| *v = Complex64::default());
        e[j] = Complex64::new(1.0, 0.0);
        let s = modem.modulate_padded(&e)?;
        let shifted: Vec<Complex64> = (0..mn)
            .map(|q| {
                let src = (q + mn - delay % mn) % mn;
                s[src] * Complex64::from_polar(1.0, w * src as f64)
            })
            .collect();
        let col = modem.receive(&shifted)?;
        d.column_mut(j).copy_from_slice(&col);
    }
    Ok(d)
}

pub fn build_ds_channel_cp(paths: &[DelayDopplerPath], cfg: &OtsmConfig) -> Result<CpChannel> {
    let delays = check_delays(paths, cfg)?;
    let modem = OtsmModem::new(cfg)?;
    let mn = cfg.frame_len();
    let mut h_bar = DMatrix::zeros(mn, mn);
    let mut factors = Vec::with_capacity(paths.len());
    for (p, &a) in paths.iter().zip(&delays) {
        let d = cp_path_factor(a, p.doppler, &modem)?;
        h_bar += &d * p.gain;
        factors.push(d);
    }
    Ok(CpChannel { h_bar, factors })
}

/// A channel draw together with its noise level and CSI error variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelRealization {
    pub cfg: OtsmConfig,
    pub paths: Vec<DelayDopplerPath>,
    /// Linear noise precision `γ_n`; `None` disables noise.
    pub noise_precision: Option<f64>,
    #[serde(default)]
    pub csi_error_variance: f64,
}

/// Which end of the transform chain the input lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Time,
    DelaySequency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelOutput {
    pub received: Vec<Complex64>,
    /// Receiver-side gain estimates `h̃ = h + e_h`.
    pub estimated_gains: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn new(
        cfg: OtsmConfig,
        paths: Vec<DelayDopplerPath>,
        noise_precision: Option<f64>,
        csi_error_variance: f64,
    ) -> Result<Self> {
        let r = Self {
            cfg,
            paths,
            noise_precision,
            csi_error_variance,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        if self.paths.is_empty() {
            return Err(invalid_arg("a channel needs at least one path"));
        }
        if let Some(g) = self.noise_precision {
            if !(g > 0.0 && g.is_finite()) {
                return Err(invalid_arg("noise precision must be positive and finite"));
            }
        }
        if !(self.csi_error_variance >= 0.0 && self.csi_error_variance.is_finite()) {
            return Err(invalid_arg("CSI error variance must be non-negative"));
        }
        Ok(())
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_precision.map_or(0.0, |g| 1.0 / g)
    }

    pub fn gains(&self) -> Vec<Complex64> {
        self.paths.iter().map(|p| p.gain).collect()
    }

    pub fn time_domain_matrix(&self) -> Result<CsrMatrix> {
        if self.cfg.is_zp() {
            build_time_domain_channel(&self.paths, &self.cfg)
        } else {
            build_time_domain_channel_cp(&self.paths, &self.cfg)
        }
    }

    /// DS-domain matrix for either frame variant.
    pub fn ds_matrix(&self) -> Result<CsrMatrix> {
        if self.cfg.is_zp() {
            build_ds_channel_zp(&self.time_domain_matrix()?, &self.cfg)
        } else {
            Ok(CsrMatrix::from_dense(
                &build_ds_channel_cp(&self.paths, &self.cfg)?.h_bar,
                0.0,
            ))
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| invalid_arg(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let r: Self = toml::from_str(text).map_err(|e| invalid_arg(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }
}

/// Adds `CN(0, variance)` noise in place.
pub fn add_awgn<R: Rng + ?Sized>(v: &mut [Complex64], variance: f64, rng: &mut R) {
    if variance > 0.0 {
        for z in v {
            *z += sample_cn(rng, variance);
        }
    }
}

/// Passes `input` through the channel of `realization` in the given domain and
/// adds noise; also draws the receiver's gain estimates.
pub fn apply_channel<R: Rng + ?Sized>(
    input: &[Complex64],
    realization: &ChannelRealization,
    domain: Domain,
    rng: &mut R,
) -> Result<ChannelOutput> {
    realization.validate()?;
    let h = match domain {
        Domain::Time => realization.time_domain_matrix()?,
        Domain::DelaySequency => realization.ds_matrix()?,
    };
    apply_matrix(input, &h, realization, rng)
}

/// As [`apply_channel`] with a pre-built matrix.
pub fn apply_matrix<R: Rng + ?Sized>(
    input: &[Complex64],
    h: &CsrMatrix,
    realization: &ChannelRealization,
    rng: &mut R,
) -> Result<ChannelOutput> {
    let mut received = h.mul_vec(input)?;
    add_awgn(&mut received, realization.noise_variance(), rng);
    let estimated_gains = realization
        .paths
        .iter()
        .map(|p| {
            if realization.csi_error_variance > 0.0 {
                p.gain + sample_cn(rng, realization.csi_error_variance)
            } else {
                p.gain
            }
        })
        .collect();
    Ok(ChannelOutput {
        received,
        estimated_gains,
    })
}
