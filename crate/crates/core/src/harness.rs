//! Simulation configuration, Monte Carlo orchestration and result files.
//!
//! Every frame draws from its own ChaCha8 stream indexed by
//! `(master seed, grid point, frame)`, and results are reduced in frame order,
//! so reports do not depend on the number of worker threads.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{ber_union_bound, BoundCurve, BoundMode, BoundOptions, PathStructure};
use crate::channel::{
    apply_matrix, sample_paths_eva, sample_paths_uniform, sample_paths_uniform_distinct,
    ChannelRealization, DelayDopplerPath, EvaOptions,
};
use crate::coded::{
    decoder_exit, detector_exit_samples, exit_curve, turbo_receive, write_exit_csv, Aggregate,
    ExitComponent, ExitFrame, ExitPoint, Interleaver, LdpcCode, Reference, TurboOptions,
};
use crate::detectors::{
    amp_detect, lmmse_detect, ml_detect, vamp_em_detect, AmpOptions, DetectorKind, VampOptions,
    DEFAULT_ML_CAP,
};
use crate::error::{invalid_cfg, Error, Result};
use crate::linalg::LinearSystem;
use crate::modem::{
    indices_to_bits, map_bits, CodeRate, Constellation, Guard, OtsmConfig, OtsmModem,
};
use crate::rng::{frame_stream, stream_rng};

/// Noise precision handed to detectors when noise is disabled.
pub const NOISELESS_PRECISION: f64 = 1e10;

/// How SNR values in reports relate to each other.
pub const SNR_CONVENTION: &str =
    "gamma_s = gamma_n = 1/N0 (unit symbol energy); Eb/N0 = gamma_s / (R log2 K); guard overhead not charged";

pub fn version_string() -> String {
    format!("otsm-core v{}", env!("CARGO_PKG_VERSION"))
}

/// `γ_s` in dB for a given `E_b/N_0` in dB.
pub fn ebn0_to_snr_db(ebn0_db: f64, rate: f64, bits_per_symbol: usize) -> f64 {
    ebn0_db + 10.0 * (rate * bits_per_symbol as f64).log10()
}

pub fn snr_to_ebn0_db(snr_db: f64, rate: f64, bits_per_symbol: usize) -> f64 {
    snr_db - 10.0 * (rate * bits_per_symbol as f64).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameSpec {
    pub m: usize,
    pub n: usize,
    pub guard: Guard,
    pub subcarrier_spacing: f64,
    pub modulation_order: usize,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self {
            m: 16,
            n: 16,
            guard: Guard::Zp(4),
            subcarrier_spacing: 60e3,
            modulation_order: 4,
        }
    }
}

impl FrameSpec {
    pub fn to_config(&self) -> Result<OtsmConfig> {
        OtsmConfig::new(
            self.m,
            self.n,
            self.guard,
            self.subcarrier_spacing,
            self.modulation_order,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelModel {
    Uniform,
    Eva,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSpec {
    pub model: ChannelModel,
    /// Path count for the uniform model.
    pub paths: usize,
    /// Largest delay index for the uniform model (default `M − 1`).
    pub l_max: Option<usize>,
    /// Largest Doppler index for the uniform model (default `N − 1`).
    pub k_max: Option<usize>,
    pub fractional_doppler: bool,
    /// Uniform model: no two paths share a delay-Doppler bin.
    pub distinct_bins: bool,
    pub speed_kmh: f64,
    pub carrier_hz: f64,
    pub integer_doppler: bool,
    /// Gain estimation error variance `σ_h²` at the receiver.
    pub csi_error_variance: f64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self {
            model: ChannelModel::Eva,
            paths: 4,
            l_max: None,
            k_max: None,
            fractional_doppler: false,
            distinct_bins: false,
            speed_kmh: 480.0,
            carrier_hz: 16e9,
            integer_doppler: true,
            csi_error_variance: 0.0,
        }
    }
}

impl ChannelSpec {
    fn limits(&self, frame: &FrameSpec) -> (usize, usize) {
        (
            self.l_max.unwrap_or(frame.m.saturating_sub(1)),
            self.k_max.unwrap_or(frame.n.saturating_sub(1)),
        )
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        cfg: &OtsmConfig,
        frame: &FrameSpec,
        rng: &mut R,
    ) -> Result<Vec<DelayDopplerPath>> {
        match self.model {
            ChannelModel::Uniform => {
                let (l, k) = self.limits(frame);
                if self.distinct_bins {
                    sample_paths_uniform_distinct(self.paths, l as i64, k as i64, rng)
                } else {
                    sample_paths_uniform(
                        self.paths,
                        l as i64,
                        k as i64,
                        self.fractional_doppler,
                        rng,
                    )
                }
            }
            ChannelModel::Eva => sample_paths_eva(
                &EvaOptions {
                    speed_kmh: self.speed_kmh,
                    carrier_hz: self.carrier_hz,
                    integer_doppler: self.integer_doppler,
                },
                cfg,
                rng,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSpec {
    /// Detectors run on the same frames.
    pub kinds: Vec<DetectorKind>,
    pub amp: AmpOptions,
    pub vamp: VampOptions,
    pub ml_cap: f64,
    /// Pick VAMP-EM damping per grid point from `{0.1, 0.2, …, 1}` by the
    /// lowest BER over pilot frames.
    pub damping_search: bool,
    pub damping_pilot_frames: u64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self {
            kinds: vec![DetectorKind::VampEm],
            amp: AmpOptions::default(),
            vamp: VampOptions::default(),
            ml_cap: DEFAULT_ML_CAP,
            damping_search: false,
            damping_pilot_frames: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodingSpec {
    pub rate: CodeRate,
    /// Parity-check matrix in alist format; the built-in PEG code otherwise.
    pub alist: Option<PathBuf>,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub interleaver_seed: u64,
}

impl Default for CodingSpec {
    fn default() -> Self {
        Self {
            rate: CodeRate { num: 1, den: 2 },
            alist: None,
            outer_iters: 4,
            inner_iters: 4,
            interleaver_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnrAxis {
    /// Grid values are `E_b/N_0` in dB.
    Ebn0,
    /// Grid values are `γ_s` in dB.
    Snr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub axis: SnrAxis,
    pub points: Vec<f64>,
    pub min_frame_errors: u64,
    pub max_frames: u64,
    /// Frames simulated in parallel before the stopping rule is checked.
    pub batch: u64,
    pub noiseless: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            axis: SnrAxis::Ebn0,
            points: vec![15.0],
            min_frame_errors: 100,
            max_frames: 2000,
            batch: 64,
            noiseless: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundSpec {
    pub mode: BoundMode,
    /// Delay/Doppler structure; by default the uniform channel settings.
    pub structure: Option<PathStructure>,
    pub draws: usize,
    pub max_frame_bits: usize,
}

impl Default for BoundSpec {
    fn default() -> Self {
        let o = BoundOptions::default();
        Self {
            mode: BoundMode::Rayleigh,
            structure: None,
            draws: o.draws,
            max_frame_bits: o.max_frame_bits,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExitSpec {
    pub grid: Vec<f64>,
    /// Channel draws per detector curve.
    pub draws: usize,
    pub decoder_draws: usize,
    pub aggregate: Aggregate,
    /// Frames averaged for the measured trajectory.
    pub trajectory_frames: usize,
    /// Outer iterations of the measured trajectory.
    pub trajectory_iters: usize,
}

impl Default for ExitSpec {
    fn default() -> Self {
        Self {
            grid: (0..20).map(|i| i as f64 * 0.05).collect(),
            draws: 50,
            decoder_draws: 50,
            aggregate: Aggregate::Median,
            trajectory_frames: 20,
            trajectory_iters: 8,
        }
    }
}

/// A complete simulation description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    pub frame: FrameSpec,
    pub channel: ChannelSpec,
    pub detector: DetectorSpec,
    pub coding: Option<CodingSpec>,
    pub sweep: SweepSpec,
    pub bound: BoundSpec,
    pub exit: ExitSpec,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = self.frame.to_config()?;
        let s = &self.sweep;
        if s.points.is_empty() {
            return Err(invalid_cfg("sweep.points is empty"));
        }
        if s.points.iter().any(|p| !p.is_finite()) || s.points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid_cfg(
                "sweep.points must be finite and strictly increasing",
            ));
        }
        if s.min_frame_errors == 0 || s.max_frames == 0 || s.batch == 0 {
            return Err(invalid_cfg("stopping rule values must be positive"));
        }
        if self.detector.kinds.is_empty() {
            return Err(invalid_cfg("detector.kinds is empty"));
        }
        self.detector.vamp.validate()?;
        let ch = &self.channel;
        if !(ch.csi_error_variance >= 0.0 && ch.csi_error_variance.is_finite()) {
            return Err(invalid_cfg(
                "channel.csi_error_variance must be non-negative",
            ));
        }
        if ch.model == ChannelModel::Uniform {
            let (l, _) = ch.limits(&self.frame);
            if ch.paths == 0 {
                return Err(invalid_cfg("channel.paths must be positive"));
            }
            if ch.distinct_bins && ch.fractional_doppler {
                return Err(invalid_cfg(
                    "channel.distinct_bins needs integer Doppler (fractional_doppler = false)",
                ));
            }
            let guard = match cfg.guard {
                Guard::Zp(g) | Guard::Cp(g) => g,
            };
            if l > guard {
                return Err(invalid_cfg(format!(
                    "channel.l_max = {l} exceeds the guard length {guard}"
                )));
            }
        }
        if let Some(c) = &self.coding {
            if c.outer_iters == 0 || c.inner_iters == 0 {
                return Err(invalid_cfg("coding iteration counts must be positive"));
            }
            if let Some(k) = self
                .detector
                .kinds
                .iter()
                .find(|k| !matches!(k, DetectorKind::Amp | DetectorKind::VampEm))
            {
                return Err(invalid_cfg(format!(
                    "coded runs need AMP or VAMP-EM, not {}",
                    k.name()
                )));
            }
        }
        let e = &self.exit;
        if e.grid.iter().any(|v| !(0.0..1.0).contains(v)) {
            return Err(invalid_cfg("exit.grid must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Canonical TOML with every default spelled out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| invalid_cfg(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_at(text, Path::new("<config>"))
    }

    fn from_toml_at(text: &str, path: &Path) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn code_rate(&self) -> f64 {
        self.coding.as_ref().map_or(1.0, |c| c.rate.value())
    }

    /// `(E_b/N_0 dB, γ_s dB)` for grid point `i`.
    pub fn snr_pair(&self, i: usize) -> (f64, f64) {
        let q = self.frame.modulation_order.trailing_zeros() as usize;
        let v = self.sweep.points[i];
        match self.sweep.axis {
            SnrAxis::Ebn0 => (v, ebn0_to_snr_db(v, self.code_rate(), q)),
            SnrAxis::Snr => (snr_to_ebn0_db(v, self.code_rate(), q), v),
        }
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path)?;
    SimConfig::from_toml_at(&text, path)
}

/// Frame geometry, code and interleaver shared by every frame of a run.
struct Link {
    cfg: OtsmConfig,
    c: Constellation,
    modem: OtsmModem,
    code: Option<(LdpcCode, Interleaver)>,
}

/// One simulated transmission as seen by the receiver.
struct Transmission {
    info: Vec<u8>,
    /// Codeword in code order (coded runs only).
    codeword: Vec<u8>,
    /// Bits on the symbols, after interleaving.
    tx_bits: Vec<u8>,
    y: Vec<Complex64>,
    sys: LinearSystem,
}

impl Link {
    fn new(sc: &SimConfig) -> Result<Self> {
        let cfg = sc.frame.to_config()?;
        let c = cfg.constellation();
        let modem = OtsmModem::new(&cfg)?;
        let code = match &sc.coding {
            None => None,
            Some(cs) => {
                let n = cfg.bits_per_frame();
                let code = match &cs.alist {
                    Some(p) => LdpcCode::load_alist(p)?,
                    None => LdpcCode::builtin(n, cs.rate.num, cs.rate.den)?,
                };
                if code.n() != n {
                    return Err(invalid_cfg(format!(
                        "code length {} does not match {n} coded bits per frame",
                        code.n()
                    )));
                }
                Some((code, Interleaver::new(n, cs.interleaver_seed)))
            }
        };
        Ok(Self {
            cfg,
            c,
            modem,
            code,
        })
    }

    fn info_len(&self) -> usize {
        self.code
            .as_ref()
            .map_or(self.cfg.bits_per_frame(), |(c, _)| c.k())
    }

    fn transmit<R: Rng + RngCore>(
        &self,
        sc: &SimConfig,
        gamma: Option<f64>,
        rng: &mut R,
    ) -> Result<Transmission> {
        let paths = sc.channel.sample(&self.cfg, &sc.frame, rng)?;
        let info: Vec<u8> = (0..self.info_len())
            .map(|_| rng.gen_range(0..2u8))
            .collect();
        let (codeword, tx_bits) = match &self.code {
            Some((code, pi)) => {
                let cw = code.encode(&info)?;
                let tx = pi.interleave(&cw);
                (cw, tx)
            }
            None => (Vec::new(), info.clone()),
        };
        let x = map_bits(&tx_bits, &self.c)?;
        let real = ChannelRealization::new(
            self.cfg.clone(),
            paths,
            gamma,
            sc.channel.csi_error_variance,
        )?;
        let s = self.modem.modulate(&x)?;
        let out = apply_matrix(&s, &real.time_domain_matrix()?, &real, rng)?;
        let y = self.modem.receive(&out.received)?;
        let rx_real = if sc.channel.csi_error_variance > 0.0 {
            let paths = real
                .paths
                .iter()
                .zip(&out.estimated_gains)
                .map(|(p, &g)| DelayDopplerPath { gain: g, ..*p })
                .collect();
            ChannelRealization::new(self.cfg.clone(), paths, gamma, 0.0)?
        } else {
            real
        };
        let sys = LinearSystem::new(
            rx_real
                .ds_matrix()?
                .to_dense_columns(self.cfg.data_symbols()),
        );
        Ok(Transmission {
            info,
            codeword,
            tx_bits,
            y,
            sys,
        })
    }
}

#[derive(Debug, Clone, Default)]
struct DetOutcome {
    bit_errors: u64,
    iterations: usize,
    diverged: bool,
    noise_variance: Option<f64>,
    outer_errors: Vec<u64>,
}

fn count_errors(a: &[u8], b: &[u8]) -> u64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u64
}

fn detect_frame(
    link: &Link,
    sc: &SimConfig,
    kind: DetectorKind,
    vamp: &VampOptions,
    tx: &Transmission,
    gamma: f64,
) -> Result<DetOutcome> {
    let c = &link.c;
    if let Some((code, pi)) = &link.code {
        let cs = sc.coding.as_ref().expect("coded link has a coding spec");
        let opts = TurboOptions {
            outer_iters: cs.outer_iters,
            inner_iters: cs.inner_iters,
            detector: kind,
            amp: sc.detector.amp,
            vamp: *vamp,
            interleaver_seed: cs.interleaver_seed,
        };
        let reference = Reference {
            info: &tx.info,
            codeword: &tx.codeword,
        };
        let out = turbo_receive(&tx.y, &tx.sys, c, code, pi, gamma, &opts, Some(reference))?;
        return Ok(DetOutcome {
            bit_errors: count_errors(&out.info_bits, &tx.info),
            iterations: out.iterations.len(),
            diverged: out.diverged_any(),
            noise_variance: None,
            outer_errors: out
                .iterations
                .iter()
                .map(|i| i.info_errors.unwrap_or(0) as u64)
                .collect(),
        });
    }
    let (hard, iterations, diverged, noise_variance) = match kind {
        DetectorKind::Ml => (
            ml_detect(&tx.y, tx.sys.h(), c, sc.detector.ml_cap)?,
            1,
            false,
            None,
        ),
        DetectorKind::Lmmse => (
            lmmse_detect(&tx.y, tx.sys.h(), gamma, c)?.hard,
            1,
            false,
            None,
        ),
        DetectorKind::Amp => match amp_detect(&tx.y, &tx.sys, gamma, c, &sc.detector.amp, None) {
            Ok(r) => (r.hard, r.iterations, false, None),
            Err(Error::Divergence {
                iterations,
                last_hard,
                ..
            }) => (last_hard, iterations, true, None),
            Err(e) => return Err(e),
        },
        DetectorKind::VampEm => {
            let r = vamp_em_detect(&tx.y, &tx.sys, c, vamp, None, None)?;
            let nv = r.noise_precision.map(|g| 1.0 / g);
            (r.hard, r.iterations, false, nv)
        }
    };
    Ok(DetOutcome {
        bit_errors: count_errors(&indices_to_bits(&hard, c), &tx.info),
        iterations,
        diverged,
        noise_variance,
        outer_errors: Vec::new(),
    })
}

/// Counters for one detector at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub ebn0_db: f64,
    pub snr_db: f64,
    pub detector: DetectorKind,
    pub frames: u64,
    pub bits: u64,
    pub bit_errors: u64,
    pub frame_errors: u64,
    pub ber: f64,
    /// Half-width of the 95% normal-approximation interval.
    pub ci95: f64,
    pub divergences: u64,
    pub mean_iterations: f64,
    /// Mean learned `1/γ̂_n` (VAMP-EM only).
    pub mean_noise_variance: Option<f64>,
    /// VAMP-EM damping used at this point.
    pub damping: Option<f64>,
    pub wall_time_s: f64,
    /// Information bit errors after each outer turbo iteration.
    pub outer_bit_errors: Vec<u64>,
}

impl PointReport {
    fn new(ebn0_db: f64, snr_db: f64, detector: DetectorKind) -> Self {
        Self {
            ebn0_db,
            snr_db,
            detector,
            frames: 0,
            bits: 0,
            bit_errors: 0,
            frame_errors: 0,
            ber: 0.0,
            ci95: 0.0,
            divergences: 0,
            mean_iterations: 0.0,
            mean_noise_variance: None,
            damping: None,
            wall_time_s: 0.0,
            outer_bit_errors: Vec::new(),
        }
    }

    fn finish(&mut self, iter_sum: usize, nv: (f64, u64)) {
        self.ber = self.bit_errors as f64 / self.bits as f64;
        self.ci95 = 1.96 * (self.ber * (1.0 - self.ber) / self.bits as f64).sqrt();
        self.mean_iterations = iter_sum as f64 / self.frames as f64;
        if nv.1 > 0 {
            self.mean_noise_variance = Some(nv.0 / nv.1 as f64);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub version: String,
    pub snr_convention: String,
    pub config: SimConfig,
    pub points: Vec<PointReport>,
}

impl MonteCarloReport {
    /// Counters only; timing lives in the manifest so that the CSV is
    /// reproducible byte for byte.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "ebn0_db",
            "snr_db",
            "detector",
            "frames",
            "bits",
            "bit_errors",
            "frame_errors",
            "ber",
            "ci95",
            "divergences",
            "mean_iterations",
        ])?;
        for p in &self.points {
            wr.write_record([
                p.ebn0_db.to_string(),
                p.snr_db.to_string(),
                p.detector.name().to_string(),
                p.frames.to_string(),
                p.bits.to_string(),
                p.bit_errors.to_string(),
                p.frame_errors.to_string(),
                format!("{:e}", p.ber),
                format!("{:e}", p.ci95),
                p.divergences.to_string(),
                p.mean_iterations.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Per-outer-iteration BER of coded runs.
    pub fn write_turbo_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "ebn0_db",
            "detector",
            "outer_iter",
            "bit_errors",
            "bits",
            "ber",
        ])?;
        for p in &self.points {
            for (t, &e) in p.outer_bit_errors.iter().enumerate() {
                wr.write_record([
                    p.ebn0_db.to_string(),
                    p.detector.name().to_string(),
                    (t + 1).to_string(),
                    e.to_string(),
                    p.bits.to_string(),
                    format!("{:e}", e as f64 / p.bits as f64),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Run manifest: version, seed, SNR convention, full configuration and
    /// per-point timing.
    pub fn manifest(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| invalid_cfg(e.to_string()))
    }

    pub fn save(&self, csv_path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(csv_path)?)?;
        std::fs::write(csv_path.with_extension("manifest.toml"), self.manifest()?)?;
        if self.points.iter().any(|p| !p.outer_bit_errors.is_empty()) {
            self.write_turbo_csv(std::fs::File::create(csv_path.with_extension("turbo.csv"))?)?;
        }
        Ok(())
    }

    pub fn point(&self, detector: DetectorKind, ebn0_db: f64) -> Option<&PointReport> {
        self.points
            .iter()
            .find(|p| p.detector == detector && (p.ebn0_db - ebn0_db).abs() < 1e-9)
    }
}

const PILOT_SEED_OFFSET: u64 = 0x7069_6c6f_7473;

fn gamma_for(sc: &SimConfig, snr_db: f64) -> (Option<f64>, f64) {
    if sc.sweep.noiseless {
        (None, NOISELESS_PRECISION)
    } else {
        let g = 10f64.powf(snr_db / 10.0);
        (Some(g), g)
    }
}

fn tune_damping(link: &Link, sc: &SimConfig, point: usize, snr_db: f64) -> Result<f64> {
    let (gamma, g) = gamma_for(sc, snr_db);
    let seed = sc.seed ^ PILOT_SEED_OFFSET;
    let frames: Vec<Transmission> = (0..sc.detector.damping_pilot_frames)
        .into_par_iter()
        .map(|f| link.transmit(sc, gamma, &mut stream_rng(seed, frame_stream(point, f))))
        .collect::<Result<_>>()?;
    let mut best = (u64::MAX, 1.0);
    for step in 1..=10 {
        let theta = step as f64 / 10.0;
        let vamp = VampOptions {
            damping: theta,
            ..sc.detector.vamp
        };
        let errors: u64 = frames
            .par_iter()
            .map(|tx| Ok(detect_frame(link, sc, DetectorKind::VampEm, &vamp, tx, g)?.bit_errors))
            .collect::<Result<Vec<u64>>>()?
            .into_iter()
            .sum();
        if errors < best.0 {
            best = (errors, theta);
        }
    }
    Ok(best.1)
}

/// Monte Carlo BER over the sweep grid for every configured detector (turbo
/// reception when `coding` is set). All detectors see the same frames; a
/// point stops once every detector has `min_frame_errors` frame errors or
/// `max_frames` frames have run.
pub fn run_ber_sweep(sc: &SimConfig) -> Result<MonteCarloReport> {
    sc.validate()?;
    let link = Link::new(sc)?;
    let kinds = &sc.detector.kinds;
    let mut points = Vec::new();
    for pi in 0..sc.sweep.points.len() {
        let start = Instant::now();
        let (ebn0_db, snr_db) = sc.snr_pair(pi);
        let (gamma, g) = gamma_for(sc, snr_db);
        let mut vamp = sc.detector.vamp;
        let searched = sc.detector.damping_search && kinds.contains(&DetectorKind::VampEm);
        if searched {
            vamp.damping = tune_damping(&link, sc, pi, snr_db)?;
        }
        let mut reps: Vec<PointReport> = kinds
            .iter()
            .map(|&k| PointReport::new(ebn0_db, snr_db, k))
            .collect();
        let mut iter_sum = vec![0usize; kinds.len()];
        let mut nv = vec![(0.0, 0u64); kinds.len()];
        let mut frame = 0u64;
        let done = |reps: &[PointReport], frame: u64| {
            frame >= sc.sweep.max_frames
                || reps
                    .iter()
                    .all(|r| r.frame_errors >= sc.sweep.min_frame_errors)
        };
        while !done(&reps, frame) {
            let end = (frame + sc.sweep.batch).min(sc.sweep.max_frames);
            let outcomes: Vec<Vec<DetOutcome>> = (frame..end)
                .into_par_iter()
                .map(|f| {
                    let mut rng = stream_rng(sc.seed, frame_stream(pi, f));
                    let tx = link.transmit(sc, gamma, &mut rng)?;
                    kinds
                        .iter()
                        .map(|&k| detect_frame(&link, sc, k, &vamp, &tx, g))
                        .collect()
                })
                .collect::<Result<_>>()?;
            for per_det in outcomes {
                frame += 1;
                for (d, o) in per_det.into_iter().enumerate() {
                    let r = &mut reps[d];
                    r.frames += 1;
                    r.bits += link.info_len() as u64;
                    r.bit_errors += o.bit_errors;
                    r.frame_errors += u64::from(o.bit_errors > 0);
                    r.divergences += u64::from(o.diverged);
                    iter_sum[d] += o.iterations;
                    if let Some(v) = o.noise_variance {
                        nv[d].0 += v;
                        nv[d].1 += 1;
                    }
                    if r.outer_bit_errors.len() < o.outer_errors.len() {
                        r.outer_bit_errors.resize(o.outer_errors.len(), 0);
                    }
                    for (acc, e) in r.outer_bit_errors.iter_mut().zip(&o.outer_errors) {
                        *acc += e;
                    }
                }
                if done(&reps, frame) {
                    break;
                }
            }
        }
        let wall = start.elapsed().as_secs_f64();
        for (d, r) in reps.iter_mut().enumerate() {
            r.finish(iter_sum[d], nv[d]);
            r.wall_time_s = wall;
            if r.detector == DetectorKind::VampEm {
                r.damping = Some(vamp.damping);
            }
        }
        log::info!("Eb/N0 {ebn0_db} dB (gamma_s {snr_db:.3} dB): {frame} frames in {wall:.1} s");
        points.extend(reps);
    }
    Ok(MonteCarloReport {
        version: version_string(),
        snr_convention: SNR_CONVENTION.to_string(),
        config: sc.clone(),
        points,
    })
}

/// Union-bound curve over the sweep grid (converted to `γ_s` dB). CP frames
/// only; refuses frames with more than `bound.max_frame_bits` bits.
pub fn run_bound(sc: &SimConfig) -> Result<BoundCurve> {
    sc.validate()?;
    let cfg = sc.frame.to_config()?;
    let structure = match &sc.bound.structure {
        Some(s) => s.clone(),
        None => {
            let (l_max, k_max) = sc.channel.limits(&sc.frame);
            PathStructure::Uniform {
                paths: sc.channel.paths,
                l_max,
                k_max,
                distinct: sc.channel.distinct_bins,
            }
        }
    };
    let snr: Vec<f64> = (0..sc.sweep.points.len())
        .map(|i| sc.snr_pair(i).1)
        .collect();
    let opts = BoundOptions {
        draws: sc.bound.draws,
        seed: sc.seed,
        max_frame_bits: sc.bound.max_frame_bits,
    };
    ber_union_bound(&cfg, &structure, sc.bound.mode, &snr, &opts)
}

/// EXIT curves and measured trajectories at each grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitReport {
    /// `(E_b/N_0 dB, points)` per grid point.
    pub curves: Vec<(f64, Vec<ExitPoint>)>,
}

impl ExitReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::new();
        for (i, (ebn0, pts)) in self.curves.iter().enumerate() {
            let mut one = Vec::new();
            write_exit_csv(pts, *ebn0, &mut one)?;
            let text = String::from_utf8(one).expect("CSV output is UTF-8");
            let body = if i == 0 {
                text.as_str()
            } else {
                text.split_once('\n').map_or("", |(_, b)| b)
            };
            buf.extend_from_slice(body.as_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn points(&self, ebn0_db: f64, component: ExitComponent) -> Vec<ExitPoint> {
        self.curves
            .iter()
            .filter(|(e, _)| (e - ebn0_db).abs() < 1e-9)
            .flat_map(|(_, p)| p.iter().filter(|q| q.component == component).copied())
            .collect()
    }
}

/// Detector curves for every configured detector, the decoder curve, and
/// staircase trajectories from measured turbo iterations. Uses the default
/// rate-1/2 coding when `coding` is absent.
pub fn run_exit(sc: &SimConfig) -> Result<ExitReport> {
    let mut sc = sc.clone();
    if sc.coding.is_none() {
        sc.coding = Some(CodingSpec::default());
    }
    sc.validate()?;
    let link = Link::new(&sc)?;
    let (code, pi) = link.code.as_ref().expect("coded link");
    let cs = sc.coding.clone().expect("coding set above");
    let ex = &sc.exit;
    let decoder = decoder_exit(
        code,
        &ex.grid,
        ex.decoder_draws.max(1),
        cs.inner_iters,
        sc.seed,
    )?;
    let mut curves = Vec::new();
    for p in 0..sc.sweep.points.len() {
        let (ebn0_db, snr_db) = sc.snr_pair(p);
        let (gamma, g) = gamma_for(&sc, snr_db);
        let n_frames = ex.draws.max(ex.trajectory_frames) as u64;
        let txs: Vec<Transmission> = (0..n_frames)
            .into_par_iter()
            .map(|f| link.transmit(&sc, gamma, &mut stream_rng(sc.seed, frame_stream(p, f))))
            .collect::<Result<_>>()?;
        let frames: Vec<ExitFrame> = txs[..ex.draws]
            .iter()
            .map(|t| ExitFrame {
                y: t.y.clone(),
                sys: t.sys.clone(),
                bits: t.tx_bits.clone(),
                gamma_n: g,
            })
            .collect();
        let mut pts = Vec::new();
        for &kind in &sc.detector.kinds {
            let samples = detector_exit_samples(
                &frames,
                &link.c,
                kind,
                &ex.grid,
                &sc.detector.amp,
                &sc.detector.vamp,
                sc.seed ^ ((p as u64 + 1) << 48),
            )?;
            pts.extend(exit_curve(
                &samples,
                &ex.grid,
                ExitComponent::Detector(kind),
                ex.aggregate,
            ));
            let opts = TurboOptions {
                outer_iters: ex.trajectory_iters.max(1),
                inner_iters: cs.inner_iters,
                detector: kind,
                amp: sc.detector.amp,
                vamp: sc.detector.vamp,
                interleaver_seed: cs.interleaver_seed,
            };
            let runs = txs[..ex.trajectory_frames]
                .par_iter()
                .map(|t| {
                    let r = Reference {
                        info: &t.info,
                        codeword: &t.codeword,
                    };
                    turbo_receive(&t.y, &t.sys, &link.c, code, pi, g, &opts, Some(r))
                })
                .collect::<Result<Vec<_>>>()?;
            pts.extend(staircase(&runs, kind));
        }
        pts.extend(decoder.iter().copied());
        curves.push((ebn0_db, pts));
    }
    Ok(ExitReport { curves })
}

/// Mean detector/decoder MI per outer iteration, as alternating points
/// `(I_a, I_e)` starting from `(0, I_e^det(0))`.
fn staircase(runs: &[crate::coded::TurboOutput], kind: DetectorKind) -> Vec<ExitPoint> {
    if runs.is_empty() {
        return Vec::new();
    }
    let iters = runs.iter().map(|r| r.iterations.len()).min().unwrap_or(0);
    let mean = |f: &dyn Fn(&crate::coded::TurboIteration) -> f64, t: usize| {
        runs.iter().map(|r| f(&r.iterations[t])).sum::<f64>() / runs.len() as f64
    };
    let mut pts = Vec::with_capacity(2 * iters);
    let mut i_a = 0.0;
    for t in 0..iters {
        let det = mean(&|i| i.detector_mi.unwrap_or(0.0), t);
        let dec = mean(&|i| i.decoder_mi.unwrap_or(0.0), t);
        pts.push(ExitPoint {
            i_a,
            i_e: det,
            component: ExitComponent::TrajectoryDetector(kind),
        });
        pts.push(ExitPoint {
            i_a: det,
            i_e: dec,
            component: ExitComponent::TrajectoryDecoder(kind),
        });
        i_a = dec;
    }
    pts
}
