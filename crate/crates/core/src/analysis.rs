//! Pairwise error probabilities and union-bound BER curves for CP frames.

use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    build_ds_channel_cp, sample_paths_uniform, sample_paths_uniform_distinct, DelayDopplerPath,
};
use crate::error::{invalid_arg, invalid_cfg, Error, Result};
use crate::modem::{Constellation, OtsmConfig};

/// Eigenvalues below this fraction of the largest count as zero.
pub const EIGEN_RANK_TOL: f64 = 1e-10;

/// Default cap on `L_b = MN log₂K` for exhaustive enumeration.
pub const DEFAULT_MAX_FRAME_BITS: usize = 16;

/// `Q(x) = ½ erfc(x/√2)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Exact conditional PEP `Q(√(δγ_s/2))`.
pub fn cpep_q(delta: f64, gamma_s: f64) -> f64 {
    q_function((delta * gamma_s / 2.0).max(0.0).sqrt())
}

/// Chernoff form `½ exp(-δγ_s/4)`.
pub fn cpep_chernoff(delta: f64, gamma_s: f64) -> f64 {
    0.5 * (-delta * gamma_s / 4.0).exp()
}

/// Per-path factors `D_p` for a delay/Doppler structure (gains are ignored).
pub fn path_factors(
    paths: &[DelayDopplerPath],
    cfg: &OtsmConfig,
) -> Result<Vec<DMatrix<Complex64>>> {
    if cfg.is_zp() {
        return Err(Error::Unsupported(
            "error analysis is defined for CP frames only".into(),
        ));
    }
    let unit: Vec<DelayDopplerPath> = paths
        .iter()
        .map(|p| DelayDopplerPath::new(Complex64::new(1.0, 0.0), p.delay, p.doppler))
        .collect();
    Ok(build_ds_channel_cp(&unit, cfg)?.factors)
}

/// `Φ(x) = [D₁x … D_Px]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodewordMatrix {
    phi: DMatrix<Complex64>,
}

impl CodewordMatrix {
    pub fn new(x: &[Complex64], factors: &[DMatrix<Complex64>]) -> Result<Self> {
        if factors.is_empty() {
            return Err(invalid_arg("at least one path factor is required"));
        }
        let mn = x.len();
        if factors.iter().any(|d| d.shape() != (mn, mn)) {
            return Err(invalid_arg(format!("path factors must be {mn}x{mn}")));
        }
        let xv = nalgebra::DVector::from_column_slice(x);
        let mut phi = DMatrix::zeros(mn, factors.len());
        for (p, d) in factors.iter().enumerate() {
            phi.set_column(p, &(d * &xv));
        }
        Ok(Self { phi })
    }

    pub fn from_paths(
        x: &[Complex64],
        paths: &[DelayDopplerPath],
        cfg: &OtsmConfig,
    ) -> Result<Self> {
        if x.len() != cfg.frame_len() {
            return Err(invalid_arg(format!(
                "expected {} symbols, got {}",
                cfg.frame_len(),
                x.len()
            )));
        }
        Self::new(x, &path_factors(paths, cfg)?)
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.phi
    }

    pub fn paths(&self) -> usize {
        self.phi.ncols()
    }

    /// `Φ(x)h`.
    pub fn apply(&self, h: &[Complex64]) -> Result<Vec<Complex64>> {
        if h.len() != self.phi.ncols() {
            return Err(invalid_arg(format!(
                "expected {} gains, got {}",
                self.phi.ncols(),
                h.len()
            )));
        }
        Ok((&self.phi * nalgebra::DVector::from_column_slice(h))
            .iter()
            .copied()
            .collect())
    }
}

/// The event `x^c → x^e` through its difference matrix `Θ = Φ(e)ᴴΦ(e)`.
#[derive(Debug, Clone)]
pub struct PairwiseEvent {
    pub error: Vec<Complex64>,
    pub theta: DMatrix<Complex64>,
    /// Nonzero eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors `μ_i` matching `eigenvalues`, as columns.
    pub eigenvectors: DMatrix<Complex64>,
    /// Bits in which the two labels differ.
    pub bit_distance: u32,
}

impl PairwiseEvent {
    /// Event between two codewords given as constellation indices.
    pub fn new(
        xc: &[usize],
        xe: &[usize],
        factors: &[DMatrix<Complex64>],
        c: &Constellation,
    ) -> Result<Self> {
        if xc.len() != xe.len() {
            return Err(invalid_arg("codewords differ in length"));
        }
        if xc == xe {
            return Err(invalid_arg("pairwise event needs distinct codewords"));
        }
        if xc.iter().chain(xe).any(|&k| k >= c.order()) {
            return Err(invalid_arg("symbol index outside the constellation"));
        }
        let e: Vec<Complex64> = xc
            .iter()
            .zip(xe)
            .map(|(&a, &b)| c.point(a) - c.point(b))
            .collect();
        let bits = xc.iter().zip(xe).map(|(&a, &b)| c.bit_distance(a, b)).sum();
        let mut ev = Self::from_error(&e, factors)?;
        ev.bit_distance = bits;
        Ok(ev)
    }

    /// Event from an error vector alone; `bit_distance` is left at zero.
    pub fn from_error(e: &[Complex64], factors: &[DMatrix<Complex64>]) -> Result<Self> {
        if e.iter().all(|z| z.norm_sqr() == 0.0) {
            return Err(invalid_arg("error vector is zero"));
        }
        let phi = CodewordMatrix::new(e, factors)?;
        let theta = phi.phi.adjoint() * &phi.phi;
        let (eigenvalues, eigenvectors) = hermitian_eigen(&theta);
        Ok(Self {
            error: e.to_vec(),
            theta,
            eigenvalues,
            eigenvectors,
            bit_distance: 0,
        })
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn paths(&self) -> usize {
        self.theta.nrows()
    }

    /// `δ = hᴴΘh`.
    pub fn distance(&self, h: &[Complex64]) -> Result<f64> {
        if h.len() != self.paths() {
            return Err(invalid_arg("gain vector length does not match P"));
        }
        let hv = nalgebra::DVector::from_column_slice(h);
        Ok((hv.adjoint() * &self.theta * &hv)[(0, 0)].re)
    }
}

/// Descending eigenvalues above the rank threshold and their eigenvectors.
fn hermitian_eigen(theta: &DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let eig = SymmetricEigen::new(theta.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lmax = eig.eigenvalues[order[0]].max(0.0);
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > EIGEN_RANK_TOL * lmax)
        .collect();
    let vals = keep.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(theta.nrows(), keep.len(), |r, c| {
        eig.eigenvectors[(r, keep[c])]
    });
    (vals, vecs)
}

/// Rayleigh UPEP `½ Π(1 + λ_iγ_s/4P)⁻¹`, or its high-SNR form
/// `½ (Πλ_i)⁻¹ (γ_s/4P)^{-r}`.
pub fn upep_rayleigh(event: &PairwiseEvent, gamma_s: f64, asymptotic: bool) -> f64 {
    rayleigh_from_eigs(&event.eigenvalues, event.paths(), gamma_s, asymptotic)
}

fn rayleigh_from_eigs(eigs: &[f64], p: usize, gamma_s: f64, asymptotic: bool) -> f64 {
    let g = gamma_s / (4.0 * p as f64);
    if asymptotic {
        let prod: f64 = eigs.iter().product();
        0.5 / (prod * g.powi(eigs.len() as i32))
    } else {
        0.5 / eigs.iter().map(|l| 1.0 + l * g).product::<f64>()
    }
}

/// Rician UPEP with one factor `ζ_i` per nonzero eigenvalue.
pub fn upep_rician(event: &PairwiseEvent, gamma_s: f64, zeta: &[f64]) -> Result<f64> {
    if zeta.len() != event.rank() {
        return Err(invalid_arg(format!(
            "expected {} Rician factors, got {}",
            event.rank(),
            zeta.len()
        )));
    }
    if zeta.iter().any(|z| !(*z >= 0.0)) {
        return Err(invalid_arg("Rician factors must be non-negative"));
    }
    Ok(rician_from_eigs(
        &event.eigenvalues,
        event.paths(),
        gamma_s,
        zeta.iter().copied(),
    ))
}

fn rician_from_eigs(eigs: &[f64], p: usize, gamma_s: f64, zeta: impl Iterator<Item = f64>) -> f64 {
    let g = gamma_s / (4.0 * p as f64);
    eigs.iter().zip(zeta).fold(0.5, |acc, (l, z)| {
        let a = l * g;
        acc / (1.0 + a) * (-(z * a) / (1.0 + a)).exp()
    })
}

/// `ζ_i = |⟨E[h], μ_i⟩|²` for a mean gain vector.
pub fn rician_factors(event: &PairwiseEvent, mean_gain: &[Complex64]) -> Result<Vec<f64>> {
    if mean_gain.len() != event.paths() {
        return Err(invalid_arg("mean gain length does not match P"));
    }
    Ok((0..event.rank())
        .map(|i| {
            event
                .eigenvectors
                .column(i)
                .iter()
                .zip(mean_gain)
                .map(|(mu, h)| mu.conj() * h)
                .sum::<Complex64>()
                .norm_sqr()
        })
        .collect())
}

/// Imperfect-CSI UPEP `½ det(I + κΨ̃Θ)⁻¹` with `Ψ̃ = Ψ + σ_h²I` and
/// `κ = 1/(4σ_h² + 4N₀)`. `psi = None` means `Ψ = I/P`.
pub fn upep_imperfect_csi(
    event: &PairwiseEvent,
    n0: f64,
    sigma_h2: f64,
    psi: Option<&DMatrix<Complex64>>,
) -> Result<f64> {
    let p = event.paths();
    let psi_t = csi_covariance(p, sigma_h2, psi)?;
    if !(n0 >= 0.0) || (n0 == 0.0 && sigma_h2 == 0.0) {
        return Err(invalid_arg("N₀ + σ_h² must be positive"));
    }
    Ok(imperfect_from_theta(&event.theta, &psi_t, n0, sigma_h2))
}

fn csi_covariance(
    p: usize,
    sigma_h2: f64,
    psi: Option<&DMatrix<Complex64>>,
) -> Result<DMatrix<Complex64>> {
    if !(0.0..1.0).contains(&sigma_h2) {
        return Err(invalid_arg(format!("σ_h² = {sigma_h2} outside [0, 1)")));
    }
    let base = match psi {
        Some(m) => {
            if m.shape() != (p, p) {
                return Err(invalid_arg(format!("Ψ must be {p}x{p}")));
            }
            let herm_err = (m - m.adjoint())
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
            if herm_err > 1e-10 * scale {
                return Err(invalid_arg("Ψ is not Hermitian"));
            }
            let eig = SymmetricEigen::new(m.clone());
            let tr: f64 = (0..p).map(|i| m[(i, i)].re).sum();
            if eig
                .eigenvalues
                .iter()
                .any(|&l| l < -1e-10 * tr.abs().max(1.0))
            {
                return Err(invalid_arg("Ψ is not positive semidefinite"));
            }
            m.clone()
        }
        None => DMatrix::identity(p, p) * Complex64::new(1.0 / p as f64, 0.0),
    };
    Ok(base + DMatrix::identity(p, p) * Complex64::new(sigma_h2, 0.0))
}

fn imperfect_from_theta(
    theta: &DMatrix<Complex64>,
    psi_t: &DMatrix<Complex64>,
    n0: f64,
    sigma_h2: f64,
) -> f64 {
    let kappa = 1.0 / (4.0 * sigma_h2 + 4.0 * n0);
    let p = theta.nrows();
    let m = DMatrix::identity(p, p) + psi_t * theta * Complex64::new(kappa, 0.0);
    0.5 / m.determinant().re
}

/// UPEP flavour used by the union bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BoundMode {
    Rayleigh,
    /// The same Rician factor `ζ` for every eigen-direction.
    Rician {
        zeta: f64,
    },
    ImperfectCsi {
        sigma_h2: f64,
    },
    HighSnrAsymptote,
}

impl fmt::Display for BoundMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundMode::Rayleigh => write!(f, "rayleigh"),
            BoundMode::Rician { zeta } => write!(f, "rician({zeta})"),
            BoundMode::ImperfectCsi { sigma_h2 } => write!(f, "imperfect-csi({sigma_h2})"),
            BoundMode::HighSnrAsymptote => write!(f, "high-snr-asymptote"),
        }
    }
}

impl BoundMode {
    fn validate(&self) -> Result<()> {
        match *self {
            BoundMode::Rician { zeta } if !(zeta >= 0.0 && zeta.is_finite()) => {
                Err(invalid_arg("Rician factor must be non-negative"))
            }
            BoundMode::ImperfectCsi { sigma_h2 } if !(0.0..1.0).contains(&sigma_h2) => {
                Err(invalid_arg(format!("σ_h² = {sigma_h2} outside [0, 1)")))
            }
            _ => Ok(()),
        }
    }
}

/// Delay/Doppler structure the bound is evaluated for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PathStructure {
    /// Fixed `(delay, doppler)` pairs.
    Fixed { taps: Vec<(usize, f64)> },
    /// `P` paths drawn as in the uniform channel sampler, averaged over draws.
    Uniform {
        paths: usize,
        l_max: usize,
        k_max: usize,
        /// Keep every path in its own delay-Doppler bin.
        #[serde(default)]
        distinct: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundOptions {
    /// Placement draws averaged for a random structure.
    pub draws: usize,
    pub seed: u64,
    /// Refuse enumeration when `L_b` exceeds this.
    pub max_frame_bits: usize,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self {
            draws: 64,
            seed: 0,
            max_frame_bits: DEFAULT_MAX_FRAME_BITS,
        }
    }
}

/// A union-bound BER curve over an SNR (`γ_s`) grid in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub snr_db: Vec<f64>,
    pub bound: Vec<f64>,
    pub mode: BoundMode,
    pub draws: usize,
}

impl BoundCurve {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["snr_db", "bound", "mode", "draws"])?;
        let mode = self.mode.to_string();
        let draws = self.draws.to_string();
        for (s, b) in self.snr_db.iter().zip(&self.bound) {
            out.write_record([
                format!("{s}"),
                format!("{b:e}"),
                mode.clone(),
                draws.clone(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// SNR (dB) where the curve crosses `level`, interpolated in log-BER.
    pub fn snr_at(&self, level: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .snr_db
            .iter()
            .copied()
            .zip(self.bound.iter().copied())
            .collect();
        pts.windows(2).find_map(|w| {
            let ((s0, b0), (s1, b1)) = (w[0], w[1]);
            if b0 >= level && b1 <= level && b0 > 0.0 && b1 > 0.0 {
                if b0 == b1 {
                    return Some(s0);
                }
                let t = (b0.ln() - level.ln()) / (b0.ln() - b1.ln());
                Some(s0 + t * (s1 - s0))
            } else {
                None
            }
        })
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Distinct symbol differences `a_c - a_e` with their pair counts and summed
/// bit distances. The zero difference comes first.
fn difference_classes(c: &Constellation) -> Vec<(Complex64, u64, u64)> {
    let mut classes: Vec<(Complex64, u64, u64)> = vec![(Complex64::default(), 0, 0)];
    for a in 0..c.order() {
        for b in 0..c.order() {
            let d = c.point(a) - c.point(b);
            let bits = c.bit_distance(a, b) as u64;
            match classes.iter_mut().find(|(v, _, _)| (v - d).norm() < 1e-9) {
                Some(cls) => {
                    cls.1 += 1;
                    cls.2 += bits;
                }
                None => classes.push((d, 1, bits)),
            }
        }
    }
    classes
}

/// Union bound for explicit path factors, summed over error vectors.
/// Each error vector `e` carries the weight `Σ e(x^c, x^e)` over all pairs
/// with that difference; the weights factor per symbol position.
pub fn union_bound_for_factors(
    factors: &[DMatrix<Complex64>],
    c: &Constellation,
    mode: BoundMode,
    snr_db: &[f64],
    max_frame_bits: usize,
) -> Result<Vec<f64>> {
    mode.validate()?;
    let mn = factors
        .first()
        .map(|d| d.nrows())
        .ok_or_else(|| invalid_arg("no path factors"))?;
    let lb = mn * c.bits_per_symbol();
    if lb > max_frame_bits {
        return Err(Error::SearchSpaceTooLarge {
            required: lb as f64,
            cap: max_frame_bits as f64,
        });
    }
    if matches!(mode, BoundMode::ImperfectCsi { .. }) && !c.is_constant_envelope() {
        return Err(Error::Unsupported(
            "the imperfect-CSI bound assumes a constant-envelope constellation".into(),
        ));
    }
    let p = factors.len();
    let gammas: Vec<f64> = snr_db.iter().map(|&s| db_to_linear(s)).collect();
    let psi_t = match mode {
        BoundMode::ImperfectCsi { sigma_h2 } => Some(csi_covariance(p, sigma_h2, None)?),
        _ => None,
    };
    let classes = difference_classes(c);
    let nc = classes.len();

    // partition by the class of the first position; fixed reduction order
    let partial: Vec<Vec<f64>> = (0..nc)
        .into_par_iter()
        .map(|first| {
            let mut acc = vec![0.0; gammas.len()];
            let mut idx = vec![0usize; mn];
            idx[0] = first;
            let mut e = vec![Complex64::default(); mn];
            loop {
                if idx.iter().any(|&k| k != 0) {
                    let count: f64 = idx.iter().map(|&k| classes[k].1 as f64).product();
                    let weight: f64 = idx
                        .iter()
                        .map(|&k| classes[k].2 as f64 * count / classes[k].1 as f64)
                        .sum();
                    if weight > 0.0 {
                        for (z, &k) in e.iter_mut().zip(&idx) {
                            *z = classes[k].0;
                        }
                        let theta = {
                            let phi =
                                CodewordMatrix::new(&e, factors).expect("factor shapes checked");
                            phi.phi.adjoint() * &phi.phi
                        };
                        for (a, &g) in acc.iter_mut().zip(&gammas) {
                            *a += weight * event_upep(&theta, p, g, mode, psi_t.as_ref());
                        }
                    }
                }
                // odometer over positions 1..mn
                let mut pos = mn;
                loop {
                    if pos <= 1 {
                        return acc;
                    }
                    pos -= 1;
                    idx[pos] += 1;
                    if idx[pos] < nc {
                        break;
                    }
                    idx[pos] = 0;
                }
            }
        })
        .collect();

    let norm = lb as f64 * 2f64.powi(lb as i32);
    let mut total = vec![0.0; gammas.len()];
    for part in partial {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    Ok(total.into_iter().map(|v| v / norm).collect())
}

fn event_upep(
    theta: &DMatrix<Complex64>,
    p: usize,
    gamma: f64,
    mode: BoundMode,
    psi_t: Option<&DMatrix<Complex64>>,
) -> f64 {
    match mode {
        BoundMode::ImperfectCsi { sigma_h2 } => imperfect_from_theta(
            theta,
            psi_t.expect("covariance prepared"),
            1.0 / gamma,
            sigma_h2,
        ),
        _ => {
            let (eigs, _) = hermitian_eigen(theta);
            match mode {
                BoundMode::Rayleigh => rayleigh_from_eigs(&eigs, p, gamma, false),
                BoundMode::HighSnrAsymptote => rayleigh_from_eigs(&eigs, p, gamma, true),
                BoundMode::Rician { zeta } => {
                    rician_from_eigs(&eigs, p, gamma, std::iter::repeat(zeta))
                }
                BoundMode::ImperfectCsi { .. } => unreachable!(),
            }
        }
    }
}

/// Union-bound BER curve for a CP configuration. Random structures are
/// averaged over `opts.draws` placements.
pub fn ber_union_bound(
    cfg: &OtsmConfig,
    structure: &PathStructure,
    mode: BoundMode,
    snr_db: &[f64],
    opts: &BoundOptions,
) -> Result<BoundCurve> {
    cfg.validate()?;
    if cfg.is_zp() {
        return Err(invalid_cfg("union bounds are defined for CP frames"));
    }
    if snr_db.is_empty() {
        return Err(invalid_arg("empty SNR grid"));
    }
    let c = cfg.constellation();
    let lb = cfg.bits_per_frame();
    if lb > opts.max_frame_bits {
        return Err(Error::SearchSpaceTooLarge {
            required: lb as f64,
            cap: opts.max_frame_bits as f64,
        });
    }
    let (bound, draws) = match structure {
        PathStructure::Fixed { taps } => {
            if taps.is_empty() {
                return Err(invalid_arg("no taps"));
            }
            let paths: Vec<DelayDopplerPath> = taps
                .iter()
                .map(|&(l, k)| DelayDopplerPath::new(Complex64::new(1.0, 0.0), l as f64, k))
                .collect();
            let f = path_factors(&paths, cfg)?;
            (
                union_bound_for_factors(&f, &c, mode, snr_db, opts.max_frame_bits)?,
                1,
            )
        }
        PathStructure::Uniform {
            paths,
            l_max,
            k_max,
            distinct,
        } => {
            if opts.draws == 0 {
                return Err(invalid_arg("at least one placement draw is required"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut sum = vec![0.0; snr_db.len()];
            for _ in 0..opts.draws {
                let drawn = if *distinct {
                    sample_paths_uniform_distinct(*paths, *l_max as i64, *k_max as i64, &mut rng)?
                } else {
                    sample_paths_uniform(*paths, *l_max as i64, *k_max as i64, false, &mut rng)?
                };
                let f = path_factors(&drawn, cfg)?;
                let b = union_bound_for_factors(&f, &c, mode, snr_db, opts.max_frame_bits)?;
                sum.iter_mut().zip(b).for_each(|(s, v)| *s += v);
            }
            (
                sum.into_iter().map(|v| v / opts.draws as f64).collect(),
                opts.draws,
            )
        }
    };
    Ok(BoundCurve {
        snr_db: snr_db.to_vec(),
        bound,
        mode,
        draws,
    })
}
