//! Bit mapping, delay-sequency frame assembly and the OTSM transform chain.
//!
//! Symbol layout is delay-major: element `m * N + n` of the padded vector holds
//! delay bin `m`, sequency bin `n`. The last `L_ZP` delay rows of a ZP frame
//! are guard rows and stay zero.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, invalid_cfg, Error, Result};
use crate::transforms::{check_power_of_two, PerfectShuffle, WalshTransform};

/// Unit-energy, Gray-labelled constellation.
///
/// Point `k` carries the bit label given by the binary expansion of `k`
/// (most significant bit first). BPSK maps `0 -> +1`; square QAM uses a
/// reflected Gray code per axis, in-phase bits first, with bit value 0 on the
/// positive side of each axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    order: usize,
    bits_per_symbol: usize,
    points: Vec<Complex64>,
}

fn gray_decode(mut g: usize) -> usize {
    let mut b = g;
    while g > 0 {
        g >>= 1;
        b ^= g;
    }
    b
}

impl Constellation {
    pub fn new(order: usize) -> Result<Self> {
        let points = match order {
            2 => vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
            4 | 16 | 64 => {
                let bits = order.trailing_zeros() as usize;
                let axis_bits = bits / 2;
                let levels = 1usize << axis_bits;
                let norm = (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
                let amp = |g: usize| (levels as f64 - 1.0) - 2.0 * gray_decode(g) as f64;
                (0..order)
                    .map(|k| {
                        let gi = k >> axis_bits;
                        let gq = k & (levels - 1);
                        Complex64::new(amp(gi) / norm, amp(gq) / norm)
                    })
                    .collect()
            }
            _ => {
                return Err(invalid_arg(format!(
                    "unsupported constellation order {order} (expected 2, 4, 16 or 64)"
                )))
            }
        };
        Ok(Self {
            order,
            bits_per_symbol: order.trailing_zeros() as usize,
            points,
        })
    }

    pub fn bpsk() -> Self {
        Self::new(2).expect("static order")
    }

    pub fn qpsk() -> Self {
        Self::new(4).expect("static order")
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, k: usize) -> Complex64 {
        self.points[k]
    }

    /// Bit `n` (0 = first transmitted bit) of the label of point `k`.
    #[inline]
    pub fn bit(&self, k: usize, n: usize) -> u8 {
        ((k >> (self.bits_per_symbol - 1 - n)) & 1) as u8
    }

    pub fn label(&self, k: usize) -> Vec<u8> {
        (0..self.bits_per_symbol).map(|n| self.bit(k, n)).collect()
    }

    /// Index of the nearest point; ties go to the lower index.
    pub fn nearest(&self, z: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    pub fn max_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).fold(0.0, f64::max)
    }

    pub fn is_constant_envelope(&self) -> bool {
        let e0 = self.points[0].norm_sqr();
        self.points
            .iter()
            .all(|p| (p.norm_sqr() - e0).abs() < 1e-12)
    }

    pub fn bit_distance(&self, a: usize, b: usize) -> u32 {
        (a ^ b).count_ones()
    }
}

/// Groups bits into constellation indices.
pub fn bits_to_indices(bits: &[u8], c: &Constellation) -> Result<Vec<usize>> {
    let q = c.bits_per_symbol();
    if bits.len() % q != 0 {
        return Err(invalid_arg(format!(
            "bit count {} is not a multiple of {q}",
            bits.len()
        )));
    }
    bits.chunks_exact(q)
        .map(|group| {
            group.iter().try_fold(0usize, |acc, &b| match b {
                0 | 1 => Ok((acc << 1) | b as usize),
                _ => Err(invalid_arg(format!("bit value {b} is not 0 or 1"))),
            })
        })
        .collect()
}

pub fn indices_to_bits(indices: &[usize], c: &Constellation) -> Vec<u8> {
    let mut out = Vec::with_capacity(indices.len() * c.bits_per_symbol());
    for &k in indices {
        out.extend((0..c.bits_per_symbol()).map(|n| c.bit(k, n)));
    }
    out
}

/// Maps a bit sequence onto constellation symbols.
pub fn map_bits(bits: &[u8], c: &Constellation) -> Result<Vec<Complex64>> {
    Ok(bits_to_indices(bits, c)?
        .into_iter()
        .map(|k| c.point(k))
        .collect())
}

/// Nearest-point hard demapping back to bits.
pub fn demap_hard(symbols: &[Complex64], c: &Constellation) -> Vec<u8> {
    let idx: Vec<usize> = symbols.iter().map(|&z| c.nearest(z)).collect();
    indices_to_bits(&idx, c)
}

/// Guard interval of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "length")]
pub enum Guard {
    /// Zero padding of the last `L_ZP` delay rows.
    Zp(usize),
    /// Cyclic prefix of the whole time-domain frame (generalized OTSM).
    Cp(usize),
}

/// Frame geometry and numerology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtsmConfig {
    /// Delay bins `M`.
    pub m: usize,
    /// Sequency bins `N` (power of two).
    pub n: usize,
    pub guard: Guard,
    /// Subcarrier spacing `Δf` in Hz.
    pub subcarrier_spacing: f64,
    /// Constellation order `K`.
    pub modulation_order: usize,
}

impl OtsmConfig {
    pub fn new(
        m: usize,
        n: usize,
        guard: Guard,
        subcarrier_spacing: f64,
        modulation_order: usize,
    ) -> Result<Self> {
        let cfg = Self {
            m,
            n,
            guard,
            subcarrier_spacing,
            modulation_order,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn zp(
        m: usize,
        n: usize,
        l_zp: usize,
        subcarrier_spacing: f64,
        modulation_order: usize,
    ) -> Result<Self> {
        Self::new(m, n, Guard::Zp(l_zp), subcarrier_spacing, modulation_order)
    }

    pub fn cp(
        m: usize,
        n: usize,
        l_cp: usize,
        subcarrier_spacing: f64,
        modulation_order: usize,
    ) -> Result<Self> {
        Self::new(m, n, Guard::Cp(l_cp), subcarrier_spacing, modulation_order)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(invalid_cfg("M must be at least 1"));
        }
        check_power_of_two(self.n, "N").map_err(|e| invalid_cfg(e.to_string()))?;
        if let Guard::Zp(l) = self.guard {
            if l >= self.m {
                return Err(invalid_cfg(format!(
                    "ZP length {l} leaves no data rows for M = {}",
                    self.m
                )));
            }
        }
        if !(self.subcarrier_spacing.is_finite() && self.subcarrier_spacing > 0.0) {
            return Err(invalid_cfg("subcarrier spacing must be positive"));
        }
        Constellation::new(self.modulation_order).map_err(|e| invalid_cfg(e.to_string()))?;
        Ok(())
    }

    pub fn constellation(&self) -> Constellation {
        Constellation::new(self.modulation_order).expect("validated order")
    }

    /// `MN`.
    pub fn frame_len(&self) -> usize {
        self.m * self.n
    }

    pub fn zp_len(&self) -> usize {
        match self.guard {
            Guard::Zp(l) => l,
            Guard::Cp(_) => 0,
        }
    }

    /// Data-carrying delay rows `L_D`.
    pub fn data_rows(&self) -> usize {
        self.m - self.zp_len()
    }

    /// Number of data symbols `J`.
    pub fn data_symbols(&self) -> usize {
        self.n * self.data_rows()
    }

    pub fn bits_per_frame(&self) -> usize {
        self.data_symbols() * self.constellation().bits_per_symbol()
    }

    /// Symbol duration `T = 1/Δf` in seconds.
    pub fn symbol_duration(&self) -> f64 {
        1.0 / self.subcarrier_spacing
    }

    pub fn bandwidth(&self) -> f64 {
        self.m as f64 * self.subcarrier_spacing
    }

    /// `T_f = N T`.
    pub fn frame_duration(&self) -> f64 {
        self.n as f64 * self.symbol_duration()
    }

    pub fn is_zp(&self) -> bool {
        matches!(self.guard, Guard::Zp(_))
    }
}

/// Code rate `num/den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CodeRate {
    pub num: usize,
    pub den: usize,
}

impl CodeRate {
    pub const UNCODED: CodeRate = CodeRate { num: 1, den: 1 };

    pub fn new(num: usize, den: usize) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(invalid_arg(format!("invalid code rate {num}/{den}")));
        }
        Ok(Self { num, den })
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for CodeRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for CodeRate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s.split_once('/').unwrap_or((s, "1"));
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| invalid_arg(format!("invalid code rate {s:?}")))
        };
        Self::new(parse(a)?, parse(b)?)
    }
}

impl TryFrom<String> for CodeRate {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CodeRate> for String {
    fn from(r: CodeRate) -> String {
        r.to_string()
    }
}

/// Information bits carried by one frame at the given code rate.
pub fn frame_bits_capacity(cfg: &OtsmConfig, rate: CodeRate) -> Result<usize> {
    cfg.validate()?;
    let coded = cfg.bits_per_frame();
    if (coded * rate.num) % rate.den != 0 {
        return Err(invalid_cfg(format!(
            "{coded} coded bits per frame is not compatible with rate {rate}"
        )));
    }
    Ok(coded * rate.num / rate.den)
}

/// A delay-sequency frame: data symbols plus their zero-padded layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DsFrame {
    data_rows: usize,
    n: usize,
    padded: Vec<Complex64>,
}

impl DsFrame {
    pub fn assemble(data: &[Complex64], cfg: &OtsmConfig) -> Result<Self> {
        let j = cfg.data_symbols();
        if data.len() != j {
            return Err(invalid_arg(format!(
                "frame expects {j} data symbols, got {}",
                data.len()
            )));
        }
        let mut padded = vec![Complex64::default(); cfg.frame_len()];
        padded[..j].copy_from_slice(data);
        Ok(Self {
            data_rows: cfg.data_rows(),
            n: cfg.n,
            padded,
        })
    }

    pub fn data(&self) -> &[Complex64] {
        &self.padded[..self.data_rows * self.n]
    }

    pub fn padded(&self) -> &[Complex64] {
        &self.padded
    }

    /// `X_DS`, the `L_D x N` data matrix.
    pub fn matrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.data_rows, self.n, |r, c| self.padded[r * self.n + c])
    }

    pub fn from_matrix(x_ds: &DMatrix<Complex64>, cfg: &OtsmConfig) -> Result<Self> {
        if x_ds.shape() != (cfg.data_rows(), cfg.n) {
            return Err(invalid_arg("data matrix shape does not match the frame"));
        }
        let data: Vec<Complex64> = (0..cfg.data_rows())
            .flat_map(|r| (0..cfg.n).map(move |c| (r, c)))
            .map(|(r, c)| x_ds[(r, c)])
            .collect();
        Self::assemble(&data, cfg)
    }
}

/// Cached transform chain for one frame geometry.
#[derive(Debug, Clone)]
pub struct OtsmModem {
    cfg: OtsmConfig,
    walsh: WalshTransform,
    // delay-major -> time order, and back
    to_time: PerfectShuffle,
    to_ds: PerfectShuffle,
}

impl OtsmModem {
    pub fn new(cfg: &OtsmConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            walsh: WalshTransform::new(cfg.n)?,
            to_time: PerfectShuffle::new(cfg.n, cfg.m)?,
            to_ds: PerfectShuffle::new(cfg.m, cfg.n)?,
        })
    }

    pub fn config(&self) -> &OtsmConfig {
        &self.cfg
    }

    /// Time-domain samples of a full (already padded) DS vector.
    pub fn modulate_padded(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.cfg.frame_len() {
            return Err(invalid_arg(format!(
                "expected {} DS samples, got {}",
                self.cfg.frame_len(),
                x.len()
            )));
        }
        let mut v = x.to_vec();
        self.walsh.apply_blocks(&mut v);
        Ok(self.to_time.apply(&v))
    }

    /// `s = (W_N ⊗ I_M) P x` for the data symbols of one frame.
    pub fn modulate(&self, data: &[Complex64]) -> Result<Vec<Complex64>> {
        let frame = DsFrame::assemble(data, &self.cfg)?;
        self.modulate_padded(frame.padded())
    }

    /// `y = (I_M ⊗ W_N) P^T r_T`.
    pub fn receive(&self, r: &[Complex64]) -> Result<Vec<Complex64>> {
        if r.len() != self.cfg.frame_len() {
            return Err(invalid_arg(format!(
                "expected {} received samples, got {}",
                self.cfg.frame_len(),
                r.len()
            )));
        }
        let mut v = self.to_ds.apply(r);
        self.walsh.apply_blocks(&mut v);
        Ok(v)
    }
}

pub fn otsm_modulate(data: &[Complex64], cfg: &OtsmConfig) -> Result<Vec<Complex64>> {
    OtsmModem::new(cfg)?.modulate(data)
}

pub fn otsm_receive_transform(r: &[Complex64], cfg: &OtsmConfig) -> Result<Vec<Complex64>> {
    OtsmModem::new(cfg)?.receive(r)
}
