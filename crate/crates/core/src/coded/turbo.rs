use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::exit::mutual_information;
use super::ldpc::LdpcCode;
use super::llr::{hard_bits, llr_to_symbol_priors, symbols_to_extrinsic_llr};
use super::Interleaver;
use crate::detectors::{
    amp_detect, vamp_em_detect, AmpOptions, DetectorKind, SymbolPriors, VampOptions,
};
use crate::error::{invalid_arg, invalid_cfg, Error, Result};
use crate::linalg::LinearSystem;
use crate::modem::Constellation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TurboOptions {
    /// Outer detector/decoder iterations `T_out`.
    pub outer_iters: usize,
    /// SPA iterations per outer iteration `T_in`.
    pub inner_iters: usize,
    pub detector: DetectorKind,
    pub amp: AmpOptions,
    pub vamp: VampOptions,
    pub interleaver_seed: u64,
}

impl Default for TurboOptions {
    fn default() -> Self {
        Self {
            outer_iters: 4,
            inner_iters: 4,
            detector: DetectorKind::VampEm,
            amp: AmpOptions::default(),
            vamp: VampOptions::default(),
            interleaver_seed: 0,
        }
    }
}

impl TurboOptions {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.detector, DetectorKind::Amp | DetectorKind::VampEm) {
            return Err(invalid_cfg(format!(
                "turbo reception needs a soft-output message-passing detector, not {}",
                self.detector.name()
            )));
        }
        if self.outer_iters == 0 || self.inner_iters == 0 {
            return Err(invalid_cfg("turbo iteration counts must be positive"));
        }
        self.vamp.validate()
    }
}

/// Extrinsic symbol messages from one soft detector activation.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftOutput {
    pub chi: Vec<Complex64>,
    pub sigma: Vec<f64>,
    pub noise_precision: Option<f64>,
}

/// Runs AMP or VAMP-EM and returns `(χ, σ)`, or `None` if the detector
/// diverged. AMP uses `gamma_n`; VAMP-EM learns the noise level itself.
pub fn soft_detect(
    kind: DetectorKind,
    y: &[Complex64],
    sys: &LinearSystem,
    c: &Constellation,
    gamma_n: f64,
    amp: &AmpOptions,
    vamp: &VampOptions,
    priors: Option<&SymbolPriors>,
) -> Result<Option<SoftOutput>> {
    let res = match kind {
        DetectorKind::Amp => amp_detect(y, sys, gamma_n, c, amp, priors),
        DetectorKind::VampEm => vamp_em_detect(y, sys, c, vamp, None, priors),
        other => return Err(invalid_cfg(format!("{} has no soft output", other.name()))),
    };
    match res {
        Ok(r) => {
            let ok = r.extrinsic_var.iter().all(|v| v.is_finite() && *v > 0.0);
            Ok(ok.then_some(SoftOutput {
                chi: r.extrinsic_mean,
                sigma: r.extrinsic_var,
                noise_precision: r.noise_precision,
            }))
        }
        Err(Error::Divergence { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Known transmitted data, used only for per-iteration diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct Reference<'a> {
    pub info: &'a [u8],
    /// Codeword in code order (before interleaving).
    pub codeword: &'a [u8],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurboIteration {
    pub detector_diverged: bool,
    pub decoder_converged: bool,
    pub decoder_iterations: usize,
    /// Information bit errors after this iteration (with a reference).
    pub info_errors: Option<usize>,
    /// MI between detector extrinsic LLRs and the coded bits.
    pub detector_mi: Option<f64>,
    /// MI between decoder extrinsic LLRs and the coded bits.
    pub decoder_mi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurboOutput {
    pub info_bits: Vec<u8>,
    pub codeword: Vec<u8>,
    pub iterations: Vec<TurboIteration>,
}

impl TurboOutput {
    pub fn diverged_any(&self) -> bool {
        self.iterations.iter().any(|i| i.detector_diverged)
    }
}

/// Iterative detection and decoding. The coded bits were interleaved with
/// `pi` and Gray-mapped MSB first, `bits_per_symbol` per symbol.
#[allow(clippy::too_many_arguments)]
pub fn turbo_receive(
    y: &[Complex64],
    sys: &LinearSystem,
    c: &Constellation,
    code: &LdpcCode,
    pi: &Interleaver,
    gamma_n: f64,
    opts: &TurboOptions,
    reference: Option<Reference<'_>>,
) -> Result<TurboOutput> {
    opts.validate()?;
    let q = c.bits_per_symbol();
    if pi.len() != code.n() {
        return Err(invalid_arg("interleaver and code lengths differ"));
    }
    if code.n() != sys.ncols() * q {
        return Err(invalid_arg(format!(
            "code length {} does not fill {} symbols of {q} bits",
            code.n(),
            sys.ncols()
        )));
    }
    if let Some(r) = reference {
        if r.info.len() != code.k() || r.codeword.len() != code.n() {
            return Err(invalid_arg("reference length mismatch"));
        }
    }

    let mut apriori = vec![0.0; code.n()];
    let mut iterations = Vec::with_capacity(opts.outer_iters);
    let mut codeword = vec![0u8; code.n()];
    for t in 0..opts.outer_iters {
        let priors = if t == 0 {
            None
        } else {
            Some(llr_to_symbol_priors(&apriori, c)?)
        };
        let soft = soft_detect(
            opts.detector,
            y,
            sys,
            c,
            gamma_n,
            &opts.amp,
            &opts.vamp,
            priors.as_ref(),
        )?;
        let detector_diverged = soft.is_none();
        let det_ext = match soft {
            Some(s) => {
                symbols_to_extrinsic_llr(&s.chi, &s.sigma, (t > 0).then_some(&apriori[..]), c)?
            }
            None => vec![0.0; code.n()],
        };
        let channel = pi.deinterleave(&det_ext);
        let dec = code.decode(&channel, opts.inner_iters)?;
        codeword = hard_bits(&dec.posterior);
        let (info_errors, detector_mi, decoder_mi) = match reference {
            Some(r) => {
                let info = code.extract_info(&codeword);
                let errs = info.iter().zip(r.info).filter(|(a, b)| a != b).count();
                (
                    Some(errs),
                    Some(mutual_information(&channel, r.codeword)),
                    Some(mutual_information(&dec.extrinsic, r.codeword)),
                )
            }
            None => (None, None, None),
        };
        iterations.push(TurboIteration {
            detector_diverged,
            decoder_converged: dec.converged,
            decoder_iterations: dec.iterations,
            info_errors,
            detector_mi,
            decoder_mi,
        });
        apriori = pi.interleave(&dec.extrinsic);
    }
    Ok(TurboOutput {
        info_bits: code.extract_info(&codeword),
        codeword,
        iterations,
    })
}
