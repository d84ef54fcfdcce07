use num_complex::Complex64;

use crate::detectors::SymbolPriors;
use crate::error::{invalid_arg, Result};
use crate::modem::Constellation;

/// LLR magnitude limit.
pub const LLR_CLIP: f64 = 30.0;

pub fn clip_llr(l: f64) -> f64 {
    if l.is_nan() {
        0.0
    } else {
        l.clamp(-LLR_CLIP, LLR_CLIP)
    }
}

/// `ln P(bit = b)` for a bit with LLR `l` (positive favours 0).
pub fn log_bit_prob(l: f64, b: u8) -> f64 {
    let z = if b == 0 { -l } else { l };
    // -ln(1 + e^z)
    -(if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    })
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Extrinsic bit LLRs from symbol messages `(χ, σ)`:
/// `ln Σ_{s_k(n)=0} ϱ_{j,k} Π_{n'≠n} P(s_k(n')) − ln Σ_{s_k(n)=1} (…)` with
/// `ϱ_{j,k} = exp(−|χ(j) − a_k|²/σ(j))`. `priors` holds one a priori LLR per
/// bit (symbol-major, label order), or `None` for equiprobable bits.
pub fn symbols_to_extrinsic_llr(
    chi: &[Complex64],
    sigma: &[f64],
    priors: Option<&[f64]>,
    c: &Constellation,
) -> Result<Vec<f64>> {
    let q = c.bits_per_symbol();
    if sigma.len() != chi.len() {
        return Err(invalid_arg("χ and σ lengths differ"));
    }
    if let Some(p) = priors {
        if p.len() != chi.len() * q {
            return Err(invalid_arg(format!(
                "expected {} prior LLRs, got {}",
                chi.len() * q,
                p.len()
            )));
        }
    }
    if sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(invalid_arg("σ must be positive"));
    }
    let k = c.order();
    let mut out = Vec::with_capacity(chi.len() * q);
    let mut metric = vec![0.0; k];
    let mut zero = Vec::with_capacity(k);
    let mut one = Vec::with_capacity(k);
    for (j, (&x, &s)) in chi.iter().zip(sigma).enumerate() {
        for (kk, m) in metric.iter_mut().enumerate() {
            *m = -(x - c.point(kk)).norm_sqr() / s;
        }
        for n in 0..q {
            zero.clear();
            one.clear();
            for (kk, &m) in metric.iter().enumerate() {
                let mut w = m;
                if let Some(p) = priors {
                    for n2 in (0..q).filter(|&n2| n2 != n) {
                        w += log_bit_prob(p[j * q + n2], c.bit(kk, n2));
                    }
                }
                if c.bit(kk, n) == 0 {
                    zero.push(w);
                } else {
                    one.push(w);
                }
            }
            out.push(clip_llr(log_sum_exp(&zero) - log_sum_exp(&one)));
        }
    }
    Ok(out)
}

/// Symbol prior table `P(x(j) = a_k) = Π_n ½[1 + s̃_k(n) tanh(L(c_j(n))/2)]`,
/// evaluated as a product of logistic terms.
pub fn llr_to_symbol_priors(llr: &[f64], c: &Constellation) -> Result<SymbolPriors> {
    let q = c.bits_per_symbol();
    if llr.len() % q != 0 {
        return Err(invalid_arg(format!(
            "{} LLRs do not fill whole {q}-bit symbols",
            llr.len()
        )));
    }
    if llr.iter().any(|l| !l.is_finite()) {
        return Err(invalid_arg("LLRs must be finite"));
    }
    let k = c.order();
    let mut probs = Vec::with_capacity(llr.len() / q * k);
    for bits in llr.chunks(q) {
        for kk in 0..k {
            let p: f64 = bits
                .iter()
                .enumerate()
                .map(|(n, &l)| bit_prob(clip_llr(l), c.bit(kk, n)))
                .product();
            probs.push(p);
        }
    }
    SymbolPriors::new(k, probs)
}

/// `P(bit = b) = ½[1 ± tanh(l/2)]`.
pub fn bit_prob(l: f64, b: u8) -> f64 {
    let z = if b == 0 { l } else { -l };
    1.0 / (1.0 + (-z).exp())
}

/// Hard decisions from LLRs (ties go to 0).
pub fn hard_bits(llr: &[f64]) -> Vec<u8> {
    llr.iter().map(|&l| u8::from(l < 0.0)).collect()
}
