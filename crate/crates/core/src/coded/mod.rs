//! LDPC coding, bit/symbol LLR conversion, turbo reception and EXIT charts.

mod exit;
mod ldpc;
mod llr;
mod turbo;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid_arg, Result};

pub use exit::{
    decoder_exit, detector_exit_samples, exit_curve, j_function, j_inverse, mutual_information,
    synthesize_apriori_llr, write_exit_csv, Aggregate, ExitComponent, ExitFrame, ExitPoint,
};
pub use ldpc::{DecodeOutput, LdpcCode};
pub use llr::{
    bit_prob, clip_llr, hard_bits, llr_to_symbol_priors, log_bit_prob, symbols_to_extrinsic_llr,
    LLR_CLIP,
};
pub use turbo::{
    soft_detect, turbo_receive, Reference, SoftOutput, TurboIteration, TurboOptions, TurboOutput,
};

/// Seeded uniform permutation of coded bits; `interleave(x)[i] = x[π(i)]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interleaver {
    perm: Vec<usize>,
    inverse: Vec<usize>,
}

impl Interleaver {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut perm: Vec<usize> = (0..len).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self::from_perm(perm).expect("shuffle is a permutation")
    }

    pub fn identity(len: usize) -> Self {
        Self::from_perm((0..len).collect()).expect("identity is a permutation")
    }

    pub fn from_perm(perm: Vec<usize>) -> Result<Self> {
        let mut inverse = vec![usize::MAX; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            if p >= perm.len() || inverse[p] != usize::MAX {
                return Err(invalid_arg("not a permutation"));
            }
            inverse[p] = i;
        }
        Ok(Self { perm, inverse })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn interleave<T: Copy>(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.len(), "interleaver length mismatch");
        self.perm.iter().map(|&p| x[p]).collect()
    }

    pub fn deinterleave<T: Copy>(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.len(), "interleaver length mismatch");
        self.inverse.iter().map(|&i| x[i]).collect()
    }
}
