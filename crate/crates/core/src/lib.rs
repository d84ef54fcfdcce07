//! Orthogonal time sequency multiplexing (OTSM): modem, channel models,
//! detectors, error-rate analysis and coded turbo reception.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod analysis;
pub mod channel;
pub mod coded;
pub mod detectors;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod modem;
pub mod rng;
pub mod sparse;
pub mod transforms;

pub use error::{Error, Result};
pub use modem::{CodeRate, Constellation, DsFrame, Guard, OtsmConfig, OtsmModem};
pub use num_complex::Complex64;
