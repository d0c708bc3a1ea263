//! TV–KL recovery of images observed through Poisson noise, solved by
//! (linearized) ADMM, with regularization-parameter selection by residual
//! whiteness and by discrepancy rules.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod admm;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod io;
pub mod metrics;
pub mod operators;
pub mod phantom;
pub mod poisson;
pub mod prox;
pub mod rng;
pub mod selection;
pub mod selftest;
pub mod whiteness;

pub use error::{Error, Result};
