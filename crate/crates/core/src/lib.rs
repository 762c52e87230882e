//! Differentiable particle filtering for partially observed Markov process
//! models.
//!
//! The crate provides a plug-and-play model interface ([`pomp::Model`]), a
//! reverse-mode tape ([`ad`]), counter-based random streams ([`prng`]), the
//! off-parameter resampled particle filter [`mop`] whose log-likelihood
//! estimate can be differentiated, and the inference methods built on it:
//! iterated filtering ([`mif2`]), the hybrid IF2 + gradient optimizer
//! ([`ifad`]) and a NUTS sampler driven by the filter's score ([`bayes`]).
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ad;
pub mod bayes;
pub mod error;
pub mod harness;
pub mod ifad;
pub mod mif2;
pub mod mop;
pub mod oracle;
pub mod pomp;
pub mod prng;
pub mod resample;

pub use error::{Error, Result};
