//! Dynamic quantile linear models.
//!
//! The observation at time `t` follows an asymmetric Laplace law whose
//! τ-quantile is `F_t' θ_t`, with states evolving as a Gaussian DLM. Two
//! inference routes are provided:
//!
//! * [`mcmc`]: Gibbs sampling over the normal–exponential mixture with
//!   forward-filtering backward-sampling for the states.
//! * [`seqfilter`]: a sequential filter that carries `log U_t` as an extra
//!   state, propagates it through a gamma/log-normal bridge and updates by
//!   Bayes linear estimation. Its one-step predictive is NGAL, which gives
//!   the marginal likelihood used to fit the scale by MAP.
//!
//! [`forecast`] propagates either engine's posterior k steps ahead.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributions;
pub mod error;
pub mod forecast;
pub mod linalg;
pub mod mcmc;
pub mod model;
pub mod quadrature;
pub mod seqfilter;
pub mod simulate;
pub mod special;

pub use error::{DqlmError, Result};
