//! Estimation of national immunization coverage time series from multiple
//! partially-observed data sources (administrative, official and survey
//! reports).
//!
//! The crate ingests per-source coverage CSV files, applies the standard
//! bias corrections (recall-bias adjustment, survey-estimate selection,
//! dose-ratio construction, clamping and logit transformation), fits one of
//! two Bayesian hierarchical models -- a balanced-data single-likelihood
//! (BDSL) model or an irregular-data multiple-likelihood (IDML) model --
//! with a blocked Gibbs / slice sampler, and turns the posterior draws into
//! smoothed coverage estimates, forward predictions, population-weighted
//! regional aggregates, WAIC model comparisons and validation metrics.
//! A simulation module generates synthetic multi-source data for end-to-end
//! experiments comparing the two models.
//!
//! All numeric kernels are generic over the scalar type through the
//! [`num::Real`] trait; the pipeline itself runs on [`Scalar`].

// Index loops mirror the matrix notation in the numeric kernels.
#![allow(clippy::needless_range_loop)]
// `!(x > 0)` rejects NaN; the suggested `x <= 0` would accept it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod model;
pub mod num;
pub mod posterior;
pub mod preprocess;
pub mod sampler;
pub mod simulate;

/// Scalar type used by the data pipeline, CLI and file formats.
pub type Scalar = f64;

pub use error::{Error, Result};
