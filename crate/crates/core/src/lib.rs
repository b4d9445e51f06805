//! Post-processing of multivariate ensemble weather forecasts.
//!
//! Each weather variable gets an ensemble-BMA predictive marginal
//! ([`bma`]); the marginals are joined by a Gaussian copula whose correlation
//! matrix is estimated from latent Gaussian factors ([`copula`]); the joint
//! predictive distribution is represented by sampling and verified with
//! multivariate rank histograms, energy score, Euclidean error and
//! determinant sharpness ([`verification`]). [`data`] handles CSV ingestion,
//! rolling training windows and synthetic ground truth, and [`pipeline`]
//! wires the stages together.

pub mod bma;
pub mod copula;
pub mod data;
pub mod error;
pub mod numerics;
pub mod pipeline;
pub mod verification;

pub use error::{Error, Result};
