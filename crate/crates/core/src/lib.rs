//! Regression of ordered samples against distributional scores.
//!
//! The central object is the QQ line: sort a sample, pair each order
//! statistic with the quantile a reference distribution would predict for
//! its rank, and fit a straight line. The intercept estimates location, the
//! slope estimates scale, and the correlation of the paired points measures
//! how well the reference shape describes the data.
//!
//! On top of that one idea the crate provides:
//!
//! - [`scores`]: normal and Student-t scores for configurable symmetric
//!   plotting positions.
//! - [`qqfit`]: the line fit itself, including left-censored and winsorized
//!   variants, with effective-sample-size models for standard errors.
//! - [`shapefit`]: Box-Cox power and Student-t tail-weight selection by
//!   maximizing QQ correlation.
//! - [`normtest`]: a calibrated normality test built on the QQ correlation.
//! - [`sim`]: a seeded, parallel Monte Carlo harness that reproduces the
//!   sampling experiments backing the estimators above.
//! - [`kernel`]: the probability primitives everything else stands on.

pub mod error;
pub mod kernel;
pub mod normtest;
pub mod qqfit;
pub mod scores;
pub mod shapefit;
pub mod sim;

pub use error::{Error, Result};
