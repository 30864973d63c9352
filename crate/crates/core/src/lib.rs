//! Marginal rates regression for doubly-censored, zero-truncated recurrent
//! event data with age-varying coefficients.
//!
//! The estimators are generic over the floating point type; the `*64` and
//! `*32` aliases below fix it.

// `!(x > 0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod augment;
pub mod census;
pub mod data;
pub mod design;
pub mod error;
pub mod io;
pub mod linalg;
pub mod local;
pub mod model;
mod scalar;
pub mod seeds;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type Design64 = design::Design<f64>;
pub type Design32 = design::Design<f32>;
pub type Unit64 = design::Unit<f64>;
pub type Unit32 = design::Unit<f32>;
pub type LocalFit64 = local::LocalFit<f64>;
pub type LocalFit32 = local::LocalFit<f32>;
pub type FitCurve64 = local::FitCurve<f64>;
pub type FitCurve32 = local::FitCurve<f32>;
pub type KernelSpec64 = local::KernelSpec<f64>;
pub type KernelSpec32 = local::KernelSpec<f32>;
pub type FitConfig64 = model::FitConfig<f64>;
pub type FitConfig32 = model::FitConfig<f32>;
pub type FittedModel64 = model::FittedModel<f64>;
pub type FittedModel32 = model::FittedModel<f32>;
pub type BaselineFn64 = model::BaselineFn<f64>;
pub type BaselineFn32 = model::BaselineFn<f32>;
