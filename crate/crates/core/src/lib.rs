#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod benchmark;
pub mod debias;
pub mod error;
pub mod federation;
pub mod glm;
pub mod linalg;
pub mod pseudo;
pub mod renewable;
pub mod scalar;
pub mod simgen;
pub mod survival;

pub use error::{Error, Result};
pub use glm::Link;
pub use scalar::Scalar;

pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type SubjectRecord64 = survival::SubjectRecord<f64>;
pub type SubjectRecord32 = survival::SubjectRecord<f32>;
pub type KmState64 = survival::KmState<f64>;
pub type KmState32 = survival::KmState<f32>;
pub type Design64 = pseudo::Design<f64>;
pub type Design32 = pseudo::Design<f32>;
pub type GlmFit64 = glm::GlmFit<f64>;
pub type GlmFit32 = glm::GlmFit<f32>;
pub type RenewableState64 = renewable::RenewableState<f64>;
pub type RenewableState32 = renewable::RenewableState<f32>;
pub type FitReport64 = renewable::FitReport<f64>;
pub type FitReport32 = renewable::FitReport<f32>;
pub type CoxFit64 = baselines::CoxFit<f64>;
pub type CoxFit32 = baselines::CoxFit<f32>;
