//! Quadratic-interaction Gibbs models with external fields on `[-1, 1]^n`.
//!
//! The measure has density `exp(sigma' A sigma / 2 + c' sigma)` against a
//! product of base measures. This crate provides the tilting toolkit for the
//! base measures, coupling matrices with norm certificates, the mean-field
//! fixed-point solver, a Glauber sampler, random coupling ensembles and the
//! CLT experiment harness built on top of them.

pub mod cltlab;
pub mod coupling;
pub mod diagnostics;
pub mod ensembles;
pub mod meanfield;
pub mod measures;
pub mod model;
pub mod quadrature;
pub mod sampler;

pub use coupling::{CouplingError, CouplingMatrix, EigenPair, MhtStatus, NormCertificate};
pub use measures::{BaseMeasure, MeasureError, MeasureSpec};
pub use model::{ModelError, ModelInstance};
