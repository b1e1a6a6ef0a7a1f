//! Copula-based semi-competing risks regression and stratum-specific survivor
//! causal effects.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerical
//! machinery: Archimedean copula kernels, Cox marginals with step baselines,
//! the no-frailty NPMLE fitter, the shared-gamma-frailty MCEM fitter, the
//! causal plug-in estimators and the simulation scenarios used to validate
//! them. File formats, bootstrap orchestration and the command line live in
//! the `semicomp` crate.
//!
//! Notation used across modules: `T1` is the non-terminal event, `T2` the
//! terminal event, `X = min(T1, T2, C)`, `Y = min(T2, C)`, `d1`/`d2` the
//! corresponding event indicators and `A` the binary treatment.

#![no_std]
// `!(x > 0.0)` style guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod causal;
pub mod copula;
pub mod data;
pub mod datagen;
mod error;
pub mod mcem;
pub mod npmle;
pub mod numeric;
pub mod survival;

pub use causal::{SceCurve, SceInterval};
pub use copula::{CopulaSpec, Family, Partials};
pub use data::{Arm, Dataset, SubjectRecord};
pub use error::{Error, Result};
pub use npmle::{ArmFit, ArmParams, FitOptions, ModelFit};
pub use survival::{CoxMarginal, StepHazard, WeibullBaseline};
