//! Semiparametric sensitivity analysis for unmeasured confounding.
//!
//! A binary treatment `Z`, outcome `Y` and covariates `X` are observed; a
//! latent confounder `U` enters both the outcome and propensity models with
//! fixed strengths `(δ, γ)`. The treatment effect `β` is estimated from the
//! efficient score under a working law for `U`, without committing to that
//! law being correct.

pub mod cli;
pub mod em;
pub mod error;
pub mod estimator;
pub mod fredholm;
pub mod glm;
pub mod ident;
pub mod model;
pub mod quadrature;
pub mod score;
pub mod simstudy;
pub mod uncertainty;

pub use error::{Error, Result};
