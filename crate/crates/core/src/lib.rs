//! Confounding-bias audits for tabular cohorts.
//!
//! Two analyses:
//! - description-length scores comparing a causal model X → Y with a
//!   latent-confounder model X ← Z → Y ([`score`]), estimated with a
//!   built-in Gaussian variational engine ([`advi`]);
//! - dataset-membership classification with a random forest
//!   ([`classifier`]), where above-chance accuracy signals dataset bias.

pub mod advi;
pub mod classifier;
pub mod error;
pub mod gaussian;
pub mod models;
pub mod quadrature;
pub mod score;
pub mod seed;
pub mod synth;
pub mod tabular;

pub use error::{Error, Result};
