//! Description lengths of the causal model (X → Y) and the confounded model
//! (X ← Z → Y) for a cause matrix X and one target column Y.
//!
//! Causal: −log P(X) − log ∫ P(Y | X, w) P(w) dw, with X entries i.i.d.
//! N(0, σ_x²), w ~ N(0, σ_w² I) and Y | X, w ~ N(Xw, σ_y² I).
//!
//! Confounded: −log ∫∫ P(X, Y | Z, W) P(Z) P(W) dW dZ, a probabilistic PCA
//! on the joint (X, Y) with latent Z (n × k) and loadings W (k × (m+1)).

mod causal;
mod confounded;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::advi::{Family, FitTrace};
use crate::error::Error;

pub use causal::{
    causal_evidence_closed_form, causal_log_joint, code_length_x, l_causal, CausalModelSpec, CausalTarget,
};
pub use confounded::{
    confounded_log_joint, l_confounded, ppca_evidence_fixed_w, ConfoundedModelSpec, ConfoundedTarget, JointVector,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceMethod {
    ClosedForm,
    Advi,
}

impl FromStr for EvidenceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "closed-form" | "closed_form" => Ok(EvidenceMethod::ClosedForm),
            "advi" => Ok(EvidenceMethod::Advi),
            other => Err(Error::Config(format!("unknown evidence method `{other}`"))),
        }
    }
}

impl fmt::Display for EvidenceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvidenceMethod::ClosedForm => "closed-form",
            EvidenceMethod::Advi => "advi",
        })
    }
}

/// Summary of a variational fit behind a code length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub family: Family,
    pub converged: bool,
    pub iterations: usize,
    pub final_elbo: f64,
}

impl FitDiagnostics {
    pub(crate) fn new(family: Family, trace: &FitTrace, final_elbo: f64) -> Self {
        FitDiagnostics { family, converged: trace.converged, iterations: trace.iterations_run, final_elbo }
    }
}

/// A code length in nats with its Monte-Carlo standard error (0 when exact).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeLength {
    pub nats: f64,
    pub se: f64,
    pub method: EvidenceMethod,
    pub fit: Option<FitDiagnostics>,
}

impl CodeLength {
    pub fn converged(&self) -> bool {
        self.fit.as_ref().is_none_or(|f| f.converged)
    }
}
