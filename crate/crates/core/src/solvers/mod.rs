//! Sampled Tikhonov iterations.
//!
//! All methods share the update `x_k = x_{k-1} - B_k g_k` and differ only in
//! the curvature `B_k⁻¹` they keep:
//!
//! | method    | curvature `B_k⁻¹`                                   | storage          |
//! |-----------|-----------------------------------------------------|------------------|
//! | `rrls`    | `λ LᵀL + Σ_{i≤k} A_iᵀA_i` (λ fixed)                  | dense + Cholesky |
//! | `sTik`    | `λ_k LᵀL + Σ_{i≤k} A_iᵀA_i`, `λ_k = Σ Λ_i`            | dense + Cholesky |
//! | `sg`      | `λ_k LᵀL + I`                                        | none             |
//! | `sbK`     | `λ_k LᵀL + A_kᵀA_k`                                  | current block    |
//! | `slimTik` | `λ_k LᵀL + A_kᵀA_k + Σ_{last r blocks} A_iᵀA_i`      | `r` block views  |
//!
//! The limited variants never form an `n × n` matrix; each step solves the
//! equivalent stacked least-squares problem with LSQR.

mod lsqr;
mod run;
mod state;
mod tikhonov;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

pub use lsqr::{lsqr_solve, LsqrOptions, LsqrSolution};
pub use run::{block_views, run, run_with_observer, IterationRecord, RunConfig, RunOutput, Selector, Stepper};
pub(crate) use state::block_rows;
pub use state::{CurvatureSystem, SolverState};
pub use tikhonov::{stacked_tikhonov, tikhonov_direct, DirectTikhonov};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, DenseMatrix};
use crate::linops::{gram, Identity, Operator};

/// `b = A x_true + ε` with regularizer `L`.
#[derive(Clone, Debug)]
pub struct InverseProblem {
    pub a: Operator,
    pub b: Vec<f64>,
    pub l: Operator,
    pub x_true: Option<Vec<f64>>,
    pub sigma2: Option<f64>,
}

impl InverseProblem {
    pub fn new(a: Operator, b: Vec<f64>, l: Operator) -> Result<Self> {
        if b.len() != a.nrows() {
            return Err(Error::dims("InverseProblem: data length", a.nrows(), b.len()));
        }
        if l.ncols() != a.ncols() {
            return Err(Error::dims("InverseProblem: regularizer columns", a.ncols(), l.ncols()));
        }
        Ok(Self {
            a,
            b,
            l,
            x_true: None,
            sigma2: None,
        })
    }

    /// Standard-form problem, `L = I`.
    pub fn standard(a: Operator, b: Vec<f64>) -> Result<Self> {
        let n = a.ncols();
        Self::new(a, b, Arc::new(Identity(n)))
    }

    pub fn with_truth(mut self, x_true: Vec<f64>) -> Result<Self> {
        if x_true.len() != self.n() {
            return Err(Error::dims("InverseProblem: x_true length", self.n(), x_true.len()));
        }
        self.x_true = Some(x_true);
        Ok(self)
    }

    pub fn with_sigma2(mut self, sigma2: f64) -> Result<Self> {
        if !(sigma2 >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {sigma2}")));
        }
        self.sigma2 = Some(sigma2);
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    /// Confirms `LᵀL` is positive definite by factoring the dense Gram.
    pub fn check_regularizer(&self) -> Result<()> {
        let ltl = gram(self.l.as_ref());
        Cholesky::factor(&ltl)
            .map(|_| ())
            .map_err(|_| Error::InvalidArgument("regularizer L must have full column rank".into()))
    }

    pub(crate) fn regularizer_gram(&self) -> DenseMatrix {
        gram(self.l.as_ref())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    /// Regularized recursive least squares with a fixed parameter.
    Rrls { lambda: f64 },
    /// Sampled Tikhonov with the full accumulated curvature.
    Stik,
    /// Sampled gradient.
    Sg,
    /// Sampled block Kaczmarz.
    Sbk,
    /// Limited-memory sampled Tikhonov keeping the last `memory` blocks.
    SlimTik { memory: usize },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Rrls { .. } => "rrls",
            Method::Stik => "stik",
            Method::Sg => "sg",
            Method::Sbk => "sbk",
            Method::SlimTik { .. } => "slimtik",
        }
    }

    /// Methods that maintain an explicit `n × n` curvature matrix.
    pub fn is_full(&self) -> bool {
        matches!(self, Method::Rrls { .. } | Method::Stik)
    }

    /// Methods whose parameter is updated through increments `Λ_k`.
    pub fn takes_increments(&self) -> bool {
        !matches!(self, Method::Rrls { .. })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Rrls { lambda } => write!(f, "rrls(lambda={lambda})"),
            Method::SlimTik { memory } => write!(f, "slimtik(r={memory})"),
            m => f.write_str(m.name()),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Parses `stik`, `sg`, `sbk`, `slimtik` (memory 2) or `slimtik:<r>`.
    /// `rrls` needs a parameter and is built directly.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "stik" => Ok(Method::Stik),
            "sg" => Ok(Method::Sg),
            "sbk" => Ok(Method::Sbk),
            "slimtik" => Ok(Method::SlimTik { memory: 2 }),
            other => {
                if let Some(r) = other.strip_prefix("slimtik:") {
                    let memory = r
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad slimtik memory {r:?}")))?;
                    Ok(Method::SlimTik { memory })
                } else {
                    Err(Error::InvalidArgument(format!(
                        "unknown method {s:?} (expected rrls, stik, sg, sbk or slimtik)"
                    )))
                }
            }
        }
    }
}
