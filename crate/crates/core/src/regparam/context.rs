use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{axpy, norm2, norm2_sq, scale, sub, Cholesky, DenseMatrix};
use crate::linops::{LinearOperator, RowBlockView};
use crate::regparam::trace::{exact_trace, hutchinson_trace, rademacher};
use crate::rng::labeled_stream;
use crate::solvers::{CurvatureSystem, SolverState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SelectorMethod {
    /// Sampled discrepancy principle.
    Sdp,
    /// Sampled unbiased predictive risk estimator.
    Supre,
    /// Sampled generalized cross validation.
    Sgcv,
}

impl SelectorMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectorMethod::Sdp => "sdp",
            SelectorMethod::Supre => "supre",
            SelectorMethod::Sgcv => "sgcv",
        }
    }
}

impl fmt::Display for SelectorMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectorMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sdp" => Ok(SelectorMethod::Sdp),
            "supre" => Ok(SelectorMethod::Supre),
            "sgcv" => Ok(SelectorMethod::Sgcv),
            other => Err(Error::InvalidArgument(format!(
                "unknown selector {other:?} (expected sdp, supre or sgcv)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceMode {
    /// `ℓ` solves against unit vectors.
    Exact,
    /// Average over this many Rademacher probes.
    Hutchinson { probes: usize },
}

/// Log-spaced grid of candidate increments. `min` and `max` are multiples of
/// the problem scale `‖A‖²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
    /// Golden-section iterations spent around the best grid point.
    pub refine_iters: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            min: 1e-8,
            max: 1e2,
            points: 40,
            refine_iters: 20,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.min > 0.0) || !(self.max >= self.min) || !self.max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid bounds must satisfy 0 < min <= max, got [{}, {}]",
                self.min, self.max
            )));
        }
        if self.points == 0 {
            return Err(Error::InvalidArgument("grid needs at least one point".into()));
        }
        Ok(())
    }

    pub fn values(&self, scale: f64) -> Vec<f64> {
        let (lo, hi) = ((self.min * scale).ln(), (self.max * scale).ln());
        if self.points == 1 {
            return vec![lo.exp()];
        }
        let step = (hi - lo) / (self.points - 1) as f64;
        (0..self.points).map(|i| (lo + step * i as f64).exp()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct SelectorSettings {
    pub method: SelectorMethod,
    /// Noise variance σ²; required by sDP and sUPRE.
    pub sigma2: Option<f64>,
    /// Discrepancy safety factor γ.
    pub gamma: f64,
    pub grid: GridSpec,
    pub trace: TraceMode,
    pub probe_seed: u64,
    /// Overrides the `‖A‖²` estimate used to place the grid.
    pub scale: Option<f64>,
}

impl SelectorSettings {
    pub fn new(method: SelectorMethod) -> Self {
        Self {
            method,
            sigma2: None,
            gamma: 4.0,
            grid: GridSpec::default(),
            trace: TraceMode::Exact,
            probe_seed: 0,
            scale: None,
        }
    }

    pub fn with_sigma2(mut self, sigma2: f64) -> Self {
        self.sigma2 = Some(sigma2);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if matches!(self.method, SelectorMethod::Sdp | SelectorMethod::Supre) {
            match self.sigma2 {
                Some(s) if s >= 0.0 => {}
                Some(s) => return Err(Error::InvalidArgument(format!("sigma2 must be >= 0, got {s}"))),
                None => {
                    return Err(Error::InvalidArgument(format!(
                        "{} needs the noise variance sigma2",
                        self.method
                    )))
                }
            }
        }
        if self.method == SelectorMethod::Sdp && !(self.gamma > 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must be > 1, got {}", self.gamma)));
        }
        if let TraceMode::Hutchinson { probes: 0 } = self.trace {
            return Err(Error::InvalidArgument("hutchinson needs at least one probe".into()));
        }
        Ok(())
    }
}

/// Power-iteration estimate of `‖A‖₂²`.
pub fn spectral_norm_sq(op: &dyn LinearOperator, iters: usize) -> f64 {
    let n = op.ncols();
    // fixed, non-symmetric start so no singular vector is missed by construction
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 101) as f64 / 101.0).collect();
    let mut est = 0.0;
    for _ in 0..iters.max(1) {
        let nv = norm2(&v);
        if nv == 0.0 {
            return 0.0;
        }
        scale(1.0 / nv, &mut v);
        let w = op.apply_adjoint_unchecked(&op.apply_unchecked(&v));
        est = norm2(&w);
        v = w;
    }
    est
}

/// One candidate increment evaluated through the context.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub increment: f64,
    pub lambda_eff: f64,
    pub x: Vec<f64>,
    /// `A_k x_k(λ) − b_k`
    pub residual: Vec<f64>,
    pub res2: f64,
}

/// Everything needed to evaluate `x_k(λ)` for candidate increments at step `k`
/// without touching the state.
#[derive(Clone, Debug)]
pub struct SelectorContext<'a> {
    state: &'a SolverState,
    block: RowBlockView,
    b_block: Vec<f64>,
    k: usize,
    num_blocks: usize,
    settings: SelectorSettings,
    scale: f64,
    probes: Vec<Vec<f64>>,
    /// `(Σ_{i≤k} A_iᵀA_i, Σ_{i≤k} A_iᵀb_i, LᵀL)` in full mode.
    full: Option<(DenseMatrix, Vec<f64>, DenseMatrix)>,
    /// `A_k x_{k-1} − b_k` and `L x_{k-1}` in the limited modes.
    p: Vec<f64>,
    lx: Vec<f64>,
}

impl<'a> SelectorContext<'a> {
    /// `scale` places the grid; pass `settings.scale` or an `‖A‖²` estimate.
    pub fn new(
        state: &'a SolverState,
        block: &RowBlockView,
        b_block: &[f64],
        num_blocks: usize,
        settings: &SelectorSettings,
        scale: f64,
    ) -> Result<Self> {
        settings.validate()?;
        if block.ncols() != state.x().len() {
            return Err(Error::dims("SelectorContext: block columns", state.x().len(), block.ncols()));
        }
        if b_block.len() != block.nrows() {
            return Err(Error::dims("SelectorContext: block data", block.nrows(), b_block.len()));
        }
        if num_blocks == 0 {
            return Err(Error::InvalidArgument("block count must be positive".into()));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("grid scale must be positive, got {scale}")));
        }
        if !state.method().takes_increments() {
            return Err(Error::InvalidArgument("rrls has no parameter to select".into()));
        }
        let k = state.k() + 1;
        let probes = match settings.trace {
            TraceMode::Exact => Vec::new(),
            TraceMode::Hutchinson { probes } => {
                let mut rng = labeled_stream(settings.probe_seed, &format!("probes/{k}"));
                (0..probes).map(|_| rademacher(block.nrows(), &mut rng)).collect()
            }
        };
        let full = state.full_accumulators().map(|(gram, rhs, ltl)| {
            let rows = crate::solvers::block_rows(block);
            let mut g = gram.clone();
            for i in 0..rows.nrows() {
                g.add_outer(1.0, rows.row(i));
            }
            let mut r = rhs.to_vec();
            axpy(1.0, &rows.matvec_t(b_block), &mut r);
            (g, r, ltl.clone())
        });
        let (p, lx) = if full.is_some() {
            (Vec::new(), Vec::new())
        } else {
            let p = sub(&block.apply_unchecked(state.x()), b_block);
            (p, state.regularizer().apply_unchecked(state.x()))
        };
        Ok(Self {
            state,
            block: block.clone(),
            b_block: b_block.to_vec(),
            k,
            num_blocks,
            settings: settings.clone(),
            scale,
            probes,
            full,
            p,
            lx,
        })
    }

    /// Index of the step being selected for.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    pub fn block_len(&self) -> usize {
        self.block.nrows()
    }

    pub fn settings(&self) -> &SelectorSettings {
        &self.settings
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `Σ_{i<k} Λ_i`
    pub fn lambda_prev(&self) -> f64 {
        self.state.lambda_cum()
    }

    /// Candidate increments `Λ_k` for this step; the iterate is evaluated at
    /// `λ_k = lambda_prev + Λ_k`, so the cumulative parameter never decreases.
    pub fn grid(&self) -> Vec<f64> {
        self.settings.grid.values(self.scale)
    }

    /// `Λ_k` that makes the effective parameter `(M/k) λ_k` equal `lambda_eff`.
    pub fn increment_for(&self, lambda_eff: f64) -> f64 {
        lambda_eff * (self.k as f64 / self.num_blocks as f64) - self.lambda_prev()
    }

    pub fn lambda_eff_for(&self, increment: f64) -> f64 {
        (self.lambda_prev() + increment) / (self.k as f64 / self.num_blocks as f64)
    }

    fn system(&self, increment: f64) -> Result<CurvatureSystem> {
        let cum = self.lambda_prev() + increment;
        if !(cum > 0.0) || !cum.is_finite() {
            return Err(Error::RejectedIncrement {
                lambda_prev: self.lambda_prev(),
                increment,
            });
        }
        match &self.full {
            Some((g, _, ltl)) => {
                let mut h = g.clone();
                h.add_scaled(cum, ltl);
                let factor = Cholesky::factor(&h)?;
                Ok(CurvatureSystem::from_factor(factor, &self.block, self.state.regularizer(), cum))
            }
            None => self.state.system(&self.block, cum),
        }
    }

    fn solve_with(&self, system: &CurvatureSystem, increment: f64) -> Result<Vec<f64>> {
        match &self.full {
            Some((_, rhs, _)) => system.solve_raw(rhs),
            None => {
                let q: Option<Vec<f64>> = (increment != 0.0).then(|| self.lx.iter().map(|v| v * increment).collect());
                let s = system.solve(&self.p, q.as_deref())?;
                Ok(sub(self.state.x(), &s))
            }
        }
    }

    fn trace_with(&self, system: &CurvatureSystem) -> Result<f64> {
        let gain = |v: &[f64]| system.gain(v);
        match self.settings.trace {
            TraceMode::Exact => exact_trace(gain, self.block_len()),
            TraceMode::Hutchinson { .. } => Ok(hutchinson_trace(gain, &self.probes)?.mean),
        }
    }

    /// `x_k(λ)` for the increment `Λ_k = increment`.
    pub fn candidate_solve(&self, increment: f64) -> Result<Vec<f64>> {
        let system = self.system(increment)?;
        self.solve_with(&system, increment)
    }

    pub fn evaluate(&self, increment: f64) -> Result<Evaluation> {
        let system = self.system(increment)?;
        self.evaluate_with(&system, increment)
    }

    fn evaluate_with(&self, system: &CurvatureSystem, increment: f64) -> Result<Evaluation> {
        let x = self.solve_with(system, increment)?;
        let residual = sub(&self.block.apply_unchecked(&x), &self.b_block);
        Ok(Evaluation {
            increment,
            lambda_eff: self.lambda_eff_for(increment),
            res2: norm2_sq(&residual),
            x,
            residual,
        })
    }

    /// `‖A_k x_k(λ) − b_k‖²`
    pub fn sampled_residual_sq(&self, increment: f64) -> Result<f64> {
        Ok(self.evaluate(increment)?.res2)
    }

    /// `tr(A_k B(λ) A_kᵀ)`, the trace of the block influence matrix.
    pub fn trace_term(&self, increment: f64) -> Result<f64> {
        let system = self.system(increment)?;
        self.trace_with(&system)
    }

    /// Diagonal of the block influence matrix `A_k B(λ) A_kᵀ`.
    pub fn gain_diagonal(&self, increment: f64) -> Result<Vec<f64>> {
        let system = self.system(increment)?;
        let ell = self.block_len();
        let mut e = vec![0.0; ell];
        let mut d = Vec::with_capacity(ell);
        for j in 0..ell {
            e[j] = 1.0;
            d.push(system.gain(&e)?[j]);
            e[j] = 0.0;
        }
        Ok(d)
    }

    fn sigma2(&self) -> Result<f64> {
        self.settings
            .sigma2
            .ok_or_else(|| Error::InvalidArgument("noise variance sigma2 is required".into()))
    }

    /// `U_k(λ) = ‖A_k x_k(λ) − b_k‖² + 2σ² tr(A_k B A_kᵀ) − σ²ℓ`
    pub fn supre_objective(&self, increment: f64) -> Result<f64> {
        let sigma2 = self.sigma2()?;
        let system = self.system(increment)?;
        let res2 = self.evaluate_with(&system, increment)?.res2;
        let t = if sigma2 == 0.0 { 0.0 } else { self.trace_with(&system)? };
        Ok(res2 + 2.0 * sigma2 * t - sigma2 * self.block_len() as f64)
    }

    /// `G_k(λ) = ℓ ‖A_k x_k(λ) − b_k‖² / (ℓ − tr(A_k B A_kᵀ))²`
    pub fn sgcv_objective(&self, increment: f64) -> Result<f64> {
        let system = self.system(increment)?;
        let res2 = self.evaluate_with(&system, increment)?.res2;
        let t = self.trace_with(&system)?;
        let ell = self.block_len() as f64;
        if (ell - t).abs() < 1e-8 * ell {
            return Err(Error::UndefinedObjective(self.lambda_eff_for(increment)));
        }
        Ok(ell * res2 / (ell - t).powi(2))
    }

    /// Leave-one-out value `(1/ℓ) ‖D (b_k − A_k x_k(λ))‖²`, `D = diag(1/(1 − t_jj))`.
    pub fn sampled_cv(&self, increment: f64) -> Result<f64> {
        let eval = self.evaluate(increment)?;
        let diag = self.gain_diagonal(increment)?;
        let ell = self.block_len() as f64;
        let mut acc = 0.0;
        for (r, t) in eval.residual.iter().zip(&diag) {
            if (1.0 - t).abs() < 1e-14 {
                return Err(Error::UndefinedObjective(eval.lambda_eff));
            }
            acc += (r / (1.0 - t)).powi(2);
        }
        Ok(acc / ell)
    }

    /// Objective of `method` at `increment`; sDP returns the sampled residual.
    pub fn objective(&self, method: SelectorMethod, increment: f64) -> Result<f64> {
        match method {
            SelectorMethod::Sdp => self.sampled_residual_sq(increment),
            SelectorMethod::Supre => self.supre_objective(increment),
            SelectorMethod::Sgcv => self.sgcv_objective(increment),
        }
    }
}
