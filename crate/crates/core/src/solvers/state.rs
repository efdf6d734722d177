use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{axpy, Cholesky, DenseMatrix};
use crate::linops::{to_dense, Identity, LinearOperator, Operator, RowBlockView, Scaled, Stacked};
use crate::solvers::{lsqr_solve, InverseProblem, LsqrOptions, Method};

/// Largest block for which the Cholesky factor is updated row by row
/// instead of being recomputed.
const RANK_UPDATE_MAX_ROWS: usize = 32;

#[derive(Clone, Debug)]
struct FullCurvature {
    /// `Σ A_iᵀA_i` over visited blocks.
    gram: DenseMatrix,
    /// `H_k = B_k⁻¹`
    hessian: DenseMatrix,
    factor: Option<Cholesky>,
    /// `Σ A_iᵀb_i` over visited blocks.
    rhs_accum: Vec<f64>,
    ltl: DenseMatrix,
}

#[derive(Clone, Debug)]
enum Curvature {
    Full(Box<FullCurvature>),
    Gradient,
    Block,
    Memory { r: usize, buffer: VecDeque<RowBlockView> },
}

/// Iterate, cumulative parameter and curvature store of one run.
#[derive(Clone, Debug)]
pub struct SolverState {
    method: Method,
    k: usize,
    x: Vec<f64>,
    lambda_cum: f64,
    curvature: Curvature,
    l: Operator,
    lsqr: LsqrOptions,
    accept_unconverged: bool,
    unconverged_solves: usize,
}

impl SolverState {
    pub fn new(
        method: Method,
        problem: &InverseProblem,
        x0: Option<Vec<f64>>,
        lsqr: LsqrOptions,
    ) -> Result<Self> {
        Self::with_regularizer(method, &problem.l, x0, lsqr)
    }

    /// A state for problems whose data arrive block by block; only the
    /// regularizer `L` (and through it `n`) is needed up front.
    pub fn with_regularizer(method: Method, l: &Operator, x0: Option<Vec<f64>>, lsqr: LsqrOptions) -> Result<Self> {
        let n = l.ncols();
        let x = match x0 {
            Some(x0) if x0.len() != n => return Err(Error::dims("SolverState: x0", n, x0.len())),
            Some(x0) => x0,
            None => vec![0.0; n],
        };
        let ltl_of = || crate::linops::gram(l.as_ref());
        let (curvature, lambda_cum) = match method {
            Method::Rrls { lambda } => {
                if !(lambda > 0.0) {
                    return Err(Error::InvalidArgument(format!("rrls needs lambda > 0, got {lambda}")));
                }
                let ltl = ltl_of();
                let mut hessian = DenseMatrix::zeros(n, n);
                hessian.add_scaled(lambda, &ltl);
                let factor = Cholesky::factor(&hessian).map_err(|_| {
                    Error::InvalidArgument("regularizer L must have full column rank".into())
                })?;
                let full = FullCurvature {
                    gram: DenseMatrix::zeros(n, n),
                    hessian,
                    factor: Some(factor),
                    rhs_accum: vec![0.0; n],
                    ltl,
                };
                (Curvature::Full(Box::new(full)), lambda)
            }
            Method::Stik => {
                let full = FullCurvature {
                    gram: DenseMatrix::zeros(n, n),
                    hessian: DenseMatrix::zeros(n, n),
                    factor: None,
                    rhs_accum: vec![0.0; n],
                    ltl: ltl_of(),
                };
                (Curvature::Full(Box::new(full)), 0.0)
            }
            Method::Sg => (Curvature::Gradient, 0.0),
            Method::Sbk => (Curvature::Block, 0.0),
            Method::SlimTik { memory } => (
                Curvature::Memory {
                    r: memory,
                    buffer: VecDeque::with_capacity(memory),
                },
                0.0,
            ),
        };
        Ok(Self {
            method,
            k: 0,
            x,
            lambda_cum,
            curvature,
            l: Arc::clone(l),
            lsqr,
            accept_unconverged: false,
            unconverged_solves: 0,
        })
    }

    /// Keep the last LSQR iterate instead of failing when a limited-memory
    /// step hits the iteration cap.
    pub fn set_accept_unconverged(&mut self, accept: bool) {
        self.accept_unconverged = accept;
    }

    pub fn unconverged_solves(&self) -> usize {
        self.unconverged_solves
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// Number of steps taken.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn into_x(self) -> Vec<f64> {
        self.x
    }

    /// `λ_k = Σ Λ_i` (the fixed λ for rrls).
    pub fn lambda_cum(&self) -> f64 {
        self.lambda_cum
    }

    pub fn lsqr_options(&self) -> LsqrOptions {
        self.lsqr
    }

    pub fn regularizer(&self) -> &Operator {
        &self.l
    }

    pub fn curvature_kind(&self) -> &'static str {
        match self.curvature {
            Curvature::Full(_) => "full",
            Curvature::Gradient => "none",
            Curvature::Block => "block",
            Curvature::Memory { .. } => "memory",
        }
    }

    /// `H_k`, available in full-curvature mode.
    pub fn hessian(&self) -> Option<&DenseMatrix> {
        match &self.curvature {
            Curvature::Full(f) => Some(&f.hessian),
            _ => None,
        }
    }

    /// Max-abs entry of `C Cᵀ − H_k` for the maintained Cholesky factor.
    pub fn factor_error(&self) -> Option<f64> {
        match &self.curvature {
            Curvature::Full(f) => f.factor.as_ref().map(|c| {
                let rec = c.reconstruct();
                rec.as_slice()
                    .iter()
                    .zip(f.hessian.as_slice())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            }),
            _ => None,
        }
    }

    /// Blocks currently held in the slimTik memory, oldest first.
    pub fn memory(&self) -> Option<impl Iterator<Item = &RowBlockView>> {
        match &self.curvature {
            Curvature::Memory { buffer, .. } => Some(buffer.iter()),
            _ => None,
        }
    }

    pub(crate) fn full_accumulators(&self) -> Option<(&DenseMatrix, &[f64], &DenseMatrix)> {
        match &self.curvature {
            Curvature::Full(f) => Some((&f.gram, &f.rhs_accum, &f.ltl)),
            _ => None,
        }
    }

    /// One step of the method this state was built for. `increment` is
    /// ignored by rrls.
    pub fn step(&mut self, block: &RowBlockView, b_block: &[f64], increment: f64) -> Result<()> {
        match self.method {
            Method::Rrls { .. } => self.rrls_step(block, b_block),
            Method::Stik => self.stik_step(block, b_block, increment),
            _ => self.variant_step(block, b_block, increment),
        }
    }

    /// `y_k = y_{k-1} − B_k A_kᵀ(A_k y_{k-1} − b_k)`,
    /// `B_k⁻¹ = λ LᵀL + Σ_{i≤k} A_iᵀA_i`.
    pub fn rrls_step(&mut self, block: &RowBlockView, b_block: &[f64]) -> Result<()> {
        if !matches!(self.method, Method::Rrls { .. }) {
            return Err(Error::InvalidArgument(format!("rrls_step called on a {} state", self.method)));
        }
        check_block(block, b_block, self.x.len())?;
        let rows = block_rows(block);
        let Curvature::Full(f) = &mut self.curvature else {
            unreachable!("rrls always carries full curvature")
        };
        for i in 0..rows.nrows() {
            f.gram.add_outer(1.0, rows.row(i));
            f.hessian.add_outer(1.0, rows.row(i));
        }
        axpy(1.0, &rows.matvec_t(b_block), &mut f.rhs_accum);
        refresh_factor(f, &rows, true)?;

        let mut r = rows.matvec(&self.x);
        axpy(-1.0, b_block, &mut r);
        let g = rows.matvec_t(&r);
        let s = f.factor.as_ref().expect("factor refreshed").solve(&g);
        axpy(-1.0, &s, &mut self.x);
        self.k += 1;
        Ok(())
    }

    /// `x_k = x_{k-1} − B_k(A_kᵀ(A_k x_{k-1} − b_k) + Λ_k LᵀL x_{k-1})`,
    /// `B_k⁻¹ = λ_k LᵀL + Σ_{i≤k} A_iᵀA_i`.
    pub fn stik_step(&mut self, block: &RowBlockView, b_block: &[f64], increment: f64) -> Result<()> {
        if self.method != Method::Stik {
            return Err(Error::InvalidArgument(format!("stik_step called on a {} state", self.method)));
        }
        check_block(block, b_block, self.x.len())?;
        let lambda_new = self.lambda_cum + increment;
        if !(lambda_new > 0.0) || !lambda_new.is_finite() {
            return Err(Error::RejectedIncrement {
                lambda_prev: self.lambda_cum,
                increment,
            });
        }
        let rows = block_rows(block);
        let Curvature::Full(f) = &mut self.curvature else {
            unreachable!("stik always carries full curvature")
        };
        for i in 0..rows.nrows() {
            f.gram.add_outer(1.0, rows.row(i));
        }
        axpy(1.0, &rows.matvec_t(b_block), &mut f.rhs_accum);
        let mut hessian = f.gram.clone();
        hessian.add_scaled(lambda_new, &f.ltl);
        f.hessian = hessian;
        // LᵀL has full rank, so only a zero increment keeps the change low-rank
        refresh_factor(f, &rows, increment == 0.0)?;

        let mut r = rows.matvec(&self.x);
        axpy(-1.0, b_block, &mut r);
        let mut g = rows.matvec_t(&r);
        if increment != 0.0 {
            axpy(increment, &f.ltl.matvec(&self.x), &mut g);
        }
        let s = f.factor.as_ref().expect("factor refreshed").solve(&g);
        axpy(-1.0, &s, &mut self.x);
        self.lambda_cum = lambda_new;
        self.k += 1;
        Ok(())
    }

    /// sg / sbK / slimTik step through the stacked least-squares form.
    ///
    /// A cumulative parameter of exactly zero is allowed here (the
    /// unregularized baseline); negative values are rejected.
    pub fn variant_step(&mut self, block: &RowBlockView, b_block: &[f64], increment: f64) -> Result<()> {
        if self.method.is_full() {
            return Err(Error::InvalidArgument(format!(
                "variant_step called on a {} state",
                self.method
            )));
        }
        check_block(block, b_block, self.x.len())?;
        let lambda_new = self.lambda_cum + increment;
        if lambda_new < 0.0 || !lambda_new.is_finite() || (lambda_new == 0.0 && increment != 0.0) {
            return Err(Error::RejectedIncrement {
                lambda_prev: self.lambda_cum,
                increment,
            });
        }
        let system = self.system(block, lambda_new)?;
        let mut p = block.apply_unchecked(&self.x);
        axpy(-1.0, b_block, &mut p);
        let q = (increment != 0.0).then(|| {
            let mut lx = self.l.apply_unchecked(&self.x);
            lx.iter_mut().for_each(|v| *v *= increment);
            lx
        });
        let (s, converged) = system.solve_flagged(&p, q.as_deref())?;
        if !converged {
            self.unconverged_solves += 1;
        }
        axpy(-1.0, &s, &mut self.x);
        self.lambda_cum = lambda_new;
        self.k += 1;
        if let Curvature::Memory { r, buffer } = &mut self.curvature {
            if *r > 0 {
                buffer.push_back(block.clone());
                while buffer.len() > *r {
                    buffer.pop_front();
                }
            }
        }
        Ok(())
    }

    /// The curvature system of the next step at cumulative parameter `lambda`,
    /// with `block` as the incoming block. The state is not modified.
    pub fn system(&self, block: &RowBlockView, lambda: f64) -> Result<CurvatureSystem> {
        if !(lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("cumulative parameter must be >= 0, got {lambda}")));
        }
        let n = self.x.len();
        let kind = match &self.curvature {
            Curvature::Full(f) => {
                let rows = block_rows(block);
                let mut h = f.gram.clone();
                for i in 0..rows.nrows() {
                    h.add_outer(1.0, rows.row(i));
                }
                h.add_scaled(lambda, &f.ltl);
                SystemKind::Dense(Cholesky::factor(&h)?)
            }
            curv => {
                let mut parts: Vec<Operator> = Vec::new();
                let mut lead = 0;
                let identity_lead = matches!(curv, Curvature::Gradient);
                match curv {
                    Curvature::Gradient => {
                        parts.push(Arc::new(Identity(n)));
                        lead = n;
                    }
                    Curvature::Memory { buffer, .. } => {
                        for m in buffer {
                            lead += m.nrows();
                            parts.push(Arc::new(m.clone()));
                        }
                        parts.push(Arc::new(block.clone()));
                    }
                    _ => parts.push(Arc::new(block.clone())),
                }
                if lambda > 0.0 {
                    parts.push(Arc::new(Scaled {
                        inner: Arc::clone(&self.l),
                        alpha: lambda.sqrt(),
                    }));
                }
                SystemKind::Lsqr {
                    op: Stacked::new(parts)?,
                    lead,
                    identity_lead,
                    opts: self.lsqr,
                    accept_unconverged: self.accept_unconverged,
                }
            }
        };
        Ok(CurvatureSystem {
            kind,
            block: block.clone(),
            l: Arc::clone(&self.l),
            lambda,
        })
    }
}

#[derive(Debug)]
enum SystemKind {
    Dense(Cholesky),
    Lsqr {
        op: Stacked,
        /// rows ahead of the incoming block (memory rows, or `n` identity rows for sg)
        lead: usize,
        identity_lead: bool,
        opts: LsqrOptions,
        accept_unconverged: bool,
    },
}

/// `B(λ)` for one candidate parameter, able to apply itself to
/// right-hand sides of the form `A_kᵀ p + Lᵀ q`.
#[derive(Debug)]
pub struct CurvatureSystem {
    kind: SystemKind,
    block: RowBlockView,
    l: Operator,
    lambda: f64,
}

impl CurvatureSystem {
    pub(crate) fn from_factor(factor: Cholesky, block: &RowBlockView, l: &Operator, lambda: f64) -> Self {
        Self {
            kind: SystemKind::Dense(factor),
            block: block.clone(),
            l: Arc::clone(l),
            lambda,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn block(&self) -> &RowBlockView {
        &self.block
    }

    /// `B(λ)(A_kᵀ p + Lᵀ q)`
    pub fn solve(&self, p: &[f64], q: Option<&[f64]>) -> Result<Vec<f64>> {
        self.solve_flagged(p, q).map(|(s, _)| s)
    }

    /// Like [`solve`](Self::solve), also reporting whether the LSQR subsolve
    /// converged. An unconverged subsolve is an error unless the owning state
    /// accepts them.
    pub fn solve_flagged(&self, p: &[f64], q: Option<&[f64]>) -> Result<(Vec<f64>, bool)> {
        match &self.kind {
            SystemKind::Dense(factor) => {
                let mut g = self.block.apply_adjoint_unchecked(p);
                if let Some(q) = q {
                    axpy(1.0, &self.l.apply_adjoint_unchecked(q), &mut g);
                }
                Ok((factor.solve(&g), true))
            }
            SystemKind::Lsqr {
                op,
                lead,
                identity_lead,
                opts,
                accept_unconverged,
            } => {
                let mut c = Vec::with_capacity(op.nrows());
                if *identity_lead {
                    c.extend(self.block.apply_adjoint_unchecked(p));
                } else {
                    c.resize(*lead, 0.0);
                    c.extend_from_slice(p);
                }
                if self.lambda > 0.0 {
                    let root = self.lambda.sqrt();
                    match q {
                        Some(q) => c.extend(q.iter().map(|v| v / root)),
                        None => c.resize(op.nrows(), 0.0),
                    }
                } else if q.is_some_and(|q| q.iter().any(|&v| v != 0.0)) {
                    return Err(Error::InvalidArgument(
                        "regularizer term without a positive cumulative parameter".into(),
                    ));
                }
                let sol = lsqr_solve(op, &c, *opts)?;
                if sol.converged || *accept_unconverged {
                    Ok((sol.x, sol.converged))
                } else {
                    sol.into_converged().map(|x| (x, false))
                }
            }
        }
    }

    /// `B(λ) v` for a plain right-hand side. Only the dense system supports
    /// arbitrary vectors.
    pub(crate) fn solve_raw(&self, v: &[f64]) -> Result<Vec<f64>> {
        match &self.kind {
            SystemKind::Dense(factor) => Ok(factor.solve(v)),
            SystemKind::Lsqr { .. } => Err(Error::InvalidArgument(
                "raw solves need full curvature".into(),
            )),
        }
    }

    /// `A_k B(λ) A_kᵀ v`
    pub fn gain(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.block.apply_unchecked(&self.solve(v, None)?))
    }
}

fn check_block(block: &RowBlockView, b_block: &[f64], n: usize) -> Result<()> {
    if block.ncols() != n {
        return Err(Error::dims("step: block columns", n, block.ncols()));
    }
    if b_block.len() != block.nrows() {
        return Err(Error::dims("step: block data", block.nrows(), b_block.len()));
    }
    Ok(())
}

/// Rows of `A_k` as a dense `ℓ × n` matrix.
pub(crate) fn block_rows(block: &RowBlockView) -> DenseMatrix {
    match block.parent().as_dense() {
        Some(d) => {
            let n = d.ncols();
            let mut out = DenseMatrix::zeros(block.rows().len(), n);
            for (i, &r) in block.rows().iter().enumerate() {
                out.row_mut(i).copy_from_slice(d.row(r));
            }
            out
        }
        None => to_dense(block),
    }
}

fn refresh_factor(f: &mut FullCurvature, rows: &DenseMatrix, low_rank: bool) -> Result<()> {
    match f.factor.as_mut() {
        Some(c) if low_rank && rows.nrows() <= RANK_UPDATE_MAX_ROWS => {
            for i in 0..rows.nrows() {
                c.update(rows.row(i));
            }
        }
        _ => f.factor = Some(Cholesky::factor(&f.hessian)?),
    }
    Ok(())
}
