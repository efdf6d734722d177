use crate::error::{Error, Result};
use crate::linalg::{Cholesky, DenseMatrix};
use crate::linops::{gram, LinearOperator, RowBlockView};
use crate::solvers::InverseProblem;

/// `x(λ) = (AᵀA + λ LᵀL)⁻¹ Aᵀb` with the Gram matrices cached for repeated solves.
#[derive(Clone, Debug)]
pub struct DirectTikhonov {
    ata: DenseMatrix,
    ltl: DenseMatrix,
    atb: Vec<f64>,
}

impl DirectTikhonov {
    pub fn new(problem: &InverseProblem) -> Result<Self> {
        let ata = gram(problem.a.as_ref());
        let ltl = problem.regularizer_gram();
        let atb = problem.a.apply_adjoint(&problem.b)?;
        Ok(Self { ata, ltl, atb })
    }

    pub fn solve(&self, lambda: f64) -> Result<Vec<f64>> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        let mut h = self.ata.clone();
        if lambda > 0.0 {
            h.add_scaled(lambda, &self.ltl);
        }
        let factor = Cholesky::factor(&h).map_err(|_| {
            if lambda == 0.0 {
                Error::Singular("AᵀA is singular; the unregularized solution is undefined".into())
            } else {
                Error::NumericalBreakdown(format!("AᵀA + {lambda:e} LᵀL is not positive definite"))
            }
        })?;
        Ok(factor.solve(&self.atb))
    }

    pub fn normal_residual(&self, lambda: f64, x: &[f64]) -> Vec<f64> {
        let mut r = self.ata.matvec(x);
        let lx = self.ltl.matvec(x);
        for i in 0..r.len() {
            r[i] += lambda * lx[i] - self.atb[i];
        }
        r
    }

    pub fn atb(&self) -> &[f64] {
        &self.atb
    }
}

/// The Tikhonov solution for the full data at parameter `lambda`.
pub fn tikhonov_direct(problem: &InverseProblem, lambda: f64) -> Result<Vec<f64>> {
    DirectTikhonov::new(problem)?.solve(lambda)
}

/// Solution of `min ‖[A_1; …; A_k] x − [b_1; …; b_k]‖² + λ‖L(x − x_ref)‖²`
/// assembled densely from the given blocks (repetitions allowed).
pub fn stacked_tikhonov(
    problem: &InverseProblem,
    blocks: &[&RowBlockView],
    lambda: f64,
    x_ref: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let n = problem.n();
    let ltl = problem.regularizer_gram();
    let mut h = DenseMatrix::zeros(n, n);
    h.add_scaled(lambda, &ltl);
    let mut rhs = vec![0.0; n];
    if let Some(x0) = x_ref {
        let lx = ltl.matvec(x0);
        for i in 0..n {
            rhs[i] += lambda * lx[i];
        }
    }
    for blk in blocks {
        let rows = crate::linops::to_dense(*blk);
        for i in 0..rows.nrows() {
            h.add_outer(1.0, rows.row(i));
        }
        let bb = blk.select(&problem.b);
        let atb = blk.apply_adjoint_unchecked(&bb);
        for i in 0..n {
            rhs[i] += atb[i];
        }
    }
    Ok(Cholesky::factor(&h)?.solve(&rhs))
}
