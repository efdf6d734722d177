//! LSQR (Golub–Kahan bidiagonalization) for `min ‖A x − b‖`.

use crate::error::{Error, Result};
use crate::linalg::{axpy, norm2, scale, sub};
use crate::linops::LinearOperator;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LsqrOptions {
    /// Stop once `‖Aᵀ(Ax − b)‖ ≤ tol · ‖Aᵀb‖`.
    pub tol: f64,
    /// Iteration cap; `None` means `2 n`.
    pub max_iter: Option<usize>,
}

impl Default for LsqrOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LsqrSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `‖Aᵀ(Ax − b)‖ / ‖Aᵀb‖` at exit.
    pub relative_residual: f64,
}

impl LsqrSolution {
    /// Turns a non-converged solve into [`Error::MaxIterations`].
    pub fn into_converged(self) -> Result<Vec<f64>> {
        if self.converged {
            Ok(self.x)
        } else {
            Err(Error::MaxIterations {
                iterations: self.iterations,
                relative_residual: self.relative_residual,
                best: self.x,
            })
        }
    }
}

pub fn lsqr_solve(op: &dyn LinearOperator, rhs: &[f64], opts: LsqrOptions) -> Result<LsqrSolution> {
    let (m, n) = (op.nrows(), op.ncols());
    if rhs.len() != m {
        return Err(Error::dims("lsqr_solve: rhs", m, rhs.len()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("LSQR tolerance must be > 0, got {}", opts.tol)));
    }
    let max_iter = opts.max_iter.unwrap_or(2 * n).max(1);

    let mut x = vec![0.0; n];
    let mut u = rhs.to_vec();
    let mut beta = norm2(&u);
    if beta == 0.0 {
        return Ok(LsqrSolution {
            x,
            iterations: 0,
            converged: true,
            relative_residual: 0.0,
        });
    }
    scale(1.0 / beta, &mut u);
    let mut v = op.apply_adjoint_unchecked(&u);
    let mut alpha = norm2(&v);
    let atb_norm = alpha * beta;
    if alpha == 0.0 {
        return Ok(LsqrSolution {
            x,
            iterations: 0,
            converged: true,
            relative_residual: 0.0,
        });
    }
    scale(1.0 / alpha, &mut v);
    let mut w = v.clone();
    let mut phibar = beta;
    let mut rhobar = alpha;
    let target = opts.tol * atb_norm;

    let true_relres = |x: &[f64]| {
        let r = sub(&op.apply_unchecked(x), rhs);
        norm2(&op.apply_adjoint_unchecked(&r)) / atb_norm
    };

    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;

        // bidiagonalization
        let mut au = op.apply_unchecked(&v);
        axpy(-alpha, &u, &mut au);
        u = au;
        beta = norm2(&u);
        if beta > 0.0 {
            scale(1.0 / beta, &mut u);
            let mut atv = op.apply_adjoint_unchecked(&u);
            axpy(-beta, &v, &mut atv);
            v = atv;
            alpha = norm2(&v);
            if alpha > 0.0 {
                scale(1.0 / alpha, &mut v);
            }
        } else {
            alpha = 0.0;
        }

        // plane rotation
        let rho = rhobar.hypot(beta);
        let c = rhobar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rhobar = -c * alpha;
        let phi = c * phibar;
        phibar *= s;

        axpy(phi / rho, &w, &mut x);
        let mut w_next = v.clone();
        axpy(-theta / rho, &w, &mut w_next);
        w = w_next;

        let arnorm_est = phibar * alpha * c.abs();
        if arnorm_est <= target || alpha == 0.0 || beta == 0.0 {
            // the recurrence estimate can drift, so confirm explicitly
            let rel = true_relres(&x);
            if rel <= opts.tol || alpha == 0.0 || beta == 0.0 {
                return Ok(LsqrSolution {
                    x,
                    iterations,
                    converged: rel <= opts.tol || alpha == 0.0 || beta == 0.0,
                    relative_residual: rel,
                });
            }
        }
    }
    let rel = true_relres(&x);
    Ok(LsqrSolution {
        converged: rel <= opts.tol,
        x,
        iterations,
        relative_residual: rel,
    })
}
