use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{norm2_sq, sub};
use crate::linops::gram;
use crate::regparam::context::GridSpec;
use crate::regparam::select::golden_section;
use crate::solvers::InverseProblem;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FullDataMethod {
    /// Discrepancy principle, `‖Ax(λ) − b‖² = γσ²m`.
    Dp,
    Upre,
    Gcv,
    /// Minimizer of `‖x(λ) − x_true‖`.
    Opt,
}

impl FullDataMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FullDataMethod::Dp => "dp",
            FullDataMethod::Upre => "upre",
            FullDataMethod::Gcv => "gcv",
            FullDataMethod::Opt => "opt",
        }
    }
}

impl fmt::Display for FullDataMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FullDataMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp" => Ok(FullDataMethod::Dp),
            "upre" => Ok(FullDataMethod::Upre),
            "gcv" => Ok(FullDataMethod::Gcv),
            "opt" => Ok(FullDataMethod::Opt),
            other => Err(Error::InvalidArgument(format!(
                "unknown full-data criterion {other:?} (expected dp, upre, gcv or opt)"
            ))),
        }
    }
}

/// Tikhonov solutions for many parameters from one eigendecomposition.
///
/// With `LᵀL = R Rᵀ` and `R⁻¹ AᵀA R⁻ᵀ = Q D Qᵀ`,
/// `x(λ) = R⁻ᵀ Q (D + λI)⁻¹ Qᵀ R⁻¹ Aᵀb` and the influence trace is `Σ d_i/(d_i + λ)`.
#[derive(Clone, Debug)]
pub struct SpectralTikhonov {
    /// `R⁻ᵀ Q`
    basis: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    /// `Qᵀ R⁻¹ Aᵀb`
    coeffs: Vec<f64>,
    problem: InverseProblem,
}

impl SpectralTikhonov {
    pub fn new(problem: &InverseProblem) -> Result<Self> {
        let n = problem.n();
        let g = gram(problem.a.as_ref()).to_nalgebra();
        let ltl = gram(problem.l.as_ref()).to_nalgebra();
        let r = nalgebra::Cholesky::new(ltl)
            .ok_or_else(|| Error::InvalidArgument("regularizer L must have full column rank".into()))?
            .l();
        let rinv_g = r
            .solve_lower_triangular(&g)
            .ok_or_else(|| Error::NumericalBreakdown("triangular solve failed".into()))?;
        let mut m = r
            .solve_lower_triangular(&rinv_g.transpose())
            .ok_or_else(|| Error::NumericalBreakdown("triangular solve failed".into()))?;
        // symmetrize rounding before the eigensolver
        let mt = m.transpose();
        m = (m + mt) * 0.5;
        let eig = SymmetricEigen::new(m);
        let atb = DVector::from_vec(problem.a.apply_adjoint(&problem.b)?);
        let rinv_atb = r
            .solve_lower_triangular(&atb)
            .ok_or_else(|| Error::NumericalBreakdown("triangular solve failed".into()))?;
        let coeffs = (eig.eigenvectors.transpose() * rinv_atb).as_slice().to_vec();
        let basis = r
            .transpose()
            .solve_upper_triangular(&eig.eigenvectors)
            .ok_or_else(|| Error::NumericalBreakdown("triangular solve failed".into()))?;
        debug_assert_eq!(basis.nrows(), n);
        Ok(Self {
            basis,
            eigenvalues: eig.eigenvalues.iter().map(|d| d.max(0.0)).collect(),
            coeffs,
            problem: problem.clone(),
        })
    }

    /// Largest eigenvalue of the transformed Gram (`‖A‖²` when `L = I`).
    pub fn scale(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(0.0, f64::max)
    }

    pub fn solve(&self, lambda: f64) -> Vec<f64> {
        let w: Vec<f64> = self
            .coeffs
            .iter()
            .zip(&self.eigenvalues)
            .map(|(c, d)| if d + lambda > 0.0 { c / (d + lambda) } else { 0.0 })
            .collect();
        (&self.basis * DVector::from_vec(w)).as_slice().to_vec()
    }

    pub fn residual_sq(&self, lambda: f64) -> f64 {
        let x = self.solve(lambda);
        norm2_sq(&sub(&self.problem.a.apply_unchecked(&x), &self.problem.b))
    }

    /// `tr(A (AᵀA + λLᵀL)⁻¹ Aᵀ)`
    pub fn influence_trace(&self, lambda: f64) -> f64 {
        self.eigenvalues
            .iter()
            .map(|d| if d + lambda > 0.0 { d / (d + lambda) } else { 0.0 })
            .sum()
    }

    pub fn error(&self, lambda: f64) -> Result<f64> {
        let xt = self
            .problem
            .x_true
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("opt needs x_true".into()))?;
        Ok(norm2_sq(&sub(&self.solve(lambda), xt)).sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FullDataSelection {
    pub lambda: f64,
    pub objective_value: f64,
    /// Set when DP finds no crossing on the grid.
    pub boundary: bool,
}

/// Full-data DP, UPRE, GCV or error-optimal parameter over a grid scaled by
/// `‖A‖²` (relative to `L`), refined by bisection (DP) or golden-section search.
pub fn full_data_select(
    method: FullDataMethod,
    problem: &InverseProblem,
    grid: &GridSpec,
    gamma: f64,
) -> Result<FullDataSelection> {
    grid.validate()?;
    let sigma2 = match method {
        FullDataMethod::Dp | FullDataMethod::Upre => Some(
            problem
                .sigma2
                .ok_or_else(|| Error::InvalidArgument(format!("{method} needs the noise variance sigma2")))?,
        ),
        _ => None,
    };
    if method == FullDataMethod::Opt && problem.x_true.is_none() {
        return Err(Error::InvalidArgument("opt needs x_true".into()));
    }
    let spec = SpectralTikhonov::new(problem)?;
    full_data_select_with(&spec, method, sigma2, grid, gamma)
}

/// As [`full_data_select`], reusing a precomputed decomposition.
pub fn full_data_select_with(
    spec: &SpectralTikhonov,
    method: FullDataMethod,
    sigma2: Option<f64>,
    grid: &GridSpec,
    gamma: f64,
) -> Result<FullDataSelection> {
    let m = spec.problem.m() as f64;
    let lambdas = grid.values(spec.scale());
    if method == FullDataMethod::Dp {
        let sigma2 = sigma2.ok_or_else(|| Error::InvalidArgument("dp needs the noise variance sigma2".into()))?;
        let target = gamma * sigma2 * m;
        let res: Vec<f64> = lambdas.iter().map(|&l| spec.residual_sq(l)).collect();
        let Some(hit) = res.iter().position(|&r| r >= target) else {
            let l = *lambdas.last().expect("non-empty grid");
            return Ok(FullDataSelection { lambda: l, objective_value: spec.residual_sq(l), boundary: true });
        };
        if hit == 0 {
            return Ok(FullDataSelection { lambda: lambdas[0], objective_value: res[0], boundary: res[0] > target });
        }
        let (mut lo, mut hi) = (lambdas[hit - 1].ln(), lambdas[hit].ln());
        let mut best = (lambdas[hit], res[hit]);
        for _ in 0..200 {
            if (best.1 - target).abs() <= 1e-4 * target || hi - lo < 1e-15 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let r = spec.residual_sq(mid.exp());
            if (r - target).abs() < (best.1 - target).abs() {
                best = (mid.exp(), r);
            }
            if r < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return Ok(FullDataSelection { lambda: best.0, objective_value: best.1, boundary: false });
    }

    let objective = |l: f64| -> f64 {
        match method {
            FullDataMethod::Upre => {
                let s2 = sigma2.unwrap_or(0.0);
                spec.residual_sq(l) + 2.0 * s2 * spec.influence_trace(l) - s2 * m
            }
            FullDataMethod::Gcv => {
                let denom = m - spec.influence_trace(l);
                if denom.abs() < 1e-8 * m {
                    f64::INFINITY
                } else {
                    m * spec.residual_sq(l) / (denom * denom)
                }
            }
            FullDataMethod::Opt => spec.error(l).unwrap_or(f64::INFINITY),
            FullDataMethod::Dp => unreachable!(),
        }
    };
    let values: Vec<f64> = lambdas.iter().map(|&l| objective(l)).collect();
    let (i, v) = values
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::SelectionFailed(format!("{method}: objective undefined on every grid point")))?;
    let mut best = (lambdas[i], v);
    if lambdas.len() > 1 && grid.refine_iters > 0 {
        let lo = lambdas[i.saturating_sub(1)].ln();
        let hi = lambdas[(i + 1).min(lambdas.len() - 1)].ln();
        let (t, fv, _) = golden_section(|t| objective(t.exp()), lo, hi, grid.refine_iters);
        if fv < best.1 {
            best = (t.exp(), fv);
        }
    }
    Ok(FullDataSelection { lambda: best.0, objective_value: best.1, boundary: false })
}
