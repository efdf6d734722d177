//! Test problems: midpoint-quadrature discretizations of first-kind Fredholm
//! equations, a Toeplitz band-limiting matrix, and a 10×2 toy.
//!
//! | name      | kernel on the quadrature grid                                                    | solution |
//! |-----------|----------------------------------------------------------------------------------|----------|
//! | `gravity` | `(1/n) d (d² + (s−t)²)^{−3/2}`, `d = 0.25`, `s,t ∈ [0,1]`                          | `sin(πt) + ½ sin(2πt)` |
//! | `shaw`    | `h ((cos s + cos t) sinc(π(sin s + sin t)))²`, `h = π/n`, `s,t ∈ [−π/2, π/2]`      | `2e^{−6(t−0.8)²} + e^{−2(t+0.5)²}` |
//! | `baart`   | `(π/n) exp(s cos t)`, `s ∈ [0, π/2]`, `t ∈ [0, π]`                                  | `sin t` |
//! | `prolate` | symmetric Toeplitz, `a₀ = 2w`, `a_k = sin(2πwk)/(πk)`, `w = 0.25`                   | all ones |
//! | `toy2d`   | rows `[1, δ_A,i]` (i < 9) and `[0, 1]`, `δ_A ~ N(0, 0.005)`, data noise `N(0, 0.1)` | `[1, 1]` |

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{norm2, norm2_sq, sub, DenseMatrix};
use crate::rng::labeled_stream;
use crate::solvers::InverseProblem;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProblemName {
    Gravity,
    Shaw,
    Baart,
    Prolate,
    Toy2d,
}

impl ProblemName {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemName::Gravity => "gravity",
            ProblemName::Shaw => "shaw",
            ProblemName::Baart => "baart",
            ProblemName::Prolate => "prolate",
            ProblemName::Toy2d => "toy2d",
        }
    }
}

impl fmt::Display for ProblemName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gravity" => Ok(ProblemName::Gravity),
            "shaw" => Ok(ProblemName::Shaw),
            "baart" => Ok(ProblemName::Baart),
            "prolate" => Ok(ProblemName::Prolate),
            "toy2d" => Ok(ProblemName::Toy2d),
            other => Err(Error::InvalidArgument(format!(
                "unknown problem {other:?} (expected gravity, shaw, baart, prolate or toy2d)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseSpec {
    None,
    /// `‖ε‖ / ‖b_clean‖`
    Level(f64),
    /// Per-entry variance σ².
    Variance(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestProblemSpec {
    pub name: ProblemName,
    /// Unknowns (ignored by `toy2d`, which is always 10×2).
    pub n: usize,
    pub noise: NoiseSpec,
    pub seed: u64,
}

fn midpoints(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let h = (hi - lo) / n as f64;
    (0..n).map(|i| lo + (i as f64 + 0.5) * h).collect()
}

pub fn gravity(n: usize) -> (DenseMatrix, Vec<f64>) {
    let d: f64 = 0.25;
    let t = midpoints(n, 0.0, 1.0);
    let a = DenseMatrix::from_fn(n, n, |i, j| d / (n as f64 * (d * d + (t[i] - t[j]).powi(2)).powf(1.5)));
    let x = t.iter().map(|&t| (PI * t).sin() + 0.5 * (2.0 * PI * t).sin()).collect();
    (a, x)
}

pub fn shaw(n: usize) -> (DenseMatrix, Vec<f64>) {
    let h = PI / n as f64;
    let t = midpoints(n, -PI / 2.0, PI / 2.0);
    let a = DenseMatrix::from_fn(n, n, |i, j| {
        let (s, t) = (t[i], t[j]);
        let c = s.cos() + t.cos();
        let p = PI * (s.sin() + t.sin());
        let sinc = if p == 0.0 { 1.0 } else { p.sin() / p };
        h * (c * sinc).powi(2)
    });
    let x = t
        .iter()
        .map(|&t| 2.0 * (-6.0 * (t - 0.8).powi(2)).exp() + (-2.0 * (t + 0.5).powi(2)).exp())
        .collect();
    (a, x)
}

pub fn baart(n: usize) -> (DenseMatrix, Vec<f64>) {
    let s = midpoints(n, 0.0, PI / 2.0);
    let t = midpoints(n, 0.0, PI);
    let h = PI / n as f64;
    let a = DenseMatrix::from_fn(n, n, |i, j| h * (s[i] * t[j].cos()).exp());
    let x = t.iter().map(|t| t.sin()).collect();
    (a, x)
}

pub fn prolate(n: usize, w: f64) -> (DenseMatrix, Vec<f64>) {
    let coeff = |k: usize| {
        if k == 0 {
            2.0 * w
        } else {
            (2.0 * PI * w * k as f64).sin() / (PI * k as f64)
        }
    };
    let a = DenseMatrix::from_fn(n, n, |i, j| coeff(i.abs_diff(j)));
    (a, vec![1.0; n])
}

/// The 10×2 toy with its own perturbations drawn from `seed`; returns
/// `(A, x_true, b)` with `b = A x_true + δ_b`.
pub fn toy2d(seed: u64) -> (DenseMatrix, Vec<f64>, Vec<f64>) {
    let mut rng = labeled_stream(seed, "toy2d");
    let da = Normal::new(0.0, 0.005f64.sqrt()).expect("valid normal");
    let db = Normal::new(0.0, 0.1f64.sqrt()).expect("valid normal");
    let mut a = DenseMatrix::zeros(10, 2);
    for i in 0..9 {
        a[(i, 0)] = 1.0;
        a[(i, 1)] = da.sample(&mut rng);
    }
    a[(9, 1)] = 1.0;
    let x = vec![1.0, 1.0];
    let mut b = a.matvec(&x);
    for v in &mut b {
        *v += db.sample(&mut rng);
    }
    (a, x, b)
}

pub fn gen_test_problem(spec: &TestProblemSpec) -> Result<InverseProblem> {
    if spec.name != ProblemName::Toy2d && spec.n < 2 {
        return Err(Error::InvalidArgument(format!("problem size must be >= 2, got {}", spec.n)));
    }
    let (a, x, b_clean, base_sigma2) = match spec.name {
        ProblemName::Toy2d => {
            let (a, x, b) = toy2d(spec.seed);
            (a, x, b, Some(0.1))
        }
        name => {
            let (a, x) = match name {
                ProblemName::Gravity => gravity(spec.n),
                ProblemName::Shaw => shaw(spec.n),
                ProblemName::Baart => baart(spec.n),
                ProblemName::Prolate => prolate(spec.n, 0.25),
                ProblemName::Toy2d => unreachable!(),
            };
            let b = a.matvec(&x);
            (a, x, b, None)
        }
    };
    let (b, sigma2) = match spec.noise {
        NoiseSpec::None => (b_clean, base_sigma2),
        NoiseSpec::Level(v) => {
            let (b, s) = add_noise(&b_clean, NoiseMode::Level, v, spec.seed)?;
            (b, Some(s))
        }
        NoiseSpec::Variance(v) => {
            let (b, s) = add_noise(&b_clean, NoiseMode::Variance, v, spec.seed)?;
            (b, Some(s))
        }
    };
    let mut p = InverseProblem::standard(Arc::new(a), b)?.with_truth(x)?;
    if let Some(s) = sigma2 {
        p = p.with_sigma2(s)?;
    }
    Ok(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    /// Scale white noise so `‖ε‖ / ‖b_clean‖` equals the value.
    Level,
    /// Draw `ε ~ N(0, value · I)`.
    Variance,
}

/// Adds Gaussian white noise; returns the noisy data and the noise variance
/// (`‖ε‖²/m` in level mode).
pub fn add_noise(b_clean: &[f64], mode: NoiseMode, value: f64, seed: u64) -> Result<(Vec<f64>, f64)> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::InvalidArgument(format!("noise value must be > 0, got {value}")));
    }
    let mut rng = labeled_stream(seed, "noise");
    let m = b_clean.len();
    match mode {
        NoiseMode::Level => {
            let mut e: Vec<f64> = (0..m).map(|_| rand_distr::StandardNormal.sample(&mut rng)).collect();
            let target = value * norm2(b_clean);
            let s = target / norm2(&e);
            e.iter_mut().for_each(|v| *v *= s);
            let sigma2 = norm2_sq(&e) / m as f64;
            Ok((b_clean.iter().zip(&e).map(|(b, e)| b + e).collect(), sigma2))
        }
        NoiseMode::Variance => {
            let dist = Normal::new(0.0, value.sqrt()).expect("positive std");
            let b = b_clean.iter().map(|b| b + dist.sample(&mut rng)).collect();
            Ok((b, value))
        }
    }
}

/// `‖x − x_true‖ / ‖x_true‖`
pub fn relative_error(x: &[f64], x_true: &[f64]) -> Result<f64> {
    if x.len() != x_true.len() {
        return Err(Error::dims("relative_error", x_true.len(), x.len()));
    }
    let d = norm2(x_true);
    if d == 0.0 {
        return Err(Error::InvalidArgument("relative error against a zero reference".into()));
    }
    Ok(norm2(&sub(x, x_true)) / d)
}
