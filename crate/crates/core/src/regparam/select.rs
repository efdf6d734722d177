use std::fmt;

use crate::error::{Error, Result};
use crate::regparam::context::{SelectorContext, SelectorMethod};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionFlag {
    /// The sampled residual exceeds the discrepancy target on the whole grid.
    NoCrossingLow,
    /// The sampled residual stays below the target on the whole grid.
    NoCrossingHigh,
}

impl fmt::Display for SelectionFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionFlag::NoCrossingLow => "no-crossing-low",
            SelectionFlag::NoCrossingHigh => "no-crossing-high",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    /// `Λ_k`
    pub increment: f64,
    /// `(M/k)(λ_{k-1} + Λ_k)`
    pub lambda_eff: f64,
    /// sDP: the sampled residual; sUPRE/sGCV: the minimized objective.
    pub objective_value: f64,
    pub n_evals: usize,
    pub method: SelectorMethod,
    pub flag: Option<SelectionFlag>,
}

#[cfg(feature = "parallel")]
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Runs the selector configured in the context.
pub fn select(ctx: &SelectorContext<'_>) -> Result<SelectionResult> {
    match ctx.settings().method {
        SelectorMethod::Sdp => sdp_select(ctx),
        m => select_lambda(m, ctx),
    }
}

/// Discrepancy selection: the increment at which the sampled
/// residual crosses `γσ²ℓ`, located on the grid and then bisected in log space.
pub fn sdp_select(ctx: &SelectorContext<'_>) -> Result<SelectionResult> {
    let sigma2 = ctx
        .settings()
        .sigma2
        .ok_or_else(|| Error::InvalidArgument("sdp needs the noise variance sigma2".into()))?;
    let target = ctx.settings().gamma * sigma2 * ctx.block_len() as f64;
    let grid = ctx.grid();
    let res: Vec<Result<f64>> = par_map(&grid, |&inc| ctx.sampled_residual_sq(inc));
    let mut n_evals = grid.len();
    let res = res.into_iter().collect::<Result<Vec<f64>>>()?;

    let result = |inc: f64, value: f64, n_evals: usize, flag| SelectionResult {
        increment: inc,
        lambda_eff: ctx.lambda_eff_for(inc),
        objective_value: value,
        n_evals,
        method: SelectorMethod::Sdp,
        flag,
    };
    let Some(hit) = res.iter().position(|&r| r >= target) else {
        let last = grid.len() - 1;
        return Ok(result(grid[last], res[last], n_evals, Some(SelectionFlag::NoCrossingHigh)));
    };
    if hit == 0 {
        let flag = (res[0] > target).then_some(SelectionFlag::NoCrossingLow);
        return Ok(result(grid[0], res[0], n_evals, flag));
    }

    let (mut lo, mut hi) = (grid[hit - 1].ln(), grid[hit].ln());
    let (mut best_inc, mut best_r) = if (res[hit] - target).abs() < (res[hit - 1] - target).abs() {
        (grid[hit], res[hit])
    } else {
        (grid[hit - 1], res[hit - 1])
    };
    for _ in 0..100 {
        if (best_r - target).abs() <= 1e-3 * target {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let inc = mid.exp();
        let r = ctx.sampled_residual_sq(inc)?;
        n_evals += 1;
        if (r - target).abs() < (best_r - target).abs() {
            best_inc = inc;
            best_r = r;
        }
        if r < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok(result(best_inc, best_r, n_evals, None))
}

/// Minimizes the sUPRE or sGCV objective over the grid, then refines with
/// golden-section search in log space between the neighbours of the best point.
/// Grid points where the objective is undefined or a solve fails are skipped.
pub fn select_lambda(method: SelectorMethod, ctx: &SelectorContext<'_>) -> Result<SelectionResult> {
    if method == SelectorMethod::Sdp {
        return sdp_select(ctx);
    }
    let grid = ctx.grid();
    let eval = |inc: f64| ctx.objective(method, inc).ok().filter(|v| v.is_finite());
    let values: Vec<Option<f64>> = par_map(&grid, |&inc| eval(inc));
    let mut n_evals = grid.len();

    let best = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::SelectionFailed(format!("{method}: objective undefined on every grid point")))?;
    let (mut best_inc, mut best_v) = (grid[best.0], best.1);

    let refine = ctx.settings().grid.refine_iters;
    if grid.len() > 1 && refine > 0 {
        let lo = grid[best.0.saturating_sub(1)].ln();
        let hi = grid[(best.0 + 1).min(grid.len() - 1)].ln();
        let f = |t: f64| eval(t.exp()).unwrap_or(f64::INFINITY);
        let (t, v, evals) = golden_section(f, lo, hi, refine);
        n_evals += evals;
        if v < best_v {
            best_inc = t.exp();
            best_v = v;
        }
    }
    Ok(SelectionResult {
        increment: best_inc,
        lambda_eff: ctx.lambda_eff_for(best_inc),
        objective_value: best_v,
        n_evals,
        method,
        flag: None,
    })
}

/// Golden-section minimization of `f` on `[a, b]`; returns the best point seen,
/// its value and the number of evaluations.
pub(crate) fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64, usize) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut evals = 2;
    let (mut best_t, mut best_v) = if fc <= fd { (c, fc) } else { (d, fd) };
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
            if fc < best_v {
                best_t = c;
                best_v = fc;
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
            if fd < best_v {
                best_t = d;
                best_v = fd;
            }
        }
        evals += 1;
    }
    (best_t, best_v, evals)
}
