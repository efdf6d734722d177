//! Browser bindings: the toy-problem iterates, a Tikhonov error curve and a
//! sampled run with on-the-fly parameter selection. Every export returns a
//! flat `Float64Array`; the layouts are documented per function.

use std::sync::Arc;

use wasm_bindgen::prelude::*;

use stik_core::problems::{gen_test_problem, relative_error, toy2d, NoiseSpec, TestProblemSpec};
use stik_core::regparam::{SelectorMethod, SelectorSettings, TraceMode};
use stik_core::rng::derive_seed;
use stik_core::solvers::{run_with_observer, DirectTikhonov, RunConfig, Selector};
use stik_core::{InverseProblem, Method, SamplePlan, Strategy};

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// `[x_true, x(0), x(λ)]` followed by one point per epoch `0..=epochs` for
/// each of `paths` sample paths, all as `(x1, x2)` pairs.
pub fn toy_iterates(method: &str, strategy: &str, lambda: f64, epochs: usize, paths: usize, seed: u64) -> Result<Vec<f64>, String> {
    if !(lambda > 0.0) {
        return Err("lambda must be > 0".into());
    }
    let strategy: Strategy = strategy.parse().map_err(err)?;
    let (method, selector) = match method {
        "rrls" => (Method::Rrls { lambda }, Selector::Fixed { increment: 0.0 }),
        "stik" => (Method::Stik, Selector::Fixed { increment: lambda / 10.0 }),
        other => return Err(format!("unknown method {other:?} (expected rrls or stik)")),
    };
    let (a, x_true, b) = toy2d(seed);
    let p = InverseProblem::standard(Arc::new(a), b).map_err(err)?;
    let direct = DirectTikhonov::new(&p).map_err(err)?;
    let mut out = x_true.clone();
    out.extend(direct.solve(0.0).map_err(err)?);
    out.extend(direct.solve(lambda).map_err(err)?);
    let plan = SamplePlan::contiguous(10, 10).map_err(err)?;
    for path in 0..paths {
        let mut cfg = RunConfig::new(method, epochs, strategy, selector.clone());
        cfg.seed = derive_seed(seed, &format!("path/{path}"));
        out.extend([0.0, 0.0]);
        run_with_observer(&p, &plan, &cfg, |rec, x| {
            if rec.k % 10 == 0 {
                out.extend_from_slice(x);
            }
        })
        .map_err(err)?;
    }
    Ok(out)
}

fn problem(name: &str, n: usize, noise: f64, seed: u64) -> Result<InverseProblem, String> {
    if !(2..=400).contains(&n) {
        return Err("n must lie in 2..=400".into());
    }
    gen_test_problem(&TestProblemSpec {
        name: name.parse().map_err(err)?,
        n,
        noise: NoiseSpec::Level(noise),
        seed,
    })
    .map_err(err)
}

/// `(λ, relative error)` pairs of the Tikhonov solution on `points`
/// log-spaced values in `[lo, hi]`.
pub fn error_curve(name: &str, n: usize, noise: f64, seed: u64, lo: f64, hi: f64, points: usize) -> Result<Vec<f64>, String> {
    if !(lo > 0.0 && hi > lo) || points < 2 {
        return Err("need 0 < lo < hi and at least two points".into());
    }
    let p = problem(name, n, noise, seed)?;
    let x_true = p.x_true.clone().expect("generated problems carry their solution");
    let direct = DirectTikhonov::new(&p).map_err(err)?;
    let step = (hi / lo).ln() / (points - 1) as f64;
    let mut out = Vec::with_capacity(2 * points);
    for i in 0..points {
        let lambda = lo * (step * i as f64).exp();
        let x = direct.solve(lambda).map_err(err)?;
        out.extend([lambda, relative_error(&x, &x_true).map_err(err)?]);
    }
    Ok(out)
}

/// One epoch of sTik whose increments are chosen by `selector`; one
/// `(λ_eff, relative error)` pair per step.
pub fn selector_trajectory(name: &str, n: usize, noise: f64, blocks: usize, selector: &str, seed: u64) -> Result<Vec<f64>, String> {
    let p = problem(name, n, noise, seed)?;
    let plan = SamplePlan::contiguous(p.m(), blocks).map_err(err)?;
    let method: SelectorMethod = selector.parse().map_err(err)?;
    let mut settings = SelectorSettings::new(method);
    settings.sigma2 = p.sigma2;
    settings.trace = TraceMode::Hutchinson { probes: 4 };
    settings.probe_seed = derive_seed(seed, "probes");
    settings.grid.points = 24;
    settings.grid.refine_iters = 10;
    let mut cfg = RunConfig::new(Method::Stik, 1, Strategy::RandomCyclic, Selector::Adaptive(settings));
    cfg.seed = derive_seed(seed, "sampling");
    let mut out = Vec::with_capacity(2 * blocks);
    run_with_observer(&p, &plan, &cfg, |rec, _| {
        out.extend([rec.lambda_eff, rec.relative_error.unwrap_or(f64::NAN)]);
    })
    .map_err(err)?;
    Ok(out)
}

#[wasm_bindgen(js_name = toyIterates)]
pub fn toy_iterates_js(method: &str, strategy: &str, lambda: f64, epochs: usize, paths: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    toy_iterates(method, strategy, lambda, epochs, paths, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = errorCurve)]
pub fn error_curve_js(name: &str, n: usize, noise: f64, seed: u32, lo: f64, hi: f64, points: usize) -> Result<Vec<f64>, JsError> {
    error_curve(name, n, noise, seed.into(), lo, hi, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = selectorTrajectory)]
pub fn selector_trajectory_js(name: &str, n: usize, noise: f64, blocks: usize, selector: &str, seed: u32) -> Result<Vec<f64>, JsError> {
    selector_trajectory(name, n, noise, blocks, selector, seed.into()).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use stik_core::linalg::rel_diff;

    #[test]
    fn cyclic_rrls_walks_the_tikhonov_path() {
        let v = toy_iterates("rrls", "random_cyclic", 0.2, 4, 1, 3).unwrap();
        assert_eq!(v.len(), 6 + 2 * 5);
        let (a, _, b) = toy2d(3);
        let p = InverseProblem::standard(Arc::new(a), b).unwrap();
        let direct = DirectTikhonov::new(&p).unwrap();
        assert!(rel_diff(&v[4..6], &direct.solve(0.2).unwrap()) < 1e-12);
        for j in 1..=4 {
            let x = &v[6 + 2 * j..8 + 2 * j];
            assert!(rel_diff(x, &direct.solve(0.2 / j as f64).unwrap()) < 1e-8, "epoch {j}");
        }
    }

    #[test]
    fn stik_paths_have_the_documented_layout() {
        let v = toy_iterates("stik", "random_replacement", 0.2, 3, 5, 1).unwrap();
        assert_eq!(v.len(), 6 + 5 * 2 * 4);
        assert!(v.iter().all(|x| x.is_finite()));
        assert!(toy_iterates("sg", "cyclic", 0.2, 1, 1, 0).is_err());
        assert!(toy_iterates("rrls", "sideways", 0.2, 1, 1, 0).is_err());
    }

    #[test]
    fn error_curve_has_an_interior_minimum() {
        let v = error_curve("gravity", 64, 0.01, 0, 1e-6, 1e2, 30).unwrap();
        let errs: Vec<f64> = v.chunks(2).map(|c| c[1]).collect();
        let best = errs.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!(best > 0 && best < errs.len() - 1, "minimum at the edge: {best}");
        assert!(error_curve("gravity", 64, 0.01, 0, 1.0, 0.5, 30).is_err());
    }

    #[test]
    fn selector_trajectory_reports_every_step() {
        let v = selector_trajectory("shaw", 60, 0.01, 6, "sdp", 2).unwrap();
        assert_eq!(v.len(), 12);
        assert!(v.chunks(2).all(|c| c[0] > 0.0 && c[1].is_finite()));
        assert!(selector_trajectory("shaw", 60, 0.01, 6, "lcurve", 2).is_err());
        assert!(selector_trajectory("shaw", 1000, 0.01, 6, "sdp", 2).is_err());
    }
}
