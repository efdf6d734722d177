use crate::error::{Error, Result};
use crate::linalg::{norm2_sq, sub};
use crate::linops::{row_block, LinearOperator, Operator, RowBlockView};
use crate::problems::relative_error;
use crate::regparam::{self, SelectionResult, SelectorContext, SelectorSettings};
use crate::sampling::{SamplePlan, Strategy};
use crate::solvers::{InverseProblem, LsqrOptions, Method, SolverState};

/// How `Λ_k` is chosen at each step.
#[derive(Clone, Debug)]
pub enum Selector {
    /// The same increment every step.
    Fixed { increment: f64 },
    Adaptive(SelectorSettings),
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub method: Method,
    pub epochs: usize,
    pub strategy: Strategy,
    pub seed: u64,
    pub selector: Selector,
    /// Effective parameter for the first step; its increment is `λ₀/M`.
    /// Adaptive selection then starts at step 2.
    pub initial_lambda: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub lsqr: LsqrOptions,
    /// Keep going with the last LSQR iterate when a subsolve hits its cap.
    pub accept_unconverged: bool,
}

impl RunConfig {
    pub fn new(method: Method, epochs: usize, strategy: Strategy, selector: Selector) -> Self {
        Self {
            method,
            epochs,
            strategy,
            seed: 0,
            selector,
            initial_lambda: None,
            x0: None,
            lsqr: LsqrOptions::default(),
            accept_unconverged: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// Zero-based block index `τ(k)`.
    pub tau: usize,
    /// `Λ_k` actually applied (0 for rrls).
    pub increment: f64,
    /// `λ_k / (k/M)`; the fixed λ for rrls.
    pub lambda_eff: f64,
    pub lambda_cum: f64,
    /// `‖A_k x_k − b_k‖²`
    pub sampled_residual_sq: f64,
    pub relative_error: Option<f64>,
    /// Seconds since the run started.
    pub wall_time: f64,
    /// The proposed increment would have made `λ_k ≤ 0` and was replaced.
    pub clipped: bool,
    pub selection: Option<SelectionResult>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub x: Vec<f64>,
    pub records: Vec<IterationRecord>,
    pub lambda_cum: f64,
    pub warnings: Vec<String>,
    pub unconverged_solves: usize,
}

impl RunOutput {
    pub fn final_relative_error(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.relative_error)
    }

    pub fn final_lambda_eff(&self) -> Option<f64> {
        self.records.last().map(|r| r.lambda_eff)
    }
}

/// Row-block views for every block of the plan.
pub fn block_views(problem: &InverseProblem, plan: &SamplePlan) -> Result<Vec<RowBlockView>> {
    if plan.m() != problem.m() {
        return Err(Error::dims("sample plan rows", problem.m(), plan.m()));
    }
    plan.blocks().iter().map(|rows| row_block(&problem.a, rows)).collect()
}

/// Runs `epochs · M` steps of the configured method.
pub fn run(problem: &InverseProblem, plan: &SamplePlan, config: &RunConfig) -> Result<RunOutput> {
    run_with_observer(problem, plan, config, |_, _| {})
}

/// As [`run`], calling `observe(record, x_k)` after every step.
pub fn run_with_observer(
    problem: &InverseProblem,
    plan: &SamplePlan,
    config: &RunConfig,
    mut observe: impl FnMut(&IterationRecord, &[f64]),
) -> Result<RunOutput> {
    let views = block_views(problem, plan)?;
    let num_blocks = plan.num_blocks();
    let scale = match &config.selector {
        Selector::Adaptive(s) => s.scale.unwrap_or_else(|| regparam::spectral_norm_sq(problem.a.as_ref(), 50)),
        Selector::Fixed { .. } => 1.0,
    };
    let mut stepper = Stepper::new(problem, config, num_blocks, scale)?;
    let mut schedule = plan.schedule(config.strategy, config.seed);
    for k in 1..=config.epochs * num_blocks {
        let tau = schedule.next_block(k);
        let b_block = views[tau].select(&problem.b);
        stepper.step(&views[tau], &b_block, tau)?;
        let (rec, x) = stepper.last();
        observe(rec, x);
    }
    Ok(stepper.finish())
}

/// Wall clock for the records. wasm32 has no `Instant`, so times read 0 there.
#[derive(Clone, Debug)]
struct Clock {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Clock {
    fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.start.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        0.0
    }
}

/// Drives a [`SolverState`] one block at a time, choosing increments and
/// producing records. Blocks may come from a fixed plan or arrive as a stream.
#[derive(Clone, Debug)]
pub struct Stepper {
    state: SolverState,
    selector: Selector,
    initial_lambda: Option<f64>,
    num_blocks: usize,
    scale: f64,
    x_true: Option<Vec<f64>>,
    records: Vec<IterationRecord>,
    warnings: Vec<String>,
    clock: Clock,
}

impl Stepper {
    /// `scale` places the adaptive grid (an `‖A‖²` estimate); it is ignored
    /// for fixed increments.
    pub fn new(problem: &InverseProblem, config: &RunConfig, num_blocks: usize, scale: f64) -> Result<Self> {
        Self::with_regularizer(&problem.l, problem.x_true.clone(), config, num_blocks, scale)
    }

    pub fn with_regularizer(
        l: &Operator,
        x_true: Option<Vec<f64>>,
        config: &RunConfig,
        num_blocks: usize,
        scale: f64,
    ) -> Result<Self> {
        if num_blocks == 0 {
            return Err(Error::InvalidArgument("block count must be positive".into()));
        }
        let mut warnings = Vec::new();
        if let Method::Rrls { .. } = config.method {
            let nonzero = config.x0.as_ref().is_some_and(|x| x.iter().any(|&v| v != 0.0));
            if nonzero && config.strategy.is_epoch_complete() {
                warnings.push("rrls with a nonzero start: epoch iterates will not equal x(λ/j)".into());
            }
        }
        match &config.selector {
            Selector::Fixed { increment } if !increment.is_finite() => {
                return Err(Error::InvalidArgument(format!("fixed increment must be finite, got {increment}")));
            }
            Selector::Adaptive(s) => s.validate()?,
            _ => {}
        }
        if let Some(l0) = config.initial_lambda {
            if !(l0 >= 0.0) || !l0.is_finite() {
                return Err(Error::InvalidArgument(format!("initial lambda must be >= 0, got {l0}")));
            }
        }
        let mut state = SolverState::with_regularizer(config.method, l, config.x0.clone(), config.lsqr)?;
        state.set_accept_unconverged(config.accept_unconverged);
        Ok(Self {
            state,
            selector: config.selector.clone(),
            initial_lambda: config.initial_lambda,
            num_blocks,
            scale,
            x_true,
            records: Vec::new(),
            warnings,
            clock: Clock::start(),
        })
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    /// The latest record and iterate. Panics before the first step.
    pub fn last(&self) -> (&IterationRecord, &[f64]) {
        (self.records.last().expect("no step taken yet"), self.state.x())
    }

    /// Step `k = records + 1` on `block` (with zero-based index `tau`).
    pub fn step(&mut self, block: &RowBlockView, b_block: &[f64], tau: usize) -> Result<&IterationRecord> {
        let k = self.state.k() + 1;
        let at = |e: Error| Error::AtIteration { k, source: Box::new(e) };
        let method = self.state.method();

        let (mut increment, selection) = match (&self.selector, self.initial_lambda) {
            _ if !method.takes_increments() => (0.0, None),
            (_, Some(l0)) if k == 1 => (l0 / self.num_blocks as f64, None),
            (Selector::Fixed { increment }, _) => (*increment, None),
            (Selector::Adaptive(settings), _) => {
                let ctx = SelectorContext::new(&self.state, block, b_block, self.num_blocks, settings, self.scale)
                    .map_err(at)?;
                let sel = regparam::select(&ctx).map_err(at)?;
                (sel.increment, Some(sel))
            }
        };

        let mut clipped = false;
        if method.takes_increments() {
            let prev = self.state.lambda_cum();
            let proposed = prev + increment;
            let zero_allowed = !method.is_full() && prev == 0.0 && increment == 0.0;
            if !(proposed > 0.0) && !zero_allowed {
                let floor = if prev > 0.0 { 1e-12 * prev } else { 1e-12 };
                increment = floor - prev;
                clipped = true;
            }
        }

        self.state.step(block, b_block, increment).map_err(at)?;

        let x = self.state.x();
        let lambda_eff = match method {
            Method::Rrls { lambda } => lambda,
            _ => self.state.lambda_cum() / (k as f64 / self.num_blocks as f64),
        };
        let record = IterationRecord {
            k,
            tau,
            increment,
            lambda_eff,
            lambda_cum: self.state.lambda_cum(),
            sampled_residual_sq: norm2_sq(&sub(&block.apply_unchecked(x), b_block)),
            relative_error: match &self.x_true {
                Some(xt) => Some(relative_error(x, xt).map_err(at)?),
                None => None,
            },
            wall_time: self.clock.seconds(),
            clipped,
            selection,
        };
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn finish(self) -> RunOutput {
        RunOutput {
            lambda_cum: self.state.lambda_cum(),
            unconverged_solves: self.state.unconverged_solves(),
            x: self.state.into_x(),
            records: self.records,
            warnings: self.warnings,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{rel_diff, DenseMatrix};
    use crate::solvers::tikhonov_direct;
    use std::sync::Arc;

    fn problem() -> InverseProblem {
        let a = DenseMatrix::from_fn(20, 4, |i, j| ((i * 7 + j * 3) as f64 * 0.37).sin() + if i % 4 == j { 1.0 } else { 0.0 });
        let x = vec![1.0, -1.0, 0.5, 2.0];
        let b = a.matvec(&x);
        InverseProblem::standard(Arc::new(a), b).unwrap().with_truth(x).unwrap()
    }

    #[test]
    fn zero_epochs_returns_start() {
        let p = problem();
        let plan = SamplePlan::contiguous(20, 4).unwrap();
        let mut cfg = RunConfig::new(Method::Stik, 0, Strategy::Cyclic, Selector::Fixed { increment: 0.1 });
        cfg.x0 = Some(vec![1.0, 2.0, 3.0, 4.0]);
        let out = run(&p, &plan, &cfg).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.x, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn constant_increment_gives_tikhonov_each_epoch() {
        let p = problem();
        let plan = SamplePlan::contiguous(20, 4).unwrap();
        let lambda = 0.3;
        let cfg = RunConfig::new(Method::Stik, 3, Strategy::Cyclic, Selector::Fixed { increment: lambda / 4.0 });
        let x_ref = tikhonov_direct(&p, lambda).unwrap();
        let mut checked = 0;
        run_with_observer(&p, &plan, &cfg, |rec, x| {
            if rec.k % 4 == 0 {
                assert!(rel_diff(x, &x_ref) < 1e-10);
                checked += 1;
            }
        })
        .unwrap();
        assert_eq!(checked, 3);
    }

    #[test]
    fn nonpositive_proposals_are_clipped() {
        let p = problem();
        let plan = SamplePlan::contiguous(20, 4).unwrap();
        let mut cfg = RunConfig::new(Method::Stik, 1, Strategy::Cyclic, Selector::Fixed { increment: -1.0 });
        cfg.initial_lambda = Some(0.4);
        let out = run(&p, &plan, &cfg).unwrap();
        assert!(!out.records[0].clipped);
        assert!(out.records[1].clipped);
        // prev + (floor - prev) cancels down to about one ulp of prev
        assert!((out.records[1].lambda_cum - 1e-12 * 0.1).abs() < 1e-15 * 0.1);
        assert!(out.records.iter().all(|r| r.lambda_cum > 0.0));
    }

    #[test]
    fn rrls_nonzero_start_warns_under_cyclic() {
        let p = problem();
        let plan = SamplePlan::contiguous(20, 2).unwrap();
        let mut cfg = RunConfig::new(Method::Rrls { lambda: 1.0 }, 1, Strategy::Cyclic, Selector::Fixed { increment: 0.0 });
        cfg.x0 = Some(vec![1.0; 4]);
        assert_eq!(run(&p, &plan, &cfg).unwrap().warnings.len(), 1);
        cfg.strategy = Strategy::RandomReplacement;
        assert!(run(&p, &plan, &cfg).unwrap().warnings.is_empty());
    }
}
