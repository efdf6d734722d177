//! One function per subcommand.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;

use stik_core::linops::{row_block, to_dense, write_matrix, write_vector, Identity, Operator};
use stik_core::problems::{relative_error, toy2d};
use stik_core::regparam::{self, spectral_norm_sq, SelectorContext, SelectorMethod};
use stik_core::rng::derive_seed;
use stik_core::solvers::{
    block_views, run, run_with_observer, tikhonov_direct, RunConfig, RunOutput, Selector, Stepper,
};
use stik_core::superres::{
    frame_operator, gen_frames, read_pgm, stacked_problem, synthetic_image, write_frame, write_pgm, FrameSpec,
    FrameStream, GrayImage,
};
use stik_core::{InverseProblem, Method, SamplePlan, Strategy};

use crate::config::Config;
use crate::report::{num, open_sink, summary, write_records};
use crate::CliError;

struct Finished {
    out: RunOutput,
    relerr: Option<f64>,
}

impl Finished {
    fn new(out: RunOutput, x_true: Option<&[f64]>) -> Result<Self, CliError> {
        let relerr = x_true.map(|t| relative_error(&out.x, t)).transpose()?;
        Ok(Self { out, relerr })
    }

    fn summary(&self) -> String {
        summary(self.relerr, self.out.final_lambda_eff())
    }
}

fn run_once(cfg: &Config) -> Result<Finished, CliError> {
    let problem = cfg.build_problem()?;
    let plan = cfg.plan(problem.m())?;
    let run_cfg = cfg.run_config(problem.sigma2)?;
    let out = run(&problem, &plan, &run_cfg)?;
    Finished::new(out, problem.x_true.as_deref())
}

/// Writes the CSV to the configured output (stdout by default) and returns the
/// summary lines.
fn emit(cfg: &Config, runs: &[Finished], with_replicate: bool) -> Result<Vec<String>, CliError> {
    let tables: Vec<(usize, &[_])> = runs.iter().enumerate().map(|(r, f)| (r, f.out.records.as_slice())).collect();
    let mut sink = open_sink(cfg.output.as_deref())?;
    write_records(&mut sink, &tables, with_replicate, cfg.timing)?;
    sink.flush()?;
    let mut lines = Vec::new();
    for (r, f) in runs.iter().enumerate() {
        for w in &f.out.warnings {
            eprintln!("warning: {w}");
        }
        if f.out.unconverged_solves > 0 {
            eprintln!("warning: {} LSQR solves stopped at the iteration cap", f.out.unconverged_solves);
        }
        lines.push(if with_replicate {
            format!("replicate={r}, {}", f.summary())
        } else {
            f.summary()
        });
    }
    Ok(lines)
}

fn print_summaries(cfg: &Config, lines: &[String]) {
    // keep stdout clean for the CSV when no output file is given
    for l in lines {
        if cfg.output.is_some() {
            println!("{l}");
        } else {
            eprintln!("{l}");
        }
    }
}

pub fn run_cmd(cfg: &Config, replicates: Option<usize>) -> Result<(), CliError> {
    let reps = replicates.unwrap_or(1);
    if reps == 0 {
        return Err(CliError::Validation("replicates: must be positive".into()));
    }
    let results: Vec<Result<Finished, CliError>> = (0..reps).into_par_iter().map(|r| run_once(&cfg.replicate(r))).collect();
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let lines = emit(cfg, &runs, replicates.is_some())?;
    print_summaries(cfg, &lines);
    Ok(())
}

pub fn select_param_cmd(cfg: &Config, method: Option<&str>, after: usize) -> Result<(), CliError> {
    let method = method
        .map(|m| {
            m.parse::<SelectorMethod>()
                .map_err(|e| CliError::Validation(format!("method: {e}")))
        })
        .transpose()?;
    if method.is_none() && cfg.regparam.method == "fixed" {
        return Err(CliError::Validation(
            "regparam.method: select-param needs sdp, supre or sgcv (or --method)".into(),
        ));
    }
    let problem = cfg.build_problem()?;
    let plan = cfg.plan(problem.m())?;
    let views = block_views(&problem, &plan)?;
    let settings = cfg.selector_settings(method, problem.sigma2)?;
    let run_cfg = if after == 0 {
        RunConfig::new(cfg.method()?, 0, cfg.strategy()?, Selector::Fixed { increment: 0.0 })
    } else {
        cfg.run_config(problem.sigma2)?
    };
    if !run_cfg.method.takes_increments() {
        return Err(CliError::Validation(format!(
            "method.name: {} uses a fixed parameter and takes no increments",
            run_cfg.method.name()
        )));
    }
    let scale = settings.scale.unwrap_or_else(|| spectral_norm_sq(problem.a.as_ref(), 50));
    let num_blocks = plan.num_blocks();
    let mut stepper = Stepper::new(&problem, &run_cfg, num_blocks, scale)?;
    let mut schedule = plan.schedule(run_cfg.strategy, run_cfg.seed);
    for k in 1..=after {
        let tau = schedule.next_block(k);
        stepper.step(&views[tau], &views[tau].select(&problem.b), tau)?;
    }
    let k = after + 1;
    let tau = schedule.next_block(k);
    let b_block = views[tau].select(&problem.b);
    let ctx = SelectorContext::new(stepper.state(), &views[tau], &b_block, num_blocks, &settings, scale)?;
    let sel = regparam::select(&ctx)?;
    let flag = sel.flag.map(|f| format!(", flag={f}")).unwrap_or_default();
    println!(
        "k={k}, tau={}, method={}, Lambda={}, lambda_eff={}, objective={}, evals={}{flag}",
        tau + 1,
        sel.method,
        num(sel.increment),
        num(sel.lambda_eff),
        num(sel.objective_value),
        sel.n_evals
    );
    Ok(())
}

pub fn gen_problem_cmd(cfg: &Config, out_dir: &Path, frames: bool) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)?;
    if frames {
        let s = &cfg.superres;
        let img = synthetic_image(s.n);
        let list = gen_frames(&img, &frame_spec(cfg))?;
        for (i, f) in list.iter().enumerate() {
            write_frame(out_dir, i + 1, s.ell, f)?;
        }
        write_pgm(
            out_dir.join("truth.pgm"),
            &GrayImage {
                width: s.n,
                height: s.n,
                data: img,
            },
            true,
        )?;
        println!("frames={}, n={}, ell={}", list.len(), s.n, s.ell);
        return Ok(());
    }
    let p = cfg.build_problem()?;
    let a = match p.a.as_dense() {
        Some(a) => a.clone(),
        None => to_dense(p.a.as_ref()),
    };
    write_matrix(out_dir.join("A.txt"), &a)?;
    write_vector(out_dir.join("b.txt"), &p.b)?;
    if let Some(x) = &p.x_true {
        write_vector(out_dir.join("x_true.txt"), x)?;
    }
    let sigma2 = p.sigma2.map(num).unwrap_or_else(|| "NA".into());
    println!("m={}, n={}, sigma2={sigma2}", p.m(), p.n());
    Ok(())
}

fn frame_spec(cfg: &Config) -> FrameSpec {
    let s = &cfg.superres;
    FrameSpec {
        n: s.n,
        ell: s.ell,
        frames: s.frames,
        max_shift: s.max_shift,
        max_angle: s.max_angle,
        noise_level: s.noise_level,
        seed: cfg.frames_seed(),
    }
}

fn save_image(cfg: &Config, x: &[f64]) -> Result<(), CliError> {
    if let Some(path) = &cfg.superres.image_out {
        let n = cfg.superres.n;
        write_pgm(
            path,
            &GrayImage {
                width: n,
                height: n,
                data: x.to_vec(),
            },
            true,
        )?;
    }
    Ok(())
}

pub fn superres_cmd(cfg: &Config) -> Result<(), CliError> {
    let finished = match &cfg.superres.stream_dir {
        Some(dir) => superres_stream(cfg, dir)?,
        None => {
            let img = synthetic_image(cfg.superres.n);
            let frames = gen_frames(&img, &frame_spec(cfg))?;
            let (p, plan) = stacked_problem(cfg.superres.n, cfg.superres.ell, &frames)?;
            let p = p.with_truth(img)?;
            let out = run(&p, &plan, &cfg.run_config(None)?)?;
            Finished::new(out, p.x_true.as_deref())?
        }
    };
    save_image(cfg, &finished.out.x)?;
    let lines = emit(cfg, std::slice::from_ref(&finished), false)?;
    print_summaries(cfg, &lines);
    Ok(())
}

/// One pass over frames as they land in `dir`; `superres.frames` is the
/// block count used to normalize the effective parameter.
fn superres_stream(cfg: &Config, dir: &Path) -> Result<Finished, CliError> {
    let n = cfg.superres.n;
    let truth = match &cfg.superres.truth {
        Some(path) => {
            let img = read_pgm(path).map_err(|e| CliError::Validation(format!("superres.truth: {e}")))?;
            if (img.width, img.height) != (n, n) {
                return Err(CliError::Validation(format!(
                    "superres.truth: expected a {n}x{n} image, got {}x{}",
                    img.width, img.height
                )));
            }
            Some(img.data)
        }
        None => None,
    };
    let run_cfg = cfg.run_config(None)?;
    let l: Operator = Arc::new(Identity(n * n));
    let mut stream = FrameStream::open(dir, Duration::from_secs_f64(cfg.superres.timeout))
        .map_err(|e| CliError::Validation(format!("superres.stream_dir: {e}")))?;
    let mut stepper: Option<Stepper> = None;
    let mut index = 0;
    while let Some((frame, ell)) = stream.next_frame()? {
        if ell == 0 || n % ell != 0 {
            return Err(CliError::Validation(format!(
                "superres.n: frame side {ell} does not divide {n}"
            )));
        }
        let op = frame_operator(n, ell, frame.motion)?;
        let rows: Vec<usize> = (0..ell * ell).collect();
        let block = row_block(&op, &rows)?;
        let st = match &mut stepper {
            Some(s) => s,
            None => {
                let scale = cfg
                    .regparam
                    .scale
                    .unwrap_or_else(|| spectral_norm_sq(op.as_ref(), 50) * cfg.superres.frames as f64);
                stepper.insert(Stepper::with_regularizer(&l, truth.clone(), &run_cfg, cfg.superres.frames, scale)?)
            }
        };
        st.step(&block, &frame.data, index)?;
        index += 1;
    }
    let st = stepper.ok_or_else(|| {
        CliError::Validation(format!(
            "superres.stream_dir: no frame_0001.pgm appeared in {} within the timeout",
            dir.display()
        ))
    })?;
    Finished::new(st.finish(), truth.as_deref())
}

pub struct ToyFigure {
    pub epochs: usize,
    pub paths: usize,
    pub lambda: f64,
    pub seed: u64,
}

/// Iterates on the 10×2 toy after each epoch, in long format
/// `series,path,epoch,x1,x2`.
pub fn toy_figure_cmd(opts: &ToyFigure, output: Option<&Path>) -> Result<(), CliError> {
    if !(opts.lambda > 0.0) || !opts.lambda.is_finite() {
        return Err(CliError::Validation("lambda: must be > 0".into()));
    }
    let (a, x_true, b) = toy2d(opts.seed);
    let p = InverseProblem::standard(Arc::new(a), b)?;
    let plan = SamplePlan::contiguous(10, 10)?;
    type Row = (&'static str, usize, usize, f64, f64);
    let mut rows: Vec<Row> = vec![
        ("truth", 0, 0, x_true[0], x_true[1]),
    ];
    let x0 = tikhonov_direct(&p, 0.0)?;
    let xl = tikhonov_direct(&p, opts.lambda)?;
    rows.push(("unregularized", 0, 0, x0[0], x0[1]));
    rows.push(("tikhonov", 0, 0, xl[0], xl[1]));

    let trace = |series: &'static str, path: usize, method: Method, strategy: Strategy, selector: Selector, seed: u64| {
        let mut cfg = RunConfig::new(method, opts.epochs, strategy, selector);
        cfg.seed = seed;
        let mut out = vec![(series, path, 0, 0.0, 0.0)];
        run_with_observer(&p, &plan, &cfg, |rec, x| {
            if rec.k % 10 == 0 {
                out.push((series, path, rec.k / 10, x[0], x[1]));
            }
        })
        .map(|_| out)
    };
    let rrls = Method::Rrls { lambda: opts.lambda };
    let none = Selector::Fixed { increment: 0.0 };
    let even = Selector::Fixed {
        increment: opts.lambda / 10.0,
    };
    rows.extend(trace("rrls_cyclic", 0, rrls, Strategy::RandomCyclic, none.clone(), derive_seed(opts.seed, "cyclic"))?);
    let paths: Vec<Vec<Row>> = (0..opts.paths)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(opts.seed, &format!("path/{i}"));
            let mut r = trace("rrls_random", i, rrls, Strategy::RandomReplacement, none.clone(), seed)?;
            r.extend(trace("stik_random", i, Method::Stik, Strategy::RandomReplacement, even.clone(), seed)?);
            Ok(r)
        })
        .collect::<Result<_, stik_core::Error>>()?;
    // group by series so each curve is contiguous
    for series in ["rrls_random", "stik_random"] {
        rows.extend(paths.iter().flatten().filter(|r| r.0 == series).copied());
    }

    let mut sink = open_sink(output)?;
    let mut w = csv::Writer::from_writer(&mut sink);
    w.write_record(["series", "path", "epoch", "x1", "x2"])?;
    for (series, path, epoch, x1, x2) in rows {
        w.write_record([series.to_string(), path.to_string(), epoch.to_string(), num(x1), num(x2)])?;
    }
    w.flush()?;
    Ok(())
}
