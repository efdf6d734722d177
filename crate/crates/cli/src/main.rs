mod config;
mod drivers;
mod report;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Config;

/// Failure classes; the process exit code tells them apart.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or input data (exit 1).
    Validation(String),
    /// The numerics broke down (exit 2).
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<stik_core::Error> for CliError {
    fn from(e: stik_core::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "stik", version, about = "Sampled and streaming Tikhonov experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment file; every key has a default.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, applied in order after the file.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Same as `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct OutputArgs {
    /// Same as `--set epochs=N`.
    #[arg(long)]
    epochs: Option<usize>,
    /// CSV destination (same as `--set output=PATH`); stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Fill the `seconds` column.
    #[arg(long)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write A, b and x_true (or super-resolution frames) to a directory.
    GenProblem {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out_dir: PathBuf,
        /// Write `[superres]` frames with motion sidecars instead of a matrix problem.
        #[arg(long)]
        frames: bool,
    },
    /// Run one experiment and write its iteration CSV.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutputArgs,
        /// Independent seeded runs in parallel, merged with a replicate column.
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Choose the next increment on one block and print it.
    SelectParam {
        #[command(flatten)]
        config: ConfigArgs,
        /// sdp, supre or sgcv; defaults to `regparam.method`.
        #[arg(long)]
        method: Option<String>,
        /// Steps taken with the configured selector before choosing.
        #[arg(long, default_value_t = 0)]
        after: usize,
    },
    /// Super-resolution from generated frames or a frame directory.
    SuperresRun {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutputArgs,
        /// Same as `--set superres.stream_dir=DIR`.
        #[arg(long)]
        stream_dir: Option<PathBuf>,
        /// Same as `--set superres.image_out=PATH`.
        #[arg(long)]
        image_out: Option<PathBuf>,
    },
    /// Per-epoch rrls and sTik iterates on the 10×2 toy problem.
    ToyFigure {
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        /// Sample paths under sampling with replacement.
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        #[arg(long, default_value_t = 0.2)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn quoted(key: &str, path: &std::path::Path) -> String {
    format!("{key}={}", toml::Value::String(path.display().to_string()))
}

fn load(args: &ConfigArgs, out: Option<&OutputArgs>, extra: Vec<String>) -> Result<Config, CliError> {
    let mut overrides = Vec::new();
    if let Some(s) = args.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(o) = out {
        if let Some(e) = o.epochs {
            overrides.push(format!("epochs={e}"));
        }
        if let Some(p) = &o.output {
            overrides.push(quoted("output", p));
        }
        if o.timing {
            overrides.push("timing=true".into());
        }
    }
    overrides.extend(extra);
    overrides.extend(args.set.iter().cloned());
    let cfg = Config::load(args.config.as_deref(), &overrides)?;
    if args.print_config {
        print!("{}", cfg.to_toml());
        std::process::exit(0);
    }
    Ok(cfg)
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("STIK_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Validation(format!("STIK_THREADS: expected a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Validation(format!("STIK_THREADS: {e}")))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::GenProblem { config, out_dir, frames } => {
            drivers::gen_problem_cmd(&load(&config, None, vec![])?, &out_dir, frames)
        }
        Command::Run { config, out, replicates } => drivers::run_cmd(&load(&config, Some(&out), vec![])?, replicates),
        Command::SelectParam { config, method, after } => {
            drivers::select_param_cmd(&load(&config, None, vec![])?, method.as_deref(), after)
        }
        Command::SuperresRun {
            config,
            out,
            stream_dir,
            image_out,
        } => {
            let mut extra = Vec::new();
            if let Some(d) = &stream_dir {
                extra.push(quoted("superres.stream_dir", d));
            }
            if let Some(p) = &image_out {
                extra.push(quoted("superres.image_out", p));
            }
            drivers::superres_cmd(&load(&config, Some(&out), extra)?)
        }
        Command::ToyFigure {
            epochs,
            paths,
            lambda,
            seed,
            output,
        } => drivers::toy_figure_cmd(
            &drivers::ToyFigure {
                epochs,
                paths,
                lambda,
                seed,
            },
            output.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
