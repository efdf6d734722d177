//! CSV and summary output.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use stik_core::solvers::IterationRecord;

use crate::CliError;

pub const HEADER: [&str; 7] = ["k", "tau", "Lambda", "lambda_eff", "res2", "relerr", "seconds"];

/// Shortest round-trip form; stable across runs, which keeps CSVs byte-identical.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn open_sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).map_err(|e| CliError::Validation(format!("output: {}: {e}", p.display())))?),
        None => Box::new(io::stdout().lock()),
    })
}

/// One table of iteration records; `replicates` holds `(replicate, records)`
/// and adds a leading `replicate` column when `with_replicate` is set.
pub fn write_records(
    sink: &mut dyn Write,
    replicates: &[(usize, &[IterationRecord])],
    with_replicate: bool,
    timing: bool,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header: Vec<&str> = HEADER.to_vec();
    if with_replicate {
        header.insert(0, "replicate");
    }
    w.write_record(&header)?;
    for (r, records) in replicates {
        for rec in *records {
            let mut row = vec![
                rec.k.to_string(),
                (rec.tau + 1).to_string(),
                num(rec.increment),
                num(rec.lambda_eff),
                num(rec.sampled_residual_sq),
                opt(rec.relative_error),
                if timing { num(rec.wall_time) } else { String::new() },
            ];
            if with_replicate {
                row.insert(0, r.to_string());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn summary(relerr: Option<f64>, lambda_eff: Option<f64>) -> String {
    let show = |v: Option<f64>| v.map(num).unwrap_or_else(|| "NA".into());
    format!("final_relerr={}, final_lambda_eff={}", show(relerr), show(lambda_eff))
}
