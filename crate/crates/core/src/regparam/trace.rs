use rand::Rng;

use crate::error::Result;

/// A vector of independent ±1 entries with equal probability.
pub fn rademacher<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEstimate {
    pub mean: f64,
    /// Sample variance of the per-probe quadratic forms (0 for a single probe).
    pub variance: f64,
    pub probes: usize,
}

/// Hutchinson estimate `mean_i vᵢᵀ M vᵢ` of `tr(M)`, where `apply` computes `M v`.
pub fn hutchinson_trace(
    apply: impl Fn(&[f64]) -> Result<Vec<f64>>,
    probes: &[Vec<f64>],
) -> Result<TraceEstimate> {
    let mut samples = Vec::with_capacity(probes.len());
    for v in probes {
        let mv = apply(v)?;
        samples.push(v.iter().zip(&mv).map(|(a, b)| a * b).sum::<f64>());
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let variance = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(TraceEstimate {
        mean,
        variance,
        probes: samples.len(),
    })
}

/// `tr(M)` from `dim` applications to the unit vectors.
pub fn exact_trace(apply: impl Fn(&[f64]) -> Result<Vec<f64>>, dim: usize) -> Result<f64> {
    let mut e = vec![0.0; dim];
    let mut t = 0.0;
    for j in 0..dim {
        e[j] = 1.0;
        t += apply(&e)?[j];
        e[j] = 0.0;
    }
    Ok(t)
}
