//! Row partitions and block-sampling schedules.
//!
//! A [`SamplePlan`] splits the row index set `[0, m)` into `M` disjoint blocks
//! of equal length `ell`. A [`SampleSchedule`] then decides which block is
//! visited at iteration `k`. Block indices are zero-based throughout the
//! library; CSV output reports them one-based.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// `τ(k) = (k - 1) mod M`
    Cyclic,
    /// A fresh uniformly random permutation of the blocks every epoch.
    RandomCyclic,
    /// Independent uniform draws (sampling with replacement).
    RandomReplacement,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Cyclic => "cyclic",
            Strategy::RandomCyclic => "random_cyclic",
            Strategy::RandomReplacement => "random_replacement",
        }
    }

    /// Whether every epoch visits every block exactly once.
    pub fn is_epoch_complete(self) -> bool {
        !matches!(self, Strategy::RandomReplacement)
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cyclic" => Ok(Strategy::Cyclic),
            "random_cyclic" => Ok(Strategy::RandomCyclic),
            "random_replacement" => Ok(Strategy::RandomReplacement),
            other => Err(Error::InvalidArgument(format!(
                "unknown sampling strategy {other:?} (expected cyclic, random_cyclic or random_replacement)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlan {
    m: usize,
    ell: usize,
    blocks: Vec<Vec<usize>>,
}

impl SamplePlan {
    /// Contiguous partition: block `j` holds rows `[j*ell, (j+1)*ell)`.
    pub fn contiguous(m: usize, num_blocks: usize) -> Result<Self> {
        if num_blocks == 0 || m == 0 {
            return Err(Error::InvalidArgument("row and block counts must be positive".into()));
        }
        if m % num_blocks != 0 {
            return Err(Error::InvalidArgument(format!(
                "{num_blocks} blocks do not divide {m} rows evenly"
            )));
        }
        let ell = m / num_blocks;
        let blocks = (0..num_blocks)
            .map(|j| (j * ell..(j + 1) * ell).collect())
            .collect();
        Ok(Self { m, ell, blocks })
    }

    /// An explicit partition, validated to be an equal-size disjoint cover of `[0, m)`.
    pub fn from_blocks(m: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let ell = blocks
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidArgument("partition has no blocks".into()))?;
        if ell == 0 {
            return Err(Error::InvalidArgument("empty block".into()));
        }
        let mut seen = vec![false; m];
        for (j, b) in blocks.iter().enumerate() {
            if b.len() != ell {
                return Err(Error::InvalidArgument(format!(
                    "block {j} has {} rows, expected {ell}",
                    b.len()
                )));
            }
            for &r in b {
                if r >= m {
                    return Err(Error::InvalidArgument(format!("row {r} out of range [0, {m})")));
                }
                if std::mem::replace(&mut seen[r], true) {
                    return Err(Error::InvalidArgument(format!("row {r} appears in more than one block")));
                }
            }
        }
        if let Some(r) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!("row {r} is not covered by any block")));
        }
        Ok(Self { m, ell, blocks })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_len(&self) -> usize {
        self.ell
    }

    pub fn block(&self, j: usize) -> &[usize] {
        &self.blocks[j]
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn schedule(&self, strategy: Strategy, seed: u64) -> SampleSchedule {
        SampleSchedule::new(self.num_blocks(), strategy, seed)
    }
}

/// The block sequence `τ(1), τ(2), ...`, generated lazily from a seed.
#[derive(Clone, Debug)]
pub struct SampleSchedule {
    num_blocks: usize,
    strategy: Strategy,
    seed: u64,
    rng: StreamRng,
    drawn: Vec<usize>,
}

impl SampleSchedule {
    pub fn new(num_blocks: usize, strategy: Strategy, seed: u64) -> Self {
        assert!(num_blocks > 0, "schedule needs at least one block");
        Self {
            num_blocks,
            strategy,
            seed,
            rng: stream(seed),
            drawn: Vec::new(),
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    /// Zero-based block index visited at iteration `k >= 1`.
    pub fn next_block(&mut self, k: usize) -> usize {
        assert!(k >= 1, "iterations are counted from 1");
        let m = self.num_blocks;
        match self.strategy {
            Strategy::Cyclic => (k - 1) % m,
            Strategy::RandomReplacement => {
                while self.drawn.len() < k {
                    let j = self.rng.random_range(0..m);
                    self.drawn.push(j);
                }
                self.drawn[k - 1]
            }
            Strategy::RandomCyclic => {
                while self.drawn.len() < k {
                    let mut perm: Vec<usize> = (0..m).collect();
                    perm.shuffle(&mut self.rng);
                    self.drawn.extend(perm);
                }
                self.drawn[k - 1]
            }
        }
    }

    /// `τ(1..=horizon)` as an immutable, shareable sequence.
    pub fn materialize(&mut self, horizon: usize) -> Vec<usize> {
        (1..=horizon).map(|k| self.next_block(k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_two_partition() {
        let p = SamplePlan::contiguous(100, 10).unwrap();
        assert_eq!(p.block_len(), 10);
        for j in 0..10 {
            assert_eq!(p.block(j), &(j * 10..j * 10 + 10).collect::<Vec<_>>()[..]);
        }
    }

    #[test]
    fn singleton_blocks() {
        let p = SamplePlan::contiguous(4, 4).unwrap();
        assert_eq!(p.blocks(), &[vec![0], vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn indivisible_partition_rejected() {
        assert!(matches!(SamplePlan::contiguous(6, 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn explicit_partitions_are_validated() {
        assert!(SamplePlan::from_blocks(4, vec![vec![3, 0], vec![1, 2]]).is_ok());
        assert!(SamplePlan::from_blocks(4, vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(SamplePlan::from_blocks(4, vec![vec![0, 1], vec![2]]).is_err());
        assert!(SamplePlan::from_blocks(5, vec![vec![0, 1], vec![2, 3]]).is_err());
    }

    #[test]
    fn cyclic_is_modular() {
        let mut s = SampleSchedule::new(3, Strategy::Cyclic, 0);
        assert_eq!(s.materialize(6), vec![0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn random_cyclic_epochs_are_permutations() {
        let mut s = SampleSchedule::new(5, Strategy::RandomCyclic, 17);
        let tau = s.materialize(50);
        for epoch in tau.chunks(5) {
            let mut e = epoch.to_vec();
            e.sort_unstable();
            assert_eq!(e, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn same_seed_same_schedule() {
        for strategy in [Strategy::RandomCyclic, Strategy::RandomReplacement] {
            let a = SampleSchedule::new(7, strategy, 99).materialize(200);
            let b = SampleSchedule::new(7, strategy, 99).materialize(200);
            assert_eq!(a, b);
            let c = SampleSchedule::new(7, strategy, 100).materialize(200);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn random_replacement_frequencies() {
        // Multinomial oracle: each count ~ Binomial(N, 1/4).
        let n = 100_000;
        let mut s = SampleSchedule::new(4, Strategy::RandomReplacement, 5);
        let mut counts = [0usize; 4];
        for j in s.materialize(n) {
            counts[j] += 1;
        }
        let p = 0.25;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - p).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn row_inclusion_rate_is_one_over_m() {
        // Index form of E[W Wᵀ] = I/M: any fixed row is drawn with probability 1/M.
        let plan = SamplePlan::contiguous(12, 4).unwrap();
        let n = 100_000;
        let p = 1.0 / 4.0;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        for strategy in [Strategy::RandomCyclic, Strategy::RandomReplacement] {
            let tau = plan.schedule(strategy, 3).materialize(n);
            for row in [0, 5, 11] {
                let hits = tau.iter().filter(|&&j| plan.block(j).contains(&row)).count();
                assert!((hits as f64 / n as f64 - p).abs() < 3.0 * sd);
            }
        }
    }
}
