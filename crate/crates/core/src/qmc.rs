//! Randomized Richtmyer lattice points and log-domain estimate aggregation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Batch layout and randomization of a lattice rule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QmcPlan {
    pub dim: usize,
    pub batches: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl QmcPlan {
    pub fn new(dim: usize, batches: usize, batch_size: usize, seed: u64) -> Result<Self> {
        let plan = Self { dim, batches, batch_size, seed };
        plan.validate()?;
        Ok(plan)
    }

    /// 20 batches of 500 points.
    pub fn standard(dim: usize, seed: u64) -> Self {
        Self { dim, batches: 20, batch_size: 500, seed }
    }

    /// 10 batches of 100 points, the budget used after preconditioning.
    pub fn preconditioned(dim: usize, seed: u64) -> Self {
        Self { dim, batches: 10, batch_size: 100, seed }
    }

    /// Splits `total` samples into `batches` equal batches.
    pub fn with_total(dim: usize, total: usize, batches: usize, seed: u64) -> Result<Self> {
        if batches == 0 || total % batches != 0 {
            return Err(Error::Config(format!("{total} samples do not split into {batches} batches")));
        }
        Self::new(dim, batches, total / batches, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batches < 2 {
            return Err(Error::Config("at least two batches are needed for an error estimate".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        self.batches * self.batch_size
    }

    pub fn with_dim(&self, dim: usize) -> Self {
        Self { dim, ..self.clone() }
    }

    /// Fractional parts of `√p_j` for the first `dim` primes.
    pub fn generators(&self) -> Vec<f64> {
        primes(self.dim).into_iter().map(|p| (p as f64).sqrt().fract()).collect()
    }

    /// Uniform random shift of one batch.
    pub fn shift(&self, batch: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(batch as u64);
        (0..self.dim).map(|_| rng.random::<f64>()).collect()
    }

    /// Point `i` (1-based) of batch `batch`.
    pub fn point(&self, batch: usize, i: usize) -> Vec<f64> {
        let gens = self.generators();
        let shift = self.shift(batch);
        let mut w = vec![0.0; self.dim];
        lattice_point(&gens, &shift, i, &mut w);
        w
    }
}

/// `w_j = |2·frac(i·g_j + Δ_j) − 1|`.
#[inline]
pub fn lattice_point(gens: &[f64], shift: &[f64], i: usize, w: &mut [f64]) {
    let fi = i as f64;
    for ((wj, &g), &d) in w.iter_mut().zip(gens).zip(shift) {
        let x = (fi * g + d).fract();
        *wj = (2.0 * x - 1.0).abs();
    }
}

/// The first `k` primes.
pub fn primes(k: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(k);
    let mut c = 2u64;
    while out.len() < k {
        if out.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            out.push(c);
        }
        c += 1;
    }
    out
}

/// Streaming `log(Σ exp(x_i))`.
#[derive(Clone, Debug, Default)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
    count: usize,
}

impl LogSumExp {
    pub fn new() -> Self {
        Self { max: f64::NEG_INFINITY, sum: 0.0, count: 0 }
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `log` of the arithmetic mean of the pushed values' exponentials.
    pub fn log_mean(&self) -> f64 {
        if self.sum == 0.0 || self.count == 0 {
            return f64::NEG_INFINITY;
        }
        self.max + (self.sum / self.count as f64).ln()
    }
}

/// Log-domain probability estimate with a batch-based relative standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbEstimate {
    pub log_mean: f64,
    /// Standard error relative to the estimate; `NaN` when every sample was zero.
    pub rel_se: f64,
    pub batch_log_means: Vec<f64>,
}

impl ProbEstimate {
    pub fn prob(&self) -> f64 {
        self.log_mean.exp()
    }

    pub fn all_zero(&self) -> bool {
        self.log_mean == f64::NEG_INFINITY
    }
}

/// Combines per-batch log means. The standard deviation of the batch means is
/// the population form, divided by the number of batches.
pub fn aggregate(batch_log_means: &[f64]) -> Result<ProbEstimate> {
    let nb = batch_log_means.len();
    if nb < 2 {
        return Err(Error::Config("at least two batches are needed for an error estimate".into()));
    }
    let mut acc = LogSumExp::new();
    for &x in batch_log_means {
        acc.push(x);
    }
    let log_mean = acc.log_mean();
    let rel_se = if log_mean == f64::NEG_INFINITY {
        f64::NAN
    } else {
        let var = batch_log_means
            .iter()
            .map(|&x| {
                let r = (x - log_mean).exp() - 1.0;
                r * r
            })
            .sum::<f64>()
            / nb as f64;
        (var / nb as f64).sqrt()
    };
    Ok(ProbEstimate { log_mean, rel_se, batch_log_means: batch_log_means.to_vec() })
}
