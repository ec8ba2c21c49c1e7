//! Benchmark problem generation and the assemble / factorize / integrate
//! pipeline shared by the CLI and the acceptance tests.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{assemble_dense, morton_order, unit_square_points, Kernel, Permutation, PointSet};
use crate::lowrank::dense_cholesky;
use crate::qmc::{ProbEstimate, QmcPlan};
use crate::reorder::{block_reorder, iterative_block_reorder_cholesky};
use crate::sov::{estimate, Engine, Factor, IntegrationProblem, PackedLower};
use crate::tlr::{assemble_tlr, tlr_cholesky, MemoryReport};

/// Integration limits: a common lower limit (or −∞) and independent normal
/// upper limits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitSpec {
    /// `None` means −∞.
    pub lower: Option<f64>,
    pub upper_mean: f64,
    pub upper_sd: f64,
}

impl LimitSpec {
    /// Upper limits from N(5.5, 1.25²).
    pub const BENCHMARK: LimitSpec = LimitSpec { lower: None, upper_mean: 5.5, upper_sd: 1.25 };
    /// Upper limits from N(4.0, 1.5²).
    pub const TAIL: LimitSpec = LimitSpec { lower: None, upper_mean: 4.0, upper_sd: 1.5 };

    pub fn generate(&self, n: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
        let dist = Normal::new(self.upper_mean, self.upper_sd)
            .map_err(|e| Error::Config(format!("upper-limit distribution: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let b: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let lo = self.lower.unwrap_or(f64::NEG_INFINITY);
        // A finite lower limit above a sampled upper limit would leave an empty box.
        let a = b.iter().map(|&bi| if lo < bi { lo } else { f64::NEG_INFINITY }).collect();
        Ok((a, b))
    }
}

impl Default for LimitSpec {
    fn default() -> Self {
        Self::BENCHMARK
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Reorder {
    #[default]
    None,
    Block,
    Iterative,
}

impl fmt::Display for Reorder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reorder::None => "none",
            Reorder::Block => "block",
            Reorder::Iterative => "iterative",
        })
    }
}

impl FromStr for Reorder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Reorder::None),
            "block" => Ok(Reorder::Block),
            "iterative" => Ok(Reorder::Iterative),
            _ => Err(Error::Config(format!("unknown reorder '{s}' (none, block, iterative)"))),
        }
    }
}

/// Engine plus preconditioner, with names such as `mvn`, `tlrmvn`, `rtlrmvn`,
/// `rrtlrmvn`, `mvt` and `tlrmvt`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Method {
    pub engine: Engine,
    pub reorder: Reorder,
}

impl Method {
    pub fn new(engine: Engine, reorder: Reorder) -> Self {
        Self { engine, reorder }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.reorder {
            Reorder::None => "",
            Reorder::Block => "r",
            Reorder::Iterative => "rr",
        };
        let base = match self.engine {
            Engine::MvtScale => "mvt",
            e => e.as_str(),
        };
        write!(f, "{prefix}{base}")
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (reorder, rest) = if let Some(r) = s.strip_prefix("rr") {
            (Reorder::Iterative, r)
        } else if let Some(r) = s.strip_prefix('r') {
            (Reorder::Block, r)
        } else {
            (Reorder::None, s)
        };
        let engine = match rest {
            "mvt" => Engine::MvtScale,
            other => other.parse()?,
        };
        Ok(Self { engine, reorder })
    }
}

/// Tile size closest to `√n` that divides `n`.
pub fn default_tile_size(n: usize) -> usize {
    let root = (n as f64).sqrt();
    (1..=n)
        .filter(|d| n % d == 0)
        .min_by(|&x, &y| ((x as f64) - root).abs().total_cmp(&((y as f64) - root).abs()))
        .unwrap_or(1)
}

/// Truncation tolerance: 1e-4 for strong correlation (β ≥ 0.3), else 1e-3.
pub fn default_eps(beta: f64) -> f64 {
    if beta >= 0.3 - 1e-12 {
        1e-4
    } else {
        1e-3
    }
}

/// Description of a benchmark problem on a perturbed unit-square grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub n: usize,
    pub beta: f64,
    #[serde(default = "one")]
    pub sigma2: f64,
    #[serde(default)]
    pub nugget: f64,
    #[serde(default)]
    pub limits: LimitSpec,
    #[serde(default)]
    pub nu: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl ProblemSpec {
    pub fn new(n: usize, beta: f64) -> Self {
        Self { n, beta, sigma2: 1.0, nugget: 0.0, limits: LimitSpec::BENCHMARK, nu: None }
    }
}

/// A generated problem: points in Morton order, kernel and limits.
#[derive(Clone, Debug)]
pub struct Problem {
    pub points: PointSet,
    pub kernel: Kernel,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub nu: Option<f64>,
}

impl Problem {
    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn generate(spec: &ProblemSpec, seed: u64) -> Result<Self> {
        if spec.n == 0 {
            return Err(Error::Config("problem dimension must be positive".into()));
        }
        let kernel = Kernel::exponential(spec.sigma2, spec.beta, spec.nugget)?;
        let raw = unit_square_points(spec.n, seed)?;
        let perm = morton_order(&raw, 1)?;
        let points = raw.permuted(&perm);
        let (a, b) = spec.limits.generate(spec.n, seed)?;
        Ok(Self { points, kernel, a, b, nu: spec.nu })
    }

    /// Diagonal-covariance variant used for exactness checks.
    pub fn with_points(points: PointSet, kernel: Kernel, a: Vec<f64>, b: Vec<f64>, nu: Option<f64>) -> Self {
        Self { points, kernel, a, b, nu }
    }
}

/// Wall-clock seconds per pipeline stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub assemble: f64,
    pub factorize: f64,
    pub integrate: f64,
}

/// A factorized problem ready for integration.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub problem: IntegrationProblem,
    pub perm: Permutation,
    pub timings: Timings,
    pub memory: Option<MemoryReport>,
}

/// Pipeline settings besides the method.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineOptions {
    pub m: usize,
    pub eps: f64,
    /// Univariate reordering inside blocks during reordering.
    pub within_block: bool,
}

impl PipelineOptions {
    pub fn defaults(n: usize, beta: f64) -> Self {
        Self { m: default_tile_size(n), eps: default_eps(beta), within_block: true }
    }
}

/// Assembles and factorizes the covariance as required by `method`.
pub fn prepare(p: &Problem, method: Method, opts: &PipelineOptions) -> Result<Prepared> {
    let n = p.n();
    if method.engine.is_t() && p.nu.is_none() {
        return Err(Error::Config(format!("method {method} requires degrees of freedom")));
    }
    let dense_engine = !method.engine.is_tlr();
    let needs_tlr = !dense_engine || method.reorder != Reorder::None;
    if needs_tlr && (opts.m == 0 || n % opts.m != 0) {
        return Err(Error::Shape(format!("tile size {} does not divide n = {n}", opts.m)));
    }
    let id = Permutation::identity(n);
    let mut timings = Timings::default();

    if !needs_tlr {
        let t0 = Instant::now();
        let cov = assemble_dense(&p.kernel, &p.points, &id)?;
        timings.assemble = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let l = PackedLower::from_dense(&dense_cholesky(&cov)?)?;
        timings.factorize = t1.elapsed().as_secs_f64();
        let problem = IntegrationProblem::new(Factor::Dense(l), p.a.clone(), p.b.clone(), p.nu)?;
        return Ok(Prepared { problem, perm: id, timings, memory: None });
    }

    let t0 = Instant::now();
    let sigma = assemble_tlr(&p.kernel, &p.points, &id, opts.m, opts.eps)?;
    timings.assemble = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let (factor, perm, a, b) = match method.reorder {
        Reorder::None => (tlr_cholesky(sigma, opts.eps)?, id, p.a.clone(), p.b.clone()),
        Reorder::Block => {
            let r = block_reorder(sigma, &p.a, &p.b, opts.within_block)?;
            if dense_engine {
                let cov = assemble_dense(&p.kernel, &p.points, &r.perm)?;
                let l = PackedLower::from_dense(&dense_cholesky(&cov)?)?;
                timings.factorize = t1.elapsed().as_secs_f64();
                let problem = IntegrationProblem::new(Factor::Dense(l), r.a, r.b, p.nu)?;
                return Ok(Prepared { problem, perm: r.perm, timings, memory: None });
            }
            (tlr_cholesky(r.matrix, opts.eps)?, r.perm, r.a, r.b)
        }
        Reorder::Iterative => {
            let r = iterative_block_reorder_cholesky(sigma, &p.a, &p.b, opts.eps, opts.within_block)?;
            (r.matrix, r.perm, r.a, r.b)
        }
    };
    let memory = Some(factor.memory_report());
    let factor = if dense_engine { Factor::Dense(PackedLower::from_tlr(&factor)?) } else { Factor::Tlr(factor) };
    timings.factorize = t1.elapsed().as_secs_f64();
    let problem = IntegrationProblem::new(factor, a, b, p.nu)?;
    Ok(Prepared { problem, perm, timings, memory })
}

/// Result of one pipeline run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub estimate: ProbEstimate,
    pub timings: Timings,
    pub memory: Option<MemoryReport>,
    pub samples: usize,
}

/// Integrates a prepared problem.
pub fn integrate(prep: &Prepared, engine: Engine, batches: usize, batch_size: usize, seed: u64) -> Result<RunOutcome> {
    let plan = QmcPlan::new(engine.qmc_dim(prep.problem.n()), batches, batch_size, seed)?;
    let t = Instant::now();
    let est = estimate(&prep.problem, &plan, engine)?;
    let mut timings = prep.timings;
    timings.integrate = t.elapsed().as_secs_f64();
    Ok(RunOutcome { estimate: est, timings, memory: prep.memory.clone(), samples: plan.samples() })
}

/// Prepares and integrates in one call.
pub fn run(
    p: &Problem,
    method: Method,
    opts: &PipelineOptions,
    batches: usize,
    batch_size: usize,
    seed: u64,
) -> Result<RunOutcome> {
    let prep = prepare(p, method, opts)?;
    integrate(&prep, method.engine, batches, batch_size, seed)
}

/// SplitMix64 mixing of a master seed with a replicate index.
pub fn replicate_seed(master: u64, r: u64) -> u64 {
    let mut z = master ^ r.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for name in ["mvn", "mvt", "mvt-sov", "tlrmvn", "rtlrmvn", "rrtlrmvn", "tlrmvt", "rtlrmvt", "rrtlrmvt", "rrmvn"] {
            let m: Method = name.parse().unwrap();
            assert_eq!(m.to_string(), name);
        }
        assert!("foo".parse::<Method>().is_err());
        assert_eq!("rtlrmvn".parse::<Method>().unwrap(), Method::new(Engine::TlrMvn, Reorder::Block));
    }

    #[test]
    fn tile_size_defaults() {
        assert_eq!(default_tile_size(1024), 32);
        assert_eq!(default_tile_size(16), 4);
        assert_eq!(default_tile_size(4096), 64);
        assert_eq!(default_tile_size(7), 1);
        assert_eq!(default_eps(0.3), 1e-4);
        assert_eq!(default_eps(0.1), 1e-3);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ProblemSpec::new(64, 0.3);
        let p = Problem::generate(&spec, 9).unwrap();
        let q = Problem::generate(&spec, 9).unwrap();
        assert_eq!(p.points, q.points);
        assert_eq!(p.b, q.b);
        assert!(p.a.iter().all(|x| *x == f64::NEG_INFINITY));
        assert_ne!(replicate_seed(1, 0), replicate_seed(1, 1));
    }

    #[test]
    fn pipelines_agree_on_small_problem() {
        let spec = ProblemSpec { nu: Some(10.0), ..ProblemSpec::new(64, 0.3) };
        let p = Problem::generate(&spec, 4).unwrap();
        let opts = PipelineOptions::defaults(64, 0.3);
        let base = run(&p, "mvn".parse().unwrap(), &opts, 10, 200, 1).unwrap().estimate;
        for name in ["tlrmvn", "rtlrmvn", "rrtlrmvn", "rmvn", "rrmvn"] {
            let e = run(&p, name.parse().unwrap(), &opts, 10, 200, 1).unwrap().estimate;
            let se = (base.rel_se.powi(2) + e.rel_se.powi(2)).sqrt();
            assert!((e.log_mean - base.log_mean).abs() <= 4.0 * se + 1e-3, "{name}");
        }
        let t = run(&p, "mvt".parse().unwrap(), &opts, 10, 200, 1).unwrap().estimate;
        let tt = run(&p, "rrtlrmvt".parse().unwrap(), &opts, 10, 200, 1).unwrap().estimate;
        let se = (t.rel_se.powi(2) + tt.rel_se.powi(2)).sqrt();
        assert!((t.log_mean - tt.log_mean).abs() <= 4.0 * se + 1e-3);
        let no_nu = Problem { nu: None, ..p };
        assert!(prepare(&no_nu, "mvt".parse().unwrap(), &opts).is_err());
    }
}
