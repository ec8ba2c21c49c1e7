//! Configuration and command implementations behind the `tlrmvn` binary.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use tlrmvn::crs::CrsOptions;
use tlrmvn::experiment::{
    default_eps, default_tile_size, integrate, prepare, replicate_seed, LimitSpec, Method, PipelineOptions, Problem,
    ProblemSpec, Reorder,
};
use tlrmvn::geometry::{Permutation, PointSet};
use tlrmvn::qmc::QmcPlan;
use tlrmvn::skewnorm::{fit_mle, simulate, skewnorm_points, DensityOptions, ParamBox, SkewNormalModel, SkewNormalParams};
use tlrmvn::sov::{Engine, Factor};
use tlrmvn::tlr::TlrMatrix;

/// Settings of a single MVN/MVT computation, repeated over replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub beta: f64,
    pub sigma2: f64,
    pub nugget: f64,
    pub limits: LimitSpec,
    pub nu: Option<f64>,
    /// Tile size; `√n` rounded to a divisor when absent.
    pub m: Option<usize>,
    /// Truncation tolerance; 1e-4 for β ≥ 0.3, else 1e-3, when absent.
    pub eps: Option<f64>,
    pub engine: Engine,
    pub reorder: Reorder,
    pub within_block: bool,
    /// QMC batches and batch size; 20 × 500 without reordering, 10 × 100 with.
    pub batches: Option<usize>,
    pub batch_size: Option<usize>,
    pub replicates: u64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 1024,
            beta: 0.3,
            sigma2: 1.0,
            nugget: 0.0,
            limits: LimitSpec::BENCHMARK,
            nu: None,
            m: None,
            eps: None,
            engine: Engine::Mvn,
            reorder: Reorder::None,
            within_block: true,
            batches: None,
            batch_size: None,
            replicates: 1,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn method(&self) -> Method {
        Method::new(self.engine, self.reorder)
    }

    pub fn set_method(&mut self, m: Method) {
        self.engine = m.engine;
        self.reorder = m.reorder;
    }

    pub fn tile_size(&self) -> usize {
        self.m.unwrap_or_else(|| default_tile_size(self.n))
    }

    pub fn eps_abs(&self) -> f64 {
        self.eps.unwrap_or_else(|| default_eps(self.beta))
    }

    pub fn sampling(&self) -> (usize, usize) {
        let (b, s) = if self.reorder == Reorder::None { (20, 500) } else { (10, 100) };
        (self.batches.unwrap_or(b), self.batch_size.unwrap_or(s))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            bail!("n must be positive");
        }
        if !(self.beta > 0.0) || !(self.sigma2 > 0.0) || !(self.nugget >= 0.0) {
            bail!("kernel requires beta > 0, sigma2 > 0 and nugget >= 0");
        }
        if self.engine.is_t() {
            match self.nu {
                Some(nu) if nu > 0.0 => {}
                _ => bail!("engine {} requires degrees of freedom nu > 0", self.engine),
            }
        }
        let m = self.tile_size();
        let tiled = self.engine.is_tlr() || self.reorder != Reorder::None;
        if tiled && (m == 0 || self.n % m != 0) {
            bail!("tile size m = {m} must divide n = {}", self.n);
        }
        if !(self.eps_abs() > 0.0) {
            bail!("eps must be positive");
        }
        let (b, s) = self.sampling();
        if b < 2 || s == 0 {
            bail!("sampling needs at least 2 batches of positive size");
        }
        if self.replicates == 0 {
            bail!("replicates must be at least 1");
        }
        Ok(())
    }

    fn spec(&self) -> ProblemSpec {
        ProblemSpec {
            n: self.n,
            beta: self.beta,
            sigma2: self.sigma2,
            nugget: self.nugget,
            limits: self.limits,
            nu: self.nu,
        }
    }

    fn options(&self) -> PipelineOptions {
        PipelineOptions { m: self.tile_size(), eps: self.eps_abs(), within_block: self.within_block }
    }
}

/// One replicate of `compute`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComputeRow {
    pub replicate: u64,
    pub n: usize,
    pub m: usize,
    pub beta: f64,
    pub engine: String,
    pub reorder: String,
    #[serde(rename = "N")]
    pub samples: usize,
    pub log_mean: f64,
    pub rel_se: f64,
    pub prob: f64,
    pub t_assemble: f64,
    pub t_factorize: f64,
    pub t_integrate: f64,
    pub seed: u64,
}

/// Runs every replicate of `cfg`.
pub fn cmd_compute(cfg: &RunConfig) -> Result<Vec<ComputeRow>> {
    cfg.validate()?;
    (0..cfg.replicates).map(|r| compute_replicate(cfg, r)).collect()
}

/// Replicate `r` uses `replicate_seed(seed, r)` for both the problem and the
/// QMC shifts, so rows do not depend on the replicate count.
pub fn compute_replicate(cfg: &RunConfig, r: u64) -> Result<ComputeRow> {
    let (batches, batch_size) = cfg.sampling();
    let seed = replicate_seed(cfg.seed, r);
    let p = Problem::generate(&cfg.spec(), seed)?;
    let prep = prepare(&p, cfg.method(), &cfg.options())?;
    let o = integrate(&prep, cfg.engine, batches, batch_size, seed)?;
    Ok(ComputeRow {
        replicate: r,
        n: cfg.n,
        m: cfg.tile_size(),
        beta: cfg.beta,
        engine: cfg.engine.to_string(),
        reorder: cfg.reorder.to_string(),
        samples: o.samples,
        log_mean: o.estimate.log_mean,
        rel_se: o.estimate.rel_se,
        prob: o.estimate.prob(),
        t_assemble: o.timings.assemble,
        t_factorize: o.timings.factorize,
        t_integrate: o.timings.integrate,
        seed,
    })
}

/// Cartesian sweep description for `benchmark`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub ns: Vec<usize>,
    pub betas: Vec<f64>,
    /// Method names such as `mvn`, `tlrmvn`, `rtlrmvn`, `rrtlrmvt`.
    pub methods: Vec<String>,
    /// Shared settings; `n`, `beta`, `engine` and `reorder` are overridden per cell.
    pub base: RunConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            ns: vec![1024],
            betas: vec![0.3],
            methods: vec!["mvn".into(), "tlrmvn".into(), "rtlrmvn".into()],
            base: RunConfig { replicates: 20, ..RunConfig::default() },
        }
    }
}

/// One aggregated cell of `benchmark`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub beta: f64,
    pub method: String,
    #[serde(rename = "N")]
    pub samples: usize,
    pub replicates: u64,
    pub failures: u64,
    pub mean_rel_se: f64,
    pub mean_log_mean: f64,
    pub mean_t_factorize: f64,
    pub mean_t_integrate: f64,
    pub error: String,
}

pub fn cmd_benchmark(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let mut rows = vec![];
    for &n in &cfg.ns {
        for &beta in &cfg.betas {
            for name in &cfg.methods {
                let method: Method = name.parse().with_context(|| format!("method '{name}'"))?;
                let mut run = RunConfig { n, beta, ..cfg.base.clone() };
                run.m = cfg.base.m.filter(|m| n % m == 0);
                run.set_method(method);
                rows.push(bench_cell(&run, name));
            }
        }
    }
    Ok(rows)
}

fn bench_cell(run: &RunConfig, name: &str) -> BenchRow {
    let (b, s) = run.sampling();
    let mut row = BenchRow {
        n: run.n,
        beta: run.beta,
        method: name.to_string(),
        samples: b * s,
        replicates: run.replicates,
        failures: 0,
        mean_rel_se: f64::NAN,
        mean_log_mean: f64::NAN,
        mean_t_factorize: f64::NAN,
        mean_t_integrate: f64::NAN,
        error: String::new(),
    };
    if let Err(e) = run.validate() {
        row.failures = run.replicates;
        row.error = e.to_string();
        return row;
    }
    let mut ok = vec![];
    for r in 0..run.replicates {
        match compute_replicate(run, r) {
            Ok(row) => ok.push(row),
            Err(e) => {
                row.failures += 1;
                row.error = e.to_string();
            }
        }
    }
    if !ok.is_empty() {
        let k = ok.len() as f64;
        row.mean_rel_se = ok.iter().map(|x| x.rel_se).sum::<f64>() / k;
        row.mean_log_mean = ok.iter().map(|x| x.log_mean).sum::<f64>() / k;
        row.mean_t_factorize = ok.iter().map(|x| x.t_factorize).sum::<f64>() / k;
        row.mean_t_integrate = ok.iter().map(|x| x.t_integrate).sum::<f64>() / k;
    }
    row
}

/// Settings for `factor-stats`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorConfig {
    pub run: RunConfig,
    /// Writes the factor in the binary TLR format.
    pub factor_out: Option<PathBuf>,
    /// Writes the final variable order, one original index per line.
    pub perm_out: Option<PathBuf>,
    /// Writes the points in the final order.
    pub points_out: Option<PathBuf>,
    /// Writes the lower-triangular off-diagonal rank table.
    pub ranks_out: Option<PathBuf>,
}

impl Default for FactorConfig {
    fn default() -> Self {
        Self {
            run: RunConfig { engine: Engine::TlrMvn, ..RunConfig::default() },
            factor_out: None,
            perm_out: None,
            points_out: None,
            ranks_out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorStats {
    pub n: usize,
    pub m: usize,
    pub eps: f64,
    pub reorder: String,
    pub bytes_dense_equiv: u64,
    pub bytes_tlr: u64,
    pub total_off_rank: usize,
    pub max_off_rank: usize,
    pub dense_off_tiles: usize,
    pub t_assemble: f64,
    pub t_factorize: f64,
}

pub fn cmd_factor_stats(cfg: &FactorConfig) -> Result<FactorStats> {
    let run = RunConfig { engine: Engine::TlrMvn, ..cfg.run.clone() };
    run.validate()?;
    let p = Problem::generate(&run.spec(), replicate_seed(run.seed, 0))?;
    let prep = prepare(&p, run.method(), &run.options())?;
    let Factor::Tlr(f) = &prep.problem.factor else { bail!("expected a TLR factor") };
    let mem = f.memory_report();
    if let Some(path) = &cfg.factor_out {
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        f.write_to(&mut w)?;
        w.flush()?;
    }
    if let Some(path) = &cfg.perm_out {
        write_perm(path, &prep.perm)?;
    }
    if let Some(path) = &cfg.points_out {
        write_points(path, &p.points.permuted(&prep.perm))?;
    }
    if let Some(path) = &cfg.ranks_out {
        write_ranks(path, &mem.ranks)?;
    }
    Ok(FactorStats {
        n: run.n,
        m: run.tile_size(),
        eps: run.eps_abs(),
        reorder: run.reorder.to_string(),
        bytes_dense_equiv: mem.bytes_dense_equiv,
        bytes_tlr: mem.bytes_tlr,
        total_off_rank: mem.total_off_rank(),
        max_off_rank: mem.ranks.iter().flatten().copied().max().unwrap_or(0),
        dense_off_tiles: mem.dense_off_tiles,
        t_assemble: prep.timings.assemble,
        t_factorize: prep.timings.factorize,
    })
}

/// Reads a factor written by `factor-stats`.
pub fn read_factor(path: &Path) -> Result<TlrMatrix> {
    let mut r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    Ok(TlrMatrix::read_from(&mut r)?)
}

#[derive(Serialize, Deserialize)]
struct PointRow {
    x: f64,
    y: f64,
}

pub fn write_points(path: &Path, pts: &PointSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for p in pts.points() {
        w.serialize(PointRow { x: p[0], y: p[1] })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points(path: &Path) -> Result<PointSet> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let pts = r.deserialize::<PointRow>().map(|row| row.map(|p| [p.x, p.y])).collect::<Result<Vec<_>, _>>()?;
    Ok(PointSet::new(pts)?)
}

#[derive(Serialize)]
struct PermRow {
    position: usize,
    original: usize,
}

pub fn write_perm(path: &Path, perm: &Permutation) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for (position, &original) in perm.as_slice().iter().enumerate() {
        w.serialize(PermRow { position, original })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RankRow {
    row: usize,
    col: usize,
    rank: usize,
}

pub fn write_ranks(path: &Path, ranks: &[Vec<usize>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for (i, row) in ranks.iter().enumerate() {
        for (j, &rank) in row.iter().enumerate() {
            w.serialize(RankRow { row: i, col: j, rank })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Settings for the skew-normal commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkewConfig {
    pub n: usize,
    pub truth: SkewNormalParams,
    pub replicates: u64,
    pub seed: u64,
    /// Seed of the perturbed grid of locations.
    pub point_seed: u64,
    pub bounds: ParamBox,
    pub max_iter: usize,
    pub pop_size: Option<usize>,
    pub batches: usize,
    pub batch_size: usize,
    pub density: DensityOptions,
}

impl Default for SkewConfig {
    fn default() -> Self {
        Self {
            n: 64,
            truth: SkewNormalParams::new(0.0, 1.0, 0.3, 1.0, 0.3),
            replicates: 1,
            seed: 0,
            point_seed: 0,
            bounds: ParamBox::default(),
            max_iter: 1000,
            pop_size: None,
            batches: 20,
            batch_size: 500,
            density: DensityOptions::default(),
        }
    }
}

impl SkewConfig {
    pub fn points(&self) -> Result<PointSet> {
        Ok(skewnorm_points(self.n, self.point_seed)?)
    }
}

/// Simulated fields, one vector per replicate.
pub fn cmd_skewnorm_sim(cfg: &SkewConfig) -> Result<(PointSet, Vec<Vec<f64>>)> {
    let pts = cfg.points()?;
    let model = SkewNormalModel::new(cfg.truth, pts.clone())?;
    let sims = (0..cfg.replicates).map(|r| simulate(&model, replicate_seed(cfg.seed, r))).collect::<Result<Vec<_>, _>>()?;
    Ok((pts, sims))
}

/// Writes replicates as columns `r0, r1, ...`, one row per location.
pub fn write_columns(w: impl Write, cols: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record((0..cols.len()).map(|r| format!("r{r}")))?;
    let n = cols.first().map_or(0, |c| c.len());
    for i in 0..n {
        w.write_record(cols.iter().map(|c| c[i].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_columns(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let k = r.headers()?.len();
    let mut cols = vec![vec![]; k];
    for rec in r.records() {
        let rec = rec?;
        for (c, v) in rec.iter().enumerate() {
            cols[c].push(v.trim().parse::<f64>().with_context(|| format!("parsing '{v}'"))?);
        }
    }
    Ok(cols)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub replicate: u64,
    pub seed: u64,
    pub estimate: SkewNormalParams,
    pub log_f: f64,
    pub evaluations: usize,
    pub trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub config: SkewConfig,
    pub fits: Vec<FitRecord>,
}

/// Fits every column of `data`, or simulates and fits `replicates` fields
/// when no data is given.
pub fn cmd_skewnorm_fit(cfg: &SkewConfig, data: Option<(PointSet, Vec<Vec<f64>>)>) -> Result<FitReport> {
    let (pts, cols) = match data {
        Some(d) => d,
        None => cmd_skewnorm_sim(cfg)?,
    };
    let plan = QmcPlan::new(pts.len(), cfg.batches, cfg.batch_size, cfg.seed)?;
    let fits = cols
        .iter()
        .enumerate()
        .map(|(r, z)| {
            let seed = replicate_seed(cfg.seed, r as u64);
            let crs = CrsOptions { max_iter: cfg.max_iter, pop_size: cfg.pop_size, seed, ..CrsOptions::default() };
            let fit = fit_mle(z, &pts, &cfg.bounds, &plan, &crs, &cfg.density)?;
            Ok(FitRecord {
                replicate: r as u64,
                seed,
                estimate: fit.params,
                log_f: fit.log_f,
                evaluations: fit.evaluations,
                trace: fit.trace,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FitReport { config: cfg.clone(), fits })
}

/// Loads a JSON config file, or the default when `path` is `None`.
pub fn load_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening config {}", p.display()))?;
            serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

/// Writes serializable rows as CSV with a header.
pub fn write_csv<T: Serialize>(w: impl Write, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
