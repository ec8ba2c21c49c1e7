use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tlrmvn::experiment::{LimitSpec, Method, Reorder};
use tlrmvn::skewnorm::SkewNormalParams;
use tlrmvn::sov::Engine;
use tlrmvn_cli::*;

#[derive(Parser)]
#[command(name = "tlrmvn", version, about = "MVN and MVT probabilities with tile-low-rank quasi-Monte Carlo")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate one problem configuration over replicates (CSV or JSON rows).
    Compute(ComputeArgs),
    /// Sweep n × β × method and report mean errors and times (CSV).
    Benchmark(BenchArgs),
    /// Simulate skew-normal fields (CSV, one column per replicate).
    SkewnormSim(SkewArgs),
    /// Fit the skew-normal model by maximum likelihood (JSON report).
    SkewnormFit(FitArgs),
    /// Factorize one problem and report tile ranks and memory (JSON).
    FactorStats(FactorArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Limits {
    Benchmark,
    Tail,
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the effective config as JSON.
    #[arg(long)]
    save_config: Option<PathBuf>,
    /// Output file (default: stdout).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ProblemArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    nugget: Option<f64>,
    /// Upper-limit distribution preset.
    #[arg(long, value_enum)]
    limits: Option<Limits>,
    /// Common finite lower limit (default −∞).
    #[arg(long)]
    lower: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    /// Tile size.
    #[arg(long)]
    m: Option<usize>,
    /// Truncation tolerance.
    #[arg(long)]
    eps: Option<f64>,
    /// Method shorthand such as `rrtlrmvn`; sets engine and reorder.
    #[arg(long)]
    method: Option<String>,
    /// One of mvn, mvt-sov, mvt-scale, tlrmvn, tlrmvt.
    #[arg(long)]
    engine: Option<String>,
    /// One of none, block, iterative.
    #[arg(long)]
    reorder: Option<String>,
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    replicates: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ProblemArgs {
    fn apply(&self, c: &mut RunConfig) -> Result<()> {
        set(&mut c.n, self.n);
        set(&mut c.beta, self.beta);
        set(&mut c.nugget, self.nugget);
        if let Some(l) = self.limits {
            let lower = c.limits.lower;
            c.limits = match l {
                Limits::Benchmark => LimitSpec::BENCHMARK,
                Limits::Tail => LimitSpec::TAIL,
            };
            c.limits.lower = lower;
        }
        if self.lower.is_some() {
            c.limits.lower = self.lower;
        }
        if self.nu.is_some() {
            c.nu = self.nu;
        }
        if self.m.is_some() {
            c.m = self.m;
        }
        if self.eps.is_some() {
            c.eps = self.eps;
        }
        if let Some(m) = &self.method {
            c.set_method(m.parse::<Method>()?);
        }
        if let Some(e) = &self.engine {
            c.engine = e.parse::<Engine>()?;
        }
        if let Some(r) = &self.reorder {
            c.reorder = r.parse::<Reorder>()?;
        }
        if self.batches.is_some() {
            c.batches = self.batches;
        }
        if self.batch_size.is_some() {
            c.batch_size = self.batch_size;
        }
        set(&mut c.replicates, self.replicates);
        set(&mut c.seed, self.seed);
        Ok(())
    }
}

#[derive(Args)]
struct ComputeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated dimensions.
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<usize>>,
    /// Comma-separated kernel ranges.
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[command(flatten)]
    problem: ProblemArgs,
}

#[derive(Args)]
struct SkewArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    replicates: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    point_seed: Option<u64>,
    /// True parameters `ξ,σ₁,β₁,σ₂,β₂`.
    #[arg(long, value_delimiter = ',', num_args = 5)]
    truth: Option<Vec<f64>>,
    /// Also write the locations as CSV.
    #[arg(long)]
    points_out: Option<PathBuf>,
}

impl SkewArgs {
    fn apply(&self, c: &mut SkewConfig) -> Result<()> {
        set(&mut c.n, self.n);
        set(&mut c.replicates, self.replicates);
        set(&mut c.seed, self.seed);
        set(&mut c.point_seed, self.point_seed);
        if let Some(t) = &self.truth {
            c.truth = SkewNormalParams::from_slice(t)?;
        }
        Ok(())
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    sim: SkewArgs,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    pop_size: Option<usize>,
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Data CSV with one column per field; requires --points.
    #[arg(long, requires = "points")]
    data: Option<PathBuf>,
    /// Locations CSV with columns x,y.
    #[arg(long)]
    points: Option<PathBuf>,
}

#[derive(Args)]
struct FactorArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    factor_out: Option<PathBuf>,
    #[arg(long)]
    perm_out: Option<PathBuf>,
    #[arg(long)]
    points_out: Option<PathBuf>,
    #[arg(long)]
    ranks_out: Option<PathBuf>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn save<T: Serialize>(path: Option<&Path>, cfg: &T) -> Result<()> {
    if let Some(p) = path {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        serde_json::to_writer_pretty(f, cfg)?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: Option<&Path>, v: &T) -> Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, v)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Compute(a) => {
            let mut cfg: RunConfig = load_config(a.common.config.as_deref())?;
            a.problem.apply(&mut cfg)?;
            cfg.validate()?;
            save(a.common.save_config.as_deref(), &cfg)?;
            let rows = cmd_compute(&cfg)?;
            match a.format {
                Format::Csv => write_csv(output(a.common.output.as_deref())?, &rows)?,
                Format::Json => write_json(a.common.output.as_deref(), &rows)?,
            }
        }
        Command::Benchmark(a) => {
            let mut cfg: BenchConfig = load_config(a.common.config.as_deref())?;
            a.problem.apply(&mut cfg.base)?;
            set(&mut cfg.ns, a.ns);
            set(&mut cfg.betas, a.betas);
            set(&mut cfg.methods, a.methods);
            save(a.common.save_config.as_deref(), &cfg)?;
            let rows = cmd_benchmark(&cfg)?;
            write_csv(output(a.common.output.as_deref())?, &rows)?;
        }
        Command::SkewnormSim(a) => {
            let mut cfg: SkewConfig = load_config(a.common.config.as_deref())?;
            a.apply(&mut cfg)?;
            save(a.common.save_config.as_deref(), &cfg)?;
            let (pts, sims) = cmd_skewnorm_sim(&cfg)?;
            if let Some(p) = &a.points_out {
                write_points(p, &pts)?;
            }
            write_columns(output(a.common.output.as_deref())?, &sims)?;
        }
        Command::SkewnormFit(a) => {
            let mut cfg: SkewConfig = load_config(a.sim.common.config.as_deref())?;
            a.sim.apply(&mut cfg)?;
            set(&mut cfg.max_iter, a.max_iter);
            if a.pop_size.is_some() {
                cfg.pop_size = a.pop_size;
            }
            set(&mut cfg.batches, a.batches);
            set(&mut cfg.batch_size, a.batch_size);
            let data = match (&a.data, &a.points) {
                (Some(d), Some(p)) => {
                    let pts = read_points(p)?;
                    cfg.n = pts.len();
                    Some((pts, read_columns(d)?))
                }
                _ => None,
            };
            save(a.sim.common.save_config.as_deref(), &cfg)?;
            let report = cmd_skewnorm_fit(&cfg, data)?;
            write_json(a.sim.common.output.as_deref(), &report)?;
        }
        Command::FactorStats(a) => {
            let mut cfg: FactorConfig = load_config(a.common.config.as_deref())?;
            a.problem.apply(&mut cfg.run)?;
            set(&mut cfg.factor_out, a.factor_out.map(Some));
            set(&mut cfg.perm_out, a.perm_out.map(Some));
            set(&mut cfg.points_out, a.points_out.map(Some));
            set(&mut cfg.ranks_out, a.ranks_out.map(Some));
            save(a.common.save_config.as_deref(), &cfg)?;
            let stats = cmd_factor_stats(&cfg)?;
            write_json(a.common.output.as_deref(), &stats)?;
        }
    }
    Ok(())
}
