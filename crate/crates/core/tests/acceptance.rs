//! End-to-end acceptance checks. Each test writes one PASS/FAIL line to
//! stderr (uncaptured) before asserting.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::DMatrix;

use tlrmvn::crs::CrsOptions;
use tlrmvn::experiment::{integrate, prepare, replicate_seed, LimitSpec, Method, PipelineOptions, Problem, ProblemSpec};
use tlrmvn::geometry::{assemble_dense, Permutation, PointSet};
use tlrmvn::qmc::QmcPlan;
use tlrmvn::skewnorm::{
    fit_mle, log_density, sample_skewness, simulate_many, skewnorm_points, DensityOptions, ParamBox, SkewNormalModel,
    SkewNormalParams,
};
use tlrmvn::sov::{estimate, Engine, Factor, IntegrationProblem, PackedLower};
use tlrmvn::special::{log_norm_cdf, norm_cdf};
use tlrmvn::tlr::{assemble_tlr, tlr_cholesky, TlrMatrix};

const MASTER: u64 = 20_240_601;

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {id:>2} {verdict} {name}: {detail}");
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

fn method(s: &str) -> Method {
    s.parse().unwrap()
}

/// Per-replicate relative errors and log-means with total integration time.
struct MethodRun {
    rel: Vec<f64>,
    log: Vec<f64>,
    seconds: f64,
    samples: usize,
}

fn run_method(spec: &ProblemSpec, m: &str, reps: u64, batches: usize, batch_size: usize) -> MethodRun {
    let mut out = MethodRun { rel: vec![], log: vec![], seconds: 0.0, samples: 0 };
    for r in 0..reps {
        let seed = replicate_seed(MASTER, r);
        let p = Problem::generate(spec, seed).unwrap();
        let prep = prepare(&p, method(m), &PipelineOptions::defaults(spec.n, spec.beta)).unwrap();
        let o = integrate(&prep, method(m).engine, batches, batch_size, seed).unwrap();
        out.rel.push(o.estimate.rel_se);
        out.log.push(o.estimate.log_mean);
        out.seconds += o.timings.integrate;
        out.samples += o.samples;
    }
    out
}

#[test]
fn criterion_01_bivariate_orthant() {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for rho in [0.1, 0.5, 0.9] {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let l = PackedLower::from_dense(&cov.cholesky().unwrap().l()).unwrap();
        let prob = IntegrationProblem::new(Factor::Dense(l), vec![f64::NEG_INFINITY; 2], vec![0.0; 2], None).unwrap();
        let est = estimate(&prob, &QmcPlan::standard(2, 1), Engine::Mvn).unwrap();
        let exact = 0.25 + f64::asin(rho) / (2.0 * std::f64::consts::PI);
        worst = worst.max((est.prob() - exact).abs() / exact);
    }
    let secs = t.elapsed().as_secs_f64();
    report(1, "orthant", worst <= 5e-3 && secs < 1.0, format!("max rel. error {worst:.2e} (<= 5e-3), {secs:.2}s"));
}

#[test]
fn criterion_02_independence_exact() {
    let t = Instant::now();
    let n = 4096;
    let m = 64;
    let sd: Vec<f64> = (0..n).map(|i| 0.5 + (i % 7) as f64 * 0.25).collect();
    let a: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { f64::NEG_INFINITY } else { -2.0 - (i % 5) as f64 * 0.3 }).collect();
    let b: Vec<f64> = (0..n).map(|i| 1.5 + (i % 11) as f64 * 0.4).collect();
    let big = DMatrix::from_fn(n, n, |i, j| if i == j { sd[i] * sd[i] } else { 0.0 });
    let sigma = TlrMatrix::from_dense(&big, m, 1e-8).unwrap();
    drop(big);
    let factor = tlr_cholesky(sigma, 1e-8).unwrap();
    let prob = IntegrationProblem::new(Factor::Tlr(factor), a.clone(), b.clone(), None).unwrap();
    let est = estimate(&prob, &QmcPlan::new(n, 10, 100, 3).unwrap(), Engine::TlrMvn).unwrap();
    let exact: f64 = (0..n)
        .map(|i| {
            let (lo, hi) = (a[i] / sd[i], b[i] / sd[i]);
            if lo == f64::NEG_INFINITY {
                log_norm_cdf(hi)
            } else {
                (norm_cdf(hi) - norm_cdf(lo)).ln()
            }
        })
        .sum();
    let rel = (est.log_mean - exact).exp() - 1.0;
    let secs = t.elapsed().as_secs_f64();
    report(
        2,
        "independence",
        rel.abs() <= 1e-12 && est.rel_se == 0.0 && secs < 5.0,
        format!("n={n}, |P/exact - 1| = {:.1e}, rel_se = {}, {secs:.2}s", rel.abs(), est.rel_se),
    );
}

#[test]
fn criterion_03_small_dimension_errors() {
    let t = Instant::now();
    // Reference errors printed as 0.0% are read as < 0.05%.
    let reference = [(16usize, 0.05e-2, 0.05e-2), (64, 0.05e-2, 0.05e-2), (256, 0.1e-2, 0.2e-2)];
    let mut pass = true;
    let mut detail = vec![];
    for (n, p_mvn, p_mvt) in reference {
        let mut spec = ProblemSpec::new(n, 0.3);
        spec.nu = Some(10.0);
        let mvn = run_method(&spec, "mvn", 20, 20, 500);
        let scale = run_method(&spec, "mvt", 20, 20, 500);
        let sov = run_method(&spec, "mvt-sov", 20, 20, 500);
        let (e_mvn, e_mvt) = (mean(&mvn.rel), mean(&scale.rel));
        let ratio = (sov.seconds / sov.samples as f64) / (scale.seconds / scale.samples as f64);
        let ok = e_mvn <= 2.0 * p_mvn && e_mvt <= 2.0 * p_mvt && ratio >= 3.0;
        pass &= ok;
        detail.push(format!("n={n}: mvn {:.3}% mvt {:.3}% sov/scale time x{ratio:.1}", 100.0 * e_mvn, 100.0 * e_mvt));
    }
    let secs = t.elapsed().as_secs_f64();
    report(3, "small-dimension errors", pass && secs <= 300.0, format!("{}; {secs:.0}s", detail.join("; ")));
}

struct MidStudy {
    mvn: MethodRun,
    tlrmvn: MethodRun,
    rtlrmvn: MethodRun,
    rrtlrmvn: MethodRun,
    seconds: f64,
}

fn mid_study() -> &'static MidStudy {
    static CELL: OnceLock<MidStudy> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let spec = ProblemSpec::new(1024, 0.3);
        let mvn = run_method(&spec, "mvn", 20, 20, 500);
        let tlrmvn = run_method(&spec, "tlrmvn", 20, 20, 500);
        let rtlrmvn = run_method(&spec, "rtlrmvn", 20, 10, 100);
        let rrtlrmvn = run_method(&spec, "rrtlrmvn", 20, 10, 100);
        MidStudy { mvn, tlrmvn, rtlrmvn, rrtlrmvn, seconds: t.elapsed().as_secs_f64() }
    })
}

#[test]
fn criterion_04_moderate_dimension_errors() {
    let s = mid_study();
    let e = [mean(&s.mvn.rel), mean(&s.tlrmvn.rel), mean(&s.rtlrmvn.rel), mean(&s.rrtlrmvn.rel)];
    let reference = [0.5e-2, 0.5e-2, 0.4e-2, 0.4e-2];
    let within = e.iter().zip(&reference).all(|(x, p)| *x <= 2.0 * p);
    let unprec = e[0].min(e[1]);
    let precond = e[2] <= 1.5 * unprec && e[3] <= 1.5 * unprec;
    report(
        4,
        "moderate-dimension errors",
        within && precond && s.seconds <= 900.0,
        format!(
            "mvn {:.3}% tlrmvn {:.3}% rtlrmvn {:.3}% rrtlrmvn {:.3}%; study {:.0}s",
            100.0 * e[0],
            100.0 * e[1],
            100.0 * e[2],
            100.0 * e[3],
            s.seconds
        ),
    );
}

#[test]
fn criterion_05_dense_tlr_agreement() {
    let s = mid_study();
    let agree = (0..20)
        .filter(|&r| {
            let se = (s.mvn.rel[r].powi(2) + s.tlrmvn.rel[r].powi(2)).sqrt();
            (s.mvn.log[r] - s.tlrmvn.log[r]).abs() <= 3.0 * se
        })
        .count();
    report(5, "dense/TLR agreement", agree >= 18, format!("{agree}/20 replicates within 3 combined SE"));
}

#[test]
fn criterion_06_tlr_cholesky_residual() {
    let t = Instant::now();
    let p = Problem::generate(&ProblemSpec::new(1024, 0.3), replicate_seed(MASTER, 0)).unwrap();
    let id = Permutation::identity(1024);
    let eps = 1e-4;
    let l = tlr_cholesky(assemble_tlr(&p.kernel, &p.points, &id, 32, eps).unwrap(), eps).unwrap().to_dense();
    let sigma = assemble_dense(&p.kernel, &p.points, &id).unwrap();
    let resid = (&l * l.transpose() - sigma).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let secs = t.elapsed().as_secs_f64();
    report(6, "TLR Cholesky residual", resid <= 100.0 * eps && secs < 30.0, format!("max |LLt - S| = {resid:.2e}, {secs:.1}s"));
}

#[test]
fn criterion_07_memory_under_reordering() {
    let t = Instant::now();
    let n = 4096;
    let p = Problem::generate(&ProblemSpec::new(n, 0.3), replicate_seed(MASTER, 0)).unwrap();
    let opts = PipelineOptions::defaults(n, 0.3);
    let bytes = |m: &str| prepare(&p, method(m), &opts).unwrap().memory.unwrap().bytes_tlr;
    let (geo, blk, itr) = (bytes("tlrmvn"), bytes("rtlrmvn"), bytes("rrtlrmvn"));
    let secs = t.elapsed().as_secs_f64();
    report(
        7,
        "memory under reordering",
        (blk as f64) <= 1.1 * geo as f64 && secs < 120.0,
        format!("Morton {geo} B, block {blk} B, iterative {itr} B, {secs:.0}s"),
    );
}

#[test]
fn criterion_08_complexity_slopes() {
    let t = Instant::now();
    let ns = [1024usize, 4096, 16384];
    let tlr_samples = [2000usize, 1000, 400];
    let dense_samples = [1000usize, 200, 20];
    let (mut t_tlr, mut t_dense) = (vec![], vec![]);
    for (k, &n) in ns.iter().enumerate() {
        let p = Problem::generate(&ProblemSpec::new(n, 0.3), replicate_seed(MASTER, 0)).unwrap();
        let prep = prepare(&p, method("tlrmvn"), &PipelineOptions::defaults(n, 0.3)).unwrap();
        let plan = QmcPlan::new(n, 2, tlr_samples[k] / 2, 1).unwrap();
        let s = Instant::now();
        estimate(&prep.problem, &plan, Engine::TlrMvn).unwrap();
        t_tlr.push(s.elapsed().as_secs_f64() / tlr_samples[k] as f64);

        let Factor::Tlr(f) = &prep.problem.factor else { unreachable!() };
        let dense = IntegrationProblem::new(
            Factor::Dense(PackedLower::from_tlr(f).unwrap()),
            prep.problem.a.clone(),
            prep.problem.b.clone(),
            None,
        )
        .unwrap();
        drop(prep);
        let plan = QmcPlan::new(n, 2, dense_samples[k] / 2, 1).unwrap();
        let s = Instant::now();
        estimate(&dense, &plan, Engine::Mvn).unwrap();
        t_dense.push(s.elapsed().as_secs_f64() / dense_samples[k] as f64);
    }
    let x: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let (st, sd) = (slope(&x, &t_tlr), slope(&x, &t_dense));
    let secs = t.elapsed().as_secs_f64();
    report(
        8,
        "complexity slopes",
        st <= 1.6 && sd >= 1.8 && secs <= 1200.0,
        format!(
            "tlrmvn slope {st:.2} (per-sample {:.2e}/{:.2e}/{:.2e}s), dense slope {sd:.2} ({:.2e}/{:.2e}/{:.2e}s), {secs:.0}s",
            t_tlr[0], t_tlr[1], t_tlr[2], t_dense[0], t_dense[1], t_dense[2]
        ),
    );
}

#[test]
fn criterion_09_log_probability_robustness() {
    let t = Instant::now();
    let n = 4096;
    let mut spec = ProblemSpec::new(n, 0.3);
    spec.limits = LimitSpec::TAIL;
    let p = Problem::generate(&spec, replicate_seed(MASTER, 0)).unwrap();
    let mut pass = true;
    let mut detail = vec![];
    for m in ["tlrmvn", "rrtlrmvn"] {
        let prep = prepare(&p, method(m), &PipelineOptions::defaults(n, 0.3)).unwrap();
        let runs: Vec<_> = (0..10).map(|r| integrate(&prep, method(m).engine, 20, 500, 1000 + r).unwrap()).collect();
        let logs: Vec<f64> = runs.iter().map(|o| o.estimate.log_mean).collect();
        let spread = sd(&logs) / mean(&logs).abs();
        let max_rel = runs.iter().map(|o| o.estimate.rel_se).fold(0.0, f64::max);
        pass &= spread <= 0.05;
        detail.push(format!("{m}: log P {:.2}, spread {:.2}%, max prob. rel. error {:.1}%", mean(&logs), 100.0 * spread, 100.0 * max_rel));
    }
    let secs = t.elapsed().as_secs_f64();
    report(9, "log-probability robustness", pass && secs <= 600.0, format!("{}; {secs:.0}s", detail.join("; ")));
}

#[test]
fn criterion_10_skew_normal_identities() {
    let t = Instant::now();
    let one = PointSet::new(vec![[0.0, 0.0]]).unwrap();
    let m1 = SkewNormalModel::new(SkewNormalParams::new(0.0, 1.0, 0.3, 1.0, 0.3), one).unwrap();
    let d = log_density(&m1, &[0.0], &QmcPlan::standard(1, 1), &DensityOptions::default()).unwrap();
    let closed = (1.0 / (4.0 * std::f64::consts::PI).sqrt()).ln();
    let e1 = (d.log_f - closed).abs();

    let n = 64;
    let sims = 100_000;
    let model = SkewNormalModel::new(SkewNormalParams::new(0.0, 1.0, 0.3, 1.0, 0.3), skewnorm_points(n, 1).unwrap()).unwrap();
    let draws = simulate_many(&model, sims, 7).unwrap();
    let bsum: Vec<f64> = model.matrix_b().unwrap().row_iter().map(|r| r.sum()).collect();
    let target: Vec<f64> = bsum.iter().map(|s| (2.0 / std::f64::consts::PI).sqrt() * s).collect();
    let mut within = 0;
    for i in 0..n {
        let col: Vec<f64> = draws.iter().map(|z| z[i]).collect();
        let se = sd(&col) / (sims as f64).sqrt();
        if (mean(&col) - target[i]).abs() <= 3.0 * se {
            within += 1;
        }
    }
    let avg: Vec<f64> = draws.iter().map(|z| mean(z)).collect();
    let avg_dev = (mean(&avg) - mean(&target)).abs() / (sd(&avg) / (sims as f64).sqrt());
    let skews: Vec<f64> = draws.iter().map(|z| sample_skewness(z)).collect();
    let skew = mean(&skews);
    let secs = t.elapsed().as_secs_f64();
    report(
        10,
        "skew-normal identities",
        e1 <= 1e-10 && avg_dev <= 3.0 && within as f64 >= 0.95 * n as f64 && skew < 0.0 && secs < 120.0,
        format!(
            "n=1 error {e1:.1e}; mean identity: {within}/{n} locations within 3 SE, pooled deviation {avg_dev:.2} SE; mean sample skewness {skew:.3}; {secs:.0}s"
        ),
    );
}

#[test]
#[ignore = "slow: maximum likelihood fit at n = 256"]
fn criterion_11_mle_smoke() {
    let t = Instant::now();
    let n = 256;
    let pts = skewnorm_points(n, 11).unwrap();
    let truth = SkewNormalParams::new(0.0, 1.0, 0.3, 1.0, 0.3);
    let z = simulate_many(&SkewNormalModel::new(truth, pts.clone()).unwrap(), 1, 12).unwrap().remove(0);
    let crs = CrsOptions { max_iter: 300, seed: 13, ..Default::default() };
    let fit = fit_mle(&z, &pts, &ParamBox::default(), &QmcPlan::standard(n, 14), &crs, &DensityOptions::default()).unwrap();
    let p = fit.params;
    let ok = p.xi.abs() <= 0.5
        && (0.5..1.5).contains(&p.sigma1)
        && p.beta1 > 0.1
        && p.beta1 < 0.6
        && p.sigma2 > 0.4
        && p.sigma2 < 1.6
        && p.beta2 > 0.1
        && p.beta2 < 0.5;
    let secs = t.elapsed().as_secs_f64();
    report(
        11,
        "MLE smoke",
        ok && secs <= 3600.0,
        format!(
            "xi {:.3} s1 {:.3} b1 {:.3} s2 {:.3} b2 {:.3}, log f {:.2}, {} evaluations, {secs:.0}s",
            p.xi, p.sigma1, p.beta1, p.sigma2, p.beta2, fit.log_f, fit.evaluations
        ),
    );
}
