//! Skew-normal stochastic generator `z = ξ1 + A X + B|Y|`: simulation,
//! exact log-density through the MVN engines, and maximum likelihood fitting.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::crs::{crs_optimize, CrsOptions, CrsResult};
use crate::error::{Error, Result};
use crate::experiment::default_tile_size;
use crate::geometry::{assemble_dense, make_grid, morton_order, Kernel, Permutation, PointSet};
use crate::lowrank::{dense_cholesky, solve_lower_in_place, solve_upper_transpose_in_place};
use crate::qmc::QmcPlan;
use crate::reorder::{iterative_block_reorder_cholesky, univariate_reorder};
use crate::sov::{estimate, Engine, Factor, IntegrationProblem, PackedLower};
use crate::tlr::{assemble_tlr, tlr_cholesky, TlrMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// The five model parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewNormalParams {
    pub xi: f64,
    pub sigma1: f64,
    pub beta1: f64,
    pub sigma2: f64,
    pub beta2: f64,
}

impl SkewNormalParams {
    pub fn new(xi: f64, sigma1: f64, beta1: f64, sigma2: f64, beta2: f64) -> Self {
        Self { xi, sigma1, beta1, sigma2, beta2 }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.xi, self.sigma1, self.beta1, self.sigma2, self.beta2]
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        match x {
            [xi, s1, b1, s2, b2] => Ok(Self::new(*xi, *s1, *b1, *s2, *b2)),
            _ => Err(Error::Shape(format!("expected 5 parameters, got {}", x.len()))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.xi.is_finite()
            && self.sigma1 > 0.0
            && self.beta1 > 0.0
            && self.sigma2 >= 0.0
            && self.beta2 > 0.0
            && self.to_array().iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid skew-normal parameters {self:?}")))
        }
    }
}

/// Parameters on a fixed set of locations.
#[derive(Clone, Debug)]
pub struct SkewNormalModel {
    pub params: SkewNormalParams,
    pub pts: PointSet,
}

/// Perturbed grid with spacing 1/15 and jitter 0.8/15, in Morton order.
pub fn skewnorm_points(n: usize, seed: u64) -> Result<PointSet> {
    if n == 0 {
        return Err(Error::Config("number of locations must be positive".into()));
    }
    let side = (n as f64).sqrt().ceil() as usize;
    let side = if side * side < n { side + 1 } else { side };
    let raw = make_grid(side, 1.0 / 15.0, 0.8 / 15.0, seed)?.truncated(n);
    let perm = morton_order(&raw, 1)?;
    Ok(raw.permuted(&perm))
}

impl SkewNormalModel {
    pub fn new(params: SkewNormalParams, pts: PointSet) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, pts })
    }

    pub fn n(&self) -> usize {
        self.pts.len()
    }

    fn kernel_a(&self) -> Result<Kernel> {
        Kernel::exponential(self.params.sigma1 * self.params.sigma1, self.params.beta1, 0.0)
    }

    /// The matrix `B`, an exponential covariance (zero when σ₂ = 0).
    pub fn matrix_b(&self) -> Result<DMatrix<f64>> {
        let n = self.n();
        if self.params.sigma2 == 0.0 {
            return Ok(DMatrix::zeros(n, n));
        }
        let k = Kernel::exponential(self.params.sigma2 * self.params.sigma2, self.params.beta2, 0.0)?;
        assemble_dense(&k, &self.pts, &Permutation::identity(n))
    }

    /// The matrix `A`, lower Cholesky factor of an exponential covariance.
    pub fn matrix_a(&self) -> Result<DMatrix<f64>> {
        let k = self.kernel_a()?;
        dense_cholesky(&assemble_dense(&k, &self.pts, &Permutation::identity(self.n()))?)
    }
}

/// Draws one realization.
pub fn simulate(model: &SkewNormalModel, seed: u64) -> Result<Vec<f64>> {
    let a = model.matrix_a()?;
    let b = model.matrix_b()?;
    let mut sim = Simulator { a, b, xi: model.params.xi };
    Ok(sim.draw(&mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Draws `count` realizations from one stream, reusing the factorizations.
pub fn simulate_many(model: &SkewNormalModel, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut sim = Simulator { a: model.matrix_a()?, b: model.matrix_b()?, xi: model.params.xi };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| sim.draw(&mut rng)).collect())
}

struct Simulator {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    xi: f64,
}

impl Simulator {
    fn draw(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = self.a.nrows();
        let x = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut *rng));
        let y = DVector::from_fn(n, |_, _| {
            let v: f64 = StandardNormal.sample(&mut *rng);
            v.abs()
        });
        let z = &self.a * x + &self.b * y;
        z.iter().map(|v| v + self.xi).collect()
    }
}

/// Sample skewness `m₃ / m₂^{3/2}` of the entries of `z`.
pub fn sample_skewness(z: &[f64]) -> f64 {
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let (m2, m3) = z.iter().fold((0.0, 0.0), |(s2, s3), v| {
        let d = v - mean;
        (s2 + d * d, s3 + d * d * d)
    });
    (m3 / n) / (m2 / n).powf(1.5)
}

/// Numerical settings for the log-density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityOptions {
    /// Largest dimension handled with dense factors; above it TLR is used.
    pub dense_limit: usize,
    /// Truncation tolerance of the TLR path.
    pub eps: f64,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self { dense_limit: 1024, eps: 1e-4 }
    }
}

/// Log-density value and the relative standard error of its MVN term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogDensity {
    pub log_f: f64,
    pub rel_se: f64,
    /// The Gaussian part `log φ_n(z − ξ1; AAᵀ + BBᵀ)`.
    pub log_gauss: f64,
    /// The MVN probability part `log Φ_n`.
    pub log_cdf: f64,
}

enum FactorA {
    Dense(DMatrix<f64>),
    Tlr(TlrMatrix),
}

impl FactorA {
    fn solve(&self, b: &mut DMatrix<f64>) -> Result<()> {
        match self {
            FactorA::Dense(l) => solve_lower_in_place(l, b),
            FactorA::Tlr(t) => t.forward_solve(b),
        }
    }

    fn log_det(&self) -> f64 {
        match self {
            FactorA::Dense(l) => l.diagonal().iter().map(|d| d.ln()).sum(),
            FactorA::Tlr(t) => (0..t.blocks()).map(|i| t.diag(i).diagonal().iter().map(|d| d.ln()).sum::<f64>()).sum(),
        }
    }
}

/// Exact log-density of `z`; the MVN term is estimated with `plan`
/// (its dimension is reset to `n`).
pub fn log_density(model: &SkewNormalModel, z: &[f64], plan: &QmcPlan, opts: &DensityOptions) -> Result<LogDensity> {
    let n = model.n();
    if z.len() != n {
        return Err(Error::Shape(format!("data has length {} but the model has {n} locations", z.len())));
    }
    model.params.validate()?;
    let large = n > opts.dense_limit;
    let kernel = model.kernel_a()?;
    let id = Permutation::identity(n);
    let fa = if large {
        let m = default_tile_size(n);
        FactorA::Tlr(tlr_cholesky(assemble_tlr(&kernel, &model.pts, &id, m, opts.eps)?, opts.eps)?)
    } else {
        FactorA::Dense(dense_cholesky(&assemble_dense(&kernel, &model.pts, &id)?)?)
    };

    let mut r = DMatrix::from_iterator(n, 1, z.iter().map(|v| v - model.params.xi));
    fa.solve(&mut r)?;
    let rr = r.norm_squared();
    let log_det_a = fa.log_det();
    let base = -0.5 * n as f64 * LN_2PI - log_det_a;

    if model.params.sigma2 == 0.0 {
        // B = 0: the MVN term is exactly 2⁻ⁿ and cancels the 2ⁿ prefactor.
        let log_gauss = base - 0.5 * rr;
        return Ok(LogDensity {
            log_f: log_gauss,
            rel_se: 0.0,
            log_gauss,
            log_cdf: -(n as f64) * std::f64::consts::LN_2,
        });
    }

    let mut c = model.matrix_b()?;
    fa.solve(&mut c)?;
    let mut k = c.tr_mul(&c);
    for i in 0..n {
        k[(i, i)] += 1.0;
    }
    let lk = dense_cholesky(&k)?;
    let log_det_k: f64 = 2.0 * lk.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let s = c.tr_mul(&r);
    let mut mu = s.clone();
    solve_lower_in_place(&lk, &mut mu)?;
    solve_upper_transpose_in_place(&lk, &mut mu)?;
    let q = rr - s.dot(&mu);
    let log_gauss = base - 0.5 * log_det_k - 0.5 * q;

    // M = K⁻¹ = L⁻ᵀ L⁻¹.
    let mut linv = DMatrix::identity(n, n);
    solve_lower_in_place(&lk, &mut linv)?;
    let mcov = linv.tr_mul(&linv);
    let lower = vec![f64::NEG_INFINITY; n];
    let upper: Vec<f64> = mu.iter().copied().collect();

    let plan = plan.with_dim(n);
    let est = if large {
        let m = default_tile_size(n);
        let sigma = TlrMatrix::from_dense(&mcov, m, opts.eps)?;
        let res = iterative_block_reorder_cholesky(sigma, &lower, &upper, opts.eps, true)?;
        let prob = IntegrationProblem::new(Factor::Tlr(res.matrix), res.a, res.b, None)?;
        estimate(&prob, &plan, Engine::TlrMvn)?
    } else {
        let ur = univariate_reorder(&mcov, &lower, &upper)?;
        let prob = IntegrationProblem::new(Factor::Dense(PackedLower::from_dense(&ur.chol)?), ur.a, ur.b, None)?;
        estimate(&prob, &plan, Engine::Mvn)?
    };
    let log_cdf = est.log_mean;
    Ok(LogDensity {
        log_f: n as f64 * std::f64::consts::LN_2 + log_gauss + log_cdf,
        rel_se: est.rel_se,
        log_gauss,
        log_cdf,
    })
}

/// Search box for `(ξ, σ₁, β₁, σ₂, β₂)` and the initial point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lo: [f64; 5],
    pub hi: [f64; 5],
    pub init: [f64; 5],
}

impl Default for ParamBox {
    fn default() -> Self {
        let lo = [-1.0, 0.1, 0.01, 0.0, 0.01];
        Self { lo, hi: [1.0, 2.0, 0.9, 1.0, 0.3], init: lo }
    }
}

impl ParamBox {
    pub fn validate(&self) -> Result<()> {
        for i in 0..5 {
            if !(self.lo[i] < self.hi[i]) {
                return Err(Error::Config(format!("parameter {i}: lower bound {} not below upper bound {}", self.lo[i], self.hi[i])));
            }
            if !(self.init[i] >= self.lo[i] && self.init[i] <= self.hi[i]) {
                return Err(Error::Config(format!("parameter {i}: initial value {} outside the box", self.init[i])));
            }
        }
        if self.lo[1] <= 0.0 || self.lo[2] <= 0.0 || self.lo[3] < 0.0 || self.lo[4] <= 0.0 {
            return Err(Error::Config("scale and range bounds must keep the kernels valid".into()));
        }
        Ok(())
    }
}

/// Result of a maximum likelihood fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: SkewNormalParams,
    pub log_f: f64,
    /// Best log-likelihood after each iteration, starting with the initial population.
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

/// Maximizes the log-density over `bx`. Every evaluation uses the same QMC
/// plan, so the objective is a deterministic function of the parameters.
pub fn fit_mle(
    z: &[f64],
    pts: &PointSet,
    bx: &ParamBox,
    plan: &QmcPlan,
    crs: &CrsOptions,
    dens: &DensityOptions,
) -> Result<FitResult> {
    bx.validate()?;
    if z.len() != pts.len() {
        return Err(Error::Shape(format!("data has length {} but there are {} locations", z.len(), pts.len())));
    }
    let plan = plan.with_dim(pts.len());
    let objective = |x: &[f64]| -> f64 {
        let Ok(params) = SkewNormalParams::from_slice(x) else { return f64::NEG_INFINITY };
        let model = SkewNormalModel { params, pts: pts.clone() };
        match log_density(&model, z, &plan, dens) {
            Ok(d) if d.log_f.is_finite() => d.log_f,
            _ => f64::NEG_INFINITY,
        }
    };
    let CrsResult { x, f, trace, evaluations } = crs_optimize(objective, &bx.lo, &bx.hi, &bx.init, crs)?;
    Ok(FitResult { params: SkewNormalParams::from_slice(&x)?, log_f: f, trace, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_model(n: usize, s2: f64) -> SkewNormalModel {
        SkewNormalModel::new(SkewNormalParams::new(0.0, 1.0, 0.3, s2, 0.3), skewnorm_points(n, 5).unwrap()).unwrap()
    }

    // At n = 1, A = σ₁ and B = σ₂²: density 2 φ(z; a² + b²) Φ(b z / (a sqrt(a² + b²))).
    fn closed_form_n1(z: f64, s1: f64, s2: f64) -> f64 {
        let b = s2 * s2;
        let v = s1 * s1 + b * b;
        std::f64::consts::LN_2 - 0.5 * (LN_2PI + v.ln()) - z * z / (2.0 * v)
            + crate::special::log_norm_cdf(b * z / (s1 * v.sqrt()))
    }

    #[test]
    fn univariate_closed_form() {
        let pts = PointSet::new(vec![[0.0, 0.0]]).unwrap();
        let plan = QmcPlan::new(1, 4, 10, 1).unwrap();
        let m = SkewNormalModel::new(SkewNormalParams::new(0.0, 1.0, 0.3, 1.0, 0.3), pts.clone()).unwrap();
        let d = log_density(&m, &[0.0], &plan, &DensityOptions::default()).unwrap();
        assert!((d.log_f - (1.0 / (4.0 * std::f64::consts::PI).sqrt()).ln()).abs() < 1e-12);
        for (z, s1, s2) in [(0.7, 1.0, 1.0), (-1.3, 0.5, 2.0), (2.5, 1.7, 0.3)] {
            let m = SkewNormalModel::new(SkewNormalParams::new(0.2, s1, 0.3, s2, 0.3), pts.clone()).unwrap();
            let d = log_density(&m, &[z + 0.2], &plan, &DensityOptions::default()).unwrap();
            assert!((d.log_f - closed_form_n1(z, s1, s2)).abs() < 1e-10, "{z} {s1} {s2}");
        }
    }

    #[test]
    fn gaussian_limit() {
        let m = unit_model(16, 0.0);
        let z = simulate(&m, 3).unwrap();
        let d = log_density(&m, &z, &QmcPlan::standard(16, 1), &DensityOptions::default()).unwrap();
        let cov = assemble_dense(&m.kernel_a().unwrap(), &m.pts, &Permutation::identity(16)).unwrap();
        let l = dense_cholesky(&cov).unwrap();
        let mut r = DMatrix::from_column_slice(16, 1, &z);
        solve_lower_in_place(&l, &mut r).unwrap();
        let expect = -8.0 * LN_2PI - l.diagonal().iter().map(|v| v.ln()).sum::<f64>() - 0.5 * r.norm_squared();
        assert!((d.log_f - expect).abs() < 1e-10);
        assert_eq!(d.rel_se, 0.0);
    }

    #[test]
    fn small_sigma2_approaches_gaussian() {
        let g = unit_model(16, 0.0);
        let z = simulate(&g, 9).unwrap();
        let plan = QmcPlan::standard(16, 1);
        let d0 = log_density(&g, &z, &plan, &DensityOptions::default()).unwrap();
        let e = unit_model(16, 1e-4);
        let d1 = log_density(&e, &z, &plan, &DensityOptions::default()).unwrap();
        assert!((d0.log_f - d1.log_f).abs() < 1e-2, "{} {}", d0.log_f, d1.log_f);
    }

    #[test]
    fn gaussian_part_matches_dense_formula() {
        let m = unit_model(25, 0.8);
        let z = simulate(&m, 11).unwrap();
        let d = log_density(&m, &z, &QmcPlan::standard(25, 1), &DensityOptions::default()).unwrap();
        let a = m.matrix_a().unwrap();
        let b = m.matrix_b().unwrap();
        let sigma = &a * a.transpose() + &b * b.transpose();
        let l = dense_cholesky(&sigma).unwrap();
        let mut r = DMatrix::from_column_slice(25, 1, &z);
        solve_lower_in_place(&l, &mut r).unwrap();
        let expect = -12.5 * LN_2PI - l.diagonal().iter().map(|v| v.ln()).sum::<f64>() - 0.5 * r.norm_squared();
        assert!((d.log_gauss - expect).abs() < 1e-8);
    }

    #[test]
    fn tlr_path_agrees_with_dense() {
        let m = unit_model(64, 1.0);
        let z = simulate(&m, 2).unwrap();
        let plan = QmcPlan::standard(64, 4);
        let dense = log_density(&m, &z, &plan, &DensityOptions::default()).unwrap();
        let tlr = log_density(&m, &z, &plan, &DensityOptions { dense_limit: 16, eps: 1e-8 }).unwrap();
        let se = (dense.rel_se.powi(2) + tlr.rel_se.powi(2)).sqrt();
        assert!((dense.log_f - tlr.log_f).abs() < 3.0 * se + 1e-6, "{dense:?} {tlr:?}");
    }

    #[test]
    fn simulation_is_seeded() {
        let m = unit_model(9, 1.0);
        assert_eq!(simulate(&m, 4).unwrap(), simulate(&m, 4).unwrap());
        assert_ne!(simulate(&m, 4).unwrap(), simulate(&m, 5).unwrap());
    }

    #[test]
    fn skewness_of_known_sample() {
        assert!(sample_skewness(&[0.0, 0.0, 0.0, 1.0]) > 1.0);
        assert!(sample_skewness(&[1.0, 2.0, 3.0]).abs() < 1e-12);
    }

    #[test]
    fn param_box_checks() {
        ParamBox::default().validate().unwrap();
        let mut b = ParamBox::default();
        b.init[0] = 5.0;
        assert!(b.validate().is_err());
        assert!(SkewNormalParams::from_slice(&[1.0]).is_err());
    }
}
