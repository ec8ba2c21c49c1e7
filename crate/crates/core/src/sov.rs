//! Separation-of-variables integrands for normal and Student-t probabilities
//! over dense and TLR Cholesky factors, and the batch driver.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qmc::{aggregate, lattice_point, LogSumExp, ProbEstimate, QmcPlan};
use crate::special::{chi_quantile_unchecked, norm_cdf, norm_quantile_fast, t_cdf_unchecked, t_quantile_unchecked, P_CLAMP};
use crate::tlr::{TlrMatrix, TlrState};

/// Bound on the recursion variables.
pub const Y_CLAMP: f64 = 8.5;

const RENORM: f64 = 1e-250;

/// Lower-triangular matrix packed by rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedLower {
    n: usize,
    data: Vec<f64>,
}

impl PackedLower {
    pub fn from_dense(l: &DMatrix<f64>) -> Result<Self> {
        let n = l.nrows();
        if l.ncols() != n {
            return Err(Error::Shape("factor is not square".into()));
        }
        let mut data = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                data.push(l[(i, j)]);
            }
        }
        Self::checked(n, data)
    }

    /// Expands a TLR Cholesky factor without forming the full square matrix.
    pub fn from_tlr(t: &TlrMatrix) -> Result<Self> {
        if t.state() != TlrState::Cholesky {
            return Err(Error::Config("expected a Cholesky factor".into()));
        }
        let (n, m) = (t.n(), t.tile_size());
        let mut data = vec![0.0; n * (n + 1) / 2];
        for bi in 0..t.blocks() {
            let offs: Vec<DMatrix<f64>> = (0..bi).map(|bj| t.off(bi, bj).to_dense()).collect();
            for li in 0..m {
                let i = bi * m + li;
                let row = &mut data[i * (i + 1) / 2..i * (i + 1) / 2 + i + 1];
                for (bj, tile) in offs.iter().enumerate() {
                    for lj in 0..m {
                        row[bj * m + lj] = tile[(li, lj)];
                    }
                }
                for lj in 0..=li {
                    row[bi * m + lj] = t.diag(bi)[(li, lj)];
                }
            }
        }
        Self::checked(n, data)
    }

    fn checked(n: usize, data: Vec<f64>) -> Result<Self> {
        let p = Self { n, data };
        if let Some(i) = (0..n).find(|&i| !(p.row(i)[i] > 0.0)) {
            return Err(Error::SingularTriangle(i));
        }
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let s = i * (i + 1) / 2;
        &self.data[s..s + i + 1]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| if j <= i { self.row(i)[j] } else { 0.0 })
    }
}

#[inline]
fn clamp_p(u: f64) -> f64 {
    u.clamp(P_CLAMP, 1.0 - P_CLAMP)
}

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}

/// One normal conditioning step on whitened limits: returns the interval
/// mass and the recursion variable for uniform `w`.
#[inline]
fn normal_step(lo: f64, hi: f64, w: f64) -> (f64, f64) {
    if lo > 0.0 {
        // Mirror into the lower tail; same mapping from w, better precision.
        let d = norm_cdf(-hi);
        let e = norm_cdf(-lo);
        let width = e - d;
        let y = -norm_quantile_fast(clamp_p(e - w * width));
        (width, y.clamp(-Y_CLAMP, Y_CLAMP))
    } else {
        let d = norm_cdf(lo);
        let e = norm_cdf(hi);
        let width = e - d;
        let y = norm_quantile_fast(clamp_p(d + w * width));
        (width, y.clamp(-Y_CLAMP, Y_CLAMP))
    }
}

/// Running product kept away from underflow.
struct LogProduct {
    log: f64,
    prod: f64,
}

impl LogProduct {
    #[inline]
    fn new() -> Self {
        Self { log: 0.0, prod: 1.0 }
    }

    #[inline]
    fn mul(&mut self, x: f64) {
        self.prod *= x;
        if self.prod < RENORM {
            self.log += self.prod.ln();
            self.prod = 1.0;
        }
    }

    #[inline]
    fn ln(&self) -> f64 {
        self.log + self.prod.ln()
    }
}

/// Scaled normal recursion over rows of `l`; `scale` multiplies the limits.
#[inline]
fn mvn_core(l: &PackedLower, a: &[f64], b: &[f64], scale: f64, w: &[f64], y: &mut [f64]) -> f64 {
    let mut acc = LogProduct::new();
    for i in 0..l.n {
        let row = l.row(i);
        let s = dot(&row[..i], &y[..i]);
        let lii = row[i];
        let lo = (scale * a[i] - s) / lii;
        let hi = (scale * b[i] - s) / lii;
        let (width, yi) = normal_step(lo, hi, w[i]);
        if !(width > 0.0) {
            return f64::NEG_INFINITY;
        }
        acc.mul(width);
        y[i] = yi;
    }
    acc.ln()
}

/// Normal integrand at the unit-cube point `w`; fills the recursion
/// variables `y` and returns `log P`.
pub fn mvn_sample(l: &PackedLower, a: &[f64], b: &[f64], w: &[f64], y: &mut [f64]) -> f64 {
    mvn_core(l, a, b, 1.0, w, y)
}

/// Student-t integrand through the per-variable t recursion.
pub fn mvt_sov_sample(l: &PackedLower, a: &[f64], b: &[f64], nu: f64, w: &[f64], y: &mut [f64]) -> f64 {
    let mut acc = LogProduct::new();
    let mut ssq = 0.0;
    for i in 0..l.n {
        let row = l.row(i);
        let s = dot(&row[..i], &y[..i]);
        let dof = nu + i as f64;
        let scale = ((nu + ssq) / dof).sqrt();
        let den = row[i] * scale;
        let lo = (a[i] - s) / den;
        let hi = (b[i] - s) / den;
        let (width, t) = if lo > 0.0 {
            let d = t_cdf_unchecked(-hi, dof);
            let e = t_cdf_unchecked(-lo, dof);
            let width = e - d;
            (width, -t_quantile_unchecked(clamp_p(e - w[i] * width), dof))
        } else {
            let d = t_cdf_unchecked(lo, dof);
            let e = t_cdf_unchecked(hi, dof);
            let width = e - d;
            (width, t_quantile_unchecked(clamp_p(d + w[i] * width), dof))
        };
        if !(width > 0.0) {
            return f64::NEG_INFINITY;
        }
        acc.mul(width);
        y[i] = t * scale;
        ssq += y[i] * y[i];
    }
    acc.ln()
}

#[inline]
fn chi_scale(w0: f64, nu: f64) -> f64 {
    chi_quantile_unchecked(clamp_p(w0), nu) / nu.sqrt()
}

/// Student-t integrand as a chi scale mixture of normal integrands;
/// `w0` drives the scale and `w` the normal recursion.
pub fn mvt_scale_sample(
    l: &PackedLower,
    a: &[f64],
    b: &[f64],
    nu: f64,
    w0: f64,
    w: &[f64],
    y: &mut [f64],
) -> f64 {
    mvn_core(l, a, b, chi_scale(w0, nu), w, y)
}

/// Reusable per-sample state of the TLR integrand.
pub struct TlrSampler<'a> {
    factor: &'a TlrMatrix,
    diag: Vec<PackedLower>,
    a: Vec<f64>,
    b: Vec<f64>,
    delta: Vec<f64>,
    y: Vec<f64>,
}

impl<'a> TlrSampler<'a> {
    pub fn new(factor: &'a TlrMatrix) -> Result<Self> {
        if factor.state() != TlrState::Cholesky {
            return Err(Error::Config("TLR integrand requires a Cholesky factor".into()));
        }
        let diag = (0..factor.blocks())
            .map(|i| PackedLower::from_dense(factor.diag(i)))
            .collect::<Result<Vec<_>>>()?;
        let n = factor.n();
        Ok(Self {
            factor,
            diag,
            a: vec![0.0; n],
            b: vec![0.0; n],
            delta: vec![0.0; factor.tile_size()],
            y: vec![0.0; n],
        })
    }

    /// TLR normal integrand with limits multiplied by `scale`.
    pub fn sample_scaled(&mut self, a: &[f64], b: &[f64], scale: f64, w: &[f64]) -> f64 {
        let m = self.factor.tile_size();
        let r = self.factor.blocks();
        for ((sa, sb), (&x, &z)) in self.a.iter_mut().zip(self.b.iter_mut()).zip(a.iter().zip(b)) {
            *sa = scale * x;
            *sb = scale * z;
        }
        let mut total = 0.0;
        for i in 0..r {
            if i > 0 {
                let yprev = &self.y[(i - 1) * m..i * m];
                for j in i..r {
                    self.delta.iter_mut().for_each(|d| *d = 0.0);
                    self.factor.off(j, i - 1).sub_matvec(yprev, &mut self.delta);
                    let seg = j * m..(j + 1) * m;
                    for ((sa, sb), &d) in self.a[seg.clone()].iter_mut().zip(self.b[seg].iter_mut()).zip(&self.delta) {
                        *sa += d;
                        *sb += d;
                    }
                }
            }
            let seg = i * m..(i + 1) * m;
            let lp = mvn_core(&self.diag[i], &self.a[seg.clone()], &self.b[seg.clone()], 1.0, &w[seg.clone()], &mut self.y[seg]);
            if lp == f64::NEG_INFINITY {
                return lp;
            }
            total += lp;
        }
        total
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }
}

/// TLR normal integrand.
pub fn tlrmvn_sample(t: &TlrMatrix, a: &[f64], b: &[f64], w: &[f64]) -> Result<f64> {
    Ok(TlrSampler::new(t)?.sample_scaled(a, b, 1.0, w))
}

/// TLR Student-t integrand.
pub fn tlrmvt_sample(t: &TlrMatrix, a: &[f64], b: &[f64], nu: f64, w0: f64, w: &[f64]) -> Result<f64> {
    Ok(TlrSampler::new(t)?.sample_scaled(a, b, chi_scale(w0, nu), w))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Engine {
    #[serde(rename = "mvn")]
    Mvn,
    #[serde(rename = "mvt-sov")]
    MvtSov,
    #[serde(rename = "mvt-scale")]
    MvtScale,
    #[serde(rename = "tlrmvn")]
    TlrMvn,
    #[serde(rename = "tlrmvt")]
    TlrMvt,
}

impl Engine {
    pub const ALL: [Engine; 5] = [Engine::Mvn, Engine::MvtSov, Engine::MvtScale, Engine::TlrMvn, Engine::TlrMvt];

    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Mvn => "mvn",
            Engine::MvtSov => "mvt-sov",
            Engine::MvtScale => "mvt-scale",
            Engine::TlrMvn => "tlrmvn",
            Engine::TlrMvt => "tlrmvt",
        }
    }

    pub fn is_t(self) -> bool {
        matches!(self, Engine::MvtSov | Engine::MvtScale | Engine::TlrMvt)
    }

    pub fn is_tlr(self) -> bool {
        matches!(self, Engine::TlrMvn | Engine::TlrMvt)
    }

    /// Lattice dimension for an `n`-variate problem.
    pub fn qmc_dim(self, n: usize) -> usize {
        match self {
            Engine::MvtScale | Engine::TlrMvt => n + 1,
            _ => n,
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Engine::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown engine '{s}'")))
    }
}

/// Covariance factor handed to the integrators.
#[derive(Clone, Debug)]
pub enum Factor {
    Dense(PackedLower),
    Tlr(TlrMatrix),
}

impl Factor {
    pub fn n(&self) -> usize {
        match self {
            Factor::Dense(p) => p.n(),
            Factor::Tlr(t) => t.n(),
        }
    }
}

/// Limits, factor and optional degrees of freedom of one probability.
#[derive(Clone, Debug)]
pub struct IntegrationProblem {
    pub factor: Factor,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub nu: Option<f64>,
}

impl IntegrationProblem {
    pub fn new(factor: Factor, a: Vec<f64>, b: Vec<f64>, nu: Option<f64>) -> Result<Self> {
        let n = factor.n();
        if a.len() != n || b.len() != n {
            return Err(Error::Shape(format!("limits of length {}/{} for dimension {n}", a.len(), b.len())));
        }
        if let Some(i) = (0..n).find(|&i| !(a[i] < b[i])) {
            return Err(Error::Domain(format!("empty integration interval at index {i}")));
        }
        if let Some(nu) = nu {
            if !(nu > 0.0) {
                return Err(Error::Domain(format!("degrees of freedom must be positive, got {nu}")));
            }
        }
        Ok(Self { factor, a, b, nu })
    }

    pub fn n(&self) -> usize {
        self.factor.n()
    }
}

/// Runs `plan.batches × plan.batch_size` samples of the chosen engine and
/// aggregates them in the log domain. A TLR factor is expanded when a dense
/// engine is requested.
pub fn estimate(problem: &IntegrationProblem, plan: &QmcPlan, engine: Engine) -> Result<ProbEstimate> {
    plan.validate()?;
    let n = problem.n();
    if plan.dim != engine.qmc_dim(n) {
        return Err(Error::Shape(format!(
            "engine {engine} needs a {}-dimensional lattice, plan has {}",
            engine.qmc_dim(n),
            plan.dim
        )));
    }
    let nu = if engine.is_t() {
        Some(problem.nu.ok_or_else(|| Error::Config(format!("engine {engine} requires degrees of freedom")))?)
    } else {
        None
    };
    let (a, b) = (&problem.a, &problem.b);
    let gens = plan.generators();
    let mut w = vec![0.0; plan.dim];
    let mut y = vec![0.0; n];
    let mut batch_means = Vec::with_capacity(plan.batches);

    let expanded;
    let dense = match (&problem.factor, engine.is_tlr()) {
        (Factor::Dense(p), false) => Some(p),
        (Factor::Tlr(t), false) => {
            expanded = PackedLower::from_tlr(t)?;
            Some(&expanded)
        }
        (Factor::Tlr(_), true) => None,
        (Factor::Dense(_), true) => {
            return Err(Error::Config(format!("engine {engine} requires a TLR factor")));
        }
    };
    let mut sampler = match &problem.factor {
        Factor::Tlr(t) if engine.is_tlr() => Some(TlrSampler::new(t)?),
        _ => None,
    };

    for batch in 0..plan.batches {
        let shift = plan.shift(batch);
        let mut acc = LogSumExp::new();
        for i in 1..=plan.batch_size {
            lattice_point(&gens, &shift, i, &mut w);
            let lp = match engine {
                Engine::Mvn => mvn_sample(dense.unwrap(), a, b, &w, &mut y),
                Engine::MvtSov => mvt_sov_sample(dense.unwrap(), a, b, nu.unwrap(), &w, &mut y),
                Engine::MvtScale => mvt_scale_sample(dense.unwrap(), a, b, nu.unwrap(), w[0], &w[1..], &mut y),
                Engine::TlrMvn => sampler.as_mut().unwrap().sample_scaled(a, b, 1.0, &w),
                Engine::TlrMvt => {
                    let s = chi_scale(w[0], nu.unwrap());
                    sampler.as_mut().unwrap().sample_scaled(a, b, s, &w[1..])
                }
            };
            acc.push(lp);
        }
        batch_means.push(acc.log_mean());
    }
    aggregate(&batch_means)
}
