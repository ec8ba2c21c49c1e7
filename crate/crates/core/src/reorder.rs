//! Integration-oriented preconditioners: greedy univariate reordering within
//! a block, block reordering by estimated block probability, and block
//! reordering interleaved with the TLR Cholesky factorization.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::Permutation;
use crate::lowrank::{dense_cholesky, DenseTile};
use crate::special::{log_prob_interval, trunc_norm_mean_or_fallback};
use crate::tlr::{TlrMatrix, TlrState};

/// Sequential one-dimensional conditioning estimate of a block probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning {
    /// Log of the estimated block probability.
    pub log_p: f64,
    /// Truncated means of the whitened recursion variables.
    pub mu: Vec<f64>,
}

impl Conditioning {
    pub fn p(&self) -> f64 {
        self.log_p.exp()
    }
}

/// Conditioning estimate from a lower Cholesky factor.
pub fn conditioning_from_factor(l: &DenseTile, a: &[f64], b: &[f64]) -> Conditioning {
    let m = l.nrows();
    let mut mu = vec![0.0; m];
    let mut log_p = 0.0;
    for i in 0..m {
        let s: f64 = (0..i).map(|j| l[(i, j)] * mu[j]).sum();
        let lo = (a[i] - s) / l[(i, i)];
        let hi = (b[i] - s) / l[(i, i)];
        log_p += log_prob_interval(lo, hi);
        mu[i] = trunc_norm_mean_or_fallback(lo, hi);
    }
    Conditioning { log_p, mu }
}

/// Cholesky of an SPD block followed by sequential conditioning.
pub fn univariate_conditioning(block: &DenseTile, a: &[f64], b: &[f64]) -> Result<Conditioning> {
    check_limits(block.nrows(), a, b)?;
    let l = dense_cholesky(block)?;
    Ok(conditioning_from_factor(&l, a, b))
}

fn check_limits(m: usize, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != m || b.len() != m {
        return Err(Error::Shape(format!("limits of length {}/{} for a block of size {m}", a.len(), b.len())));
    }
    Ok(())
}

/// Outcome of greedy univariate reordering of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockReorder {
    /// `perm[new] = old` within the block.
    pub perm: Vec<usize>,
    /// Reordered covariance block.
    pub cov: DenseTile,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Cholesky factor of the reordered block.
    pub chol: DenseTile,
    /// Whitened truncated means in the new order.
    pub mu: Vec<f64>,
    pub log_p: f64,
}

/// Greedy reordering: each step conditions on the means chosen so far and
/// takes the remaining variable with the smallest conditional probability.
/// Ties go to the lowest original index.
pub fn univariate_reorder(block: &DenseTile, a: &[f64], b: &[f64]) -> Result<BlockReorder> {
    let m = block.nrows();
    check_limits(m, a, b)?;
    let mut cov = block.clone();
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut l = DMatrix::<f64>::zeros(m, m);
    let mut mu = vec![0.0; m];
    // Running Σ_j L[k,j]² and Σ_j L[k,j] μ_j for the remaining variables.
    let mut sq = vec![0.0; m];
    let mut shift = vec![0.0; m];
    let mut log_p = 0.0;
    for i in 0..m {
        let mut best: Option<(f64, usize, usize)> = None;
        for k in i..m {
            let var = cov[(k, k)] - sq[k];
            if !(var > 0.0) {
                return Err(Error::NotPositiveDefinite { pivot: k });
            }
            let sd = var.sqrt();
            let lp = log_prob_interval((a[k] - shift[k]) / sd, (b[k] - shift[k]) / sd);
            let better = match best {
                None => true,
                Some((blp, borig, _)) => lp < blp || (lp == blp && perm[k] < borig),
            };
            if better {
                best = Some((lp, perm[k], k));
            }
        }
        let (lp, _, k) = best.expect("at least one candidate");
        if k != i {
            cov.swap_rows(i, k);
            cov.swap_columns(i, k);
            l.swap_rows(i, k);
            a.swap(i, k);
            b.swap(i, k);
            perm.swap(i, k);
            sq.swap(i, k);
            shift.swap(i, k);
        }
        let lii = (cov[(i, i)] - sq[i]).sqrt();
        l[(i, i)] = lii;
        for r in i + 1..m {
            let mut s = cov[(r, i)];
            for j in 0..i {
                s -= l[(r, j)] * l[(i, j)];
            }
            l[(r, i)] = s / lii;
        }
        let lo = (a[i] - shift[i]) / lii;
        let hi = (b[i] - shift[i]) / lii;
        mu[i] = trunc_norm_mean_or_fallback(lo, hi);
        log_p += lp;
        for r in i + 1..m {
            sq[r] += l[(r, i)] * l[(r, i)];
            shift[r] += l[(r, i)] * mu[i];
        }
    }
    Ok(BlockReorder { perm, cov, a, b, chol: l, mu, log_p })
}

/// A reordered problem: the covariance (or its factor) and limits expressed
/// in the new variable order, with `perm[new] = old`.
#[derive(Clone, Debug)]
pub struct ReorderResult {
    pub perm: Permutation,
    pub matrix: TlrMatrix,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

struct Tracker {
    perm: Vec<usize>,
    block_id: Vec<usize>,
    m: usize,
}

impl Tracker {
    fn new(n: usize, m: usize) -> Self {
        Self { perm: (0..n).collect(), block_id: (0..n / m).collect(), m }
    }

    fn swap_blocks(&mut self, p: usize, q: usize, vecs: &mut [&mut Vec<f64>]) {
        if p == q {
            return;
        }
        let m = self.m;
        self.block_id.swap(p, q);
        for x in 0..m {
            self.perm.swap(p * m + x, q * m + x);
            for v in vecs.iter_mut() {
                v.swap(p * m + x, q * m + x);
            }
        }
    }

    fn permute_block(&mut self, l: usize, local: &[usize], vecs: &mut [&mut Vec<f64>]) {
        let m = self.m;
        let seg = l * m..(l + 1) * m;
        let old: Vec<usize> = self.perm[seg.clone()].to_vec();
        for (t, &s) in local.iter().enumerate() {
            self.perm[l * m + t] = old[s];
        }
        for v in vecs.iter_mut() {
            let old: Vec<f64> = v[seg.clone()].to_vec();
            for (t, &s) in local.iter().enumerate() {
                v[l * m + t] = old[s];
            }
        }
    }
}

fn check_problem(sigma: &TlrMatrix, a: &[f64], b: &[f64]) -> Result<()> {
    if sigma.state() != TlrState::Covariance {
        return Err(Error::Config("reordering requires a covariance matrix".into()));
    }
    if a.len() != sigma.n() || b.len() != sigma.n() {
        return Err(Error::Shape(format!("limits of length {}/{} for dimension {}", a.len(), b.len(), sigma.n())));
    }
    Ok(())
}

/// Index of the smallest `log_p` among `from..`, ties to the lowest id.
fn argmin_block(log_p: &[f64], ids: &[usize], from: usize) -> usize {
    (from..log_p.len())
        .min_by(|&x, &y| log_p[x].total_cmp(&log_p[y]).then(ids[x].cmp(&ids[y])))
        .expect("non-empty range")
}

/// Sorts blocks ascending by their conditioning probability estimate, then
/// optionally reorders variables within every block. No factorization.
pub fn block_reorder(mut sigma: TlrMatrix, a: &[f64], b: &[f64], within: bool) -> Result<ReorderResult> {
    check_problem(&sigma, a, b)?;
    let (m, r) = (sigma.tile_size(), sigma.blocks());
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    let mut log_p = (0..r)
        .map(|l| univariate_conditioning(sigma.diag(l), &a[l * m..(l + 1) * m], &b[l * m..(l + 1) * m]).map(|c| c.log_p))
        .collect::<Result<Vec<_>>>()?;
    let mut tr = Tracker::new(sigma.n(), m);
    for i in 0..r {
        let k = argmin_block(&log_p, &tr.block_id, i);
        if k != i {
            sigma.swap_blocks(i, k);
            log_p.swap(i, k);
            tr.swap_blocks(i, k, &mut [&mut a, &mut b]);
        }
    }
    if within {
        for l in 0..r {
            let seg = l * m..(l + 1) * m;
            let ur = univariate_reorder(sigma.diag(l), &a[seg.clone()], &b[seg])?;
            sigma.permute_within_block(l, &ur.perm);
            tr.permute_block(l, &ur.perm, &mut [&mut a, &mut b]);
        }
    }
    Ok(ReorderResult { perm: Permutation::new(tr.perm)?, matrix: sigma, a, b })
}

/// Block reordering re-evaluated on each Schur complement during the TLR
/// Cholesky factorization. The returned limits are the original limits in
/// the final order; the shifted limits only steer block selection.
pub fn iterative_block_reorder_cholesky(
    mut sigma: TlrMatrix,
    a: &[f64],
    b: &[f64],
    eps: f64,
    within: bool,
) -> Result<ReorderResult> {
    check_problem(&sigma, a, b)?;
    let (m, r) = (sigma.tile_size(), sigma.blocks());
    let mut a_orig = a.to_vec();
    let mut b_orig = b.to_vec();
    let mut a_s = a.to_vec();
    let mut b_s = b.to_vec();
    let mut tr = Tracker::new(sigma.n(), m);
    let mut log_p = vec![0.0; r];
    let mut delta = vec![0.0; m];
    for j in 0..r {
        for l in j..r {
            let seg = l * m..(l + 1) * m;
            log_p[l] = univariate_conditioning(sigma.diag(l), &a_s[seg.clone()], &b_s[seg])
                .map_err(|e| offset_pivot(e, l * m))?
                .log_p;
        }
        let k = argmin_block(&log_p, &tr.block_id, j);
        if k != j {
            sigma.swap_blocks(j, k);
            log_p.swap(j, k);
            tr.swap_blocks(j, k, &mut [&mut a_orig, &mut b_orig, &mut a_s, &mut b_s]);
        }
        let seg = j * m..(j + 1) * m;
        let y = if within {
            let ur = univariate_reorder(sigma.diag(j), &a_s[seg.clone()], &b_s[seg.clone()])
                .map_err(|e| offset_pivot(e, j * m))?;
            sigma.permute_within_block(j, &ur.perm);
            tr.permute_block(j, &ur.perm, &mut [&mut a_orig, &mut b_orig, &mut a_s, &mut b_s]);
            ur.mu
        } else {
            univariate_conditioning(sigma.diag(j), &a_s[seg.clone()], &b_s[seg])
                .map_err(|e| offset_pivot(e, j * m))?
                .mu
        };
        sigma.factor_column(j, eps)?;
        for i in j + 1..r {
            delta.iter_mut().for_each(|d| *d = 0.0);
            sigma.off(i, j).sub_matvec(&y, &mut delta);
            for x in 0..m {
                a_s[i * m + x] += delta[x];
                b_s[i * m + x] += delta[x];
            }
        }
    }
    sigma.mark_factorized();
    Ok(ReorderResult { perm: Permutation::new(tr.perm)?, matrix: sigma, a: a_orig, b: b_orig })
}

fn offset_pivot(e: Error, offset: usize) -> Error {
    match e {
        Error::NotPositiveDefinite { pivot } => Error::NotPositiveDefinite { pivot: offset + pivot },
        other => other,
    }
}
