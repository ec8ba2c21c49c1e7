//! Dense and low-rank tile kernels: Cholesky, triangular solves, adaptive
//! cross approximation and truncated tile arithmetic.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type DenseTile = DMatrix<f64>;

const CHOL_BLOCK: usize = 96;

/// A tile stored as `U Vᵀ`; rank 0 encodes the zero tile.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankTile {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl LowRankTile {
    pub fn zero(rows: usize, cols: usize) -> Self {
        Self { u: DMatrix::zeros(rows, 0), v: DMatrix::zeros(cols, 0) }
    }

    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        if u.ncols() != v.ncols() {
            return Err(Error::Shape(format!("U has {} columns, V has {}", u.ncols(), v.ncols())));
        }
        Ok(Self { u, v })
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn cols(&self) -> usize {
        self.v.nrows()
    }

    pub fn to_dense(&self) -> DenseTile {
        if self.rank() == 0 {
            DMatrix::zeros(self.rows(), self.cols())
        } else {
            &self.u * self.v.transpose()
        }
    }

    pub fn transpose(&self) -> Self {
        Self { u: self.v.clone(), v: self.u.clone() }
    }
}

/// Lower Cholesky factor of a symmetric matrix; only the lower triangle is read.
pub fn dense_cholesky(a: &DenseTile) -> Result<DenseTile> {
    let mut l = a.clone();
    cholesky_in_place(&mut l)?;
    Ok(l)
}

/// Overwrites the lower triangle of `a` with its Cholesky factor and zeroes
/// the strict upper triangle.
pub fn cholesky_in_place(a: &mut DenseTile) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Shape(format!("Cholesky of a {}x{} matrix", n, a.ncols())));
    }
    let mut k0 = 0;
    while k0 < n {
        let kb = CHOL_BLOCK.min(n - k0);
        unblocked_cholesky(a, k0, kb)?;
        let rest = n - k0 - kb;
        if rest > 0 {
            // Panel: A21 ← A21 L11⁻ᵀ, column by column.
            for j in k0..k0 + kb {
                for p in k0..j {
                    let ljp = a[(j, p)];
                    if ljp != 0.0 {
                        for i in k0 + kb..n {
                            let v = a[(i, p)];
                            a[(i, j)] -= v * ljp;
                        }
                    }
                }
                let d = a[(j, j)];
                for i in k0 + kb..n {
                    a[(i, j)] /= d;
                }
            }
            // Trailing update: A22 ← A22 − L21 L21ᵀ.
            let l21 = a.view((k0 + kb, k0), (rest, kb)).clone_owned();
            let l21t = l21.transpose();
            a.view_mut((k0 + kb, k0 + kb), (rest, rest)).gemm(-1.0, &l21, &l21t, 1.0);
        }
        k0 += kb;
    }
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    Ok(())
}

fn unblocked_cholesky(a: &mut DenseTile, k0: usize, kb: usize) -> Result<()> {
    let end = k0 + kb;
    for j in k0..end {
        let mut d = a[(j, j)];
        for p in k0..j {
            d -= a[(j, p)] * a[(j, p)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let d = d.sqrt();
        a[(j, j)] = d;
        for i in j + 1..end {
            let mut s = a[(i, j)];
            for p in k0..j {
                s -= a[(i, p)] * a[(j, p)];
            }
            a[(i, j)] = s / d;
        }
    }
    Ok(())
}

/// Solves `L X = B` in place for lower-triangular `L`.
pub fn solve_lower_in_place(l: &DenseTile, b: &mut DMatrix<f64>) -> Result<()> {
    let n = l.nrows();
    if b.nrows() != n {
        return Err(Error::Shape(format!("triangular solve with {} rows against {}", b.nrows(), n)));
    }
    for i in 0..n {
        if l[(i, i)] == 0.0 {
            return Err(Error::SingularTriangle(i));
        }
    }
    for c in 0..b.ncols() {
        let mut col = b.column_mut(c);
        for j in 0..n {
            let x = col[j] / l[(j, j)];
            col[j] = x;
            if x != 0.0 {
                for i in j + 1..n {
                    col[i] -= l[(i, j)] * x;
                }
            }
        }
    }
    Ok(())
}

/// Solves `Lᵀ X = B` in place for lower-triangular `L`.
pub fn solve_upper_transpose_in_place(l: &DenseTile, b: &mut DMatrix<f64>) -> Result<()> {
    let n = l.nrows();
    if b.nrows() != n {
        return Err(Error::Shape(format!("triangular solve with {} rows against {}", b.nrows(), n)));
    }
    for i in 0..n {
        if l[(i, i)] == 0.0 {
            return Err(Error::SingularTriangle(i));
        }
    }
    for c in 0..b.ncols() {
        let mut col = b.column_mut(c);
        for j in (0..n).rev() {
            let mut s = col[j];
            for i in j + 1..n {
                s -= l[(i, j)] * col[i];
            }
            col[j] = s / l[(j, j)];
        }
    }
    Ok(())
}

/// Adaptive cross approximation with partial pivoting of the block
/// `rows × cols` of an implicitly given matrix, followed by recompression.
pub fn aca_tile(
    rows: Range<usize>,
    cols: Range<usize>,
    entry: impl Fn(usize, usize) -> f64,
    eps_abs: f64,
    k_max: usize,
) -> Result<LowRankTile> {
    let (m, n) = (rows.len(), cols.len());
    let mut us: Vec<DVector<f64>> = Vec::new();
    let mut vs: Vec<DVector<f64>> = Vec::new();
    let mut row_used = vec![false; m];
    let mut i = 0;
    let mut converged = false;
    while !converged {
        row_used[i] = true;
        let mut row = DVector::from_fn(n, |j, _| entry(rows.start + i, cols.start + j));
        for (u, v) in us.iter().zip(&vs) {
            row.axpy(-u[i], v, 1.0);
        }
        let j = row.iamax();
        let pivot = row[j];
        if pivot == 0.0 {
            // Zero residual row: move on to the next unused row.
            match row_used.iter().position(|&used| !used) {
                Some(next) => {
                    i = next;
                    continue;
                }
                None => break,
            }
        }
        let v = row / pivot;
        let mut u = DVector::from_fn(m, |r, _| entry(rows.start + r, cols.start + j));
        for (uu, vv) in us.iter().zip(&vs) {
            u.axpy(-vv[j], uu, 1.0);
        }
        if u.norm() * v.norm() <= eps_abs {
            converged = true;
        } else {
            if us.len() == k_max {
                return Err(Error::RankCapExceeded(k_max));
            }
            let next = (0..m)
                .filter(|&r| !row_used[r])
                .max_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs()).then(b.cmp(&a)));
            us.push(u);
            vs.push(v);
            match next {
                Some(next) => i = next,
                None => converged = true,
            }
        }
    }
    if us.is_empty() {
        return Ok(LowRankTile::zero(m, n));
    }
    let u = DMatrix::from_columns(&us);
    let v = DMatrix::from_columns(&vs);
    Ok(lr_recompress(&LowRankTile { u, v }, eps_abs))
}

/// QR of both factors, SVD of the small core, and truncation of singular
/// values below `eps_abs`.
pub fn lr_recompress(t: &LowRankTile, eps_abs: f64) -> LowRankTile {
    let (m, n) = (t.rows(), t.cols());
    if t.rank() == 0 {
        return t.clone();
    }
    let qr_u = t.u.clone().qr();
    let qr_v = t.v.clone().qr();
    let core = qr_u.r() * qr_v.r().transpose();
    let svd = core.svd(true, true);
    let (w, zt) = match (svd.u, svd.v_t) {
        (Some(w), Some(zt)) => (w, zt),
        _ => return t.clone(),
    };
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > eps_abs)
        .collect();
    if keep.is_empty() {
        return LowRankTile::zero(m, n);
    }
    let mut core_u = DMatrix::zeros(w.nrows(), keep.len());
    let mut core_v = DMatrix::zeros(zt.ncols(), keep.len());
    for (c, &k) in keep.iter().enumerate() {
        let s = svd.singular_values[k];
        core_u.set_column(c, &(w.column(k) * s));
        core_v.set_column(c, &zt.row(k).transpose());
    }
    LowRankTile { u: qr_u.q() * core_u, v: qr_v.q() * core_v }
}

/// `S − L1 L2ᵀ` by factor concatenation and recompression.
pub fn lr_minus_product(
    s: &LowRankTile,
    l1: &LowRankTile,
    l2: &LowRankTile,
    eps_abs: f64,
) -> LowRankTile {
    if l1.rank() == 0 || l2.rank() == 0 {
        return s.clone();
    }
    // L1 L2ᵀ = U1 (V1ᵀ V2) U2ᵀ = U1 (U2 Wᵀ)ᵀ
    let w = l1.v.transpose() * &l2.v;
    let right = -(&l2.u * w.transpose());
    let t = LowRankTile { u: hcat(&s.u, &l1.u), v: hcat(&s.v, &right) };
    lr_recompress(&t, eps_abs)
}

/// Exact `D − L1 L2ᵀ` for a dense tile.
pub fn dense_minus_lr_product(d: &DenseTile, l1: &LowRankTile, l2: &LowRankTile) -> DenseTile {
    let mut out = d.clone();
    if l1.rank() > 0 && l2.rank() > 0 {
        let w = l1.v.transpose() * &l2.v;
        let left = &l1.u * w;
        out.gemm(-1.0, &left, &l2.u.transpose(), 1.0);
    }
    out
}

/// Right-multiplies the tile by `L⁻ᵀ`: `V ← L⁻¹ V`.
pub fn lr_trsm(t: &LowRankTile, l: &DenseTile) -> Result<LowRankTile> {
    let mut v = t.v.clone();
    if t.rank() > 0 {
        solve_lower_in_place(l, &mut v)?;
    } else if let Some(i) = (0..l.nrows()).find(|&i| l[(i, i)] == 0.0) {
        return Err(Error::SingularTriangle(i));
    }
    Ok(LowRankTile { u: t.u.clone(), v })
}

/// `U (Vᵀ y)`.
pub fn lr_matvec(t: &LowRankTile, y: &DVector<f64>) -> DVector<f64> {
    if t.rank() == 0 {
        return DVector::zeros(t.rows());
    }
    &t.u * (t.v.tr_mul(y))
}

pub(crate) fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}
