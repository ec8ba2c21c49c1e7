//! Tile-low-rank matrices: assembly by cross approximation, Cholesky
//! factorization, block moves, memory accounting and serialization.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Kernel, KernelOracle, Permutation, PointSet};
use crate::lowrank::{
    aca_tile, cholesky_in_place, dense_minus_lr_product, hcat, lr_minus_product, lr_trsm,
    solve_lower_in_place, DenseTile, LowRankTile,
};

/// An off-diagonal tile: low rank, or dense when the rank cap was hit.
#[derive(Clone, Debug, PartialEq)]
pub enum Tile {
    Dense(DenseTile),
    LowRank(LowRankTile),
}

impl Tile {
    pub fn to_dense(&self) -> DenseTile {
        match self {
            Tile::Dense(d) => d.clone(),
            Tile::LowRank(t) => t.to_dense(),
        }
    }

    pub fn transpose(&self) -> Tile {
        match self {
            Tile::Dense(d) => Tile::Dense(d.transpose()),
            Tile::LowRank(t) => Tile::LowRank(t.transpose()),
        }
    }

    /// Rank of a low-rank tile, `None` for dense storage.
    pub fn rank(&self) -> Option<usize> {
        match self {
            Tile::Dense(_) => None,
            Tile::LowRank(t) => Some(t.rank()),
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Tile::Dense(d) => d.nrows(),
            Tile::LowRank(t) => t.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Tile::Dense(d) => d.ncols(),
            Tile::LowRank(t) => t.cols(),
        }
    }

    /// Number of stored scalars.
    pub fn scalars(&self) -> usize {
        match self {
            Tile::Dense(d) => d.len(),
            Tile::LowRank(t) => t.u.len() + t.v.len(),
        }
    }

    /// `out −= T y`.
    #[inline]
    pub fn sub_matvec(&self, y: &[f64], out: &mut [f64]) {
        match self {
            Tile::Dense(d) => {
                let rows = d.nrows();
                for (col, &yc) in d.as_slice().chunks_exact(rows).zip(y) {
                    if yc != 0.0 {
                        for (o, &dv) in out.iter_mut().zip(col) {
                            *o -= dv * yc;
                        }
                    }
                }
            }
            Tile::LowRank(t) => {
                let (rows, cols) = (t.rows(), t.cols());
                for (uc, vc) in t.u.as_slice().chunks_exact(rows).zip(t.v.as_slice().chunks_exact(cols)) {
                    let s = crate::sov::dot(vc, y);
                    if s != 0.0 {
                        for (o, &uv) in out.iter_mut().zip(uc) {
                            *o -= uv * s;
                        }
                    }
                }
            }
        }
    }

    fn permute_rows(&mut self, perm: &[usize]) {
        let f = |a: &DMatrix<f64>| DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(perm[i], j)]);
        match self {
            Tile::Dense(d) => *d = f(d),
            Tile::LowRank(t) => t.u = f(&t.u),
        }
    }

    fn permute_cols(&mut self, perm: &[usize]) {
        match self {
            Tile::Dense(d) => *d = DMatrix::from_fn(d.nrows(), d.ncols(), |i, j| d[(i, perm[j])]),
            Tile::LowRank(t) => t.v = DMatrix::from_fn(t.v.nrows(), t.v.ncols(), |i, j| t.v[(perm[i], j)]),
        }
    }
}

/// `A Bᵀ` as a tile, low rank whenever either factor is.
fn tile_product(a: &Tile, b: &Tile) -> Tile {
    match (a, b) {
        (Tile::LowRank(x), Tile::LowRank(y)) => {
            let w = x.v.transpose() * &y.v;
            Tile::LowRank(LowRankTile { u: x.u.clone(), v: &y.u * w.transpose() })
        }
        (Tile::LowRank(x), Tile::Dense(d)) => Tile::LowRank(LowRankTile { u: x.u.clone(), v: d * &x.v }),
        (Tile::Dense(d), Tile::LowRank(y)) => Tile::LowRank(LowRankTile { u: d * &y.v, v: y.u.clone() }),
        (Tile::Dense(d1), Tile::Dense(d2)) => Tile::Dense(d1 * d2.transpose()),
    }
}

/// `S ← S − A Bᵀ` with recompression; tiles whose rank exceeds `k_max`
/// switch to dense storage.
fn tile_minus_product(s: &mut Tile, a: &Tile, b: &Tile, eps: f64, k_max: usize) {
    if matches!(a, Tile::LowRank(t) if t.rank() == 0) || matches!(b, Tile::LowRank(t) if t.rank() == 0) {
        return;
    }
    match (&mut *s, a, b) {
        (Tile::LowRank(st), Tile::LowRank(x), Tile::LowRank(y)) => {
            let r = lr_minus_product(st, x, y, eps);
            *s = if r.rank() > k_max { Tile::Dense(r.to_dense()) } else { Tile::LowRank(r) };
        }
        (Tile::Dense(d), _, _) => match tile_product(a, b) {
            Tile::Dense(p) => *d -= p,
            Tile::LowRank(p) => d.gemm(-1.0, &p.u, &p.v.transpose(), 1.0),
        },
        (Tile::LowRank(st), _, _) => match tile_product(a, b) {
            Tile::Dense(p) => *s = Tile::Dense(st.to_dense() - p),
            Tile::LowRank(p) => {
                let t = LowRankTile { u: hcat(&st.u, &p.u), v: hcat(&st.v, &(-p.v)) };
                let r = crate::lowrank::lr_recompress(&t, eps);
                *s = if r.rank() > k_max { Tile::Dense(r.to_dense()) } else { Tile::LowRank(r) };
            }
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TlrState {
    Covariance,
    Cholesky,
}

/// Block-partitioned symmetric matrix (covariance state) or lower Cholesky
/// factor (cholesky state) with dense diagonal tiles.
#[derive(Clone, Debug, PartialEq)]
pub struct TlrMatrix {
    n: usize,
    m: usize,
    r: usize,
    diag: Vec<DenseTile>,
    /// Lower tiles `(i, j)`, `i > j`, grouped by block column.
    off: Vec<Tile>,
    state: TlrState,
}

/// Storage footprint of a TLR matrix against its dense equivalent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub bytes_dense_equiv: u64,
    pub bytes_tlr: u64,
    /// `ranks[i][j]` for `j ≤ i`; dense tiles report `m`.
    pub ranks: Vec<Vec<usize>>,
    pub dense_off_tiles: usize,
}

impl MemoryReport {
    pub fn total_off_rank(&self) -> usize {
        self.ranks.iter().enumerate().map(|(i, row)| row[..i].iter().sum::<usize>()).sum()
    }
}

impl TlrMatrix {
    pub fn new(n: usize, m: usize, diag: Vec<DenseTile>, off: Vec<Tile>, state: TlrState) -> Result<Self> {
        if m == 0 || n % m != 0 {
            return Err(Error::Shape(format!("dimension {n} is not a multiple of tile size {m}")));
        }
        let r = n / m;
        if diag.len() != r || off.len() != r * (r - 1) / 2 {
            return Err(Error::Shape("tile count does not match the block layout".into()));
        }
        if diag.iter().any(|d| d.nrows() != m || d.ncols() != m)
            || off.iter().any(|t| t.rows() != m || t.cols() != m)
        {
            return Err(Error::Shape("tile dimensions differ from the tile size".into()));
        }
        Ok(Self { n, m, r, diag, off, state })
    }

    /// Assembles from an entry oracle: exact diagonal tiles, cross
    /// approximation off the diagonal with dense fallback above rank `m/2`.
    pub fn from_oracle(n: usize, m: usize, entry: impl Fn(usize, usize) -> f64, eps: f64) -> Result<Self> {
        if m == 0 || n % m != 0 {
            return Err(Error::Shape(format!("dimension {n} is not a multiple of tile size {m}")));
        }
        let r = n / m;
        let k_max = m / 2;
        let diag = (0..r)
            .map(|i| DMatrix::from_fn(m, m, |a, b| entry(i * m + a, i * m + b)))
            .collect();
        let mut off = Vec::with_capacity(r * (r.saturating_sub(1)) / 2);
        for j in 0..r {
            for i in j + 1..r {
                let rows = i * m..(i + 1) * m;
                let cols = j * m..(j + 1) * m;
                let tile = match aca_tile(rows, cols, &entry, eps, k_max) {
                    Ok(t) if t.rank() <= k_max => Tile::LowRank(t),
                    Ok(_) | Err(Error::RankCapExceeded(_)) => {
                        Tile::Dense(DMatrix::from_fn(m, m, |a, b| entry(i * m + a, j * m + b)))
                    }
                    Err(e) => return Err(e),
                };
                off.push(tile);
            }
        }
        Ok(Self { n, m, r, diag, off, state: TlrState::Covariance })
    }

    /// TLR compression of a dense symmetric matrix.
    pub fn from_dense(a: &DMatrix<f64>, m: usize, eps: f64) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Shape("matrix is not square".into()));
        }
        Self::from_oracle(a.nrows(), m, |i, j| a[(i, j)], eps)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tile_size(&self) -> usize {
        self.m
    }

    pub fn blocks(&self) -> usize {
        self.r
    }

    pub fn state(&self) -> TlrState {
        self.state
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i > j && i < self.r);
        j * self.r - j * (j + 1) / 2 + (i - j - 1)
    }

    pub fn diag(&self, i: usize) -> &DenseTile {
        &self.diag[i]
    }

    pub fn diag_mut(&mut self, i: usize) -> &mut DenseTile {
        &mut self.diag[i]
    }

    /// Off-diagonal tile `(i, j)` with `i > j`.
    #[inline]
    pub fn off(&self, i: usize, j: usize) -> &Tile {
        &self.off[self.idx(i, j)]
    }

    pub fn off_mut(&mut self, i: usize, j: usize) -> &mut Tile {
        let k = self.idx(i, j);
        &mut self.off[k]
    }

    /// Expands to a dense matrix: symmetric in covariance state, lower
    /// triangular in cholesky state.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let (m, n) = (self.m, self.n);
        let mut a = DMatrix::zeros(n, n);
        for i in 0..self.r {
            a.view_mut((i * m, i * m), (m, m)).copy_from(&self.diag[i]);
            for j in 0..i {
                let t = self.off(i, j).to_dense();
                if self.state == TlrState::Covariance {
                    a.view_mut((j * m, i * m), (m, m)).copy_from(&t.transpose());
                }
                a.view_mut((i * m, j * m), (m, m)).copy_from(&t);
            }
        }
        a
    }

    pub fn memory_report(&self) -> MemoryReport {
        let w = std::mem::size_of::<f64>() as u64;
        let m = self.m;
        let mut ranks = vec![Vec::new(); self.r];
        let mut scalars = 0u64;
        let mut dense_off = 0;
        for (i, row) in ranks.iter_mut().enumerate() {
            for j in 0..i {
                let t = self.off(i, j);
                scalars += t.scalars() as u64;
                match t.rank() {
                    Some(k) => row.push(k),
                    None => {
                        dense_off += 1;
                        row.push(m);
                    }
                }
            }
            scalars += (m * m) as u64;
            row.push(m);
        }
        MemoryReport {
            bytes_dense_equiv: (self.n as u64).pow(2) * w,
            bytes_tlr: scalars * w,
            ranks,
            dense_off_tiles: dense_off,
        }
    }

    /// Exchanges blocks `p` and `q` symmetrically. In the middle of a
    /// factorization this is valid for trailing blocks, whose finished
    /// columns are row-swapped.
    pub fn swap_blocks(&mut self, p: usize, q: usize) {
        if p == q {
            return;
        }
        let (p, q) = if p < q { (p, q) } else { (q, p) };
        self.diag.swap(p, q);
        let k = self.idx(q, p);
        self.off[k] = self.off[k].transpose();
        for k in 0..p {
            let (a, b) = (self.idx(p, k), self.idx(q, k));
            self.off.swap(a, b);
        }
        for k in q + 1..self.r {
            let (a, b) = (self.idx(k, p), self.idx(k, q));
            self.off.swap(a, b);
        }
        for k in p + 1..q {
            let (a, b) = (self.idx(k, p), self.idx(q, k));
            self.off.swap(a, b);
            self.off[a] = self.off[a].transpose();
            self.off[b] = self.off[b].transpose();
        }
    }

    /// Reorders the variables of block `l` so that local position `t` holds
    /// the former local variable `perm[t]`.
    pub fn permute_within_block(&mut self, l: usize, perm: &[usize]) {
        let d = &self.diag[l];
        self.diag[l] = DMatrix::from_fn(self.m, self.m, |i, j| d[(perm[i], perm[j])]);
        for k in 0..l {
            let i = self.idx(l, k);
            self.off[i].permute_rows(perm);
        }
        for k in l + 1..self.r {
            let i = self.idx(k, l);
            self.off[i].permute_cols(perm);
        }
    }

    /// One right-looking step on block column `j`: Cholesky of the diagonal
    /// tile, triangular solves below it, and the Schur update of the
    /// trailing tiles.
    pub(crate) fn factor_column(&mut self, j: usize, eps: f64) -> Result<()> {
        let m = self.m;
        let k_max = m / 2;
        cholesky_in_place(&mut self.diag[j]).map_err(|e| match e {
            Error::NotPositiveDefinite { pivot } => Error::NotPositiveDefinite { pivot: j * m + pivot },
            other => other,
        })?;
        let l = self.diag[j].clone();
        for i in j + 1..self.r {
            let k = self.idx(i, j);
            self.off[k] = match &self.off[k] {
                Tile::LowRank(t) => Tile::LowRank(lr_trsm(t, &l)?),
                Tile::Dense(d) => {
                    let mut x = d.transpose();
                    solve_lower_in_place(&l, &mut x)?;
                    Tile::Dense(x.transpose())
                }
            };
        }
        for j1 in j + 1..self.r {
            let lj1 = self.off[self.idx(j1, j)].clone();
            match &lj1 {
                Tile::LowRank(t) => self.diag[j1] = dense_minus_lr_product(&self.diag[j1], t, t),
                Tile::Dense(d) => self.diag[j1].gemm(-1.0, d, &d.transpose(), 1.0),
            }
            for i1 in j1 + 1..self.r {
                let li1 = &self.off[self.idx(i1, j)];
                let li1 = li1.clone();
                let k = self.idx(i1, j1);
                tile_minus_product(&mut self.off[k], &li1, &lj1, eps, k_max);
            }
        }
        Ok(())
    }

    pub(crate) fn mark_factorized(&mut self) {
        self.state = TlrState::Cholesky;
    }

    /// Solves `L X = B` in place for a factor in cholesky state.
    pub fn forward_solve(&self, b: &mut DMatrix<f64>) -> Result<()> {
        if self.state != TlrState::Cholesky {
            return Err(Error::Config("forward solve requires a Cholesky factor".into()));
        }
        if b.nrows() != self.n {
            return Err(Error::Shape(format!("right-hand side has {} rows, expected {}", b.nrows(), self.n)));
        }
        let m = self.m;
        for i in 0..self.r {
            for j in 0..i {
                let xj = b.rows(j * m, m).clone_owned();
                let upd = match self.off(i, j) {
                    Tile::Dense(d) => d * xj,
                    Tile::LowRank(t) if t.rank() == 0 => continue,
                    Tile::LowRank(t) => &t.u * (t.v.transpose() * xj),
                };
                let mut rows = b.rows_mut(i * m, m);
                rows -= upd;
            }
            let mut bi = b.rows(i * m, m).clone_owned();
            solve_lower_in_place(&self.diag[i], &mut bi)?;
            b.rows_mut(i * m, m).copy_from(&bi);
        }
        Ok(())
    }

    /// Forward solve for a single vector.
    pub fn forward_solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let mut x = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        self.forward_solve(&mut x)?;
        Ok(DVector::from_column_slice(x.as_slice()))
    }

    /// Binary serialization: magic, dimensions, state, then every tile.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(b"TLRM")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.m as u64).to_le_bytes())?;
        w.write_all(&[matches!(self.state, TlrState::Cholesky) as u8])?;
        let put = |a: &DMatrix<f64>, w: &mut dyn Write| -> std::io::Result<()> {
            for v in a.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        };
        for d in &self.diag {
            put(d, w)?;
        }
        for t in &self.off {
            match t {
                Tile::Dense(d) => {
                    w.write_all(&[0u8])?;
                    put(d, w)?;
                }
                Tile::LowRank(lr) => {
                    w.write_all(&[1u8])?;
                    w.write_all(&(lr.rank() as u64).to_le_bytes())?;
                    put(&lr.u, w)?;
                    put(&lr.v, w)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        fn io(e: std::io::Error) -> Error {
            Error::Format(e.to_string())
        }
        fn u64_of(r: &mut dyn Read) -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(io)?;
            Ok(u64::from_le_bytes(b))
        }
        fn mat(r: &mut dyn Read, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
            let mut buf = vec![0u8; rows * cols * 8];
            r.read_exact(&mut buf).map_err(io)?;
            let vals: Vec<f64> = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Ok(DMatrix::from_vec(rows, cols, vals))
        }
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != b"TLRM" {
            return Err(Error::Format("missing TLRM header".into()));
        }
        let mut ver = [0u8; 4];
        r.read_exact(&mut ver).map_err(io)?;
        if u32::from_le_bytes(ver) != 1 {
            return Err(Error::Format("unsupported version".into()));
        }
        let n = u64_of(r)? as usize;
        let m = u64_of(r)? as usize;
        let mut st = [0u8; 1];
        r.read_exact(&mut st).map_err(io)?;
        let state = match st[0] {
            0 => TlrState::Covariance,
            1 => TlrState::Cholesky,
            s => return Err(Error::Format(format!("unknown state tag {s}"))),
        };
        if m == 0 || n % m != 0 {
            return Err(Error::Format(format!("invalid dimensions n = {n}, m = {m}")));
        }
        let nb = n / m;
        let diag = (0..nb).map(|_| mat(r, m, m)).collect::<Result<Vec<_>>>()?;
        let mut off = Vec::with_capacity(nb * nb.saturating_sub(1) / 2);
        for _ in 0..nb * nb.saturating_sub(1) / 2 {
            let mut kind = [0u8; 1];
            r.read_exact(&mut kind).map_err(io)?;
            off.push(match kind[0] {
                0 => Tile::Dense(mat(r, m, m)?),
                1 => {
                    let k = u64_of(r)? as usize;
                    if k > m {
                        return Err(Error::Format(format!("tile rank {k} exceeds tile size {m}")));
                    }
                    Tile::LowRank(LowRankTile { u: mat(r, m, k)?, v: mat(r, m, k)? })
                }
                t => return Err(Error::Format(format!("unknown tile tag {t}"))),
            });
        }
        Self::new(n, m, diag, off, state)
    }
}

/// TLR covariance over the permuted points.
pub fn assemble_tlr(k: &Kernel, pts: &PointSet, perm: &Permutation, m: usize, eps: f64) -> Result<TlrMatrix> {
    let n = pts.len();
    if perm.len() != n {
        return Err(Error::Shape(format!("permutation of length {} for {n} points", perm.len())));
    }
    let oracle = KernelOracle::new(*k, pts, perm);
    TlrMatrix::from_oracle(n, m, |i, j| oracle.entry(i, j), eps)
}

/// Right-looking TLR Cholesky factorization.
pub fn tlr_cholesky(mut sigma: TlrMatrix, eps: f64) -> Result<TlrMatrix> {
    if sigma.state != TlrState::Covariance {
        return Err(Error::Config("matrix is already factorized".into()));
    }
    for j in 0..sigma.r {
        sigma.factor_column(j, eps)?;
    }
    sigma.state = TlrState::Cholesky;
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{assemble_dense, morton_order, unit_square_points};
    use crate::lowrank::dense_cholesky;

    fn problem(n: usize, beta: f64) -> (Kernel, PointSet, Permutation) {
        let pts = unit_square_points(n, 11).unwrap();
        let perm = morton_order(&pts, 1).unwrap();
        (Kernel::exponential(1.0, beta, 0.0).unwrap(), pts, perm)
    }

    #[test]
    fn single_block_is_dense() {
        let (k, pts, perm) = problem(16, 0.3);
        let t = assemble_tlr(&k, &pts, &perm, 16, 1e-4).unwrap();
        assert_eq!(t.to_dense(), assemble_dense(&k, &pts, &perm).unwrap());
        let l = tlr_cholesky(t.clone(), 1e-4).unwrap();
        let d = dense_cholesky(&assemble_dense(&k, &pts, &perm).unwrap()).unwrap();
        assert!((l.to_dense() - d).amax() < 1e-14);
        let rep = t.memory_report();
        assert_eq!(rep.bytes_tlr, rep.bytes_dense_equiv);
        assert!(matches!(assemble_tlr(&k, &pts, &perm, 5, 1e-4), Err(Error::Shape(_))));
    }

    #[test]
    fn reconstruction_within_tolerance() {
        let (k, pts, perm) = problem(256, 0.3);
        let eps = 1e-4;
        let t = assemble_tlr(&k, &pts, &perm, 16, eps).unwrap();
        let d = assemble_dense(&k, &pts, &perm).unwrap();
        let diff = t.to_dense() - &d;
        for i in 0..16 {
            for j in 0..i {
                let block = diff.view((i * 16, j * 16), (16, 16));
                assert!(block.norm() <= 10.0 * eps, "tile ({i}, {j})");
            }
        }
    }

    #[test]
    fn block_diagonal_factor() {
        let m = 8;
        let n = 32;
        let a = DMatrix::from_fn(n, n, |i, j| {
            if i / m == j / m {
                if i == j { 2.0 } else { 0.5 }
            } else {
                0.0
            }
        });
        let t = TlrMatrix::from_dense(&a, m, 1e-6).unwrap();
        assert_eq!(t.memory_report().bytes_tlr, (4 * m * m * 8) as u64);
        let l = tlr_cholesky(t, 1e-6).unwrap();
        for i in 0..4 {
            for j in 0..i {
                assert_eq!(l.off(i, j).rank(), Some(0));
            }
        }
        let d = dense_cholesky(&a).unwrap();
        assert!((l.to_dense() - d).amax() < 1e-14);
    }

    #[test]
    fn factor_reproduces_covariance() {
        let (k, pts, perm) = problem(256, 0.3);
        let eps = 1e-5;
        let t = assemble_tlr(&k, &pts, &perm, 16, eps).unwrap();
        let l = tlr_cholesky(t, eps).unwrap().to_dense();
        let d = assemble_dense(&k, &pts, &perm).unwrap();
        assert!((&l * l.transpose() - d).amax() <= 100.0 * eps);
    }

    #[test]
    fn swap_blocks_matches_symmetric_permutation() {
        let (k, pts, perm) = problem(64, 0.2);
        let mut t = assemble_tlr(&k, &pts, &perm, 8, 1e-10).unwrap();
        let before = t.to_dense();
        t.swap_blocks(1, 5);
        let mut p: Vec<usize> = (0..64).collect();
        for x in 0..8 {
            p.swap(8 + x, 40 + x);
        }
        let expect = Permutation::new(p).unwrap().apply_symmetric(&before);
        assert!((t.to_dense() - expect).amax() < 1e-12);
    }

    #[test]
    fn within_block_permutation() {
        let (k, pts, perm) = problem(32, 0.2);
        let mut t = assemble_tlr(&k, &pts, &perm, 8, 1e-10).unwrap();
        let before = t.to_dense();
        let local = [3, 0, 7, 1, 2, 6, 5, 4];
        t.permute_within_block(1, &local);
        let mut p: Vec<usize> = (0..32).collect();
        for (x, &l) in local.iter().enumerate() {
            p[8 + x] = 8 + l;
        }
        let expect = Permutation::new(p).unwrap().apply_symmetric(&before);
        assert!((t.to_dense() - expect).amax() < 1e-12);
    }

    #[test]
    fn forward_solve_matches_dense() {
        let (k, pts, perm) = problem(64, 0.3);
        let t = assemble_tlr(&k, &pts, &perm, 8, 1e-12).unwrap();
        let l = tlr_cholesky(t, 1e-12).unwrap();
        let b = DMatrix::from_fn(64, 2, |i, j| (i as f64 * 0.37 + j as f64).sin());
        let mut x = b.clone();
        l.forward_solve(&mut x).unwrap();
        assert!((l.to_dense() * x - b).amax() < 1e-10);
    }

    #[test]
    fn serialization_round_trip() {
        let (k, pts, perm) = problem(64, 0.3);
        let t = tlr_cholesky(assemble_tlr(&k, &pts, &perm, 8, 1e-4).unwrap(), 1e-4).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = TlrMatrix::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert!(TlrMatrix::read_from(&mut &buf[..10]).is_err());
        assert!(TlrMatrix::read_from(&mut &b"XXXX"[..]).is_err());
    }

    #[test]
    fn dense_fallback_tiles_factorize() {
        // Rank cap 1 forces dense storage for most off-diagonal tiles.
        let (k, pts, perm) = problem(16, 0.5);
        let eps = 1e-8;
        let t = assemble_tlr(&k, &pts, &perm, 2, eps).unwrap();
        assert!(t.memory_report().dense_off_tiles > 0);
        let l = tlr_cholesky(t, eps).unwrap().to_dense();
        let d = assemble_dense(&k, &pts, &perm).unwrap();
        assert!((&l * l.transpose() - d).amax() < 1e-6);
    }
}
