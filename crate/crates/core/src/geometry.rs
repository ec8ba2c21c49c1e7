//! Point sets, Morton ordering and covariance kernels.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest dimension accepted by [`assemble_dense`] unless a cap is given.
pub const DENSE_CAP: usize = 8192;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    points: Vec<[f64; 2]>,
}

impl PointSet {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Shape("a point set needs at least one point".into()));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Domain("point coordinates must be finite".into()));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// Points reordered so that position `k` holds the original point `perm[k]`.
    pub fn permuted(&self, perm: &Permutation) -> PointSet {
        PointSet { points: perm.apply(&self.points) }
    }

    pub fn truncated(&self, n: usize) -> PointSet {
        PointSet { points: self.points[..n.min(self.points.len())].to_vec() }
    }
}

/// A permutation stored as `perm[new] = old`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::Domain(format!("not a permutation of 0..{}", perm.len())));
            }
            seen[p] = true;
        }
        Ok(Self(perm))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &p)| i == p)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (new, &old) in self.0.iter().enumerate() {
            inv[old] = new;
        }
        Self(inv)
    }

    /// The permutation obtained by applying `self` first and `next` second.
    pub fn then(&self, next: &Permutation) -> Self {
        assert_eq!(self.len(), next.len(), "permutation lengths differ");
        Self(next.0.iter().map(|&k| self.0[k]).collect())
    }

    /// `out[k] = xs[perm[k]]`.
    pub fn apply<T: Clone>(&self, xs: &[T]) -> Vec<T> {
        assert_eq!(self.len(), xs.len(), "permutation length differs from data length");
        self.0.iter().map(|&k| xs[k].clone()).collect()
    }

    /// Symmetric permutation `P A Pᵀ` of a square matrix.
    pub fn apply_symmetric(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| a[(self.0[i], self.0[j])])
    }
}

/// A perturbed `side × side` grid: point `(i, j)` sits at
/// `(i·unit + U, j·unit + U')` with `U, U' ~ Uniform(0, jitter)`.
pub fn make_grid(side: usize, unit: f64, jitter: f64, seed: u64) -> Result<PointSet> {
    if side == 0 {
        return Err(Error::Domain("grid side must be at least 1".into()));
    }
    if !(unit > 0.0) || !(jitter >= 0.0) || jitter >= unit {
        return Err(Error::Domain(format!(
            "grid requires unit > 0 and 0 <= jitter < unit, got unit = {unit}, jitter = {jitter}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            let dx = rng.random::<f64>() * jitter;
            let dy = rng.random::<f64>() * jitter;
            points.push([i as f64 * unit + dx, j as f64 * unit + dy]);
        }
    }
    PointSet::new(points)
}

/// First `n` points of the smallest perturbed grid in the unit square with at
/// least `n` points, using unit `1/side` and jitter `0.8/side`.
pub fn unit_square_points(n: usize, seed: u64) -> Result<PointSet> {
    let side = (n as f64).sqrt().ceil() as usize;
    let side = if side * side < n { side + 1 } else { side };
    let unit = 1.0 / side as f64;
    Ok(make_grid(side, unit, 0.8 * unit, seed)?.truncated(n))
}

fn spread_bits(x: u32) -> u64 {
    let mut x = x as u64 & 0xffff;
    x = (x | (x << 8)) & 0x00ff_00ff;
    x = (x | (x << 4)) & 0x0f0f_0f0f;
    x = (x | (x << 2)) & 0x3333_3333;
    x = (x | (x << 1)) & 0x5555_5555;
    x
}

/// Morton (Z-order) key of a quantized coordinate pair, x in the even bits.
pub fn morton_key(qx: u32, qy: u32) -> u64 {
    spread_bits(qx) | (spread_bits(qy) << 1)
}

/// Sorts points along the Morton curve after rescaling each axis to 16 bits.
/// Consecutive index blocks of length `min_cluster` then form spatial clusters.
pub fn morton_order(pts: &PointSet, min_cluster: usize) -> Result<Permutation> {
    if min_cluster == 0 {
        return Err(Error::Domain("cluster size must be at least 1".into()));
    }
    let quantize = |axis: usize| -> Vec<u32> {
        let lo = pts.points.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
        let hi = pts.points.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        pts.points
            .iter()
            .map(|p| {
                if span > 0.0 {
                    ((p[axis] - lo) / span * 65535.0).round() as u32
                } else {
                    0
                }
            })
            .collect()
    };
    let qx = quantize(0);
    let qy = quantize(1);
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    idx.sort_by_key(|&i| (morton_key(qx[i], qy[i]), i));
    Permutation::new(idx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Exponential,
}

/// Stationary isotropic covariance kernel with an optional nugget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub family: KernelFamily,
    pub sigma2: f64,
    pub beta: f64,
    #[serde(default)]
    pub nugget: f64,
}

impl Kernel {
    pub fn exponential(sigma2: f64, beta: f64, nugget: f64) -> Result<Self> {
        let k = Self { family: KernelFamily::Exponential, sigma2, beta, nugget };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0) || !(self.beta > 0.0) || !(self.nugget >= 0.0) {
            return Err(Error::Domain(format!(
                "kernel requires sigma2 > 0, beta > 0, nugget >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Covariance as a function of distance, without the nugget.
    #[inline]
    pub fn covariance(&self, d: f64) -> f64 {
        match self.family {
            KernelFamily::Exponential => self.sigma2 * (-d / self.beta).exp(),
        }
    }
}

#[inline]
fn dist(p: &[f64; 2], q: &[f64; 2]) -> f64 {
    (p[0] - q[0]).hypot(p[1] - q[1])
}

pub fn kernel_eval(k: &Kernel, p: &[f64; 2], q: &[f64; 2]) -> f64 {
    let c = k.covariance(dist(p, q));
    if p == q {
        c + k.nugget
    } else {
        c
    }
}

/// Covariance entries over an ordered point set, evaluated on demand.
#[derive(Clone, Debug)]
pub struct KernelOracle {
    kernel: Kernel,
    points: Vec<[f64; 2]>,
}

impl KernelOracle {
    pub fn new(kernel: Kernel, pts: &PointSet, perm: &Permutation) -> Self {
        Self { kernel, points: perm.apply(pts.points()) }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let c = self.kernel.covariance(dist(&self.points[i], &self.points[j]));
        if i == j {
            c + self.kernel.nugget
        } else {
            c
        }
    }
}

/// Dense covariance matrix over the permuted points.
pub fn assemble_dense(k: &Kernel, pts: &PointSet, perm: &Permutation) -> Result<DMatrix<f64>> {
    assemble_dense_capped(k, pts, perm, DENSE_CAP)
}

pub fn assemble_dense_capped(
    k: &Kernel,
    pts: &PointSet,
    perm: &Permutation,
    cap: usize,
) -> Result<DMatrix<f64>> {
    let n = pts.len();
    if n > cap {
        return Err(Error::CapExceeded { n, cap });
    }
    if perm.len() != n {
        return Err(Error::Shape(format!("permutation of length {} for {n} points", perm.len())));
    }
    let oracle = KernelOracle::new(*k, pts, perm);
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = oracle.entry(i, j);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_jitter_grid() {
        let g = make_grid(2, 1.0, 0.0, 9).unwrap();
        assert_eq!(g.points(), &[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]);
        assert!(make_grid(2, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn jittered_grid_bounds_and_determinism() {
        let g = make_grid(4, 0.25, 0.1, 5).unwrap();
        for (k, p) in g.points().iter().enumerate() {
            let (i, j) = (k / 4, k % 4);
            assert!(p[0] >= i as f64 * 0.25 && p[0] < i as f64 * 0.25 + 0.1);
            assert!(p[1] >= j as f64 * 0.25 && p[1] < j as f64 * 0.25 + 0.1);
        }
        let a = make_grid(16, 1.0 / 15.0, 0.8 / 15.0, 3).unwrap();
        let b = make_grid(16, 1.0 / 15.0, 0.8 / 15.0, 3).unwrap();
        assert_eq!(a.len(), 256);
        assert_eq!(a, b);
    }

    #[test]
    fn morton_small_cases() {
        let one = PointSet::new(vec![[0.3, 0.4]]).unwrap();
        assert!(morton_order(&one, 1).unwrap().is_identity());
        let g = PointSet::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]).unwrap();
        let p = morton_order(&g, 1).unwrap();
        let ordered = g.permuted(&p);
        assert_eq!(ordered.points(), &[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        assert_eq!(morton_key(1, 0), 1);
        assert_eq!(morton_key(0, 1), 2);
    }

    #[test]
    fn permutation_algebra() {
        let p = Permutation::new(vec![2, 0, 3, 1]).unwrap();
        let q = Permutation::new(vec![1, 3, 0, 2]).unwrap();
        let xs = vec!['a', 'b', 'c', 'd'];
        assert_eq!(p.then(&q).apply(&xs), q.apply(&p.apply(&xs)));
        assert!(p.then(&p.inverse()).is_identity());
        assert!(Permutation::new(vec![0, 0]).is_err());
    }

    #[test]
    fn kernel_values() {
        let k = Kernel::exponential(1.0, 0.3, 0.0).unwrap();
        assert_eq!(kernel_eval(&k, &[0.1, 0.1], &[0.1, 0.1]), 1.0);
        let v = kernel_eval(&k, &[0.0, 0.0], &[0.3, 0.0]);
        assert!((v - (-1f64).exp()).abs() < 1e-15);
        let k2 = Kernel::exponential(2.0, 0.3, 0.0).unwrap();
        assert_eq!(kernel_eval(&k2, &[0.0, 0.0], &[1e6, 0.0]), 0.0);
        assert!(Kernel::exponential(0.0, 1.0, 0.0).is_err());
        let json = serde_json::to_string(&k).unwrap();
        assert_eq!(json, r#"{"family":"exponential","sigma2":1.0,"beta":0.3,"nugget":0.0}"#);
    }

    #[test]
    fn dense_assembly() {
        let k = Kernel::exponential(1.5, 0.3, 0.25).unwrap();
        let one = PointSet::new(vec![[0.0, 0.0]]).unwrap();
        let a = assemble_dense(&k, &one, &Permutation::identity(1)).unwrap();
        assert_eq!(a[(0, 0)], 1.75);
        let two = PointSet::new(vec![[0.0, 0.0], [0.0, 0.3]]).unwrap();
        let k1 = Kernel::exponential(1.0, 0.3, 0.0).unwrap();
        let a = assemble_dense(&k1, &two, &Permutation::identity(2)).unwrap();
        assert!((a[(1, 0)] - (-1f64).exp()).abs() < 1e-15);
        let big = unit_square_points(10, 1).unwrap();
        assert!(assemble_dense_capped(&k, &big, &Permutation::identity(10), 5).is_err());
    }
}
