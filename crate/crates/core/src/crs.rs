//! Controlled random search with local mutation for box-constrained
//! maximization of a possibly noisy objective.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrsOptions {
    pub max_iter: usize,
    /// Defaults to `10 (d + 1)`.
    pub pop_size: Option<usize>,
    pub seed: u64,
    /// Stop once every population member lies within `tol` times the box
    /// diameter of the best point.
    pub tol: f64,
}

impl Default for CrsOptions {
    fn default() -> Self {
        Self { max_iter: 1000, pop_size: None, seed: 0, tol: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrsResult {
    pub x: Vec<f64>,
    pub f: f64,
    /// Best value after initialization and after every iteration.
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

/// Maximizes `objective` over the box `[lo, hi]`. The initial population is
/// `init` plus uniform draws; non-finite objective values rank last.
pub fn crs_optimize<F>(mut objective: F, lo: &[f64], hi: &[f64], init: &[f64], opts: &CrsOptions) -> Result<CrsResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let d = lo.len();
    if d == 0 || hi.len() != d || init.len() != d {
        return Err(Error::Shape("box bounds and initial point must share a positive dimension".into()));
    }
    if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
        return Err(Error::Config("every lower bound must be below its upper bound".into()));
    }
    if init.iter().zip(lo.iter().zip(hi)).any(|(x, (l, h))| !(x >= l && x <= h)) {
        return Err(Error::Config("initial point lies outside the box".into()));
    }
    let np = opts.pop_size.unwrap_or(10 * (d + 1));
    if np < d + 1 {
        return Err(Error::Config(format!("population size {np} is below dimension + 1 = {}", d + 1)));
    }
    let diameter = lo.iter().zip(hi).map(|(l, h)| (h - l) * (h - l)).sum::<f64>().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut eval = |x: &[f64], count: &mut usize| {
        *count += 1;
        let v = objective(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let mut evaluations = 0;
    let mut pop: Vec<Vec<f64>> = Vec::with_capacity(np);
    let mut val: Vec<f64> = Vec::with_capacity(np);
    pop.push(init.to_vec());
    val.push(eval(init, &mut evaluations));
    while pop.len() < np {
        let x: Vec<f64> = (0..d).map(|j| lo[j] + rng.random::<f64>() * (hi[j] - lo[j])).collect();
        val.push(eval(&x, &mut evaluations));
        pop.push(x);
    }
    let inside = |x: &[f64]| x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| v >= l && v <= h);
    let best_of = |val: &[f64]| (0..val.len()).fold(0, |b, i| if val[i] > val[b] { i } else { b });
    let worst_of = |val: &[f64]| (0..val.len()).fold(0, |w, i| if val[i] < val[w] { i } else { w });

    let mut trace = vec![val[best_of(&val)]];
    for _ in 0..opts.max_iter {
        let best = best_of(&val);
        let spread = pop
            .iter()
            .map(|x| x.iter().zip(&pop[best]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if spread < opts.tol * diameter {
            break;
        }
        let worst = worst_of(&val);
        // Simplex: the best point plus d distinct others; the last one is reflected.
        let others: Vec<usize> = sample(&mut rng, np - 1, d).into_iter().map(|i| if i >= best { i + 1 } else { i }).collect();
        let mut centroid = pop[best].clone();
        for &i in &others[..d - 1] {
            for (c, v) in centroid.iter_mut().zip(&pop[i]) {
                *c += v;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= d as f64);
        let reflected: Vec<f64> = centroid.iter().zip(&pop[others[d - 1]]).map(|(g, x)| 2.0 * g - x).collect();

        let mut accepted = false;
        if inside(&reflected) {
            let f = eval(&reflected, &mut evaluations);
            if f > val[worst] {
                pop[worst] = reflected.clone();
                val[worst] = f;
                accepted = true;
            }
        }
        if !accepted {
            let mutated: Vec<f64> = pop[best]
                .iter()
                .zip(&reflected)
                .map(|(b, t)| {
                    let w: f64 = rng.random();
                    (1.0 + w) * b - w * t
                })
                .collect();
            if inside(&mutated) {
                let f = eval(&mutated, &mut evaluations);
                if f > val[worst] {
                    pop[worst] = mutated;
                    val[worst] = f;
                }
            }
        }
        trace.push(val[best_of(&val)]);
    }
    let best = best_of(&val);
    Ok(CrsResult { x: pop[best].clone(), f: val[best], trace, evaluations })
}
