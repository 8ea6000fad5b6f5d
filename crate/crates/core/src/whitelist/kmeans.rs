use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansConfig {
    pub max_iters: usize,
    /// Scale points to unit length before clustering.
    pub normalize: bool,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            max_iters: 50,
            normalize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Inertia after each assignment pass.
    pub inertia: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid and its squared distance; ties go to the lower index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn unit(p: &[f64]) -> Vec<f64> {
    let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        p.iter().map(|v| v / norm).collect()
    } else {
        p.to_vec()
    }
}

/// k-means++ seeding followed by Lloyd iterations on squared Euclidean
/// distance. Stops after `max_iters` passes or once assignments repeat.
pub fn kmeans(points: &[Vec<f64>], k: usize, config: &KMeansConfig, seed: u64) -> Result<KMeansResult> {
    let n = points.len();
    if k == 0 {
        return Err(Error::invalid("kmeans needs k >= 1"));
    }
    if n < k {
        return Err(Error::invalid(format!("kmeans needs at least k = {k} points, got {n}")));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::invalid("kmeans points have different dimensions"));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kmeans input contains a non-finite value".into()));
    }
    let owned: Vec<Vec<f64>>;
    let points: &[Vec<f64>] = if config.normalize {
        owned = points.iter().map(|p| unit(p)).collect();
        &owned
    } else {
        points
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(points, k, &mut rng);

    let mut assignments = vec![usize::MAX; n];
    let mut inertia = Vec::new();
    let mut iterations = 0;
    while iterations < config.max_iters.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (j, dist) = nearest(p, &centroids);
            changed |= assignments[i] != j;
            assignments[i] = j;
            total += dist;
        }
        inertia.push(total);
        if !changed || iterations == config.max_iters.max(1) {
            break;
        }
        centroids = update(points, &assignments, k, d);
        reseed_empty(points, &mut assignments, &mut centroids);
    }
    Ok(KMeansResult {
        centroids,
        assignments,
        inertia,
        iterations,
    })
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in dist.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // Every remaining point coincides with a centroid.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.push(points[pick].clone());
        let c = centroids.last().expect("just pushed");
        for (i, p) in points.iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(p, c));
        }
    }
    centroids
}

fn update(points: &[Vec<f64>], assignments: &[usize], k: usize, d: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &j) in points.iter().zip(assignments) {
        counts[j] += 1;
        for (s, v) in sums[j].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

/// Moves each empty cluster onto the point farthest from its own centroid.
fn reseed_empty(points: &[Vec<f64>], assignments: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &j in assignments.iter() {
        counts[j] += 1;
    }
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let far = points
            .iter()
            .enumerate()
            .filter(|(i, _)| counts[assignments[*i]] > 1)
            .map(|(i, p)| (i, sq_dist(p, &centroids[assignments[i]])))
            .fold(None, |best: Option<(usize, f64)>, (i, dist)| match best {
                Some((_, b)) if b >= dist => best,
                _ => Some((i, dist)),
            });
        if let Some((i, _)) = far {
            counts[assignments[i]] -= 1;
            assignments[i] = j;
            counts[j] = 1;
            centroids[j] = points[i].clone();
        }
    }
}
