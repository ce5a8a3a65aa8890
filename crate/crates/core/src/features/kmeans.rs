//! Lloyd's k-means with k-means++ seeding.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

const MIN_IMPROVEMENT: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOutput {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub objective: f64,
    /// Objective after every assignment step, starting with the seeding.
    pub objective_trace: Vec<f64>,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid and its squared distance; ties go to the
/// lower index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, f64) {
    let mut assignments = Vec::with_capacity(points.len());
    let mut dists = Vec::with_capacity(points.len());
    let mut objective = 0.0;
    for p in points {
        let (i, d) = nearest(p, centroids);
        assignments.push(i);
        dists.push(d);
        objective += d;
    }
    (assignments, dists, objective)
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut SplitMix64) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.below(n as u64) as usize].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut chosen = d2.iter().rposition(|d| *d > 0.0).unwrap_or(n - 1);
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.below(n as u64) as usize
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn update(
    points: &[Vec<f64>],
    assignments: &[usize],
    dists: &[f64],
    k: usize,
    dim: usize,
) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    // Empty clusters take the points farthest from their centroids.
    let mut far: Vec<usize> = (0..points.len()).collect();
    far.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
    let mut far = far.into_iter();
    sums.into_iter()
        .zip(&counts)
        .map(|(s, &c)| {
            if c > 0 {
                s.into_iter().map(|v| v / c as f64).collect()
            } else {
                far.next().map(|i| points[i].clone()).unwrap_or(s)
            }
        })
        .collect()
}

/// Deterministic for a given `(points, k, seed, max_iter)`.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeansOutput> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if points.len() < k {
        return Err(Error::invalid(format!("{} points cannot form {k} clusters", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("points differ in dimension"));
    }

    let mut rng = SplitMix64::new(seed);
    let mut centroids = seed_plus_plus(points, k, &mut rng);
    let (mut assignments, mut dists, mut objective) = assign(points, &centroids);
    let mut trace = vec![objective];
    for _ in 0..max_iter {
        let next = update(points, &assignments, &dists, k, dim);
        let (a, d, obj) = assign(points, &next);
        trace.push(obj);
        let improvement = objective - obj;
        centroids = next;
        assignments = a;
        dists = d;
        objective = obj;
        if improvement < MIN_IMPROVEMENT {
            break;
        }
    }
    Ok(KMeansOutput { centroids, assignments, objective, objective_trace: trace })
}
