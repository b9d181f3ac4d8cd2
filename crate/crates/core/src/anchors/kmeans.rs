//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<[f64; 2]>,
    pub assignment: Vec<usize>,
    /// Within-cluster SSE after each Lloyd iteration.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansResult {
    pub fn sse(&self) -> f64 {
        self.sse_history.last().copied().unwrap_or(f64::INFINITY)
    }
}

fn d2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    dx * dx + dy * dy
}

/// Nearest centroid; ties go to the lowest index.
fn nearest(p: [f64; 2], centroids: &[[f64; 2]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, &c) in centroids.iter().enumerate() {
        let d = d2(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(points: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let mut chosen = vec![false; points.len()];
    let first = rng.gen_range(0..points.len());
    chosen[first] = true;
    let mut centroids = vec![points[first]];
    let mut dist: Vec<f64> = points.iter().map(|&p| d2(p, points[first])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.gen_range(0.0..total);
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if r < d {
                        break;
                    }
                    r -= d;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            // Only duplicates left.
            let free: Vec<usize> = (0..points.len()).filter(|&i| !chosen[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen[idx] = true;
        let c = points[idx];
        centroids.push(c);
        for (d, &p) in dist.iter_mut().zip(points) {
            *d = d.min(d2(p, c));
        }
    }
    centroids
}

/// Clusters `points` into `k` groups. Deterministic for a given seed. An
/// empty cluster is re-seeded at the point farthest from its centroid.
pub fn kmeans(points: &[[f64; 2]], k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<KMeansResult> {
    if k == 0 || points.len() < k {
        return Err(Error::TooFewPoints { n: points.len(), k });
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignment = vec![0; points.len()];
    let mut sse_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut cost: Vec<f64> = Vec::with_capacity(points.len());
        for (a, &p) in assignment.iter_mut().zip(points) {
            let (j, d) = nearest(p, &centroids);
            *a = j;
            cost.push(d);
        }
        let mut sum = vec![[0.0; 2]; k];
        let mut count = vec![0usize; k];
        for (&a, &p) in assignment.iter().zip(points) {
            sum[a][0] += p[0];
            sum[a][1] += p[1];
            count[a] += 1;
        }
        let mut shift: f64 = 0.0;
        let mut next = centroids.clone();
        for j in 0..k {
            if count[j] > 0 {
                next[j] = [sum[j][0] / count[j] as f64, sum[j][1] / count[j] as f64];
            }
        }
        for (j, &c) in count.iter().enumerate() {
            if c == 0 {
                let far = (0..points.len())
                    .max_by(|&a, &b| cost[a].total_cmp(&cost[b]).then(b.cmp(&a)))
                    .expect("non-empty");
                next[j] = points[far];
                cost[far] = -1.0;
            }
        }
        for j in 0..k {
            shift = shift.max(d2(next[j], centroids[j]).sqrt());
        }
        centroids = next;
        sse_history.push(
            assignment
                .iter()
                .zip(points)
                .map(|(&a, &p)| d2(p, centroids[a]))
                .sum(),
        );
        if shift < tol {
            converged = true;
            break;
        }
    }
    Ok(KMeansResult {
        centroids,
        assignment,
        sse_history,
        iterations,
        converged,
    })
}
