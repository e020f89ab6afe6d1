use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub batch_size: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            batch_size: 32,
            max_iter: 100,
            seed,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties go to the lowest index.
fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(x, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
        let last = centers.last().expect("non-empty");
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, last));
        }
    }
    centers
}

/// Mini-batch k-means with k-means++ seeding and per-center learning rate
/// `1 / count`. Returns a cluster index per point.
pub fn mini_batch_kmeans(points: &[Vec<f64>], config: &KMeansConfig) -> Result<Vec<usize>> {
    let n = points.len();
    if config.k == 0 {
        return Err(Error::Input("k must be at least 1".into()));
    }
    if n < config.k {
        return Err(Error::Input(format!(
            "{n} points cannot form {} clusters",
            config.k
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centers = kmeans_pp(points, config.k, &mut rng);
    let mut counts = vec![0usize; config.k];
    let b = config.batch_size.min(n).max(1);
    for _ in 0..config.max_iter {
        let batch = index::sample(&mut rng, n, b).into_vec();
        let assign: Vec<usize> = batch
            .iter()
            .map(|&i| nearest(&points[i], &centers).0)
            .collect();
        for (&i, &c) in batch.iter().zip(&assign) {
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            for (m, x) in centers[c].iter_mut().zip(&points[i]) {
                *m += eta * (x - *m);
            }
        }
    }
    Ok(points.iter().map(|p| nearest(p, &centers).0).collect())
}
