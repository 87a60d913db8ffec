//! Seeded k-means with k-means++ initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

impl KMeansResult {
    /// Point indices per cluster; empty clusters stay empty.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.centroids.len()];
        for (i, &c) in self.assignments.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Lloyd iterations from a k-means++ start; equidistant points go to the lowest-index centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iter: usize, seed: u64) -> Result<KMeansResult> {
    if points.is_empty() {
        return Err(Error::Empty("k-means points"));
    }
    if k == 0 || k > points.len() {
        return Err(Error::InvalidParameter(format!(
            "k must lie in [1, {}], got {k}",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = d2.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // every point coincides with a centroid already
            0
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }

    let dim = points[0].len();
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            sums[c].iter_mut().zip(p).for_each(|(s, x)| *s += x);
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    Ok(KMeansResult {
        centroids,
        assignments,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_blobs() {
        let mut pts = Vec::new();
        for i in 0..10 {
            pts.push(vec![0.0 + 0.01 * i as f64, 0.0]);
            pts.push(vec![10.0, 10.0 + 0.01 * i as f64]);
        }
        let r = kmeans(&pts, 2, 100, 3).unwrap();
        let a = r.assignments[0];
        for (i, &c) in r.assignments.iter().enumerate() {
            assert_eq!(c == a, i % 2 == 0);
        }
    }

    #[test]
    fn identical_points_share_one_group() {
        let pts = vec![vec![0.5, 0.5]; 12];
        let r = kmeans(&pts, 4, 100, 0).unwrap();
        let non_empty = r.members().iter().filter(|m| !m.is_empty()).count();
        assert_eq!(non_empty, 1);
        assert!(r.centroids.iter().all(|c| c == &pts[0]));
    }

    #[test]
    fn deterministic_for_seed() {
        let pts: Vec<Vec<f64>> = (0..50).map(|i| vec![(i * 7 % 13) as f64, (i * 3 % 5) as f64]).collect();
        assert_eq!(kmeans(&pts, 5, 100, 9).unwrap(), kmeans(&pts, 5, 100, 9).unwrap());
        assert!(kmeans(&pts, 0, 100, 9).is_err());
        assert!(kmeans(&[], 1, 100, 9).is_err());
    }
}
