//! Lloyd's K-Means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster index per row; the one-hot indication matrix is [`Self::indication`].
    pub assignment: Vec<usize>,
    pub centroids: Matrix<f64>,
    pub sse: f64,
    pub iterations_run: usize,
    /// SSE after each Lloyd iteration, oldest first.
    pub sse_history: Vec<f64>,
}

impl KMeansResult {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn indication(&self) -> Matrix<u8> {
        let mut m = Matrix::zeros(self.assignment.len(), self.k());
        for (i, &c) in self.assignment.iter().enumerate() {
            m.set(i, c, 1);
        }
        m
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }
}

fn validate(data: &Matrix<f64>, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if data.cols() == 0 {
        return Err(Error::invalid("data must have at least one column"));
    }
    if data.rows() < k {
        return Err(Error::InsufficientPoints {
            points: data.rows(),
            clusters: k,
        });
    }
    if !data.as_slice().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("k-means input"));
    }
    Ok(())
}

/// Clusters the rows of `data` into `k` groups.
///
/// Output is a pure function of `(data, k, seed, max_iter)`.
pub fn kmeans(data: &Matrix<f64>, k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    validate(data, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = plus_plus_seeds(data, k, &mut rng);
    lloyd(data, init, max_iter)
}

/// Runs Lloyd iterations from explicit initial centroids.
pub fn kmeans_from_centroids(
    data: &Matrix<f64>,
    init: Matrix<f64>,
    max_iter: usize,
) -> Result<KMeansResult> {
    validate(data, init.rows())?;
    if init.cols() != data.cols() {
        return Err(Error::invalid("initial centroids have the wrong dimension"));
    }
    lloyd(data, init, max_iter)
}

fn plus_plus_seeds(data: &Matrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    let m = data.rows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..m));
    let mut d2: Vec<f64> = (0..m)
        .map(|i| squared_distance(data.row(i), data.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..m)
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_distance(data.row(i), data.row(next)));
        }
    }
    data.select_rows(&chosen)
}

fn nearest(row: &[f64], centroids: &Matrix<f64>) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter_rows().enumerate() {
        let d = squared_distance(row, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    (best, best_d)
}

fn lloyd(data: &Matrix<f64>, mut centroids: Matrix<f64>, max_iter: usize) -> Result<KMeansResult> {
    let k = centroids.rows();
    let mut assignment: Vec<usize> = Vec::new();
    let mut sse_history = Vec::new();
    let mut iterations_run = 0;

    for _ in 0..max_iter.max(1) {
        let mut next: Vec<usize> = (0..data.rows())
            .into_par_iter()
            .map(|i| nearest(data.row(i), &centroids).0)
            .collect();
        reseed_empty(data, &centroids, &mut next, k);
        let changed = next != assignment;
        assignment = next;
        centroids = update_centroids(data, &assignment, k);
        sse_history.push(sse(data, &assignment, &centroids));
        iterations_run += 1;
        if !changed {
            break;
        }
    }

    let sse = *sse_history.last().expect("at least one iteration");
    Ok(KMeansResult {
        assignment,
        centroids,
        sse,
        iterations_run,
        sse_history,
    })
}

/// Moves, for each empty cluster, the point farthest from its current
/// centroid into that cluster. Donor clusters keep at least one member.
fn reseed_empty(data: &Matrix<f64>, centroids: &Matrix<f64>, assignment: &mut [usize], k: usize) {
    let mut sizes = vec![0usize; k];
    for &c in assignment.iter() {
        sizes[c] += 1;
    }
    let mut moved = vec![false; assignment.len()];
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = -1.0;
        for (i, &c) in assignment.iter().enumerate() {
            if moved[i] || sizes[c] < 2 {
                continue;
            }
            let d = squared_distance(data.row(i), centroids.row(c));
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        // m >= k guarantees a donor exists.
        let i = far.expect("a cluster with at least two members");
        sizes[assignment[i]] -= 1;
        assignment[i] = empty;
        sizes[empty] = 1;
        moved[i] = true;
    }
}

fn update_centroids(data: &Matrix<f64>, assignment: &[usize], k: usize) -> Matrix<f64> {
    let d = data.cols();
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (i, &c) in assignment.iter().enumerate() {
        counts[c] += 1;
        for (s, v) in sums.row_mut(c).iter_mut().zip(data.row(i)) {
            *s += v;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        let inv = 1.0 / count as f64;
        sums.row_mut(c).iter_mut().for_each(|s| *s *= inv);
    }
    sums
}

fn sse(data: &Matrix<f64>, assignment: &[usize], centroids: &Matrix<f64>) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &c)| squared_distance(data.row(i), centroids.row(c)))
        .sum()
}
