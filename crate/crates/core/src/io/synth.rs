//! Seeded synthetic scenes standing in for a real dataset and backbone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scene::{ClassNames, FrameParts, SceneFrame};

/// Width of the raw per-point features: position followed by a colour triple.
pub const RAW_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub base_class_count: usize,
    pub novel_class_count: usize,
    pub points_per_class: usize,
    pub feature_dim: usize,
    /// Distance between class centroids in feature space, in units of the
    /// per-axis feature noise.
    pub feature_separation: f64,
    /// Radius of each class's spatial ball, in meters.
    pub spatial_blob_radius: f64,
    /// Spacing of the grid holding the ball centres, in meters.
    pub blob_spacing: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            base_class_count: 6,
            novel_class_count: 2,
            points_per_class: 200,
            feature_dim: 16,
            feature_separation: 8.0,
            spatial_blob_radius: 0.3,
            blob_spacing: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base_class_count == 0 {
            return Err(Error::invalid("base_class_count must be at least 1"));
        }
        if self.points_per_class == 0 {
            return Err(Error::invalid("points_per_class must be at least 1"));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be at least 1"));
        }
        if !(self.feature_separation >= 0.0 && self.feature_separation.is_finite()) {
            return Err(Error::invalid("feature_separation must be finite and non-negative"));
        }
        if !(self.spatial_blob_radius > 0.0 && self.spatial_blob_radius.is_finite()) {
            return Err(Error::invalid("spatial_blob_radius must be positive"));
        }
        if !(self.blob_spacing > 0.0 && self.blob_spacing.is_finite()) {
            return Err(Error::invalid("blob_spacing must be positive"));
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.base_class_count + self.novel_class_count
    }
}

/// Centroids at pairwise distance of at least `sep`. With enough dimensions
/// they sit on scaled coordinate axes, so every pair is exactly `sep` apart.
fn feature_centroids(count: usize, dim: usize, sep: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    if sep == 0.0 {
        return vec![vec![0.0; dim]; count];
    }
    if dim >= count {
        let a = sep / std::f64::consts::SQRT_2;
        return (0..count)
            .map(|c| {
                let mut v = vec![0.0; dim];
                v[c] = a;
                v
            })
            .collect();
    }
    let mut half = sep * (count as f64).powf(1.0 / dim as f64);
    loop {
        let mut cents: Vec<Vec<f64>> = Vec::with_capacity(count);
        for _ in 0..1000 {
            if cents.len() == count {
                break;
            }
            let cand: Vec<f64> = (0..dim).map(|_| rng.random_range(-half..=half)).collect();
            let ok = cents.iter().all(|c| {
                c.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() >= sep * sep
            });
            if ok {
                cents.push(cand);
            }
        }
        if cents.len() == count {
            return cents;
        }
        half *= 1.5;
    }
}

fn ball_point(center: [f64; 3], radius: f64, rng: &mut ChaCha8Rng) -> [f32; 3] {
    loop {
        let v: [f64; 3] = [
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        ];
        if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
            return [
                (center[0] + radius * v[0]) as f32,
                (center[1] + radius * v[1]) as f32,
                (center[2] + radius * v[2]) as f32,
            ];
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Generates a scene with one spatial ball and one feature cluster per class.
///
/// Closed-world logits are negative distances to the base centroids. The
/// unknown logit is `-(2τ - d_min)`, so unknown wins exactly when the nearest
/// base centroid is farther than `τ`, the geometric mean of the typical
/// distance to the own centroid (`√f`) and to any other one (`√(s² + f)`).
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SceneFrame> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (b, c, m, f) = (
        spec.base_class_count,
        spec.class_count(),
        spec.points_per_class,
        spec.feature_dim,
    );
    let sep = spec.feature_separation;
    let centroids = feature_centroids(c, f, sep, &mut rng);
    let fd = f as f64;
    let tau = (fd * (sep * sep + fd)).sqrt().sqrt();

    let cols = (c as f64).sqrt().ceil() as usize;
    let n = c * m;
    let mut positions = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n * RAW_DIM);
    let mut features = Vec::with_capacity(n * f);
    let mut logits = Vec::with_capacity(n * (b + 1));
    let mut gt = Vec::with_capacity(n);

    for class in 0..c {
        let center = [
            (class % cols) as f64 * spec.blob_spacing,
            (class / cols) as f64 * spec.blob_spacing,
            0.0,
        ];
        let colour: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let gt_label = if class < b { class } else { class + 1 };
        for _ in 0..m {
            let p = ball_point(center, spec.spatial_blob_radius, &mut rng);
            positions.push(p);
            raw.extend_from_slice(&p);
            for ch in colour {
                let noise: f64 = StandardNormal.sample(&mut rng);
                raw.push((ch + 0.05 * noise).clamp(0.0, 1.0) as f32);
            }
            let feat: Vec<f64> = centroids[class]
                .iter()
                .map(|&mu| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    mu + noise
                })
                .collect();
            let d: Vec<f64> = centroids[..b].iter().map(|cen| dist(&feat, cen)).collect();
            let d_min = d.iter().cloned().fold(f64::INFINITY, f64::min);
            logits.extend(d.iter().map(|&dc| -dc as f32));
            logits.push(-(2.0 * tau - d_min) as f32);
            features.extend(feat.iter().map(|&v| v as f32));
            gt.push(gt_label as i32);
        }
    }

    let parts = FrameParts {
        positions,
        raw_features: Matrix::from_vec(n, RAW_DIM, raw).expect("sized"),
        features: Matrix::from_vec(n, f, features).expect("sized"),
        closed_logits: Matrix::from_vec(n, b + 1, logits).expect("sized"),
        gt_labels: Some(gt),
        block_ids: None,
        class_names: ClassNames {
            base: (0..b).map(|i| format!("base{i}")).collect(),
            novel: (0..spec.novel_class_count).map(|i| format!("novel{i}")).collect(),
        },
    };
    SceneFrame::new(parts)
}
