//! Prototype construction, point–prototype correspondence and click-driven
//! disambiguation of prototypes that mix annotated classes.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::clustering::kmeans;
use crate::error::{Error, Result};
use crate::matrix::{argmax, dot, normalize_in_place, Matrix};
use crate::scene::{AnnotationSet, LabelId, PrototypeSet, SceneFrame};

const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentationKind {
    /// Backbone features followed by the one-hot closed-world prediction.
    Category,
    /// Backbone features followed by one distance-kernel channel per annotation.
    Distance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedFeatures {
    pub rows: Matrix<f64>,
    pub kind: AugmentationKind,
}

pub fn build_category_augmented(frame: &SceneFrame) -> AugmentedFeatures {
    let f = frame.feature_dim();
    let c = frame.base_class_count() + 1;
    let mut rows = Matrix::zeros(frame.len(), f + c);
    let argmax = frame.closed_argmax();
    for i in 0..frame.len() {
        let row = rows.row_mut(i);
        for (dst, &src) in row[..f].iter_mut().zip(frame.features().row(i)) {
            *dst = src as f64;
        }
        row[f + argmax[i]] = 1.0;
    }
    AugmentedFeatures {
        rows,
        kind: AugmentationKind::Category,
    }
}

/// Masked average of the original features over each cluster, L2-normalized.
fn pooled_prototypes(features: &Matrix<f64>, assignment: &[usize], k: usize) -> Matrix<f64> {
    let mut sums = Matrix::zeros(k, features.cols());
    let mut counts = vec![0usize; k];
    for (i, &c) in assignment.iter().enumerate() {
        counts[c] += 1;
        for (s, v) in sums.row_mut(c).iter_mut().zip(features.row(i)) {
            *s += v;
        }
    }
    for c in 0..k {
        let row = sums.row_mut(c);
        let inv = 1.0 / counts[c].max(1) as f64;
        row.iter_mut().for_each(|s| *s *= inv);
        if !normalize_in_place(row) {
            // A zero mean has no direction; fall back to the first axis.
            row[0] = 1.0;
        }
    }
    sums
}

/// Builds the initial prototypes: K-Means on category-augmented features,
/// then masked average pooling of the original features.
pub fn init_prototypes(frame: &SceneFrame, k: usize, seed: u64) -> Result<PrototypeSet> {
    let augmented = build_category_augmented(frame);
    let clusters = kmeans(&augmented.rows, k, seed, KMEANS_MAX_ITER)?;
    let features = frame.features().to_f64();
    let vectors = pooled_prototypes(&features, &clusters.assignment, k);
    let mut set = PrototypeSet::new(vectors, 0);
    set.member_counts = clusters.cluster_sizes();
    Ok(set)
}

/// Hard point → prototype assignment by cosine similarity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correspondence {
    pub assignment: Vec<usize>,
    pub prototype_count: usize,
    /// Points whose feature row has zero norm; they were assigned by raw dot product.
    pub zero_norm_points: Vec<usize>,
}

impl Correspondence {
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn one_hot(&self) -> Matrix<u8> {
        let mut m = Matrix::zeros(self.assignment.len(), self.prototype_count);
        for (i, &k) in self.assignment.iter().enumerate() {
            m.set(i, k, 1);
        }
        m
    }

    pub fn column_sums(&self) -> Vec<usize> {
        let mut sums = vec![0; self.prototype_count];
        for &k in &self.assignment {
            sums[k] += 1;
        }
        sums
    }

    pub fn members(&self, prototype: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &k)| k == prototype)
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn correspondence(frame: &SceneFrame, prototypes: &PrototypeSet) -> Correspondence {
    assert!(!prototypes.is_empty(), "correspondence needs at least one prototype");
    let features = frame.features();
    let results: Vec<(usize, bool)> = (0..frame.len())
        .into_par_iter()
        .map(|i| {
            let mut f: Vec<f64> = features.row(i).iter().map(|&v| v as f64).collect();
            let normalized = normalize_in_place(&mut f);
            let sims: Vec<f64> = prototypes
                .vectors
                .iter_rows()
                .map(|p| dot(&f, p))
                .collect();
            (argmax(&sims), !normalized)
        })
        .collect();
    Correspondence {
        assignment: results.iter().map(|r| r.0).collect(),
        prototype_count: prototypes.len(),
        zero_norm_points: results
            .iter()
            .enumerate()
            .filter(|(_, r)| r.1)
            .map(|(i, _)| i)
            .collect(),
    }
}

/// Distinct annotation labels among the members of each prototype.
fn annotated_classes(corr: &Correspondence, annotations: &AnnotationSet) -> Vec<BTreeSet<LabelId>> {
    let mut classes = vec![BTreeSet::new(); corr.prototype_count];
    for a in annotations.iter() {
        classes[corr.assignment[a.point]].insert(a.label);
    }
    classes
}

/// Flags and returns the prototypes whose members carry at least two
/// distinct annotation labels.
pub fn find_ambiguous(
    prototypes: &mut PrototypeSet,
    corr: &Correspondence,
    annotations: &AnnotationSet,
) -> Vec<usize> {
    let classes = annotated_classes(corr, annotations);
    prototypes.ambiguous_flags = classes.iter().map(|c| c.len() >= 2).collect();
    prototypes
        .ambiguous_flags
        .iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .map(|(k, _)| k)
        .collect()
}

/// Gaussian-style kernel of 3-D distances from member points (rows) to
/// annotated points (columns): `exp(-‖p_i - q_j‖ / (2σ²))`.
pub fn distance_map(
    frame: &SceneFrame,
    members: &[usize],
    annotation_points: &[usize],
    sigma: f64,
) -> Matrix<f64> {
    let denom = 2.0 * sigma * sigma;
    let mut m = Matrix::zeros(members.len(), annotation_points.len());
    for (r, &i) in members.iter().enumerate() {
        let p = frame.position(i);
        for (c, &j) in annotation_points.iter().enumerate() {
            let q = frame.position(j);
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            m.set(r, c, (-d / denom).exp());
        }
    }
    m
}

fn build_distance_augmented(
    frame: &SceneFrame,
    members: &[usize],
    annotation_points: &[usize],
    sigma: f64,
) -> AugmentedFeatures {
    let f = frame.feature_dim();
    let dmap = distance_map(frame, members, annotation_points, sigma);
    let width = f + annotation_points.len();
    let mut rows = Matrix::zeros(members.len(), width);
    for (r, &i) in members.iter().enumerate() {
        let row = rows.row_mut(r);
        for (dst, &src) in row[..f].iter_mut().zip(frame.features().row(i)) {
            *dst = src as f64;
        }
        row[f..].copy_from_slice(dmap.row(r));
    }
    AugmentedFeatures {
        rows,
        kind: AugmentationKind::Distance,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisambiguationParams {
    pub sigma: f64,
    pub max_rounds: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisambiguationOutcome {
    pub prototypes: PrototypeSet,
    pub correspondence: Correspondence,
    pub rounds: usize,
    /// Ambiguous prototype count at the start of each round, plus the final count.
    pub ambiguous_per_round: Vec<usize>,
    pub diagnostics: Vec<String>,
}

/// Deterministic 64-bit mix of the session seed with a prototype index and generation.
pub(crate) fn derive_seed(seed: u64, prototype: usize, generation: u32) -> u64 {
    let mut z = seed
        ^ (prototype as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (generation as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Splits one ambiguous prototype into sub-prototypes.
fn split_prototype(
    frame: &SceneFrame,
    members: &[usize],
    annotations: &AnnotationSet,
    corr: &Correspondence,
    prototype: usize,
    generation: u32,
    params: &DisambiguationParams,
    diagnostics: &mut Vec<String>,
) -> Result<Matrix<f64>> {
    let annotated: Vec<(usize, LabelId)> = annotations
        .iter()
        .filter(|a| corr.assignment[a.point] == prototype)
        .map(|a| (a.point, a.label))
        .collect();
    let annotated_points: Vec<usize> = annotated.iter().map(|a| a.0).collect();
    let class_count = annotated.iter().map(|a| a.1).collect::<BTreeSet<_>>().len();
    let features = frame.features().to_f64().select_rows(members);

    if class_count > members.len() {
        // Degenerate guard: one singleton per annotated point plus the remainder.
        diagnostics.push(format!(
            "prototype {prototype}: {class_count} classes for {} members, using singleton split",
            members.len()
        ));
        let mut assignment = vec![annotated_points.len(); members.len()];
        for (slot, p) in annotated_points.iter().enumerate() {
            let r = members.iter().position(|m| m == p).expect("annotated point is a member");
            assignment[r] = slot;
        }
        let k = if annotated_points.len() < members.len() {
            annotated_points.len() + 1
        } else {
            annotated_points.len()
        };
        return Ok(pooled_prototypes(&features, &assignment, k));
    }

    let augmented = build_distance_augmented(frame, members, &annotated_points, params.sigma);
    let seed = derive_seed(params.seed, prototype, generation);
    let clusters = kmeans(&augmented.rows, class_count, seed, KMEANS_MAX_ITER)?;
    Ok(pooled_prototypes(&features, &clusters.assignment, class_count))
}

/// One replacement pass: every ambiguous prototype is substituted in place by
/// its sub-prototypes; survivors are kept unchanged.
pub fn disambiguate_once(
    frame: &SceneFrame,
    prototypes: &PrototypeSet,
    corr: &Correspondence,
    annotations: &AnnotationSet,
    params: &DisambiguationParams,
    diagnostics: &mut Vec<String>,
) -> Result<PrototypeSet> {
    let mut scratch = prototypes.clone();
    let ambiguous = find_ambiguous(&mut scratch, corr, annotations);
    if ambiguous.is_empty() {
        diagnostics.push("no ambiguous prototype; disambiguation skipped".into());
        return Ok(prototypes.clone());
    }
    let generation = prototypes.generation;
    let splits: Vec<Result<(usize, Matrix<f64>, Vec<String>)>> = ambiguous
        .par_iter()
        .map(|&k| {
            let members = corr.members(k);
            let mut local = Vec::new();
            let subs = split_prototype(
                frame, &members, annotations, corr, k, generation, params, &mut local,
            )?;
            Ok((k, subs, local))
        })
        .collect();
    let mut replacements = std::collections::BTreeMap::new();
    for s in splits {
        let (k, subs, local) = s?;
        diagnostics.extend(local);
        replacements.insert(k, subs);
    }

    let f = prototypes.vectors.cols();
    let mut data = Vec::new();
    for k in 0..prototypes.len() {
        match replacements.get(&k) {
            Some(subs) => data.extend_from_slice(subs.as_slice()),
            None => data.extend_from_slice(prototypes.vector(k)),
        }
    }
    let rows = data.len() / f;
    let vectors = Matrix::from_vec(rows, f, data).expect("row-aligned prototype data");
    Ok(PrototypeSet::new(vectors, generation + 1))
}

/// Repeats disambiguation until no prototype is ambiguous or `max_rounds` passes ran.
pub fn disambiguate(
    frame: &SceneFrame,
    prototypes: &PrototypeSet,
    corr: &Correspondence,
    annotations: &AnnotationSet,
    params: &DisambiguationParams,
) -> Result<DisambiguationOutcome> {
    if params.sigma.is_nan() || params.sigma <= 0.0 {
        return Err(Error::invalid("sigma must be positive"));
    }
    let mut diagnostics = Vec::new();
    let mut current = prototypes.clone();
    let mut current_corr = corr.clone();
    let mut ambiguous_per_round = Vec::new();
    let mut rounds = 0;
    loop {
        let ambiguous = find_ambiguous(&mut current, &current_corr, annotations);
        ambiguous_per_round.push(ambiguous.len());
        if ambiguous.is_empty() {
            if rounds == 0 {
                diagnostics.push("no ambiguous prototype; disambiguation skipped".into());
            }
            break;
        }
        if rounds == params.max_rounds {
            diagnostics.push(format!(
                "{} prototypes still ambiguous after {rounds} rounds",
                ambiguous.len()
            ));
            break;
        }
        current = disambiguate_once(
            frame,
            &current,
            &current_corr,
            annotations,
            params,
            &mut diagnostics,
        )?;
        current_corr = correspondence(frame, &current);
        current.member_counts = current_corr.column_sums();
        rounds += 1;
    }
    Ok(DisambiguationOutcome {
        prototypes: current,
        correspondence: current_corr,
        rounds,
        ambiguous_per_round,
        diagnostics,
    })
}
