//! Prototype label assignment with a fully connected CRF over prototypes.
//!
//! Unary potentials come from point votes calibrated by clicks; pairwise
//! potentials from prototype cosine similarity. Inference is synchronous
//! mean-field with a Potts compatibility: label `l` at prototype `i` is
//! penalized by `λ Σ_{l'≠l} Σ_{j≠i} ψ_ij Q_j(l')`, i.e. by the similarity mass
//! that neighbors place on other labels. Summing the message over all labels,
//! as the label-independent transform would, cancels under normalization and
//! leaves the pairwise term without effect.

use crate::error::{Error, Result};
use crate::matrix::{argmax, dot, Matrix};
use crate::prototype::Correspondence;
use crate::scene::{AnnotationSet, LabelId, PrototypeSet};

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Largest labeling count the exact oracle will enumerate (4^10).
pub const ENUMERATION_BOUND: u128 = 1 << 20;

/// Counts `V[c][k]` of points voting class `c` inside prototype `k`.
/// `labels` are indices into `0..rows`.
pub fn voting_matrix(labels: &[usize], corr: &Correspondence, rows: usize) -> Matrix<f64> {
    assert_eq!(labels.len(), corr.len(), "labels and correspondence disagree");
    let mut v = Matrix::zeros(rows, corr.prototype_count);
    for (&l, &k) in labels.iter().zip(&corr.assignment) {
        let cur = *v.get(l, k);
        v.set(l, k, cur + 1.0);
    }
    v
}

/// Maps open-world point labels onto the closed-world rows `0..=unknown`,
/// collapsing every novel class to unknown.
pub fn collapse_to_closed(labels: &[LabelId], unknown: LabelId) -> Vec<usize> {
    labels.iter().map(|l| l.0.min(unknown.0)).collect()
}

/// Appends one row per novel class, each equal to the unknown row minus one.
pub fn augment_voting(v: &Matrix<f64>, novel_count: usize, unknown_row: usize) -> Matrix<f64> {
    let k = v.cols();
    let mut out = Matrix::zeros(v.rows() + novel_count, k);
    for r in 0..v.rows() {
        out.row_mut(r).copy_from_slice(v.row(r));
    }
    let unknown: Vec<f64> = v.row(unknown_row).iter().map(|x| x - 1.0).collect();
    for j in 0..novel_count {
        out.row_mut(v.rows() + j).copy_from_slice(&unknown);
    }
    out
}

/// Per-prototype class probabilities (`K × L`) with click calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryField {
    pub probs: Matrix<f64>,
    /// Clicked label of each calibrated prototype.
    pub calibrated: Vec<Option<LabelId>>,
    pub epsilon_floor: f64,
    /// Prototypes that received clicks of different labels.
    pub conflicts: Vec<usize>,
}

impl UnaryField {
    /// Builds a field from probability rows, mixing with the floor so every
    /// entry is at least `epsilon`.
    pub fn from_probs(probs: Matrix<f64>, epsilon: f64) -> Result<Self> {
        let l = probs.cols();
        if !probs.as_slice().iter().all(|p| p.is_finite() && *p >= 0.0) {
            return Err(Error::NonFinite("unary probabilities"));
        }
        let mut probs = probs;
        for i in 0..probs.rows() {
            let row = probs.row_mut(i);
            let s: f64 = row.iter().sum();
            if s <= 0.0 {
                return Err(Error::invalid("unary row has zero mass"));
            }
            for p in row.iter_mut() {
                *p = (1.0 - l as f64 * epsilon) * (*p / s) + epsilon;
            }
        }
        Ok(Self {
            calibrated: vec![None; probs.rows()],
            probs,
            epsilon_floor: epsilon,
            conflicts: Vec::new(),
        })
    }

    pub fn prototype_count(&self) -> usize {
        self.probs.rows()
    }

    pub fn label_count(&self) -> usize {
        self.probs.cols()
    }

    /// Unary potential `-ln Pb`.
    pub fn potentials(&self) -> Matrix<f64> {
        self.probs.map(|p| -p.ln())
    }

    /// Pins prototype `k` to `label` with an ε-floored one-hot row.
    pub fn calibrate(&mut self, k: usize, label: LabelId) {
        let l = self.label_count();
        let eps = self.epsilon_floor;
        let row = self.probs.row_mut(k);
        row.iter_mut().for_each(|p| *p = eps);
        row[label.0] = 1.0 - eps * (l as f64 - 1.0);
        self.calibrated[k] = Some(label);
    }
}

/// Column softmax of `v̄` followed by click calibration. The most recent click
/// wins when one prototype received several labels.
pub fn unary_from_votes(
    vbar: &Matrix<f64>,
    annotations: &AnnotationSet,
    corr: &Correspondence,
    epsilon: f64,
) -> Result<UnaryField> {
    if !vbar.as_slice().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("voting matrix"));
    }
    let l = vbar.rows();
    let k = vbar.cols();
    let mut probs = Matrix::zeros(k, l);
    for c in 0..k {
        let max = (0..l).map(|r| *vbar.get(r, c)).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = (0..l).map(|r| (vbar.get(r, c) - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (r, e) in exps.iter().enumerate() {
            probs.set(c, r, e / total);
        }
    }
    let mut field = UnaryField::from_probs(probs, epsilon)?;
    for a in annotations.iter() {
        let proto = corr.assignment[a.point];
        if let Some(prev) = field.calibrated[proto] {
            if prev != a.label && !field.conflicts.contains(&proto) {
                field.conflicts.push(proto);
            }
        }
        field.calibrate(proto, a.label);
    }
    field.conflicts.sort_unstable();
    Ok(field)
}

/// Symmetric prototype similarity kernel with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseField {
    pub weights: Matrix<f64>,
    pub delta: f64,
    pub lambda: f64,
}

/// `ψ_ij = exp(-(1 - Pt_i·Pt_j)² / (2δ²))` for `i ≠ j`.
pub fn pairwise_from_prototypes(prototypes: &PrototypeSet, delta: f64, lambda: f64) -> Result<PairwiseField> {
    pairwise_from_vectors(&prototypes.vectors, delta, lambda)
}

pub fn pairwise_from_vectors(vectors: &Matrix<f64>, delta: f64, lambda: f64) -> Result<PairwiseField> {
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::invalid("delta must be positive"));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    let k = vectors.rows();
    let mut weights = Matrix::zeros(k, k);
    let denom = 2.0 * delta * delta;
    for i in 0..k {
        for j in (i + 1)..k {
            let gap = 1.0 - dot(vectors.row(i), vectors.row(j));
            let w = (-(gap * gap) / denom).exp();
            weights.set(i, j, w);
            weights.set(j, i, w);
        }
    }
    Ok(PairwiseField {
        weights,
        delta,
        lambda,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldState {
    pub q: Matrix<f64>,
    pub iteration: usize,
}

/// Synchronous mean-field iteration over a prototype CRF.
pub struct MeanField<'a> {
    potentials: Matrix<f64>,
    pairwise: &'a PairwiseField,
    state: MeanFieldState,
}

fn softmax_neg(row: &[f64]) -> Vec<f64> {
    let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = row.iter().map(|x| (-(x - min)).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

impl<'a> MeanField<'a> {
    pub fn new(unary: &UnaryField, pairwise: &'a PairwiseField) -> Result<Self> {
        let potentials = unary.potentials();
        if !potentials.as_slice().iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("unary potentials"));
        }
        if pairwise.weights.rows() != potentials.rows() {
            return Err(Error::invalid("unary and pairwise fields disagree on K"));
        }
        let k = potentials.rows();
        let l = potentials.cols();
        let mut q = Matrix::zeros(k, l);
        for i in 0..k {
            q.row_mut(i).copy_from_slice(&softmax_neg(potentials.row(i)));
        }
        Ok(Self {
            potentials,
            pairwise,
            state: MeanFieldState { q, iteration: 0 },
        })
    }

    pub fn state(&self) -> &MeanFieldState {
        &self.state
    }

    pub fn into_state(self) -> MeanFieldState {
        self.state
    }

    pub fn step(&mut self) {
        let k = self.potentials.rows();
        let l = self.potentials.cols();
        let lambda = self.pairwise.lambda;
        let q = &self.state.q;
        let mut next = Matrix::zeros(k, l);
        let mut message = vec![0.0; l];
        for i in 0..k {
            message.iter_mut().for_each(|m| *m = 0.0);
            for j in 0..k {
                if j == i {
                    continue;
                }
                let w = *self.pairwise.weights.get(i, j);
                for (m, qj) in message.iter_mut().zip(q.row(j)) {
                    *m += w * qj;
                }
            }
            let total: f64 = message.iter().sum();
            let energy: Vec<f64> = self
                .potentials
                .row(i)
                .iter()
                .zip(&message)
                .map(|(phi, m)| phi + lambda * (total - m))
                .collect();
            next.row_mut(i).copy_from_slice(&softmax_neg(&energy));
        }
        self.state.q = next;
        self.state.iteration += 1;
    }
}

pub fn mean_field(unary: &UnaryField, pairwise: &PairwiseField, iters: usize) -> Result<MeanFieldState> {
    let mut mf = MeanField::new(unary, pairwise)?;
    for _ in 0..iters {
        mf.step();
    }
    Ok(mf.into_state())
}

/// MAP labels from the marginals, with calibrated prototypes forced to their click.
pub fn decode(state: &MeanFieldState, unary: &UnaryField) -> Vec<LabelId> {
    state
        .q
        .iter_rows()
        .zip(&unary.calibrated)
        .map(|(row, pinned)| pinned.unwrap_or(LabelId(argmax(row))))
        .collect()
}

/// Potts energy `Σ φ_i(l_i) + λ Σ_{i<j} ψ_ij [l_i ≠ l_j]`.
pub fn potts_energy(unary: &UnaryField, pairwise: &PairwiseField, labels: &[LabelId]) -> f64 {
    let phi = unary.potentials();
    let mut e: f64 = labels.iter().enumerate().map(|(i, l)| *phi.get(i, l.0)).sum();
    for i in 0..labels.len() {
        for j in (i + 1)..labels.len() {
            if labels[i] != labels[j] {
                e += pairwise.lambda * pairwise.weights.get(i, j);
            }
        }
    }
    e
}

/// Exhaustive minimizer of the Potts energy; small instances only.
pub fn exact_map_oracle(unary: &UnaryField, pairwise: &PairwiseField) -> Result<(Vec<LabelId>, f64)> {
    let k = unary.prototype_count();
    let l = unary.label_count();
    let labelings = (l as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
    if labelings > ENUMERATION_BOUND {
        return Err(Error::EnumerationBound {
            labelings,
            bound: ENUMERATION_BOUND,
        });
    }
    let mut labels = vec![LabelId(0); k];
    let mut best = labels.clone();
    let mut best_e = potts_energy(unary, pairwise, &labels);
    for _ in 1..labelings {
        for slot in labels.iter_mut() {
            slot.0 += 1;
            if slot.0 < l {
                break;
            }
            slot.0 = 0;
        }
        let e = potts_energy(unary, pairwise, &labels);
        if e < best_e {
            best_e = e;
            best.clone_from(&labels);
        }
    }
    Ok((best, best_e))
}
