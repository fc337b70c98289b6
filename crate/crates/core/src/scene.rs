//! Domain types shared across the pipeline.
//!
//! Open-world labels are 0-based: ids `0..B` are the base classes, `B` is the
//! unknown class and `B + 1..` are novel classes in registration order. The
//! closed-world head therefore maps onto the prefix `0..=B`.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Sentinel used in ground-truth arrays for unlabeled points.
pub const UNLABELED: i32 = -1;

/// Display name of the unknown class.
pub const UNKNOWN_NAME: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelId(pub usize);

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Base,
    Unknown,
    Novel,
}

/// Base classes, the unknown class, and the append-only list of novel classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    base: Vec<String>,
    novel: Vec<String>,
}

impl LabelSpace {
    pub fn new(base: Vec<String>) -> Result<Self> {
        if base.is_empty() {
            return Err(Error::invalid("at least one base class is required"));
        }
        let mut seen = HashMap::new();
        for (i, name) in base.iter().enumerate() {
            if name.is_empty() || name == UNKNOWN_NAME {
                return Err(Error::invalid(format!("invalid base class name {name:?}")));
            }
            if seen.insert(name.as_str(), i).is_some() {
                return Err(Error::invalid(format!("duplicate base class {name:?}")));
            }
        }
        Ok(Self {
            base,
            novel: Vec::new(),
        })
    }

    pub fn base_count(&self) -> usize {
        self.base.len()
    }

    pub fn novel_count(&self) -> usize {
        self.novel.len()
    }

    /// Total label count, `|C_b| + |C_n| + 1`.
    pub fn len(&self) -> usize {
        self.base.len() + self.novel.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn unknown(&self) -> LabelId {
        LabelId(self.base.len())
    }

    pub fn novel_id(&self, j: usize) -> LabelId {
        LabelId(self.base.len() + 1 + j)
    }

    pub fn kind(&self, id: LabelId) -> Option<LabelKind> {
        let b = self.base.len();
        match id.0 {
            i if i < b => Some(LabelKind::Base),
            i if i == b => Some(LabelKind::Unknown),
            i if i <= b + self.novel.len() => Some(LabelKind::Novel),
            _ => None,
        }
    }

    pub fn name(&self, id: LabelId) -> Option<&str> {
        let b = self.base.len();
        match self.kind(id)? {
            LabelKind::Base => Some(&self.base[id.0]),
            LabelKind::Unknown => Some(UNKNOWN_NAME),
            LabelKind::Novel => Some(&self.novel[id.0 - b - 1]),
        }
    }

    pub fn lookup(&self, name: &str) -> Option<LabelId> {
        if name == UNKNOWN_NAME {
            return Some(self.unknown());
        }
        if let Some(i) = self.base.iter().position(|b| b == name) {
            return Some(LabelId(i));
        }
        self.novel
            .iter()
            .position(|n| n == name)
            .map(|j| self.novel_id(j))
    }

    pub fn base_names(&self) -> &[String] {
        &self.base
    }

    pub fn novel_names(&self) -> &[String] {
        &self.novel
    }

    /// Returns the id of novel class `name`, registering it on first sight.
    pub fn register_novel(&mut self, name: &str) -> Result<LabelId> {
        if self.base.iter().any(|b| b == name) {
            return Err(Error::BaseLabelCollision(name.to_string()));
        }
        if name == UNKNOWN_NAME {
            return Err(Error::UnknownNotClickable);
        }
        if name.is_empty() {
            return Err(Error::invalid("empty class name"));
        }
        if let Some(j) = self.novel.iter().position(|n| n == name) {
            return Ok(self.novel_id(j));
        }
        self.novel.push(name.to_string());
        Ok(self.novel_id(self.novel.len() - 1))
    }

    /// Resolves a click label: base names map to base ids, other names are
    /// registered as novel classes.
    pub fn resolve_click_label(&mut self, name: &str) -> Result<LabelId> {
        if name == UNKNOWN_NAME {
            return Err(Error::UnknownNotClickable);
        }
        match self.base.iter().position(|b| b == name) {
            Some(i) => Ok(LabelId(i)),
            None => self.register_novel(name),
        }
    }
}

/// Class names carried by a scene: the base classes of the backbone and the
/// novel classes present in its ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassNames {
    pub base: Vec<String>,
    pub novel: Vec<String>,
}

impl ClassNames {
    /// Name of a ground-truth label id (same indexing as [`LabelSpace`]).
    pub fn gt_name(&self, label: i32) -> Option<&str> {
        if label < 0 {
            return None;
        }
        let l = label as usize;
        let b = self.base.len();
        if l < b {
            Some(&self.base[l])
        } else if l == b {
            Some(UNKNOWN_NAME)
        } else {
            self.novel.get(l - b - 1).map(String::as_str)
        }
    }
}

/// Raw arrays of a scene, validated into a [`SceneFrame`].
#[derive(Debug, Clone, PartialEq)]
pub struct FrameParts {
    pub positions: Vec<[f32; 3]>,
    pub raw_features: Matrix<f32>,
    pub features: Matrix<f32>,
    pub closed_logits: Matrix<f32>,
    pub gt_labels: Option<Vec<i32>>,
    pub block_ids: Option<Vec<i32>>,
    pub class_names: ClassNames,
}

/// One query sample: positions, backbone features, closed-world logits and
/// optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFrame {
    parts: FrameParts,
}

impl SceneFrame {
    pub fn new(parts: FrameParts) -> Result<Self> {
        let n = parts.positions.len();
        let bad = |m: String| Err(Error::InvalidFrame(m));
        if n == 0 {
            return bad("scene has no points".into());
        }
        if parts.features.cols() == 0 {
            return bad("feature dimension must be at least 1".into());
        }
        for (name, rows) in [
            ("raw_features", parts.raw_features.rows()),
            ("features", parts.features.rows()),
            ("closed_logits", parts.closed_logits.rows()),
        ] {
            if rows != n {
                return bad(format!("{name} has {rows} rows, expected {n}"));
            }
        }
        let b = parts.class_names.base.len();
        if b == 0 {
            return bad("scene declares no base classes".into());
        }
        if parts.closed_logits.cols() != b + 1 {
            return bad(format!(
                "closed_logits has {} columns, expected {} base classes + unknown",
                parts.closed_logits.cols(),
                b
            ));
        }
        if let Some(gt) = &parts.gt_labels {
            if gt.len() != n {
                return bad(format!("gt_labels has {} entries, expected {n}", gt.len()));
            }
            let max = (b + parts.class_names.novel.len()) as i32;
            if let Some(&l) = gt.iter().find(|&&l| l < UNLABELED || l > max) {
                return bad(format!("gt label {l} outside [-1, {max}]"));
            }
        }
        if let Some(blocks) = &parts.block_ids {
            if blocks.len() != n {
                return bad(format!("block_ids has {} entries, expected {n}", blocks.len()));
            }
        }
        let finite = parts.positions.iter().flatten().all(|v| v.is_finite())
            && parts.features.as_slice().iter().all(|v| v.is_finite())
            && parts.closed_logits.as_slice().iter().all(|v| v.is_finite());
        if !finite {
            return bad("non-finite positions, features or logits".into());
        }
        LabelSpace::new(parts.class_names.base.clone())
            .map_err(|e| Error::InvalidFrame(e.to_string()))?;
        Ok(Self { parts })
    }

    pub fn into_parts(self) -> FrameParts {
        self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.positions.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.parts.features.cols()
    }

    pub fn raw_dim(&self) -> usize {
        self.parts.raw_features.cols()
    }

    pub fn base_class_count(&self) -> usize {
        self.parts.class_names.base.len()
    }

    pub fn positions(&self) -> &[[f32; 3]] {
        &self.parts.positions
    }

    pub fn raw_features(&self) -> &Matrix<f32> {
        &self.parts.raw_features
    }

    pub fn features(&self) -> &Matrix<f32> {
        &self.parts.features
    }

    pub fn closed_logits(&self) -> &Matrix<f32> {
        &self.parts.closed_logits
    }

    pub fn gt_labels(&self) -> Option<&[i32]> {
        self.parts.gt_labels.as_deref()
    }

    pub fn block_ids(&self) -> Option<&[i32]> {
        self.parts.block_ids.as_deref()
    }

    pub fn class_names(&self) -> &ClassNames {
        &self.parts.class_names
    }

    pub fn label_space(&self) -> LabelSpace {
        LabelSpace::new(self.parts.class_names.base.clone()).expect("validated on construction")
    }

    /// Closed-world argmax per point, lowest class index on ties.
    pub fn closed_argmax(&self) -> Vec<usize> {
        self.parts
            .closed_logits
            .iter_rows()
            .map(crate::matrix::argmax)
            .collect()
    }

    pub(crate) fn position(&self, i: usize) -> [f64; 3] {
        let p = self.parts.positions[i];
        [p[0] as f64, p[1] as f64, p[2] as f64]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub point: usize,
    pub label: LabelId,
    pub iteration: u32,
}

/// Sparse clicks ordered from oldest to most recent, at most one per point.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    clicks: Vec<Annotation>,
}

impl AnnotationSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a click; a previous click on the same point is replaced.
    pub fn insert(&mut self, annotation: Annotation) {
        self.clicks.retain(|a| a.point != annotation.point);
        self.clicks.push(annotation);
    }

    pub fn len(&self) -> usize {
        self.clicks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clicks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Annotation> {
        self.clicks.iter()
    }

    pub fn label_of(&self, point: usize) -> Option<LabelId> {
        self.clicks.iter().find(|a| a.point == point).map(|a| a.label)
    }
}

/// Unit-norm prototype vectors with per-prototype bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub vectors: Matrix<f64>,
    pub member_counts: Vec<usize>,
    pub ambiguous_flags: Vec<bool>,
    pub generation: u32,
}

impl PrototypeSet {
    pub fn new(vectors: Matrix<f64>, generation: u32) -> Self {
        let k = vectors.rows();
        Self {
            vectors,
            member_counts: vec![0; k],
            ambiguous_flags: vec![false; k],
            generation,
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        self.vectors.row(k)
    }
}

/// Open-world output of one engine update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub point_labels: Vec<LabelId>,
    pub prototype_labels: Vec<LabelId>,
    /// `K × L` marginals after mean-field inference.
    pub prototype_probs: Matrix<f64>,
    pub correspondence: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> LabelSpace {
        LabelSpace::new(vec!["wall".into(), "floor".into(), "chair".into()]).unwrap()
    }

    #[test]
    fn first_novel_follows_unknown() {
        let mut s = space();
        assert_eq!(s.unknown(), LabelId(3));
        assert_eq!(s.register_novel("sofa").unwrap(), LabelId(4));
        assert_eq!(s.len(), 5);
    }

    #[test]
    fn registration_is_idempotent_and_ordered() {
        let mut s = space();
        let a = s.register_novel("sofa").unwrap();
        assert_eq!(s.register_novel("sofa").unwrap(), a);
        assert_eq!(s.novel_count(), 1);
        let b = s.register_novel("window").unwrap();
        assert_eq!(b.0, a.0 + 1);
        assert_eq!(s.novel_count(), 2);
        assert_eq!(s.name(b), Some("window"));
    }

    #[test]
    fn base_collision_rejected() {
        let mut s = space();
        assert!(matches!(
            s.register_novel("floor"),
            Err(Error::BaseLabelCollision(_))
        ));
        assert_eq!(s.resolve_click_label("floor").unwrap(), LabelId(1));
        assert!(matches!(
            s.resolve_click_label(UNKNOWN_NAME),
            Err(Error::UnknownNotClickable)
        ));
    }

    #[test]
    fn label_space_serde_keeps_ids() {
        let mut s = space();
        s.register_novel("sofa").unwrap();
        s.register_novel("board").unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let back: LabelSpace = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.lookup("board"), s.lookup("board"));
    }

    fn parts(n: usize) -> FrameParts {
        FrameParts {
            positions: vec![[0.0; 3]; n],
            raw_features: Matrix::zeros(n, 0),
            features: Matrix::from_vec(n, 1, vec![1.0; n]).unwrap(),
            closed_logits: Matrix::zeros(n, 2),
            gt_labels: None,
            block_ids: None,
            class_names: ClassNames {
                base: vec!["a".into()],
                novel: vec![],
            },
        }
    }

    #[test]
    fn frame_rejects_row_mismatch() {
        assert!(SceneFrame::new(parts(3)).is_ok());
        let mut p = parts(3);
        p.features = Matrix::from_vec(2, 1, vec![1.0; 2]).unwrap();
        assert!(matches!(SceneFrame::new(p), Err(Error::InvalidFrame(_))));
        let mut p = parts(3);
        p.closed_logits = Matrix::zeros(3, 3);
        assert!(SceneFrame::new(p).is_err());
        let mut p = parts(3);
        p.gt_labels = Some(vec![0, 0]);
        assert!(SceneFrame::new(p).is_err());
        assert!(SceneFrame::new(parts(0)).is_err());
    }

    #[test]
    fn annotation_overwrite_keeps_latest() {
        let mut a = AnnotationSet::new();
        a.insert(Annotation { point: 2, label: LabelId(0), iteration: 1 });
        a.insert(Annotation { point: 5, label: LabelId(1), iteration: 1 });
        a.insert(Annotation { point: 2, label: LabelId(4), iteration: 2 });
        assert_eq!(a.len(), 2);
        assert_eq!(a.label_of(2), Some(LabelId(4)));
        assert_eq!(a.iter().last().unwrap().point, 2);
    }
}
