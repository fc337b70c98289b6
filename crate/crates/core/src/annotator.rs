//! Simulated annotators that click from ground truth.

use std::collections::BTreeSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::dbscan;
use crate::error::{Error, Result};
use crate::metrics::{accuracy, ClassTag, ConfusionTally, SegmentationScores};
use crate::scene::{LabelId, LabelKind, LabelSpace, SceneFrame};
use crate::session::{ClickRequest, Session};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    /// One click per novel class, in one batch.
    Oncoc,
    /// One click per class, in one batch.
    Ococ,
    /// Corrective clicks, one per update.
    #[serde(rename = "iter")]
    Iterative,
    /// An ONCOC batch followed by corrective clicks.
    Ioncoc,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Oncoc => "oncoc",
            StrategyKind::Ococ => "ococ",
            StrategyKind::Iterative => "iter",
            StrategyKind::Ioncoc => "ioncoc",
        }
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "oncoc" => Ok(StrategyKind::Oncoc),
            "ococ" => Ok(StrategyKind::Ococ),
            "iter" | "iterative" => Ok(StrategyKind::Iterative),
            "ioncoc" => Ok(StrategyKind::Ioncoc),
            other => Err(Error::invalid(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub budget: usize,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
}

impl StrategySpec {
    pub fn new(kind: StrategyKind, budget: usize) -> Self {
        Self {
            kind,
            budget,
            dbscan_eps: 0.2,
            dbscan_min_pts: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::invalid("budget must be at least 1"));
        }
        if self.dbscan_eps.is_nan() || self.dbscan_eps <= 0.0 || self.dbscan_min_pts == 0 {
            return Err(Error::invalid("dbscan parameters must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub clicks_used: usize,
    pub clicks: Vec<ClickRequest>,
    /// The corrective phase stopped because no mis-segmented cluster was found.
    pub terminated_early: bool,
}

fn positions_of(frame: &SceneFrame, points: &[usize]) -> Vec<[f64; 3]> {
    points.iter().map(|&i| frame.position(i)).collect()
}

/// Member of `points` nearest to their positional centroid, lowest index on ties.
fn centroid_nearest(frame: &SceneFrame, points: &[usize]) -> usize {
    let pos = positions_of(frame, points);
    let mut c = [0.0; 3];
    for p in &pos {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    let inv = 1.0 / pos.len() as f64;
    c.iter_mut().for_each(|v| *v *= inv);
    let mut best = (f64::INFINITY, usize::MAX);
    for (p, &i) in pos.iter().zip(points) {
        let d = (0..3).map(|a| (p[a] - c[a]).powi(2)).sum::<f64>();
        if d < best.0 || (d == best.0 && i < best.1) {
            best = (d, i);
        }
    }
    best.1
}

fn require_gt(frame: &SceneFrame) -> Result<&[i32]> {
    frame.gt_labels().ok_or(Error::MissingGroundTruth)
}

/// Click point for ground-truth class `class`: the centroid-nearest member of
/// the class's dominant DBSCAN cluster.
pub fn place_class_click(frame: &SceneFrame, class: i32, eps: f64, min_pts: usize) -> Result<usize> {
    let gt = require_gt(frame)?;
    let points: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] == class).collect();
    if points.is_empty() {
        let name = frame.class_names().gt_name(class).unwrap_or("?").to_string();
        return Err(Error::ClassAbsent(format!("{name} ({class})")));
    }
    let clusters = dbscan(&positions_of(frame, &points), eps, min_pts)?;
    Ok(match clusters.dominant() {
        Some(c) => {
            let members: Vec<usize> = clusters.members(c).into_iter().map(|r| points[r]).collect();
            centroid_nearest(frame, &members)
        }
        None => centroid_nearest(frame, &points),
    })
}

/// Maps each predicted label to the ground-truth id space of `frame`. Novel
/// names absent from the ground truth map to `None`.
fn predicted_gt_ids(frame: &SceneFrame, space: &LabelSpace, labels: &[LabelId]) -> Vec<Option<i32>> {
    let novel = &frame.class_names().novel;
    let b = space.base_count();
    let table: Vec<Option<i32>> = (0..space.len())
        .map(|l| match space.kind(LabelId(l)) {
            Some(LabelKind::Base) | Some(LabelKind::Unknown) => Some(l as i32),
            Some(LabelKind::Novel) => {
                let name = space.name(LabelId(l)).expect("label in space");
                novel.iter().position(|n| n == name).map(|j| (b + 1 + j) as i32)
            }
            None => None,
        })
        .collect();
    labels.iter().map(|l| table[l.0]).collect()
}

/// Corrective click: the centroid-nearest point of the largest DBSCAN cluster
/// of mis-segmented points, with its ground-truth class name. `None` when
/// every mis-segmented point is noise.
pub fn place_corrective_click(
    frame: &SceneFrame,
    space: &LabelSpace,
    labels: &[LabelId],
    eps: f64,
    min_pts: usize,
) -> Result<Option<ClickRequest>> {
    let gt = require_gt(frame)?;
    let unknown = space.unknown().0 as i32;
    let pred = predicted_gt_ids(frame, space, labels);
    let wrong: Vec<usize> = (0..gt.len())
        .filter(|&i| gt[i] >= 0 && gt[i] != unknown && pred[i] != Some(gt[i]))
        .collect();
    if wrong.is_empty() {
        return Ok(None);
    }
    let clusters = dbscan(&positions_of(frame, &wrong), eps, min_pts)?;
    let Some(c) = clusters.dominant() else {
        return Ok(None);
    };
    let members: Vec<usize> = clusters.members(c).into_iter().map(|r| wrong[r]).collect();
    let point = centroid_nearest(frame, &members);
    let name = frame
        .class_names()
        .gt_name(gt[point])
        .expect("validated gt label");
    Ok(Some(ClickRequest::new(point, name)))
}

/// Ground-truth classes present in the frame, ascending, excluding unknown.
fn present_classes(frame: &SceneFrame, gt: &[i32]) -> Vec<i32> {
    let unknown = frame.base_class_count() as i32;
    gt.iter()
        .filter(|&&g| g >= 0 && g != unknown)
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn class_batch(frame: &SceneFrame, classes: &[i32], spec: &StrategySpec) -> Result<Vec<ClickRequest>> {
    classes
        .iter()
        .take(spec.budget)
        .map(|&c| {
            let p = place_class_click(frame, c, spec.dbscan_eps, spec.dbscan_min_pts)?;
            let name = frame.class_names().gt_name(c).expect("present class");
            Ok(ClickRequest::new(p, name))
        })
        .collect()
}

/// Runs one simulated annotator against `session` until its budget is spent
/// or no correction can be located.
pub fn run_strategy(session: &mut Session, spec: &StrategySpec) -> Result<StrategyOutcome> {
    spec.validate()?;
    let frame = session.shared_frame();
    let gt = require_gt(&frame)?;
    let base = frame.base_class_count() as i32;
    let present = present_classes(&frame, gt);
    let mut clicks = Vec::new();

    let batch = match spec.kind {
        StrategyKind::Ococ => present.clone(),
        StrategyKind::Oncoc | StrategyKind::Ioncoc => {
            present.iter().copied().filter(|&c| c > base).collect()
        }
        StrategyKind::Iterative => Vec::new(),
    };
    if !batch.is_empty() {
        let reqs = class_batch(&frame, &batch, spec)?;
        session.apply_clicks(&reqs)?;
        clicks.extend(reqs);
    }

    let mut terminated_early = false;
    if matches!(spec.kind, StrategyKind::Iterative | StrategyKind::Ioncoc) {
        while clicks.len() < spec.budget {
            let next = place_corrective_click(
                &frame,
                session.label_space(),
                &session.prediction().point_labels,
                spec.dbscan_eps,
                spec.dbscan_min_pts,
            )?;
            let Some(click) = next else {
                terminated_early = true;
                break;
            };
            session.apply_clicks(std::slice::from_ref(&click))?;
            clicks.push(click);
        }
    }
    Ok(StrategyOutcome {
        clicks_used: clicks.len(),
        clicks,
        terminated_early,
    })
}

/// Scores the session's current prediction against ground truth over the
/// base classes and the novel classes of the scene. Unknown predictions
/// count as misses; unlabeled and unknown ground-truth points are skipped.
pub fn evaluate(session: &Session) -> Result<SegmentationScores> {
    let frame = session.frame();
    let gt = require_gt(frame)?;
    let b = frame.base_class_count();
    let novel = frame.class_names().novel.len();
    // Tally index: base c -> c, ground-truth novel j -> b + j.
    let to_tally = |g: i32| -> Option<usize> {
        match g {
            g if g < 0 => None,
            g if (g as usize) < b => Some(g as usize),
            g if g as usize == b => None,
            g => Some(g as usize - 1),
        }
    };
    let pred = predicted_gt_ids(frame, session.label_space(), &session.prediction().point_labels);
    let truth: Vec<Option<usize>> = gt.iter().map(|&g| to_tally(g)).collect();
    let pred: Vec<Option<usize>> = pred.iter().map(|p| p.and_then(to_tally)).collect();
    let mut tags = vec![ClassTag::Base; b];
    tags.extend(std::iter::repeat_n(ClassTag::Novel, novel));
    let tally = ConfusionTally::from_pairs(tags, &truth, &pred);
    Ok(SegmentationScores::from_tally(&tally, accuracy(&truth, &pred)))
}
