//! Per-class IoU, subset mIoU, harmonic mean and run reports.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassTag {
    Base,
    Novel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassSubset {
    Base,
    Novel,
    All,
}

impl ClassSubset {
    fn admits(self, tag: ClassTag) -> bool {
        matches!(
            (self, tag),
            (ClassSubset::All, _) | (ClassSubset::Base, ClassTag::Base) | (ClassSubset::Novel, ClassTag::Novel)
        )
    }
}

/// Per-class true/false positive and false negative counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTally {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub tags: Vec<ClassTag>,
}

impl ConfusionTally {
    pub fn new(tags: Vec<ClassTag>) -> Self {
        let c = tags.len();
        Self {
            tp: vec![0; c],
            fp: vec![0; c],
            fn_: vec![0; c],
            tags,
        }
    }

    /// Tallies predictions against truth. `None` in `truth` excludes the point;
    /// `None` in `pred` (e.g. the unknown class) counts only as a false negative.
    pub fn from_pairs(
        tags: Vec<ClassTag>,
        truth: &[Option<usize>],
        pred: &[Option<usize>],
    ) -> Self {
        let mut t = Self::new(tags);
        for (g, p) in truth.iter().zip(pred) {
            let Some(g) = *g else { continue };
            match *p {
                Some(p) if p == g => t.tp[g] += 1,
                Some(p) => {
                    t.fn_[g] += 1;
                    t.fp[p] += 1;
                }
                None => t.fn_[g] += 1,
            }
        }
        t
    }

    pub fn class_count(&self) -> usize {
        self.tags.len()
    }

    pub fn iou(&self, c: usize) -> Option<f64> {
        let denom = self.tp[c] + self.fp[c] + self.fn_[c];
        (denom > 0).then(|| self.tp[c] as f64 / denom as f64)
    }

    pub fn merge(&mut self, other: &ConfusionTally) {
        assert_eq!(self.tags, other.tags, "tallies over different classes");
        for c in 0..self.tags.len() {
            self.tp[c] += other.tp[c];
            self.fp[c] += other.fp[c];
            self.fn_[c] += other.fn_[c];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetIou {
    pub miou: f64,
    pub classes_used: Vec<usize>,
    /// Classes in the subset with a zero denominator.
    pub excluded: Vec<usize>,
}

pub fn miou(tally: &ConfusionTally, subset: ClassSubset) -> Result<SubsetIou> {
    let mut used = Vec::new();
    let mut excluded = Vec::new();
    let mut sum = 0.0;
    for (c, &tag) in tally.tags.iter().enumerate() {
        if !subset.admits(tag) {
            continue;
        }
        match tally.iou(c) {
            Some(v) => {
                sum += v;
                used.push(c);
            }
            None => excluded.push(c),
        }
    }
    if used.is_empty() {
        return Err(Error::EmptySubset);
    }
    Ok(SubsetIou {
        miou: sum / used.len() as f64,
        classes_used: used,
        excluded,
    })
}

/// `2bn / (b + n)`, zero when either argument is zero.
pub fn harmonic_mean(miou_b: f64, miou_n: f64) -> f64 {
    if miou_b <= 0.0 || miou_n <= 0.0 {
        0.0
    } else {
        2.0 * miou_b * miou_n / (miou_b + miou_n)
    }
}

pub fn accuracy(truth: &[Option<usize>], pred: &[Option<usize>]) -> f64 {
    let mut total = 0usize;
    let mut hit = 0usize;
    for (g, p) in truth.iter().zip(pred) {
        if let Some(g) = g {
            total += 1;
            if *p == Some(*g) {
                hit += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Subset scores of one prediction; fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScores {
    pub miou_b: Option<f64>,
    pub miou_n: Option<f64>,
    pub miou_a: Option<f64>,
    pub hm: Option<f64>,
    pub accuracy: f64,
}

impl SegmentationScores {
    pub fn from_tally(tally: &ConfusionTally, accuracy: f64) -> Self {
        let b = miou(tally, ClassSubset::Base).ok().map(|s| s.miou);
        let n = miou(tally, ClassSubset::Novel).ok().map(|s| s.miou);
        let a = miou(tally, ClassSubset::All).ok().map(|s| s.miou);
        let hm = match (b, n) {
            (Some(b), Some(n)) => Some(harmonic_mean(b, n)),
            _ => None,
        };
        Self {
            miou_b: b,
            miou_n: n,
            miou_a: a,
            hm,
            accuracy,
        }
    }
}

/// One row of a run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scene: String,
    pub strategy: String,
    pub budget: usize,
    pub clicks_used: usize,
    #[serde(rename = "mIoU_b")]
    pub miou_b: Option<f64>,
    #[serde(rename = "mIoU_n")]
    pub miou_n: Option<f64>,
    #[serde(rename = "mIoU_a")]
    pub miou_a: Option<f64>,
    #[serde(rename = "HM")]
    pub hm: Option<f64>,
    pub wall_time: f64,
}

pub fn write_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, rows).map_err(|e| Error::Io(std::io::Error::other(e)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction() {
        let truth: Vec<Option<usize>> = vec![Some(0), Some(1), Some(2), Some(1)];
        let t = ConfusionTally::from_pairs(
            vec![ClassTag::Base, ClassTag::Base, ClassTag::Novel],
            &truth,
            &truth,
        );
        for s in [ClassSubset::Base, ClassSubset::Novel, ClassSubset::All] {
            assert_eq!(miou(&t, s).unwrap().miou, 1.0);
        }
    }

    #[test]
    fn iou_from_counts() {
        let mut t = ConfusionTally::new(vec![ClassTag::Base]);
        t.tp[0] = 8;
        t.fp[0] = 2;
        assert_abs_diff_eq!(t.iou(0).unwrap(), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn constant_wrong_class_scores_zero() {
        let truth = vec![Some(0); 5];
        let pred = vec![Some(1); 5];
        let t = ConfusionTally::from_pairs(vec![ClassTag::Base, ClassTag::Base], &truth, &pred);
        assert_eq!(t.iou(0), Some(0.0));
        assert_eq!(t.iou(1), Some(0.0));
    }

    #[test]
    fn unknown_predictions_are_false_negatives_only() {
        let truth = vec![Some(0), Some(0), None];
        let pred = vec![None, Some(0), Some(0)];
        let t = ConfusionTally::from_pairs(vec![ClassTag::Base], &truth, &pred);
        assert_eq!((t.tp[0], t.fp[0], t.fn_[0]), (1, 0, 1));
    }

    #[test]
    fn empty_subset_is_an_error_and_unsupported_classes_excluded() {
        let truth = vec![Some(0)];
        let t = ConfusionTally::from_pairs(vec![ClassTag::Base, ClassTag::Novel], &truth, &truth);
        assert!(matches!(miou(&t, ClassSubset::Novel), Err(Error::EmptySubset)));
        let all = miou(&t, ClassSubset::All).unwrap();
        assert_eq!(all.excluded, vec![1]);
        assert_eq!(all.classes_used, vec![0]);
    }

    #[test]
    fn harmonic_mean_table_value() {
        assert_abs_diff_eq!(harmonic_mean(90.53, 85.47), 87.93, epsilon = 0.01);
        assert_eq!(harmonic_mean(78.52, 0.0), 0.0);
        assert_abs_diff_eq!(harmonic_mean(0.4, 0.4), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn csv_columns() {
        let row = ReportRow {
            scene: "s0".into(),
            strategy: "ioncoc".into(),
            budget: 10,
            clicks_used: 4,
            miou_b: Some(0.9),
            miou_n: None,
            miou_a: Some(0.8),
            hm: None,
            wall_time: 0.5,
        };
        let mut buf = Vec::new();
        write_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "scene,strategy,budget,clicks_used,mIoU_b,mIoU_n,mIoU_a,HM,wall_time"
        );
        assert_eq!(text.lines().nth(1).unwrap(), "s0,ioncoc,10,4,0.9,,0.8,,0.5");
    }

    proptest! {
        #[test]
        fn hm_never_exceeds_arithmetic_mean(b in 0.0f64..100.0, n in 0.0f64..100.0) {
            let hm = harmonic_mean(b, n);
            prop_assert!(hm <= (b + n) / 2.0 + 1e-12);
            if (b - n).abs() > 1e-9 && b > 0.0 && n > 0.0 {
                prop_assert!(hm < (b + n) / 2.0);
            }
        }

        #[test]
        fn tally_matches_triple_count(
            pairs in prop::collection::vec((prop::option::of(0usize..4), prop::option::of(0usize..4)), 1..80),
            seed in any::<u64>(),
        ) {
            let (truth, pred): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let tags = vec![ClassTag::Base, ClassTag::Base, ClassTag::Novel, ClassTag::Novel];
            let t = ConfusionTally::from_pairs(tags.clone(), &truth, &pred);
            for c in 0..4 {
                let tp = pairs.iter().filter(|(g, p)| *g == Some(c) && *p == Some(c)).count() as u64;
                let fp = pairs.iter().filter(|(g, p)| g.is_some() && *g != Some(c) && *p == Some(c)).count() as u64;
                let fn_ = pairs.iter().filter(|(g, p)| *g == Some(c) && *p != Some(c)).count() as u64;
                prop_assert_eq!((t.tp[c], t.fp[c], t.fn_[c]), (tp, fp, fn_));
            }
            // Point order does not matter.
            let mut shuffled = pairs.clone();
            let len = shuffled.len();
            shuffled.rotate_left((seed as usize) % len);
            shuffled.reverse();
            let (t2, p2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            let s = ConfusionTally::from_pairs(tags, &t2, &p2);
            prop_assert_eq!(miou(&t, ClassSubset::All).ok(), miou(&s, ClassSubset::All).ok());
        }
    }
}
