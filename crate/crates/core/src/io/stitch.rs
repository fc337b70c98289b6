use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scene::{FrameParts, SceneFrame};

/// Default cap on blocks per stitched sub-scene.
pub const DEFAULT_MAX_BLOCKS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Stitched {
    pub frame: SceneFrame,
    pub blocks_used: usize,
    pub warnings: Vec<String>,
}

/// Concatenates up to `max_blocks` frames into one sub-scene, keeping world
/// positions and recording a block id per point.
pub fn stitch_blocks(frames: &[SceneFrame], max_blocks: usize) -> Result<Stitched> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("no blocks to stitch"))?;
    if max_blocks == 0 {
        return Err(Error::invalid("max_blocks must be at least 1"));
    }
    let mut warnings = Vec::new();
    let used = if frames.len() > max_blocks {
        warnings.push(format!(
            "{} blocks supplied, only the first {max_blocks} were stitched",
            frames.len()
        ));
        &frames[..max_blocks]
    } else {
        frames
    };
    let (d0, f) = (first.raw_dim(), first.feature_dim());
    for (i, fr) in used.iter().enumerate() {
        if fr.raw_dim() != d0 || fr.feature_dim() != f || fr.class_names() != first.class_names() {
            return Err(Error::invalid(format!(
                "block {i} does not share dimensions or classes with block 0"
            )));
        }
    }
    let with_gt = used.iter().all(|f| f.gt_labels().is_some());
    if !with_gt && used.iter().any(|f| f.gt_labels().is_some()) {
        warnings.push("ground truth missing in some blocks; dropped from the sub-scene".into());
    }

    let n: usize = used.iter().map(|f| f.len()).sum();
    let c = first.base_class_count() + 1;
    let mut positions = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n * d0);
    let mut feats = Vec::with_capacity(n * f);
    let mut logits = Vec::with_capacity(n * c);
    let mut gt = Vec::new();
    let mut blocks = Vec::with_capacity(n);
    for (b, fr) in used.iter().enumerate() {
        positions.extend_from_slice(fr.positions());
        raw.extend_from_slice(fr.raw_features().as_slice());
        feats.extend_from_slice(fr.features().as_slice());
        logits.extend_from_slice(fr.closed_logits().as_slice());
        if with_gt {
            gt.extend_from_slice(fr.gt_labels().expect("checked"));
        }
        blocks.extend(std::iter::repeat_n(b as i32, fr.len()));
    }
    let frame = SceneFrame::new(FrameParts {
        positions,
        raw_features: Matrix::from_vec(n, d0, raw).expect("sized"),
        features: Matrix::from_vec(n, f, feats).expect("sized"),
        closed_logits: Matrix::from_vec(n, c, logits).expect("sized"),
        gt_labels: with_gt.then_some(gt),
        block_ids: Some(blocks),
        class_names: first.class_names().clone(),
    })?;
    Ok(Stitched {
        frame,
        blocks_used: used.len(),
        warnings,
    })
}
