#![allow(dead_code)]

pub mod checks;

use howseg_core::annotator::{evaluate, run_strategy, StrategyKind, StrategySpec};
use howseg_core::crf::{pairwise_from_vectors, PairwiseField, UnaryField, DEFAULT_EPSILON};
use howseg_core::io::{generate_synthetic, SynthSpec};
use howseg_core::matrix::Matrix;
use howseg_core::scene::{ClassNames, FrameParts};
use howseg_core::{SceneFrame, Session, SessionConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small synthetic scene parameters for property runs.
pub fn small_synth() -> impl Strategy<Value = SynthSpec> {
    (1usize..4, 0usize..3, 5usize..30, 2usize..8, 0.0f64..10.0, any::<u64>()).prop_map(
        |(base, novel, ppc, dim, sep, seed)| SynthSpec {
            base_class_count: base,
            novel_class_count: novel,
            points_per_class: ppc,
            feature_dim: dim,
            feature_separation: sep,
            seed,
            ..SynthSpec::default()
        },
    )
}

/// Arbitrary valid frame, including optional arrays and odd names.
pub fn arbitrary_frame() -> impl Strategy<Value = SceneFrame> {
    (1usize..40, 0usize..4, 1usize..6, 1usize..4, 0usize..3, any::<bool>(), any::<bool>(), any::<u64>())
        .prop_map(|(n, d0, f, b, novel, with_gt, with_blocks, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut vals = |len: usize| -> Vec<f32> {
                (0..len).map(|_| rng.random_range(-1e3f32..1e3)).collect()
            };
            let positions = vals(3 * n).chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            let raw = vals(n * d0);
            let feats = vals(n * f);
            let logits = vals(n * (b + 1));
            let max = (b + novel) as i32;
            let gt = with_gt.then(|| (0..n).map(|_| rng.random_range(-1..=max)).collect());
            let blocks = with_blocks.then(|| (0..n).map(|_| rng.random_range(0..16)).collect());
            let names = ClassNames {
                base: (0..b).map(|i| format!("b{i}é")).collect(),
                novel: (0..novel).map(|i| format!("novel {i}")).collect(),
            };
            SceneFrame::new(FrameParts {
                positions,
                raw_features: Matrix::from_vec(n, d0, raw).unwrap(),
                features: Matrix::from_vec(n, f, feats).unwrap(),
                closed_logits: Matrix::from_vec(n, b + 1, logits).unwrap(),
                gt_labels: gt,
                block_ids: blocks,
                class_names: names,
            })
            .unwrap()
        })
}

/// Random CRF instance: unit prototype vectors and floored probability rows.
pub fn random_crf(seed: u64, k: usize, l: usize, lambda: f64, delta: f64) -> (UnaryField, PairwiseField) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 4;
    let mut vectors = Matrix::zeros(k, dim);
    for i in 0..k {
        let row = vectors.row_mut(i);
        for v in row.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        row.iter_mut().for_each(|v| *v /= norm);
    }
    let mut probs = Matrix::zeros(k, l);
    for i in 0..k {
        for c in 0..l {
            probs.set(i, c, rng.random_range(0.01..1.0));
        }
    }
    let unary = UnaryField::from_probs(probs, DEFAULT_EPSILON).unwrap();
    let pairwise = pairwise_from_vectors(&vectors, delta, lambda).unwrap();
    (unary, pairwise)
}

/// Scene family of the end-to-end checks: 6 base and 2 novel classes,
/// 200 points per class, separation 8.
pub fn suite_scene(seed: u64) -> SceneFrame {
    generate_synthetic(&SynthSpec {
        base_class_count: 6,
        novel_class_count: 2,
        points_per_class: 200,
        feature_separation: 8.0,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

pub struct RunResult {
    pub miou_a: f64,
    pub clicks_used: usize,
}

pub fn run_once(frame: SceneFrame, config: SessionConfig, kind: StrategyKind, budget: usize) -> RunResult {
    let mut session = Session::open(frame, config).unwrap();
    let out = run_strategy(&mut session, &StrategySpec::new(kind, budget)).unwrap();
    RunResult {
        miou_a: evaluate(&session).unwrap().miou_a.unwrap(),
        clicks_used: out.clicks_used,
    }
}
