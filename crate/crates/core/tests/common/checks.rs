//! Invariant checks shared by the property suite and the acceptance gate.

use howseg_core::clustering::kmeans;
use howseg_core::crf::MeanField;
use howseg_core::io::{generate_synthetic, SynthSpec};
use howseg_core::matrix::Matrix;
use howseg_core::{ClickRequest, Session, SessionConfig};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use super::random_crf;

type CheckResult = Result<(), TestCaseError>;

pub fn kmeans_input() -> impl Strategy<Value = (Matrix<f64>, usize, u64)> {
    (2usize..60, 1usize..5)
        .prop_flat_map(|(n, d)| {
            (
                prop::collection::vec(-10.0f64..10.0, n * d),
                Just(n),
                Just(d),
                1usize..=n.min(6),
                any::<u64>(),
            )
        })
        .prop_map(|(data, n, d, k, seed)| (Matrix::from_vec(n, d, data).unwrap(), k, seed))
}

pub fn kmeans_sse_monotone(input: &(Matrix<f64>, usize, u64)) -> CheckResult {
    let (data, k, seed) = input;
    let r = kmeans(data, *k, *seed, 100).unwrap();
    for w in r.sse_history.windows(2) {
        prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "sse rose: {:?}", r.sse_history);
    }
    Ok(())
}

/// Session parameters plus batches of (point seed, label choice) clicks.
pub type SessionCase = (SynthSpec, usize, Vec<Vec<(usize, u8)>>);

pub fn session_case() -> impl Strategy<Value = SessionCase> {
    (
        super::small_synth(),
        1usize..12,
        prop::collection::vec(prop::collection::vec((any::<usize>(), 0u8..8), 0..4), 0..4),
    )
}

fn label_for(choice: u8, base: usize) -> String {
    let c = choice as usize;
    if c < base {
        format!("base{c}")
    } else {
        format!("n{}", c % 3)
    }
}

fn open(case: &SessionCase) -> Session {
    let frame = generate_synthetic(&case.0).unwrap();
    Session::open(
        frame,
        SessionConfig {
            initial_prototypes: case.1,
            seed: case.0.seed,
            ..SessionConfig::default()
        },
    )
    .unwrap()
}

fn batches(case: &SessionCase, n: usize) -> Vec<Vec<ClickRequest>> {
    case.2
        .iter()
        .map(|b| {
            b.iter()
                .map(|&(p, c)| ClickRequest::new(p % n, label_for(c, case.0.base_class_count)))
                .collect()
        })
        .collect()
}

fn check_session_state(s: &Session) -> CheckResult {
    let protos = s.prototypes();
    for k in 0..protos.len() {
        let norm = protos.vector(k).iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-9, "prototype {} norm {}", k, norm);
    }
    let corr = s.correspondence();
    let onehot = corr.one_hot();
    for row in onehot.iter_rows() {
        prop_assert_eq!(row.iter().map(|&v| v as usize).sum::<usize>(), 1);
    }
    let mut col = vec![0usize; onehot.cols()];
    for row in onehot.iter_rows() {
        for (c, &v) in row.iter().enumerate() {
            col[c] += v as usize;
        }
    }
    prop_assert_eq!(&col, &protos.member_counts);
    let pred = s.prediction();
    prop_assert_eq!(&pred.correspondence, &corr.assignment);
    for (i, &k) in pred.correspondence.iter().enumerate() {
        prop_assert_eq!(pred.point_labels[i], pred.prototype_labels[k]);
    }
    Ok(())
}

/// Unit norms, one-hot correspondence, propagation consistency and click
/// consistency after every update of a random click sequence.
pub fn session_invariants(case: &SessionCase) -> CheckResult {
    let mut s = open(case);
    check_session_state(&s)?;
    let n = s.frame().len();
    let mut novel_seen = 0;
    for batch in batches(case, n) {
        s.apply_clicks(&batch).unwrap();
        check_session_state(&s)?;
        for a in s.annotations().iter() {
            prop_assert_eq!(s.prediction().point_labels[a.point], a.label);
        }
        prop_assert!(s.label_space().novel_count() >= novel_seen);
        novel_seen = s.label_space().novel_count();
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CrfCase {
    pub seed: u64,
    pub k: usize,
    pub l: usize,
    pub lambda: f64,
}

pub fn crf_case() -> impl Strategy<Value = CrfCase> {
    (any::<u64>(), 1usize..12, 1usize..6, 0.0f64..4.0).prop_map(|(seed, k, l, lambda)| CrfCase {
        seed,
        k,
        l,
        lambda,
    })
}

pub fn q_rows_normalized(case: &CrfCase) -> CheckResult {
    let (unary, pairwise) = random_crf(case.seed, case.k, case.l, case.lambda, 1.0);
    let mut mf = MeanField::new(&unary, &pairwise).unwrap();
    for _ in 0..=10 {
        for row in mf.state().q.iter_rows() {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12, "row sum {}", s);
            prop_assert!(row.iter().all(|&q| q >= 0.0));
        }
        mf.step();
    }
    Ok(())
}

fn run_in_pool(threads: usize, case: &SessionCase) -> Session {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let mut s = open(case);
        let n = s.frame().len();
        for batch in batches(case, n) {
            s.apply_clicks(&batch).unwrap();
        }
        s
    })
}

pub fn deterministic_across_threads(case: &SessionCase) -> CheckResult {
    let a = run_in_pool(1, case);
    let b = run_in_pool(4, case);
    prop_assert_eq!(a.prediction(), b.prediction());
    prop_assert_eq!(a.prototypes(), b.prototypes());
    Ok(())
}
