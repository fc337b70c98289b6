//! Per-scene labeling loop: prototype construction, click updates and
//! open-world predictions.

use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::crf::{
    augment_voting, collapse_to_closed, decode, mean_field, pairwise_from_prototypes,
    unary_from_votes, voting_matrix, DEFAULT_EPSILON,
};
use crate::error::{Error, Result};
use crate::prototype::{
    correspondence, disambiguate, init_prototypes, Correspondence, DisambiguationParams,
};
use crate::scene::{
    Annotation, AnnotationSet, LabelId, LabelSpace, Prediction, PrototypeSet, SceneFrame,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub initial_prototypes: usize,
    /// Distance kernel bandwidth in meters.
    pub sigma: f64,
    pub lambda: f64,
    pub delta: f64,
    pub mf_iters: usize,
    pub seed: u64,
    pub max_disambiguation_rounds: usize,
    /// Split prototypes that hold clicks of several classes.
    pub disambiguation: bool,
    pub epsilon: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            initial_prototypes: 30,
            sigma: 0.5,
            lambda: 1.0,
            delta: 1.0,
            mf_iters: 10,
            seed: 0,
            max_disambiguation_rounds: 5,
            disambiguation: true,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_prototypes == 0 || self.mf_iters == 0 || self.max_disambiguation_rounds == 0 {
            return Err(Error::invalid("prototype, iteration and round counts must be at least 1"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma must be positive"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("delta must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.01) {
            return Err(Error::invalid("epsilon must lie in (0, 0.01)"));
        }
        Ok(())
    }
}

/// One click as supplied by a user or simulator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickRequest {
    pub point: usize,
    pub label: String,
}

impl ClickRequest {
    pub fn new(point: usize, label: impl Into<String>) -> Self {
        Self {
            point,
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionEvent {
    Opened { points: usize, prototypes: usize },
    ClicksApplied { clicks: usize, registered: Vec<String> },
    Disambiguated { rounds: usize, before: usize, after: usize },
    Labeled { iteration: u32, prototypes: usize },
    Refreshed { iteration: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub event: SessionEvent,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u128,
}

/// Diagnostics of the most recent update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub disambiguation_rounds: usize,
    pub ambiguous_per_round: Vec<usize>,
    pub conflicting_prototypes: Vec<usize>,
    pub zero_norm_points: usize,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Session {
    frame: Arc<SceneFrame>,
    config: SessionConfig,
    label_space: LabelSpace,
    prototypes: PrototypeSet,
    correspondence: Correspondence,
    annotations: AnnotationSet,
    prediction: Prediction,
    iteration: u32,
    events: Vec<LoggedEvent>,
    last_report: UpdateReport,
}

/// Gives every point the label of its prototype.
pub fn propagate(prototype_labels: &[LabelId], assignment: &[usize]) -> Vec<LabelId> {
    assignment.iter().map(|&k| prototype_labels[k]).collect()
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl Session {
    /// Builds initial prototypes and the click-free prediction.
    pub fn open(frame: impl Into<Arc<SceneFrame>>, config: SessionConfig) -> Result<Self> {
        config.validate()?;
        let frame = frame.into();
        let k = config.initial_prototypes.min(frame.len());
        let mut prototypes = init_prototypes(&frame, k, config.seed)?;
        let corr = correspondence(&frame, &prototypes);
        prototypes.member_counts = corr.column_sums();
        let label_space = frame.label_space();
        let source = frame.closed_argmax();
        let mut session = Self {
            frame,
            config,
            label_space,
            prototypes,
            correspondence: corr,
            annotations: AnnotationSet::new(),
            prediction: Prediction {
                point_labels: Vec::new(),
                prototype_labels: Vec::new(),
                prototype_probs: crate::matrix::Matrix::zeros(0, 0),
                correspondence: Vec::new(),
            },
            iteration: 0,
            events: Vec::new(),
            last_report: UpdateReport::default(),
        };
        session.log(SessionEvent::Opened {
            points: session.frame.len(),
            prototypes: k,
        });
        session.last_report.zero_norm_points = session.correspondence.zero_norm_points.len();
        session.label(&source)?;
        Ok(session)
    }

    fn log(&mut self, event: SessionEvent) {
        self.events.push(LoggedEvent {
            event,
            timestamp_ms: now_ms(),
        });
    }

    /// Votes, CRF inference, decoding and propagation from `source` point labels
    /// over the closed-world rows.
    fn label(&mut self, source: &[usize]) -> Result<()> {
        let unknown = self.label_space.unknown().0;
        let votes = voting_matrix(source, &self.correspondence, unknown + 1);
        let votes = augment_voting(&votes, self.label_space.novel_count(), unknown);
        let unary = unary_from_votes(
            &votes,
            &self.annotations,
            &self.correspondence,
            self.config.epsilon,
        )?;
        let pairwise =
            pairwise_from_prototypes(&self.prototypes, self.config.delta, self.config.lambda)?;
        let state = mean_field(&unary, &pairwise, self.config.mf_iters)?;
        let prototype_labels = decode(&state, &unary);
        let point_labels = propagate(&prototype_labels, &self.correspondence.assignment);
        self.last_report.conflicting_prototypes = unary.conflicts.clone();
        self.prediction = Prediction {
            point_labels,
            prototype_labels,
            prototype_probs: state.q,
            correspondence: self.correspondence.assignment.clone(),
        };
        self.log(SessionEvent::Labeled {
            iteration: self.iteration,
            prototypes: self.prototypes.len(),
        });
        Ok(())
    }

    /// Applies a batch of clicks and recomputes the prediction. The batch is
    /// validated as a whole; on error the session is left untouched.
    pub fn apply_clicks(&mut self, clicks: &[ClickRequest]) -> Result<()> {
        if clicks.is_empty() {
            self.iteration += 1;
            self.log(SessionEvent::Refreshed {
                iteration: self.iteration,
            });
            return Ok(());
        }
        let n = self.frame.len();
        let mut space = self.label_space.clone();
        let before_novel = space.novel_count();
        let mut resolved = Vec::with_capacity(clicks.len());
        for c in clicks {
            if c.point >= n {
                return Err(Error::PointOutOfRange { index: c.point, len: n });
            }
            resolved.push((c.point, space.resolve_click_label(&c.label)?));
        }
        let registered = space.novel_names()[before_novel..].to_vec();
        self.label_space = space;
        let t = self.iteration + 1;
        for (point, label) in resolved {
            self.annotations.insert(Annotation {
                point,
                label,
                iteration: t,
            });
        }
        self.log(SessionEvent::ClicksApplied {
            clicks: clicks.len(),
            registered,
        });

        self.last_report = UpdateReport::default();
        if self.config.disambiguation {
            let params = DisambiguationParams {
                sigma: self.config.sigma,
                max_rounds: self.config.max_disambiguation_rounds,
                seed: self.config.seed,
            };
            let before = self.prototypes.len();
            let outcome = disambiguate(
                &self.frame,
                &self.prototypes,
                &self.correspondence,
                &self.annotations,
                &params,
            )?;
            self.prototypes = outcome.prototypes;
            self.correspondence = outcome.correspondence;
            self.last_report.disambiguation_rounds = outcome.rounds;
            self.last_report.ambiguous_per_round = outcome.ambiguous_per_round;
            self.last_report.diagnostics = outcome.diagnostics;
            if outcome.rounds > 0 {
                self.log(SessionEvent::Disambiguated {
                    rounds: outcome.rounds,
                    before,
                    after: self.prototypes.len(),
                });
            }
        }
        self.last_report.zero_norm_points = self.correspondence.zero_norm_points.len();

        let source = collapse_to_closed(&self.prediction.point_labels, self.label_space.unknown());
        self.iteration = t;
        self.label(&source)
    }

    pub fn frame(&self) -> &SceneFrame {
        &self.frame
    }

    pub fn shared_frame(&self) -> Arc<SceneFrame> {
        Arc::clone(&self.frame)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn prototypes(&self) -> &PrototypeSet {
        &self.prototypes
    }

    pub fn correspondence(&self) -> &Correspondence {
        &self.correspondence
    }

    pub fn annotations(&self) -> &AnnotationSet {
        &self.annotations
    }

    pub fn prediction(&self) -> &Prediction {
        &self.prediction
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn events(&self) -> &[LoggedEvent] {
        &self.events
    }

    pub fn last_report(&self) -> &UpdateReport {
        &self.last_report
    }

    /// Names of the predicted point labels.
    pub fn point_label_names(&self) -> Vec<&str> {
        self.prediction
            .point_labels
            .iter()
            .map(|&l| self.label_space.name(l).expect("label in space"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{generate_synthetic, SynthSpec};
    use crate::matrix::Matrix;
    use crate::scene::{ClassNames, FrameParts};

    fn scene(novel: usize) -> SceneFrame {
        generate_synthetic(&SynthSpec {
            novel_class_count: novel,
            points_per_class: 100,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn base_scene_follows_closed_world() {
        let frame = scene(0);
        let closed = frame.closed_argmax();
        let s = Session::open(frame, SessionConfig::default()).unwrap();
        let same = s
            .prediction()
            .point_labels
            .iter()
            .zip(&closed)
            .filter(|(l, c)| l.0 == **c)
            .count();
        assert!(same as f64 / closed.len() as f64 >= 0.99);
        assert_eq!(s.iteration(), 0);
    }

    #[test]
    fn novel_region_starts_unknown() {
        let frame = scene(2);
        let gt = frame.gt_labels().unwrap().to_vec();
        let s = Session::open(frame, SessionConfig::default()).unwrap();
        for (i, &g) in gt.iter().enumerate() {
            if g > 6 {
                assert_eq!(s.prediction().point_labels[i], LabelId(6), "point {i}");
            }
        }
    }

    #[test]
    fn single_point_scene() {
        let frame = SceneFrame::new(FrameParts {
            positions: vec![[0.0; 3]],
            raw_features: Matrix::zeros(1, 0),
            features: Matrix::from_vec(1, 2, vec![0.3, 0.4]).unwrap(),
            closed_logits: Matrix::from_vec(1, 3, vec![0.1, 2.0, 0.5]).unwrap(),
            gt_labels: None,
            block_ids: None,
            class_names: ClassNames {
                base: vec!["a".into(), "b".into()],
                novel: vec![],
            },
        })
        .unwrap();
        let s = Session::open(
            frame,
            SessionConfig {
                initial_prototypes: 1,
                ..SessionConfig::default()
            },
        )
        .unwrap();
        assert_eq!(s.prototypes().len(), 1);
        assert_eq!(s.prediction().point_labels, vec![LabelId(1)]);
    }

    #[test]
    fn novel_clicks_register_and_stick() {
        let frame = scene(2);
        let gt = frame.gt_labels().unwrap().to_vec();
        let p7 = gt.iter().position(|&g| g == 7).unwrap();
        let p8 = gt.iter().position(|&g| g == 8).unwrap();
        let mut s = Session::open(frame, SessionConfig::default()).unwrap();
        s.apply_clicks(&[ClickRequest::new(p7, "novel0"), ClickRequest::new(p8, "novel1")])
            .unwrap();
        let names = s.point_label_names();
        assert_eq!(names[p7], "novel0");
        assert_eq!(names[p8], "novel1");
        assert_eq!(s.label_space().novel_count(), 2);
        assert_eq!(s.iteration(), 1);
    }

    #[test]
    fn empty_click_list_only_advances_iteration() {
        let mut s = Session::open(scene(2), SessionConfig::default()).unwrap();
        let before = s.prediction().clone();
        s.apply_clicks(&[]).unwrap();
        assert_eq!(s.prediction(), &before);
        assert_eq!(s.iteration(), 1);
    }

    #[test]
    fn mixed_prototype_is_split() {
        let frame = scene(2);
        let mut s = Session::open(
            frame,
            SessionConfig {
                initial_prototypes: 2,
                ..SessionConfig::default()
            },
        )
        .unwrap();
        let corr = s.correspondence().assignment.clone();
        let gt = s.frame().gt_labels().unwrap().to_vec();
        // Two points of different classes sharing a prototype.
        let (a, b) = (0..gt.len())
            .flat_map(|i| (0..gt.len()).map(move |j| (i, j)))
            .find(|&(i, j)| corr[i] == corr[j] && gt[i] != gt[j])
            .unwrap();
        let name = |g: i32| s.frame().class_names().gt_name(g).unwrap().to_string();
        let clicks = [ClickRequest::new(a, name(gt[a])), ClickRequest::new(b, name(gt[b]))];
        s.apply_clicks(&clicks).unwrap();
        assert!(s.prototypes().len() > 2);
        assert!(s.prototypes().generation >= 1);
        let names = s.point_label_names();
        assert_eq!(names[a], clicks[0].label);
        assert_eq!(names[b], clicks[1].label);
    }

    #[test]
    fn invalid_clicks_leave_state_untouched() {
        let mut s = Session::open(scene(1), SessionConfig::default()).unwrap();
        let before = s.prediction().clone();
        assert!(matches!(
            s.apply_clicks(&[ClickRequest::new(0, "x"), ClickRequest::new(10_000, "y")]),
            Err(Error::PointOutOfRange { .. })
        ));
        assert!(matches!(
            s.apply_clicks(&[ClickRequest::new(0, "unknown")]),
            Err(Error::UnknownNotClickable)
        ));
        assert_eq!(s.label_space().novel_count(), 0);
        assert_eq!(s.prediction(), &before);
        assert_eq!(s.iteration(), 0);
    }

    #[test]
    fn overwriting_click_wins() {
        let mut s = Session::open(scene(1), SessionConfig::default()).unwrap();
        s.apply_clicks(&[ClickRequest::new(5, "novelX")]).unwrap();
        s.apply_clicks(&[ClickRequest::new(5, "base0")]).unwrap();
        assert_eq!(s.point_label_names()[5], "base0");
        assert_eq!(s.annotations().len(), 1);
        // The registered novel class stays.
        assert_eq!(s.label_space().novel_count(), 1);
    }

    #[test]
    fn propagate_is_lookup() {
        assert_eq!(
            propagate(&[LabelId(3), LabelId(1)], &[1, 0, 1]),
            vec![LabelId(1), LabelId(3), LabelId(1)]
        );
        assert_eq!(propagate(&[LabelId(2); 3], &[0, 1, 2, 2]), vec![LabelId(2); 4]);
    }

    #[test]
    fn config_validation() {
        for c in [
            SessionConfig { initial_prototypes: 0, ..SessionConfig::default() },
            SessionConfig { sigma: 0.0, ..SessionConfig::default() },
            SessionConfig { lambda: -1.0, ..SessionConfig::default() },
        ] {
            assert!(c.validate().is_err());
        }
    }
}
