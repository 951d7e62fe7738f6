//! The online detection loop.
//!
//! Each incoming feature vector extends a sliding window that the scorer
//! turns into a loss. Two thresholds split the loss axis into a confident
//! normal region, a confident abnormal region and an uncertain band that
//! the forest decides. Confident samples become pseudo-labeled training
//! data; every `m` samples the thresholds are refitted and both models are
//! retrained on what was collected.

use crate::buffer::LossBuffer;
use crate::forest::{fit_forest, Forest, ForestConfig, LabeledSample, Votes};
use crate::label::Label;
use crate::scorer::{Scorer, ScorerError, SequenceWindow};
use crate::threshold::{adaptive_threshold, DistributionFit, ThresholdError, ThresholdPair};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("insufficient first-round data: {0}")]
    InsufficientData(String),
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

/// What the engine is allowed to update after bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpdatePolicy {
    /// Refit T1 (and T2 once it exists) at every retrain.
    pub refit_thresholds: bool,
    /// Fine-tune the scorer on pseudo-normal windows at every retrain.
    pub retrain_scorer: bool,
    /// Route through T2 and the forest once in the steady phase. When off,
    /// every verdict is decided by T1 alone.
    pub two_layer: bool,
}

impl Default for UpdatePolicy {
    fn default() -> Self {
        Self { refit_thresholds: true, retrain_scorer: true, two_layer: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Abnormal-loss count that ends the initial phase.
    pub n: usize,
    /// Samples between retrains.
    pub m: usize,
    /// Percentile of the normal-loss fit used for T1.
    pub p1: f64,
    /// Upper-tail mass of the abnormal-loss fit above T2, so T2 is the
    /// `1 - p2` quantile of that fit.
    pub p2: f64,
    pub buffer_capacity: usize,
    pub bootstrap_epochs: usize,
    pub retrain_epochs: usize,
    pub forest: ForestConfig,
    pub policy: UpdatePolicy,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            n: 500,
            m: 6400,
            p1: 0.98,
            p2: 0.10,
            buffer_capacity: 5000,
            bootstrap_epochs: 20,
            retrain_epochs: 3,
            forest: ForestConfig::default(),
            policy: UpdatePolicy::default(),
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |s: String| Err(EngineError::InvalidConfig(s));
        if !(self.p1 > 0.0 && self.p1 < 1.0) {
            return bad(format!("p1 = {} outside (0, 1)", self.p1));
        }
        if !(self.p2 > 0.0 && self.p2 < 1.0) {
            return bad(format!("p2 = {} outside (0, 1)", self.p2));
        }
        if self.n == 0 || self.m == 0 || self.buffer_capacity == 0 {
            return bad("n, m and buffer_capacity must be at least 1".into());
        }
        if self.n > self.buffer_capacity {
            return bad(format!("n = {} exceeds buffer capacity {}", self.n, self.buffer_capacity));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initial,
    Steady,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    HighConfNormal,
    HighConfAbnormal,
    Classifier,
}

impl Route {
    pub fn as_str(self) -> &'static str {
        match self {
            Route::HighConfNormal => "high_conf_normal",
            Route::HighConfAbnormal => "high_conf_abnormal",
            Route::Classifier => "classifier",
        }
    }
}

/// Engine input: a feature vector and its stream position, without truth.
#[derive(Debug, Clone, Copy)]
pub struct RecordView<'a> {
    pub index: u64,
    pub features: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub index: u64,
    pub label: Label,
    pub route: Route,
    pub loss: f64,
    /// Present when the forest decided.
    pub votes: Option<Votes>,
    /// Ranking score for ROC analysis, see [`route_score`].
    pub score: f64,
    pub t1: f64,
    pub t2: Option<f64>,
}

/// Route-aware ranking score. With a usable band (T2 > T1) the loss is
/// mapped affinely so that T1 -> 0 and T2 -> 1; confident routes then land
/// below 0 or above 1 and forest decisions use their abnormal-vote
/// fraction inside [0, 1]. Without a band the score is `loss / T1 - 1`.
pub fn route_score(loss: f64, t1: f64, t2: Option<f64>, route: Route, votes: Option<Votes>) -> f64 {
    match (route, votes) {
        (Route::Classifier, Some(v)) => v.abnormal_fraction(),
        _ => match t2 {
            Some(t2) if t2 > t1 => (loss - t1) / (t2 - t1),
            _ => loss / t1.abs().max(f64::MIN_POSITIVE) - 1.0,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    /// Samples processed when the retrain ran.
    pub at: u64,
    /// 1-based retrain counter.
    pub retrain: u64,
    pub phase: Phase,
    pub t1_old: f64,
    pub t1_new: f64,
    pub t2_old: Option<f64>,
    pub t2_new: Option<f64>,
    pub scorer_windows: usize,
    pub forest_samples: usize,
    pub forest_trained: bool,
    /// Mean loss over the last scorer epoch, when the scorer was trained.
    pub scorer_final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EngineWarning {
    ThresholdRefit { which: &'static str, error: ThresholdError },
    BandCollapsed { t1: f64, t2: f64 },
    ForestSkipped { reason: String },
}

impl std::fmt::Display for EngineWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EngineWarning::ThresholdRefit { which, error } => {
                write!(f, "{which} refit failed, keeping previous value: {error}")
            }
            EngineWarning::BandCollapsed { t1, t2 } => {
                write!(f, "T2 = {t2} <= T1 = {t1}: uncertain band is empty")
            }
            EngineWarning::ForestSkipped { reason } => {
                write!(f, "forest not retrained, keeping previous: {reason}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EngineEvent {
    Verdict(Verdict),
    Retrain(RetrainReport),
    PhaseTransition { at: u64, t2: f64 },
    Warning(EngineWarning),
}

pub trait EventSink {
    fn emit(&mut self, event: EngineEvent);
}

impl EventSink for Vec<EngineEvent> {
    fn emit(&mut self, event: EngineEvent) {
        self.push(event);
    }
}

/// Discards every event.
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&mut self, _: EngineEvent) {}
}

pub struct Engine<S: Scorer> {
    config: EngineConfig,
    scorer: S,
    phase: Phase,
    normal_losses: LossBuffer,
    abnormal_losses: LossBuffer,
    thresholds: ThresholdPair,
    forest: Option<Forest>,
    window: VecDeque<Vec<f64>>,
    batch_len: usize,
    pending_x: Vec<LabeledSample>,
    pending_x_normal: Vec<SequenceWindow>,
    seen: u64,
    retrains: u64,
}

fn make_windows(rows: &[Vec<f64>], t: usize) -> Vec<SequenceWindow> {
    rows.windows(t)
        .enumerate()
        .map(|(i, w)| SequenceWindow::from_rows(w, (i + t - 1) as u64))
        .collect()
}

impl<S: Scorer> Engine<S> {
    /// Trains the scorer on every first-round window (for
    /// `config.bootstrap_epochs`, zero keeps it as given), scores them,
    /// fills the normal buffer and fits T1. The sliding window is primed
    /// with the last `T - 1` first-round rows.
    pub fn bootstrap(
        mut scorer: S,
        first_round: &[Vec<f64>],
        config: EngineConfig,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let t = scorer.timestep();
        let d = scorer.input_dim();
        if let Some(r) = first_round.iter().find(|r| r.len() != d) {
            return Err(EngineError::DimensionMismatch { expected: d, got: r.len() });
        }
        let windows = make_windows(first_round, t);
        if windows.len() < 2 {
            return Err(EngineError::InsufficientData(format!(
                "{} rows give {} windows of length {t}; need at least 2",
                first_round.len(),
                windows.len()
            )));
        }
        if config.bootstrap_epochs > 0 {
            scorer.train(&windows, config.bootstrap_epochs)?;
        }
        let losses = windows
            .par_iter()
            .map(|w| scorer.score(w))
            .collect::<Result<Vec<f64>, _>>()?;
        let (t1, fit) = adaptive_threshold(&losses, config.p1)
            .map_err(|e| EngineError::InsufficientData(format!("T1 fit on first-round losses: {e}")))?;
        let mut normal_losses = LossBuffer::new(config.buffer_capacity);
        for l in losses {
            normal_losses.push(l);
        }
        let window = first_round[first_round.len() + 1 - t..].iter().cloned().collect();
        Ok(Self {
            abnormal_losses: LossBuffer::new(config.buffer_capacity),
            normal_losses,
            thresholds: ThresholdPair { t1, t2: None, p1: config.p1, p2: config.p2, fit_normal: fit, fit_abnormal: None },
            config,
            scorer,
            phase: Phase::Initial,
            forest: None,
            window,
            batch_len: 0,
            pending_x: Vec::new(),
            pending_x_normal: Vec::new(),
            seen: 0,
            retrains: 0,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn scorer(&self) -> &S {
        &self.scorer
    }

    pub fn into_scorer(self) -> S {
        self.scorer
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn thresholds(&self) -> &ThresholdPair {
        &self.thresholds
    }

    pub fn forest(&self) -> Option<&Forest> {
        self.forest.as_ref()
    }

    pub fn normal_losses(&self) -> &LossBuffer {
        &self.normal_losses
    }

    pub fn abnormal_losses(&self) -> &LossBuffer {
        &self.abnormal_losses
    }

    pub fn batch_len(&self) -> usize {
        self.batch_len
    }

    pub fn samples_seen(&self) -> u64 {
        self.seen
    }

    pub fn retrains(&self) -> u64 {
        self.retrains
    }

    /// Appends a row to the sliding window and returns the window ending at it.
    fn advance_window(&mut self, record: RecordView<'_>) -> Result<SequenceWindow, EngineError> {
        let d = self.scorer.input_dim();
        if record.features.len() != d {
            return Err(EngineError::DimensionMismatch { expected: d, got: record.features.len() });
        }
        let t = self.scorer.timestep();
        self.window.push_back(record.features.to_vec());
        while self.window.len() > t {
            self.window.pop_front();
        }
        let rows: Vec<Vec<f64>> = self.window.iter().cloned().collect();
        Ok(SequenceWindow::from_rows(&rows, record.index))
    }

    /// Scores one record and routes it. Does not retrain; see [`Engine::step`].
    pub fn process(&mut self, record: RecordView<'_>) -> Result<Verdict, EngineError> {
        let window = self.advance_window(record)?;
        let loss = self.scorer.score(&window)?;
        Ok(self.route(window, loss))
    }

    fn route(&mut self, window: SequenceWindow, loss: f64) -> Verdict {
        self.seen += 1;
        self.batch_len += 1;
        let (t1, t2) = (self.thresholds.t1, self.thresholds.t2);
        let index = window.end_index;
        let features = window.last_row().to_vec();
        let steady = self.phase == Phase::Steady && self.config.policy.two_layer;

        let (label, route, votes) = if !steady {
            if loss < t1 {
                (Label::Normal, Route::HighConfNormal, None)
            } else {
                (Label::Abnormal, Route::HighConfAbnormal, None)
            }
        } else if loss < t1 {
            (Label::Normal, Route::HighConfNormal, None)
        } else if t2.is_some_and(|t2| loss > t2) {
            (Label::Abnormal, Route::HighConfAbnormal, None)
        } else {
            match &self.forest {
                Some(f) => {
                    let (label, votes) = f.predict(&features);
                    (label, Route::Classifier, Some(votes))
                }
                None => {
                    let mid = 0.5 * (t1 + t2.unwrap_or(t1));
                    let label = if loss >= mid { Label::Abnormal } else { Label::Normal };
                    (label, Route::Classifier, None)
                }
            }
        };

        match route {
            Route::HighConfNormal => {
                self.normal_losses.push(loss);
                self.pending_x.push(LabeledSample::new(features, Label::Normal));
                self.pending_x_normal.push(window);
            }
            Route::HighConfAbnormal => {
                self.abnormal_losses.push(loss);
                self.pending_x.push(LabeledSample::new(features, Label::Abnormal));
            }
            Route::Classifier => {
                if label == Label::Normal {
                    self.pending_x_normal.push(window);
                }
            }
        }

        let score = route_score(loss, t1, t2, route, votes);
        Verdict { index, label, route, loss, votes, score, t1, t2 }
    }

    /// Moves to the steady phase the first time the abnormal buffer holds
    /// `n` losses, fitting the initial T2. Returns true only on that call.
    /// If T2 cannot be fitted the engine stays in the initial phase and
    /// tries again on the next call.
    pub fn phase_transition(&mut self, sink: &mut dyn EventSink) -> bool {
        if self.phase == Phase::Steady || self.abnormal_losses.len() < self.config.n {
            return false;
        }
        match self.fit_t2() {
            Ok((t2, fit)) => {
                self.thresholds.t2 = Some(t2);
                self.thresholds.fit_abnormal = Some(fit);
                self.phase = Phase::Steady;
                sink.emit(EngineEvent::PhaseTransition { at: self.seen, t2 });
                self.check_band(sink);
                true
            }
            Err(error) => {
                sink.emit(EngineEvent::Warning(EngineWarning::ThresholdRefit { which: "T2", error }));
                false
            }
        }
    }

    fn fit_t2(&self) -> Result<(f64, DistributionFit), ThresholdError> {
        adaptive_threshold(&self.abnormal_losses.to_vec(), 1.0 - self.config.p2)
    }

    fn check_band(&self, sink: &mut dyn EventSink) {
        if let Some(t2) = self.thresholds.t2 {
            if t2 <= self.thresholds.t1 {
                sink.emit(EngineEvent::Warning(EngineWarning::BandCollapsed { t1: self.thresholds.t1, t2 }));
            }
        }
    }

    /// Runs the periodic update once `m` samples have accumulated.
    pub fn maybe_retrain(&mut self, sink: &mut dyn EventSink) -> Result<Option<RetrainReport>, EngineError> {
        if self.batch_len < self.config.m {
            return Ok(None);
        }
        let t1_old = self.thresholds.t1;
        let t2_old = self.thresholds.t2;

        if self.config.policy.refit_thresholds {
            match adaptive_threshold(&self.normal_losses.to_vec(), self.config.p1) {
                Ok((t1, fit)) => {
                    self.thresholds.t1 = t1;
                    self.thresholds.fit_normal = fit;
                }
                Err(error) => {
                    sink.emit(EngineEvent::Warning(EngineWarning::ThresholdRefit { which: "T1", error }))
                }
            }
            if self.phase == Phase::Steady {
                match self.fit_t2() {
                    Ok((t2, fit)) => {
                        self.thresholds.t2 = Some(t2);
                        self.thresholds.fit_abnormal = Some(fit);
                    }
                    Err(error) => sink
                        .emit(EngineEvent::Warning(EngineWarning::ThresholdRefit { which: "T2", error })),
                }
            }
            self.check_band(sink);
        }

        let scorer_windows = self.pending_x_normal.len();
        let mut scorer_final_loss = None;
        if self.config.policy.retrain_scorer && scorer_windows > 0 && self.config.retrain_epochs > 0 {
            let report = self.scorer.train(&self.pending_x_normal, self.config.retrain_epochs)?;
            scorer_final_loss = report.epoch_total.last().copied();
        }

        let forest_samples = self.pending_x.len();
        let mut forest_trained = false;
        if self.phase == Phase::Steady && self.config.policy.two_layer {
            let seed = self.config.seed ^ (self.retrains + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            match fit_forest(&self.pending_x, &self.config.forest, seed) {
                Ok(f) => {
                    self.forest = Some(f);
                    forest_trained = true;
                }
                Err(e) => sink.emit(EngineEvent::Warning(EngineWarning::ForestSkipped { reason: e.to_string() })),
            }
        }

        self.pending_x.clear();
        self.pending_x_normal.clear();
        self.batch_len = 0;
        self.retrains += 1;
        let report = RetrainReport {
            at: self.seen,
            retrain: self.retrains,
            phase: self.phase,
            t1_old,
            t1_new: self.thresholds.t1,
            t2_old,
            t2_new: self.thresholds.t2,
            scorer_windows,
            forest_samples,
            forest_trained,
            scorer_final_loss,
        };
        sink.emit(EngineEvent::Retrain(report.clone()));
        Ok(Some(report))
    }

    /// Process, then check for the phase change, then the periodic retrain.
    /// The verdict is emitted before any transition or retrain event.
    pub fn step(&mut self, record: RecordView<'_>, sink: &mut dyn EventSink) -> Result<Verdict, EngineError> {
        let v = self.process(record)?;
        self.after_verdict(&v, sink)?;
        Ok(v)
    }

    fn after_verdict(&mut self, v: &Verdict, sink: &mut dyn EventSink) -> Result<(), EngineError> {
        sink.emit(EngineEvent::Verdict(v.clone()));
        self.phase_transition(sink);
        self.maybe_retrain(sink)?;
        Ok(())
    }

    /// Same result as calling [`Engine::step`] on each record in turn.
    /// Records up to the next retrain boundary are scored in parallel
    /// against the current (frozen) scorer, then routed sequentially.
    pub fn replay(&mut self, records: &[RecordView<'_>], sink: &mut dyn EventSink) -> Result<usize, EngineError> {
        let mut i = 0;
        while i < records.len() {
            let room = self.config.m - self.batch_len;
            let end = records.len().min(i + room);
            let windows = records[i..end]
                .iter()
                .map(|r| self.advance_window(*r))
                .collect::<Result<Vec<_>, _>>()?;
            let scorer = &self.scorer;
            let losses = windows
                .par_iter()
                .map(|w| scorer.score(w))
                .collect::<Result<Vec<f64>, _>>()?;
            for (w, loss) in windows.into_iter().zip(losses) {
                let v = self.route(w, loss);
                self.after_verdict(&v, sink)?;
            }
            i = end;
        }
        Ok(records.len())
    }
}
