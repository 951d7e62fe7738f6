//! End-to-end runs: load, split, normalize, bootstrap, replay, evaluate,
//! and write the run artifacts.

use crate::engine::{
    Engine, EngineConfig, EngineError, EngineEvent, EventSink, Phase, RecordView, RetrainReport,
    UpdatePolicy, Verdict,
};
use crate::forest::{feature_importances, Forest, ForestError};
use crate::ingest::{
    fit_normalizer, load_csv, split, synthetic_stream, CsvSchema, FeatureRecord, IngestError,
    Normalizer, Split, SyntheticConfig,
};
use crate::label::Label;
use crate::metrics::{MetricReport, MetricsError};
use crate::scorer::{LstmVae, Scorer, ScorerConfig, ScorerError};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// True when training or scoring produced NaN or infinite values.
    pub fn is_numeric_divergence(&self) -> bool {
        matches!(
            self,
            PipelineError::Scorer(ScorerError::NonFinite(_))
                | PipelineError::Engine(EngineError::Scorer(ScorerError::NonFinite(_)))
        )
    }
}

/// Ablation and training-setting variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Full engine: thresholds, scorer and forest all adapt.
    #[default]
    Adaptive,
    /// T1 fixed at bootstrap, T2 fixed when first fitted; models still retrain.
    FixedThreshold,
    /// Scorer and T1 only; no T2, no forest.
    ScorerOnly,
    /// Scorer trained on the first round only; thresholds and forest adapt.
    InitialOnly,
    /// Scorer trained once on first round plus training stream, then frozen;
    /// thresholds and forest adapt.
    Offline,
}

impl Mode {
    pub const ALL: [Mode; 5] =
        [Mode::Adaptive, Mode::FixedThreshold, Mode::ScorerOnly, Mode::InitialOnly, Mode::Offline];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Adaptive => "adaptive",
            Mode::FixedThreshold => "fixed_threshold",
            Mode::ScorerOnly => "scorer_only",
            Mode::InitialOnly => "initial_only",
            Mode::Offline => "offline",
        }
    }

    pub fn policy(self) -> UpdatePolicy {
        let all = UpdatePolicy::default();
        match self {
            Mode::Adaptive => all,
            Mode::FixedThreshold => UpdatePolicy { refit_thresholds: false, ..all },
            Mode::ScorerOnly => UpdatePolicy { two_layer: false, ..all },
            Mode::InitialOnly | Mode::Offline => UpdatePolicy { retrain_scorer: false, ..all },
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| format!("unknown mode {s:?}"))
    }
}

/// Scorer sizes and optimizer settings; input width comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerSettings {
    pub timestep: usize,
    pub hidden: usize,
    pub latent: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs of the one-off training in offline mode (defaults to the
    /// engine's bootstrap epochs).
    pub offline_epochs: Option<usize>,
}

impl Default for ScorerSettings {
    fn default() -> Self {
        let base = ScorerConfig::new(30, 1);
        Self {
            timestep: base.timestep,
            hidden: base.hidden,
            latent: base.latent,
            learning_rate: base.learning_rate,
            batch_size: base.batch_size,
            offline_epochs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Feature CSV; when absent a synthetic stream is generated.
    pub csv: Option<PathBuf>,
    /// Column-role schema for `csv`.
    pub schema: Option<PathBuf>,
    /// Keep at most this many leading rows of the CSV.
    pub max_rows: Option<usize>,
    pub synthetic: SyntheticConfig,
    pub split: Split,
}

/// Everything a run needs. `seed` is mandatory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub mode: Mode,
    pub data: DataConfig,
    pub scorer: ScorerSettings,
    pub engine: EngineConfig,
    pub fpr_max: Option<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn seed(&self) -> Result<u64, PipelineError> {
        self.seed.ok_or_else(|| PipelineError::Config("a seed is required".into()))
    }
}

/// Records after splitting and normalization.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub first_round: Vec<FeatureRecord>,
    pub stream: Vec<FeatureRecord>,
    pub test: Vec<FeatureRecord>,
    pub normalizer: Normalizer,
    pub feature_names: Vec<String>,
    pub load_warnings: Vec<String>,
}

pub fn prepare_data(config: &RunConfig) -> Result<PreparedData, PipelineError> {
    let seed = config.seed()?;
    let (records, names, warnings) = match &config.data.csv {
        Some(path) => {
            let schema = match &config.data.schema {
                Some(s) => CsvSchema::load(s)?,
                None => CsvSchema::with_label("label"),
            };
            let mut loaded = load_csv(path, &schema)?;
            if let Some(k) = config.data.max_rows {
                loaded.records.truncate(k);
            }
            (loaded.records, loaded.feature_names, loaded.warnings)
        }
        None => {
            let recs = synthetic_stream(&config.data.synthetic, seed);
            let names = (0..config.data.synthetic.dim).map(|i| format!("f{i}")).collect();
            (recs, names, Vec::new())
        }
    };
    let parts = split(&records, &config.data.split)?;
    let normalizer = fit_normalizer(&parts.first_round)?;
    let feature_names = normalizer.keep.iter().map(|&j| names[j].clone()).collect();
    Ok(PreparedData {
        first_round: normalizer.apply_all(&parts.first_round),
        stream: normalizer.apply_all(&parts.stream),
        test: normalizer.apply_all(&parts.test),
        normalizer,
        feature_names,
        load_warnings: warnings,
    })
}

/// Collects engine events and forwards warnings to the logger.
#[derive(Default)]
struct Collector {
    verdicts: Vec<Verdict>,
    retrains: Vec<RetrainReport>,
    transition: Option<(u64, f64)>,
    warnings: Vec<String>,
}

impl EventSink for Collector {
    fn emit(&mut self, event: EngineEvent) {
        match event {
            EngineEvent::Verdict(v) => self.verdicts.push(v),
            EngineEvent::Retrain(r) => {
                log::info!(
                    "retrain {} at {}: T1 {:.6} -> {:.6}, T2 {:?} -> {:?}",
                    r.retrain, r.at, r.t1_old, r.t1_new, r.t2_old, r.t2_new
                );
                self.retrains.push(r);
            }
            EngineEvent::PhaseTransition { at, t2 } => {
                log::info!("steady phase after {at} samples, T2 = {t2:.6}");
                self.transition = Some((at, t2));
            }
            EngineEvent::Warning(w) => {
                log::warn!("{w}");
                self.warnings.push(w.to_string());
            }
        }
    }
}

/// One row of the threshold trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    /// 0 for bootstrap.
    pub retrain: u64,
    pub at: u64,
    pub phase: Phase,
    pub t1: f64,
    pub t2: Option<f64>,
}

pub struct RunOutput {
    pub mode: Mode,
    pub seed: u64,
    /// One per stream and test record, in order.
    pub verdicts: Vec<Verdict>,
    pub trajectory: Vec<ThresholdPoint>,
    pub retrains: Vec<RetrainReport>,
    pub transition: Option<(u64, f64)>,
    pub warnings: Vec<String>,
    /// First record index of the test part.
    pub test_start: u64,
    /// Metrics over the test part, when it carries ground truth.
    pub metrics: Option<MetricReport>,
    pub scorer: LstmVae,
    pub forest: Option<Forest>,
    pub normalizer: Normalizer,
    pub feature_names: Vec<String>,
}

fn rows(records: &[FeatureRecord]) -> Vec<Vec<f64>> {
    records.iter().map(|r| r.features.clone()).collect()
}

fn record_windows(records: &[FeatureRecord], t: usize) -> Vec<crate::scorer::SequenceWindow> {
    crate::ingest::windows(records, t).collect()
}

pub fn run(config: &RunConfig) -> Result<RunOutput, PipelineError> {
    let data = prepare_data(config)?;
    run_prepared(config, data)
}

pub fn run_prepared(config: &RunConfig, data: PreparedData) -> Result<RunOutput, PipelineError> {
    let seed = config.seed()?;
    let mode = config.mode;
    let d = data.normalizer.dim();
    let s = &config.scorer;
    let mut scorer_cfg = ScorerConfig::new(s.timestep, d).with_sizes(s.hidden, s.latent).with_seed(seed);
    scorer_cfg.learning_rate = s.learning_rate;
    scorer_cfg.batch_size = s.batch_size;

    let mut engine_cfg = config.engine.clone();
    engine_cfg.policy = mode.policy();
    engine_cfg.seed = seed;

    let mut scorer = LstmVae::new(scorer_cfg);
    if mode == Mode::Offline {
        let mut train_set = data.first_round.clone();
        train_set.extend(data.stream.iter().cloned());
        let windows = record_windows(&train_set, s.timestep);
        let epochs = s.offline_epochs.unwrap_or(engine_cfg.bootstrap_epochs);
        scorer.train(&windows, epochs)?;
        engine_cfg.bootstrap_epochs = 0;
    }

    let mut engine = Engine::bootstrap(scorer, &rows(&data.first_round), engine_cfg)?;
    let mut trajectory = vec![ThresholdPoint {
        retrain: 0,
        at: 0,
        phase: engine.phase(),
        t1: engine.thresholds().t1,
        t2: engine.thresholds().t2,
    }];

    let mut sink = Collector::default();
    let live: Vec<&FeatureRecord> = data.stream.iter().chain(&data.test).collect();
    let views: Vec<RecordView<'_>> =
        live.iter().map(|r| RecordView { index: r.index, features: &r.features }).collect();
    engine.replay(&views, &mut sink)?;
    trajectory.extend(sink.retrains.iter().map(|r| ThresholdPoint {
        retrain: r.retrain,
        at: r.at,
        phase: r.phase,
        t1: r.t1_new,
        t2: r.t2_new,
    }));

    let test_start = data.test.first().map_or(u64::MAX, |r| r.index);
    let truth: HashMap<u64, Label> =
        data.test.iter().filter_map(|r| r.truth.map(|t| (r.index, t))).collect();
    let metrics = if !data.test.is_empty() && truth.len() == data.test.len() {
        let tested: Vec<&Verdict> = sink.verdicts.iter().filter(|v| v.index >= test_start).collect();
        let predicted: Vec<Label> = tested.iter().map(|v| v.label).collect();
        let scores: Vec<f64> = tested.iter().map(|v| v.score).collect();
        let actual: Vec<Label> = tested.iter().map(|v| truth[&v.index]).collect();
        let fpr_max = config.fpr_max.unwrap_or(crate::metrics::DEFAULT_FPR_MAX);
        Some(MetricReport::evaluate(&predicted, &scores, &actual, fpr_max)?)
    } else {
        None
    };

    let forest = engine.forest().cloned();
    let mut warnings = data.load_warnings;
    warnings.extend(sink.warnings);
    Ok(RunOutput {
        mode,
        seed,
        verdicts: sink.verdicts,
        trajectory,
        retrains: sink.retrains,
        transition: sink.transition,
        warnings,
        test_start,
        metrics,
        scorer: engine.into_scorer(),
        forest,
        normalizer: data.normalizer,
        feature_names: data.feature_names,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

impl RunOutput {
    /// Abnormal verdicts: `index,loss,route,label,t1,t2`.
    pub fn alert_log(&self) -> String {
        let mut s = String::from("index,loss,route,label,t1,t2\n");
        for v in self.verdicts.iter().filter(|v| v.label.is_abnormal()) {
            let _ = writeln!(s, "{},{},{},{},{},{}", v.index, v.loss, v.route.as_str(), v.label, v.t1, opt(v.t2));
        }
        s
    }

    /// Every verdict: `index,loss,score,route,label,t1,t2,abnormal_votes,total_votes`.
    pub fn verdict_log(&self) -> String {
        let mut s = String::from("index,loss,score,route,label,t1,t2,abnormal_votes,total_votes\n");
        for v in &self.verdicts {
            let (a, t) = v.votes.map_or((String::new(), String::new()), |x| {
                (x.abnormal.to_string(), x.total().to_string())
            });
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{a},{t}",
                v.index, v.loss, v.score, v.route.as_str(), v.label, v.t1, opt(v.t2)
            );
        }
        s
    }

    /// `retrain,at,phase,t1,t2`, starting with the bootstrap row.
    pub fn trajectory_csv(&self) -> String {
        let mut s = String::from("retrain,at,phase,t1,t2\n");
        for p in &self.trajectory {
            let phase = match p.phase {
                Phase::Initial => "initial",
                Phase::Steady => "steady",
            };
            let _ = writeln!(s, "{},{},{phase},{},{}", p.retrain, p.at, p.t1, opt(p.t2));
        }
        s
    }

    pub fn metrics_text(&self) -> Option<String> {
        self.metrics
            .as_ref()
            .map(|m| format!("mode = {}\nseed = {}\n{}", self.mode, self.seed, m.to_key_value()))
    }

    pub fn metrics_csv(&self) -> Option<String> {
        self.metrics.as_ref().map(|m| {
            format!("{}\n{}\n", MetricReport::csv_header(true), m.csv_row(Some(self.mode.as_str())))
        })
    }

    /// `feature,importance` sorted by source order.
    pub fn importances_csv(&self) -> Option<String> {
        self.forest.as_ref().map(|f| {
            let mut s = String::from("feature,importance\n");
            for (name, v) in self.feature_names.iter().zip(feature_importances(f)) {
                let _ = writeln!(s, "{name},{v}");
            }
            s
        })
    }

    /// Writes every artifact under `dir` and returns the file names written.
    pub fn write_artifacts(&self, dir: &Path) -> Result<Vec<String>, PipelineError> {
        std::fs::create_dir_all(dir)?;
        let mut files: Vec<(&str, String)> = vec![
            ("alerts.csv", self.alert_log()),
            ("verdicts.csv", self.verdict_log()),
            ("thresholds.csv", self.trajectory_csv()),
            ("scorer.json", self.scorer.params.to_json()),
            ("normalizer.json", serde_json::to_string(&self.normalizer).expect("normalizer serializes")),
        ];
        if let Some(m) = self.metrics_text() {
            files.push(("metrics.txt", m));
        }
        if let Some(m) = self.metrics_csv() {
            files.push(("metrics.csv", m));
        }
        if let Some(f) = &self.forest {
            files.push(("forest.json", f.to_json()));
        }
        if let Some(i) = self.importances_csv() {
            files.push(("importances.csv", i));
        }
        if !self.warnings.is_empty() {
            files.push(("warnings.txt", self.warnings.join("\n") + "\n"));
        }
        let mut names = Vec::new();
        for (name, body) in files {
            std::fs::write(dir.join(name), body)?;
            names.push(name.to_string());
        }
        Ok(names)
    }
}

/// Scores an alert or verdict log against a truth CSV.
///
/// The truth file needs a `label` column and may have an `index` column
/// (otherwise rows are numbered from 0). A record is predicted abnormal
/// when the log lists it with label `abnormal`. The log's `score` column
/// ranks records when present; otherwise the ranking is the binary
/// prediction itself.
pub fn evaluate_log(log: &Path, truth: &Path, fpr_max: f64) -> Result<MetricReport, PipelineError> {
    let truth_rows = read_indexed(truth, "label")?;
    let log_rows = read_indexed(log, "label")?;
    let has_score = log_rows.first().is_some_and(|r| r.2.contains_key("score"));

    let mut predicted_map: HashMap<u64, (Label, Option<f64>)> = HashMap::new();
    for (idx, raw, extra) in &log_rows {
        let label: Label = raw.parse().map_err(PipelineError::Config)?;
        let score = match extra.get("score") {
            Some(s) => Some(s.parse::<f64>().map_err(|e| PipelineError::Config(format!("score {s:?}: {e}")))?),
            None => None,
        };
        predicted_map.insert(*idx, (label, score));
    }
    if has_score {
        let missing = truth_rows.iter().filter(|r| !predicted_map.contains_key(&r.0)).count();
        if missing > 0 || predicted_map.len() != truth_rows.len() {
            return Err(MetricsError::LengthMismatch { predicted: predicted_map.len(), truth: truth_rows.len() }.into());
        }
    } else if let Some(stray) = predicted_map.keys().find(|k| !truth_rows.iter().any(|r| r.0 == **k)) {
        return Err(PipelineError::Config(format!("log index {stray} not present in truth file")));
    }

    let mut predicted = Vec::with_capacity(truth_rows.len());
    let mut scores = Vec::with_capacity(truth_rows.len());
    let mut actual = Vec::with_capacity(truth_rows.len());
    for (idx, raw, _) in &truth_rows {
        actual.push(raw.parse::<Label>().map_err(PipelineError::Config)?);
        let (label, score) = predicted_map.get(idx).copied().unwrap_or((Label::Normal, None));
        predicted.push(label);
        scores.push(score.unwrap_or(if label.is_abnormal() { 1.0 } else { 0.0 }));
    }
    Ok(MetricReport::evaluate(&predicted, &scores, &actual, fpr_max)?)
}

type IndexedRow = (u64, String, HashMap<String, String>);

fn read_indexed(path: &Path, label_col: &str) -> Result<Vec<IndexedRow>, PipelineError> {
    if !path.exists() {
        return Err(IngestError::MissingFile(path.to_path_buf()).into());
    }
    let mut reader = csv::Reader::from_path(path).map_err(IngestError::from)?;
    let headers: Vec<String> =
        reader.headers().map_err(IngestError::from)?.iter().map(|h| h.trim().to_string()).collect();
    let li = headers
        .iter()
        .position(|h| h == label_col)
        .ok_or_else(|| IngestError::SchemaMismatch(format!("{}: no {label_col:?} column", path.display())))?;
    let ii = headers.iter().position(|h| h == "index");
    let mut out = Vec::new();
    for (n, rec) in reader.records().enumerate() {
        let rec = rec.map_err(IngestError::from)?;
        let idx = match ii {
            Some(i) => rec[i]
                .trim()
                .parse()
                .map_err(|e| IngestError::SchemaMismatch(format!("{}: index {:?}: {e}", path.display(), &rec[i])))?,
            None => n as u64,
        };
        let extra = headers.iter().cloned().zip(rec.iter().map(str::to_string)).collect();
        out.push((idx, rec[li].trim().to_string(), extra));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config(mode: Mode) -> RunConfig {
        RunConfig {
            seed: Some(3),
            mode,
            data: DataConfig {
                synthetic: SyntheticConfig { n: 6000, dim: 4, anomaly_rate: 0.03, anomaly_shift: 8.0, ..Default::default() },
                split: Split::Fractions { first_round: 0.05, stream: 0.65, test: 0.30 },
                ..Default::default()
            },
            scorer: ScorerSettings { timestep: 3, hidden: 8, latent: 4, ..Default::default() },
            engine: EngineConfig { n: 30, m: 1000, bootstrap_epochs: 5, retrain_epochs: 1, ..Default::default() },
            fpr_max: None,
        }
    }

    #[test]
    fn mode_parsing_and_policies() {
        assert_eq!("fixed-threshold".parse::<Mode>().unwrap(), Mode::FixedThreshold);
        assert_eq!("Offline".parse::<Mode>().unwrap(), Mode::Offline);
        assert!("nad".parse::<Mode>().is_err());
        assert!(!Mode::ScorerOnly.policy().two_layer);
        assert!(!Mode::FixedThreshold.policy().refit_thresholds);
        assert!(!Mode::InitialOnly.policy().retrain_scorer);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = toy_config(Mode::InitialOnly);
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        let partial = RunConfig::from_toml("seed = 9\nmode = \"scorer_only\"\n[engine]\nm = 100\n").unwrap();
        assert_eq!(partial.seed, Some(9));
        assert_eq!(partial.engine.m, 100);
        assert_eq!(partial.engine.n, 500);
        assert!(RunConfig::default().seed().is_err());
    }

    #[test]
    fn run_is_reproducible_and_complete() {
        let a = run(&toy_config(Mode::Adaptive)).unwrap();
        let b = run(&toy_config(Mode::Adaptive)).unwrap();
        assert_eq!(a.verdicts.len(), 6000 - 300);
        assert_eq!(a.alert_log(), b.alert_log());
        assert_eq!(a.metrics_text(), b.metrics_text());
        assert!(a.metrics.is_some() && a.forest.is_some());
        assert_eq!(a.trajectory.len(), 1 + a.retrains.len());
        let dir = tempfile::tempdir().unwrap();
        let files = a.write_artifacts(dir.path()).unwrap();
        for f in ["alerts.csv", "verdicts.csv", "thresholds.csv", "metrics.txt", "metrics.csv", "scorer.json", "forest.json"] {
            assert!(files.iter().any(|x| x == f), "{f}");
        }
        let forest = Forest::load(&dir.path().join("forest.json")).unwrap();
        assert_eq!(Some(forest), a.forest);
    }

    #[test]
    fn scorer_only_has_no_forest_or_band() {
        let out = run(&toy_config(Mode::ScorerOnly)).unwrap();
        assert!(out.forest.is_none());
        assert!(out.verdicts.iter().all(|v| v.route != crate::engine::Route::Classifier));
        let dir = tempfile::tempdir().unwrap();
        let files = out.write_artifacts(dir.path()).unwrap();
        assert!(!files.iter().any(|f| f == "forest.json"));
    }

    #[test]
    fn fixed_threshold_keeps_t1() {
        let out = run(&toy_config(Mode::FixedThreshold)).unwrap();
        let t1s: Vec<f64> = out.trajectory.iter().map(|p| p.t1).collect();
        assert!(t1s.windows(2).all(|w| w[0] == w[1]));
        let t2s: Vec<f64> = out.trajectory.iter().filter_map(|p| p.t2).collect();
        assert!(t2s.windows(2).all(|w| w[0] == w[1]));
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn evaluate_log_cases() {
        let dir = tempfile::tempdir().unwrap();
        let truth = write(dir.path(), "truth.csv", "index,label\n0,normal\n1,abnormal\n2,normal\n3,abnormal\n");
        let perfect = write(dir.path(), "a.csv", "index,loss,route,label,t1,t2\n1,5,x,abnormal,1,\n3,6,x,abnormal,1,\n");
        let r = evaluate_log(&perfect, &truth, 0.05).unwrap();
        assert_eq!((r.far, r.mdr, r.spauc), (0.0, 0.0, 1.0));
        let none = write(dir.path(), "b.csv", "index,loss,route,label,t1,t2\n");
        assert_eq!(evaluate_log(&none, &truth, 0.05).unwrap().mdr, 1.0);
        // tp=1 fp=1 tn=1 fn=1
        let mixed = write(dir.path(), "c.csv", "index,label\n0,abnormal\n1,abnormal\n");
        let r = evaluate_log(&mixed, &truth, 0.05).unwrap();
        assert_eq!((r.confusion.tp, r.confusion.fp, r.confusion.tn, r.confusion.fn_), (1, 1, 1, 1));
        assert_eq!(r.accuracy, 0.5);
        let scored = write(dir.path(), "d.csv", "index,score,label\n0,0.1,normal\n1,0.9,abnormal\n");
        assert!(matches!(
            evaluate_log(&scored, &truth, 0.05),
            Err(PipelineError::Metrics(MetricsError::LengthMismatch { .. }))
        ));
    }
}
