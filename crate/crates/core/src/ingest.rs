//! Feature-stream input: CSV loading, min-max normalization, sliding
//! windows, partitioning and a seeded synthetic generator.

use crate::label::Label;
use crate::scorer::SequenceWindow;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("input file not found: {0}")]
    MissingFile(PathBuf),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("no valid rows left after filtering ({rejected} rejected)")]
    EmptyAfterFiltering { rejected: usize },
    #[error("every feature is constant over the first round")]
    AllFeaturesConstant,
    #[error("no records to fit a normalizer on")]
    EmptyFirstRound,
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("schema file: {0}")]
    SchemaParse(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One time-ordered feature vector. `truth` is for evaluation only; the
/// engine is handed [`FeatureRecord::features`] and never sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub index: u64,
    pub features: Vec<f64>,
    pub truth: Option<Label>,
    /// Raw timestamp cell, when the schema names one.
    pub timestamp: Option<String>,
}

impl FeatureRecord {
    pub fn new(index: u64, features: Vec<f64>, truth: Option<Label>) -> Self {
        Self { index, features, truth, timestamp: None }
    }

    /// Calendar-day key of the timestamp: the text before the first space or `T`.
    pub fn day(&self) -> Option<&str> {
        self.timestamp.as_deref().and_then(|t| t.split([' ', 'T']).next())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Feature,
    Label,
    Timestamp,
    Ignore,
}

/// Maps CSV header names to roles and raw label values to classes.
///
/// ```toml
/// default_role = "feature"
/// [columns]
/// "Label" = "label"
/// "Timestamp" = "timestamp"
/// "Flow ID" = "ignore"
/// [labels]
/// "Tor" = "abnormal"
/// "Non-Tor" = "normal"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub columns: BTreeMap<String, ColumnRole>,
    /// Role of header columns not listed in `columns`.
    pub default_role: ColumnRole,
    /// Raw label value -> class. When empty, `normal`/`abnormal`/`0`/`1` are accepted.
    pub labels: BTreeMap<String, Label>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self { columns: BTreeMap::new(), default_role: ColumnRole::Feature, labels: BTreeMap::new() }
    }
}

impl CsvSchema {
    /// Every column is a feature except `label_column`.
    pub fn with_label(label_column: &str) -> Self {
        let mut s = Self::default();
        s.columns.insert(label_column.to_string(), ColumnRole::Label);
        s
    }

    pub fn from_toml(text: &str) -> Result<Self, IngestError> {
        toml::from_str(text).map_err(|e| IngestError::SchemaParse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        if !path.exists() {
            return Err(IngestError::MissingFile(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    fn role(&self, column: &str) -> ColumnRole {
        self.columns.get(column).copied().unwrap_or(self.default_role)
    }

    fn map_label(&self, raw: &str) -> Option<Label> {
        if self.labels.is_empty() {
            raw.parse().ok()
        } else {
            self.labels.get(raw.trim()).copied()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCsv {
    pub records: Vec<FeatureRecord>,
    pub feature_names: Vec<String>,
    /// One message per rejected row.
    pub warnings: Vec<String>,
}

/// Reads rows in file order. Rows with a non-numeric or non-finite feature
/// cell, or an unmapped label, are dropped and reported in `warnings`.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<LoadedCsv, IngestError> {
    if !path.exists() {
        return Err(IngestError::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();

    for name in schema.columns.keys() {
        if !headers.contains(name) {
            return Err(IngestError::SchemaMismatch(format!("column {name:?} not in header")));
        }
    }
    let roles: Vec<ColumnRole> = headers.iter().map(|h| schema.role(h)).collect();
    let feature_cols: Vec<usize> =
        (0..headers.len()).filter(|&i| roles[i] == ColumnRole::Feature).collect();
    if feature_cols.is_empty() {
        return Err(IngestError::SchemaMismatch("schema selects no feature columns".into()));
    }
    let single = |role: ColumnRole| -> Result<Option<usize>, IngestError> {
        let cols: Vec<usize> = (0..headers.len()).filter(|&i| roles[i] == role).collect();
        match cols.len() {
            0 => Ok(None),
            1 => Ok(Some(cols[0])),
            _ => Err(IngestError::SchemaMismatch(format!("more than one {role:?} column"))),
        }
    };
    let label_col = single(ColumnRole::Label)?;
    let ts_col = single(ColumnRole::Timestamp)?;

    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let line = row + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                warnings.push(format!("line {line}: {e}"));
                continue;
            }
        };
        if rec.len() != headers.len() {
            warnings.push(format!("line {line}: {} fields, header has {}", rec.len(), headers.len()));
            continue;
        }
        let parsed: Result<Vec<f64>, usize> = feature_cols
            .iter()
            .map(|&c| rec[c].trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or(c))
            .collect();
        let features = match parsed {
            Ok(f) => f,
            Err(c) => {
                warnings.push(format!("line {line}: bad value {:?} in {:?}", &rec[c], headers[c]));
                continue;
            }
        };
        let truth = match label_col {
            None => None,
            Some(c) => match schema.map_label(&rec[c]) {
                Some(l) => Some(l),
                None => {
                    warnings.push(format!("line {line}: unmapped label {:?}", &rec[c]));
                    continue;
                }
            },
        };
        records.push(FeatureRecord {
            index: records.len() as u64,
            features,
            truth,
            timestamp: ts_col.map(|c| rec[c].trim().to_string()),
        });
    }
    if records.is_empty() {
        return Err(IngestError::EmptyAfterFiltering { rejected: warnings.len() });
    }
    let feature_names = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    Ok(LoadedCsv { records, feature_names, warnings })
}

/// Writes records as CSV: `index`, `f0..f{D-1}`, and `label` when any truth is present.
pub fn write_csv(path: &Path, records: &[FeatureRecord]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = records.first().map_or(0, |r| r.features.len());
    let with_label = records.iter().any(|r| r.truth.is_some());
    let mut header = vec!["index".to_string()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    if with_label {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.index.to_string()];
        row.extend(r.features.iter().map(|v| v.to_string()));
        if with_label {
            row.push(r.truth.map_or(String::new(), |l| l.as_str().to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-feature min-max scaling learned from the first round. Constant
/// features are dropped; `keep` lists the retained source columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub keep: Vec<usize>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub source_dim: usize,
}

pub fn fit_normalizer(first_round: &[FeatureRecord]) -> Result<Normalizer, IngestError> {
    let first = first_round.first().ok_or(IngestError::EmptyFirstRound)?;
    let d = first.features.len();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for r in first_round {
        if r.features.len() != d {
            return Err(IngestError::SchemaMismatch(format!(
                "record {} has {} features, expected {d}",
                r.index,
                r.features.len()
            )));
        }
        for (j, &v) in r.features.iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let keep: Vec<usize> = (0..d).filter(|&j| lo[j] < hi[j]).collect();
    if keep.is_empty() {
        return Err(IngestError::AllFeaturesConstant);
    }
    Ok(Normalizer {
        min: keep.iter().map(|&j| lo[j]).collect(),
        max: keep.iter().map(|&j| hi[j]).collect(),
        keep,
        source_dim: d,
    })
}

impl Normalizer {
    pub fn dim(&self) -> usize {
        self.keep.len()
    }

    /// Scales retained features to [0, 1], clipping values outside the
    /// first-round range.
    pub fn apply(&self, features: &[f64]) -> Vec<f64> {
        self.keep
            .iter()
            .enumerate()
            .map(|(k, &j)| ((features[j] - self.min[k]) / (self.max[k] - self.min[k])).clamp(0.0, 1.0))
            .collect()
    }

    pub fn apply_all(&self, records: &[FeatureRecord]) -> Vec<FeatureRecord> {
        records
            .iter()
            .map(|r| FeatureRecord { features: self.apply(&r.features), ..r.clone() })
            .collect()
    }

    pub fn dropped(&self) -> Vec<usize> {
        let kept: BTreeSet<_> = self.keep.iter().copied().collect();
        (0..self.source_dim).filter(|j| !kept.contains(j)).collect()
    }
}

/// Stride-1 windows of `t` consecutive records; the window ending at
/// record `k` carries that record's index. Yields `max(0, n - t + 1)` windows.
pub fn windows(records: &[FeatureRecord], t: usize) -> impl Iterator<Item = SequenceWindow> + '_ {
    assert!(t >= 1, "timestep must be at least 1");
    records.windows(t).map(move |w| {
        let dim = w[0].features.len();
        let flat: Vec<f64> = w.iter().flat_map(|r| r.features.iter().copied()).collect();
        SequenceWindow::new(flat, t, dim, w[t - 1].index)
    })
}

/// How a record list is cut into first-round, stream and test parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Split {
    /// Contiguous leading/middle/trailing slices by fraction.
    Fractions { first_round: f64, stream: f64, test: f64 },
    /// By calendar day of the timestamp column; days in neither list go to the stream.
    Days { first_round: Vec<String>, test: Vec<String> },
}

impl Default for Split {
    fn default() -> Self {
        Split::Fractions { first_round: 0.01, stream: 0.69, test: 0.30 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Partitions {
    pub first_round: Vec<FeatureRecord>,
    pub stream: Vec<FeatureRecord>,
    pub test: Vec<FeatureRecord>,
}

pub fn split(records: &[FeatureRecord], rule: &Split) -> Result<Partitions, IngestError> {
    let mut p = Partitions::default();
    match rule {
        Split::Fractions { first_round, stream, test } => {
            let fr = [*first_round, *stream, *test];
            if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || ((fr.iter().sum::<f64>()) - 1.0).abs() > 1e-9
            {
                return Err(IngestError::InvalidSplit(format!("fractions {fr:?} must be in [0,1] and sum to 1")));
            }
            let n = records.len();
            let a = (n as f64 * first_round).round() as usize;
            let c = ((n as f64 * test).round() as usize).min(n - a);
            p.first_round = records[..a].to_vec();
            p.stream = records[a..n - c].to_vec();
            p.test = records[n - c..].to_vec();
        }
        Split::Days { first_round, test } => {
            for r in records {
                let day = r.day().ok_or_else(|| {
                    IngestError::InvalidSplit(format!("record {} has no timestamp", r.index))
                })?;
                if first_round.iter().any(|d| d == day) {
                    p.first_round.push(r.clone());
                } else if test.iter().any(|d| d == day) {
                    p.test.push(r.clone());
                } else {
                    p.stream.push(r.clone());
                }
            }
        }
    }
    if p.first_round.is_empty() {
        return Err(IngestError::InvalidSplit("first round is empty".into()));
    }
    Ok(p)
}

/// Seeded synthetic traffic. Normal rows follow a correlated Gaussian
/// (AR(1) in time) whose mean moves along a fixed direction after
/// `drift_start`; anomalies are independent draws shifted by
/// `anomaly_shift` along another fixed direction and scaled by
/// `anomaly_scale`. With `anomaly_burst > 1` anomalies arrive in runs of
/// that mean length (a two-state Markov chain with the same long-run rate);
/// otherwise each record is an independent Bernoulli draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n: usize,
    pub dim: usize,
    pub anomaly_rate: f64,
    pub anomaly_shift: f64,
    pub anomaly_scale: f64,
    /// Mean run length of consecutive anomalies.
    pub anomaly_burst: f64,
    /// AR(1) coefficient of the normal process.
    pub autocorrelation: f64,
    /// Mean shift per sample once drift starts (units of noise sd).
    pub drift_rate: f64,
    pub drift_start: usize,
    /// Drift stops growing after this many samples past `drift_start`.
    pub drift_duration: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            dim: 8,
            anomaly_rate: 0.015,
            anomaly_shift: 4.0,
            anomaly_scale: 1.0,
            anomaly_burst: 1.0,
            autocorrelation: 0.5,
            drift_rate: 0.0,
            drift_start: 0,
            drift_duration: usize::MAX,
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

pub fn synthetic_stream(config: &SyntheticConfig, seed: u64) -> Vec<FeatureRecord> {
    let d = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // lower-triangular mixing with unit diagonal gives a mild correlation structure
    let mix: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if j == i { 1.0 } else if j < i { 0.3 * rng.random_range(-1.0..1.0) } else { 0.0 }).collect())
        .collect();
    let drift_dir = unit_vector(&mut rng, d);
    let anomaly_dir = unit_vector(&mut rng, d);
    let phi = config.autocorrelation;
    let innov = (1.0 - phi * phi).sqrt();
    let mut state = vec![0.0; d];
    let burst = config.anomaly_burst.max(1.0);
    let rate = config.anomaly_rate.clamp(0.0, 1.0);
    let leave = 1.0 / burst;
    let enter = if rate < 1.0 { (rate * leave / (1.0 - rate)).min(1.0) } else { 1.0 };
    let mut in_burst = false;
    let mixed = |e: &[f64]| -> Vec<f64> {
        mix.iter().map(|row| row.iter().zip(e).map(|(a, b)| a * b).sum()).collect()
    };

    (0..config.n)
        .map(|t| {
            let steps = t.saturating_sub(config.drift_start).min(config.drift_duration);
            let offset = if t >= config.drift_start { config.drift_rate * steps as f64 } else { 0.0 };
            for s in state.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *s = phi * *s + innov * e;
            }
            let u: f64 = rng.random();
            let is_anomaly = if burst <= 1.0 {
                u < rate
            } else {
                in_burst = if in_burst { u >= leave } else { u < enter };
                in_burst
            };
            let (base, label) = if is_anomaly {
                let e: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let x: Vec<f64> = mixed(&e)
                    .iter()
                    .zip(&anomaly_dir)
                    .map(|(v, a)| config.anomaly_scale * v + config.anomaly_shift * a)
                    .collect();
                (x, Label::Abnormal)
            } else {
                (mixed(&state), Label::Normal)
            };
            let features = base.iter().zip(&drift_dir).map(|(v, u)| v + offset * u).collect();
            FeatureRecord::new(t as u64, features, Some(label))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn csv_file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn malformed_row_is_dropped_with_warning() {
        let f = csv_file("a,b,label\n1,2,normal\nx,3,normal\n4,5,abnormal\n");
        let out = load_csv(f.path(), &CsvSchema::with_label("label")).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.warnings.len(), 1);
        assert_eq!(out.records[1].features, vec![4.0, 5.0]);
        assert_eq!(out.records[1].truth, Some(Label::Abnormal));
        assert_eq!(out.records[1].index, 1);
        assert_eq!(out.feature_names, vec!["a", "b"]);
    }

    #[test]
    fn label_map_from_schema_file() {
        let schema = CsvSchema::from_toml(
            r#"
            [columns]
            "Label" = "label"
            "Src IP" = "ignore"
            "Timestamp" = "timestamp"
            [labels]
            "Tor" = "abnormal"
            "Non-Tor" = "normal"
            "#,
        )
        .unwrap();
        let f = csv_file(
            "Src IP,Flow Duration,Timestamp,Label\n\
             10.0.0.1,5,24/02/2015 10:00,Non-Tor\n\
             10.0.0.2,7,25/02/2015 11:00,Tor\n\
             10.0.0.3,9,25/02/2015 12:00,VPN\n",
        );
        let out = load_csv(f.path(), &schema).unwrap();
        let truth: Vec<_> = out.records.iter().map(|r| r.truth).collect();
        assert_eq!(truth, vec![Some(Label::Normal), Some(Label::Abnormal)]);
        assert_eq!(out.warnings.len(), 1);
        assert_eq!(out.feature_names, vec!["Flow Duration"]);
        assert_eq!(out.records[1].day(), Some("25/02/2015"));
    }

    #[test]
    fn load_errors() {
        let f = csv_file("a,label\nx,normal\n");
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::with_label("label")),
            Err(IngestError::EmptyAfterFiltering { rejected: 1 })
        ));
        assert!(matches!(
            load_csv(Path::new("/nonexistent/x.csv"), &CsvSchema::default()),
            Err(IngestError::MissingFile(_))
        ));
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::with_label("Label")),
            Err(IngestError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let recs = synthetic_stream(&SyntheticConfig { n: 50, dim: 3, ..Default::default() }, 2);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(f.path(), &recs).unwrap();
        let mut schema = CsvSchema::with_label("label");
        schema.columns.insert("index".into(), ColumnRole::Ignore);
        let back = load_csv(f.path(), &schema).unwrap();
        assert_eq!(back.records, recs);
    }

    #[test]
    fn normalizer_cases() {
        let rs = vec![
            FeatureRecord::new(0, vec![0.0, 3.0, 1.0], None),
            FeatureRecord::new(1, vec![10.0, 3.0, 2.0], None),
        ];
        let n = fit_normalizer(&rs).unwrap();
        assert_eq!(n.dim(), 2);
        assert_eq!(n.dropped(), vec![1]);
        assert_eq!(n.apply(&[5.0, 3.0, 1.5]), vec![0.5, 0.5]);
        assert_eq!(n.apply(&[-4.0, 0.0, 9.0]), vec![0.0, 1.0]);
        let flat = vec![FeatureRecord::new(0, vec![1.0], None); 3];
        assert!(matches!(fit_normalizer(&flat), Err(IngestError::AllFeaturesConstant)));
        assert!(matches!(fit_normalizer(&[]), Err(IngestError::EmptyFirstRound)));
    }

    #[test]
    fn window_counts() {
        let rs: Vec<_> = (0..5).map(|i| FeatureRecord::new(i, vec![i as f64], None)).collect();
        assert_eq!(windows(&rs, 5).count(), 1);
        assert_eq!(windows(&rs, 1).count(), 5);
        let w: Vec<_> = windows(&rs, 3).collect();
        assert_eq!(w.len(), 3);
        assert_eq!(w[0].end_index, 2);
        assert_eq!(w[2].as_slice(), &[2.0, 3.0, 4.0]);
    }

    #[test]
    fn fraction_and_day_splits() {
        let rs: Vec<_> = (0..1000).map(|i| FeatureRecord::new(i, vec![0.0], None)).collect();
        let p = split(&rs, &Split::default()).unwrap();
        assert_eq!((p.first_round.len(), p.stream.len(), p.test.len()), (10, 690, 300));
        assert_eq!(p.test[0].index, 700);
        let bad = Split::Fractions { first_round: 0.5, stream: 0.5, test: 0.5 };
        assert!(matches!(split(&rs, &bad), Err(IngestError::InvalidSplit(_))));

        let days = ["d1", "d2", "d2", "d3", "d1"];
        let rs: Vec<_> = days
            .iter()
            .enumerate()
            .map(|(i, d)| FeatureRecord { timestamp: Some(format!("{d} 10:00")), ..FeatureRecord::new(i as u64, vec![0.0], None) })
            .collect();
        let rule = Split::Days { first_round: vec!["d1".into()], test: vec!["d3".into()] };
        let p = split(&rs, &rule).unwrap();
        assert_eq!(p.first_round.iter().map(|r| r.index).collect::<Vec<_>>(), vec![0, 4]);
        assert_eq!(p.stream.len(), 2);
        assert_eq!(p.test.len(), 1);
    }

    #[test]
    fn synthetic_properties() {
        let none = synthetic_stream(&SyntheticConfig { n: 2000, anomaly_rate: 0.0, ..Default::default() }, 1);
        assert!(none.iter().all(|r| r.truth == Some(Label::Normal)));

        let cfg = SyntheticConfig { n: 100_000, dim: 2, ..Default::default() };
        let recs = synthetic_stream(&cfg, 5);
        let k = recs.iter().filter(|r| r.truth == Some(Label::Abnormal)).count() as f64;
        let sd = (1e5 * 0.015 * 0.985f64).sqrt();
        assert!((k - 1500.0).abs() <= 3.0 * sd, "{k}");
        assert_eq!(recs, synthetic_stream(&cfg, 5));
        assert!(recs.iter().all(|r| r.features.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn bursts_keep_the_long_run_rate() {
        let cfg = SyntheticConfig { n: 200_000, dim: 1, anomaly_rate: 0.015, anomaly_burst: 10.0, ..Default::default() };
        let recs = synthetic_stream(&cfg, 4);
        let flags: Vec<bool> = recs.iter().map(|r| r.truth == Some(Label::Abnormal)).collect();
        let k = flags.iter().filter(|&&f| f).count() as f64;
        let runs = flags.windows(2).filter(|w| !w[0] && w[1]).count() as f64;
        assert!((k / 2e5 - 0.015).abs() < 0.003, "{k}");
        assert!((k / runs - 10.0).abs() < 1.5, "{}", k / runs);
    }

    #[test]
    fn drift_moves_the_mean() {
        let cfg = SyntheticConfig {
            n: 4000,
            dim: 2,
            anomaly_rate: 0.0,
            drift_rate: 0.005,
            drift_start: 2000,
            drift_duration: 1000,
            ..Default::default()
        };
        let recs = synthetic_stream(&cfg, 3);
        let mean = |rs: &[FeatureRecord]| -> Vec<f64> {
            (0..2).map(|j| rs.iter().map(|r| r.features[j]).sum::<f64>() / rs.len() as f64).collect()
        };
        let (a, b) = (mean(&recs[..2000]), mean(&recs[3000..]));
        let shift = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        assert!((shift - 5.0).abs() < 0.3, "{shift}");
    }

    proptest! {
        #[test]
        fn window_count_formula(n in 0usize..60, t in 1usize..20) {
            let rs: Vec<_> = (0..n as u64).map(|i| FeatureRecord::new(i, vec![1.0, 2.0], None)).collect();
            prop_assert_eq!(windows(&rs, t).count(), (n + 1).saturating_sub(t));
        }

        #[test]
        fn refitting_on_normalized_first_round_is_identity(
            rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 3), 2..30),
            probe in prop::collection::vec(-200.0f64..200.0, 3),
        ) {
            let rs: Vec<_> = rows.iter().enumerate().map(|(i, r)| FeatureRecord::new(i as u64, r.clone(), None)).collect();
            let Ok(n) = fit_normalizer(&rs) else { return Ok(()) };
            let normalized = n.apply_all(&rs);
            let again = fit_normalizer(&normalized).unwrap();
            let once = n.apply(&probe);
            let twice = again.apply(&once);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(a));
            }
        }
    }
}
