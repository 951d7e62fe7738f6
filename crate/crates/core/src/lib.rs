//! Online, self-adaptive network anomaly detection.
//!
//! A sequence variational autoencoder scores sliding windows of feature
//! vectors. Losses below a fitted high quantile of recent normal losses, or
//! above a fitted low-tail threshold of recent abnormal losses, become
//! pseudo-labels; a random forest trained on those labels decides the
//! uncertain band in between. Thresholds and both models are refreshed from
//! bounded rolling buffers every `m` samples.

pub mod buffer;
pub mod engine;
pub mod forest;
pub mod ingest;
pub mod label;
pub mod metrics;
pub mod pipeline;
pub mod scorer;
pub mod special;
pub mod threshold;
