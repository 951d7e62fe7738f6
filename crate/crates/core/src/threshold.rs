//! Loss-distribution fitting and quantile thresholds.
//!
//! Losses produced by the scorer are modelled by one of three parametric
//! families. Each candidate is fitted in closed form:
//!
//! ```text
//! lognormal  mu = mean(ln x)          sigma^2 = mean((ln x - mu)^2)
//! normal     mu = mean(x)             sigma^2 = mean((x - mu)^2)
//! logistic   mu = mean(x)             gamma   = sqrt(3 * var) / pi     (moments)
//! ```
//!
//! All variances use the population divisor `n`. The family whose fitted CDF
//! has the smallest Kolmogorov-Smirnov distance to the sample wins, and the
//! threshold is the fitted quantile at the requested percentile:
//!
//! ```text
//! lognormal  T = exp(Phi^-1(p) * sigma + mu)
//! normal     T = Phi^-1(p) * sigma + mu
//! logistic   T = mu + gamma * ln(p / (1 - p))
//! ```

use crate::special::{logistic_cdf, norm_cdf, norm_inv_cdf};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Variances below this are treated as a degenerate (constant) sample.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThresholdError {
    #[error("sample contains non-positive value {0}; lognormal requires x > 0")]
    NonPositiveSample(f64),
    #[error("sample is degenerate (n = {n}, variance = {variance:e})")]
    DegenerateSample { n: usize, variance: f64 },
    #[error("percentile {0} is outside (0, 1)")]
    InvalidPercentile(f64),
    #[error("loss buffer is empty")]
    EmptyBuffer,
    #[error("sample contains a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DistributionFamily {
    LogNormal,
    Normal,
    Logistic,
}

impl DistributionFamily {
    /// Candidate order; also the tie-break order for best-fit selection.
    pub const ALL: [DistributionFamily; 3] = [Self::LogNormal, Self::Normal, Self::Logistic];

    pub fn name(self) -> &'static str {
        match self {
            Self::LogNormal => "lognormal",
            Self::Normal => "normal",
            Self::Logistic => "logistic",
        }
    }
}

impl std::fmt::Display for DistributionFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A fitted loss distribution.
///
/// `location` is mu (of the log-values for lognormal); `scale` is sigma for
/// normal/lognormal and gamma for logistic. `gof` is the KS distance between
/// the fitted CDF and the sample the fit came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionFit {
    pub family: DistributionFamily,
    pub location: f64,
    pub scale: f64,
    pub gof: f64,
}

impl DistributionFit {
    /// Builds a fit from explicit parameters, with `gof` left at zero.
    pub fn new(family: DistributionFamily, location: f64, scale: f64) -> Self {
        Self { family, location, scale, gof: 0.0 }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self.family {
            DistributionFamily::LogNormal => {
                if x <= 0.0 {
                    0.0
                } else {
                    norm_cdf((x.ln() - self.location) / self.scale)
                }
            }
            DistributionFamily::Normal => norm_cdf((x - self.location) / self.scale),
            DistributionFamily::Logistic => logistic_cdf((x - self.location) / self.scale),
        }
    }

    /// Log-density at `x`; `-inf` outside the support.
    pub fn log_pdf(&self, x: f64) -> f64 {
        let s = self.scale;
        match self.family {
            DistributionFamily::LogNormal => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let z = (x.ln() - self.location) / s;
                -0.5 * z * z - (s * x * (2.0 * PI).sqrt()).ln()
            }
            DistributionFamily::Normal => {
                let z = (x - self.location) / s;
                -0.5 * z * z - (s * (2.0 * PI).sqrt()).ln()
            }
            DistributionFamily::Logistic => {
                let z = (x - self.location) / s;
                // log f = -z - ln s - 2 ln(1 + e^-z), written stably for both signs.
                let a = z.abs();
                -a - s.ln() - 2.0 * (-a).exp().ln_1p()
            }
        }
    }

    pub fn log_likelihood(&self, xs: &[f64]) -> f64 {
        xs.iter().map(|&x| self.log_pdf(x)).sum()
    }

    pub fn quantile(&self, p: f64) -> Result<f64, ThresholdError> {
        quantile(self, p)
    }
}

/// The active decision boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub t1: f64,
    pub t2: Option<f64>,
    pub p1: f64,
    pub p2: f64,
    pub fit_normal: DistributionFit,
    pub fit_abnormal: Option<DistributionFit>,
}

fn check_finite(xs: &[f64]) -> Result<(), ThresholdError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ThresholdError::NonFinite)
    }
}

/// Mean and population variance.
fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

fn moments_checked(xs: &[f64]) -> Result<(f64, f64), ThresholdError> {
    check_finite(xs)?;
    if xs.len() < 2 {
        return Err(ThresholdError::DegenerateSample { n: xs.len(), variance: 0.0 });
    }
    let (mean, var) = mean_var(xs);
    if !(var >= DEGENERATE_VARIANCE) {
        return Err(ThresholdError::DegenerateSample { n: xs.len(), variance: var });
    }
    Ok((mean, var))
}

fn with_gof(xs: &[f64], mut fit: DistributionFit) -> Result<DistributionFit, ThresholdError> {
    fit.gof = ks_statistic(xs, &fit)?;
    Ok(fit)
}

/// Maximum-likelihood lognormal fit.
pub fn fit_lognormal_mle(losses: &[f64]) -> Result<DistributionFit, ThresholdError> {
    let logs = log_values(losses)?;
    let (mu, var) = moments_checked(&logs)?;
    with_gof(losses, DistributionFit::new(DistributionFamily::LogNormal, mu, var.sqrt()))
}

/// Maximum-likelihood normal fit.
pub fn fit_normal_mle(losses: &[f64]) -> Result<DistributionFit, ThresholdError> {
    let (mu, var) = moments_checked(losses)?;
    with_gof(losses, DistributionFit::new(DistributionFamily::Normal, mu, var.sqrt()))
}

/// Method-of-moments logistic fit: the logistic variance is (pi * gamma)^2 / 3.
pub fn fit_logistic_mom(losses: &[f64]) -> Result<DistributionFit, ThresholdError> {
    let (mu, var) = moments_checked(losses)?;
    let gamma = (3.0 * var).sqrt() / PI;
    with_gof(losses, DistributionFit::new(DistributionFamily::Logistic, mu, gamma))
}

fn log_values(xs: &[f64]) -> Result<Vec<f64>, ThresholdError> {
    check_finite(xs)?;
    xs.iter()
        .map(|&x| if x > 0.0 { Ok(x.ln()) } else { Err(ThresholdError::NonPositiveSample(x)) })
        .collect()
}

pub fn fit_family(
    family: DistributionFamily,
    losses: &[f64],
) -> Result<DistributionFit, ThresholdError> {
    match family {
        DistributionFamily::LogNormal => fit_lognormal_mle(losses),
        DistributionFamily::Normal => fit_normal_mle(losses),
        DistributionFamily::Logistic => fit_logistic_mom(losses),
    }
}

/// Two-sided Kolmogorov-Smirnov distance between the sample ECDF and `fit`.
pub fn ks_statistic(losses: &[f64], fit: &DistributionFit) -> Result<f64, ThresholdError> {
    check_finite(losses)?;
    if losses.is_empty() {
        return Err(ThresholdError::EmptyBuffer);
    }
    if fit.family == DistributionFamily::LogNormal {
        if let Some(&bad) = losses.iter().find(|&&x| x <= 0.0) {
            return Err(ThresholdError::NonPositiveSample(bad));
        }
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let d = sorted.iter().enumerate().fold(0.0_f64, |d, (i, &x)| {
        let f = fit.cdf(x);
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        d.max(above).max(below)
    });
    Ok(d.clamp(0.0, 1.0))
}

/// Fits every applicable family and returns the one with the smallest KS
/// distance. Lognormal is skipped when the sample has values `<= 0`.
pub fn fit_best_distribution(losses: &[f64]) -> Result<DistributionFit, ThresholdError> {
    check_finite(losses)?;
    if losses.is_empty() {
        return Err(ThresholdError::EmptyBuffer);
    }
    let mut best: Option<DistributionFit> = None;
    let mut last_err = None;
    for family in DistributionFamily::ALL {
        match fit_family(family, losses) {
            // strict `<` keeps the earlier family on ties
            Ok(fit) => {
                if best.is_none_or(|b| fit.gof < b.gof) {
                    best = Some(fit);
                }
            }
            Err(ThresholdError::NonPositiveSample(_)) => {}
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| {
        last_err.unwrap_or(ThresholdError::DegenerateSample { n: losses.len(), variance: 0.0 })
    })
}

pub fn quantile(fit: &DistributionFit, p: f64) -> Result<f64, ThresholdError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(ThresholdError::InvalidPercentile(p));
    }
    Ok(match fit.family {
        DistributionFamily::LogNormal => (norm_inv_cdf(p) * fit.scale + fit.location).exp(),
        DistributionFamily::Normal => norm_inv_cdf(p) * fit.scale + fit.location,
        DistributionFamily::Logistic => fit.location + fit.scale * (p / (1.0 - p)).ln(),
    })
}

/// Fits the best distribution to `losses` and returns its `p`-quantile.
///
/// The caller decides which tail a percentile refers to: the abnormal-side
/// threshold is obtained by passing the complemented percentile.
pub fn adaptive_threshold(
    losses: &[f64],
    p: f64,
) -> Result<(f64, DistributionFit), ThresholdError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(ThresholdError::InvalidPercentile(p));
    }
    if losses.is_empty() {
        return Err(ThresholdError::EmptyBuffer);
    }
    let fit = fit_best_distribution(losses)?;
    Ok((quantile(&fit, p)?, fit))
}

/// Probability-probability pairs `(model CDF, empirical CDF)` at each sorted
/// sample point, using the `(i - 0.5) / n` plotting position.
pub fn pp_points(losses: &[f64], fit: &DistributionFit) -> Vec<(f64, f64, f64)> {
    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (x, fit.cdf(x), (i as f64 + 0.5) / n))
        .collect()
}
