//! Site-specific soft-thresholding of local estimates toward a global fit.

use std::str::FromStr;

use log::warn;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Positive-part soft threshold `sign(x) max(|x| - lambda, 0)`.
pub fn soft_threshold<T: Scalar>(x: T, lambda: T) -> Result<T> {
    if !(lambda >= T::zero()) {
        return Err(Error::NegativeThreshold(lambda.to_f64_lossy()));
    }
    let m = x.abs() - lambda;
    Ok(if m <= T::zero() { T::zero() } else { x.signum() * m })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdRule {
    /// `gamma = c1 sqrt(ln(min(K, d)))`
    Algorithm2,
    /// `gamma = c1 sqrt(ln(min(N / n_k, d)))`
    Text,
}

impl FromStr for ThresholdRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "algorithm2" => Ok(Self::Algorithm2),
            "text" => Ok(Self::Text),
            other => Err(Error::Config(format!("unknown threshold rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DebiasConfig<T> {
    pub c1: T,
    pub rule: ThresholdRule,
}

impl<T: Scalar> Default for DebiasConfig<T> {
    fn default() -> Self {
        Self { c1: T::one(), rule: ThresholdRule::Algorithm2 }
    }
}

impl<T: Scalar> DebiasConfig<T> {
    pub fn new(c1: T, rule: ThresholdRule) -> Result<Self> {
        if !(c1 >= T::one()) {
            return Err(Error::Config(format!("c1 must be at least 1, got {c1}")));
        }
        Ok(Self { c1, rule })
    }
}

/// Sizes entering the threshold multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SiteCounts {
    pub sites: usize,
    pub total_subjects: usize,
    pub site_subjects: usize,
    pub dimension: usize,
}

/// Threshold multiplier `gamma`. Falls back to the text rule when
/// `min(K, d) = 1` would give zero.
pub fn threshold_multiplier<T: Scalar>(config: &DebiasConfig<T>, counts: SiteCounts) -> Result<T> {
    let text = || -> Result<T> {
        if counts.site_subjects == 0 {
            return Err(Error::Config("site has no subjects".into()));
        }
        let ratio = counts.total_subjects as f64 / counts.site_subjects as f64;
        let arg = ratio.min(counts.dimension as f64);
        Ok(config.c1 * T::c(arg.max(1.0).ln().sqrt()))
    };
    match config.rule {
        ThresholdRule::Algorithm2 => {
            let m = counts.sites.min(counts.dimension);
            if m == 0 {
                return Err(Error::Config("need at least one site and one coordinate".into()));
            }
            if m == 1 {
                warn!("min(K, d) = 1 gives a zero threshold; using the N / n_k rule instead");
                return text();
            }
            Ok(config.c1 * T::c((m as f64).ln().sqrt()))
        }
        ThresholdRule::Text => text(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebiasResult<T> {
    pub site_id: String,
    pub beta_local: Vec<T>,
    pub beta_global: Vec<T>,
    pub lambda: Vec<T>,
    pub beta_debiased: Vec<T>,
    pub shrunk_mask: Vec<bool>,
}

/// Shrinks `beta_local` toward `beta_global` coordinatewise with thresholds
/// `gamma * se_local`.
pub fn debias_site<T: Scalar>(
    site_id: &str,
    beta_global: &[T],
    beta_local: &[T],
    se_local: &[T],
    config: &DebiasConfig<T>,
    counts: SiteCounts,
) -> Result<DebiasResult<T>> {
    if beta_global.len() != beta_local.len() || se_local.len() != beta_local.len() {
        return Err(Error::Dimension(format!(
            "global {}, local {}, standard errors {}",
            beta_global.len(),
            beta_local.len(),
            se_local.len()
        )));
    }
    if let Some(s) = se_local.iter().find(|s| !(**s > T::zero()) || !s.is_finite()) {
        return Err(Error::Config(format!("local standard errors must be positive, got {s}")));
    }
    let gamma = threshold_multiplier(config, counts)?;
    let lambda: Vec<T> = se_local.iter().map(|&s| gamma * s).collect();
    let mut debiased = Vec::with_capacity(lambda.len());
    let mut mask = Vec::with_capacity(lambda.len());
    for ((&g, &l), &lam) in beta_global.iter().zip(beta_local).zip(&lambda) {
        let delta = l - g;
        let shrunk = delta.abs() <= lam;
        // Written as local minus the shrinkage so a zero threshold is exact.
        debiased.push(if shrunk { g } else { l - delta.signum() * lam });
        mask.push(shrunk);
    }
    Ok(DebiasResult {
        site_id: site_id.to_string(),
        beta_local: beta_local.to_vec(),
        beta_global: beta_global.to_vec(),
        lambda,
        beta_debiased: debiased,
        shrunk_mask: mask,
    })
}
