//! Seeded simulation scenarios and their analytic truths.
//!
//! Every site draws from its own ChaCha20 stream keyed by a SHA-256 digest
//! of `(seed, site index)`, so a site's data does not depend on how many
//! other sites exist or the order they are generated in.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::survival::SubjectRecord;

pub const COVARIATE_NAMES: [&str; 2] = ["x", "trt"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    PhExponential,
    WeibullTv,
    Hetero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams {
    pub shape_base: f64,
    pub shape_trt: f64,
    pub scale_base: f64,
}

impl Default for WeibullParams {
    fn default() -> Self {
        Self { shape_base: 0.5, shape_trt: 1.7, scale_base: 15.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensorParams {
    /// Exponential censoring rate; zero disables random censoring.
    pub rate: f64,
    /// Administrative censoring time.
    pub truncation: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeteroParams {
    pub target_site: usize,
    pub target_site_size: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub n_total: usize,
    pub site_sizes: Vec<usize>,
    pub beta_x: f64,
    pub beta_t: f64,
    pub baseline_hazard: f64,
    pub weibull: WeibullParams,
    pub censor: CensorParams,
    pub hetero: Option<HeteroParams>,
    pub seed: u64,
}

pub const BALANCED_SITES: [usize; 5] = [1500; 5];
pub const SKEWED_SITES: [usize; 5] = [3000, 3000, 1000, 400, 100];

pub fn weibull_sites() -> Vec<usize> {
    let mut v = vec![3000, 500, 500, 200, 200];
    v.extend([100; 7]);
    v.extend([50; 8]);
    v
}

pub fn hetero_sites() -> Vec<usize> {
    let mut v = vec![3000, 1000, 1000, 1000, 500, 500];
    v.extend([100; 13]);
    v.extend([50; 4]);
    v
}

/// Baseline hazard giving the requested approximate event rate.
pub fn baseline_for_event_rate(rate: f64) -> Result<f64> {
    if (rate - 0.3).abs() < 1e-12 {
        Ok(1.0 / 20.0)
    } else if (rate - 0.1).abs() < 1e-12 {
        Ok(1.0 / 50.0)
    } else {
        Err(Error::Config(format!("event rate must be 0.3 or 0.1, got {rate}")))
    }
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `E[f(X)]` for standard normal `X`, by Simpson's rule on `[-10, 10]`.
pub fn normal_expectation(f: impl Fn(f64) -> f64) -> f64 {
    let n = 4000;
    let (a, b) = (-10.0, 10.0);
    let h = (b - a) / n as f64;
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = 0.0;
    for i in 0..=n {
        let x = a + h * i as f64;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        s += w * f(x) * pdf(x);
    }
    s * h / 3.0
}

/// `P(T < C)` for exponential event times and exponential censoring at
/// `rate`, averaged over the covariate distribution.
pub fn ph_event_probability(h0: f64, beta_x: f64, beta_t: f64, rate: f64) -> f64 {
    normal_expectation(|x| {
        let p = expit(0.5 * x);
        let l0 = h0 * (beta_x * x).exp();
        let l1 = l0 * beta_t.exp();
        (1.0 - p) * l0 / (l0 + rate) + p * l1 / (l1 + rate)
    })
}

/// Censoring rate solving `ph_event_probability = target` by bisection on
/// the log scale.
pub fn calibrate_censoring(h0: f64, beta_x: f64, beta_t: f64, target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Config(format!("target event rate {target} outside (0, 1)")));
    }
    let (mut lo, mut hi) = (-30.0f64, 10.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ph_event_probability(h0, beta_x, beta_t, mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

impl ScenarioConfig {
    pub fn ph(event_rate: f64, site_sizes: Vec<usize>, seed: u64) -> Result<Self> {
        let h0 = baseline_for_event_rate(event_rate)?;
        let beta_x = 0.7f64.ln();
        let beta_t = 1.15f64.ln();
        let rate = calibrate_censoring(h0, beta_x, beta_t, event_rate)?;
        let cfg = Self {
            kind: ScenarioKind::PhExponential,
            n_total: site_sizes.iter().sum(),
            site_sizes,
            beta_x,
            beta_t,
            baseline_hazard: h0,
            weibull: WeibullParams::default(),
            censor: CensorParams { rate, truncation: None },
            hetero: None,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn weibull_tv(site_sizes: Vec<usize>, seed: u64) -> Result<Self> {
        let cfg = Self {
            kind: ScenarioKind::WeibullTv,
            n_total: site_sizes.iter().sum(),
            site_sizes,
            beta_x: 0.7f64.ln(),
            beta_t: 2f64.ln(),
            baseline_hazard: 0.0,
            weibull: WeibullParams::default(),
            censor: CensorParams { rate: -(0.5f64.ln()) / 20.0, truncation: Some(40.0) },
            hetero: None,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sparse heterogeneity: the first site of `target_size` gets treatment
    /// effect `log(1.5) + delta`.
    pub fn hetero(site_sizes: Vec<usize>, target_size: usize, delta: f64, seed: u64) -> Result<Self> {
        let target_site = site_sizes
            .iter()
            .position(|&s| s == target_size)
            .ok_or_else(|| Error::Config(format!("no site of size {target_size}")))?;
        let h0 = 1.0 / 20.0;
        let beta_x = 0.7f64.ln();
        let beta_t = 1.5f64.ln();
        let rate = calibrate_censoring(h0, beta_x, beta_t, 0.3)?;
        let cfg = Self {
            kind: ScenarioKind::Hetero,
            n_total: site_sizes.iter().sum(),
            site_sizes,
            beta_x,
            beta_t,
            baseline_hazard: h0,
            weibull: WeibullParams::default(),
            censor: CensorParams { rate, truncation: None },
            hetero: Some(HeteroParams { target_site, target_site_size: target_size, delta }),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.site_sizes.is_empty() || self.site_sizes.contains(&0) {
            return Err(Error::Config("every site needs at least one subject".into()));
        }
        if self.site_sizes.iter().sum::<usize>() != self.n_total {
            return Err(Error::Config(format!(
                "site sizes sum to {}, expected {}",
                self.site_sizes.iter().sum::<usize>(),
                self.n_total
            )));
        }
        if !(self.censor.rate >= 0.0) {
            return Err(Error::Config("censoring rate must be nonnegative".into()));
        }
        if let Some(h) = &self.hetero {
            if self.site_sizes.get(h.target_site) != Some(&h.target_site_size) {
                return Err(Error::Config(format!(
                    "target site {} does not have size {}",
                    h.target_site, h.target_site_size
                )));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn site_treatment_effect(&self, site: usize) -> f64 {
        match &self.hetero {
            Some(h) if h.target_site == site => self.beta_t + h.delta,
            _ => self.beta_t,
        }
    }
}

/// Independent stream for `(seed, index)`.
pub fn substream(seed: u64, index: u64) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(key)
}

/// Seed of replicate `rep` under a master seed.
pub fn replicate_seed(seed: u64, rep: u64) -> u64 {
    substream(seed, u64::MAX - rep).random()
}

pub fn site_name(index: usize) -> String {
    format!("site_{:02}", index + 1)
}

fn draw_censoring(rng: &mut ChaCha20Rng, c: &CensorParams) -> f64 {
    let mut t = if c.rate > 0.0 {
        Exp::new(c.rate).expect("positive rate").sample(rng)
    } else {
        f64::INFINITY
    };
    if let Some(tr) = c.truncation {
        t = t.min(tr);
    }
    t
}

fn generate_site(cfg: &ScenarioConfig, site: usize) -> Vec<SubjectRecord<f64>> {
    let mut rng = substream(cfg.seed, site as u64);
    let beta_t = cfg.site_treatment_effect(site);
    let name = site_name(site);
    (0..cfg.site_sizes[site])
        .map(|i| {
            let x: f64 = StandardNormal.sample(&mut rng);
            let trt = if rng.random::<f64>() < expit(0.5 * x) { 1.0 } else { 0.0 };
            let u: f64 = 1.0 - rng.random::<f64>();
            let event_time = match cfg.kind {
                ScenarioKind::PhExponential | ScenarioKind::Hetero => {
                    let rate = cfg.baseline_hazard * (cfg.beta_x * x + beta_t * trt).exp();
                    -u.ln() / rate
                }
                ScenarioKind::WeibullTv => {
                    let w = &cfg.weibull;
                    let shape = w.shape_base + w.shape_trt * trt;
                    let scale = w.scale_base * (cfg.beta_x * x + beta_t * trt).exp();
                    scale * (-u.ln()).powf(1.0 / shape)
                }
            };
            let censor = draw_censoring(&mut rng, &cfg.censor);
            let event = event_time <= censor;
            SubjectRecord::new(format!("{name}-{:05}", i + 1), name.clone(), event_time.min(censor), event, vec![x, trt])
        })
        .collect()
}

/// Generates all sites of a scenario.
pub fn generate(cfg: &ScenarioConfig) -> Result<Vec<Vec<SubjectRecord<f64>>>> {
    cfg.validate()?;
    Ok((0..cfg.site_sizes.len()).map(|k| generate_site(cfg, k)).collect())
}

fn expect_kind(cfg: &ScenarioConfig, kind: ScenarioKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(Error::Config(format!("expected a {kind:?} scenario, got {:?}", cfg.kind)));
    }
    Ok(())
}

pub fn gen_ph(cfg: &ScenarioConfig) -> Result<Vec<Vec<SubjectRecord<f64>>>> {
    expect_kind(cfg, ScenarioKind::PhExponential)?;
    generate(cfg)
}

pub fn gen_weibull_tv(cfg: &ScenarioConfig) -> Result<Vec<Vec<SubjectRecord<f64>>>> {
    expect_kind(cfg, ScenarioKind::WeibullTv)?;
    generate(cfg)
}

pub fn gen_hetero(cfg: &ScenarioConfig) -> Result<Vec<Vec<SubjectRecord<f64>>>> {
    expect_kind(cfg, ScenarioKind::Hetero)?;
    generate(cfg)
}

/// `log H(t | T=1, X=0) - log H(t | T=0, X=0)` under the Weibull scenario.
pub fn true_cloglog_coeff(t: f64, cfg: &ScenarioConfig) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Config(format!("time must be positive, got {t}")));
    }
    let w = &cfg.weibull;
    let scale0 = w.scale_base;
    let scale1 = w.scale_base * cfg.beta_t.exp();
    let shape1 = w.shape_base + w.shape_trt;
    Ok(shape1 * (t / scale1).ln() - w.shape_base * (t / scale0).ln())
}
