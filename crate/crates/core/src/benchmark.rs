//! Replicated simulation experiments shaped like the three figures.

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{cox_fit, pooled_pseudo_fit, PseudoMethod, DEFAULT_GRID_POINTS};
use crate::debias::{debias_site, DebiasConfig, SiteCounts};
use crate::error::{Error, Result};
use crate::federation::{local_fit, run_federation, FederationConfig, LandmarkSpec, Mailbox, SiteData};
use crate::glm::Link;
use crate::pseudo::DesignSpec;
use crate::simgen::{generate, hetero_sites, replicate_seed, site_name, weibull_sites, ScenarioConfig, BALANCED_SITES, COVARIATE_NAMES, SKEWED_SITES};
use crate::survival::SubjectRecord;

pub const TREATMENT: &str = "trt";
pub const WEIBULL_LANDMARKS: [f64; 3] = [5.0, 25.0, 5.0];

pub fn scenario_sites(cfg: &ScenarioConfig) -> Result<Vec<SiteData>> {
    Ok(generate(cfg)?
        .into_iter()
        .enumerate()
        .map(|(k, records)| SiteData {
            name: site_name(k),
            covariate_names: COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
            records,
        })
        .collect())
}

fn pooled(sites: &[SiteData]) -> Vec<SubjectRecord<f64>> {
    sites.iter().flat_map(|s| s.records.iter().cloned()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Balanced,
    Skewed,
}

impl Layout {
    pub fn sizes(self) -> Vec<usize> {
        match self {
            Layout::Balanced => BALANCED_SITES.to_vec(),
            Layout::Skewed => SKEWED_SITES.to_vec(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Layout::Balanced => "balanced",
            Layout::Skewed => "skewed",
        }
    }
}

/// Mean, variance (denominator `n - 1`) and mean squared error of errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorSummary {
    pub n: usize,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
}

pub fn summarize(errors: &[f64]) -> ErrorSummary {
    let n = errors.len();
    if n == 0 {
        return ErrorSummary { n, bias: f64::NAN, variance: f64::NAN, mse: f64::NAN };
    }
    let nf = n as f64;
    let bias = errors.iter().sum::<f64>() / nf;
    let variance = if n > 1 {
        errors.iter().map(|e| (e - bias).powi(2)).sum::<f64>() / (nf - 1.0)
    } else {
        0.0
    };
    let mse = errors.iter().map(|e| e * e).sum::<f64>() / nf;
    ErrorSummary { n, bias, variance, mse }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One proportional-hazards replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Figure1Replicate {
    pub rep: usize,
    pub event_rate: f64,
    pub layout: Layout,
    pub truth: f64,
    pub fed_beta: Vec<f64>,
    pub fed_se: Vec<f64>,
    pub fed_treatment: f64,
    pub fed_treatment_se: f64,
    pub pooled_beta: Vec<f64>,
    pub pooled_se: Vec<f64>,
    pub cox_treatment: f64,
    pub event_fraction: f64,
}

pub fn figure1_replicate(event_rate: f64, layout: Layout, seed: u64, rep: usize) -> Result<Figure1Replicate> {
    let cfg = ScenarioConfig::ph(event_rate, layout.sizes(), replicate_seed(seed, rep as u64))?;
    let sites = scenario_sites(&cfg)?;
    let fc = FederationConfig::default();
    let out = run_federation(&sites, &fc, &Mailbox::Memory)?;
    let all = pooled(&sites);
    let spec = DesignSpec::with_names(sites[0].covariate_names.clone(), &[])?;
    let pp = pooled_pseudo_fit(&all, &out.landmarks, fc.link, &spec, PseudoMethod::Exact, DEFAULT_GRID_POINTS)?;
    let cox = cox_fit(&all)?;
    let t_idx = 1;
    let (fed_treatment, fed_treatment_se) = out
        .report
        .coefficient(TREATMENT)
        .ok_or_else(|| Error::Config("treatment column missing".into()))?;
    let (cox_treatment, _) = cox.coefficient(t_idx).ok_or_else(|| Error::Config("treatment not estimated".into()))?;
    Ok(Figure1Replicate {
        rep,
        event_rate,
        layout,
        truth: cfg.beta_t,
        fed_beta: out.report.beta.clone(),
        fed_se: out.report.std_errors.clone(),
        fed_treatment,
        fed_treatment_se,
        pooled_beta: pp.beta,
        pooled_se: pp.std_errors,
        cox_treatment,
        event_fraction: all.iter().filter(|r| r.event).count() as f64 / all.len() as f64,
    })
}

pub fn figure1(event_rates: &[f64], layouts: &[Layout], reps: usize, seed: u64) -> Result<Vec<Figure1Replicate>> {
    let mut out = Vec::with_capacity(event_rates.len() * layouts.len() * reps);
    for (c, &rate) in event_rates.iter().enumerate() {
        for (l, &layout) in layouts.iter().enumerate() {
            let cell_seed = replicate_seed(seed, 1_000_000 + (c * 16 + l) as u64);
            let cell = (0..reps)
                .into_par_iter()
                .map(|rep| figure1_replicate(rate, layout, cell_seed, rep))
                .collect::<Result<Vec<_>>>()?;
            out.extend(cell);
        }
    }
    Ok(out)
}

/// One time-varying replicate: treatment effect per landmark.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Figure2Replicate {
    pub rep: usize,
    pub landmarks: Vec<f64>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub truth: Vec<f64>,
}

pub fn weibull_landmarks() -> LandmarkSpec {
    let [lo, hi, count] = WEIBULL_LANDMARKS;
    LandmarkSpec::EquallySpaced { lo, hi, count: count as usize }
}

pub fn figure2_replicate(seed: u64, rep: usize, landmarks: &LandmarkSpec) -> Result<Figure2Replicate> {
    let cfg = ScenarioConfig::weibull_tv(weibull_sites(), replicate_seed(seed, rep as u64))?;
    let sites = scenario_sites(&cfg)?;
    let fc = FederationConfig {
        landmarks: landmarks.clone(),
        time_varying: vec![TREATMENT.to_string()],
        ..FederationConfig::default()
    };
    let out = run_federation(&sites, &fc, &Mailbox::Memory)?;
    let eff = out.report.effective_for(TREATMENT);
    let lm = out.landmarks.times().to_vec();
    let truth = lm.iter().map(|&t| crate::simgen::true_cloglog_coeff(t, &cfg)).collect::<Result<Vec<_>>>()?;
    Ok(Figure2Replicate {
        rep,
        landmarks: lm,
        estimates: eff.iter().map(|e| e.estimate).collect(),
        std_errors: eff.iter().map(|e| e.std_error).collect(),
        truth,
    })
}

pub fn figure2(reps: usize, seed: u64, landmarks: &LandmarkSpec) -> Result<Vec<Figure2Replicate>> {
    (0..reps).into_par_iter().map(|rep| figure2_replicate(seed, rep, landmarks)).collect()
}

/// Estimators compared at the perturbed site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Figure3Method {
    Global,
    Local,
    Debiased,
}

impl Figure3Method {
    pub const ALL: [Figure3Method; 3] = [Figure3Method::Global, Figure3Method::Local, Figure3Method::Debiased];

    pub fn name(self) -> &'static str {
        match self {
            Figure3Method::Global => "global",
            Figure3Method::Local => "local",
            Figure3Method::Debiased => "debiased",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Figure3Replicate {
    pub rep: usize,
    pub delta: f64,
    pub target_size: usize,
    pub truth: f64,
    pub global: f64,
    pub local_cox: f64,
    pub local_pseudo: f64,
    pub debiased: f64,
    pub shrunk: bool,
}

impl Figure3Replicate {
    pub fn estimate(&self, m: Figure3Method) -> f64 {
        match m {
            Figure3Method::Global => self.global,
            Figure3Method::Local => self.local_cox,
            Figure3Method::Debiased => self.debiased,
        }
    }
}

pub fn figure3_replicate(target_size: usize, delta: f64, seed: u64, rep: usize, debias: &DebiasConfig<f64>) -> Result<Figure3Replicate> {
    let cfg = ScenarioConfig::hetero(hetero_sites(), target_size, delta, replicate_seed(seed, rep as u64))?;
    let target = cfg.hetero.expect("hetero scenario").target_site;
    let sites = scenario_sites(&cfg)?;
    let fc = FederationConfig { link: Link::Cloglog, ..FederationConfig::default() };
    let out = run_federation(&sites, &fc, &Mailbox::Memory)?;
    let local = local_fit(&sites[target], &out.km, &out.landmarks, &fc)?;
    let cox = cox_fit(&sites[target].records)?;
    let j = out
        .report
        .columns
        .iter()
        .position(|c| c == TREATMENT)
        .ok_or_else(|| Error::Config("treatment column missing".into()))?;
    let counts = SiteCounts {
        sites: sites.len(),
        total_subjects: out.state.n_cum,
        site_subjects: sites[target].records.len(),
        dimension: sites[target].covariate_names.len(),
    };
    let d = debias_site(&sites[target].name, &out.report.beta, &local.beta, &local.std_errors, debias, counts)?;
    Ok(Figure3Replicate {
        rep,
        delta,
        target_size,
        truth: cfg.site_treatment_effect(target),
        global: out.report.beta[j],
        local_cox: cox.coefficient(1).ok_or_else(|| Error::Config("treatment not estimated".into()))?.0,
        local_pseudo: local.beta[j],
        debiased: d.beta_debiased[j],
        shrunk: d.shrunk_mask[j],
    })
}

/// Replicates of one cell; replicates whose small-site fits fail are skipped
/// and counted.
pub fn figure3_cell(
    target_size: usize,
    delta: f64,
    reps: usize,
    seed: u64,
    debias: &DebiasConfig<f64>,
) -> Result<(Vec<Figure3Replicate>, usize)> {
    let cell_seed = replicate_seed(seed, 2_000_000 + target_size as u64 * 1000 + (delta * 1000.0).round() as u64);
    let results: Vec<Result<Figure3Replicate>> =
        (0..reps).into_par_iter().map(|rep| figure3_replicate(target_size, delta, cell_seed, rep, debias)).collect();
    let mut rows = Vec::with_capacity(reps);
    let mut skipped = 0;
    for (rep, res) in results.into_iter().enumerate() {
        match res {
            Ok(r) => rows.push(r),
            Err(
                e @ (Error::MonotoneLikelihood { .. }
                | Error::RankDeficient
                | Error::NonConvergence { .. }
                | Error::DivergentPredictor
                | Error::SingularInformation),
            ) => {
                warn!("target size {target_size}, delta {delta}, replicate {rep}: {e}");
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok((rows, skipped))
}

pub fn figure3_errors(rows: &[Figure3Replicate], m: Figure3Method) -> Vec<f64> {
    rows.iter().map(|r| r.estimate(m) - r.truth).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let s = summarize(&[1.0, 2.0, 3.0]);
        assert_eq!(s.n, 3);
        assert!((s.bias - 2.0).abs() < 1e-15);
        assert!((s.variance - 1.0).abs() < 1e-15);
        assert!((s.mse - 14.0 / 3.0).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
    }

    #[test]
    fn replicates_are_deterministic() {
        let a = figure1_replicate(0.3, Layout::Skewed, 4, 0).unwrap();
        let b = figure1_replicate(0.3, Layout::Skewed, 4, 0).unwrap();
        assert_eq!(a, b);
        assert!((a.truth - 1.15f64.ln()).abs() < 1e-15);
    }
}
