//! One-shot sequential federation over sites that exchange only summary
//! messages.
//!
//! Pass 1 chains the Kaplan–Meier state through the sites. The final state
//! is broadcast, then pass 2 chains the renewable GEE. Each site sees its
//! own records plus the bytes of the messages it receives, nothing else.

pub mod message;
pub mod sitedata;

use std::path::{Path, PathBuf};

use log::info;

use crate::error::{Error, Result};
use crate::glm::{glm_fit, Link, NewtonConfig};
use crate::pseudo::{build_design, default_landmarks, landmarks_equally_spaced, pseudo_federated, Design, DesignSpec, LandmarkGrid};
use crate::renewable::{finalize, renew_init, renew_update, report_from, FitReport, RenewableState};
use crate::survival::{km_on_grid, km_stream, quantile_grid, KmState};

pub use message::{parse_message, privacy_budget, serialize_message, GeePayload, KmPayload, Payload, SiteMessage, PROTOCOL_VERSION};
pub use sitedata::{list_site_dirs, read_site_csv, read_site_dir, write_site_csv, SiteData};

pub const DEFAULT_LANDMARKS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum LandmarkSpec {
    /// `count` landmarks between the 10th and 90th percentiles of the first
    /// site's event times.
    FromFirstSite { count: usize },
    EquallySpaced { lo: f64, hi: f64, count: usize },
    Explicit(Vec<f64>),
}

impl LandmarkSpec {
    /// Parses `lo,hi,J`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || Error::Config(format!("landmarks must be `lo,hi,J`, got `{s}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].parse().map_err(|_| bad())?;
        let count: usize = parts[2].parse().map_err(|_| bad())?;
        Ok(Self::EquallySpaced { lo, hi, count })
    }

    pub fn resolve(&self, first_site: &SiteData) -> Result<LandmarkGrid<f64>> {
        match self {
            Self::FromFirstSite { count } => default_landmarks(&first_site.records, *count),
            Self::EquallySpaced { lo, hi, count } => landmarks_equally_spaced(*lo, *hi, *count),
            Self::Explicit(v) => LandmarkGrid::new(v.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FederationConfig {
    pub link: Link,
    pub landmarks: LandmarkSpec,
    pub grid_points: usize,
    pub time_varying: Vec<String>,
    pub newton: NewtonConfig<f64>,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            link: Link::Cloglog,
            landmarks: LandmarkSpec::FromFirstSite { count: DEFAULT_LANDMARKS },
            grid_points: crate::baselines::DEFAULT_GRID_POINTS,
            time_varying: Vec::new(),
            newton: NewtonConfig::default(),
        }
    }
}

/// Where messages live between hand-offs.
#[derive(Debug, Clone)]
pub enum Mailbox {
    Memory,
    /// Every message is written to and read back from this directory.
    Directory(PathBuf),
}

impl Mailbox {
    fn deliver(&self, name: &str, bytes: Vec<u8>) -> Result<Vec<u8>> {
        match self {
            Mailbox::Memory => Ok(bytes),
            Mailbox::Directory(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(name);
                std::fs::write(&path, &bytes)?;
                Ok(std::fs::read(&path)?)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub report: FitReport<f64>,
    pub km: KmState<f64>,
    pub landmarks: LandmarkGrid<f64>,
    pub state: RenewableState<f64>,
    pub sites: Vec<String>,
    pub visits: Vec<usize>,
    pub bytes_sent: Vec<usize>,
    pub byte_budget: usize,
}

pub fn km_from_message(msg: &SiteMessage) -> Result<KmState<f64>> {
    let Payload::Km(km) = &msg.payload else {
        return Err(Error::Protocol(format!("expected a km message from {}", msg.sender)));
    };
    let state = KmState {
        grid: msg.grid.clone(),
        survival: km.survival.clone(),
        cum_hazard_integrand: km.cum_hazard_integrand.clone(),
        at_risk_fraction: km.at_risk_fraction.clone(),
        event_fraction: km.event_fraction.clone(),
        n_processed: msg.n_cum,
        clamp_adjustments: km.clamp_adjustments,
    };
    state.check_invariants()?;
    Ok(state)
}

pub fn km_message(sender: &str, state: &KmState<f64>, landmarks: &LandmarkGrid<f64>) -> SiteMessage {
    SiteMessage {
        protocol_version: PROTOCOL_VERSION.into(),
        sender: sender.into(),
        grid: state.grid.clone(),
        landmarks: landmarks.times().to_vec(),
        n_cum: state.n_processed,
        payload: Payload::Km(KmPayload {
            survival: state.survival.clone(),
            cum_hazard_integrand: state.cum_hazard_integrand.clone(),
            at_risk_fraction: state.at_risk_fraction.clone(),
            event_fraction: state.event_fraction.clone(),
            clamp_adjustments: state.clamp_adjustments,
        }),
    }
}

fn state_from_message(msg: &SiteMessage) -> Result<RenewableState<f64>> {
    let Payload::Gee(g) = &msg.payload else {
        return Err(Error::Protocol(format!("expected a gee message from {}", msg.sender)));
    };
    Ok(RenewableState {
        beta: g.beta.clone(),
        info: g.info.clone(),
        meat: g.meat.clone(),
        sites_processed: g.sites_processed,
        n_cum: msg.n_cum,
        landmarks: msg.landmarks.clone(),
        schema: g.schema.clone(),
        link: g.link,
    })
}

fn gee_message(sender: &str, grid: &[f64], state: &RenewableState<f64>) -> SiteMessage {
    SiteMessage {
        protocol_version: PROTOCOL_VERSION.into(),
        sender: sender.into(),
        grid: grid.to_vec(),
        landmarks: state.landmarks.clone(),
        n_cum: state.n_cum,
        payload: Payload::Gee(GeePayload {
            link: state.link,
            sites_processed: state.sites_processed,
            beta: state.beta.clone(),
            info: state.info.clone(),
            meat: state.meat.clone(),
            schema: state.schema.clone(),
        }),
    }
}

/// Local design of one site against the shared curve.
pub fn site_design(site: &SiteData, km: &KmState<f64>, landmarks: &LandmarkGrid<f64>, time_varying: &[String]) -> Result<Design<f64>> {
    let spec = DesignSpec::with_names(site.covariate_names.clone(), time_varying)?;
    let pseudo = pseudo_federated(km, &site.records, landmarks)?;
    build_design(&pseudo, &site.records, landmarks, &spec)
}

/// Local pseudo-value fit at one site, with sandwich standard errors.
pub fn local_fit(
    site: &SiteData,
    km: &KmState<f64>,
    landmarks: &LandmarkGrid<f64>,
    config: &FederationConfig,
) -> Result<FitReport<f64>> {
    let design = site_design(site, km, landmarks, &config.time_varying)?;
    let fit = glm_fit(&design, config.link, None, &config.newton)?;
    report_from(&design.columns, &fit.beta, &fit.information, &fit.meat, landmarks.times(), site.records.len(), 1)
}

/// One site's side of the protocol.
struct SiteAgent<'a> {
    data: &'a SiteData,
    visits: usize,
    bytes_sent: usize,
}

impl<'a> SiteAgent<'a> {
    fn km_pass(&mut self, incoming: Option<&[u8]>, config: &FederationConfig) -> Result<Vec<u8>> {
        self.visits += 1;
        let (state, landmarks) = match incoming {
            None => {
                let landmarks = config.landmarks.resolve(self.data)?;
                let times: Vec<f64> = self.data.records.iter().map(|r| r.time).collect();
                let grid = quantile_grid(&times, landmarks.times(), config.grid_points)?;
                (km_on_grid(&self.data.records, &grid)?, landmarks)
            }
            Some(bytes) => {
                let msg = parse_message(bytes)?;
                let mut state = km_from_message(&msg)?;
                km_stream(&mut state, &self.data.records)?;
                (state, LandmarkGrid::new(msg.landmarks)?)
            }
        };
        let out = serialize_message(&km_message(&self.data.name, &state, &landmarks))?;
        self.bytes_sent += out.len();
        Ok(out)
    }

    fn gee_pass(&mut self, broadcast: &[u8], incoming: Option<&[u8]>, config: &FederationConfig) -> Result<Vec<u8>> {
        self.visits += 1;
        let shared = parse_message(broadcast)?;
        let km = km_from_message(&shared)?;
        let landmarks = LandmarkGrid::new(shared.landmarks.clone())?;
        let design = site_design(self.data, &km, &landmarks, &config.time_varying)?;
        let state = match incoming {
            None => renew_init(&design, landmarks.times(), config.link, &config.newton)?,
            Some(bytes) => {
                let msg = parse_message(bytes)?;
                if msg.grid != km.grid || msg.landmarks != shared.landmarks {
                    return Err(Error::Protocol(format!("{} sent a message for a different grid", msg.sender)));
                }
                let prev = state_from_message(&msg)?;
                if prev.link != config.link {
                    return Err(Error::SchemaMismatch(format!("chain uses {} link, site expects {}", prev.link, config.link)));
                }
                renew_update(&prev, &design, &config.newton)?
            }
        };
        let out = serialize_message(&gee_message(&self.data.name, &km.grid, &state))?;
        self.bytes_sent += out.len();
        Ok(out)
    }
}

/// Runs both passes over `sites` in order.
pub fn run_federation(sites: &[SiteData], config: &FederationConfig, mailbox: &Mailbox) -> Result<FederationOutcome> {
    if sites.is_empty() {
        return Err(Error::Config("no sites".into()));
    }
    let mut agents: Vec<SiteAgent> = sites.iter().map(|data| SiteAgent { data, visits: 0, bytes_sent: 0 }).collect();

    let mut last: Option<Vec<u8>> = None;
    for (k, agent) in agents.iter_mut().enumerate() {
        let out = agent.km_pass(last.as_deref(), config)?;
        last = Some(mailbox.deliver(&format!("{:03}_km_{}.json", k + 1, agent.data.name), out)?);
    }
    let broadcast = mailbox.deliver("km_final.json", last.take().expect("at least one site"))?;
    let shared = parse_message(&broadcast)?;
    let km = km_from_message(&shared)?;
    info!(
        "distributed curve over {} subjects, {} grid points, {} clamp adjustments",
        km.n_processed,
        km.len(),
        km.clamp_adjustments
    );

    for (k, agent) in agents.iter_mut().enumerate() {
        let out = agent.gee_pass(&broadcast, last.as_deref(), config)?;
        last = Some(mailbox.deliver(&format!("{:03}_gee_{}.json", k + 1, agent.data.name), out)?);
    }
    let state = state_from_message(&parse_message(&last.expect("at least one site"))?)?;
    let report = finalize(&state)?;

    let visits: Vec<usize> = agents.iter().map(|a| a.visits).collect();
    if visits.iter().any(|&v| v != 2) {
        return Err(Error::Protocol(format!("site visit counts {visits:?}")));
    }
    let byte_budget = privacy_budget(state.beta.len(), km.len());
    let bytes_sent: Vec<usize> = agents.iter().map(|a| a.bytes_sent).collect();
    if let Some((k, &b)) = bytes_sent.iter().enumerate().find(|(_, &b)| b > byte_budget) {
        return Err(Error::Protocol(format!("site {} sent {b} bytes, budget {byte_budget}", sites[k].name)));
    }
    Ok(FederationOutcome {
        report,
        landmarks: LandmarkGrid::new(shared.landmarks)?,
        km,
        state,
        sites: sites.iter().map(|s| s.name.clone()).collect(),
        visits,
        bytes_sent,
        byte_budget,
    })
}

/// Reads each site directory and runs the federation.
pub fn run_federation_dirs(dirs: &[PathBuf], config: &FederationConfig, mailbox: &Mailbox) -> Result<FederationOutcome> {
    let sites = dirs.iter().map(|d| read_site_dir(d)).collect::<Result<Vec<_>>>()?;
    check_schemas(&sites)?;
    run_federation(&sites, config, mailbox)
}

/// All sites must share covariate names and order.
pub fn check_schemas(sites: &[SiteData]) -> Result<()> {
    if let Some(first) = sites.first() {
        for s in &sites[1..] {
            if s.covariate_names != first.covariate_names {
                return Err(Error::SchemaMismatch(format!(
                    "{} has covariates {:?}, {} has {:?}",
                    s.name, s.covariate_names, first.name, first.covariate_names
                )));
            }
        }
    }
    Ok(())
}

/// Convenience for callers holding a root directory of sites.
pub fn sites_under(root: &Path) -> Result<Vec<SiteData>> {
    let sites = list_site_dirs(root)?.iter().map(|d| read_site_dir(d)).collect::<Result<Vec<_>>>()?;
    check_schemas(&sites)?;
    Ok(sites)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{pooled_pseudo_fit, PseudoMethod};
    use crate::simgen::{generate, site_name, ScenarioConfig};

    fn sites(cfg: &ScenarioConfig) -> Vec<SiteData> {
        generate(cfg)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(k, records)| SiteData { name: site_name(k), covariate_names: vec!["z1".into(), "z2".into()], records })
            .collect()
    }

    #[test]
    fn single_site_matches_pooled_influence_fit() {
        let cfg = ScenarioConfig::ph(0.3, vec![800], 3).unwrap();
        let s = sites(&cfg);
        let fc = FederationConfig::default();
        let out = run_federation(&s, &fc, &Mailbox::Memory).unwrap();
        let spec = DesignSpec::with_names(s[0].covariate_names.clone(), &[]).unwrap();
        let pooled = pooled_pseudo_fit(&s[0].records, &out.landmarks, fc.link, &spec, PseudoMethod::Influence, fc.grid_points).unwrap();
        assert_eq!(out.report.beta, pooled.beta);
        assert_eq!(out.report.covariance, pooled.covariance);
        assert_eq!(out.visits, vec![2]);
    }

    #[test]
    fn directory_mailbox_replays_identically() {
        let cfg = ScenarioConfig::ph(0.3, vec![300, 200, 100], 9).unwrap();
        let s = sites(&cfg);
        let fc = FederationConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let a = run_federation(&s, &fc, &Mailbox::Directory(dir.path().to_path_buf())).unwrap();
        let b = run_federation(&s, &fc, &Mailbox::Memory).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.visits, vec![2, 2, 2]);
        assert!(a.bytes_sent.iter().all(|&n| n <= a.byte_budget));
        assert!(dir.path().join("km_final.json").is_file());
        let files = std::fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(files, 7);
    }

    #[test]
    fn schema_mismatch_between_sites() {
        let cfg = ScenarioConfig::ph(0.3, vec![300, 200], 9).unwrap();
        let mut s = sites(&cfg);
        s[1].covariate_names[1] = "other".into();
        assert!(matches!(check_schemas(&s), Err(Error::SchemaMismatch(_))));
        assert!(matches!(run_federation(&s, &FederationConfig::default(), &Mailbox::Memory), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn landmark_spec_parsing() {
        assert_eq!(LandmarkSpec::parse("1, 5, 3").unwrap(), LandmarkSpec::EquallySpaced { lo: 1.0, hi: 5.0, count: 3 });
        assert!(LandmarkSpec::parse("1,5").is_err());
    }
}
