use fedsurv::benchmark::scenario_sites;
use fedsurv::federation::sitedata::{write_text, DATA_FILE};
use fedsurv::federation::write_site_csv;
use fedsurv::simgen::{hetero_sites, weibull_sites, ScenarioConfig, BALANCED_SITES, SKEWED_SITES};

use crate::{CliError, CliResult, Scenario, SimulateArgs};

pub const MANIFEST_FILE: &str = "manifest.json";

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub(crate) fn parse_sites(spec: &str) -> CliResult<Vec<usize>> {
    match spec {
        "balanced" => Ok(BALANCED_SITES.to_vec()),
        "skewed" => Ok(SKEWED_SITES.to_vec()),
        _ => spec
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|_| usage(format!("bad site size `{s}` in --sites"))))
            .collect(),
    }
}

pub(crate) fn scenario(a: &SimulateArgs) -> CliResult<ScenarioConfig> {
    let sizes = a.sites.as_deref().map(parse_sites).transpose()?;
    if a.scenario != Scenario::Ph && a.event_rate.is_some() {
        return Err(usage("--event-rate applies to --scenario ph only"));
    }
    if a.scenario != Scenario::Hetero && (a.delta.is_some() || a.target_size.is_some()) {
        return Err(usage("--delta and --target-size apply to --scenario hetero only"));
    }
    let cfg = match a.scenario {
        Scenario::Ph => {
            let rate = a.event_rate.unwrap_or(0.3);
            if rate != 0.3 && rate != 0.1 {
                return Err(usage("--event-rate must be 0.3 or 0.1"));
            }
            ScenarioConfig::ph(rate, sizes.unwrap_or_else(|| BALANCED_SITES.to_vec()), a.seed)?
        }
        Scenario::Weibull => ScenarioConfig::weibull_tv(sizes.unwrap_or_else(weibull_sites), a.seed)?,
        Scenario::Hetero => {
            let (Some(delta), Some(target)) = (a.delta, a.target_size) else {
                return Err(usage("--scenario hetero needs --delta and --target-size"));
            };
            ScenarioConfig::hetero(sizes.unwrap_or_else(hetero_sites), target, delta, a.seed)?
        }
    };
    Ok(cfg)
}

pub(crate) fn run(a: &SimulateArgs) -> CliResult<()> {
    let cfg = scenario(a)?;
    let sites = scenario_sites(&cfg)?;
    std::fs::create_dir_all(&a.out).map_err(fedsurv::Error::from)?;
    for site in &sites {
        let dir = a.out.join(&site.name);
        std::fs::create_dir_all(&dir).map_err(fedsurv::Error::from)?;
        write_site_csv(&dir.join(DATA_FILE), &site.covariate_names, &site.records)?;
    }
    let manifest = serde_json::to_string_pretty(&cfg).expect("scenario config serializes");
    write_text(&a.out.join(MANIFEST_FILE), &(manifest + "\n"))?;
    log::info!("wrote {} sites to {}", sites.len(), a.out.display());
    Ok(())
}
