use fedsurv::debias::{debias_site, DebiasConfig, SiteCounts};
use fedsurv::federation::{km_from_message, local_fit, parse_message, sites_under, FederationConfig};
use fedsurv::pseudo::LandmarkGrid;
use fedsurv::Error;

use crate::output::{num, read_fit_csv, write_table, DEBIAS_HEADER, KM_STATE_FILE};
use crate::{CliError, CliResult, DebiasArgs};

pub const DEBIAS_FILE: &str = "debiased.csv";

pub(crate) fn run(a: &DebiasArgs) -> CliResult<()> {
    if !a.global.is_file() {
        return Err(CliError::Usage(format!("global fit {} not found", a.global.display())));
    }
    let rows = read_fit_csv(&a.global)?;
    let model: Vec<_> = rows.iter().filter(|r| r.kind != "effect").collect();
    if !model.iter().any(|r| r.kind == "intercept") {
        return Err(CliError::Usage(format!("{} is not a pseudo-value fit", a.global.display())));
    }
    let columns: Vec<String> = model.iter().map(|r| r.term.clone()).collect();
    let beta_global: Vec<f64> = model.iter().map(|r| r.estimate).collect();
    let mut time_varying: Vec<String> = Vec::new();
    for c in &columns {
        if let Some((name, _)) = c.split_once(':') {
            if !time_varying.iter().any(|t| t == name) {
                time_varying.push(name.to_string());
            }
        }
    }

    let dir = a.global.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(std::path::Path::new("."));
    let state_path = dir.join(KM_STATE_FILE);
    let bytes = std::fs::read(&state_path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", state_path.display())))?;
    let msg = parse_message(&bytes)?;
    let km = km_from_message(&msg)?;
    let landmarks = LandmarkGrid::new(msg.landmarks.clone())?;
    let fit_landmarks: Vec<f64> = model.iter().filter(|r| r.kind == "intercept").filter_map(|r| r.landmark).collect();
    if fit_landmarks != landmarks.times() {
        return Err(Error::SchemaMismatch(format!("{} landmarks differ from {}", state_path.display(), a.global.display())).into());
    }

    let sites = sites_under(&a.sites)?;
    let cfg = FederationConfig { link: a.link, time_varying, ..FederationConfig::default() };
    let debias = DebiasConfig::new(a.c1, a.rule)?;
    let total: usize = sites.iter().map(|s| s.records.len()).sum();
    let out_root = a.out.clone().unwrap_or_else(|| dir.to_path_buf());
    for site in &sites {
        let local = local_fit(site, &km, &landmarks, &cfg)?;
        if local.columns != columns {
            return Err(Error::SchemaMismatch(format!("{} fits columns {:?}, global has {:?}", site.name, local.columns, columns)).into());
        }
        let counts = SiteCounts {
            sites: sites.len(),
            total_subjects: total,
            site_subjects: site.records.len(),
            dimension: site.covariate_names.len(),
        };
        let d = debias_site(&site.name, &beta_global, &local.beta, &local.std_errors, &debias, counts)?;
        let n = site.records.len().to_string();
        let table = (0..columns.len()).map(|i| {
            vec![
                columns[i].clone(),
                num(d.beta_local[i]),
                num(local.std_errors[i]),
                num(d.beta_global[i]),
                num(d.lambda[i]),
                num(d.beta_debiased[i]),
                d.shrunk_mask[i].to_string(),
                n.clone(),
            ]
        });
        write_table(&out_root.join(&site.name).join(DEBIAS_FILE), &DEBIAS_HEADER, table)?;
    }
    Ok(())
}
