use std::path::Path;

use fedsurv::baselines::{cox_fit, pooled_pseudo_fit};
use fedsurv::federation::sitedata::write_text;
use fedsurv::federation::{
    km_message, run_federation, serialize_message, sites_under, FederationConfig, LandmarkSpec, Mailbox, SiteData,
    DEFAULT_LANDMARKS,
};
use fedsurv::pseudo::{DesignSpec, LandmarkGrid};
use fedsurv::renewable::{two_sided_p, FitReport};
use fedsurv::survival::{km_on_grid, quantile_grid, KmState, SubjectRecord};

use crate::output::{write_km, write_table, FitRow, FIT_HEADER, KM_STATE_FILE};
use crate::{CliResult, FitArgs, FitMode};

pub const FIT_FILE: &str = "fit.csv";
pub const KM_FILE: &str = "km.csv";

/// Splits a design column name into its row kind and 0-based landmark index.
pub(crate) fn classify(column: &str) -> (&'static str, Option<usize>) {
    let landmark = |s: &str| s.strip_prefix("landmark_").and_then(|j| j.parse::<usize>().ok()).map(|j| j - 1);
    if let Some((_, suffix)) = column.split_once(':') {
        ("interaction", landmark(suffix))
    } else if let Some(j) = landmark(column) {
        ("intercept", Some(j))
    } else {
        ("coefficient", None)
    }
}

pub(crate) fn report_rows(report: &FitReport<f64>, landmarks: &[f64]) -> Vec<FitRow> {
    let mut rows: Vec<FitRow> = report
        .columns
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let (kind, j) = classify(c);
            FitRow {
                term: c.clone(),
                kind: kind.into(),
                landmark_index: j,
                landmark: j.map(|j| landmarks[j]),
                estimate: report.beta[i],
                std_error: report.std_errors[i],
                z: report.wald_z[i],
                p: report.p_values[i],
            }
        })
        .collect();
    rows.extend(report.effective.iter().map(|e| {
        let z = e.estimate / e.std_error;
        FitRow {
            term: e.covariate.clone(),
            kind: "effect".into(),
            landmark_index: Some(e.landmark_index),
            landmark: e.landmark.or(Some(landmarks[e.landmark_index])),
            estimate: e.estimate,
            std_error: e.std_error,
            z,
            p: two_sided_p(z),
        }
    }));
    rows
}

fn pooled_km(records: &[SubjectRecord<f64>], landmarks: &LandmarkGrid<f64>, points: usize) -> CliResult<KmState<f64>> {
    let times: Vec<f64> = records.iter().map(|r| r.time).collect();
    let grid = quantile_grid(&times, landmarks.times(), points)?;
    Ok(km_on_grid(records, &grid)?)
}

fn write_km_state(dir: &Path, km: &KmState<f64>, landmarks: &LandmarkGrid<f64>) -> CliResult<()> {
    let bytes = serialize_message(&km_message("global", km, landmarks))?;
    write_text(&dir.join(KM_STATE_FILE), &String::from_utf8(bytes).expect("messages are UTF-8"))?;
    Ok(())
}

pub(crate) fn config(a: &FitArgs) -> CliResult<FederationConfig> {
    let landmarks = match &a.landmarks {
        Some(s) => LandmarkSpec::parse(s)?,
        None => LandmarkSpec::FromFirstSite { count: DEFAULT_LANDMARKS },
    };
    Ok(FederationConfig {
        link: a.link,
        landmarks,
        grid_points: a.grid_points,
        time_varying: a.time_varying.clone(),
        ..FederationConfig::default()
    })
}

fn all_records(sites: &[SiteData]) -> Vec<SubjectRecord<f64>> {
    sites.iter().flat_map(|s| s.records.iter().cloned()).collect()
}

pub(crate) fn run(a: &FitArgs) -> CliResult<()> {
    let sites = sites_under(&a.sites)?;
    let cfg = config(a)?;
    let (rows, km, landmarks) = match a.mode {
        FitMode::Federated => {
            let mailbox = match &a.mailbox {
                Some(dir) => {
                    std::fs::create_dir_all(dir).map_err(fedsurv::Error::from)?;
                    Mailbox::Directory(dir.clone())
                }
                None => Mailbox::Memory,
            };
            let out = run_federation(&sites, &cfg, &mailbox)?;
            log::info!("sites sent {:?} bytes (budget {})", out.bytes_sent, out.byte_budget);
            (report_rows(&out.report, out.landmarks.times()), out.km, Some(out.landmarks))
        }
        FitMode::Pooled => {
            let landmarks = cfg.landmarks.resolve(&sites[0])?;
            let records = all_records(&sites);
            let spec = DesignSpec::with_names(sites[0].covariate_names.clone(), &cfg.time_varying)?;
            let report = pooled_pseudo_fit(&records, &landmarks, cfg.link, &spec, a.pseudo, cfg.grid_points)?;
            let km = pooled_km(&records, &landmarks, cfg.grid_points)?;
            (report_rows(&report, landmarks.times()), km, Some(landmarks))
        }
        FitMode::Cox => {
            let records = all_records(&sites);
            let fit = cox_fit(&records)?;
            let rows = fit
                .columns
                .iter()
                .enumerate()
                .map(|(i, &k)| {
                    let se = fit.covariance[(i, i)].sqrt();
                    let z = fit.beta[i] / se;
                    FitRow {
                        term: sites[0].covariate_names[k].clone(),
                        kind: "coefficient".into(),
                        landmark_index: None,
                        landmark: None,
                        estimate: fit.beta[i],
                        std_error: se,
                        z,
                        p: two_sided_p(z),
                    }
                })
                .collect();
            let landmarks = cfg.landmarks.resolve(&sites[0])?;
            (rows, pooled_km(&records, &landmarks, cfg.grid_points)?, None)
        }
    };
    std::fs::create_dir_all(&a.out).map_err(fedsurv::Error::from)?;
    write_table(&a.out.join(FIT_FILE), &FIT_HEADER, rows.iter().map(FitRow::record))?;
    write_km(&a.out.join(KM_FILE), &km)?;
    if let Some(landmarks) = landmarks {
        write_km_state(&a.out, &km, &landmarks)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_kinds() {
        assert_eq!(classify("landmark_1"), ("intercept", Some(0)));
        assert_eq!(classify("trt:landmark_3"), ("interaction", Some(2)));
        assert_eq!(classify("x"), ("coefficient", None));
        assert_eq!(classify("landmark_x"), ("coefficient", None));
    }
}
