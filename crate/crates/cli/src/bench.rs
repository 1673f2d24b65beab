use std::path::{Path, PathBuf};

use fedsurv::benchmark::{
    figure1, figure2, figure3_cell, figure3_errors, summarize, weibull_landmarks, ErrorSummary, Figure3Method, Layout,
};
use fedsurv::debias::DebiasConfig;

use crate::output::{num, write_table};
use crate::{BenchmarkArgs, CliError, CliResult};

pub const FIG1_HEADER: [&str; 6] = ["rep", "event_rate", "layout", "method", "estimate", "bias_T"];
pub const FIG1_SUMMARY_HEADER: [&str; 7] = ["event_rate", "layout", "method", "n", "bias", "variance", "mse"];
pub const FIG2_HEADER: [&str; 7] = ["landmark_index", "landmark", "mean_estimate", "true_cloglog_coeff", "bias", "variance", "mse"];
pub const FIG2_REPLICATE_HEADER: [&str; 6] = ["rep", "landmark_index", "landmark", "estimate", "std_error", "true_cloglog_coeff"];
pub const FIG3_HEADER: [&str; 7] = ["delta", "target_size", "method", "n", "bias", "variance", "mse"];
pub const FIG3_REPLICATE_HEADER: [&str; 7] = ["rep", "delta", "target_size", "method", "estimate", "truth", "error"];

/// `<dir>/<stem>_<suffix>.csv` next to `out`.
pub(crate) fn companion(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "benchmark".into());
    out.with_file_name(format!("{stem}_{suffix}.csv"))
}

fn summary_cells(s: &ErrorSummary) -> [String; 4] {
    [s.n.to_string(), num(s.bias), num(s.variance), num(s.mse)]
}

pub(crate) fn run(a: &BenchmarkArgs) -> CliResult<()> {
    if a.reps == 0 {
        return Err(CliError::Usage("--reps must be positive".into()));
    }
    match a.figure {
        1 => fig1(a),
        2 => fig2(a),
        _ => fig3(a),
    }
}

fn fig1(a: &BenchmarkArgs) -> CliResult<()> {
    let layouts = [Layout::Balanced, Layout::Skewed];
    let reps = figure1(&a.event_rates, &layouts, a.reps, a.seed)?;
    let methods = ["pooled_cox", "fed_pseudo"];
    let estimate = |r: &fedsurv::benchmark::Figure1Replicate, m: &str| if m == "pooled_cox" { r.cox_treatment } else { r.fed_treatment };
    let rows = reps.iter().flat_map(|r| {
        methods.iter().map(move |&m| {
            let e = estimate(r, m);
            vec![r.rep.to_string(), num(r.event_rate), r.layout.name().into(), m.into(), num(e), num(e - r.truth)]
        })
    });
    write_table(&a.out, &FIG1_HEADER, rows)?;

    let mut summary = Vec::new();
    for &rate in &a.event_rates {
        for layout in layouts {
            let cell: Vec<_> = reps.iter().filter(|r| r.event_rate == rate && r.layout == layout).collect();
            for m in methods {
                let errors: Vec<f64> = cell.iter().map(|r| estimate(r, m) - r.truth).collect();
                let mut row = vec![num(rate), layout.name().into(), m.into()];
                row.extend(summary_cells(&summarize(&errors)));
                summary.push(row);
            }
        }
    }
    write_table(&companion(&a.out, "summary"), &FIG1_SUMMARY_HEADER, summary)
}

fn fig2(a: &BenchmarkArgs) -> CliResult<()> {
    let reps = figure2(a.reps, a.seed, &weibull_landmarks())?;
    let first = &reps[0];
    let rows = (0..first.landmarks.len()).map(|j| {
        let errors: Vec<f64> = reps.iter().map(|r| r.estimates[j] - r.truth[j]).collect();
        let s = summarize(&errors);
        let mean = reps.iter().map(|r| r.estimates[j]).sum::<f64>() / reps.len() as f64;
        vec![j.to_string(), num(first.landmarks[j]), num(mean), num(first.truth[j]), num(s.bias), num(s.variance), num(s.mse)]
    });
    write_table(&a.out, &FIG2_HEADER, rows)?;
    let per_rep = reps.iter().flat_map(|r| {
        (0..r.landmarks.len()).map(move |j| {
            vec![r.rep.to_string(), j.to_string(), num(r.landmarks[j]), num(r.estimates[j]), num(r.std_errors[j]), num(r.truth[j])]
        })
    });
    write_table(&companion(&a.out, "replicates"), &FIG2_REPLICATE_HEADER, per_rep)
}

fn fig3(a: &BenchmarkArgs) -> CliResult<()> {
    let debias = DebiasConfig::new(a.c1, a.rule)?;
    let mut summary = Vec::new();
    let mut per_rep = Vec::new();
    for &size in &a.target_sizes {
        for &delta in &a.deltas {
            let (rows, skipped) = figure3_cell(size, delta, a.reps, a.seed, &debias)?;
            if skipped > 0 {
                log::warn!("target size {size}, delta {delta}: {skipped} replicates skipped");
            }
            for m in Figure3Method::ALL {
                let mut row = vec![num(delta), size.to_string(), m.name().into()];
                row.extend(summary_cells(&summarize(&figure3_errors(&rows, m))));
                summary.push(row);
            }
            for r in &rows {
                for m in Figure3Method::ALL {
                    let e = r.estimate(m);
                    per_rep.push(vec![
                        r.rep.to_string(),
                        num(delta),
                        size.to_string(),
                        m.name().into(),
                        num(e),
                        num(r.truth),
                        num(e - r.truth),
                    ]);
                }
            }
        }
    }
    write_table(&a.out, &FIG3_HEADER, summary)?;
    write_table(&companion(&a.out, "replicates"), &FIG3_REPLICATE_HEADER, per_rep)
}
