//! Acceptance criteria A1 to A8. Each test prints one `A<n> PASS|FAIL` line.

use std::sync::OnceLock;
use std::time::Instant;

use clap::Parser;
use fedsurv::benchmark::{
    figure1, figure2, figure3_cell, figure3_errors, median, scenario_sites, summarize, weibull_landmarks,
    ErrorSummary, Figure1Replicate, Figure3Method, Layout,
};
use fedsurv::debias::{soft_threshold, DebiasConfig};
use fedsurv::federation::{
    parse_message, privacy_budget, run_federation, serialize_message, site_design, FederationConfig, GeePayload,
    Mailbox, Payload, SiteMessage, PROTOCOL_VERSION,
};
use fedsurv::glm::{glm_fit, score_hessian, NewtonConfig};
use fedsurv::linalg::Matrix;
use fedsurv::pseudo::{landmarks_equally_spaced, pseudo_exact};
use fedsurv::renewable::renew_init;
use fedsurv::simgen::{replicate_seed, ScenarioConfig};
use fedsurv::survival::{km_on_grid, km_pooled, quantile_grid};
use fedsurv::Link;
use fedsurv_cli::{read_fit_csv, run, Cli};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

const SEED: u64 = 20_240_601;

fn report(id: &str, pass: bool, detail: String) {
    println!("{id} {}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn fedsurv(args: &[&str]) {
    let mut argv = vec!["fedsurv"];
    argv.extend_from_slice(args);
    run(&Cli::try_parse_from(argv).unwrap()).unwrap();
}

#[test]
fn a1_single_site_exactness() {
    let dir = tempfile::tempdir().unwrap();
    let sites = dir.path().join("sites");
    let s = |p: &std::path::Path| p.to_str().unwrap().to_string();
    fedsurv(&["simulate", "--scenario", "ph", "--seed", "11", "--sites", "1000", "--out", &s(&sites)]);
    let start = Instant::now();
    fedsurv(&["fit", "--sites", &s(&sites), "--mode", "federated", "--out", &s(&dir.path().join("fed"))]);
    let elapsed = start.elapsed();
    fedsurv(&["fit", "--sites", &s(&sites), "--mode", "pooled", "--out", &s(&dir.path().join("pooled"))]);
    let fed = read_fit_csv(&dir.path().join("fed").join("fit.csv")).unwrap();
    let pooled = read_fit_csv(&dir.path().join("pooled").join("fit.csv")).unwrap();
    let same_terms = fed.len() == pooled.len() && fed.iter().zip(&pooled).all(|(a, b)| a.term == b.term && a.kind == b.kind);
    let coef_gap = fed.iter().zip(&pooled).map(|(a, b)| (a.estimate - b.estimate).abs()).fold(0.0, f64::max);

    let cfg = ScenarioConfig::ph(0.3, vec![1000], 11).unwrap();
    let site = &scenario_sites(&cfg).unwrap()[0];
    let landmarks = fedsurv::federation::LandmarkSpec::FromFirstSite { count: 5 }.resolve(site).unwrap();
    let times: Vec<f64> = site.records.iter().map(|r| r.time).collect();
    let km = km_on_grid(&site.records, &quantile_grid(&times, landmarks.times(), 200).unwrap()).unwrap();
    let design = site_design(site, &km, &landmarks, &[]).unwrap();
    let newton = NewtonConfig::default();
    let fit = glm_fit(&design, Link::Cloglog, None, &newton).unwrap();
    let state = renew_init(&design, landmarks.times(), Link::Cloglog, &newton).unwrap();
    let state_gap = fedsurv::linalg::max_abs(
        &state.beta.iter().zip(&fit.beta).map(|(a, b)| a - b).collect::<Vec<_>>(),
    )
    .max(state.info.max_abs_diff(&fit.information))
    .max(state.meat.max_abs_diff(&fit.meat));

    let pass = same_terms && coef_gap <= 1e-10 && state_gap <= f64::EPSILON * 16.0 && elapsed.as_secs_f64() < 1.0;
    report(
        "A1",
        pass,
        format!("max |fed - pooled| = {coef_gap:.3e}, renew_init vs local fit gap = {state_gap:.3e}, federated fit {:.3} s", elapsed.as_secs_f64()),
    );
    assert!(pass);
}

fn figure1_runs() -> &'static Vec<Figure1Replicate> {
    static RUNS: OnceLock<Vec<Figure1Replicate>> = OnceLock::new();
    RUNS.get_or_init(|| figure1(&[0.3, 0.1], &[Layout::Balanced, Layout::Skewed], 100, SEED).unwrap())
}

#[test]
fn a2_proportional_hazards_bias() {
    let runs = figure1_runs();
    let mut pass = true;
    let mut cells = Vec::new();
    for rate in [0.3, 0.1] {
        for layout in [Layout::Balanced, Layout::Skewed] {
            let cell: Vec<_> = runs.iter().filter(|r| r.event_rate == rate && r.layout == layout).collect();
            let fed: Vec<f64> = cell.iter().map(|r| r.fed_treatment - r.truth).collect();
            let cox: Vec<f64> = cell.iter().map(|r| r.cox_treatment - r.truth).collect();
            let (fb, cb) = (summarize(&fed).bias, summarize(&cox).bias);
            let med = median(&cell.iter().map(|r| (r.fed_treatment - r.cox_treatment).abs()).collect::<Vec<_>>());
            let ok = fb.abs() <= 0.02 && (fb - cb).abs() <= 0.02 && med < 0.05;
            pass &= ok && cell.len() == 100;
            cells.push(format!("{rate}/{}: fed {fb:+.4} cox {cb:+.4} median|diff| {med:.4}", layout.name()));
        }
    }
    report("A2", pass, cells.join("; "));
    assert!(pass);
}

#[test]
fn a3_pooled_federated_concordance() {
    let runs = figure1_runs();
    let close = runs
        .iter()
        .filter(|r| {
            r.fed_beta.len() == r.pooled_beta.len()
                && r.fed_beta.iter().zip(&r.pooled_beta).zip(&r.pooled_se).all(|((f, p), se)| (f - p).abs() <= 0.5 * se)
        })
        .count();
    let rate = close as f64 / runs.len() as f64;
    let pass = rate >= 0.95;
    report("A3", pass, format!("{close} of {} replicates within 0.5 pooled SE componentwise ({rate:.3})", runs.len()));
    assert!(pass);
}

#[test]
fn a4_time_varying_trajectory() {
    let reps = figure2(100, SEED, &weibull_landmarks()).unwrap();
    let j = reps[0].landmarks.len();
    let mean: Vec<f64> = (0..j).map(|k| reps.iter().map(|r| r.estimates[k]).sum::<f64>() / reps.len() as f64).collect();
    let truth = &reps[0].truth;
    let within = mean.iter().zip(truth).all(|(m, t)| (m - t).abs() <= 0.10);
    let increasing = mean.windows(2).all(|w| w[1] > w[0]);
    let detail: Vec<String> = reps[0]
        .landmarks
        .iter()
        .zip(mean.iter().zip(truth))
        .map(|(t, (m, tr))| format!("t={t}: {m:.3} vs {tr:.3}"))
        .collect();
    let pass = j == 5 && within && increasing;
    report("A4", pass, format!("{} (increasing: {increasing})", detail.join(", ")));
    assert!(pass);
}

#[test]
fn a5_heterogeneity_debiasing() {
    let debias = DebiasConfig::default();
    let sizes = [50usize, 100, 500];
    let deltas = [0.05, 0.5];
    let cell = |size: usize, delta: f64| -> [ErrorSummary; 3] {
        let (rows, skipped) = figure3_cell(size, delta, 200, SEED, &debias).unwrap();
        if skipped > 0 {
            println!("  target {size}, delta {delta}: {skipped} replicates skipped");
        }
        Figure3Method::ALL.map(|m| summarize(&figure3_errors(&rows, m)))
    };
    let mut table = Vec::new();
    for &size in &sizes {
        for &delta in &deltas {
            table.push((size, delta, cell(size, delta)));
        }
    }
    let get = |size: usize, delta: f64| table.iter().find(|c| c.0 == size && c.1 == delta).unwrap().2;
    let [g, l, d] = [0, 1, 2];

    let bias_ok = sizes.iter().all(|&n| {
        let (lo, hi) = (get(n, 0.05), get(n, 0.5));
        hi[g].bias.abs() > lo[g].bias.abs() && hi[g].bias.abs() > hi[d].bias.abs()
    });
    let var_ok = [50usize, 100].iter().all(|&n| deltas.iter().all(|&dl| get(n, dl)[d].variance < get(n, dl)[l].variance));
    let mse_ok = table.iter().all(|(_, _, s)| s[d].mse <= 1.1 * s[g].mse.min(s[l].mse));
    for (n, dl, s) in &table {
        println!(
            "  n={n} delta={dl}: bias g/l/d {:+.3}/{:+.3}/{:+.3} var {:.4}/{:.4}/{:.4} mse {:.4}/{:.4}/{:.4}",
            s[g].bias, s[l].bias, s[d].bias, s[g].variance, s[l].variance, s[d].variance, s[g].mse, s[l].mse, s[d].mse
        );
    }
    let pass = bias_ok && var_ok && mse_ok;
    report("A5", pass, format!("(i) bias ordering {bias_ok}, (ii) variance {var_ok}, (iii) mse {mse_ok}"));
    assert!(pass);
}

fn km_gap(sites: &[fedsurv::federation::SiteData]) -> f64 {
    let out = run_federation(sites, &FederationConfig::default(), &Mailbox::Memory).unwrap();
    let all: Vec<_> = sites.iter().flat_map(|s| s.records.iter().cloned()).collect();
    let pooled = km_pooled(&all, &[]).unwrap();
    out.km.grid.iter().zip(&out.km.survival).map(|(&t, &s)| (s - pooled.survival_at(t)).abs()).fold(0.0, f64::max)
}

#[test]
fn a6_distributed_km_accuracy() {
    let gaps: Vec<f64> = (0..50)
        .map(|rep| {
            let cfg = ScenarioConfig::ph(0.3, vec![500; 4], replicate_seed(SEED, 6_000 + rep)).unwrap();
            km_gap(&scenario_sites(&cfg).unwrap())
        })
        .collect();
    let ok = gaps.iter().filter(|&&g| g < 0.02).count();
    let single = km_gap(&scenario_sites(&ScenarioConfig::ph(0.3, vec![2000], SEED).unwrap()).unwrap());
    let pass = ok as f64 >= 0.95 * gaps.len() as f64 && single == 0.0;
    report(
        "A6",
        pass,
        format!("{ok} of 50 gaps < 0.02 (median {:.4}, max {:.4}); single-site gap {single:e}", median(&gaps), gaps.iter().cloned().fold(0.0, f64::max)),
    );
    assert!(pass);
}

#[test]
fn a7_sandwich_coverage() {
    let z = 1.959_963_984_540_054;
    let mut covered = 0;
    for rep in 0..200 {
        let cfg = ScenarioConfig::ph(0.3, vec![500; 4], replicate_seed(SEED, 7_000 + rep)).unwrap();
        let out = run_federation(&scenario_sites(&cfg).unwrap(), &FederationConfig::default(), &Mailbox::Memory).unwrap();
        let (b, se) = out.report.coefficient("trt").unwrap();
        if (b - cfg.beta_t).abs() <= z * se {
            covered += 1;
        }
    }
    let rate = covered as f64 / 200.0;
    let pass = (0.92..=0.98).contains(&rate);
    report("A7", pass, format!("95% Wald coverage {rate:.3} ({covered} of 200)"));
    assert!(pass);
}

fn check(name: &str, failures: &mut Vec<String>, result: Result<(), proptest::test_runner::TestError<impl std::fmt::Debug>>) {
    if let Err(e) = result {
        failures.push(format!("{name}: {e}"));
    }
}

#[test]
fn a8_algebraic_properties() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut runner = TestRunner::new(Config { cases: 512, ..Config::default() });

    let r = runner.run(&(-10.0f64..10.0, 0.0f64..5.0, -10.0f64..10.0), |(x, lam, y)| {
        let sx = soft_threshold(x, lam).unwrap();
        let sy = soft_threshold(y, lam).unwrap();
        let ulp = 4.0 * f64::EPSILON * x.abs().max(y.abs());
        prop_assert!((sx - sy).abs() <= (x - y).abs() + ulp);
        prop_assert!(sx == 0.0 || sx.signum() == x.signum());
        prop_assert!(sx.abs() <= x.abs());
        prop_assert_eq!(sx, x.signum() * (x.abs() - lam).max(0.0));
        Ok(())
    });
    check("soft threshold", &mut failures, r);

    // The identity holds on the observed range; past the largest time a
    // leave-one-out curve can fall back to S = 1.
    let r = runner.run(&(proptest::collection::vec((0.1f64..10.0, any::<bool>()), 3..40), 0.05f64..0.95), |(data, frac)| {
        let records: Vec<_> = data
            .iter()
            .enumerate()
            .map(|(i, &(t, e))| fedsurv::survival::SubjectRecord::new(i.to_string(), "s", (t * 4.0).round() / 4.0, e, vec![]))
            .collect();
        let max = records.iter().map(|r| r.time).fold(0.0, f64::max);
        prop_assume!(max > 0.0);
        let grid = landmarks_equally_spaced(frac * max / 4.0, frac * max, 4).unwrap();
        let ps = pseudo_exact(&records, &grid).unwrap();
        let km = km_pooled(&records, grid.times()).unwrap();
        for (j, &t) in grid.times().iter().enumerate() {
            let mean = ps.iter().filter(|p| p.landmark_index == j).map(|p| p.value).sum::<f64>() / records.len() as f64;
            prop_assert!((mean - km.survival_at(t)).abs() < 1e-12, "t {} mean {} km {}", t, mean, km.survival_at(t));
        }
        Ok(())
    });
    check("jackknife mean", &mut failures, r);

    let r = runner.run(&(-8.0f64..3.0), |eta| {
        for link in [Link::Identity, Link::Logit, Link::Cloglog] {
            let back = link.link(link.inverse(eta));
            prop_assert!((back - eta).abs() <= 1e-9 * eta.abs().max(1.0), "{} {} {}", link, eta, back);
        }
        Ok(())
    });
    check("link round trip", &mut failures, r);

    let cfg = ScenarioConfig::ph(0.3, vec![300], 8).unwrap();
    let site = &scenario_sites(&cfg).unwrap()[0];
    let landmarks = landmarks_equally_spaced(2.0, 12.0, 3).unwrap();
    let times: Vec<f64> = site.records.iter().map(|r| r.time).collect();
    let km = km_on_grid(&site.records, &quantile_grid(&times, landmarks.times(), 100).unwrap()).unwrap();
    let design = site_design(site, &km, &landmarks, &["trt".to_string()]).unwrap();
    let p = design.width();
    let beta: Vec<f64> = (0..p).map(|k| if k < 3 { -1.0 + 0.3 * k as f64 } else { 0.1 }).collect();
    for link in [Link::Identity, Link::Logit, Link::Cloglog] {
        let (_, h) = score_hessian(&design, link, &beta).unwrap();
        let sign = link.orientation::<f64>();
        let step = 1e-6;
        for k in 0..p {
            let (mut up, mut dn) = (beta.clone(), beta.clone());
            up[k] += step;
            dn[k] -= step;
            let (su, _) = score_hessian(&design, link, &up).unwrap();
            let (sd, _) = score_hessian(&design, link, &dn).unwrap();
            for a in 0..p {
                let jac = -sign * (su[a] - sd[a]) / (2.0 * step);
                if (jac - h[(a, k)]).abs() > 1e-4 * h[(a, k)].abs().max(1.0) {
                    failures.push(format!("hessian {link} ({a},{k}): {jac} vs {}", h[(a, k)]));
                }
            }
        }
    }

    let r = runner.run(&(1usize..8, proptest::collection::vec(-1e300f64..1e300, 1..300), 0usize..10_000_000), |(p, grid, n)| {
        let mut info = Matrix::identity(p);
        for i in 0..p {
            for j in 0..p {
                info[(i, j)] += 1.0 / (1.0 + (i + j) as f64);
            }
        }
        let msg = SiteMessage {
            protocol_version: PROTOCOL_VERSION.into(),
            sender: "site_01".into(),
            grid: grid.clone(),
            landmarks: vec![grid[0]],
            n_cum: n,
            payload: Payload::Gee(GeePayload {
                link: Link::Cloglog,
                sites_processed: 1,
                beta: grid.iter().cycle().take(p).cloned().collect(),
                meat: info.scale(1.0 / 3.0),
                info,
                schema: (0..p).map(|i| format!("c{i}")).collect(),
            }),
        };
        let bytes = serialize_message(&msg).unwrap();
        prop_assert_eq!(&parse_message(&bytes).unwrap(), &msg);
        prop_assert!(bytes.len() <= privacy_budget(p, grid.len()));
        Ok(())
    });
    check("message round trip and size", &mut failures, r);

    let elapsed = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && elapsed < 30.0;
    report("A8", pass, if failures.is_empty() { format!("all property suites hold ({elapsed:.2} s)") } else { failures.join("; ") });
    assert!(pass);
}
