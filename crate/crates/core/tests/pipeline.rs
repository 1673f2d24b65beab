use fedsurv::baselines::{pooled_pseudo_fit, PseudoMethod};
use fedsurv::benchmark::scenario_sites;
use fedsurv::federation::sitedata::DATA_FILE;
use fedsurv::federation::{
    parse_message, privacy_budget, run_federation, run_federation_dirs, write_site_csv, FederationConfig, LandmarkSpec,
    Mailbox, Payload,
};
use fedsurv::pseudo::{landmarks_equally_spaced, DesignSpec};
use fedsurv::simgen::ScenarioConfig;
use fedsurv::survival::SubjectRecord;
use fedsurv::Link;

#[test]
fn csv_sites_and_directory_mailbox_reproduce_the_memory_run() {
    let cfg = ScenarioConfig::ph(0.3, vec![400, 250, 150], 21).unwrap();
    let sites = scenario_sites(&cfg).unwrap();
    let root = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for s in &sites {
        let d = root.path().join(&s.name);
        std::fs::create_dir_all(&d).unwrap();
        write_site_csv(&d.join(DATA_FILE), &s.covariate_names, &s.records).unwrap();
        dirs.push(d);
    }
    let fc = FederationConfig {
        landmarks: LandmarkSpec::EquallySpaced { lo: 2.0, hi: 14.0, count: 4 },
        time_varying: vec!["trt".into()],
        ..FederationConfig::default()
    };
    let mem = run_federation(&sites, &fc, &Mailbox::Memory).unwrap();
    let mail = root.path().join("mail");
    let disk = run_federation_dirs(&dirs, &fc, &Mailbox::Directory(mail.clone())).unwrap();
    assert_eq!(mem.report, disk.report);
    assert_eq!(mem.visits, vec![2, 2, 2]);

    let mut names: Vec<String> = std::fs::read_dir(&mail).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names.len(), 2 * sites.len() + 1);
    let p = mem.report.beta.len();
    for n in &names {
        let bytes = std::fs::read(mail.join(n)).unwrap();
        let msg = parse_message(&bytes).unwrap();
        assert!(bytes.len() <= privacy_budget(p, msg.grid.len()), "{n}");
        match msg.payload {
            Payload::Km(_) => assert!(n.contains("km")),
            Payload::Gee(g) => assert_eq!(g.schema, mem.report.columns),
        }
    }
    assert_eq!(mem.report.effective_for("trt").len(), 4);
}

#[test]
fn f32_pooled_fit_tracks_f64() {
    let cfg = ScenarioConfig::ph(0.3, vec![1500], 22).unwrap();
    let site = &scenario_sites(&cfg).unwrap()[0];
    let spec = DesignSpec::with_names(site.covariate_names.clone(), &[]).unwrap();
    let grid64 = landmarks_equally_spaced(2.0, 12.0, 3).unwrap();
    let grid32 = landmarks_equally_spaced(2.0f32, 12.0, 3).unwrap();
    let recs32: Vec<SubjectRecord<f32>> = site
        .records
        .iter()
        .map(|r| SubjectRecord::new(r.subject_id.clone(), r.site_id.clone(), r.time as f32, r.event, r.covariates.iter().map(|&c| c as f32).collect()))
        .collect();
    let f64_fit = pooled_pseudo_fit(&site.records, &grid64, Link::Cloglog, &spec, PseudoMethod::Exact, 200).unwrap();
    let f32_fit = pooled_pseudo_fit(&recs32, &grid32, Link::Cloglog, &spec, PseudoMethod::Exact, 200).unwrap();
    for (a, b) in f64_fit.beta.iter().zip(&f32_fit.beta) {
        assert!((a - *b as f64).abs() < 5e-3, "{a} vs {b}");
    }
}
