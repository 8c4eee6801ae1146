use std::fs;
use std::path::{Path, PathBuf};

use dronesense::harness::cli::cli_main;
use dronesense::harness::scenarios::{parse_experiment, scenario, SCENARIOS};
use dronesense::harness::{
    emit_csv, read_csv, run_experiment, Estimator, HarnessError, MonteCarloReport, SweepVariable, COLUMNS,
};
use dronesense::scene::{GainPhaseModel, NoiseModel};
use proptest::prelude::*;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["dronesense"];
    argv.extend_from_slice(args);
    cli_main(argv)
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    out.sort();
    out
}

#[test]
fn empty_report_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    let report = MonteCarloReport {
        name: "empty".into(),
        sweep_variable: SweepVariable::SnrDb,
        estimator: Estimator::Mle,
        base_seed: 1,
        points: Vec::new(),
    };
    emit_csv(&report, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("# dronesense-report v1 series=empty"));
    assert_eq!(lines[1], COLUMNS.join(","));
    assert!(read_csv(&path).unwrap().is_empty());
}

#[test]
fn empty_sweep_is_rejected_before_running() {
    let mut spec = scenario("fig2").unwrap().remove(0);
    spec.sweep.values.clear();
    assert!(matches!(run_experiment(&spec), Err(HarnessError::Invalid(_))));
}

#[test]
fn noiseless_ideal_single_trial_is_exact() {
    let mut spec = scenario("fig2").unwrap().remove(0);
    spec.defects = GainPhaseModel::Ideal;
    spec.noise = NoiseModel::Variance(0.0);
    spec.sweep.variable = SweepVariable::Pilots;
    spec.sweep.values = vec![10.0];
    spec.trials = 1;
    spec.overlays = false;
    let report = run_experiment(&spec).unwrap();
    let row = report.rows()[0];
    assert_eq!(row.failures, 0);
    assert!(row.rmse_phi_deg < 1e-9 && row.rmse_theta_deg < 1e-9 && row.rmse_fd_hz < 1e-6, "{row:?}");
    assert_eq!(row.ser, 0.0);
}

#[test]
fn report_round_trips_through_csv() {
    let mut spec = scenario("fig7").unwrap().remove(0);
    spec.trials = 4;
    let report = run_experiment(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fig7.csv");
    emit_csv(&report, &path).unwrap();
    let back = read_csv(&path).unwrap();
    assert_eq!(back.len(), report.points.len());
    for (a, b) in back.iter().zip(report.rows()) {
        assert!(a.same_as(&b), "{a:?} vs {b:?}");
    }
}

#[test]
fn fig3_emits_four_series_with_matching_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(cli(&["run", "fig3", "--trials", "1", "--out", out]), 0);
    let files = csv_files(dir.path());
    let names: Vec<String> = files.iter().map(|p| p.file_stem().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["fig3_large-gain", "fig3_large-phase", "fig3_small-gain", "fig3_small-phase"]);
    for f in &files {
        assert_eq!(read_csv(f).unwrap().len(), 5, "{}", f.display());
    }
}

#[test]
fn same_seed_gives_identical_csvs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert_eq!(cli(&["run", "fig2", "--trials", "100", "--seed", "7", "--out", d.path().to_str().unwrap()]), 0);
    }
    let read = |d: &Path| fs::read(d.join("fig2.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn exit_codes() {
    assert_eq!(cli(&["list"]), 0);
    assert_eq!(cli(&["--help"]), 0);
    assert_eq!(cli(&["run", "fig22"]), 1);
    assert_eq!(cli(&["run", "fig2", "--trails", "3"]), 1);
    assert_eq!(cli(&["run", "fig2", "--trials", "0"]), 1);
    assert_eq!(cli(&["run", "fig2", "--workers", "0"]), 1);
    assert_eq!(cli(&["frobnicate"]), 1);
    assert_eq!(cli(&[]), 1);
}

#[test]
fn unreachable_output_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"").unwrap();
    let out = blocker.join("sub");
    assert_eq!(cli(&["run", "fig6", "--trials", "1", "--out", out.to_str().unwrap()]), 2);
}

#[test]
fn crlb_writes_analytic_tables() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["crlb", "fig5", "--out", dir.path().to_str().unwrap()]), 0);
    let files = csv_files(dir.path());
    assert_eq!(files.len(), 3);
    let rows = read_csv(&dir.path().join("fig5_mle_analytic.csv")).unwrap();
    assert!(rows.iter().all(|r| r.trials == 0 && r.crlb_phi_deg > 0.0 && r.sdr_analytic_2nd > 0.0));
}

#[test]
fn near_miss_scenario_names_get_a_suggestion() {
    match scenario("fig33") {
        Err(HarnessError::UnknownScenario { hint, .. }) => assert!(hint.contains("fig3"), "{hint}"),
        other => panic!("{other:?}"),
    }
    assert_eq!(SCENARIOS.len(), 8);
}

#[test]
fn example_configs_reproduce_their_scenarios() {
    let mut seen = 0;
    for (name, _) in SCENARIOS {
        let path = configs_dir().join(format!("{name}.toml"));
        let mut parsed = parse_experiment(&fs::read_to_string(&path).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let registered = scenario(name)
            .unwrap()
            .into_iter()
            .find(|s| s.name == parsed.name)
            .unwrap_or_else(|| panic!("{} names no series of {name}", path.display()));
        if parsed.sweep.variable == SweepVariable::SnrDb {
            // the sweep overrides the base noise level
            parsed.noise = registered.noise;
        }
        assert_eq!(parsed, registered, "{}", path.display());
        seen += 1;
    }
    assert_eq!(seen, 8);
}

#[test]
fn config_errors_are_reported() {
    let good = fs::read_to_string(configs_dir().join("fig7.toml")).unwrap();
    let cases = [
        (good.replace("estimator = \"mle\"", "estimator = \"mlx\""), "mlx"),
        (good.replace("sweep = \"snr_db\"", "sweep = \"snr\""), "snr"),
        (good.replace("[experiment]", "[experiment]\ncolour = 1"), "colour"),
        (good.replace("values = [0.0, 5.0, 10.0, 15.0, 20.0]", "values = []"), "no values"),
        (good.replace("[experiment]", "[other]"), "other"),
        (good[..good.find("[experiment]").unwrap()].to_string(), "no [experiment]"),
    ];
    for (text, needle) in cases {
        let e = parse_experiment(&text).unwrap_err().to_string();
        assert!(e.contains(needle), "{needle}: {e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn rmse_and_rates_are_nonnegative(seed in any::<u32>(), snr in -5.0f64..20.0) {
        let mut spec = scenario("fig7").unwrap().remove(0);
        spec.trials = 2;
        spec.base_seed = seed as u64;
        spec.sweep.values = vec![snr];
        let row = run_experiment(&spec).unwrap().rows()[0];
        for v in [row.rmse_phi_deg, row.rmse_theta_deg, row.rmse_fd_hz, row.sdr_empirical, row.ci_ser] {
            prop_assert!(v >= 0.0, "{row:?}");
        }
        prop_assert!((0.0..=1.0).contains(&row.ser));
    }
}
