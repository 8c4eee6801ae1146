//! Property tests over randomly drawn scenes and parameters.

use std::collections::HashSet;
use std::f64::consts::PI;

use dronesense::analytics::{fim, sdr_predict, EstimatorSpread, RateMethod};
use dronesense::harness::{emit_csv, read_csv, trial_seed, Estimator, MonteCarloReport, PointReport, ReportRow, SweepVariable};
use dronesense::locate::{
    aoml_estimate, build_moments, music_estimate, objective, GridSpec, ModelContext, ParamVector, SolverConfig, Weighting,
};
use dronesense::scene::{
    steering_vector, synthesize_frame, ArrayConfig, DroneTruth, FrameConfig, GainPhaseModel, NoiseModel, SceneConfig,
};
use dronesense::specfun::{rician_moment, vonmises_char, SeriesPolicy};
use dronesense::C64;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn angle() -> impl Strategy<Value = f64> {
    5.0f64..85.0
}

fn drone() -> impl Strategy<Value = DroneTruth> {
    (angle(), angle(), 0.0f64..9000.0).prop_map(|(p, t, f)| DroneTruth::from_degrees(p, t, f))
}

/// Drones at least 8° apart in azimuth, so the scene is well resolved.
fn separated(k: usize) -> impl Strategy<Value = Vec<DroneTruth>> {
    prop::collection::vec(drone(), k).prop_filter("drones too close", |ds| {
        ds.iter()
            .enumerate()
            .all(|(i, a)| ds[i + 1..].iter().all(|b| (a.azimuth_rad - b.azimuth_rad).abs() > 8f64.to_radians()))
    })
}

fn defects() -> impl Strategy<Value = GainPhaseModel> {
    prop_oneof![
        Just(GainPhaseModel::Ideal),
        (0.3f64..1.5, 0.05f64..0.5, 2.0f64..200.0).prop_map(|(n, s, k)| GainPhaseModel::stochastic(n, s, k)),
    ]
}

fn coarse_grid() -> GridSpec {
    GridSpec {
        azimuth_step: 2f64.to_radians(),
        elevation_step: 2f64.to_radians(),
        refine_levels: 2,
        ..GridSpec::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn noiseless_ideal_frame_inverts_to_the_symbols(ds in separated(2), m in 3usize..6, seed in any::<u64>()) {
        let scene = SceneConfig::new(ArrayConfig::half_wavelength(m, m), ds).unwrap();
        let frame = FrameConfig { subframes: 2, symbols_per_subframe: 6, ..FrameConfig::default() };
        let rx = synthesize_frame(&scene, &frame, &GainPhaseModel::Ideal, &NoiseModel::Variance(0.0), seed).unwrap();
        for l in 0..2 {
            let h = rx.realization.effective_channel(l, &rx.powers);
            let pinv = h.clone().pseudo_inverse(1e-12).unwrap();
            for t in 0..6 {
                let s = &pinv * rx.samples[l].column(t + 1);
                for k in 0..2 {
                    let want = frame.modulation.symbol(rx.symbols[l][(k, t)]);
                    prop_assert!((s[k] - want).norm() < 1e-9, "l={l} t={t} k={k}: {} vs {want}", s[k]);
                }
            }
        }
    }

    #[test]
    fn distinct_steering_vectors_have_full_rank(k in 1usize..5, m in 2usize..5, seed in any::<u64>()) {
        prop_assume!(k <= m * m);
        let array = ArrayConfig::half_wavelength(m, m);
        let mut a = DMatrix::from_element(m * m, k, C64::new(0.0, 0.0));
        let mut rng = seed;
        for c in 0..k {
            // distinct azimuths on a 7° spacing, elevations from the seed
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let el = 10.0 + (rng >> 40) as f64 / (1u64 << 24) as f64 * 70.0;
            a.set_column(c, &steering_vector(&array, (10.0 + 7.0 * c as f64).to_radians(), el.to_radians()));
        }
        let sv = a.svd(false, false).singular_values;
        prop_assert!(sv.iter().all(|&s| s > 1e-8), "{sv:?}");
    }

    #[test]
    fn rician_moment_is_nondecreasing_in_nu(c in 1u32..5, sigma in 0.05f64..1.0, nu in 0.0f64..1.5, dnu in 0.001f64..0.5) {
        let p = SeriesPolicy::default().with_max_terms(5000);
        let lo = rician_moment(c, nu, sigma, &p).unwrap().value;
        let hi = rician_moment(c, nu + dnu, sigma, &p).unwrap().value;
        prop_assert!(hi >= lo * (1.0 - 1e-12), "{lo} > {hi}");
    }

    #[test]
    fn vonmises_char_is_bounded_by_one(c in 0u32..4, plus in any::<bool>(), mu in -1.0f64..1.0, kappa in 0.5f64..1000.0) {
        let v = vonmises_char(c as f64, if plus { 1 } else { -1 }, mu, kappa, (-PI, PI), &SeriesPolicy::default()).unwrap();
        prop_assert!(v.value.norm() <= 1.0 + 1e-12, "{}", v.value);
    }

    #[test]
    fn halving_the_tolerance_moves_series_less_than_the_tolerance(
        c in 0u32..5, nu in 0.0f64..1.2, sigma in 0.09f64..1.0, mu in -0.5f64..0.5, kappa in 5.0f64..1000.0,
    ) {
        let p = SeriesPolicy::default();
        let half = SeriesPolicy { abs_tol: p.abs_tol / 2.0, ..p };
        let a = rician_moment(c, nu, sigma, &p).unwrap().value;
        let b = rician_moment(c, nu, sigma, &half).unwrap().value;
        prop_assert!((a - b).abs() <= p.abs_tol * a.abs().max(1.0), "{a} vs {b}");
        let a = vonmises_char(c as f64, 1, mu, kappa, (-PI, PI), &p).unwrap().value;
        let b = vonmises_char(c as f64, 1, mu, kappa, (-PI, PI), &half).unwrap().value;
        prop_assert!((a - b).norm() <= p.abs_tol, "{a} vs {b}");
    }

    #[test]
    fn moment_covariance_is_hermitian_psd(ds in separated(2), d in defects(), l in 1usize..4, sigma2 in 1e-4f64..1.0) {
        let scene = SceneConfig::new(ArrayConfig::half_wavelength(3, 3), ds).unwrap();
        let frame = FrameConfig { subframes: l, ..FrameConfig::default() };
        let ctx = ModelContext::new(&scene, &frame, &d, sigma2, &SeriesPolicy::default()).unwrap();
        let g = build_moments(&ParamVector::from_scene(&scene), &ctx).unwrap().covariance;
        let scale = g.iter().map(|x| x.norm()).fold(0.0, f64::max);
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                prop_assert!((g[(i, j)] - g[(j, i)].conj()).norm() <= 1e-12 * scale);
            }
        }
        let herm = (&g + g.adjoint()) * C64::new(0.5, 0.0);
        let min = herm.symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-10 * scale, "min eigenvalue {min}");
    }

    #[test]
    fn music_peaks_ignore_a_common_snapshot_scale(
        ds in separated(2), seed in any::<u64>(), mag in 0.01f64..100.0, arg in -PI..PI,
    ) {
        let scene = SceneConfig::new(ArrayConfig::half_wavelength(5, 5), ds).unwrap();
        let frame = FrameConfig { subframes: 8, ..FrameConfig::default() };
        let rx = synthesize_frame(&scene, &frame, &GainPhaseModel::Ideal, &NoiseModel::SnrDb(15.0), seed).unwrap();
        let snaps = rx.pilot_snapshots(8);
        let scaled = &snaps * C64::from_polar(mag, arg);
        let grid = coarse_grid();
        let a = music_estimate(&snaps, 2, &scene.array, &grid).unwrap();
        let b = music_estimate(&scaled, 2, &scene.array, &grid).unwrap();
        for (x, y) in a.azimuths.iter().zip(&b.azimuths).chain(a.elevations.iter().zip(&b.elevations)) {
            prop_assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn noiseless_ideal_objective_is_smallest_at_truth(ds in separated(2), other in separated(2)) {
        let scene = SceneConfig::new(ArrayConfig::half_wavelength(4, 4), ds).unwrap();
        let frame = FrameConfig { subframes: 3, ..FrameConfig::default() };
        let rx = synthesize_frame(&scene, &frame, &GainPhaseModel::Ideal, &NoiseModel::Variance(0.0), 0).unwrap();
        let ctx = ModelContext::new(&scene, &frame, &GainPhaseModel::Ideal, 1e-3, &SeriesPolicy::default()).unwrap();
        let y = rx.stacked_pilots();
        let truth = ParamVector::from_scene(&scene);
        let elsewhere = ParamVector::from_scene(&SceneConfig::new(scene.array, other).unwrap());
        for w in [Weighting::Unweighted, Weighting::Covariance] {
            let at_truth = objective(&y, &truth, &ctx, w).unwrap();
            let off = objective(&y, &elsewhere, &ctx, w).unwrap();
            prop_assert!(at_truth <= off, "{w:?}: {at_truth} > {off}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn aoml_trace_never_increases(ds in separated(2), d in defects(), seed in any::<u64>(), snr in 0.0f64..25.0) {
        let scene = SceneConfig::new(ArrayConfig::half_wavelength(5, 5), ds).unwrap();
        let frame = FrameConfig { subframes: 2, ..FrameConfig::default() };
        let rx = synthesize_frame(&scene, &frame, &d, &NoiseModel::SnrDb(snr), seed).unwrap();
        let ctx = ModelContext::new(&scene, &frame, &d, NoiseModel::SnrDb(snr).variance(&scene), &SeriesPolicy::default()).unwrap();
        let out = aoml_estimate(&rx.stacked_pilots(), &coarse_grid(), &SolverConfig::default(), &ctx, None, None).unwrap();
        for pair in out.trace.windows(2) {
            prop_assert!(pair[1].objective <= pair[0].objective * (1.0 + 1e-12), "{} -> {}", pair[0].objective, pair[1].objective);
        }
    }

    #[test]
    fn crlb_shrinks_with_snr_and_pilots(ds in separated(2), d in defects(), snr in -5.0f64..20.0, step in 1.0f64..10.0, l in 1usize..5) {
        let scene = SceneConfig::new(ArrayConfig::half_wavelength(4, 4), ds).unwrap();
        let policy = SeriesPolicy::default();
        let truth = ParamVector::from_scene(&scene);
        let sd = |snr_db: f64, pilots: usize| {
            let frame = FrameConfig { subframes: pilots, ..FrameConfig::default() };
            let ctx = ModelContext::new(&scene, &frame, &d, NoiseModel::SnrDb(snr_db).variance(&scene), &policy).unwrap();
            let f = fim(&truth, &ctx).unwrap();
            (0..2).map(|k| f.stddevs(k)).collect::<Vec<_>>()
        };
        let base = sd(snr, l);
        for better in [sd(snr + step, l), sd(snr, l + 1)] {
            for (b, n) in base.iter().zip(&better) {
                prop_assert!(n.0 <= b.0 * (1.0 + 1e-9) && n.1 <= b.1 * (1.0 + 1e-9) && n.2 <= b.2 * (1.0 + 1e-9), "{b:?} -> {n:?}");
            }
        }
    }

    #[test]
    fn rate_prediction_ignores_doppler(ds in separated(2), shifts in prop::collection::vec(-2000.0f64..2000.0, 2), sd in 0.01f64..1.0) {
        let scene = SceneConfig::new(ArrayConfig::half_wavelength(3, 3), ds).unwrap();
        let mut moved = scene.clone();
        for (d, s) in moved.drones.iter_mut().zip(&shifts) {
            d.doppler_hz = (d.doppler_hz + s).abs();
        }
        let policy = SeriesPolicy::default();
        let defects = GainPhaseModel::stochastic(1.0, 0.1, 50.0).moments(&policy).unwrap();
        let spread = EstimatorSpread { sigma_phi: sd.to_radians(), sigma_theta: sd.to_radians() };
        for method in [RateMethod::FirstOrder, RateMethod::SecondOrder] {
            let a = sdr_predict(&scene, &defects, 0.1, &[spread, spread], method, &policy).unwrap();
            let b = sdr_predict(&moved, &defects, 0.1, &[spread, spread], method, &policy).unwrap();
            prop_assert_eq!(a.sum_rate.to_bits(), b.sum_rate.to_bits());
        }
    }
}

fn row(v: [f64; 16], trials: usize, failures: usize) -> ReportRow {
    ReportRow {
        sweep_value: v[0],
        rmse_phi_deg: v[1],
        rmse_theta_deg: v[2],
        rmse_fd_hz: v[3],
        crlb_phi_deg: v[4],
        crlb_theta_deg: v[5],
        crlb_fd_hz: v[6],
        ser: v[7],
        sdr_empirical: v[8],
        sdr_analytic_1st: v[9],
        sdr_analytic_2nd: v[10],
        ci_rmse_phi_deg: v[11],
        ci_rmse_theta_deg: v[12],
        ci_rmse_fd_hz: v[13],
        ci_ser: v[14],
        ci_sdr_empirical: v[15],
        trials,
        failures,
    }
}

fn number() -> impl Strategy<Value = f64> {
    prop_oneof![any::<f64>().prop_filter("finite or NaN", |x| !x.is_infinite()), Just(f64::NAN), -1e3f64..1e3]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn seeds_never_collide(base in any::<u64>(), trials in 1usize..300, points in 1usize..8) {
        let mut seen = HashSet::new();
        for p in 0..points {
            for t in 0..trials {
                prop_assert!(seen.insert(trial_seed(base, t, p)));
            }
        }
    }

    #[test]
    fn csv_round_trips_any_table(
        rows in prop::collection::vec((prop::array::uniform16(number()), 0usize..100_000, 0usize..1000), 0..6),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let report = MonteCarloReport {
            name: "t".into(),
            sweep_variable: SweepVariable::SnrDb,
            estimator: Estimator::Mle,
            base_seed: 1,
            points: rows
                .iter()
                .map(|(v, t, f)| PointReport { row: row(*v, *t, *f), wall_time_s: 0.0, records: Vec::new() })
                .collect(),
        };
        emit_csv(&report, &path).unwrap();
        let back = read_csv(&path).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (a, b) in back.iter().zip(report.rows()) {
            prop_assert!(a.same_as(&b), "{a:?} vs {b:?}");
        }
    }
}
