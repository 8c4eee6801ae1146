//! Registered figure scenarios and the `[experiment]` config table.
//!
//! Every scenario uses the table drones d1 = (20°, 20°, 2 kHz),
//! d2 = (40°, 40°, 4 kHz), d3 = (60°, 60°, 6 kHz) at 100 m, T = 100,
//! f_s = 100 kHz and λ = 1.6 mm, with each figure's array, pilots and defect
//! parameters. A scenario expands to one or more series (one CSV each).
//!
//! A config file is a scene file (see [`crate::scene::config`]) plus:
//!
//! ```toml
//! [experiment]
//! name = "my-sweep"        # series / CSV name
//! sweep = "snr_db"         # snr_db | power_coefficient | window_length |
//!                          # pilots | defect_nu | defect_sigma_r | defect_kappa
//! values = [0.0, 5.0, 10.0]
//! trials = 200             # optional, default 200
//! seed = 1                 # optional base seed, default 1
//! estimator = "mle"        # mle | ao-ml | music | mle-mle | music-mle
//! pilots_used = 1          # optional, default: all subframes
//! window = 101             # optional joint-estimator window, default T + 1
//! overlays = true          # optional, default true
//! max_terms = 500          # optional series term budget, default 500
//! ```

use std::path::Path;

use serde::Deserialize;

use super::{Estimator, ExperimentSpec, HarnessError, Sweep, SweepVariable};
use crate::locate::{GridSpec, SolverConfig};
use crate::scene::config::parse_scene;
use crate::scene::{ArrayConfig, DroneTruth, FrameConfig, GainPhaseModel, NoiseModel, SceneConfig};
use crate::specfun::SeriesPolicy;

pub const DEFAULT_TRIALS: usize = 200;
pub const DEFAULT_SEED: u64 = 1;

pub const SCENARIOS: [(&str, &str); 8] = [
    ("fig2", "estimate distributions of a single drone (MLE, 6x6, L=10, SNR 8 dB)"),
    ("fig3", "four gain-phase defect cases: MLE RMSE, CRLB and SDR over SNR (8x8)"),
    ("fig4", "power allocation sweep for three range ratios (8x8, SNR 12 dB)"),
    ("fig5", "localisation/communication synergy over SNR for MLE, AO-ML, MUSIC (8x8, L=5)"),
    ("fig6", "AO-ML convergence (7x7, single pilot, SNR 20 dB)"),
    ("fig7", "larger defects: MLE RMSE, CRLB and SDR over SNR (7x7)"),
    ("fig8", "MLE-MLE and MUSIC-MLE over the window length, AO-ML reference (6x6, 16-PSK)"),
    ("fig9", "MLE-MLE and MUSIC-MLE at window 101 with and without defects (6x6)"),
];

fn drone(i: usize) -> DroneTruth {
    match i {
        1 => DroneTruth::from_degrees(20.0, 20.0, 2000.0),
        2 => DroneTruth::from_degrees(40.0, 40.0, 4000.0),
        3 => DroneTruth::from_degrees(60.0, 60.0, 6000.0),
        _ => unreachable!("the table lists drones 1 to 3"),
    }
}

fn scene(m: usize, drones: Vec<DroneTruth>) -> SceneConfig {
    SceneConfig {
        array: ArrayConfig::half_wavelength(m, m),
        drones,
    }
}

fn frame(subframes: usize) -> FrameConfig {
    FrameConfig {
        subframes,
        ..FrameConfig::default()
    }
}

fn snr(values: &[f64]) -> Sweep {
    Sweep {
        variable: SweepVariable::SnrDb,
        values: values.to_vec(),
    }
}

fn base(name: &str, scene: SceneConfig, frame: FrameConfig, defects: GainPhaseModel, estimator: Estimator) -> ExperimentSpec {
    ExperimentSpec {
        name: name.to_string(),
        scene,
        frame,
        defects,
        noise: NoiseModel::SnrDb(10.0),
        sweep: snr(&[10.0]),
        trials: DEFAULT_TRIALS,
        base_seed: DEFAULT_SEED,
        estimator,
        pilots_used: frame.subframes,
        window: frame.symbols_per_subframe + 1,
        overlays: true,
        grid: GridSpec::default(),
        solver: SolverConfig::default(),
        policy: SeriesPolicy::default(),
    }
}

/// Series of a registered scenario with the default trial count and seed.
pub fn scenario(name: &str) -> Result<Vec<ExperimentSpec>, HarnessError> {
    let st = GainPhaseModel::stochastic;
    let specs = match name {
        "fig2" => {
            let mut s = base("fig2", scene(6, vec![drone(1)]), frame(10), st(0.5, 1.0, 1000.0), Estimator::Mle);
            s.sweep = snr(&[8.0]);
            vec![s]
        }
        "fig3" => [
            ("large-gain", st(0.5, 0.1, 10.0)),
            ("small-gain", st(1.15, 0.1, 10.0)),
            ("large-phase", st(0.8, 0.09, 5.0)),
            ("small-phase", st(0.8, 0.09, 10.0)),
        ]
        .into_iter()
        .map(|(label, d)| {
            let mut s = base(&format!("fig3_{label}"), scene(8, vec![drone(2), drone(3)]), frame(10), d, Estimator::Mle);
            s.pilots_used = 1;
            s.sweep = snr(&[0.0, 5.0, 10.0, 15.0, 20.0]);
            s
        })
        .collect(),
        "fig4" => [("eta3-1", 100.0), ("eta3-2", 50.0), ("eta3-5", 20.0)]
            .into_iter()
            .map(|(label, range)| {
                let drones = vec![drone(1), drone(3).with_range(range)];
                let mut s = base(&format!("fig4_{label}"), scene(8, drones), frame(5), st(1.0, 0.1, 700.0), Estimator::Mle);
                s.pilots_used = 1;
                s.noise = NoiseModel::SnrDb(12.0);
                s.sweep = Sweep {
                    variable: SweepVariable::PowerCoefficient,
                    values: (1..=9).map(|i| i as f64 / 10.0).collect(),
                };
                s
            })
            .collect(),
        "fig5" => [Estimator::Mle, Estimator::AoMl, Estimator::Music]
            .into_iter()
            .map(|e| {
                let mut s = base(&format!("fig5_{e}"), scene(8, vec![drone(1), drone(3)]), frame(5), st(1.0, 0.1, 50.0), e);
                s.sweep = snr(&[5.0, 7.5, 10.0, 12.5, 15.0]);
                s
            })
            .collect(),
        "fig6" => {
            let mut s = base("fig6_ao-ml", scene(7, vec![drone(2), drone(3)]), frame(1), st(1.0, 0.1, 700.0), Estimator::AoMl);
            s.sweep = snr(&[20.0]);
            vec![s]
        }
        "fig7" => {
            let mut s = base("fig7_mle", scene(7, vec![drone(2), drone(3)]), frame(1), st(0.5, 0.1, 5.0), Estimator::Mle);
            s.sweep = snr(&[0.0, 5.0, 10.0, 15.0, 20.0]);
            vec![s]
        }
        "fig8" => {
            let sc = scene(6, vec![drone(2), drone(3)]);
            let mut windows = vec![1.0, 2.0];
            windows.extend((1..=10).map(|i| (10 * i + 1) as f64));
            let mut out: Vec<ExperimentSpec> = [Estimator::MleMle, Estimator::MusicMle]
                .into_iter()
                .map(|e| {
                    let mut s = base(&format!("fig8_{e}"), sc.clone(), frame(1), GainPhaseModel::Ideal, e);
                    s.noise = NoiseModel::SnrDb(FIG8_SNR_DB);
                    s.sweep = Sweep {
                        variable: SweepVariable::WindowLength,
                        values: windows.clone(),
                    };
                    s
                })
                .collect();
            let mut ao = base("fig8_ao-ml", sc, frame(1), GainPhaseModel::Ideal, Estimator::AoMl);
            ao.overlays = false;
            ao.sweep = snr(&[FIG8_SNR_DB]);
            out.push(ao);
            out
        }
        "fig9" => {
            let sc = scene(6, vec![drone(2), drone(3)]);
            let mut out = Vec::new();
            for (suffix, d) in [("", GainPhaseModel::Ideal), ("-e", st(1.0, 0.001, 1000.0))] {
                for e in [Estimator::MleMle, Estimator::MusicMle] {
                    let mut s = base(&format!("fig9_{e}{suffix}"), sc.clone(), frame(1), d, e);
                    s.sweep = snr(&[-5.0, 0.0, 5.0, 10.0]);
                    // σ_r = 0.001 needs a long Rician series
                    s.policy = SeriesPolicy::default().with_max_terms(50_000);
                    out.push(s);
                }
            }
            out
        }
        other => {
            return Err(HarnessError::UnknownScenario {
                name: other.to_string(),
                hint: suggestion(other),
            })
        }
    };
    Ok(specs)
}

/// SNR of the window-length sweeps: mid-range. Below it the 16-PSK noise
/// floor hides how SER depends on the window.
pub const FIG8_SNR_DB: f64 = 10.0;

/// ", did you mean `figN`?" for a near miss, else empty.
pub fn suggestion(name: &str) -> String {
    SCENARIOS
        .iter()
        .map(|(n, _)| (strsim::levenshtein(name, n), *n))
        .min()
        .filter(|(d, _)| *d <= 2)
        .map(|(_, n)| format!(", did you mean `{n}`?"))
        .unwrap_or_default()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    name: String,
    sweep: String,
    values: Vec<f64>,
    trials: Option<usize>,
    seed: Option<u64>,
    estimator: String,
    pilots_used: Option<usize>,
    window: Option<usize>,
    overlays: Option<bool>,
    max_terms: Option<usize>,
}

/// A scene file with an `[experiment]` table.
pub fn parse_experiment(text: &str) -> Result<ExperimentSpec, HarnessError> {
    let loaded = parse_scene(text)?;
    let table = loaded
        .experiment
        .ok_or_else(|| HarnessError::Invalid("config has no [experiment] table".into()))?;
    let raw: RawExperiment = table
        .try_into()
        .map_err(|e: toml::de::Error| HarnessError::Invalid(format!("[experiment]: {}", e.message())))?;
    let frame = loaded.frame;
    let spec = ExperimentSpec {
        name: raw.name,
        scene: loaded.scene,
        frame,
        defects: loaded.defects,
        noise: loaded.noise,
        sweep: Sweep {
            variable: raw.sweep.parse()?,
            values: raw.values,
        },
        trials: raw.trials.unwrap_or(DEFAULT_TRIALS),
        base_seed: raw.seed.unwrap_or(DEFAULT_SEED),
        estimator: raw.estimator.parse()?,
        pilots_used: raw.pilots_used.unwrap_or(frame.subframes),
        window: raw.window.unwrap_or(frame.symbols_per_subframe + 1),
        overlays: raw.overlays.unwrap_or(true),
        grid: GridSpec::default(),
        solver: SolverConfig::default(),
        policy: SeriesPolicy::default().with_max_terms(raw.max_terms.unwrap_or(SeriesPolicy::default().max_terms)),
    };
    spec.validate()?;
    Ok(spec)
}

/// A registered scenario name, or the path of a config file.
pub fn resolve(arg: &str) -> Result<Vec<ExperimentSpec>, HarnessError> {
    if SCENARIOS.iter().any(|(n, _)| *n == arg) {
        return scenario(arg);
    }
    let path = Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        return Ok(vec![parse_experiment(&text)?]);
    }
    Err(HarnessError::UnknownScenario {
        name: arg.to_string(),
        hint: suggestion(arg),
    })
}
