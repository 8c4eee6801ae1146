//! Monte Carlo sweeps over the registered figure scenarios: trial fan-out,
//! aggregation into per-point reports, CSV emission and the command line.
//!
//! Trial `i` of sweep point `p` draws its frame from seed
//! `base_seed + i + p·10⁶`, so seeds never collide below 10⁶ trials and a
//! report does not depend on how many workers ran it. Window-length sweeps
//! evaluate every window of the same subframe run, so all their points share
//! the seeds of point 0.

pub mod cli;
mod csv_io;
pub mod scenarios;
mod trial;
pub mod verify;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::analytics::{fim, sdr_predict, AnalyticsError, EstimatorSpread, RateMethod};
use crate::locate::{GridSpec, LocateError, ModelContext, ParamVector, SolverConfig, SteeringTable};
use crate::scene::config::ConfigError;
use crate::scene::{DefectParams, FrameConfig, GainPhaseModel, NoiseModel, SceneConfig, SceneError};
use crate::specfun::SeriesPolicy;
use crate::stats;

pub use csv_io::{emit_csv, read_csv, COLUMNS, FORMAT_VERSION};
pub use trial::TrialRecord;

/// Seed stride between sweep points.
pub const POINT_SEED_STRIDE: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown scenario `{name}`{hint}")]
    UnknownScenario { name: String, hint: String },
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Locate(#[from] LocateError),
    #[error("{failed} of {trials} trials failed at {variable} = {value}; first error: {first}")]
    TooManyFailures {
        variable: SweepVariable,
        value: f64,
        failed: usize,
        trials: usize,
        first: String,
    },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    SnrDb,
    /// ϖ₁ of a two-drone scene; drone 2 gets 1 − ϖ₁ of the total power.
    PowerCoefficient,
    /// JLDD window length t + 1.
    WindowLength,
    /// Number of pilots L (all of them used for estimation).
    Pilots,
    DefectNu,
    DefectSigmaR,
    DefectKappa,
}

impl SweepVariable {
    pub const ALL: [SweepVariable; 7] = [
        Self::SnrDb,
        Self::PowerCoefficient,
        Self::WindowLength,
        Self::Pilots,
        Self::DefectNu,
        Self::DefectSigmaR,
        Self::DefectKappa,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::SnrDb => "snr_db",
            Self::PowerCoefficient => "power_coefficient",
            Self::WindowLength => "window_length",
            Self::Pilots => "pilots",
            Self::DefectNu => "defect_nu",
            Self::DefectSigmaR => "defect_sigma_r",
            Self::DefectKappa => "defect_kappa",
        }
    }
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepVariable {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| HarnessError::Invalid(format!("unknown sweep variable `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Mle,
    AoMl,
    Music,
    MleMle,
    MusicMle,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [Self::Mle, Self::AoMl, Self::Music, Self::MleMle, Self::MusicMle];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Mle => "mle",
            Self::AoMl => "ao-ml",
            Self::Music => "music",
            Self::MleMle => "mle-mle",
            Self::MusicMle => "music-mle",
        }
    }

    /// Windowed joint estimation and detection (as opposed to pilot-only).
    pub fn is_joint(&self) -> bool {
        matches!(self, Self::MleMle | Self::MusicMle)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Estimator {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| HarnessError::Invalid(format!("unknown estimator `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

/// One series: a base scene, the swept variable and how to estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    /// Series name; also the CSV file stem.
    pub name: String,
    pub scene: SceneConfig,
    pub frame: FrameConfig,
    pub defects: GainPhaseModel,
    pub noise: NoiseModel,
    pub sweep: Sweep,
    pub trials: usize,
    pub base_seed: u64,
    pub estimator: Estimator,
    /// Pilots (first l subframes) used by the pilot-only estimators. Every
    /// subframe's data is then decoded with that single estimate.
    pub pilots_used: usize,
    /// Window length at which joint estimators are scored when the window is
    /// not the swept variable.
    pub window: usize,
    /// Attach the closed-form CRLB and SDR predictions.
    pub overlays: bool,
    pub grid: GridSpec,
    pub solver: SolverConfig,
    pub policy: SeriesPolicy,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Invalid(format!("{}: {m}", self.name)));
        self.scene.validate()?;
        self.frame.validate()?;
        self.defects.validate()?;
        self.noise.validate()?;
        self.grid.validate()?;
        if self.trials < 1 {
            return bad("trials must be at least 1".into());
        }
        if self.sweep.values.is_empty() {
            return bad("sweep has no values".into());
        }
        if self.sweep.values.iter().any(|v| !v.is_finite()) {
            return bad("sweep values must be finite".into());
        }
        if self.trials as u64 >= POINT_SEED_STRIDE {
            return bad(format!("at most {} trials per point", POINT_SEED_STRIDE - 1));
        }
        if self.scene.k() > self.scene.array.size() {
            return bad("more drones than antennas".into());
        }
        let joint = self.estimator.is_joint();
        if self.sweep.variable == SweepVariable::WindowLength && !joint {
            return bad("window_length sweeps need a joint estimator".into());
        }
        if self.sweep.variable == SweepVariable::PowerCoefficient {
            if self.scene.k() != 2 {
                return bad("power_coefficient sweeps need exactly two drones".into());
            }
            if self.sweep.values.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
                return bad("power coefficients must lie in (0, 1)".into());
            }
        }
        for value in &self.sweep.values {
            self.point(*value)?;
        }
        Ok(())
    }

    /// Concrete configuration of one sweep point.
    pub fn point(&self, value: f64) -> Result<PointSetup, HarnessError> {
        let bad = |m: String| Err(HarnessError::Invalid(format!("{}: {m}", self.name)));
        let mut scene = self.scene.clone();
        let mut frame = self.frame;
        let mut defects = self.defects;
        let mut pilots = self.pilots_used;
        let mut window = self.window;
        let mut noise = self.noise;
        let as_count = |v: f64, what: &str| -> Result<usize, HarnessError> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(HarnessError::Invalid(format!("{what} must be a positive integer, got {v}")))
            }
        };
        let name = &self.name;
        fn stochastic<'a>(d: &'a mut GainPhaseModel, name: &str) -> Result<&'a mut DefectParams, HarnessError> {
            match d {
                GainPhaseModel::Stochastic(p) => Ok(p),
                GainPhaseModel::Ideal => Err(HarnessError::Invalid(format!("{name}: defect sweeps need stochastic defects"))),
            }
        }
        match self.sweep.variable {
            SweepVariable::SnrDb => noise = NoiseModel::SnrDb(value),
            SweepVariable::PowerCoefficient => {
                // noise held at the level of the base allocation
                noise = NoiseModel::Variance(self.noise.variance(&self.scene));
                let total: f64 = self.scene.drones.iter().map(|d| d.tx_power_w).sum();
                scene.drones[0].tx_power_w = value * total;
                scene.drones[1].tx_power_w = (1.0 - value) * total;
            }
            SweepVariable::WindowLength => window = as_count(value, "window length")?,
            SweepVariable::Pilots => {
                let l = as_count(value, "pilot count")?;
                frame.subframes = l;
                pilots = l;
            }
            SweepVariable::DefectNu => stochastic(&mut defects, name)?.nu = value,
            SweepVariable::DefectSigmaR => stochastic(&mut defects, name)?.sigma_r = value,
            SweepVariable::DefectKappa => stochastic(&mut defects, name)?.kappa = value,
        }
        scene.validate()?;
        defects.validate()?;
        if self.estimator.is_joint() {
            if window < 1 || window > frame.symbols_per_subframe + 1 {
                return bad(format!(
                    "window {window} outside 1..={}",
                    frame.symbols_per_subframe + 1
                ));
            }
        } else if pilots < 1 || pilots > frame.subframes {
            return bad(format!("pilots_used {pilots} outside 1..={}", frame.subframes));
        }
        let noise_variance = noise.variance(&scene);
        let moments = defects.moments(&self.policy)?;
        let mut est_frame = frame;
        est_frame.subframes = if self.estimator.is_joint() { frame.subframes } else { pilots };
        let context = ModelContext {
            array: scene.array,
            frame: est_frame,
            amplitudes: scene.amplitudes(),
            defects: moments,
            noise_variance,
        };
        Ok(PointSetup {
            value,
            truth: ParamVector::from_scene(&scene),
            scene,
            frame,
            defects,
            noise_variance,
            pilots,
            window,
            context,
        })
    }
}

/// A resolved sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSetup {
    pub value: f64,
    pub scene: SceneConfig,
    pub truth: ParamVector,
    pub frame: FrameConfig,
    pub defects: GainPhaseModel,
    pub noise_variance: f64,
    pub pilots: usize,
    pub window: usize,
    /// Model context of the estimator (restricted to the pilots it uses).
    pub context: ModelContext,
}

/// One CSV row. Column order is [`COLUMNS`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportRow {
    pub sweep_value: f64,
    pub rmse_phi_deg: f64,
    pub rmse_theta_deg: f64,
    pub rmse_fd_hz: f64,
    pub crlb_phi_deg: f64,
    pub crlb_theta_deg: f64,
    pub crlb_fd_hz: f64,
    pub ser: f64,
    pub sdr_empirical: f64,
    pub sdr_analytic_1st: f64,
    pub sdr_analytic_2nd: f64,
    pub ci_rmse_phi_deg: f64,
    pub ci_rmse_theta_deg: f64,
    pub ci_rmse_fd_hz: f64,
    pub ci_ser: f64,
    pub ci_sdr_empirical: f64,
    pub trials: usize,
    pub failures: usize,
}

impl ReportRow {
    pub fn values(&self) -> [f64; 18] {
        [
            self.sweep_value,
            self.rmse_phi_deg,
            self.rmse_theta_deg,
            self.rmse_fd_hz,
            self.crlb_phi_deg,
            self.crlb_theta_deg,
            self.crlb_fd_hz,
            self.ser,
            self.sdr_empirical,
            self.sdr_analytic_1st,
            self.sdr_analytic_2nd,
            self.ci_rmse_phi_deg,
            self.ci_rmse_theta_deg,
            self.ci_rmse_fd_hz,
            self.ci_ser,
            self.ci_sdr_empirical,
            self.trials as f64,
            self.failures as f64,
        ]
    }

    /// Equality that treats NaN as equal to NaN (missing overlays).
    pub fn same_as(&self, other: &Self) -> bool {
        self.values()
            .iter()
            .zip(other.values().iter())
            .all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
    }
}

/// Closed-form predictions at one sweep point; NaN where undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlays {
    /// Drone-averaged √CRLB of (φ [deg], θ [deg], f_D [Hz]).
    pub crlb: [f64; 3],
    pub sdr_first: f64,
    pub sdr_second: f64,
}

impl Overlays {
    pub const NONE: Overlays = Overlays {
        crlb: [f64::NAN; 3],
        sdr_first: f64::NAN,
        sdr_second: f64::NAN,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointReport {
    pub row: ReportRow,
    pub wall_time_s: f64,
    /// Successful trials in seed order.
    pub records: Vec<TrialRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub name: String,
    pub sweep_variable: SweepVariable,
    pub estimator: Estimator,
    pub base_seed: u64,
    pub points: Vec<PointReport>,
}

impl MonteCarloReport {
    pub fn rows(&self) -> Vec<ReportRow> {
        self.points.iter().map(|p| p.row).collect()
    }

    /// One column of the table across sweep points.
    pub fn column(&self, f: impl Fn(&ReportRow) -> f64) -> Vec<f64> {
        self.points.iter().map(|p| f(&p.row)).collect()
    }
}

pub fn trial_seed(base: u64, trial: usize, point: usize) -> u64 {
    base.wrapping_add(trial as u64)
        .wrapping_add(point as u64 * POINT_SEED_STRIDE)
}

/// CRLB and SDR predictions for a pilot-only estimator at `point`. Built from
/// the model alone; nothing from the simulated trials enters.
pub fn analytic_overlays(spec: &ExperimentSpec, point: &PointSetup) -> Overlays {
    if !spec.overlays || spec.estimator.is_joint() {
        return Overlays::NONE;
    }
    let k = point.scene.k();
    let result = match fim(&point.truth, &point.context) {
        Ok(r) if !r.ill_conditioned => r,
        _ => return Overlays::NONE,
    };
    let mut crlb = [0.0; 3];
    let mut spreads = Vec::with_capacity(k);
    for d in 0..k {
        let (sp, st, sf) = result.stddevs(d);
        crlb[0] += sp.to_degrees() / k as f64;
        crlb[1] += st.to_degrees() / k as f64;
        crlb[2] += sf / k as f64;
        spreads.push(EstimatorSpread {
            sigma_phi: sp,
            sigma_theta: st,
        });
    }
    let rate = |method| {
        sdr_predict(
            &point.scene,
            &point.context.defects,
            point.noise_variance,
            &spreads,
            method,
            &spec.policy,
        )
        .map(|p| p.sum_rate)
        .unwrap_or(f64::NAN)
    };
    Overlays {
        crlb,
        sdr_first: rate(RateMethod::FirstOrder),
        sdr_second: rate(RateMethod::SecondOrder),
    }
}

fn aggregate(
    spec: &ExperimentSpec,
    point: &PointSetup,
    results: Vec<Result<TrialRecord, String>>,
    overlays: Overlays,
    wall_time_s: f64,
) -> Result<PointReport, HarnessError> {
    let trials = results.len();
    let mut records = Vec::with_capacity(trials);
    let mut first = None;
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                first.get_or_insert(e);
            }
        }
    }
    let failures = trials - records.len();
    if failures * 10 > trials {
        return Err(HarnessError::TooManyFailures {
            variable: spec.sweep.variable,
            value: point.value,
            failed: failures,
            trials,
            first: first.unwrap_or_default(),
        });
    }
    let k = point.scene.k();
    // RMSE per drone, then averaged over drones; CI by the delta method
    let mut rmse = [0.0; 3];
    let mut ci = [0.0; 3];
    for d in 0..k {
        for (p, (r, c)) in rmse.iter_mut().zip(ci.iter_mut()).enumerate() {
            let sq: Vec<f64> = records.iter().map(|t| t.errors[d][p].powi(2)).collect();
            let rm = if sq.is_empty() { f64::NAN } else { stats::mean(&sq).sqrt() };
            *r += rm / k as f64;
            *c += if rm > 0.0 { stats::ci95_half_width(&sq) / (2.0 * rm) } else { 0.0 } / k as f64;
        }
    }
    let ser: Vec<f64> = records.iter().map(|t| t.ser).collect();
    let rate: Vec<f64> = records.iter().map(|t| t.sum_rate).collect();
    let mean_or_nan = |xs: &[f64]| if xs.is_empty() { f64::NAN } else { stats::mean(xs) };
    let row = ReportRow {
        sweep_value: point.value,
        rmse_phi_deg: rmse[0],
        rmse_theta_deg: rmse[1],
        rmse_fd_hz: rmse[2],
        crlb_phi_deg: overlays.crlb[0],
        crlb_theta_deg: overlays.crlb[1],
        crlb_fd_hz: overlays.crlb[2],
        ser: mean_or_nan(&ser),
        sdr_empirical: mean_or_nan(&rate),
        sdr_analytic_1st: overlays.sdr_first,
        sdr_analytic_2nd: overlays.sdr_second,
        ci_rmse_phi_deg: ci[0],
        ci_rmse_theta_deg: ci[1],
        ci_rmse_fd_hz: ci[2],
        ci_ser: stats::ci95_half_width(&ser),
        ci_sdr_empirical: stats::ci95_half_width(&rate),
        trials,
        failures,
    };
    Ok(PointReport {
        row,
        wall_time_s,
        records,
    })
}

/// Runs every sweep point of `spec` on the global rayon pool.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<MonteCarloReport, HarnessError> {
    run_points(spec)
}

/// As [`run_experiment`] on a dedicated pool of `workers` threads. The
/// report is identical for every worker count.
pub fn run_experiment_with_workers(spec: &ExperimentSpec, workers: usize) -> Result<MonteCarloReport, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Invalid(format!("thread pool: {e}")))?;
    pool.install(|| run_points(spec))
}

fn run_points(spec: &ExperimentSpec) -> Result<MonteCarloReport, HarnessError> {
    spec.validate()?;
    let setups: Vec<PointSetup> = spec
        .sweep
        .values
        .iter()
        .map(|&v| spec.point(v))
        .collect::<Result<_, _>>()?;
    let table = SteeringTable::new(&spec.scene.array, &spec.grid);
    let mut points = Vec::with_capacity(setups.len());
    if spec.sweep.variable == SweepVariable::WindowLength {
        // one subframe run per trial serves every window
        let start = Instant::now();
        let refs: Vec<&PointSetup> = setups.iter().collect();
        let per_trial: Vec<Vec<Result<TrialRecord, String>>> = (0..spec.trials)
            .into_par_iter()
            .map(|i| trial::run_trial(spec, &refs, &table, trial_seed(spec.base_seed, i, 0)))
            .collect();
        let wall = start.elapsed().as_secs_f64() / setups.len() as f64;
        let mut columns: Vec<Vec<Result<TrialRecord, String>>> = vec![Vec::with_capacity(spec.trials); setups.len()];
        for row in per_trial {
            for (col, r) in columns.iter_mut().zip(row) {
                col.push(r);
            }
        }
        for (setup, results) in setups.iter().zip(columns) {
            points.push(aggregate(spec, setup, results, Overlays::NONE, wall)?);
        }
    } else {
        for (pi, setup) in setups.iter().enumerate() {
            let start = Instant::now();
            let results: Vec<Result<TrialRecord, String>> = (0..spec.trials)
                .into_par_iter()
                .map(|i| {
                    trial::run_trial(spec, &[setup], &table, trial_seed(spec.base_seed, i, pi))
                        .pop()
                        .unwrap_or_else(|| Err("no result".into()))
                })
                .collect();
            let overlays = analytic_overlays(spec, setup);
            points.push(aggregate(spec, setup, results, overlays, start.elapsed().as_secs_f64())?);
        }
    }
    Ok(MonteCarloReport {
        name: spec.name.clone(),
        sweep_variable: spec.sweep.variable,
        estimator: spec.estimator,
        base_seed: spec.base_seed,
        points,
    })
}

/// Overlays only, without simulation (`trials` = 0 in every row).
pub fn analytic_report(spec: &ExperimentSpec) -> Result<MonteCarloReport, HarnessError> {
    let mut points = Vec::with_capacity(spec.sweep.values.len());
    for &v in &spec.sweep.values {
        let setup = spec.point(v)?;
        let start = Instant::now();
        let overlays = analytic_overlays(spec, &setup);
        let mut report = aggregate(spec, &setup, Vec::new(), overlays, 0.0)?;
        report.wall_time_s = start.elapsed().as_secs_f64();
        points.push(report);
    }
    Ok(MonteCarloReport {
        name: spec.name.clone(),
        sweep_variable: spec.sweep.variable,
        estimator: spec.estimator,
        base_seed: spec.base_seed,
        points,
    })
}
