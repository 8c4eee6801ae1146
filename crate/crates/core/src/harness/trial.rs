//! One Monte Carlo trial: synthesize → estimate → decode → measure.

use nalgebra::DVector;

use super::{Estimator, ExperimentSpec, PointSetup};
use crate::comms::{measure_link, NoiseTerm};
use crate::jointdet::{run_subframe, JointAlgorithm};
use crate::locate::{
    aoml_estimate, local_axis, match_to_truth, mle_estimate, music_estimate_with, objective, GridSpec, ModelContext,
    MusicOptions, ParamVector, SteeringTable, Weighting,
};
use crate::scene::{synthesize_frame, NoiseModel, ReceivedFrame};
use crate::C64;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub seed: u64,
    /// Per drone (truth order): estimate − truth as (φ [deg], θ [deg], f_D [Hz]).
    pub errors: Vec<[f64; 3]>,
    /// Symbol error rate averaged over drones.
    pub ser: f64,
    /// Empirical sum rate Σ_k mean log₂(1 + γ_k).
    pub sum_rate: f64,
    /// Solver iterations (AO-ML, or the scored window of a joint run).
    pub iterations: usize,
    /// The solver's objective trace never increased.
    pub monotone: bool,
}

/// Runs one trial against every setup in `setups`. Pilot-only estimators
/// take exactly one setup; joint estimators score one subframe run at each
/// setup's window, so all setups must share scene, frame and noise.
pub(super) fn run_trial(
    spec: &ExperimentSpec,
    setups: &[&PointSetup],
    table: &SteeringTable,
    seed: u64,
) -> Vec<Result<TrialRecord, String>> {
    let first = setups[0];
    let rx = match synthesize_frame(
        &first.scene,
        &first.frame,
        &first.defects,
        &NoiseModel::Variance(first.noise_variance),
        seed,
    ) {
        Ok(rx) => rx,
        Err(e) => return vec![Err(e.to_string()); setups.len()],
    };
    if spec.estimator.is_joint() {
        let algorithm = match spec.estimator {
            Estimator::MleMle => JointAlgorithm::MleMle,
            _ => JointAlgorithm::MusicMle,
        };
        let run = run_subframe(
            &rx.samples[0],
            0,
            algorithm,
            &first.context,
            &spec.grid,
            &spec.solver,
            Some(table),
        );
        return setups
            .iter()
            .map(|s| {
                let w = run
                    .windows
                    .iter()
                    .find(|r| r.window_len == s.window)
                    .ok_or_else(|| format!("window {} failed", s.window))?;
                let monotone = w.objective_trace.windows(2).all(|p| p[1] <= p[0]);
                Ok(score(s, &rx, &w.params, seed, w.iterations, monotone))
            })
            .collect();
    }
    vec![pilot_trial(spec, first, &rx, table, seed)]
}

fn pilot_trial(
    spec: &ExperimentSpec,
    setup: &PointSetup,
    rx: &ReceivedFrame,
    table: &SteeringTable,
    seed: u64,
) -> Result<TrialRecord, String> {
    let snaps = rx.pilot_snapshots(setup.pilots);
    let obs = DVector::from_column_slice(snaps.as_slice());
    let ctx = &setup.context;
    let (params, iterations, monotone) = match spec.estimator {
        Estimator::Mle => {
            let out = mle_estimate(&obs, &spec.grid, ctx, Weighting::Unweighted, Some(table)).map_err(|e| e.to_string())?;
            (out.params, 0, true)
        }
        Estimator::AoMl => {
            let out = aoml_estimate(&obs, &spec.grid, &spec.solver, ctx, None, Some(table)).map_err(|e| e.to_string())?;
            let monotone = out.trace.windows(2).all(|p| p[1].objective <= p[0].objective);
            (out.params, out.iterations, monotone)
        }
        Estimator::Music => {
            let k = setup.scene.k();
            let opts = MusicOptions {
                diagonal_loading: if setup.pilots < k + 1 { 1e-6 } else { 0.0 },
            };
            let m = music_estimate_with(&snaps, k, &setup.scene.array, &spec.grid, &opts, Some(table))
                .map_err(|e| e.to_string())?;
            let dopplers = doppler_given_angles(&obs, &m.azimuths, &m.elevations, ctx, &spec.grid);
            (
                ParamVector {
                    azimuths: m.azimuths,
                    elevations: m.elevations,
                    dopplers,
                },
                0,
                true,
            )
        }
        Estimator::MleMle | Estimator::MusicMle => unreachable!("joint estimators run per subframe"),
    };
    Ok(score(setup, rx, &params, seed, iterations, monotone))
}

/// Doppler by the pilot likelihood with the angles held fixed: cyclic
/// per-drone scans of the full Doppler axis, then local refinement.
fn doppler_given_angles(
    obs: &DVector<C64>,
    azimuths: &[f64],
    elevations: &[f64],
    ctx: &ModelContext,
    grid: &GridSpec,
) -> Vec<f64> {
    let k = azimuths.len();
    let mid = 0.5 * (grid.doppler_range.0 + grid.doppler_range.1);
    let mut p = ParamVector {
        azimuths: azimuths.to_vec(),
        elevations: elevations.to_vec(),
        dopplers: vec![mid; k],
    };
    let eval = |p: &ParamVector| objective(obs, p, ctx, Weighting::Unweighted).unwrap_or(f64::INFINITY);
    let coarse = grid.dopplers();
    let half = (1.0 / grid.refine_shrink).round().max(1.0) as usize;
    for _ in 0..3 {
        for d in 0..k {
            let mut best = (eval(&p), p.dopplers[d]);
            let scan = |axis: &[f64], best: &mut (f64, f64), p: &mut ParamVector| {
                for &f in axis {
                    p.dopplers[d] = f;
                    let v = eval(p);
                    if v < best.0 {
                        *best = (v, f);
                    }
                }
                p.dopplers[d] = best.1;
            };
            scan(&coarse, &mut best, &mut p);
            for level in 1..=grid.refine_levels {
                let step = grid.doppler_step * grid.refine_shrink.powi(level as i32);
                let axis = local_axis(best.1, step, half, grid.doppler_range);
                scan(&axis, &mut best, &mut p);
            }
        }
    }
    p.dopplers
}

/// Label-matched errors and link metrics of one estimate.
fn score(setup: &PointSetup, rx: &ReceivedFrame, params: &ParamVector, seed: u64, iterations: usize, monotone: bool) -> TrialRecord {
    let truth = &setup.truth;
    let perm = match_to_truth(params, truth);
    let est = params.permuted(&perm);
    let errors = (0..truth.k())
        .map(|d| {
            [
                (est.azimuths[d] - truth.azimuths[d]).to_degrees(),
                (est.elevations[d] - truth.elevations[d]).to_degrees(),
                est.dopplers[d] - truth.dopplers[d],
            ]
        })
        .collect();
    let reference_phase = setup.context.defects.mean_factor().arg();
    let link = measure_link(
        rx,
        &setup.scene.array,
        &setup.frame,
        std::slice::from_ref(&est),
        reference_phase,
        NoiseTerm::Instantaneous,
    );
    TrialRecord {
        seed,
        errors,
        ser: link.ser.iter().sum::<f64>() / link.ser.len() as f64,
        sum_rate: link.sum_rate,
        iterations,
        monotone,
    }
}
