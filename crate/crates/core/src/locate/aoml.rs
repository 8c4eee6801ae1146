use nalgebra::{DMatrix, DVector};

use super::mle::{as_snapshots, mle_estimate, objective_snapshots, Weighting};
use super::search::{SourceFit, SteeringTable};
use super::{local_axis, GridSpec, LocateError, ModelContext, ParamVector, SolverConfig};
use crate::scene::fill_steering;
use crate::C64;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub params: ParamVector,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AomlOutcome {
    pub params: ParamVector,
    /// Entry 0 is the initial point, then one entry per iteration.
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub converged: bool,
}

fn source_mean(ctx: &ModelContext, k: usize, p: (f64, f64, f64)) -> DMatrix<C64> {
    let mn = ctx.array.size();
    let mut a = vec![C64::new(0.0, 0.0); mn];
    fill_steering(&ctx.array, p.0, p.1, &mut a);
    let coef = ctx.defects.mean_factor() * ctx.amplitudes[k];
    DMatrix::from_fn(mn, ctx.subframes(), |i, l| {
        a[i] * coef * C64::from_polar(1.0, ctx.frame.doppler_phase(p.2, l))
    })
}

#[derive(Clone, Copy)]
enum Block {
    Angles,
    Doppler,
}

/// Local coarse-to-fine search over one block of one drone's parameters;
/// returns the best point found, which is never worse than `cur`.
fn block_step(fit: &SourceFit, cur: (f64, f64, f64), block: Block, grid: &GridSpec) -> (f64, f64, f64) {
    let half = (1.0 / grid.refine_shrink).round().max(1.0) as usize;
    let mut best = cur;
    let mut best_score = fit.search_box(&[cur.0], &[cur.1], &[cur.2]).score;
    for level in 0..=grid.refine_levels {
        let s = grid.refine_shrink.powi(level as i32);
        let h = if level == 0 { 2 } else { half };
        let ax = |c: f64, step: f64, range: (f64, f64)| {
            if range.1 > range.0 {
                local_axis(c, step * s, h, range)
            } else {
                vec![c]
            }
        };
        let (az, el, dop) = match block {
            Block::Angles => (
                ax(best.0, grid.azimuth_step, grid.azimuth_range),
                ax(best.1, grid.elevation_step, grid.elevation_range),
                vec![best.2],
            ),
            Block::Doppler => (vec![best.0], vec![best.1], ax(best.2, grid.doppler_step, grid.doppler_range)),
        };
        let b = fit.search_box(&az, &el, &dop);
        if b.score > best_score {
            best_score = b.score;
            best = b.point;
        }
    }
    best
}

/// Alternating-optimisation ML: each iteration updates every drone's
/// (azimuth, elevation) with Doppler fixed, then every drone's Doppler with
/// angles fixed. Stops when successive iterates differ by less than
/// `solver.epsilon` in normalized units (degrees, 100 Hz).
///
/// Without `init` the coarse-grid MLE point is used.
pub fn aoml_estimate(
    obs: &DVector<C64>,
    grid: &GridSpec,
    solver: &SolverConfig,
    ctx: &ModelContext,
    init: Option<&ParamVector>,
    table: Option<&SteeringTable>,
) -> Result<AomlOutcome, LocateError> {
    grid.validate()?;
    let y = as_snapshots(obs, ctx)?;
    let k_count = ctx.amplitudes.len();
    let start = match init {
        Some(p) => {
            p.validate()?;
            if p.k() != k_count {
                return Err(LocateError::Invalid("initial point has the wrong drone count".into()));
            }
            p.clone()
        }
        None => {
            let coarse = GridSpec {
                refine_levels: 0,
                ..grid.clone()
            };
            mle_estimate(obs, &coarse, ctx, Weighting::Unweighted, table)?.params
        }
    };
    let mut pts: Vec<(f64, f64, f64)> = (0..k_count)
        .map(|k| (start.azimuths[k], start.elevations[k], start.dopplers[k]))
        .collect();
    let mut mu: Vec<DMatrix<C64>> = (0..k_count).map(|k| source_mean(ctx, k, pts[k])).collect();
    let c = ctx.defects.mean_factor();
    let mut trace = vec![TraceEntry {
        objective: objective_snapshots(&y, &start, ctx, Weighting::Unweighted),
        params: start,
    }];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < solver.max_iters {
        iterations += 1;
        let prev = trace.last().map(|t| t.params.clone()).unwrap_or_else(|| unreachable!());
        for block in [Block::Angles, Block::Doppler] {
            for k in 0..k_count {
                let mut r = y.clone();
                for (p, m) in mu.iter().enumerate() {
                    if p != k {
                        r -= m;
                    }
                }
                let fit = SourceFit {
                    array: &ctx.array,
                    residual: &r,
                    sampling_hz: ctx.frame.sampling_hz,
                    coef: c * ctx.amplitudes[k],
                };
                let next = block_step(&fit, pts[k], block, grid);
                if next != pts[k] {
                    pts[k] = next;
                    mu[k] = source_mean(ctx, k, next);
                }
            }
        }
        let params = ParamVector {
            azimuths: pts.iter().map(|p| p.0).collect(),
            elevations: pts.iter().map(|p| p.1).collect(),
            dopplers: pts.iter().map(|p| p.2).collect(),
        };
        let step = params.normalized_distance(&prev);
        trace.push(TraceEntry {
            objective: objective_snapshots(&y, &params, ctx, Weighting::Unweighted),
            params,
        });
        if step < solver.epsilon {
            converged = true;
            break;
        }
    }
    let params = trace.last().map(|t| t.params.clone()).unwrap_or_else(|| unreachable!());
    Ok(AomlOutcome {
        params,
        trace,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{synthesize_frame, ArrayConfig, DroneTruth, FrameConfig, GainPhaseModel, NoiseModel, SceneConfig};
    use crate::specfun::SeriesPolicy;

    fn setup(noise: NoiseModel, seed: u64) -> (DVector<C64>, ModelContext, ParamVector) {
        let scene = SceneConfig::new(
            ArrayConfig::half_wavelength(4, 4),
            vec![
                DroneTruth::from_degrees(20.0, 20.0, 2000.0),
                DroneTruth::from_degrees(55.0, 40.0, 6000.0),
            ],
        )
        .unwrap();
        let frame = FrameConfig {
            subframes: 3,
            symbols_per_subframe: 0,
            ..FrameConfig::default()
        };
        let err = GainPhaseModel::stochastic(0.5, 1.0, 1000.0);
        let rx = synthesize_frame(&scene, &frame, &err, &noise, seed).unwrap();
        let ctx = ModelContext::new(&scene, &frame, &err, rx.noise_variance, &SeriesPolicy::default()).unwrap();
        (rx.stacked_pilots(), ctx, ParamVector::from_scene(&scene))
    }

    #[test]
    fn trace_is_non_increasing() {
        let (y, ctx, _) = setup(NoiseModel::SnrDb(5.0), 11);
        let out = aoml_estimate(&y, &GridSpec::default(), &SolverConfig::default(), &ctx, None, None).unwrap();
        for w in out.trace.windows(2) {
            assert!(w[1].objective <= w[0].objective);
        }
        assert_eq!(out.trace.len(), out.iterations + 1);
    }

    #[test]
    fn noiseless_ideal_start_at_truth_stops_after_one_iteration() {
        let scene = SceneConfig::new(
            ArrayConfig::half_wavelength(4, 4),
            vec![DroneTruth::from_degrees(30.0, 25.0, 3000.0)],
        )
        .unwrap();
        let frame = FrameConfig {
            subframes: 2,
            symbols_per_subframe: 0,
            ..FrameConfig::default()
        };
        let err = GainPhaseModel::Ideal;
        let rx = synthesize_frame(&scene, &frame, &err, &NoiseModel::Variance(0.0), 1).unwrap();
        let ctx = ModelContext::new(&scene, &frame, &err, 0.0, &SeriesPolicy::default()).unwrap();
        let truth = ParamVector::from_scene(&scene);
        let out = aoml_estimate(
            &rx.stacked_pilots(),
            &GridSpec::default(),
            &SolverConfig::default(),
            &ctx,
            Some(&truth),
            None,
        )
        .unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        assert_eq!(out.params, truth);
    }
}
