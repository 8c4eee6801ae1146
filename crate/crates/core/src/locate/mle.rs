use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use super::moments::pilot_response;
use super::search::{local_maxima, SourceFit, SteeringTable};
use super::{local_axis, GridSpec, LocateError, ModelContext, ParamVector};
use crate::scene::fill_steering;
use crate::C64;

/// Which likelihood the search minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// ‖ȳ − μ(β)‖².
    #[default]
    Unweighted,
    /// (ȳ − μ)ᴴ Γ(β)⁻¹ (ȳ − μ), used as a local polish after the
    /// unweighted search. Falls back to unweighted when σ² = 0.
    Covariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleOutcome {
    pub params: ParamVector,
    /// Objective at `params` under the requested weighting.
    pub objective: f64,
    /// Optimum touched the edge of the search range on some axis.
    pub boundary: bool,
}

pub(crate) fn as_snapshots(obs: &DVector<C64>, ctx: &ModelContext) -> Result<DMatrix<C64>, LocateError> {
    let mn = ctx.array.size();
    let want = mn * ctx.subframes();
    if obs.len() != want || want == 0 {
        return Err(LocateError::ObservationShape { got: obs.len(), want });
    }
    Ok(DMatrix::from_column_slice(mn, ctx.subframes(), obs.as_slice()))
}

/// Objective of hypothesis `params` for the stacked observation.
pub fn objective(
    obs: &DVector<C64>,
    params: &ParamVector,
    ctx: &ModelContext,
    weighting: Weighting,
) -> Result<f64, LocateError> {
    let y = as_snapshots(obs, ctx)?;
    Ok(objective_snapshots(&y, params, ctx, weighting))
}

pub(crate) fn objective_snapshots(y: &DMatrix<C64>, params: &ParamVector, ctx: &ModelContext, weighting: Weighting) -> f64 {
    let q = pilot_response(params, ctx);
    let c = ctx.defects.mean_factor();
    let r = y - q.map(|v| v * c);
    let s2 = ctx.noise_variance;
    if weighting == Weighting::Unweighted || s2 <= 0.0 {
        return r.norm_squared();
    }
    // Γ is block diagonal per antenna with blocks v·q_i q_iᴴ + σ²I.
    let v = ctx.defects.excess_power();
    let mut total = 0.0;
    for i in 0..y.nrows() {
        let mut rr = 0.0;
        let mut qq = 0.0;
        let mut qr = C64::new(0.0, 0.0);
        for l in 0..y.ncols() {
            rr += r[(i, l)].norm_sqr();
            qq += q[(i, l)].norm_sqr();
            qr += q[(i, l)].conj() * r[(i, l)];
        }
        total += (rr - v * qr.norm_sqr() / (s2 + v * qq)) / s2;
    }
    total
}

/// Mean of one drone's pilots, MN × L.
fn source_mean(ctx: &ModelContext, k: usize, az: f64, el: f64, f: f64) -> DMatrix<C64> {
    let mn = ctx.array.size();
    let mut a = vec![C64::new(0.0, 0.0); mn];
    fill_steering(&ctx.array, az, el, &mut a);
    let coef = ctx.defects.mean_factor() * ctx.amplitudes[k];
    DMatrix::from_fn(mn, ctx.subframes(), |i, l| {
        a[i] * coef * C64::from_polar(1.0, ctx.frame.doppler_phase(f, l))
    })
}

pub(crate) struct Axes {
    pub az: Vec<f64>,
    pub el: Vec<f64>,
    pub dop: Vec<f64>,
}

fn on_edge(x: f64, range: (f64, f64), tol: f64) -> bool {
    range.1 > range.0 && (x - range.0 < tol || range.1 - x < tol)
}

fn touches_boundary(p: &ParamVector, grid: &GridSpec) -> bool {
    let (sa, se, sd) = grid.finest_steps();
    (0..p.k()).any(|k| {
        on_edge(p.azimuths[k], grid.azimuth_range, 0.5 * sa)
            || on_edge(p.elevations[k], grid.elevation_range, 0.5 * se)
            || on_edge(p.dopplers[k], grid.doppler_range, 0.5 * sd)
    })
}

/// Coarse-to-fine refinement of a single source around `start`: level i uses
/// step₀·shrinkⁱ over ±step_{i−1}. Each level's box contains the current
/// point, so the score never decreases.
fn refine_source(fit: &SourceFit, start: (f64, f64, f64), grid: &GridSpec, first_level: usize) -> (f64, f64, f64) {
    let half = (1.0 / grid.refine_shrink).round().max(1.0) as usize;
    let mut cur = start;
    for level in first_level..=grid.refine_levels {
        let s = grid.refine_shrink.powi(level as i32);
        // re-centre while the optimum sits on the box edge (ridges)
        for _ in 0..MAX_RECENTRE {
            let axes = local_axes(cur, grid, s, half);
            let b = fit.search_box(&axes.az, &axes.el, &axes.dop);
            cur = b.point;
            if !b.on_edge(&axes) {
                break;
            }
        }
    }
    cur
}

const MAX_RECENTRE: usize = 8;

fn local_axes(c: (f64, f64, f64), grid: &GridSpec, scale: f64, half: usize) -> Axes {
    let axis = |center: f64, step: f64, range: (f64, f64)| {
        if range.1 > range.0 {
            local_axis(center, step * scale, half, range)
        } else {
            vec![center]
        }
    };
    Axes {
        az: axis(c.0, grid.azimuth_step, grid.azimuth_range),
        el: axis(c.1, grid.elevation_step, grid.elevation_range),
        dop: axis(c.2, grid.doppler_step, grid.doppler_range),
    }
}

/// Grid maximum-likelihood estimate of β from the stacked pilots.
///
/// One drone: exhaustive coarse grid (ties resolve to the lowest
/// (azimuth, elevation, Doppler) index), then coarse-to-fine refinement.
/// Several drones: the strongest peaks of the amplitude-free coarse map are
/// assigned jointly to the labelled drones, then block-coordinate descent
/// refines one drone at a time against the residual of the others.
pub fn mle_estimate(
    obs: &DVector<C64>,
    grid: &GridSpec,
    ctx: &ModelContext,
    weighting: Weighting,
    table: Option<&SteeringTable>,
) -> Result<MleOutcome, LocateError> {
    grid.validate()?;
    let y = as_snapshots(obs, ctx)?;
    let k_count = ctx.amplitudes.len();
    if k_count == 0 {
        return Err(LocateError::Invalid("no drones to estimate".into()));
    }
    let owned;
    let table = match table {
        Some(t) if t.matches(&ctx.array, grid) => t,
        _ => {
            owned = SteeringTable::new(&ctx.array, grid);
            &owned
        }
    };
    let dops = grid.dopplers();
    let c = ctx.defects.mean_factor();

    let mut est = if k_count == 1 {
        let fit = SourceFit {
            array: &ctx.array,
            residual: &y,
            sampling_hz: ctx.frame.sampling_hz,
            coef: c * ctx.amplitudes[0],
        };
        let coarse = fit.search_box_with(table.azimuths(), table.elevations(), &dops, Some(table));
        let p = refine_source(&fit, coarse.point, grid, 1);
        ParamVector {
            azimuths: vec![p.0],
            elevations: vec![p.1],
            dopplers: vec![p.2],
        }
    } else {
        multi_source(&y, grid, ctx, table, &dops)
    };

    if weighting == Weighting::Covariance && ctx.noise_variance > 0.0 {
        est = weighted_polish(&y, est, grid, ctx);
    }
    let objective = objective_snapshots(&y, &est, ctx, weighting);
    let boundary = touches_boundary(&est, grid);
    Ok(MleOutcome {
        params: est,
        objective,
        boundary,
    })
}

fn multi_source(y: &DMatrix<C64>, grid: &GridSpec, ctx: &ModelContext, table: &SteeringTable, dops: &[f64]) -> ParamVector {
    let k_count = ctx.amplitudes.len();
    let c = ctx.defects.mean_factor();
    let fit = SourceFit {
        array: &ctx.array,
        residual: y,
        sampling_hz: ctx.frame.sampling_hz,
        coef: C64::new(1.0, 0.0),
    };
    let map = fit.peak_map(table, dops);
    let rows = table.azimuths().len();
    let cols = table.elevations().len();
    let heights: Vec<f64> = map.iter().map(|m| m.0).collect();
    let mut peaks = local_maxima(&heights, rows, cols);
    peaks.truncate(k_count + 2);
    let candidates: Vec<(f64, f64, f64)> = peaks
        .iter()
        .map(|&p| (table.azimuths()[p / cols], table.elevations()[p % cols], dops[map[p].1]))
        .collect();

    // joint assignment of candidates to labelled drones
    let means: Vec<Vec<DMatrix<C64>>> = (0..k_count)
        .map(|k| candidates.iter().map(|&(a, e, f)| source_mean(ctx, k, a, e, f)).collect())
        .collect();
    let assignments: Vec<Vec<usize>> = if candidates.len() >= k_count {
        (0..candidates.len()).permutations(k_count).collect()
    } else {
        (0..k_count)
            .map(|_| 0..candidates.len())
            .multi_cartesian_product()
            .collect()
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for asg in assignments {
        let mut r = y.clone();
        for (k, &ci) in asg.iter().enumerate() {
            r -= &means[k][ci];
        }
        let v = r.norm_squared();
        if best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, asg));
        }
    }
    let asg = best.map(|b| b.1).unwrap_or_else(|| vec![0; k_count]);
    let pts: Vec<(f64, f64, f64)> = asg.iter().map(|&ci| candidates[ci]).collect();
    let mu: Vec<DMatrix<C64>> = (0..k_count).map(|k| means[k][asg[k]].clone()).collect();

    let (mut pts, mut mu) = descend(y, grid, ctx, pts, mu);
    let mut best_obj = residual_norm(y, &mu);
    // restart from a full-grid search per drone against the others'
    // residual; recovers a weak drone hidden under a strong drone's
    // sidelobes. The restart is kept only if it ends at a lower objective.
    for k in 0..k_count {
        let r = residual_except(y, &mu, k);
        let fit = SourceFit {
            array: &ctx.array,
            residual: &r,
            sampling_hz: ctx.frame.sampling_hz,
            coef: c * ctx.amplitudes[k],
        };
        let coarse = fit.search_box_with(table.azimuths(), table.elevations(), dops, Some(table));
        let near = |a: f64, b: f64, step: f64| (a - b).abs() <= 2.0 * step;
        let cur = pts[k];
        if near(coarse.point.0, cur.0, grid.azimuth_step)
            && near(coarse.point.1, cur.1, grid.elevation_step)
            && near(coarse.point.2, cur.2, grid.doppler_step)
        {
            continue;
        }
        let mut p2 = pts.clone();
        let mut m2 = mu.clone();
        p2[k] = coarse.point;
        m2[k] = source_mean(ctx, k, coarse.point.0, coarse.point.1, coarse.point.2);
        let (p2, m2) = descend(y, grid, ctx, p2, m2);
        let obj = residual_norm(y, &m2);
        if obj < best_obj {
            best_obj = obj;
            pts = p2;
            mu = m2;
        }
    }
    ParamVector {
        azimuths: pts.iter().map(|p| p.0).collect(),
        elevations: pts.iter().map(|p| p.1).collect(),
        dopplers: pts.iter().map(|p| p.2).collect(),
    }
}

fn residual_except(y: &DMatrix<C64>, mu: &[DMatrix<C64>], k: usize) -> DMatrix<C64> {
    let mut r = y.clone();
    for (p, m) in mu.iter().enumerate() {
        if p != k {
            r -= m;
        }
    }
    r
}

fn residual_norm(y: &DMatrix<C64>, mu: &[DMatrix<C64>]) -> f64 {
    let mut r = y.clone();
    for m in mu {
        r -= m;
    }
    r.norm_squared()
}

/// Block-coordinate descent: each drone in turn is refined locally against
/// the residual of the others until no drone moves.
fn descend(
    y: &DMatrix<C64>,
    grid: &GridSpec,
    ctx: &ModelContext,
    mut pts: Vec<(f64, f64, f64)>,
    mut mu: Vec<DMatrix<C64>>,
) -> (Vec<(f64, f64, f64)>, Vec<DMatrix<C64>>) {
    let c = ctx.defects.mean_factor();
    let half_coarse = 2;
    for _sweep in 0..20 {
        let mut changed = false;
        for k in 0..pts.len() {
            let r = residual_except(y, &mu, k);
            let fit = SourceFit {
                array: &ctx.array,
                residual: &r,
                sampling_hz: ctx.frame.sampling_hz,
                coef: c * ctx.amplitudes[k],
            };
            let cur = pts[k];
            let cur_score = fit.search_box(&[cur.0], &[cur.1], &[cur.2]).score;
            let axes = local_axes(cur, grid, 1.0, half_coarse);
            let start = fit.search_box(&axes.az, &axes.el, &axes.dop).point;
            let cand = refine_source(&fit, start, grid, 1);
            let cand_score = fit.search_box(&[cand.0], &[cand.1], &[cand.2]).score;
            if cand_score > cur_score && cand != cur {
                pts[k] = cand;
                mu[k] = source_mean(ctx, k, cand.0, cand.1, cand.2);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (pts, mu)
}

/// Local per-drone descent on the covariance-weighted objective, one
/// refinement level at a time.
fn weighted_polish(y: &DMatrix<C64>, mut est: ParamVector, grid: &GridSpec, ctx: &ModelContext) -> ParamVector {
    let mut best = objective_snapshots(y, &est, ctx, Weighting::Covariance);
    for level in 1..=grid.refine_levels {
        let s = grid.refine_shrink.powi(level as i32);
        for _pass in 0..6 {
            let mut changed = false;
            for k in 0..est.k() {
                let cur = (est.azimuths[k], est.elevations[k], est.dopplers[k]);
                let axes = local_axes(cur, grid, s, 2);
                for &a in &axes.az {
                    for &e in &axes.el {
                        for &f in &axes.dop {
                            let mut trial = est.clone();
                            trial.azimuths[k] = a;
                            trial.elevations[k] = e;
                            trial.dopplers[k] = f;
                            let v = objective_snapshots(y, &trial, ctx, Weighting::Covariance);
                            if v < best {
                                best = v;
                                est = trial;
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }
    est
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{
        synthesize_frame, ArrayConfig, DroneTruth, FrameConfig, GainPhaseModel, NoiseModel, SceneConfig,
    };
    use crate::specfun::SeriesPolicy;

    fn setup(drones: Vec<DroneTruth>, l: usize, noise: NoiseModel, seed: u64) -> (DVector<C64>, ModelContext, SceneConfig) {
        let scene = SceneConfig::new(ArrayConfig::half_wavelength(4, 4), drones).unwrap();
        let frame = FrameConfig {
            subframes: l,
            symbols_per_subframe: 0,
            ..FrameConfig::default()
        };
        let err = GainPhaseModel::Ideal;
        let rx = synthesize_frame(&scene, &frame, &err, &noise, seed).unwrap();
        let ctx = ModelContext::new(&scene, &frame, &err, rx.noise_variance, &SeriesPolicy::default()).unwrap();
        (rx.stacked_pilots(), ctx, scene)
    }

    #[test]
    fn noiseless_on_grid_truth_is_recovered_exactly() {
        let (y, ctx, scene) = setup(vec![DroneTruth::from_degrees(20.0, 30.0, 2000.0)], 3, NoiseModel::Variance(0.0), 1);
        let out = mle_estimate(&y, &GridSpec::default(), &ctx, Weighting::Unweighted, None).unwrap();
        let truth = ParamVector::from_scene(&scene);
        assert!(out.params.normalized_distance(&truth) < 1e-9, "{:?}", out.params);
        assert!(out.objective < 1e-20);
        assert!(!out.boundary);
    }

    #[test]
    fn two_drones_noiseless() {
        let (y, ctx, scene) = setup(
            vec![
                DroneTruth::from_degrees(20.0, 20.0, 2000.0),
                DroneTruth::from_degrees(60.0, 40.0, 5000.0),
            ],
            4,
            NoiseModel::Variance(0.0),
            2,
        );
        let out = mle_estimate(&y, &GridSpec::default(), &ctx, Weighting::Unweighted, None).unwrap();
        let truth = ParamVector::from_scene(&scene);
        // equal amplitudes leave the labels unidentifiable
        let est = out.params.permuted(&super::super::match_to_truth(&out.params, &truth));
        assert!(est.normalized_distance(&truth) < 1e-6, "{:?}", out.params);
    }

    #[test]
    fn off_grid_truth_is_refined_below_the_coarse_step() {
        let (y, ctx, scene) = setup(vec![DroneTruth::from_degrees(20.37, 30.61, 2043.0)], 3, NoiseModel::Variance(0.0), 3);
        let out = mle_estimate(&y, &GridSpec::default(), &ctx, Weighting::Unweighted, None).unwrap();
        let truth = ParamVector::from_scene(&scene);
        assert!(out.params.normalized_distance(&truth) < 0.05, "{:?}", out.params);
    }

    #[test]
    fn wrong_length_is_rejected() {
        let (_, ctx, _) = setup(vec![DroneTruth::from_degrees(20.0, 30.0, 2000.0)], 2, NoiseModel::Variance(0.0), 1);
        let y = DVector::from_element(5, C64::new(0.0, 0.0));
        assert!(matches!(
            mle_estimate(&y, &GridSpec::default(), &ctx, Weighting::Unweighted, None),
            Err(LocateError::ObservationShape { got: 5, .. })
        ));
    }

    #[test]
    fn weighted_objective_matches_dense_quadratic_form() {
        let scene = SceneConfig::new(
            ArrayConfig::half_wavelength(2, 2),
            vec![DroneTruth::from_degrees(25.0, 35.0, 1500.0)],
        )
        .unwrap();
        let frame = FrameConfig {
            subframes: 3,
            symbols_per_subframe: 0,
            ..FrameConfig::default()
        };
        let err = GainPhaseModel::stochastic(0.5, 1.0, 5.0);
        let rx = synthesize_frame(&scene, &frame, &err, &NoiseModel::SnrDb(5.0), 9).unwrap();
        let ctx = ModelContext::new(&scene, &frame, &err, rx.noise_variance, &SeriesPolicy::default()).unwrap();
        let y = rx.stacked_pilots();
        let hyp = ParamVector {
            azimuths: vec![0.45],
            elevations: vec![0.6],
            dopplers: vec![1400.0],
        };
        let m = super::super::build_moments(&hyp, &ctx).unwrap();
        let r = &y - &m.mean;
        let gi = m.covariance.clone().try_inverse().unwrap();
        let dense = (r.adjoint() * gi * &r)[(0, 0)].re;
        let fast = objective(&y, &hyp, &ctx, Weighting::Covariance).unwrap();
        assert!((dense - fast).abs() < 1e-8 * dense.abs(), "{dense} {fast}");
    }
}
