use nalgebra::{DMatrix, DVector};

use super::{LocateError, ModelContext, ParamVector};
use crate::scene::fill_steering;
use crate::C64;

/// Mean and covariance of the stacked pilots ȳ under hypothesis β.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentModel {
    pub mean: DVector<C64>,
    pub covariance: DMatrix<C64>,
}

/// Q_{i,l} = Σ_k √P_k η_k a_{k,i} e^{jω_k(l+1)}: the defect-free pilot
/// response, MN × L.
pub(crate) fn pilot_response(params: &ParamVector, ctx: &ModelContext) -> DMatrix<C64> {
    let mn = ctx.array.size();
    let l_count = ctx.subframes();
    let mut q = DMatrix::from_element(mn, l_count, C64::new(0.0, 0.0));
    let mut a = vec![C64::new(0.0, 0.0); mn];
    for k in 0..params.k() {
        fill_steering(&ctx.array, params.azimuths[k], params.elevations[k], &mut a);
        for l in 0..l_count {
            let rot = C64::from_polar(ctx.amplitudes[k], ctx.frame.doppler_phase(params.dopplers[k], l));
            for i in 0..mn {
                q[(i, l)] += a[i] * rot;
            }
        }
    }
    q
}

/// μ(β) and Γ(β) over the MN·L stacked pilot vector.
///
/// Entries on different antennas carry independent defects, so their
/// covariance is E[α]²|E[e^{jΔδ}]|² Q₁Q₂* − μ₁μ₂* (zero in exact
/// arithmetic); entries on the same antenna get E[α²] Q₁Q₂* − μ₁μ₂*, plus σ²
/// on the diagonal.
pub fn build_moments(params: &ParamVector, ctx: &ModelContext) -> Result<MomentModel, LocateError> {
    params.validate()?;
    if params.k() != ctx.amplitudes.len() {
        return Err(LocateError::Invalid(format!(
            "{} hypothesized drones but {} amplitudes",
            params.k(),
            ctx.amplitudes.len()
        )));
    }
    let mn = ctx.array.size();
    let l_count = ctx.subframes();
    let q = pilot_response(params, ctx);
    let c = ctx.defects.mean_factor();
    let n = mn * l_count;
    let qflat: Vec<C64> = (0..n).map(|idx| q[(idx % mn, idx / mn)]).collect();
    let mean = DVector::from_iterator(n, qflat.iter().map(|v| c * v));

    let e_a = ctx.defects.gain[1];
    let e_a2 = ctx.defects.gain[2];
    let p1 = ctx.defects.phase(1);
    let p1c = ctx.defects.phase(-1);
    let covariance = DMatrix::from_fn(n, n, |r, s| {
        let same_antenna = r % mn == s % mn;
        let cross = qflat[r] * qflat[s].conj();
        let second = if same_antenna {
            cross * e_a2
        } else {
            cross * (e_a * e_a) * p1 * p1c
        };
        let mut g = second - mean[r] * mean[s].conj();
        if r == s {
            g += ctx.noise_variance;
        }
        g
    });
    Ok(MomentModel { mean, covariance })
}
