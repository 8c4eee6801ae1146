use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::AnalyticsError;
use crate::locate::{pilot_response, ModelContext, ParamVector};
use crate::scene::{fill_steering, FrameConfig, GainPhaseModel, NoiseModel, SceneConfig};
use crate::specfun::SeriesPolicy;
use crate::C64;

const GAMMA_COND_LIMIT: f64 = 1e12;
const GAMMA_RIDGE: f64 = 1e-12;
const FIM_COND_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct FimResult {
    /// 3K × 3K, ordered (φ₁..φ_K, θ₁..θ_K, f_{D,1}..f_{D,K}); radians and Hz.
    pub fim: DMatrix<f64>,
    /// Diagonal of F⁻¹ (rad², rad², Hz²); infinite when F is singular.
    pub crlb_diag: DVector<f64>,
    /// Ridge added to the diagonal of Γ (zero unless Γ was ill-conditioned).
    pub gamma_ridge: f64,
    /// Condition number of F after scaling to unit diagonal.
    pub condition: f64,
    /// F is singular or its scaled condition number exceeds 1e12.
    pub ill_conditioned: bool,
}

impl FimResult {
    pub fn k(&self) -> usize {
        self.fim.nrows() / 3
    }

    /// √CRLB for (φ_k, θ_k, f_k).
    pub fn stddevs(&self, k: usize) -> (f64, f64, f64) {
        let n = self.k();
        (
            self.crlb_diag[k].sqrt(),
            self.crlb_diag[n + k].sqrt(),
            self.crlb_diag[2 * n + k].sqrt(),
        )
    }
}

/// ∂μ/∂β_i for every parameter in FIM order, each as an MN × L matrix
/// (column l is the pilot of subframe l).
pub fn mean_derivatives(truth: &ParamVector, ctx: &ModelContext) -> Vec<DMatrix<C64>> {
    let k_count = truth.k();
    let mn = ctx.array.size();
    let l_count = ctx.subframes();
    let c = ctx.defects.mean_factor();
    let kd = 2.0 * PI * ctx.array.spacing_wavelengths;
    let mut out = vec![DMatrix::from_element(mn, l_count, C64::new(0.0, 0.0)); 3 * k_count];
    let mut a = vec![C64::new(0.0, 0.0); mn];
    for k in 0..k_count {
        let (phi, theta) = (truth.azimuths[k], truth.elevations[k]);
        fill_steering(&ctx.array, phi, theta, &mut a);
        for i in 0..mn {
            let (m, n) = ctx.array.element(i);
            let (m, n) = (m as f64, n as f64);
            // Φ and Θ: derivative of the steering phase
            let d_phi = C64::new(0.0, -kd * (-m * phi.sin() + n * phi.cos()) * theta.sin());
            let d_theta = C64::new(0.0, -kd * (m * phi.cos() + n * phi.sin()) * theta.cos());
            for l in 0..l_count {
                let base = c * a[i] * C64::from_polar(ctx.amplitudes[k], ctx.frame.doppler_phase(truth.dopplers[k], l));
                out[k][(i, l)] = d_phi * base;
                out[k_count + k][(i, l)] = d_theta * base;
                let w = 2.0 * PI * (l + 1) as f64 / ctx.frame.sampling_hz;
                out[2 * k_count + k][(i, l)] = C64::new(0.0, w) * base;
            }
        }
    }
    out
}

/// Fisher information F_ij = 2Re[∂μᴴ/∂β_i Γ⁻¹ ∂μ/∂β_j] (Γ treated as
/// parameter-independent), and its inverse diagonal.
///
/// Γ is block diagonal over antennas with blocks v·q qᴴ + σ²I (q the pilot
/// response row of that antenna), inverted blockwise by Sherman–Morrison.
pub fn fim(truth: &ParamVector, ctx: &ModelContext) -> Result<FimResult, AnalyticsError> {
    truth.validate()?;
    if truth.k() != ctx.amplitudes.len() {
        return Err(AnalyticsError::Invalid(format!(
            "{} drones but {} amplitudes",
            truth.k(),
            ctx.amplitudes.len()
        )));
    }
    let mn = ctx.array.size();
    let l_count = ctx.subframes();
    let n_par = 3 * truth.k();
    let v = ctx.defects.excess_power();
    let q = pilot_response(truth, ctx);

    let norms: Vec<f64> = (0..mn).map(|i| q.row(i).norm_squared()).collect();
    let sigma2 = ctx.noise_variance;
    let big = norms.iter().map(|&s| sigma2 + v * s).fold(0.0, f64::max);
    let small = if l_count > 1 {
        sigma2
    } else {
        norms.iter().map(|&s| sigma2 + v * s).fold(f64::INFINITY, f64::min)
    };
    let mut ridge = 0.0;
    if !(small > 0.0) || big / small > GAMMA_COND_LIMIT {
        let trace: f64 = norms.iter().map(|&s| l_count as f64 * sigma2 + v * s).sum();
        ridge = GAMMA_RIDGE * trace / (mn * l_count) as f64;
        if ridge <= 0.0 {
            return Err(AnalyticsError::Invalid("Γ is zero: no noise and no defect spread".into()));
        }
    }
    let s2 = sigma2 + ridge;

    let derivs = mean_derivatives(truth, ctx);
    let mut f = DMatrix::zeros(n_par, n_par);
    for i in 0..mn {
        let qi: Vec<C64> = q.row(i).iter().copied().collect();
        let denom = s2 + v * norms[i];
        // Γ_i⁻¹ x = (x − v q (qᴴx)/denom)/σ²
        let solved: Vec<Vec<C64>> = derivs
            .iter()
            .map(|d| {
                let x: Vec<C64> = d.row(i).iter().copied().collect();
                let qx: C64 = qi.iter().zip(&x).map(|(a, b)| a.conj() * b).sum();
                x.iter().zip(&qi).map(|(xv, qv)| (xv - qv * qx * (v / denom)) / s2).collect()
            })
            .collect();
        for a in 0..n_par {
            for b in a..n_par {
                let val: C64 = derivs[a].row(i).iter().zip(&solved[b]).map(|(x, y)| x.conj() * y).sum();
                f[(a, b)] += 2.0 * val.re;
            }
        }
    }
    for a in 0..n_par {
        for b in 0..a {
            f[(a, b)] = f[(b, a)];
        }
    }

    let diag: Vec<f64> = (0..n_par).map(|i| f[(i, i)]).collect();
    let mut crlb = DVector::from_element(n_par, f64::INFINITY);
    let mut condition = f64::INFINITY;
    if diag.iter().all(|&d| d > 0.0) {
        let scale: Vec<f64> = diag.iter().map(|d| 1.0 / d.sqrt()).collect();
        let scaled = DMatrix::from_fn(n_par, n_par, |r, c| f[(r, c)] * scale[r] * scale[c]);
        let eig = scaled.clone().symmetric_eigen();
        let lo = eig.eigenvalues.min();
        let hi = eig.eigenvalues.max();
        condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if lo > 0.0 {
            if let Some(inv) = scaled.try_inverse() {
                for i in 0..n_par {
                    crlb[i] = inv[(i, i)] * scale[i] * scale[i];
                }
            }
        }
    }
    Ok(FimResult {
        fim: f,
        crlb_diag: crlb,
        gamma_ridge: ridge,
        condition,
        ill_conditioned: !(condition <= FIM_COND_LIMIT),
    })
}

/// Convenience wrapper building the model context from scenario pieces.
pub fn fim_for_scene(
    scene: &SceneConfig,
    frame: &FrameConfig,
    error: &GainPhaseModel,
    noise: &NoiseModel,
    policy: &SeriesPolicy,
) -> Result<FimResult, AnalyticsError> {
    let ctx = ModelContext::new(scene, frame, error, noise.variance(scene), policy)?;
    fim(&ParamVector::from_scene(scene), &ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::locate::build_moments;
    use crate::scene::{ArrayConfig, DroneTruth};

    fn scene(drones: Vec<DroneTruth>, m: usize) -> SceneConfig {
        SceneConfig::new(ArrayConfig::half_wavelength(m, m), drones).unwrap()
    }

    fn frame(l: usize) -> FrameConfig {
        FrameConfig {
            subframes: l,
            ..FrameConfig::default()
        }
    }

    #[test]
    fn derivatives_match_central_differences() {
        let s = scene(
            vec![
                DroneTruth::from_degrees(40.0, 40.0, 4000.0),
                DroneTruth::from_degrees(60.0, 60.0, 6000.0).with_power(0.7),
            ],
            4,
        );
        let err = GainPhaseModel::stochastic(0.8, 0.09, 10.0);
        let ctx = ModelContext::new(&s, &frame(5), &err, 1e-13, &SeriesPolicy::default()).unwrap();
        let truth = ParamVector::from_scene(&s);
        let d = mean_derivatives(&truth, &ctx);
        let flat = truth.to_flat();
        for (p, deriv) in d.iter().enumerate() {
            let h = if p / truth.k() == 2 { 1e-2 } else { 1e-6 };
            let mut up = flat.clone();
            let mut dn = flat.clone();
            up[p] += h;
            dn[p] -= h;
            let mu_up = build_moments(&ParamVector::from_flat(&up), &ctx).unwrap().mean;
            let mu_dn = build_moments(&ParamVector::from_flat(&dn), &ctx).unwrap().mean;
            let fd = (mu_up - mu_dn) / C64::new(2.0 * h, 0.0);
            let an = DVector::from_iterator(fd.len(), (0..fd.len()).map(|r| deriv[(r % 16, r / 16)]));
            let rel = (fd - &an).norm() / an.norm();
            assert!(rel < 1e-6, "parameter {p}: {rel}");
        }
    }

    #[test]
    fn fim_is_symmetric_psd_and_crlb_shrinks_with_snr() {
        let s = scene(vec![DroneTruth::from_degrees(20.0, 20.0, 2000.0)], 4);
        let err = GainPhaseModel::stochastic(0.5, 1.0, 1000.0);
        let mut last = f64::INFINITY;
        for snr in [0.0, 5.0, 10.0, 15.0, 20.0] {
            let r = fim_for_scene(&s, &frame(10), &err, &NoiseModel::SnrDb(snr), &SeriesPolicy::default()).unwrap();
            assert!((&r.fim - r.fim.transpose()).norm() <= 1e-12 * r.fim.norm());
            assert!(r.fim.clone().symmetric_eigen().eigenvalues.min() > -1e-9 * r.fim.norm());
            assert!(r.crlb_diag.iter().all(|&c| c > 0.0));
            assert!(r.crlb_diag[0] < last);
            last = r.crlb_diag[0];
        }
    }

    #[test]
    fn colocated_drones_flag_ill_conditioning() {
        let s = scene(
            vec![
                DroneTruth::from_degrees(30.0, 30.0, 3000.0),
                DroneTruth::from_degrees(30.0, 30.0, 3000.0),
            ],
            4,
        );
        let r = fim_for_scene(&s, &frame(4), &GainPhaseModel::Ideal, &NoiseModel::SnrDb(10.0), &SeriesPolicy::default())
            .unwrap();
        assert!(r.ill_conditioned);
    }

    #[test]
    fn noiseless_ideal_gamma_gets_a_ridge() {
        let s = scene(vec![DroneTruth::from_degrees(30.0, 30.0, 3000.0)], 3);
        let r = fim_for_scene(&s, &frame(3), &GainPhaseModel::Ideal, &NoiseModel::Variance(0.0), &SeriesPolicy::default());
        // Γ = 0 when there is neither noise nor defect spread
        assert!(r.is_err());
        let err = GainPhaseModel::stochastic(1.0, 0.1, 50.0);
        let r = fim_for_scene(&s, &frame(3), &err, &NoiseModel::Variance(0.0), &SeriesPolicy::default()).unwrap();
        assert!(r.gamma_ridge > 0.0);
    }
}
