use std::f64::consts::LN_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::expect::{channel_moment_2, channel_moment_4, noise_moments, EstimatorSpread, SteeringStats};
use super::AnalyticsError;
use crate::oracle::MeanEstimate;
use crate::scene::{complex_gaussian, defects_from_rng, fill_steering, DefectMoments, GainPhaseModel, SceneConfig};
use crate::specfun::SeriesPolicy;
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateMethod {
    /// log₂(1 + E[γ_x]/E[γ_y]).
    FirstOrder,
    /// Second-order Taylor expansion of E[log₂(1+γ)] with second-order
    /// approximations of E[γ] and E[γ²].
    SecondOrder,
}

/// Moments of γ_k = γ_x/γ_y for one drone and both rate approximations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroneRate {
    pub e_gx: f64,
    pub e_gy: f64,
    pub var_gx: f64,
    pub var_gy: f64,
    pub cov: f64,
    pub e_gamma: f64,
    pub e_gamma2: f64,
    pub rate_first: f64,
    pub rate_second: f64,
    /// A variance (or E[γ²] − E[γ]²) came out negative beyond rounding.
    pub negative_variance: bool,
}

impl DroneRate {
    pub fn rate(&self, method: RateMethod) -> f64 {
        match method {
            RateMethod::FirstOrder => self.rate_first,
            RateMethod::SecondOrder => self.rate_second,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdrPrediction {
    pub method: RateMethod,
    pub drones: Vec<DroneRate>,
    /// R_k under `method`.
    pub rates: Vec<f64>,
    pub sum_rate: f64,
    pub spreads: Vec<EstimatorSpread>,
    pub negative_variance: bool,
}

/// Relative slack below zero tolerated before a variance is flagged.
const VAR_SLACK: f64 = 1e-9;

/// Average rate of every drone for one data slot, with ĥ_k built from
/// Gaussian angle estimates of spread `spreads[k]`. Doppler estimates do not
/// enter: the Doppler factors of ĥ_k and h_ς cancel in |ĥ_kᴴh_ς|².
pub fn sdr_predict(
    scene: &SceneConfig,
    defects: &DefectMoments,
    sigma2: f64,
    spreads: &[EstimatorSpread],
    method: RateMethod,
    policy: &SeriesPolicy,
) -> Result<SdrPrediction, AnalyticsError> {
    let k_count = scene.k();
    if spreads.len() != k_count {
        return Err(AnalyticsError::Invalid(format!(
            "{} spreads for {k_count} drones",
            spreads.len()
        )));
    }
    if !(sigma2 > 0.0) {
        return Err(AnalyticsError::Invalid("noise variance must be positive".into()));
    }
    let array = &scene.array;
    let etas = scene.path_losses();
    let powers: Vec<f64> = scene.drones.iter().map(|d| d.tx_power_w).collect();
    let angles: Vec<(f64, f64)> = scene.drones.iter().map(|d| (d.azimuth_rad, d.elevation_rad)).collect();

    let mut drones = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let stats = SteeringStats::new(array, angles[k].0, angles[k].1, &spreads[k], 2, policy)?;
        let m2: Vec<f64> = (0..k_count)
            .map(|p| channel_moment_2(array, defects, &stats, angles[p], etas[p]))
            .collect::<Result<_, _>>()?;
        let mut m4 = vec![vec![0.0; k_count]; k_count];
        for p in 0..k_count {
            for q in p..k_count {
                let v = channel_moment_4(array, defects, &stats, angles[p], etas[p], angles[q], etas[q])?;
                m4[p][q] = v;
                m4[q][p] = v;
            }
        }
        let noise = noise_moments(array, sigma2, 0.0);
        let others: Vec<usize> = (0..k_count).filter(|&p| p != k).collect();

        let e_gx = powers[k] * m2[k];
        let e_gy = others.iter().map(|&p| powers[p] * m2[p]).sum::<f64>() + noise.second;
        let e_gx2 = powers[k] * powers[k] * m4[k][k];
        let mut e_gy2 = noise.fourth;
        for &p in &others {
            for &q in &others {
                e_gy2 += powers[p] * powers[q] * m4[p][q];
            }
            e_gy2 += 2.0 * powers[p] * noise_moments(array, sigma2, m2[p]).mixed;
        }
        let e_gxgy = others.iter().map(|&p| powers[k] * powers[p] * m4[k][p]).sum::<f64>()
            + powers[k] * noise_moments(array, sigma2, m2[k]).mixed;

        let var_gx = e_gx2 - e_gx * e_gx;
        let var_gy = e_gy2 - e_gy * e_gy;
        let cov = e_gxgy - e_gx * e_gy;
        let e_gamma = e_gx / e_gy - cov / e_gy.powi(2) + var_gy * e_gx / e_gy.powi(3);
        let e_gamma2 = e_gx.powi(2) / e_gy.powi(2) + var_gx / e_gy.powi(2) - 4.0 * e_gx * cov / e_gy.powi(3)
            + 3.0 * e_gx.powi(2) * var_gy / e_gy.powi(4);
        let var_gamma = e_gamma2 - e_gamma * e_gamma;
        let negative_variance = var_gx < -VAR_SLACK * e_gx2
            || var_gy < -VAR_SLACK * e_gy2
            || var_gamma < -VAR_SLACK * e_gamma2.abs();
        drones.push(DroneRate {
            e_gx,
            e_gy,
            var_gx,
            var_gy,
            cov,
            e_gamma,
            e_gamma2,
            rate_first: (1.0 + e_gx / e_gy).log2(),
            rate_second: (1.0 + e_gamma).log2() - var_gamma / (2.0 * LN_2 * (1.0 + e_gamma).powi(2)),
            negative_variance,
        });
    }
    let rates: Vec<f64> = drones.iter().map(|d| d.rate(method)).collect();
    Ok(SdrPrediction {
        method,
        sum_rate: rates.iter().sum(),
        rates,
        spreads: spreads.to_vec(),
        negative_variance: drones.iter().any(|d| d.negative_variance),
        drones,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdrMonteCarlo {
    pub per_drone: Vec<MeanEstimate>,
    pub sum_rate: MeanEstimate,
}

/// Reference for [`sdr_predict`]: E[log₂(1+γ_k)] averaged over draws of the
/// defects, Gaussian angle estimates and one noise vector per trial.
pub fn sdr_monte_carlo(
    scene: &SceneConfig,
    error: &GainPhaseModel,
    sigma2: f64,
    spreads: &[EstimatorSpread],
    trials: usize,
    seed: u64,
) -> Result<SdrMonteCarlo, AnalyticsError> {
    let k_count = scene.k();
    if spreads.len() != k_count || trials == 0 {
        return Err(AnalyticsError::Invalid("one spread per drone and at least one trial".into()));
    }
    error.validate()?;
    let array = &scene.array;
    let mn = array.size();
    let etas = scene.path_losses();
    let truth: Vec<Vec<C64>> = scene
        .drones
        .iter()
        .map(|d| {
            let mut a = vec![C64::new(0.0, 0.0); mn];
            fill_steering(array, d.azimuth_rad, d.elevation_rad, &mut a);
            a
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per = vec![Vec::with_capacity(trials); k_count];
    let mut sums = Vec::with_capacity(trials);
    let mut hat = vec![C64::new(0.0, 0.0); mn];
    for _ in 0..trials {
        let (g, ph) = defects_from_rng(error, mn, &mut rng);
        let noise: Vec<C64> = (0..mn).map(|_| complex_gaussian(&mut rng, sigma2)).collect();
        let mut total = 0.0;
        for k in 0..k_count {
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            let d = &scene.drones[k];
            fill_steering(
                array,
                d.azimuth_rad + spreads[k].sigma_phi * z1,
                d.elevation_rad + spreads[k].sigma_theta * z2,
                &mut hat,
            );
            let mut signal = 0.0;
            let mut interference = 0.0;
            for p in 0..k_count {
                let mut x = C64::new(0.0, 0.0);
                for i in 0..mn {
                    x += hat[i].conj() * C64::from_polar(g[i], ph[i]) * truth[p][i];
                }
                let v = scene.drones[p].tx_power_w * (etas[p] * x.norm()).powi(2);
                if p == k {
                    signal = v;
                } else {
                    interference += v;
                }
            }
            let xn: C64 = hat.iter().zip(&noise).map(|(h, n)| h.conj() * n).sum();
            let r = (1.0 + signal / (interference + xn.norm_sqr())).log2();
            per[k].push(r);
            total += r;
        }
        sums.push(total);
    }
    Ok(SdrMonteCarlo {
        per_drone: per.iter().map(|v| MeanEstimate::from_samples(v)).collect(),
        sum_rate: MeanEstimate::from_samples(&sums),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ArrayConfig, DroneTruth};

    fn one_drone(m: usize) -> SceneConfig {
        SceneConfig::new(ArrayConfig::half_wavelength(m, m), vec![DroneTruth::from_degrees(20.0, 20.0, 2000.0)]).unwrap()
    }

    #[test]
    fn deterministic_gamma_limit() {
        let s = one_drone(4);
        let eta = s.path_losses()[0];
        let sigma2 = eta * eta / 1e3;
        let p = sdr_predict(
            &s,
            &DefectMoments::ideal(),
            sigma2,
            &[EstimatorSpread::exact()],
            RateMethod::SecondOrder,
            &SeriesPolicy::default(),
        )
        .unwrap();
        let want = (1.0 + eta * eta * 16.0 / sigma2).log2();
        assert!((p.drones[0].rate_first - want).abs() < 1e-9);
        // γ_y = |ĥᴴn|² is exponential, so at high SNR the exact average rate is
        // log₂(E[γ_x]/E[γ_y]) + γ_E/ln 2 (Euler–Mascheroni)
        let exact = want + 0.577_215_664_901_532_9 / LN_2;
        assert!((p.sum_rate - exact).abs() < 0.25, "{} vs {exact}", p.sum_rate);
        assert!((p.sum_rate - exact).abs() < (p.drones[0].rate_first - exact).abs());
        assert!(!p.negative_variance);
    }

    #[test]
    fn doppler_does_not_enter() {
        let mut s = SceneConfig::new(
            ArrayConfig::half_wavelength(3, 3),
            vec![
                DroneTruth::from_degrees(40.0, 40.0, 4000.0),
                DroneTruth::from_degrees(60.0, 60.0, 6000.0),
            ],
        )
        .unwrap();
        let d = GainPhaseModel::stochastic(1.0, 0.1, 50.0).moments(&SeriesPolicy::default()).unwrap();
        let spreads = [
            EstimatorSpread {
                sigma_phi: 0.004,
                sigma_theta: 0.005,
            };
            2
        ];
        let eta = s.path_losses()[0];
        let a = sdr_predict(&s, &d, eta * eta / 10.0, &spreads, RateMethod::SecondOrder, &SeriesPolicy::default()).unwrap();
        s.drones[0].doppler_hz = 9000.0;
        let b = sdr_predict(&s, &d, eta * eta / 10.0, &spreads, RateMethod::SecondOrder, &SeriesPolicy::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn second_order_tracks_monte_carlo() {
        let s = SceneConfig::new(
            ArrayConfig::half_wavelength(3, 3),
            vec![
                DroneTruth::from_degrees(20.0, 20.0, 2000.0),
                DroneTruth::from_degrees(60.0, 60.0, 6000.0),
            ],
        )
        .unwrap();
        let model = GainPhaseModel::stochastic(1.0, 0.1, 50.0);
        let d = model.moments(&SeriesPolicy::default()).unwrap();
        let spreads = [
            EstimatorSpread {
                sigma_phi: 0.01,
                sigma_theta: 0.01,
            };
            2
        ];
        let sigma2 = s.received_power() / 10.0;
        let p = sdr_predict(&s, &d, sigma2, &spreads, RateMethod::SecondOrder, &SeriesPolicy::default()).unwrap();
        let mc = sdr_monte_carlo(&s, &model, sigma2, &spreads, 20_000, 3).unwrap();
        let rel = (p.sum_rate - mc.sum_rate.mean).abs() / mc.sum_rate.mean;
        assert!(rel < 0.05, "analytic {} vs MC {}", p.sum_rate, mc.sum_rate.mean);
    }
}
