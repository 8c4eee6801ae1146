//! Numerical self-checks of the closed forms against independent references:
//! quadrature of the underlying densities, and Monte Carlo where the
//! expectation is over several random quantities at once.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::analytics::{channel_moment_2, channel_moment_4, expectation_e3, Bounds, EstimatorSpread, SteeringStats};
use crate::oracle::{integrate, integrate_2d, MeanEstimate};
use crate::scene::{defects_from_rng, steering_vector, ArrayConfig, GainPhaseModel};
use crate::specfun::{rician_moment, vonmises_char, SeriesPolicy};
use crate::C64;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: String, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

/// I₀(x)e^{−x} = (1/π)∫₀^π e^{x(cos t − 1)} dt, by quadrature.
fn i0e_quadrature(x: f64) -> f64 {
    integrate(|t| C64::new((x * (t.cos() - 1.0)).exp(), 0.0), 0.0, PI, 64).re / PI
}

fn rician_checks(policy: &SeriesPolicy) -> Vec<Check> {
    let mut out = Vec::new();
    for (nu, s) in [(0.5f64, 1.0f64), (1.0, 0.1), (1.15, 0.1), (0.8, 0.09)] {
        let lo = (nu - 12.0 * s).max(0.0);
        let hi = nu + 12.0 * s;
        let pdf = |a: f64| a / (s * s) * (-(a - nu) * (a - nu) / (2.0 * s * s)).exp() * i0e_quadrature(a * nu / (s * s));
        for c in 0..=4u32 {
            let want = integrate(|a| C64::new(a.powi(c as i32) * pdf(a), 0.0), lo, hi, 48).re;
            let got = rician_moment(c, nu, s, policy);
            let (passed, detail) = match got {
                Ok(v) => {
                    let rel = (v.value - want).abs() / want.abs();
                    (rel < 1e-8, format!("series {:.12e}, quadrature {want:.12e}, rel {rel:.1e}", v.value))
                }
                Err(e) => (false, e.to_string()),
            };
            out.push(check(format!("rician E[a^{c}] nu={nu} sigma={s}"), passed, detail));
        }
    }
    out
}

fn vonmises_checks(policy: &SeriesPolicy) -> Vec<Check> {
    let mut out = Vec::new();
    for (mu, kappa) in [(0.0, 5.0), (0.3, 10.0), (0.0, 700.0), (-0.2, 1000.0)] {
        let norm = 2.0 * PI * i0e_quadrature(kappa);
        for c in 0..=2u32 {
            for sign in [1i8, -1] {
                let want = integrate(
                    |x| C64::from_polar((kappa * ((x - mu).cos() - 1.0)).exp() / norm, sign as f64 * c as f64 * x),
                    -PI,
                    PI,
                    400,
                );
                let (passed, detail) = match vonmises_char(c as f64, sign, mu, kappa, (-PI, PI), policy) {
                    Ok(v) => {
                        let err = (v.value - want).norm();
                        (err < 1e-9, format!("series {:.10}, quadrature {want:.10}, err {err:.1e}", v.value))
                    }
                    Err(e) => (false, e.to_string()),
                };
                out.push(check(
                    format!("von Mises E[exp({}j{c}d)] mu={mu} kappa={kappa}", if sign > 0 { "+" } else { "-" }),
                    passed,
                    detail,
                ));
            }
        }
    }
    out
}

/// E₃ against two quadratures: of the linearized phase the closed form is
/// derived from (any spread), and of the exact phase (small spreads, where
/// the linearization itself is accurate to the tolerance).
fn e3_checks(policy: &SeriesPolicy) -> Vec<Check> {
    let mut out = Vec::new();
    let gauss = |x: f64, sd: f64| (-0.5 * (x / sd).powi(2)).exp() / ((2.0 * PI).sqrt() * sd);
    let cases = [
        (40.0f64, 60.0f64, 0.1f64, true),
        (20.0, 20.0, 0.05, true),
        (20.0, 20.0, 0.5, false),
        (60.0, 30.0, 2.0, false),
    ];
    for (phi_deg, theta_deg, sd_deg, exact) in cases {
        let (phi, theta) = (phi_deg.to_radians(), theta_deg.to_radians());
        let sd = sd_deg.to_radians();
        let spread = EstimatorSpread {
            sigma_phi: sd,
            sigma_theta: sd,
        };
        let bounds = Bounds::around(phi, theta, &spread);
        let (sp, cp) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        for mm in -3..=3 {
            for nn in -3..=3 {
                let (m, n) = (mm as f64, nn as f64);
                let phase = |p: f64, t: f64| {
                    if exact {
                        PI * (m * p.cos() + n * p.sin()) * t.sin()
                    } else {
                        let (x, y) = (p - phi, t - theta);
                        PI * (m * cp + n * sp + (n * cp - m * sp) * x) * (st + ct * y)
                    }
                };
                let want = integrate_2d(
                    |p, t| C64::from_polar(gauss(p - phi, sd) * gauss(t - theta, sd), phase(p, t)),
                    bounds.phi,
                    bounds.theta,
                    12,
                );
                let (passed, detail) = match expectation_e3(mm, nn, phi, theta, &spread, &bounds, 0.5, policy) {
                    Ok(v) => {
                        let rel = (v - want).norm() / want.norm();
                        (rel < 1e-4, format!("series {v:.8}, quadrature {want:.8}, rel {rel:.1e}"))
                    }
                    Err(e) => (false, e.to_string()),
                };
                let kind = if exact { "exact" } else { "linearized" };
                out.push(check(
                    format!("E3({mm},{nn}) {kind} phase at ({phi_deg}, {theta_deg}) deg, spread {sd_deg} deg"),
                    passed,
                    detail,
                ));
            }
        }
    }
    out
}

fn channel_checks(policy: &SeriesPolicy) -> Vec<Check> {
    let model = GainPhaseModel::stochastic(0.8, 0.3, 5.0);
    let array = ArrayConfig::half_wavelength(2, 2);
    let est = (40f64.to_radians(), 40f64.to_radians());
    let q = (60f64.to_radians(), 60f64.to_radians());
    let spread = EstimatorSpread {
        sigma_phi: 2f64.to_radians(),
        sigma_theta: 2f64.to_radians(),
    };
    let closed = model.moments(policy).map_err(|e| e.to_string()).and_then(|d| {
        let stats = SteeringStats::new(&array, est.0, est.1, &spread, 2, policy).map_err(|e| e.to_string())?;
        let m2 = channel_moment_2(&array, &d, &stats, est, 1.0).map_err(|e| e.to_string())?;
        let m4 = channel_moment_4(&array, &d, &stats, est, 1.0, q, 1.0).map_err(|e| e.to_string())?;
        Ok((m2, m4))
    });
    let (m2, m4) = match closed {
        Ok(v) => v,
        Err(e) => {
            return vec![
                check("channel second moment".into(), false, e.clone()),
                check("channel fourth moment".into(), false, e),
            ]
        }
    };
    let n = 400_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let up = steering_vector(&array, est.0, est.1);
    let uq = steering_vector(&array, q.0, q.1);
    let mut second = Vec::with_capacity(n);
    let mut fourth = Vec::with_capacity(n);
    for _ in 0..n {
        let (g, ph) = defects_from_rng(&model, array.size(), &mut rng);
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        let h = steering_vector(&array, est.0 + spread.sigma_phi * z1, est.1 + spread.sigma_theta * z2);
        let (mut xp, mut xq) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        for i in 0..array.size() {
            let d = C64::from_polar(g[i], ph[i]);
            xp += h[i].conj() * d * up[i];
            xq += h[i].conj() * d * uq[i];
        }
        second.push(xp.norm_sqr());
        fourth.push(xp.norm_sqr() * xq.norm_sqr());
    }
    [("channel second moment", m2, second), ("channel fourth moment", m4, fourth)]
        .into_iter()
        .map(|(name, value, samples)| {
            let mc = MeanEstimate::from_samples(&samples);
            let z = mc.z_score(value);
            check(
                name.into(),
                z < 3.0,
                format!("closed form {value:.6}, Monte Carlo {:.6} ± {:.1e}, z {z:.2}", mc.mean, mc.std_error),
            )
        })
        .collect()
}

/// Every check, in a fixed order.
pub fn run_checks() -> Vec<Check> {
    let policy = SeriesPolicy::default();
    let mut out = rician_checks(&policy);
    out.extend(vonmises_checks(&policy));
    out.extend(e3_checks(&policy));
    out.extend(channel_checks(&policy));
    out
}
