//! Independent numerical references: composite Gauss–Legendre quadrature for
//! complex integrands and Monte Carlo mean estimates. Used by the `verify`
//! command and the test suites to check closed forms.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;
use num_complex::Complex64;

const RULE_DEGREE: usize = 24;

fn rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(RULE_DEGREE).unwrap()))
}

/// ∫_a^b f over `panels` equal panels, each with a 24-point Gauss–Legendre rule.
pub fn integrate(mut f: impl FnMut(f64) -> Complex64, a: f64, b: f64, panels: usize) -> Complex64 {
    let h = (b - a) / panels as f64;
    let mut total = Complex64::new(0.0, 0.0);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let hi = lo + h;
        // the rule is real, so the two parts are integrated separately
        let re = rule().integrate(lo, hi, |x| f(x).re);
        let im = rule().integrate(lo, hi, |x| f(x).im);
        total += Complex64::new(re, im);
    }
    total
}

/// ∫∫ f(x, y) over [a, b] × [c, d] by nested composite rules.
pub fn integrate_2d(
    f: impl Fn(f64, f64) -> Complex64,
    (a, b): (f64, f64),
    (c, d): (f64, f64),
    panels: usize,
) -> Complex64 {
    integrate(|x| integrate(|y| f(x, y), c, d, panels), a, b, panels)
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            samples: n,
        }
    }

    /// |value − mean| in standard errors.
    pub fn z_score(&self, value: f64) -> f64 {
        (value - self.mean).abs() / self.std_error.max(f64::MIN_POSITIVE)
    }
}
