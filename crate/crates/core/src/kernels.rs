//! One-dimensional kernels and their product extension to `R^d`.

use std::fmt;
use std::str::FromStr;

use serde::Deserialize;

use crate::error::Error;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// `(2 pi)^(-1/2) exp(-u^2 / 2)`
    Gaussian,
    /// `0.75 (1 - u^2)` on `|u| < 1`
    Epanechnikov,
    /// `1` on `|u| < 1`. Not a density; only used as an aggregation weight.
    Indicator,
}

impl KernelKind {
    pub const ALL: [KernelKind; 3] = [
        KernelKind::Gaussian,
        KernelKind::Epanechnikov,
        KernelKind::Indicator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Gaussian => "gaussian",
            KernelKind::Epanechnikov => "epanechnikov",
            KernelKind::Indicator => "indicator",
        }
    }

    pub fn eval_1d(self, u: f64) -> f64 {
        match self {
            KernelKind::Gaussian => INV_SQRT_2PI * (-0.5 * u * u).exp(),
            KernelKind::Epanechnikov => {
                if u.abs() < 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            KernelKind::Indicator => {
                if u.abs() < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Product kernel `prod_i K(v_i)`.
    pub fn eval_product(self, v: &[f64]) -> f64 {
        v.iter().map(|&u| self.eval_1d(u)).product()
    }

    /// Weight used by the smoothed aggregation, rescaled so that the weight at
    /// the origin is exactly one: indicator as is, Epanechnikov as `1 - u^2`,
    /// Gaussian as `exp(-u^2 / 2)`. Only the indicator is known to satisfy the
    /// limit condition the smoothed estimator relies on.
    pub fn smoothing_weight(self, u: f64) -> f64 {
        match self {
            KernelKind::Gaussian => (-0.5 * u * u).exp(),
            KernelKind::Epanechnikov => {
                if u.abs() < 1.0 {
                    1.0 - u * u
                } else {
                    0.0
                }
            }
            KernelKind::Indicator => {
                if u.abs() < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Whether the kernel integrates to one and may back a KDE.
    pub fn is_density(self) -> bool {
        !matches!(self, KernelKind::Indicator)
    }

    /// Half-width of the support, `None` for unbounded kernels.
    pub fn support_radius(self) -> Option<f64> {
        match self {
            KernelKind::Gaussian => None,
            KernelKind::Epanechnikov | KernelKind::Indicator => Some(1.0),
        }
    }

    /// `(K * K)(t) = int K(u) K(t - u) du`, used for the exact `int fhat^2`
    /// term of least-squares cross-validation.
    pub fn self_convolution_1d(self, t: f64) -> f64 {
        match self {
            // N(0,1) * N(0,1) = N(0,2)
            KernelKind::Gaussian => INV_SQRT_2PI * std::f64::consts::FRAC_1_SQRT_2 * (-0.25 * t * t).exp(),
            KernelKind::Epanechnikov => {
                let a = t.abs();
                if a < 2.0 {
                    let b = 2.0 - a;
                    3.0 / 160.0 * b * b * b * (a * a + 6.0 * a + 4.0)
                } else {
                    0.0
                }
            }
            KernelKind::Indicator => {
                let a = t.abs();
                if a < 2.0 {
                    2.0 - a
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        KernelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::invalid(
                    "kernel",
                    format!("unknown kernel `{s}` (expected gaussian, epanechnikov or indicator)"),
                )
            })
    }
}

/// `exp(x)` for `x <= 0`, written so the compiler can vectorize it.
///
/// Cody-Waite reduction to `|r| <= ln2/2` followed by a degree-12 Taylor
/// polynomial; relative error stays below 4e-16 against libm. Arguments below
/// -708 return exactly zero.
#[inline(always)]
pub(crate) fn exp_nonpositive(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_164_9e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    let underflow = x < -708.0;
    let x = if underflow { -708.0 } else { x };
    let t = x * LOG2E + SHIFT;
    let n = t - SHIFT;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let exponent = (t.to_bits() as i64).wrapping_sub(SHIFT.to_bits() as i64);
    let scale = f64::from_bits((exponent.wrapping_add(1023) as u64).wrapping_shl(52));
    if underflow {
        0.0
    } else {
        p * scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Composite Simpson rule on `[a, b]` with `n` (even) panels.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn point_values() {
        assert_eq!(KernelKind::Epanechnikov.eval_1d(0.0), 0.75);
        assert_eq!(KernelKind::Epanechnikov.eval_1d(1.0), 0.0);
        assert_abs_diff_eq!(KernelKind::Gaussian.eval_1d(0.0), 0.398942, epsilon = 1e-6);
        assert_eq!(KernelKind::Indicator.eval_1d(0.0), 1.0);
        assert_eq!(KernelKind::Indicator.eval_1d(-1.0), 0.0);

        assert_eq!(KernelKind::Epanechnikov.eval_product(&[0.0, 0.0]), 0.5625);
        assert_abs_diff_eq!(
            KernelKind::Gaussian.eval_product(&[0.0, 0.0]),
            0.159155,
            epsilon = 1e-6
        );
        assert_eq!(KernelKind::Epanechnikov.eval_product(&[0.0, 2.0]), 0.0);
    }

    #[test]
    fn density_kernels_integrate_to_one() {
        let g = simpson(|u| KernelKind::Gaussian.eval_1d(u), -12.0, 12.0, 20_000);
        let e = simpson(|u| KernelKind::Epanechnikov.eval_1d(u), -1.0, 1.0, 2_000);
        assert_abs_diff_eq!(g, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(e, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn self_convolution_matches_quadrature() {
        for kind in [KernelKind::Gaussian, KernelKind::Epanechnikov] {
            let (lo, hi) = match kind.support_radius() {
                Some(r) => (-r, r),
                None => (-14.0, 14.0),
            };
            for &t in &[0.0, 0.3, 0.9, 1.5, 1.99, 2.5] {
                // Integrand has a kink at t - 1 for the compact kernel; fine
                // panels keep Simpson well under the tolerance.
                let q = simpson(|u| kind.eval_1d(u) * kind.eval_1d(t - u), lo, hi, 200_000);
                assert_abs_diff_eq!(kind.self_convolution_1d(t), q, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn smoothing_weights_are_one_at_origin() {
        for k in KernelKind::ALL {
            assert_eq!(k.smoothing_weight(0.0), 1.0);
        }
        assert_eq!(KernelKind::Epanechnikov.smoothing_weight(0.5), 0.75);
    }

    #[test]
    fn names_round_trip() {
        for k in KernelKind::ALL {
            assert_eq!(k.name().parse::<KernelKind>().unwrap(), k);
        }
        assert!("triangular".parse::<KernelKind>().is_err());
    }

    #[test]
    fn fast_exp_tracks_libm() {
        let mut worst = 0.0f64;
        for i in 0..200_000 {
            let x = -(i as f64) * 0.0035;
            let rel = ((exp_nonpositive(x) - x.exp()) / x.exp()).abs();
            if x.exp() > 0.0 {
                worst = worst.max(rel);
            }
        }
        assert!(worst < 4e-16, "worst relative error {worst:e}");
        assert_eq!(exp_nonpositive(0.0), 1.0);
        assert_eq!(exp_nonpositive(-800.0), 0.0);
    }

    proptest! {
        #[test]
        fn nonnegative_and_symmetric(u in -5.0f64..5.0) {
            for k in KernelKind::ALL {
                prop_assert!(k.eval_1d(u) >= 0.0);
                prop_assert_eq!(k.eval_1d(u), k.eval_1d(-u));
            }
        }

        #[test]
        fn product_is_product_of_marginals(v in prop::collection::vec(-2.0f64..2.0, 1..5)) {
            for k in KernelKind::ALL {
                let direct: f64 = v.iter().map(|&u| k.eval_1d(u)).product();
                prop_assert_eq!(k.eval_product(&v), direct);
            }
        }
    }
}
