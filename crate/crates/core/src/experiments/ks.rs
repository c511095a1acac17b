use crate::error::{Error, Result};
use crate::stats::{normal_cdf, sorted};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Asymptotic Kolmogorov survival function `P(K > lambda)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        // Theta-function form converges fast for small lambda.
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let a = -pi2 / (8.0 * lambda * lambda);
        let s: f64 = (1..=20)
            .map(|k| {
                let odd = (2 * k - 1) as f64;
                (a * odd * odd).exp()
            })
            .sum();
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let kf = k as f64;
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * kf * kf * lambda * lambda).exp()
            })
            .sum();
        2.0 * s
    };
    p.clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against the fully specified
/// `N(0, sigma2)`.
pub fn ks_test_normal(samples: &[f64], sigma2: f64) -> Result<KsResult> {
    if samples.len() < 20 {
        return Err(Error::TooFewPoints {
            needed: 20,
            got: samples.len(),
        });
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::invalid("sigma2", format!("must be positive, got {sigma2}")));
    }
    let sd = sigma2.sqrt();
    let xs = sorted(samples);
    let n = xs.len() as f64;
    let statistic = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = normal_cdf(x / sd);
            let above = (i + 1) as f64 / n - cdf;
            let below = cdf - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max);
    Ok(KsResult {
        statistic,
        p_value: kolmogorov_survival(n.sqrt() * statistic),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BoxMuller;
    use crate::rng::{substream, Domain};
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn survival_reference_points() {
        // Classical critical values of the Kolmogorov distribution.
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
        assert!((kolmogorov_survival(1.2238) - 0.10).abs() < 1e-4);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
        // Both series agree where they switch.
        let pi2 = std::f64::consts::PI.powi(2);
        let theta = |l: f64| {
            1.0 - (2.0 * std::f64::consts::PI).sqrt() / l
                * (1..=20).map(|k| (-(pi2) * ((2 * k - 1) as f64).powi(2) / (8.0 * l * l)).exp()).sum::<f64>()
        };
        assert!((theta(1.18) - kolmogorov_survival(1.18)).abs() < 1e-12);
    }

    #[test]
    fn quantile_sample_is_accepted() {
        let n = 200;
        let sigma2: f64 = 0.1239;
        let normal = Normal::new(0.0, sigma2.sqrt()).unwrap();
        let xs: Vec<f64> = (1..=n).map(|i| normal.inverse_cdf((i as f64 - 0.5) / n as f64)).collect();
        let r = ks_test_normal(&xs, sigma2).unwrap();
        assert!((r.statistic - 0.5 / n as f64).abs() < 1e-9);
        assert!(r.p_value > 0.999);
    }

    #[test]
    fn far_sample_is_rejected() {
        let sigma2 = 2.0f64;
        let xs = vec![3.0 * sigma2.sqrt(); 30];
        let r = ks_test_normal(&xs, sigma2).unwrap();
        assert!((r.statistic - normal_cdf(3.0)).abs() < 1e-12);
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn zero_sample_statistic() {
        let r = ks_test_normal(&[0.0; 25], 1.0).unwrap();
        assert_eq!(r.statistic, 0.5);
        assert_eq!(r.p_value, kolmogorov_survival(2.5));
    }

    #[test]
    fn rejects_small_input() {
        assert!(ks_test_normal(&[0.0; 19], 1.0).is_err());
        assert!(ks_test_normal(&[0.0; 30], 0.0).is_err());
    }

    #[test]
    fn null_calibration() {
        let sigma2 = 0.1239f64;
        let mut accepted = 0;
        for run in 0..100 {
            let mut rng = substream(2024, Domain::Misc, run);
            let mut bm = BoxMuller::default();
            let xs: Vec<f64> = (0..300).map(|_| sigma2.sqrt() * bm.next(&mut rng)).collect();
            if ks_test_normal(&xs, sigma2).unwrap().p_value > 0.01 {
                accepted += 1;
            }
        }
        assert!(accepted >= 95, "accepted {accepted} of 100");
    }
}
