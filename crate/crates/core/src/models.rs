//! Analytic ground-truth densities with exact evaluation and samplers.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::neighborhood::BoundingBox;
use crate::points::Points;

/// Reading of the Weibull-product exponent on `x_1 ... x_d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeibullExponent {
    /// `(x_1 ... x_d)^(k-1)`: a product of Weibull marginals.
    Marginal,
    /// `(x_1 ... x_d)^(d(k-1))`: the alternative reading; only a proper
    /// density when `k = 1`, and sampling still draws Weibull marginals.
    DimensionScaled,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    BetaProduct { alpha: f64, beta: f64, dim: usize },
    DiagNormal { sigma: Vec<f64> },
    WeibullProduct { scale: f64, shape: f64, dim: usize, exponent: WeibullExponent },
    /// `(1/2) N(mean1, S) + (1/2) N(mean2, S)` with `S = [[s1^2, rho], [rho, s2^2]]`.
    NormalMixtureShared { mean1: [f64; 2], mean2: [f64; 2], sigma1: f64, sigma2: f64, rho: f64 },
    /// Second component uses `[[s2^2, -rho], [-rho, s1^2]]`.
    NormalMixtureTwo { mean1: [f64; 2], mean2: [f64; 2], sigma1: f64, sigma2: f64, rho: f64 },
}

#[derive(Debug, Clone, PartialEq)]
struct Gaussian2 {
    mean: [f64; 2],
    /// Lower Cholesky factor `[l11, l21, l22]`.
    chol: [f64; 3],
    /// Inverse covariance `[a, b, c]` for `[[a, b], [b, c]]`.
    inv: [f64; 3],
    norm: f64,
}

impl Gaussian2 {
    fn new(mean: [f64; 2], var1: f64, var2: f64, cov: f64) -> Result<Self> {
        let det = var1 * var2 - cov * cov;
        if !(var1 > 0.0 && var2 > 0.0 && det > 0.0) {
            return Err(Error::invalid("model.rho", "covariance matrix is not positive definite (need |rho| < sigma1 * sigma2)"));
        }
        let l11 = var1.sqrt();
        let l21 = cov / l11;
        let l22 = (var2 - l21 * l21).sqrt();
        Ok(Self {
            mean,
            chol: [l11, l21, l22],
            inv: [var2 / det, -cov / det, var1 / det],
            norm: 1.0 / (2.0 * PI * det.sqrt()),
        })
    }

    fn density(&self, x: &[f64]) -> f64 {
        let (u, v) = (x[0] - self.mean[0], x[1] - self.mean[1]);
        let [a, b, c] = self.inv;
        let q = a * u * u + 2.0 * b * u * v + c * v * v;
        self.norm * (-0.5 * q).exp()
    }

    fn sample(&self, z: [f64; 2]) -> [f64; 2] {
        let [l11, l21, l22] = self.chol;
        [self.mean[0] + l11 * z[0], self.mean[1] + l21 * z[0] + l22 * z[1]]
    }
}

/// Box-Muller standard normals, caching the second variate of each pair.
#[derive(Debug, Default)]
pub struct BoxMuller {
    spare: Option<f64>,
}

impl BoxMuller {
    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = 1.0 - rng.random::<f64>();
        let u2 = rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticModel {
    kind: ModelKind,
    components: Vec<Gaussian2>,
    log_norm: f64,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("model.{name}"), format!("must be positive, got {v}")))
    }
}

fn nonzero_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        Err(Error::invalid("model.d", "dimension must be at least 1"))
    } else {
        Ok(())
    }
}

impl AnalyticModel {
    pub fn beta_product(alpha: f64, beta: f64, dim: usize) -> Result<Self> {
        positive("alpha", alpha)?;
        positive("beta", beta)?;
        nonzero_dim(dim)?;
        let log_norm = dim as f64 * (ln_gamma(alpha + beta) - ln_gamma(alpha) - ln_gamma(beta));
        Ok(Self {
            kind: ModelKind::BetaProduct { alpha, beta, dim },
            components: Vec::new(),
            log_norm,
        })
    }

    pub fn diag_normal(sigma: Vec<f64>) -> Result<Self> {
        nonzero_dim(sigma.len())?;
        for &s in &sigma {
            positive("sigma", s)?;
        }
        let d = sigma.len() as f64;
        let log_norm = -0.5 * d * (2.0 * PI).ln() - sigma.iter().map(|s| s.ln()).sum::<f64>();
        Ok(Self {
            kind: ModelKind::DiagNormal { sigma },
            components: Vec::new(),
            log_norm,
        })
    }

    pub fn weibull_product(scale: f64, shape: f64, dim: usize, exponent: WeibullExponent) -> Result<Self> {
        positive("lambda", scale)?;
        positive("shape", shape)?;
        nonzero_dim(dim)?;
        let log_norm = dim as f64 * (shape.ln() - shape * scale.ln());
        Ok(Self {
            kind: ModelKind::WeibullProduct { scale, shape, dim, exponent },
            components: Vec::new(),
            log_norm,
        })
    }

    pub fn normal_mixture_shared(mean1: [f64; 2], mean2: [f64; 2], sigma1: f64, sigma2: f64, rho: f64) -> Result<Self> {
        positive("sigma1", sigma1)?;
        positive("sigma2", sigma2)?;
        let (v1, v2) = (sigma1 * sigma1, sigma2 * sigma2);
        let components = vec![Gaussian2::new(mean1, v1, v2, rho)?, Gaussian2::new(mean2, v1, v2, rho)?];
        Ok(Self {
            kind: ModelKind::NormalMixtureShared { mean1, mean2, sigma1, sigma2, rho },
            components,
            log_norm: 0.0,
        })
    }

    pub fn normal_mixture_two(mean1: [f64; 2], mean2: [f64; 2], sigma1: f64, sigma2: f64, rho: f64) -> Result<Self> {
        positive("sigma1", sigma1)?;
        positive("sigma2", sigma2)?;
        let (v1, v2) = (sigma1 * sigma1, sigma2 * sigma2);
        let components = vec![Gaussian2::new(mean1, v1, v2, rho)?, Gaussian2::new(mean2, v2, v1, -rho)?];
        Ok(Self {
            kind: ModelKind::NormalMixtureTwo { mean1, mean2, sigma1, sigma2, rho },
            components,
            log_norm: 0.0,
        })
    }

    pub const DEFAULT_MEAN1: [f64; 2] = [-1.0, 1.0];
    pub const DEFAULT_MEAN2: [f64; 2] = [1.0, 1.0];

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    /// Configuration name of the model family.
    pub fn name(&self) -> &'static str {
        match self.kind {
            ModelKind::BetaProduct { .. } => "beta_product",
            ModelKind::DiagNormal { .. } => "diag_normal",
            ModelKind::WeibullProduct { .. } => "weibull_product",
            ModelKind::NormalMixtureShared { .. } => "normal_mixture_shared",
            ModelKind::NormalMixtureTwo { .. } => "normal_mixture_two",
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ModelKind::BetaProduct { dim, .. } | ModelKind::WeibullProduct { dim, .. } => *dim,
            ModelKind::DiagNormal { sigma } => sigma.len(),
            ModelKind::NormalMixtureShared { .. } | ModelKind::NormalMixtureTwo { .. } => 2,
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match &self.kind {
            ModelKind::BetaProduct { alpha, beta, .. } => {
                if x.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
                    return 0.0;
                }
                let s: f64 = x
                    .iter()
                    .map(|&v| (alpha - 1.0) * v.ln() + (beta - 1.0) * (1.0 - v).ln())
                    .sum();
                (self.log_norm + s).exp()
            }
            ModelKind::DiagNormal { sigma } => {
                let q: f64 = x.iter().zip(sigma).map(|(v, s)| (v / s) * (v / s)).sum();
                (self.log_norm - 0.5 * q).exp()
            }
            ModelKind::WeibullProduct { scale, shape, dim, exponent } => {
                if x.iter().any(|&v| !(v > 0.0)) {
                    return 0.0;
                }
                let power = match exponent {
                    WeibullExponent::Marginal => shape - 1.0,
                    WeibullExponent::DimensionScaled => *dim as f64 * (shape - 1.0),
                };
                let log_prod: f64 = x.iter().map(|v| v.ln()).sum();
                let tail: f64 = x.iter().map(|v| (v / scale).powf(*shape)).sum();
                let poly = if power == 0.0 { 0.0 } else { power * log_prod };
                (self.log_norm + poly - tail).exp()
            }
            ModelKind::NormalMixtureShared { .. } | ModelKind::NormalMixtureTwo { .. } => {
                0.5 * (self.components[0].density(x) + self.components[1].density(x))
            }
        }
    }

    /// `n` iid draws.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Points> {
        Ok(self.sample_labeled(n, rng)?.0)
    }

    /// Draws plus the mixture component of each draw (always 0 for
    /// non-mixtures).
    pub fn sample_labeled<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<(Points, Vec<u8>)> {
        if n == 0 {
            return Err(Error::invalid("n", "sample size must be at least 1"));
        }
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        let mut labels = vec![0u8; n];
        let mut normal = BoxMuller::default();
        match &self.kind {
            ModelKind::BetaProduct { alpha, beta, .. } => {
                let ga = Gamma::new(*alpha, 1.0).map_err(|e| Error::invalid("model.alpha", e.to_string()))?;
                let gb = Gamma::new(*beta, 1.0).map_err(|e| Error::invalid("model.beta", e.to_string()))?;
                for _ in 0..n * d {
                    let a: f64 = ga.sample(rng);
                    let b: f64 = gb.sample(rng);
                    data.push(a / (a + b));
                }
            }
            ModelKind::DiagNormal { sigma } => {
                for _ in 0..n {
                    for s in sigma {
                        data.push(s * normal.next(rng));
                    }
                }
            }
            ModelKind::WeibullProduct { scale, shape, .. } => {
                for _ in 0..n * d {
                    let u = 1.0 - rng.random::<f64>();
                    data.push(weibull_inverse_cdf(*scale, *shape, u));
                }
            }
            ModelKind::NormalMixtureShared { .. } | ModelKind::NormalMixtureTwo { .. } => {
                for label in labels.iter_mut() {
                    let c = usize::from(rng.random::<bool>());
                    *label = c as u8;
                    let z = [normal.next(rng), normal.next(rng)];
                    data.extend_from_slice(&self.components[c].sample(z));
                }
            }
        }
        Ok((Points::from_raw(d, data), labels))
    }

    /// Default region for test points and error reporting.
    pub fn default_test_box(&self) -> BoundingBox {
        let d = self.dim();
        let b = match &self.kind {
            ModelKind::BetaProduct { .. } => BoundingBox::cube(0.0, 1.0, d),
            ModelKind::WeibullProduct { .. } => BoundingBox::cube(0.0, if d <= 2 { 4.0 } else { 5.0 }, d),
            ModelKind::DiagNormal { sigma } => {
                BoundingBox::new(sigma.iter().map(|s| -3.0 * s).collect(), sigma.iter().map(|s| 3.0 * s).collect())
            }
            ModelKind::NormalMixtureShared { .. } => BoundingBox::cube(-1.0, 1.0, 2),
            ModelKind::NormalMixtureTwo { .. } => BoundingBox::cube(-2.0, 2.0, 2),
        };
        b.expect("model parameters were validated")
    }

    /// Default box for Monte-Carlo neighborhood volumes.
    pub fn default_mc_box(&self) -> BoundingBox {
        let d = self.dim();
        let b = match &self.kind {
            ModelKind::DiagNormal { sigma } => {
                BoundingBox::new(sigma.iter().map(|s| -4.0 * s).collect(), sigma.iter().map(|s| 4.0 * s).collect())
            }
            ModelKind::NormalMixtureShared { .. } | ModelKind::NormalMixtureTwo { .. } => {
                BoundingBox::cube(-2.0, 2.0, d)
            }
            _ => return self.default_test_box(),
        };
        b.expect("model parameters were validated")
    }

    /// Common `sigma` when the model is a spherical normal.
    pub fn spherical_sigma(&self) -> Option<f64> {
        match &self.kind {
            ModelKind::DiagNormal { sigma } if sigma.iter().all(|s| *s == sigma[0]) => Some(sigma[0]),
            _ => None,
        }
    }

    /// Limit of `mu(B*(eps, x)) / (2 eps)` as `eps -> 0` for a spherical
    /// density: `2 pi^(d/2) |x|^(d-1) / (Gamma(d/2) |grad f(x)|)`, with
    /// `|grad f(x)| = |x| f(x) / sigma^2` for the spherical normal.
    pub fn spherical_volume_rate(&self, x: &[f64]) -> Result<f64> {
        let sigma = self
            .spherical_sigma()
            .ok_or_else(|| Error::invalid("model", format!("`{}` is not a spherical normal", self.name())))?;
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::invalid("x", "the volume rate is undefined at the origin"));
        }
        let fx = self.eval(x);
        if !(fx > 0.0) {
            return Err(Error::invalid("x", "density underflows at this point"));
        }
        let d = x.len() as f64;
        let grad = norm * fx / (sigma * sigma);
        Ok(2.0 * PI.powf(d / 2.0) * norm.powf(d - 1.0) / (gamma(d / 2.0) * grad))
    }
}

impl AnalyticModel {
    /// Exact `mu(B*(eps, x))` for a spherical normal: the level sets are
    /// balls, so the neighborhood is the shell between the radii where the
    /// density equals `f(x) + eps` and `f(x) - eps`.
    pub fn spherical_star_volume(&self, x: &[f64], epsilon: f64) -> Result<f64> {
        let sigma = self
            .spherical_sigma()
            .ok_or_else(|| Error::invalid("model", format!("`{}` is not a spherical normal", self.name())))?;
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        if !(epsilon > 0.0) {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        let fx = self.eval(x);
        if fx - epsilon <= 0.0 {
            return Err(Error::invalid("epsilon", "f(x) - eps <= 0 makes the neighborhood unbounded"));
        }
        let d = x.len();
        let peak = self.log_norm.exp();
        // Radius of { f > c } for 0 < c < peak.
        let radius = |c: f64| {
            if c >= peak {
                0.0
            } else {
                (2.0 * sigma * sigma * (peak / c).ln()).sqrt()
            }
        };
        let (outer, inner) = (radius(fx - epsilon), radius(fx + epsilon));
        Ok(unit_ball_volume(d) * (outer.powi(d as i32) - inner.powi(d as i32)))
    }
}

impl Density for AnalyticModel {
    fn dim(&self) -> usize {
        AnalyticModel::dim(self)
    }

    fn density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), AnalyticModel::dim(self));
        self.eval(x)
    }
}

/// `lambda (-ln u)^(1/k)` for `u` in `(0, 1]`.
pub fn weibull_inverse_cdf(scale: f64, shape: f64, u: f64) -> f64 {
    scale * (-u.ln()).powf(1.0 / shape)
}

/// Lebesgue volume of the unit ball in `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    PI.powf(h) / gamma(h + 1.0)
}
