//! The aggregated density estimators.
//!
//! All four variants share one shape, `numerator(x) / mu(N(x))`:
//!
//! | variant        | numerator                                               | neighborhood |
//! |----------------|---------------------------------------------------------|--------------|
//! | `Counting`     | fraction of hold-out points in `B(eps, x)`              | `B`          |
//! | `Smoothed`     | mean of `prod_m K((f_m(Y_j) - f_m(x)) / eps)`           | `B`          |
//! | `EtaCounting`  | fraction of hold-out points in `B^eta(eps, x)`          | `B^eta`      |
//! | `EtaSmoothed`  | smoothed weights gated by membership in `B^eta(eps, x)` | `B^eta`      |
//!
//! Bank values at the hold-out sample and at the Monte-Carlo volume draws do
//! not depend on `eps` or `x`, so they are computed once when the estimator is
//! built and shared between copies made with [`AggregatedEstimator::with_epsilon`].

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::Deserialize;

use crate::density::Density;
use crate::error::{Error, Result};
use crate::kde::{BandIndex, KdeEstimator};
use crate::kernels::KernelKind;
use crate::neighborhood::{
    match_key, required_matches, uniform_draws, validate_epsilon_eta, volume_from_hits, BoundingBox,
};
use crate::par;
use crate::points::Points;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Counting,
    Smoothed,
    EtaCounting,
    EtaSmoothed,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Counting,
        Variant::Smoothed,
        Variant::EtaCounting,
        Variant::EtaSmoothed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Counting => "counting",
            Variant::Smoothed => "smoothed",
            Variant::EtaCounting => "eta_counting",
            Variant::EtaSmoothed => "eta_smoothed",
        }
    }

    pub fn is_smoothed(self) -> bool {
        matches!(self, Variant::Smoothed | Variant::EtaSmoothed)
    }

    pub fn uses_eta(self) -> bool {
        matches!(self, Variant::EtaCounting | Variant::EtaSmoothed)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid("variant", format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorSettings {
    pub epsilon: f64,
    pub eta: f64,
    pub variant: Variant,
    /// Weight kernel of the smoothed variants.
    pub smooth_kernel: KernelKind,
    pub n_mc: usize,
    pub volume_seed: u64,
}

impl Default for AggregatorSettings {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            eta: 0.0,
            variant: Variant::Counting,
            smooth_kernel: KernelKind::Indicator,
            n_mc: 20_000,
            volume_seed: 0,
        }
    }
}

/// Outcome of one evaluation: either a value, or a positive numerator over a
/// neighborhood no Monte-Carlo draw landed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointEstimate {
    Value(f64),
    Degenerate { fraction: f64 },
}

impl PointEstimate {
    fn from_parts(fraction: f64, volume: f64) -> Self {
        if volume > 0.0 {
            PointEstimate::Value(fraction / volume)
        } else if fraction == 0.0 {
            PointEstimate::Value(0.0)
        } else {
            PointEstimate::Degenerate { fraction }
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            PointEstimate::Value(v) => Some(v),
            PointEstimate::Degenerate { .. } => None,
        }
    }

    pub fn into_result(self) -> Result<f64> {
        match self {
            PointEstimate::Value(v) => Ok(v),
            PointEstimate::Degenerate { fraction } => Err(Error::DegenerateVolume { fraction }),
        }
    }
}

#[derive(Debug)]
struct Prepared {
    bank: Vec<KdeEstimator>,
    dim: usize,
    /// Bank values at the hold-out sample, `l x M` row-major.
    sample_values: Vec<f64>,
    bbox: BoundingBox,
    n_mc: usize,
    volume_seed: u64,
    /// Bank values at the volume draws, `n_mc x M` row-major.
    draw_values: Vec<f64>,
}

impl Prepared {
    fn m(&self) -> usize {
        self.bank.len()
    }

    fn l(&self) -> usize {
        self.sample_values.len() / self.m()
    }
}

#[derive(Debug, Clone)]
pub struct AggregatedEstimator {
    prepared: Arc<Prepared>,
    settings: AggregatorSettings,
}

fn bank_values_into(bank: &[KdeEstimator], points: &Points) -> Vec<f64> {
    let m = bank.len();
    let mut out = vec![0.0; points.len() * m];
    par::for_each_chunk_mut(&mut out, 256 * m, |start, piece| {
        let first = start / m;
        for (i, row) in piece.chunks_exact_mut(m).enumerate() {
            let y = points.row(first + i);
            for (v, f) in row.iter_mut().zip(bank) {
                *v = f.density(y);
            }
        }
    });
    out
}

impl AggregatedEstimator {
    /// `bank` must be fit on a sample disjoint from `eval_sample`.
    pub fn new(
        bank: Vec<KdeEstimator>,
        eval_sample: &Points,
        bbox: BoundingBox,
        settings: AggregatorSettings,
    ) -> Result<Self> {
        let first = bank
            .first()
            .ok_or_else(|| Error::invalid("bank", "at least one estimator is required"))?;
        let dim = first.dim();
        if let Some(f) = bank.iter().find(|f| f.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: f.dim() });
        }
        if eval_sample.is_empty() {
            return Err(Error::TooFewPoints { needed: 1, got: 0 });
        }
        for got in [eval_sample.dim(), bbox.dim()] {
            if got != dim {
                return Err(Error::DimensionMismatch { expected: dim, got });
            }
        }
        validate_epsilon_eta(settings.epsilon, settings.eta)?;
        if settings.n_mc == 0 {
            return Err(Error::invalid("n_mc", "must be at least 1"));
        }
        let sample_values = bank_values_into(&bank, eval_sample);
        let draws = uniform_draws(&bbox, settings.n_mc, settings.volume_seed);
        let draw_values = bank_values_into(&bank, &draws);
        let prepared = Prepared {
            bank,
            dim,
            sample_values,
            bbox,
            n_mc: settings.n_mc,
            volume_seed: settings.volume_seed,
            draw_values,
        };
        Ok(Self {
            prepared: Arc::new(prepared),
            settings,
        })
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        validate_epsilon_eta(epsilon, self.settings.eta)?;
        let mut settings = self.settings.clone();
        settings.epsilon = epsilon;
        Ok(Self {
            prepared: Arc::clone(&self.prepared),
            settings,
        })
    }

    /// Same prepared bank and draws with another variant, `eta` or weight kernel.
    pub fn with_variant(&self, variant: Variant, eta: f64, smooth_kernel: KernelKind) -> Result<Self> {
        validate_epsilon_eta(self.settings.epsilon, eta)?;
        let mut settings = self.settings.clone();
        settings.variant = variant;
        settings.eta = eta;
        settings.smooth_kernel = smooth_kernel;
        Ok(Self {
            prepared: Arc::clone(&self.prepared),
            settings,
        })
    }

    pub fn settings(&self) -> &AggregatorSettings {
        &self.settings
    }

    pub fn epsilon(&self) -> f64 {
        self.settings.epsilon
    }

    pub fn bank(&self) -> &[KdeEstimator] {
        &self.prepared.bank
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.prepared.bbox
    }

    pub fn dim(&self) -> usize {
        self.prepared.dim
    }

    pub fn eval_sample_len(&self) -> usize {
        self.prepared.l()
    }

    pub fn n_mc(&self) -> usize {
        self.prepared.n_mc
    }

    pub fn volume_seed(&self) -> u64 {
        self.prepared.volume_seed
    }

    fn need(&self) -> usize {
        if self.settings.variant.uses_eta() {
            required_matches(self.prepared.m(), self.settings.eta)
        } else {
            self.prepared.m()
        }
    }

    /// `(f_1(x), ..., f_M(x))`
    pub fn bank_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.prepared.dim {
            return Err(Error::DimensionMismatch {
                expected: self.prepared.dim,
                got: x.len(),
            });
        }
        Ok(self.prepared.bank.iter().map(|f| f.density(x)).collect())
    }

    fn hits(values: &[f64], m: usize, fx: &[f64], need: usize, epsilon: f64) -> usize {
        values
            .chunks_exact(m)
            .filter(|fy| match_key(fx, fy, need) < epsilon)
            .count()
    }

    fn weight(&self, delta: f64, epsilon: f64) -> f64 {
        match self.settings.smooth_kernel {
            // Compare the difference itself so the indicator weight agrees
            // with the counting membership bit for bit.
            KernelKind::Indicator => {
                if delta.abs() < epsilon {
                    1.0
                } else {
                    0.0
                }
            }
            k => k.smoothing_weight(delta / epsilon),
        }
    }

    fn smoothed_sum(&self, fx: &[f64], epsilon: f64, gate_need: Option<usize>) -> f64 {
        let m = self.prepared.m();
        let mut total = 0.0;
        for fy in self.prepared.sample_values.chunks_exact(m) {
            if let Some(need) = gate_need {
                if match_key(fx, fy, need) >= epsilon {
                    continue;
                }
            }
            let w: f64 = fx.iter().zip(fy).map(|(a, b)| self.weight(b - a, epsilon)).product();
            total += w;
        }
        total
    }

    fn count_fraction_at(&self, fx: &[f64], epsilon: f64) -> f64 {
        let p = &self.prepared;
        Self::hits(&p.sample_values, p.m(), fx, self.need(), epsilon) as f64 / p.l() as f64
    }

    fn smooth_fraction_at(&self, fx: &[f64], epsilon: f64) -> f64 {
        let gate = self.settings.variant.uses_eta().then(|| self.need());
        self.smoothed_sum(fx, epsilon, gate) / self.prepared.l() as f64
    }

    fn fraction_at(&self, fx: &[f64], epsilon: f64) -> f64 {
        if self.settings.variant.is_smoothed() {
            self.smooth_fraction_at(fx, epsilon)
        } else {
            self.count_fraction_at(fx, epsilon)
        }
    }

    fn volume_at(&self, fx: &[f64], epsilon: f64) -> f64 {
        let p = &self.prepared;
        let hits = Self::hits(&p.draw_values, p.m(), fx, self.need(), epsilon);
        volume_from_hits(p.bbox.volume(), hits, p.n_mc)
    }

    /// Fraction of the hold-out sample in the variant's neighborhood of `x`.
    pub fn count_fraction(&self, x: &[f64]) -> Result<f64> {
        let fx = self.bank_values(x)?;
        Ok(self.count_fraction_at(&fx, self.settings.epsilon))
    }

    /// Kernel-weighted fraction; eta variants gate each term by `B^eta`.
    pub fn smooth_fraction(&self, x: &[f64]) -> Result<f64> {
        let fx = self.bank_values(x)?;
        Ok(self.smooth_fraction_at(&fx, self.settings.epsilon))
    }

    /// Numerator of the variant.
    pub fn fraction(&self, x: &[f64]) -> Result<f64> {
        let fx = self.bank_values(x)?;
        Ok(self.fraction_at(&fx, self.settings.epsilon))
    }

    /// Monte-Carlo measure of the variant's neighborhood of `x`.
    pub fn volume(&self, x: &[f64]) -> Result<f64> {
        let fx = self.bank_values(x)?;
        Ok(self.volume_at(&fx, self.settings.epsilon))
    }

    pub fn estimate(&self, x: &[f64]) -> Result<PointEstimate> {
        let fx = self.bank_values(x)?;
        let eps = self.settings.epsilon;
        Ok(PointEstimate::from_parts(self.fraction_at(&fx, eps), self.volume_at(&fx, eps)))
    }

    /// `fraction(x) / volume(x)`; zero when both vanish, an error when only
    /// the volume does.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.estimate(x)?.into_result()
    }

    /// Estimates at `x` for every epsilon of an ascending grid. Each entry is
    /// identical to what [`Self::estimate`] returns after
    /// [`Self::with_epsilon`].
    pub fn profile(&self, x: &[f64], eps_grid: &[f64]) -> Result<Vec<PointEstimate>> {
        validate_grid(eps_grid)?;
        let fx = self.bank_values(x)?;
        let p = &self.prepared;
        let (m, need) = (p.m(), self.need());
        let cumulative = |values: &[f64]| -> Vec<usize> {
            let mut hist = vec![0usize; eps_grid.len() + 1];
            for fy in values.chunks_exact(m) {
                let key = match_key(&fx, fy, need);
                // First grid index with key < eps.
                hist[eps_grid.partition_point(|&e| e <= key)] += 1;
            }
            let mut run = 0;
            hist[..eps_grid.len()]
                .iter()
                .map(|h| {
                    run += h;
                    run
                })
                .collect()
        };
        let vol_hits = cumulative(&p.draw_values);
        let fractions: Vec<f64> = if self.settings.variant.is_smoothed() {
            eps_grid.iter().map(|&e| self.smooth_fraction_at(&fx, e)).collect()
        } else {
            cumulative(&p.sample_values)
                .into_iter()
                .map(|h| h as f64 / p.l() as f64)
                .collect()
        };
        Ok(fractions
            .into_iter()
            .zip(vol_hits)
            .map(|(frac, hits)| PointEstimate::from_parts(frac, volume_from_hits(p.bbox.volume(), hits, p.n_mc)))
            .collect())
    }
}

/// Counting estimate at a single point from a one-member bank.
///
/// Equal to [`AggregatedEstimator::estimate`] for the same estimator, sample,
/// box, `epsilon`, `n_mc` and seed, but membership of the draws is decided
/// through a [`BandIndex`], which usually stops well short of the full kernel
/// sum. Suited to callers that need one point per fitted estimator.
pub fn single_point_estimate(
    f: &KdeEstimator,
    eval_sample: &Points,
    bbox: &BoundingBox,
    epsilon: f64,
    n_mc: usize,
    volume_seed: u64,
    x: &[f64],
) -> Result<PointEstimate> {
    let dim = f.dim();
    for got in [x.len(), eval_sample.dim(), bbox.dim()] {
        if got != dim {
            return Err(Error::DimensionMismatch { expected: dim, got });
        }
    }
    if eval_sample.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    validate_epsilon_eta(epsilon, 0.0)?;
    if n_mc == 0 {
        return Err(Error::invalid("n_mc", "must be at least 1"));
    }
    let fx = f.density(x);
    let index = BandIndex::new(f);
    let member = |y: &[f64]| match &index {
        Some(ix) => ix.in_band(y, fx, epsilon),
        None => (f.density(y) - fx).abs() < epsilon,
    };
    let count = eval_sample.iter().filter(|y| member(y)).count();
    let draws = uniform_draws(bbox, n_mc, volume_seed);
    let hits = draws.iter().filter(|y| member(y)).count();
    Ok(PointEstimate::from_parts(
        count as f64 / eval_sample.len() as f64,
        volume_from_hits(bbox.volume(), hits, n_mc),
    ))
}

fn validate_grid(eps_grid: &[f64]) -> Result<()> {
    if eps_grid.is_empty() {
        return Err(Error::invalid("eps_grid", "epsilon grid is empty"));
    }
    if eps_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::invalid("eps_grid", "epsilon values must be positive"));
    }
    if eps_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("eps_grid", "epsilon grid must be sorted ascending"));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EpsilonSelection {
    pub epsilon: f64,
    pub index: usize,
    /// Discrete L2 distance to the reference per grid value; NaN where the
    /// value was excluded as degenerate.
    pub distances: Vec<f64>,
    /// Reference density (mean of the whole-sample bank) at the eval points.
    pub reference: Vec<f64>,
    /// Aggregated estimates at the eval points for the selected epsilon.
    pub estimates: Vec<PointEstimate>,
}

/// Mean of a bank of densities at each point.
pub fn bank_mean(bank: &[KdeEstimator], points: &Points) -> Vec<f64> {
    let m = bank.len() as f64;
    par::map_range(points.len(), |i| {
        let x = points.row(i);
        bank.iter().map(|f| f.density(x)).sum::<f64>() / m
    })
}

/// `n` log-spaced epsilons on `[lo, hi] * IQR(reference)`; falls back to the
/// range when the interquartile range vanishes.
pub fn default_epsilon_grid(reference: &[f64], n: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    let s = stats::sorted(reference);
    let mut spread = stats::quantile_sorted(&s, 0.75) - stats::quantile_sorted(&s, 0.25);
    if !(spread > 0.0) {
        spread = s.last().copied().unwrap_or(0.0) - s.first().copied().unwrap_or(0.0);
    }
    if !(spread > 0.0) {
        return Err(Error::invalid("eps_grid", "reference density has no spread to scale the grid"));
    }
    Ok(stats::log_spaced(lo * spread, hi * spread, n))
}

/// Picks the grid epsilon whose aggregated estimate is closest, in discrete
/// L2 over `eval_points` (uniform on `region`), to the mean of `bank_full`.
///
/// Degenerate points are left out of a grid value's distance; a grid value
/// degenerate at half or more of the points is excluded. Ties go to the
/// smallest epsilon.
pub fn select_epsilon(
    bank_full: &[KdeEstimator],
    template: &AggregatedEstimator,
    eval_points: &Points,
    region: &BoundingBox,
    eps_grid: &[f64],
) -> Result<EpsilonSelection> {
    if bank_full.is_empty() {
        return Err(Error::invalid("bank_full", "at least one estimator is required"));
    }
    if eval_points.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let reference = bank_mean(bank_full, eval_points);
    select_epsilon_against(template, eval_points, reference, region, eps_grid)
}

/// [`select_epsilon`] with the reference values at `eval_points` given.
pub fn select_epsilon_against(
    template: &AggregatedEstimator,
    eval_points: &Points,
    reference: Vec<f64>,
    region: &BoundingBox,
    eps_grid: &[f64],
) -> Result<EpsilonSelection> {
    if eval_points.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    if reference.len() != eval_points.len() {
        return Err(Error::invalid("reference", "one reference value per eval point is required"));
    }
    validate_grid(eps_grid)?;
    let profiles = par::map_range(eval_points.len(), |i| template.profile(eval_points.row(i), eps_grid))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    choose_epsilon(profiles, reference, region, eps_grid)
}

pub(crate) fn choose_epsilon(
    profiles: Vec<Vec<PointEstimate>>,
    reference: Vec<f64>,
    region: &BoundingBox,
    eps_grid: &[f64],
) -> Result<EpsilonSelection> {
    let n = profiles.len();
    let distances: Vec<f64> = (0..eps_grid.len())
        .map(|g| {
            let mut sq = 0.0;
            let mut valid = 0usize;
            for (prof, r) in profiles.iter().zip(&reference) {
                if let Some(v) = prof[g].value() {
                    sq += (v - r) * (v - r);
                    valid += 1;
                }
            }
            if 2 * (n - valid) >= n {
                f64::NAN
            } else {
                (region.volume() / valid as f64 * sq).sqrt()
            }
        })
        .collect();
    let index = stats::argmin_first(&distances).ok_or(Error::SelectionFailed { points: n })?;
    let estimates = profiles.iter().map(|p| p[index]).collect();
    Ok(EpsilonSelection {
        epsilon: eps_grid[index],
        index,
        distances,
        reference,
        estimates,
    })
}
