//! Density-value neighborhoods and their Monte-Carlo volume.
//!
//! `B(eps, x)` holds every `y` at which *all* bank members are within `eps`
//! of their value at `x`; the relaxed `B^eta(eps, x)` only asks a fraction
//! `1 - eta` of them to be. Both use a strict `< eps`.

use rand::Rng;

use crate::density::Density;
use crate::error::{Error, Result};
use crate::par;
use crate::points::Points;
use crate::rng::{substream, Domain};

/// Draws per independently seeded chunk of a uniform sample.
pub const DRAW_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
    volume: f64,
}

impl BoundingBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::invalid(
                "box",
                format!("lower/upper lengths {} and {} must match and be non-zero", lower.len(), upper.len()),
            ));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::invalid("box", format!("axis {i}: need finite lower < upper, got [{l}, {u}]")));
            }
        }
        let volume = lower.iter().zip(&upper).map(|(l, u)| u - l).product();
        Ok(Self { lower, upper, volume })
    }

    /// `[lo, hi]^dim`
    pub fn cube(lo: f64, hi: f64, dim: usize) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    /// Componentwise min/max of `points`, widened by `margin` of the range on
    /// each side.
    pub fn around(points: &Points, margin: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::TooFewPoints { needed: 1, got: 0 });
        }
        let d = points.dim();
        let mut lower = vec![f64::INFINITY; d];
        let mut upper = vec![f64::NEG_INFINITY; d];
        for row in points.iter() {
            for i in 0..d {
                lower[i] = lower[i].min(row[i]);
                upper[i] = upper[i].max(row[i]);
            }
        }
        for i in 0..d {
            let pad = (upper[i] - lower[i]).max(1e-12) * margin;
            lower[i] -= pad;
            upper[i] += pad;
        }
        Self::new(lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }
}

/// `n` uniform draws on `bbox`. Chunk `c` of [`DRAW_CHUNK`] draws comes from
/// its own sub-stream of `seed`, so the sample is identical however the
/// chunks are scheduled.
pub fn uniform_draws(bbox: &BoundingBox, n: usize, seed: u64) -> Points {
    let d = bbox.dim();
    let mut data = vec![0.0; n * d];
    par::for_each_chunk_mut(&mut data, DRAW_CHUNK * d, |start, piece| {
        let mut rng = substream(seed, Domain::UniformChunk, (start / (DRAW_CHUNK * d)) as u64);
        for row in piece.chunks_exact_mut(d) {
            for (axis, v) in row.iter_mut().enumerate() {
                let (l, u) = (bbox.lower[axis], bbox.upper[axis]);
                *v = l + (u - l) * rng.random::<f64>();
            }
        }
    });
    Points::from_raw(d, data)
}

/// `box volume * hits / n`
pub fn volume_from_hits(box_volume: f64, hits: usize, n: usize) -> f64 {
    box_volume * (hits as f64) / (n as f64)
}

/// Hit-or-miss estimate of the Lebesgue measure of `{y in bbox : membership(y)}`.
pub fn mc_volume<F>(membership: F, bbox: &BoundingBox, n_mc: usize, seed: u64) -> Result<f64>
where
    F: Fn(&[f64]) -> bool + Sync + Send,
{
    if n_mc == 0 {
        return Err(Error::invalid("n_mc", "must be at least 1"));
    }
    let draws = uniform_draws(bbox, n_mc, seed);
    Ok(mc_volume_on(&draws, bbox, membership))
}

/// Same as [`mc_volume`] on a caller-held sample, so several sets can be
/// measured with identical draws.
pub fn mc_volume_on<F>(draws: &Points, bbox: &BoundingBox, membership: F) -> f64
where
    F: Fn(&[f64]) -> bool + Sync + Send,
{
    volume_from_hits(bbox.volume(), count_hits(draws, membership), draws.len())
}

pub fn count_hits<F>(draws: &Points, membership: F) -> usize
where
    F: Fn(&[f64]) -> bool + Sync + Send,
{
    let d = draws.dim();
    let chunk = DRAW_CHUNK * d;
    let starts: Vec<usize> = (0..draws.as_slice().len()).step_by(chunk.max(1)).collect();
    par::map_slice(&starts, |&s| {
        let end = (s + chunk).min(draws.as_slice().len());
        draws.as_slice()[s..end]
            .chunks_exact(d)
            .filter(|y| membership(y))
            .count()
    })
    .into_iter()
    .sum()
}

/// Smallest number of bank members that must match for `B^eta`
/// (`count / M >= 1 - eta`).
pub fn required_matches(bank_size: usize, eta: f64) -> usize {
    let m = bank_size as f64;
    (1..=bank_size)
        .find(|&c| c as f64 / m >= 1.0 - eta)
        .unwrap_or(bank_size)
}

/// The `need`-th smallest `|fy_m - fx_m|`. A point is in the neighborhood iff
/// this key is `< eps`, which lets one key answer every `eps` at once.
pub fn match_key(fx: &[f64], fy: &[f64], need: usize) -> f64 {
    debug_assert!(need >= 1 && need <= fx.len() && fx.len() == fy.len());
    if need == fx.len() {
        return fx
            .iter()
            .zip(fy)
            .map(|(a, b)| (b - a).abs())
            .fold(0.0, f64::max);
    }
    let mut diffs: Vec<f64> = fx.iter().zip(fy).map(|(a, b)| (b - a).abs()).collect();
    diffs.sort_by(f64::total_cmp);
    diffs[need - 1]
}

/// `B(eps, x)` (`eta = 0`) or `B^eta(eps, x)` over a bank of densities.
#[derive(Debug, Clone, Copy)]
pub struct NeighborhoodSpec<'a, D> {
    bank: &'a [D],
    epsilon: f64,
    eta: f64,
}

impl<'a, D: Density> NeighborhoodSpec<'a, D> {
    pub fn new(bank: &'a [D], epsilon: f64, eta: f64) -> Result<Self> {
        if bank.is_empty() {
            return Err(Error::invalid("bank", "at least one estimator is required"));
        }
        validate_epsilon_eta(epsilon, eta)?;
        Ok(Self { bank, epsilon, eta })
    }

    pub fn bank(&self) -> &'a [D] {
        self.bank
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn values(&self, x: &[f64]) -> Vec<f64> {
        self.bank.iter().map(|f| f.density(x)).collect()
    }

    pub fn member(&self, x: &[f64], y: &[f64]) -> bool {
        let (fx, fy) = (self.values(x), self.values(y));
        self.member_values(&fx, &fy)
    }

    /// Membership from precomputed bank values at `x` and `y`.
    pub fn member_values(&self, fx: &[f64], fy: &[f64]) -> bool {
        let matches = fx
            .iter()
            .zip(fy)
            .filter(|(a, b)| (*b - *a).abs() < self.epsilon)
            .count();
        if self.eta == 0.0 {
            matches == self.bank.len()
        } else {
            matches as f64 / self.bank.len() as f64 >= 1.0 - self.eta
        }
    }
}

pub(crate) fn validate_epsilon_eta(epsilon: f64, eta: f64) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon", format!("must be positive, got {epsilon}")));
    }
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::invalid("eta", format!("must lie in [0, 1), got {eta}")));
    }
    Ok(())
}

/// `y` in `B*(eps, x) = { y : |f(x) - f(y)| < eps }` for the true density.
pub fn star_member<D: Density + ?Sized>(f: &D, epsilon: f64, x: &[f64], y: &[f64]) -> bool {
    (f.density(x) - f.density(y)).abs() < epsilon
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::FnDensity;
    use proptest::prelude::*;

    fn bivariate_standard_normal() -> FnDensity<impl Fn(&[f64]) -> f64 + Sync> {
        FnDensity::new(2, |x: &[f64]| {
            (-(x[0] * x[0] + x[1] * x[1]) / 2.0).exp() / (2.0 * std::f64::consts::PI)
        })
    }

    /// Constant-offset "densities" so bank differences are under test control.
    fn bank2() -> Vec<FnDensity<impl Fn(&[f64]) -> f64 + Sync>> {
        let mk = |slope: f64| FnDensity::new(1, move |x: &[f64]| slope * x[0]);
        vec![mk(1.0), mk(3.0)]
    }

    #[test]
    fn membership_examples() {
        let bank = bank2();
        let eps = 1.0;
        // y - x = 0.5 gives differences (0.5, 1.5) = (0.5 eps, 1.5 eps).
        let strict = NeighborhoodSpec::new(&bank, eps, 0.0).unwrap();
        let relaxed = NeighborhoodSpec::new(&bank, eps, 0.5).unwrap();
        assert!(strict.member(&[0.2], &[0.2]));
        assert!(!strict.member(&[0.0], &[0.5]));
        assert!(relaxed.member(&[0.0], &[0.5]));
        assert!(NeighborhoodSpec::new(&bank, eps, 1.0).is_err());
        assert!(NeighborhoodSpec::new(&bank, 0.0, 0.0).is_err());
    }

    #[test]
    fn strict_inequality_at_boundary() {
        let bank = vec![FnDensity::new(1, |x: &[f64]| x[0])];
        let spec = NeighborhoodSpec::new(&bank, 0.5, 0.0).unwrap();
        assert!(!spec.member(&[0.0], &[0.5]));
    }

    #[test]
    fn star_membership() {
        let f = bivariate_standard_normal();
        let x = [0.5, 0.5];
        assert!(star_member(&f, 0.005, &x, &x));
        // f(0.7, 0) = 0.124571 lies within 0.005 of f(x) = 0.123950.
        assert!((f.density(&[0.7, 0.0]) - 0.124571).abs() < 1e-6);
        assert!(star_member(&f, 0.005, &x, &[0.7, 0.0]));
        assert!(!star_member(&f, 0.005, &x, &[0.2, 0.0]));
        assert!(star_member(&f, 0.005, &x, &[-0.5, 0.5]));
    }

    #[test]
    fn mc_volume_examples() {
        let unit = BoundingBox::cube(0.0, 1.0, 2).unwrap();
        let half = mc_volume(|y| y[0] < 0.5, &unit, 20_000, 99).unwrap();
        assert!((half - 0.5).abs() < 0.011, "{half}");
        let b = BoundingBox::new(vec![-1.0, 0.0], vec![2.0, 0.5]).unwrap();
        assert_eq!(mc_volume(|_| true, &b, 1000, 1).unwrap(), b.volume());
        assert_eq!(mc_volume(|_| false, &b, 1000, 1).unwrap(), 0.0);
        assert!(mc_volume(|_| true, &b, 0, 1).is_err());
    }

    #[test]
    fn draws_are_deterministic_and_inside() {
        let b = BoundingBox::new(vec![-2.0, 1.0, 0.0], vec![2.0, 3.0, 0.1]).unwrap();
        let a = uniform_draws(&b, 10_000, 5);
        assert_eq!(a, uniform_draws(&b, 10_000, 5));
        assert!(a.iter().all(|y| b.contains(y)));
        // Prefixes agree: chunking depends only on the index.
        let short = uniform_draws(&b, 5000, 5);
        assert_eq!(short.as_slice(), &a.as_slice()[..5000 * 3]);
    }

    #[test]
    fn box_validation() {
        assert!(BoundingBox::new(vec![0.0], vec![0.0]).is_err());
        assert!(BoundingBox::new(vec![0.0, 0.0], vec![1.0]).is_err());
        let p = Points::new(1, vec![0.0, 10.0]).unwrap();
        let b = BoundingBox::around(&p, 0.1).unwrap();
        assert_eq!((b.lower()[0], b.upper()[0]), (-1.0, 11.0));
    }

    #[test]
    fn required_matches_table() {
        assert_eq!(required_matches(5, 0.0), 5);
        assert_eq!(required_matches(5, 0.2), 4);
        assert_eq!(required_matches(2, 0.5), 1);
        assert_eq!(required_matches(1, 0.9), 1);
    }

    fn gauss_bank() -> Vec<FnDensity<impl Fn(&[f64]) -> f64 + Sync>> {
        let mk = |s: f64| {
            FnDensity::new(2, move |x: &[f64]| {
                (-(x[0] * x[0] + x[1] * x[1]) / (2.0 * s * s)).exp() / (2.0 * std::f64::consts::PI * s * s)
            })
        };
        vec![mk(0.8), mk(1.0), mk(1.3)]
    }

    proptest! {
        #[test]
        fn symmetric_and_monotone(
            x in prop::collection::vec(-2.0f64..2.0, 2),
            y in prop::collection::vec(-2.0f64..2.0, 2),
            eps in 0.001f64..0.1,
            eta in 0.0f64..0.9,
        ) {
            let bank = gauss_bank();
            let s0 = NeighborhoodSpec::new(&bank, eps, 0.0).unwrap();
            prop_assert_eq!(s0.member(&x, &y), s0.member(&y, &x));
            let s = NeighborhoodSpec::new(&bank, eps, eta).unwrap();
            if s.member(&x, &y) {
                let wider = NeighborhoodSpec::new(&bank, eps * 1.5, eta).unwrap();
                prop_assert!(wider.member(&x, &y));
                let looser = NeighborhoodSpec::new(&bank, eps, (eta + 0.05).min(0.99)).unwrap();
                prop_assert!(looser.member(&x, &y));
            }
            let (fx, fy) = (s.values(&x), s.values(&y));
            let need = required_matches(bank.len(), eta);
            prop_assert_eq!(match_key(&fx, &fy, need) < eps, s.member(&x, &y));
        }

        #[test]
        fn shared_draw_volume_monotone_in_eps(seed in 0u64..50) {
            let bank = gauss_bank();
            let bbox = BoundingBox::cube(-3.0, 3.0, 2).unwrap();
            let draws = uniform_draws(&bbox, 2000, seed);
            let x = [0.4, -0.2];
            let mut last = 0.0;
            for eps in [0.002, 0.005, 0.01, 0.02, 0.05] {
                let spec = NeighborhoodSpec::new(&bank, eps, 0.0).unwrap();
                let v = mc_volume_on(&draws, &bbox, |y| spec.member(&x, y));
                prop_assert!(v >= last);
                last = v;
            }
        }
    }
}
