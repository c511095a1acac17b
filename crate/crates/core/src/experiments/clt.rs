use crate::aggregate::single_point_estimate;
use crate::density::Density;
use crate::error::{Error, Result};
use crate::kde::{cross_validated_bandwidth, KdeEstimator};
use crate::kernels::KernelKind;
use crate::models::AnalyticModel;
use crate::neighborhood::{mc_volume, star_member, BoundingBox};
use crate::par;
use crate::points::Points;
use crate::rng::{derive_seed, substream, Domain};
use crate::stats::Summary;

use super::ks::{ks_test_normal, KsResult};

#[derive(Debug, Clone, PartialEq)]
pub struct CltConfig {
    pub model: AnalyticModel,
    pub point: Vec<f64>,
    pub epsilon: f64,
    pub k: usize,
    pub l: usize,
    pub replicates: usize,
    pub seed: u64,
    /// `mu(B*(eps, x))`. When absent it is computed exactly for spherical
    /// normals and estimated by Monte Carlo (`star_n_mc` draws on `mc_box`)
    /// otherwise.
    pub star_volume: Option<f64>,
    pub star_n_mc: usize,
    pub mc_box: BoundingBox,
    pub n_mc: usize,
    pub kernel: KernelKind,
    /// Fixed bandwidth; cross-validated on the first replicate when absent.
    pub hcv: Option<f64>,
    /// Bandwidth of the KDE curve of the statistics.
    pub curve_bandwidth: f64,
}

impl CltConfig {
    pub fn new(model: AnalyticModel, point: Vec<f64>, epsilon: f64, k: usize, l: usize, replicates: usize, seed: u64) -> Self {
        let d = model.dim();
        Self {
            mc_box: model.default_mc_box(),
            model,
            point,
            epsilon,
            k,
            l,
            replicates,
            seed,
            star_volume: None,
            star_n_mc: 400_000,
            n_mc: if d <= 2 { 20_000 } else { 40_000 },
            kernel: KernelKind::Gaussian,
            hcv: None,
            curve_bandwidth: 0.15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.model.dim();
        if self.point.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: self.point.len() });
        }
        if self.mc_box.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: self.mc_box.dim() });
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon", format!("must be positive, got {}", self.epsilon)));
        }
        for (name, v) in [("l", self.l), ("replicates", self.replicates), ("n_mc", self.n_mc), ("star_n_mc", self.star_n_mc)] {
            if v == 0 {
                return Err(Error::invalid(name, "must be at least 1"));
            }
        }
        if self.k < 2 {
            return Err(Error::invalid("k", "bandwidth selection needs at least 2 points"));
        }
        if !self.kernel.is_density() {
            return Err(Error::NotADensityKernel(self.kernel));
        }
        for (name, v) in [("star_volume", self.star_volume), ("hcv", self.hcv)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::invalid(name, format!("must be positive, got {v}")));
                }
            }
        }
        if !(self.curve_bandwidth > 0.0) {
            return Err(Error::invalid("curve_bandwidth", "must be positive"));
        }
        Ok(())
    }

    fn sample(&self, replicate: usize) -> Result<(Points, Points)> {
        let mut rng = substream(self.seed, Domain::Clt, replicate as u64);
        Ok(self.model.sample(self.k + self.l, &mut rng)?.split_at(self.k))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CltResult {
    /// `sqrt(mu(B*) l) (f_agg(x) - f(x))`, one per replicate.
    pub statistics: Vec<f64>,
    /// `f(x)`, the limiting variance.
    pub target_variance: f64,
    pub star_volume: f64,
    pub hcv: f64,
    pub summary: Summary,
    pub ks: KsResult,
    /// `(t, density)` pairs of a Gaussian KDE of the statistics.
    pub curve: Vec<(f64, f64)>,
}

/// Monte-Carlo `mu(B*(eps, x))` for the config's model.
pub fn star_volume(cfg: &CltConfig) -> Result<f64> {
    let model = &cfg.model;
    let x = cfg.point.as_slice();
    mc_volume(
        |y: &[f64]| star_member(model, cfg.epsilon, x, y),
        &cfg.mc_box,
        cfg.star_n_mc,
        derive_seed(cfg.seed, Domain::Volume, u64::MAX),
    )
}

/// Aggregated estimate at `x` from one replicate with a single fixed-bandwidth
/// KDE and per-replicate volume draws.
fn replicate_estimate(cfg: &CltConfig, replicate: usize, hcv: f64) -> Result<f64> {
    let (fit, hold) = cfg.sample(replicate)?;
    let f = KdeEstimator::new(&fit, hcv, cfg.kernel)?;
    single_point_estimate(
        &f,
        &hold,
        &cfg.mc_box,
        cfg.epsilon,
        cfg.n_mc,
        derive_seed(cfg.seed, Domain::Volume, replicate as u64),
        &cfg.point,
    )?
    .into_result()
}

pub fn run_clt(cfg: &CltConfig) -> Result<CltResult> {
    cfg.validate()?;
    let star = match cfg.star_volume {
        Some(v) => v,
        None if cfg.model.spherical_sigma().is_some() => cfg.model.spherical_star_volume(&cfg.point, cfg.epsilon)?,
        None => star_volume(cfg)?,
    };
    if !(star > 0.0) {
        return Err(Error::DegenerateVolume { fraction: 0.0 });
    }
    let hcv = match cfg.hcv {
        Some(h) => h,
        None => cross_validated_bandwidth(&cfg.sample(0)?.0, cfg.kernel)?,
    };
    let fx = cfg.model.density(&cfg.point);
    let scale = (star * cfg.l as f64).sqrt();
    let statistics = par::map_range(cfg.replicates, |r| {
        replicate_estimate(cfg, r, hcv)
            .map(|est| scale * (est - fx))
            .map_err(|e| Error::Replicate { replicate: r, source: Box::new(e) })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let ks = ks_test_normal(&statistics, fx)?;
    Ok(CltResult {
        summary: Summary::of(&statistics),
        curve: kde_curve(&statistics, cfg.curve_bandwidth, 201),
        statistics,
        target_variance: fx,
        star_volume: star,
        hcv,
        ks,
    })
}

/// Gaussian KDE of `values` on `points` equally spaced abscissae spanning the
/// data plus three bandwidths on each side.
pub fn kde_curve(values: &[f64], bandwidth: f64, points: usize) -> Vec<(f64, f64)> {
    if values.is_empty() || points == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * bandwidth;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * bandwidth;
    let step = if points > 1 { (hi - lo) / (points - 1) as f64 } else { 0.0 };
    let norm = 1.0 / (values.len() as f64 * bandwidth);
    (0..points)
        .map(|i| {
            let t = lo + step * i as f64;
            let s: f64 = values.iter().map(|v| KernelKind::Gaussian.eval_1d((t - v) / bandwidth)).sum();
            (t, s * norm)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_integrates_to_one() {
        let values = [-0.3, 0.1, 0.2, 0.9];
        let curve = kde_curve(&values, 0.15, 2001);
        let step = curve[1].0 - curve[0].0;
        let area: f64 = curve.iter().map(|(_, y)| y).sum::<f64>() * step;
        assert!((area - 1.0).abs() < 1e-2);
        assert!(kde_curve(&[], 0.15, 10).is_empty());
    }

    #[test]
    fn validation() {
        let model = AnalyticModel::diag_normal(vec![1.0, 1.0]).unwrap();
        let cfg = CltConfig::new(model.clone(), vec![0.5, 0.5], 0.005, 200, 100, 30, 1);
        assert!(cfg.validate().is_ok());
        assert!(CltConfig::new(model.clone(), vec![0.5], 0.005, 200, 100, 30, 1).validate().is_err());
        assert!(CltConfig::new(model, vec![0.5, 0.5], 0.0, 200, 100, 30, 1).validate().is_err());
    }
}
