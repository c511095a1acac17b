use crate::density::Density;
use crate::error::{Error, Result};
use crate::kde::{build_bank, cross_validated_bandwidth, reference_bandwidth, BandwidthBank};
use crate::kernels::KernelKind;
use crate::models::AnalyticModel;
use crate::neighborhood::{count_hits, uniform_draws, volume_from_hits, BoundingBox};
use crate::par;
use crate::rng::{derive_seed, substream, Domain};
use crate::stats;

/// Bandwidth rule for the convergence banks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandwidthRule {
    Reference,
    CrossValidated,
}

/// Shared-draw comparison of `mu(B(eps, x))` for growing fitting samples
/// against `mu(B*(eps, x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConfig {
    pub model: AnalyticModel,
    pub point: Vec<f64>,
    pub epsilon: f64,
    /// Fitting-sample sizes; smaller samples are prefixes of larger ones.
    pub sizes: Vec<usize>,
    pub seeds: usize,
    pub master_seed: u64,
    pub kernel: KernelKind,
    pub multipliers: Vec<f64>,
    pub bandwidth: BandwidthRule,
    pub mc_box: BoundingBox,
    pub n_mc: usize,
}

impl ConvergenceConfig {
    pub fn new(model: AnalyticModel, point: Vec<f64>, epsilon: f64) -> Self {
        Self {
            mc_box: model.default_mc_box(),
            model,
            point,
            epsilon,
            sizes: vec![500, 2000, 8000],
            seeds: 20,
            master_seed: 0,
            kernel: KernelKind::Epanechnikov,
            multipliers: BandwidthBank::DEFAULT_MULTIPLIERS.to_vec(),
            bandwidth: BandwidthRule::Reference,
            n_mc: 50_000,
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.model.dim();
        if self.point.len() != d || self.mc_box.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: if self.point.len() != d { self.point.len() } else { self.mc_box.dim() },
            });
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        if self.sizes.is_empty() || self.sizes.iter().any(|&k| k < 2) {
            return Err(Error::invalid("sizes", "need at least one size of 2 or more"));
        }
        if self.seeds == 0 || self.n_mc == 0 {
            return Err(Error::invalid("seeds", "seeds and n_mc must be at least 1"));
        }
        if !self.kernel.is_density() {
            return Err(Error::NotADensityKernel(self.kernel));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceResult {
    pub sizes: Vec<usize>,
    /// Monte-Carlo `mu(B*)` per seed.
    pub star_volumes: Vec<f64>,
    /// `|mu(B) - mu(B*)|`, indexed `[seed][size]`.
    pub gaps: Vec<Vec<f64>>,
    /// Median gap over seeds, per size.
    pub medians: Vec<f64>,
}

impl ConvergenceResult {
    /// Pairs `(i, j)`, `i < j`, of sizes with a strictly smaller median gap at
    /// the larger size, and the total number of pairs.
    pub fn decreasing_pairs(&self) -> (usize, usize) {
        let n = self.medians.len();
        let mut down = 0;
        let mut total = 0;
        for i in 0..n {
            for j in i + 1..n {
                total += 1;
                if self.medians[j] < self.medians[i] {
                    down += 1;
                }
            }
        }
        (down, total)
    }
}

pub fn volume_convergence(cfg: &ConvergenceConfig) -> Result<ConvergenceResult> {
    cfg.validate()?;
    let max_k = *cfg.sizes.iter().max().expect("sizes is nonempty");
    let fstar = cfg.model.density(&cfg.point);
    let per_seed = (0..cfg.seeds)
        .map(|s| -> Result<(f64, Vec<f64>)> {
            let mut rng = substream(cfg.master_seed, Domain::Data, s as u64);
            let sample = cfg.model.sample(max_k, &mut rng)?;
            let draws = uniform_draws(&cfg.mc_box, cfg.n_mc, derive_seed(cfg.master_seed, Domain::Volume, s as u64));
            let star_hits = count_hits(&draws, |y| (cfg.model.density(y) - fstar).abs() < cfg.epsilon);
            let star = volume_from_hits(cfg.mc_box.volume(), star_hits, cfg.n_mc);
            let gaps = par::map_slice(&cfg.sizes, |&k| -> Result<f64> {
                let fit = sample.split_at(k).0;
                let h = match cfg.bandwidth {
                    BandwidthRule::Reference => reference_bandwidth(&fit, cfg.kernel)?,
                    BandwidthRule::CrossValidated => cross_validated_bandwidth(&fit, cfg.kernel)?,
                };
                let bank = build_bank(&fit, cfg.kernel, &BandwidthBank::with_multipliers(h, cfg.multipliers.clone()))?;
                let fx: Vec<f64> = bank.iter().map(|f| f.density(&cfg.point)).collect();
                let hits = count_hits(&draws, |y| {
                    bank.iter()
                        .zip(&fx)
                        .all(|(f, v)| (f.density(y) - v).abs() < cfg.epsilon)
                });
                Ok((volume_from_hits(cfg.mc_box.volume(), hits, cfg.n_mc) - star).abs())
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            Ok((star, gaps))
        })
        .collect::<Result<Vec<_>>>()?;
    let (star_volumes, gaps): (Vec<f64>, Vec<Vec<f64>>) = per_seed.into_iter().unzip();
    let medians = (0..cfg.sizes.len())
        .map(|j| stats::median(&gaps.iter().map(|g| g[j]).collect::<Vec<_>>()))
        .collect();
    Ok(ConvergenceResult {
        sizes: cfg.sizes.clone(),
        star_volumes,
        gaps,
        medians,
    })
}
