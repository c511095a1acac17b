//! Replicated simulation experiments: L2-error tables, the central-limit
//! harness and the neighborhood-volume convergence check.

mod clt;
mod convergence;
mod ks;

pub use clt::{kde_curve, run_clt, star_volume, CltConfig, CltResult};
pub use convergence::{volume_convergence, BandwidthRule, ConvergenceConfig, ConvergenceResult};
pub use ks::{kolmogorov_survival, ks_test_normal, KsResult};

use crate::aggregate::{
    bank_mean, default_epsilon_grid, select_epsilon_against, AggregatedEstimator, AggregatorSettings, Variant,
};
use crate::density::Density;
use crate::error::{Error, Result};
use crate::kde::{build_bank, cross_validated_bandwidth, BandwidthBank, KdeEstimator};
use crate::kernels::KernelKind;
use crate::models::AnalyticModel;
use crate::neighborhood::{uniform_draws, BoundingBox};
use crate::par;
use crate::points::Points;
use crate::rng::{derive_seed, substream, Domain};
use crate::stats::{self, Summary};

/// How the epsilon grid of a replicate is built.
#[derive(Debug, Clone, PartialEq)]
pub enum EpsGrid {
    /// `points` log-spaced values on `[lo, hi]` times the interquartile range
    /// of the reference density at the test points.
    Relative { points: usize, lo: f64, hi: f64 },
    /// `points` log-spaced values on `[lo, hi]`.
    LogSpaced { points: usize, lo: f64, hi: f64 },
    Explicit(Vec<f64>),
}

impl Default for EpsGrid {
    fn default() -> Self {
        EpsGrid::Relative { points: 20, lo: 0.01, hi: 1.0 }
    }
}

impl EpsGrid {
    fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::invalid("eps_grid", reason));
        match self {
            EpsGrid::Relative { points, lo, hi } | EpsGrid::LogSpaced { points, lo, hi } => {
                if *points == 0 {
                    return bad("grid needs at least one point");
                }
                if !(*lo > 0.0 && lo <= hi && hi.is_finite()) {
                    return bad("grid bounds must satisfy 0 < lo <= hi");
                }
                Ok(())
            }
            EpsGrid::Explicit(v) => {
                if v.is_empty() {
                    return bad("grid is empty");
                }
                if v.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                    return bad("epsilon values must be positive");
                }
                if v.windows(2).any(|w| w[1] < w[0]) {
                    return bad("grid must be sorted ascending");
                }
                Ok(())
            }
        }
    }

    pub fn resolve(&self, reference: &[f64]) -> Result<Vec<f64>> {
        match self {
            EpsGrid::Relative { points, lo, hi } => default_epsilon_grid(reference, *points, *lo, *hi),
            EpsGrid::LogSpaced { points, lo, hi } => Ok(stats::log_spaced(*lo, *hi, *points)),
            EpsGrid::Explicit(v) => Ok(v.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: AnalyticModel,
    pub k: usize,
    pub l: usize,
    pub kernel: KernelKind,
    pub multipliers: Vec<f64>,
    pub eps_grid: EpsGrid,
    pub variant: Variant,
    pub eta: f64,
    pub smooth_kernel: KernelKind,
    /// Region of the uniform test sample (error reporting and epsilon selection).
    pub test_box: BoundingBox,
    /// Region of the Monte-Carlo volume draws.
    pub mc_box: BoundingBox,
    pub n_test: usize,
    pub n_mc: usize,
    pub replicates: usize,
    pub master_seed: u64,
    /// Fixed bandwidths; computed from the first replicate when absent.
    pub hcv: Option<f64>,
    pub hcvu: Option<f64>,
}

impl ExperimentConfig {
    /// Full-scale defaults: `k = l = 2000` (d <= 2) or 4000, 100 replicates.
    pub fn new(model: AnalyticModel, kernel: KernelKind) -> Self {
        let d = model.dim();
        let k = if d <= 2 { 2000 } else { 4000 };
        Self {
            test_box: model.default_test_box(),
            mc_box: model.default_mc_box(),
            model,
            k,
            l: k,
            kernel,
            multipliers: BandwidthBank::DEFAULT_MULTIPLIERS.to_vec(),
            eps_grid: EpsGrid::default(),
            variant: Variant::Counting,
            eta: 0.0,
            smooth_kernel: KernelKind::Indicator,
            n_test: if d <= 2 { 2000 } else { 4000 },
            n_mc: if d <= 2 { 20_000 } else { 40_000 },
            replicates: 100,
            master_seed: 0,
            hcv: None,
            hcvu: None,
        }
    }

    /// Desk-scale defaults: `k = l = 500`, 20 replicates.
    pub fn desk(model: AnalyticModel, kernel: KernelKind) -> Self {
        Self {
            k: 500,
            l: 500,
            replicates: 20,
            ..Self::new(model, kernel)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.model.dim();
        for (name, v) in [("k", self.k), ("l", self.l), ("n_test", self.n_test), ("n_mc", self.n_mc), ("replicates", self.replicates)] {
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
        for b in [&self.test_box, &self.mc_box] {
            if b.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: b.dim() });
            }
        }
        if self.multipliers.is_empty() || self.multipliers.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::invalid("multipliers", "need at least one positive multiplier"));
        }
        for (name, h) in [("hcv", self.hcv), ("hcvu", self.hcvu)] {
            if let Some(h) = h {
                if !(h > 0.0 && h.is_finite()) {
                    return Err(Error::invalid(name, format!("must be positive, got {h}")));
                }
            }
        }
        crate::neighborhood::validate_epsilon_eta(1.0, self.eta)?;
        self.eps_grid.validate()
    }

    pub fn bank_size(&self) -> usize {
        self.multipliers.len()
    }

    /// Column labels: `f_agg, f_k_g1.., f_n_g1..`.
    pub fn labels(&self) -> Vec<String> {
        let m = self.bank_size();
        std::iter::once("f_agg".to_string())
            .chain((1..=m).map(|j| format!("f_k_g{j}")))
            .chain((1..=m).map(|j| format!("f_n_g{j}")))
            .collect()
    }

    fn sample(&self, replicate: usize) -> Result<(Points, Points, Points)> {
        let mut rng = substream(self.master_seed, Domain::Data, replicate as u64);
        let all = self.model.sample(self.k + self.l, &mut rng)?;
        let (fit, hold) = all.split_at(self.k);
        Ok((all, fit, hold))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub epsilon: f64,
    /// Test points where the aggregated estimate had no volume hits; they are
    /// left out of its L2 error.
    pub degenerate: usize,
    /// L2 errors in [`ExperimentConfig::labels`] order.
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub labels: Vec<String>,
    pub rows: Vec<ReplicateRow>,
    pub hcv: f64,
    pub hcvu: f64,
}

impl ExperimentResult {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.errors[j]).collect()
    }

    pub fn summaries(&self) -> Vec<Summary> {
        (0..self.labels.len()).map(|j| Summary::of(&self.column(j))).collect()
    }

    pub fn mean_errors(&self) -> Vec<f64> {
        (0..self.labels.len()).map(|j| stats::mean(&self.column(j))).collect()
    }

    /// Mean error of the aggregate and the best mean error among the
    /// `f_k` estimators.
    pub fn aggregate_vs_best_component(&self) -> (f64, f64) {
        let means = self.mean_errors();
        let m = (self.labels.len() - 1) / 2;
        let best = means[1..=m].iter().copied().fold(f64::INFINITY, f64::min);
        (means[0], best)
    }

    /// Weak-form oracle check: the aggregate's mean error is at most the best
    /// component's plus twice the standard error of the paired difference.
    pub fn aggregate_within_slack(&self) -> bool {
        let m = (self.labels.len() - 1) / 2;
        let means = self.mean_errors();
        let best = (1..=m)
            .min_by(|&a, &b| means[a].total_cmp(&means[b]))
            .expect("bank is nonempty");
        let diffs: Vec<f64> = self.rows.iter().map(|r| r.errors[0] - r.errors[best]).collect();
        let se = if diffs.len() > 1 {
            stats::std_dev(&diffs) / (diffs.len() as f64).sqrt()
        } else {
            0.0
        };
        stats::mean(&diffs) <= 2.0 * se
    }
}

/// Discrete L2 distance `sqrt(vol / n * sum (estimate - truth)^2)` over test
/// points drawn uniformly on `region`.
pub fn l2_error<E, T>(estimate: &E, truth: &T, test_points: &Points, region: &BoundingBox) -> Result<f64>
where
    E: Density + ?Sized,
    T: Density + ?Sized,
{
    if test_points.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    for got in [estimate.dim(), truth.dim(), region.dim()] {
        if got != test_points.dim() {
            return Err(Error::DimensionMismatch { expected: test_points.dim(), got });
        }
    }
    let est: Vec<f64> = test_points.iter().map(|u| estimate.density(u)).collect();
    let tru: Vec<f64> = test_points.iter().map(|u| truth.density(u)).collect();
    l2_from_values(&est, &tru, region.volume())
}

/// [`l2_error`] from precomputed values.
pub fn l2_from_values(estimate: &[f64], truth: &[f64], region_volume: f64) -> Result<f64> {
    if estimate.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: estimate.len() });
    }
    let sq: f64 = estimate.iter().zip(truth).map(|(e, t)| (e - t) * (e - t)).sum();
    Ok((region_volume / estimate.len() as f64 * sq).sqrt())
}

/// Bandwidths for the split-sample and whole-sample banks, from the first
/// replicate's data unless fixed in the config.
pub fn frozen_bandwidths(cfg: &ExperimentConfig) -> Result<(f64, f64)> {
    if let (Some(a), Some(b)) = (cfg.hcv, cfg.hcvu) {
        return Ok((a, b));
    }
    let (all, fit, _) = cfg.sample(0)?;
    let hcv = match cfg.hcv {
        Some(h) => h,
        None => cross_validated_bandwidth(&fit, cfg.kernel)?,
    };
    let hcvu = match cfg.hcvu {
        Some(h) => h,
        None => cross_validated_bandwidth(&all, cfg.kernel)?,
    };
    Ok((hcv, hcvu))
}

fn bank_errors(bank: &[KdeEstimator], test: &Points, truth: &[f64], volume: f64) -> Result<Vec<f64>> {
    bank.iter()
        .map(|f| {
            let est = par::map_range(test.len(), |i| f.density(test.row(i)));
            l2_from_values(&est, truth, volume)
        })
        .collect()
}

/// One replicate of the L2-error protocol.
pub fn run_replicate(cfg: &ExperimentConfig, replicate: usize, hcv: f64, hcvu: f64) -> Result<ReplicateRow> {
    let (all, fit, hold) = cfg.sample(replicate)?;
    let bank_k = build_bank(&fit, cfg.kernel, &BandwidthBank::with_multipliers(hcv, cfg.multipliers.clone()))?;
    let bank_n = build_bank(&all, cfg.kernel, &BandwidthBank::with_multipliers(hcvu, cfg.multipliers.clone()))?;
    let test = uniform_draws(&cfg.test_box, cfg.n_test, derive_seed(cfg.master_seed, Domain::TestPoints, replicate as u64));
    let truth = par::map_range(test.len(), |i| cfg.model.density(test.row(i)));
    let reference = bank_mean(&bank_n, &test);
    let grid = cfg.eps_grid.resolve(&reference)?;
    let template = AggregatedEstimator::new(
        bank_k.clone(),
        &hold,
        cfg.mc_box.clone(),
        AggregatorSettings {
            epsilon: grid[0],
            eta: cfg.eta,
            variant: cfg.variant,
            smooth_kernel: cfg.smooth_kernel,
            n_mc: cfg.n_mc,
            volume_seed: derive_seed(cfg.master_seed, Domain::Volume, 0),
        },
    )?;
    let selection = select_epsilon_against(&template, &test, reference, &cfg.test_box, &grid)?;

    let volume = cfg.test_box.volume();
    let (mut est, mut tru) = (Vec::with_capacity(test.len()), Vec::with_capacity(test.len()));
    for (p, t) in selection.estimates.iter().zip(&truth) {
        if let Some(v) = p.value() {
            est.push(v);
            tru.push(*t);
        }
    }
    let degenerate = test.len() - est.len();
    let mut errors = vec![l2_from_values(&est, &tru, volume)?];
    errors.extend(bank_errors(&bank_k, &test, &truth, volume)?);
    errors.extend(bank_errors(&bank_n, &test, &truth, volume)?);
    Ok(ReplicateRow {
        replicate,
        epsilon: selection.epsilon,
        degenerate,
        errors,
    })
}

/// Runs every replicate (in parallel) with bandwidths frozen from the first.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let (hcv, hcvu) = frozen_bandwidths(cfg)?;
    let rows = par::map_range(cfg.replicates, |r| {
        run_replicate(cfg, r, hcv, hcvu).map_err(|e| Error::Replicate {
            replicate: r,
            source: Box::new(e),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult {
        labels: cfg.labels(),
        rows,
        hcv,
        hcvu,
    })
}
