//! Run configuration: a flat TOML document with one `[model]` table.
//!
//! ```toml
//! preset = "desk"
//! kernel = "epanechnikov"
//! seed = 7
//!
//! [model]
//! name = "diag_normal"
//! d = 2
//! sigma = [1.0, 0.25]
//! ```

use std::path::PathBuf;
use std::str::FromStr;

use serde::Deserialize;

use crate::aggregate::Variant;
use crate::error::{Error, Result};
use crate::experiments::{BandwidthRule, CltConfig, ConvergenceConfig, EpsGrid, ExperimentConfig};
use crate::kernels::KernelKind;
use crate::models::{AnalyticModel, WeibullExponent};
use crate::neighborhood::BoundingBox;

pub const MODEL_NAMES: [&str; 5] = [
    "beta_product",
    "diag_normal",
    "weibull_product",
    "normal_mixture_shared",
    "normal_mixture_two",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// `k = l = 500`, 20 replicates.
    #[default]
    Desk,
    /// `k = l = 2000` (d <= 2) or 4000, 100 replicates.
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::config("preset", format!("unknown preset `{s}` (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    name: Option<String>,
    d: Option<usize>,
    alpha: Option<f64>,
    beta: Option<f64>,
    sigma: Option<Vec<f64>>,
    lambda: Option<f64>,
    shape: Option<f64>,
    weibull_exponent: Option<String>,
    mean1: Option<[f64; 2]>,
    mean2: Option<[f64; 2]>,
    sigma1: Option<f64>,
    sigma2: Option<f64>,
    rho: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<Preset>,
    seed: Option<u64>,
    kernel: Option<String>,
    k: Option<usize>,
    l: Option<usize>,
    n_test: Option<usize>,
    n_mc: Option<usize>,
    replicates: Option<usize>,
    multipliers: Option<Vec<f64>>,
    hcv: Option<f64>,
    hcvu: Option<f64>,
    eps_grid: Option<Vec<f64>>,
    eps_grid_points: Option<usize>,
    eps_grid_lo: Option<f64>,
    eps_grid_hi: Option<f64>,
    eps_grid_scale: Option<String>,
    variant: Option<String>,
    eta: Option<f64>,
    smooth_kernel: Option<String>,
    test_lower: Option<Vec<f64>>,
    test_upper: Option<Vec<f64>>,
    mc_lower: Option<Vec<f64>>,
    mc_upper: Option<Vec<f64>>,
    point: Option<Vec<f64>>,
    epsilon: Option<f64>,
    star_volume: Option<f64>,
    star_n_mc: Option<usize>,
    curve_bandwidth: Option<f64>,
    sizes: Option<Vec<usize>>,
    seeds: Option<usize>,
    bandwidth_rule: Option<String>,
    query: Option<Vec<Vec<f64>>>,
    data_file: Option<PathBuf>,
    query_file: Option<PathBuf>,
    model: Option<RawModel>,
}

/// A validated run configuration with preset defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub model: Option<AnalyticModel>,
    pub kernel: KernelKind,
    pub k: Option<usize>,
    pub l: Option<usize>,
    pub n_test: Option<usize>,
    pub n_mc: Option<usize>,
    pub replicates: usize,
    pub multipliers: Vec<f64>,
    pub hcv: Option<f64>,
    pub hcvu: Option<f64>,
    pub eps_grid: EpsGrid,
    pub variant: Variant,
    pub eta: f64,
    pub smooth_kernel: KernelKind,
    pub test_box: Option<BoundingBox>,
    pub mc_box: Option<BoundingBox>,
    pub point: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
    pub star_volume: Option<f64>,
    pub star_n_mc: usize,
    pub curve_bandwidth: f64,
    pub sizes: Option<Vec<usize>>,
    pub seeds: usize,
    pub bandwidth_rule: BandwidthRule,
    pub query: Option<Vec<Vec<f64>>>,
    pub data_file: Option<PathBuf>,
    pub query_file: Option<PathBuf>,
}

fn parse_kernel(key: &str, s: &str) -> Result<KernelKind> {
    KernelKind::from_str(s).map_err(|_| Error::config(key, format!("unknown kernel `{s}` (expected gaussian, epanechnikov or indicator)")))
}

fn require<T>(v: Option<T>, key: &str, model: &str) -> Result<T> {
    v.ok_or_else(|| Error::config(key, format!("required for model `{model}`")))
}

fn build_model(raw: &RawModel) -> Result<AnalyticModel> {
    let name = raw.name.as_deref().ok_or_else(|| {
        Error::config("model.name", format!("missing; expected one of {}", MODEL_NAMES.join(", ")))
    })?;
    let two_d = |name: &str| -> Result<()> {
        match raw.d {
            None | Some(2) => Ok(()),
            Some(d) => Err(Error::config("model.d", format!("`{name}` is bivariate, got d = {d}"))),
        }
    };
    let model = match name {
        "beta_product" => AnalyticModel::beta_product(
            require(raw.alpha, "model.alpha", name)?,
            require(raw.beta, "model.beta", name)?,
            require(raw.d, "model.d", name)?,
        ),
        "diag_normal" => {
            let sigma = match (&raw.sigma, raw.d) {
                (Some(s), Some(d)) if s.len() != d => {
                    return Err(Error::config("model.sigma", format!("has {} entries but d = {d}", s.len())))
                }
                (Some(s), _) => s.clone(),
                (None, Some(d)) => vec![1.0; d],
                (None, None) => return Err(Error::config("model.d", "required for model `diag_normal` unless sigma is given")),
            };
            AnalyticModel::diag_normal(sigma)
        }
        "weibull_product" => {
            let exponent = match raw.weibull_exponent.as_deref() {
                None | Some("marginal") => WeibullExponent::Marginal,
                Some("dimension_scaled") => WeibullExponent::DimensionScaled,
                Some(other) => {
                    return Err(Error::config(
                        "model.weibull_exponent",
                        format!("unknown reading `{other}` (expected marginal or dimension_scaled)"),
                    ))
                }
            };
            AnalyticModel::weibull_product(
                require(raw.lambda, "model.lambda", name)?,
                require(raw.shape, "model.shape", name)?,
                require(raw.d, "model.d", name)?,
                exponent,
            )
        }
        "normal_mixture_shared" | "normal_mixture_two" => {
            two_d(name)?;
            let mean1 = raw.mean1.unwrap_or(AnalyticModel::DEFAULT_MEAN1);
            let mean2 = raw.mean2.unwrap_or(AnalyticModel::DEFAULT_MEAN2);
            let s1 = require(raw.sigma1, "model.sigma1", name)?;
            let s2 = require(raw.sigma2, "model.sigma2", name)?;
            let rho = raw.rho.unwrap_or(0.0);
            if name == "normal_mixture_shared" {
                AnalyticModel::normal_mixture_shared(mean1, mean2, s1, s2, rho)
            } else {
                AnalyticModel::normal_mixture_two(mean1, mean2, s1, s2, rho)
            }
        }
        other => {
            return Err(Error::config(
                "model.name",
                format!("unknown model `{other}`; expected one of {}", MODEL_NAMES.join(", ")),
            ))
        }
    };
    model.map_err(|e| match e {
        Error::InvalidParameter { name, reason } => Error::config(name, reason),
        e => e,
    })
}

fn build_box(lower: Option<Vec<f64>>, upper: Option<Vec<f64>>, key: &str) -> Result<Option<BoundingBox>> {
    match (lower, upper) {
        (None, None) => Ok(None),
        (Some(lo), Some(hi)) => BoundingBox::new(lo, hi)
            .map(Some)
            .map_err(|e| Error::config(format!("{key}_lower"), e.to_string())),
        _ => Err(Error::config(format!("{key}_lower"), format!("{key}_lower and {key}_upper must be given together"))),
    }
}

fn positive(key: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(Error::config(key, format!("must be positive, got {x}"))),
        _ => Ok(()),
    }
}

fn at_least_one(key: &str, v: Option<usize>) -> Result<()> {
    match v {
        Some(0) => Err(Error::config(key, "must be at least 1")),
        _ => Ok(()),
    }
}

/// Parses and validates a configuration document. `preset` overrides the
/// document's own preset.
pub fn parse_config(text: &str, preset: Option<Preset>) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().split_whitespace().collect::<Vec<_>>().join(" ");
        let msg = match e.span() {
            Some(span) => format!("line {}: {msg}", text[..span.start.min(text.len())].matches('\n').count() + 1),
            None => msg,
        };
        Error::config("<document>", msg)
    })?;
    if raw.model.is_none() && raw.data_file.is_none() {
        return Err(Error::config(
            "model",
            "missing required keys: model.name and its parameters (e.g. model.d), or data_file for `estimate`",
        ));
    }
    let preset = preset.or(raw.preset).unwrap_or_default();
    let model = raw.model.as_ref().map(build_model).transpose()?;
    let dim = model.as_ref().map(|m| m.dim());

    let kernel = match &raw.kernel {
        Some(s) => parse_kernel("kernel", s)?,
        None => KernelKind::Gaussian,
    };
    if !kernel.is_density() {
        return Err(Error::config("kernel", format!("`{kernel}` does not integrate to one")));
    }
    let smooth_kernel = match &raw.smooth_kernel {
        Some(s) => parse_kernel("smooth_kernel", s)?,
        None => KernelKind::Indicator,
    };
    let variant = match &raw.variant {
        Some(s) => Variant::from_str(s).map_err(|_| {
            Error::config("variant", format!("unknown variant `{s}` (expected counting, smoothed, eta_counting or eta_smoothed)"))
        })?,
        None => Variant::Counting,
    };
    let eta = raw.eta.unwrap_or(0.0);
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::config("eta", format!("must lie in [0, 1), got {eta}")));
    }

    for (key, v) in [("k", raw.k), ("l", raw.l), ("n_test", raw.n_test), ("n_mc", raw.n_mc), ("replicates", raw.replicates), ("star_n_mc", raw.star_n_mc), ("seeds", raw.seeds), ("eps_grid_points", raw.eps_grid_points)] {
        at_least_one(key, v)?;
    }
    for (key, v) in [("hcv", raw.hcv), ("hcvu", raw.hcvu), ("epsilon", raw.epsilon), ("star_volume", raw.star_volume), ("curve_bandwidth", raw.curve_bandwidth)] {
        positive(key, v)?;
    }
    let multipliers = raw.multipliers.clone().unwrap_or_else(|| crate::kde::BandwidthBank::DEFAULT_MULTIPLIERS.to_vec());
    if multipliers.is_empty() || multipliers.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(Error::config("multipliers", "need at least one positive multiplier"));
    }

    let eps_grid = match (&raw.eps_grid, raw.eps_grid_points, raw.eps_grid_lo, raw.eps_grid_hi, &raw.eps_grid_scale) {
        (Some(v), None, None, None, None) => EpsGrid::Explicit(v.clone()),
        (Some(_), ..) => {
            return Err(Error::config("eps_grid", "an explicit grid excludes eps_grid_points/lo/hi/scale"))
        }
        (None, points, lo, hi, scale) => {
            let relative = match scale.as_deref() {
                None | Some("iqr") => true,
                Some("absolute") => false,
                Some(other) => {
                    return Err(Error::config("eps_grid_scale", format!("unknown scale `{other}` (expected iqr or absolute)")))
                }
            };
            let points = points.unwrap_or(20);
            if relative {
                EpsGrid::Relative { points, lo: lo.unwrap_or(0.01), hi: hi.unwrap_or(1.0) }
            } else {
                EpsGrid::LogSpaced {
                    points,
                    lo: lo.ok_or_else(|| Error::config("eps_grid_lo", "required with an absolute scale"))?,
                    hi: hi.ok_or_else(|| Error::config("eps_grid_hi", "required with an absolute scale"))?,
                }
            }
        }
    };
    match &eps_grid {
        EpsGrid::Explicit(v) => {
            if v.is_empty() || v.iter().any(|e| !(*e > 0.0 && e.is_finite())) || v.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::config("eps_grid", "must be a nonempty ascending list of positive values"));
            }
        }
        EpsGrid::Relative { lo, hi, .. } | EpsGrid::LogSpaced { lo, hi, .. } => {
            if !(*lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::config("eps_grid_lo", "grid bounds must satisfy 0 < lo <= hi"));
            }
        }
    }

    let test_box = build_box(raw.test_lower.clone(), raw.test_upper.clone(), "test")?;
    let mc_box = build_box(raw.mc_lower.clone(), raw.mc_upper.clone(), "mc")?;
    if let Some(d) = dim {
        for (key, b) in [("test_lower", &test_box), ("mc_lower", &mc_box)] {
            if let Some(b) = b {
                if b.dim() != d {
                    return Err(Error::config(key, format!("box has dimension {} but the model has {d}", b.dim())));
                }
            }
        }
        if let Some(p) = &raw.point {
            if p.len() != d {
                return Err(Error::config("point", format!("has {} coordinates but the model has {d}", p.len())));
            }
        }
    }
    if let Some(sizes) = &raw.sizes {
        if sizes.is_empty() || sizes.iter().any(|&k| k < 2) {
            return Err(Error::config("sizes", "need a nonempty list of sizes of at least 2"));
        }
    }
    let bandwidth_rule = match raw.bandwidth_rule.as_deref() {
        None | Some("reference") => BandwidthRule::Reference,
        Some("cross_validated") => BandwidthRule::CrossValidated,
        Some(other) => {
            return Err(Error::config("bandwidth_rule", format!("unknown rule `{other}` (expected reference or cross_validated)")))
        }
    };

    Ok(RunConfig {
        preset,
        seed: raw.seed.unwrap_or(0),
        model,
        kernel,
        k: raw.k,
        l: raw.l,
        n_test: raw.n_test,
        n_mc: raw.n_mc,
        replicates: raw.replicates.unwrap_or(match preset {
            Preset::Desk => 20,
            Preset::Paper => 100,
        }),
        multipliers,
        hcv: raw.hcv,
        hcvu: raw.hcvu,
        eps_grid,
        variant,
        eta,
        smooth_kernel,
        test_box,
        mc_box,
        point: raw.point,
        epsilon: raw.epsilon,
        star_volume: raw.star_volume,
        star_n_mc: raw.star_n_mc.unwrap_or(400_000),
        curve_bandwidth: raw.curve_bandwidth.unwrap_or(0.15),
        sizes: raw.sizes,
        seeds: raw.seeds.unwrap_or(20),
        bandwidth_rule,
        query: raw.query,
        data_file: raw.data_file,
        query_file: raw.query_file,
    })
}

impl RunConfig {
    pub fn require_model(&self) -> Result<&AnalyticModel> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::config("model", "this command needs a `[model]` table"))
    }

    fn require_point(&self) -> Result<Vec<f64>> {
        self.point.clone().ok_or_else(|| Error::config("point", "required by this command"))
    }

    fn require_epsilon(&self) -> Result<f64> {
        self.epsilon.ok_or_else(|| Error::config("epsilon", "required by this command"))
    }

    /// Sample size for the preset: `k = l = 500` (desk), else 2000 (d <= 2)
    /// or 4000.
    fn preset_size(&self, dim: usize) -> usize {
        match self.preset {
            Preset::Desk => 500,
            Preset::Paper if dim <= 2 => 2000,
            Preset::Paper => 4000,
        }
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let model = self.require_model()?.clone();
        let mut cfg = ExperimentConfig::new(model, self.kernel);
        let base = self.preset_size(cfg.model.dim());
        cfg.k = self.k.unwrap_or(base);
        cfg.l = self.l.unwrap_or(cfg.k);
        cfg.n_test = self.n_test.unwrap_or(cfg.n_test);
        cfg.n_mc = self.n_mc.unwrap_or(cfg.n_mc);
        cfg.replicates = self.replicates;
        cfg.multipliers = self.multipliers.clone();
        cfg.eps_grid = self.eps_grid.clone();
        cfg.variant = self.variant;
        cfg.eta = self.eta;
        cfg.smooth_kernel = self.smooth_kernel;
        if let Some(b) = &self.test_box {
            cfg.test_box = b.clone();
        }
        if let Some(b) = &self.mc_box {
            cfg.mc_box = b.clone();
        }
        cfg.master_seed = self.seed;
        cfg.hcv = self.hcv;
        cfg.hcvu = self.hcvu;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn clt(&self) -> Result<CltConfig> {
        let model = self.require_model()?.clone();
        let k = self.k.unwrap_or(self.preset_size(model.dim()));
        let l = self.l.unwrap_or(k);
        let mut cfg = CltConfig::new(model, self.require_point()?, self.require_epsilon()?, k, l, self.replicates, self.seed);
        cfg.star_volume = self.star_volume;
        cfg.star_n_mc = self.star_n_mc;
        if let Some(b) = &self.mc_box {
            cfg.mc_box = b.clone();
        }
        if let Some(n) = self.n_mc {
            cfg.n_mc = n;
        }
        cfg.kernel = self.kernel;
        cfg.hcv = self.hcv;
        cfg.curve_bandwidth = self.curve_bandwidth;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Convergence study, present when `sizes` is set.
    pub fn convergence(&self) -> Result<Option<ConvergenceConfig>> {
        let Some(sizes) = &self.sizes else {
            return Ok(None);
        };
        let model = self.require_model()?.clone();
        let mut cfg = ConvergenceConfig::new(model, self.require_point()?, self.require_epsilon()?);
        cfg.sizes = sizes.clone();
        cfg.seeds = self.seeds;
        cfg.master_seed = self.seed;
        cfg.kernel = self.kernel;
        cfg.multipliers = self.multipliers.clone();
        cfg.bandwidth = self.bandwidth_rule;
        if let Some(b) = &self.mc_box {
            cfg.mc_box = b.clone();
        }
        if let Some(n) = self.n_mc {
            cfg.n_mc = n;
        }
        Ok(Some(cfg))
    }

    pub fn volume_point(&self) -> Result<(Vec<f64>, f64)> {
        Ok((self.require_point()?, self.require_epsilon()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_preset_defaults() {
        let cfg = parse_config("preset = \"paper\"\n[model]\nname = \"diag_normal\"\nd = 2\n", None).unwrap();
        let exp = cfg.experiment().unwrap();
        assert_eq!((exp.k, exp.l, exp.n_mc, exp.replicates), (2000, 2000, 20_000, 100));
        let desk = parse_config("[model]\nname = \"diag_normal\"\nd = 2\n", None).unwrap();
        let exp = desk.experiment().unwrap();
        assert_eq!((exp.k, exp.l, exp.replicates), (500, 500, 20));
    }

    #[test]
    fn empty_document_lists_required_keys() {
        let err = parse_config("", None).unwrap_err().to_string();
        assert!(err.contains("model.name"), "{err}");
        assert!(err.contains("model.d"), "{err}");
    }

    #[test]
    fn rejects_bad_values() {
        let base = "[model]\nname = \"diag_normal\"\nd = 2\n";
        let err = parse_config(&format!("eta = 1.0\n{base}"), None).unwrap_err().to_string();
        assert!(err.contains("eta"), "{err}");
        assert!(parse_config(&format!("bogus = 1\n{base}"), None).is_err());
        assert!(parse_config("[model]\nname = \"cauchy\"\n", None).is_err());
        let rho = "[model]\nname = \"normal_mixture_two\"\nsigma1 = 0.5\nsigma2 = 0.5\nrho = 0.3\n";
        let err = parse_config(rho, None).unwrap_err().to_string();
        assert!(err.contains("model.rho"), "{err}");
        assert!(parse_config("[model]\nname = \"beta_product\"\nd = 2\nalpha = 1.5\n", None).is_err());
    }

    #[test]
    fn cli_preset_overrides_document() {
        let cfg = parse_config("preset = \"desk\"\n[model]\nname = \"diag_normal\"\nd = 2\n", Some(Preset::Paper)).unwrap();
        assert_eq!(cfg.preset, Preset::Paper);
    }
}
