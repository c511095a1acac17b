//! Command-line front end: one command per invocation, driven by a config
//! file, writing CSV into an output directory.

mod config;
mod output;

pub use config::{parse_config, Preset, RunConfig, MODEL_NAMES};
pub use output::{
    clt_rows, emit_clt_csv, emit_experiment_csv, experiment_rows, format_sig, read_points, CLT_SUMMARY_HEADER,
    SUMMARY_ROWS,
};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::aggregate::{bank_mean, select_epsilon_against, AggregatedEstimator, AggregatorSettings};
use crate::density::Density;
use crate::error::{Error, Result};
use crate::experiments::{run_clt, run_experiment, star_volume, volume_convergence};
use crate::kde::{build_bank, cross_validated_bandwidth, BandwidthBank};
use crate::neighborhood::{uniform_draws, BoundingBox};
use crate::par;
use crate::points::Points;
use crate::rng::{derive_seed, substream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    /// Evaluate the aggregated estimator at query points.
    Estimate,
    /// Replicated L2-error experiment.
    Simulate,
    /// Central-limit experiment at one point.
    Clt,
    /// Monte-Carlo neighborhood volume against its small-epsilon limit.
    Volume,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::Simulate => "simulate",
            Command::Clt => "clt",
            Command::Volume => "volume",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: Command,
    pub config_path: PathBuf,
    /// Replaces the config's `seed`.
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// Replaces the config's `preset`.
    pub preset: Option<Preset>,
    /// Worker threads; `0` means one per core.
    pub threads: usize,
}

impl RunManifest {
    pub fn load_config(&self) -> Result<RunConfig> {
        let text = fs::read_to_string(&self.config_path).map_err(|e| Error::io(&self.config_path, e))?;
        let mut cfg = parse_config(&text, self.preset).map_err(|e| match e {
            Error::Config { key, reason } if key == "<document>" => {
                Error::config(self.config_path.display().to_string(), reason)
            }
            other => other,
        })?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        // Relative data paths are resolved against the config's directory.
        let base = self.config_path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data_file, &mut cfg.query_file].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Executes the manifest and returns the report printed on stdout.
pub fn run(manifest: &RunManifest) -> Result<String> {
    let cfg = manifest.load_config()?;
    fs::create_dir_all(&manifest.out_dir).map_err(|e| Error::io(&manifest.out_dir, e))?;
    par::with_threads(manifest.threads, || match manifest.command {
        Command::Estimate => run_estimate(&cfg, &manifest.out_dir),
        Command::Simulate => run_simulate(&cfg, &manifest.out_dir),
        Command::Clt => run_clt_command(&cfg, &manifest.out_dir),
        Command::Volume => run_volume(&cfg, &manifest.out_dir),
    })
}

fn sig(x: f64) -> String {
    format_sig(x, 6)
}

fn run_simulate(cfg: &RunConfig, out: &Path) -> Result<String> {
    let exp = cfg.experiment()?;
    let result = run_experiment(&exp)?;
    let path = out.join("simulate.csv");
    emit_experiment_csv(&result, &path)?;
    let mut report = String::new();
    let means = result.mean_errors();
    writeln!(report, "model {} k={} l={} replicates={}", exp.model.name(), exp.k, exp.l, exp.replicates).unwrap();
    writeln!(report, "hcv={} hcvu={}", sig(result.hcv), sig(result.hcvu)).unwrap();
    for (label, m) in result.labels.iter().zip(&means) {
        writeln!(report, "{label} {}", sig(*m)).unwrap();
    }
    write!(report, "wrote {}", path.display()).unwrap();
    Ok(report)
}

fn run_clt_command(cfg: &RunConfig, out: &Path) -> Result<String> {
    let clt = cfg.clt()?;
    let result = run_clt(&clt)?;
    let path = out.join("clt.csv");
    emit_clt_csv(&result, &path)?;
    let s = &result.summary;
    Ok(format!(
        "mean {} var {} target {} ks_p {}\nwrote {}",
        sig(s.mean),
        sig(s.var),
        sig(result.target_variance),
        sig(result.ks.p_value),
        path.display()
    ))
}

fn run_volume(cfg: &RunConfig, out: &Path) -> Result<String> {
    let model = cfg.require_model()?;
    let (point, epsilon) = cfg.volume_point()?;
    let mut clt = crate::experiments::CltConfig::new(model.clone(), point.clone(), epsilon, 2, 1, 1, cfg.seed);
    clt.star_n_mc = cfg.star_n_mc;
    if let Some(b) = &cfg.mc_box {
        clt.mc_box = b.clone();
    }
    clt.validate()?;
    let mc = star_volume(&clt)?;
    let mut header = vec!["mc_volume".to_string()];
    let mut values = vec![sig(mc)];
    let mut report = format!("mc_volume {}", sig(mc));
    if model.spherical_sigma().is_some() {
        let limit = model.spherical_volume_rate(&point)? * 2.0 * epsilon;
        header.push("rate_times_2eps".into());
        values.push(sig(limit));
        write!(report, "\nrate_times_2eps {}", sig(limit)).unwrap();
        if let Ok(exact) = model.spherical_star_volume(&point, epsilon) {
            header.push("exact_volume".into());
            values.push(sig(exact));
            write!(report, "\nexact_volume {}", sig(exact)).unwrap();
        }
    }
    let mut rows = vec![header, values];
    if let Some(conv) = cfg.convergence()? {
        let result = volume_convergence(&conv)?;
        rows.push(vec!["size".into(), "median_gap".into()]);
        for (k, m) in result.sizes.iter().zip(&result.medians) {
            rows.push(vec![k.to_string(), sig(*m)]);
            write!(report, "\nk={k} median_gap {}", sig(*m)).unwrap();
        }
        let (down, total) = result.decreasing_pairs();
        write!(report, "\ndecreasing {down} of {total}").unwrap();
    }
    let path = out.join("volume.csv");
    output::emit_rows(&path, &rows)?;
    write!(report, "\nwrote {}", path.display()).unwrap();
    Ok(report)
}

fn query_points(cfg: &RunConfig, dim: usize) -> Result<Points> {
    let pts = match (&cfg.query, &cfg.query_file) {
        (Some(_), Some(_)) => return Err(Error::config("query", "give either query or query_file, not both")),
        (Some(rows), None) => Points::from_rows(rows).map_err(|e| Error::config("query", e.to_string()))?,
        (None, Some(path)) => read_points(path)?,
        (None, None) => return Err(Error::config("query", "`estimate` needs query points (query or query_file)")),
    };
    if pts.dim() != dim {
        return Err(Error::config("query", format!("points have dimension {} but the data has {dim}", pts.dim())));
    }
    Ok(pts)
}

fn run_estimate(cfg: &RunConfig, out: &Path) -> Result<String> {
    let data = match (&cfg.data_file, &cfg.model) {
        (Some(path), _) => read_points(path)?,
        (None, Some(model)) => {
            let k = cfg.k.unwrap_or(500);
            let l = cfg.l.unwrap_or(k);
            model.sample(k + l, &mut substream(cfg.seed, Domain::Data, 0))?
        }
        (None, None) => return Err(Error::config("data_file", "`estimate` needs data_file or a model to sample")),
    };
    let k = cfg.k.unwrap_or(data.len() / 2);
    if k < 2 || k >= data.len() {
        return Err(Error::config("k", format!("fitting size {k} must lie in [2, {}) for {} data points", data.len(), data.len())));
    }
    let (fit, hold) = data.split_at(k);
    let queries = query_points(cfg, data.dim())?;
    let hcv = match cfg.hcv {
        Some(h) => h,
        None => cross_validated_bandwidth(&fit, cfg.kernel)?,
    };
    let bank = build_bank(&fit, cfg.kernel, &BandwidthBank::with_multipliers(hcv, cfg.multipliers.clone()))?;
    let mc_box = match (&cfg.mc_box, &cfg.model) {
        (Some(b), _) => b.clone(),
        (None, Some(m)) if cfg.data_file.is_none() => m.default_mc_box(),
        _ => BoundingBox::around(&fit, 0.1)?,
    };
    let n_mc = cfg.n_mc.unwrap_or(if data.dim() <= 2 { 20_000 } else { 40_000 });
    let settings = AggregatorSettings {
        epsilon: cfg.epsilon.unwrap_or(1.0),
        eta: cfg.eta,
        variant: cfg.variant,
        smooth_kernel: cfg.smooth_kernel,
        n_mc,
        volume_seed: derive_seed(cfg.seed, Domain::Volume, 0),
    };
    let mut agg = AggregatedEstimator::new(bank, &hold, mc_box.clone(), settings)?;
    let mut report = String::new();
    if cfg.epsilon.is_none() {
        let region = match (&cfg.test_box, &cfg.model) {
            (Some(b), _) => b.clone(),
            (None, Some(m)) if cfg.data_file.is_none() => m.default_test_box(),
            _ => mc_box,
        };
        let n_test = cfg.n_test.unwrap_or(if data.dim() <= 2 { 2000 } else { 4000 });
        let eval = uniform_draws(&region, n_test, derive_seed(cfg.seed, Domain::TestPoints, 0));
        let hcvu = match cfg.hcvu {
            Some(h) => h,
            None => cross_validated_bandwidth(&data, cfg.kernel)?,
        };
        let full = build_bank(&data, cfg.kernel, &BandwidthBank::with_multipliers(hcvu, cfg.multipliers.clone()))?;
        let reference = bank_mean(&full, &eval);
        let grid = cfg.eps_grid.resolve(&reference)?;
        let selection = select_epsilon_against(&agg, &eval, reference, &region, &grid)?;
        agg = agg.with_epsilon(selection.epsilon)?;
        writeln!(report, "selected epsilon {}", sig(selection.epsilon)).unwrap();
    }
    let estimates = par::map_range(queries.len(), |i| agg.eval(queries.row(i)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let d = queries.dim();
    let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    header.push("f_agg".into());
    if cfg.model.is_some() && cfg.data_file.is_none() {
        header.push("f".into());
    }
    let mut rows = vec![header];
    for (q, est) in queries.iter().zip(&estimates) {
        let mut row: Vec<String> = q.iter().map(|v| sig(*v)).collect();
        row.push(sig(*est));
        if let (Some(model), None) = (&cfg.model, &cfg.data_file) {
            row.push(sig(model.density(q)));
        }
        rows.push(row);
    }
    for row in &rows {
        writeln!(report, "{}", row.join(",")).unwrap();
    }
    let path = out.join("estimate.csv");
    output::emit_rows(&path, &rows)?;
    write!(report, "wrote {}", path.display()).unwrap();
    Ok(report)
}
