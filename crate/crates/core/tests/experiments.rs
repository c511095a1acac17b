use levelagg::aggregate::{AggregatedEstimator, AggregatorSettings};
use levelagg::experiments::{
    run_clt, run_experiment, volume_convergence, BandwidthRule, CltConfig, ConvergenceConfig, EpsGrid,
    ExperimentConfig,
};
use levelagg::kde::{build_bank, BandwidthBank};
use levelagg::par;
use levelagg::rng::{substream, Domain};
use levelagg::{AnalyticModel, BoundingBox, Density, KernelKind, Points};
use proptest::prelude::*;

fn small(model: AnalyticModel, kernel: KernelKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk(model, kernel);
    cfg.k = 150;
    cfg.l = 150;
    cfg.n_test = 400;
    cfg.n_mc = 4000;
    cfg.replicates = 3;
    cfg
}

#[test]
fn desk_smoke_model_two() {
    let cfg = small(AnalyticModel::diag_normal(vec![1.0, 0.25]).unwrap(), KernelKind::Epanechnikov);
    let r = run_experiment(&cfg).unwrap();
    assert_eq!(r.rows.len(), 3);
    assert_eq!(r.labels.len(), 11);
    for row in &r.rows {
        assert_eq!(row.errors.len(), 11);
        assert!(row.errors.iter().all(|e| e.is_finite() && *e >= 0.0));
        assert!(row.epsilon > 0.0);
    }
    assert!(r.hcv > 0.0 && r.hcvu > 0.0);
    let means = r.mean_errors();
    // All estimators land well below the error of the zero function.
    let zero = (1.0 / (4.0 * std::f64::consts::PI * 0.25)).sqrt();
    assert!(means.iter().all(|m| *m < zero), "{means:?}");
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let cfg = small(AnalyticModel::beta_product(1.5, 1.5, 2).unwrap(), KernelKind::Gaussian);
    let one = par::with_threads(1, || run_experiment(&cfg).unwrap());
    let four = par::with_threads(4, || run_experiment(&cfg).unwrap());
    assert_eq!(one, four);
}

#[test]
fn explicit_grid_is_respected() {
    let mut cfg = small(AnalyticModel::diag_normal(vec![1.0, 1.0]).unwrap(), KernelKind::Gaussian);
    cfg.eps_grid = EpsGrid::Explicit(vec![0.013]);
    let r = run_experiment(&cfg).unwrap();
    assert!(r.rows.iter().all(|row| row.epsilon == 0.013));
}

#[test]
fn clt_small_run() {
    let m = AnalyticModel::diag_normal(vec![1.0, 1.0]).unwrap();
    let mut cfg = CltConfig::new(m.clone(), vec![0.5, 0.5], 0.01, 400, 200, 40, 4);
    cfg.mc_box = BoundingBox::cube(-1.5, 1.5, 2).unwrap();
    cfg.n_mc = 5000;
    let r = run_clt(&cfg).unwrap();
    assert_eq!(r.statistics.len(), 40);
    assert_eq!(r.target_variance, m.density(&[0.5, 0.5]));
    assert!((r.star_volume - m.spherical_star_volume(&[0.5, 0.5], 0.01).unwrap()).abs() < 1e-15);
    assert!(r.summary.mean.abs() < 1.0);
    assert!((0.0..=1.0).contains(&r.ks.p_value));
    assert_eq!(r.curve.len(), 201);
}

#[test]
fn convergence_small_run() {
    let m = AnalyticModel::diag_normal(vec![1.0, 0.25]).unwrap();
    let mut cfg = ConvergenceConfig::new(m, vec![0.5, 0.5], 0.01);
    cfg.sizes = vec![200, 800];
    cfg.seeds = 3;
    cfg.n_mc = 5000;
    cfg.bandwidth = BandwidthRule::Reference;
    let r = volume_convergence(&cfg).unwrap();
    assert_eq!(r.gaps.len(), 3);
    assert!(r.gaps.iter().all(|g| g.len() == 2 && g.iter().all(|v| *v >= 0.0)));
    assert_eq!(r.decreasing_pairs().1, 1);
}

fn fixture() -> AggregatedEstimator {
    let m = AnalyticModel::diag_normal(vec![1.0, 0.5]).unwrap();
    let sample = m.sample(300, &mut substream(8, Domain::Misc, 0)).unwrap();
    let (fit, hold) = sample.split_at(150);
    let bank = build_bank(&fit, KernelKind::Gaussian, &BandwidthBank::new(0.4)).unwrap();
    AggregatedEstimator::new(bank, &hold, m.default_mc_box(), AggregatorSettings { n_mc: 3000, ..Default::default() })
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn neighborhoods_grow_with_epsilon(x in -2.5f64..2.5, y in -1.5f64..1.5, e1 in 1e-4f64..0.2, e2 in 1e-4f64..0.2) {
        let agg = fixture();
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let q = [x, y];
        let a = agg.with_epsilon(lo).unwrap();
        let b = agg.with_epsilon(hi).unwrap();
        prop_assert!(a.count_fraction(&q).unwrap() <= b.count_fraction(&q).unwrap());
        prop_assert!(a.volume(&q).unwrap() <= b.volume(&q).unwrap());
        prop_assert!(b.volume(&q).unwrap() <= agg.bbox().volume());
    }

    #[test]
    fn profile_matches_single_estimates(x in -2.5f64..2.5, y in -1.5f64..1.5) {
        let agg = fixture();
        let grid = [0.002, 0.01, 0.05, 0.1];
        let q = [x, y];
        let prof = agg.profile(&q, &grid).unwrap();
        for (e, p) in grid.iter().zip(prof) {
            prop_assert_eq!(p, agg.with_epsilon(*e).unwrap().estimate(&q).unwrap());
        }
    }

    #[test]
    fn estimates_are_nonnegative(pts in prop::collection::vec(-3.0f64..3.0, 2..20)) {
        let agg = fixture();
        let rows: Vec<[f64; 2]> = pts.chunks_exact(2).map(|c| [c[0], c[1] * 0.5]).collect();
        let queries = Points::from_rows(&rows).unwrap();
        for q in queries.iter() {
            if let Some(v) = agg.estimate(q).unwrap().value() {
                prop_assert!(v >= 0.0 && v.is_finite());
            }
        }
    }
}
