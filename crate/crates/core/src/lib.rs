//! Level-set aggregation of kernel density estimators.
//!
//! Instead of estimating `f(x)` from sample points inside a metric ball around
//! `x`, the aggregated estimator counts hold-out points whose estimated density
//! values are all within `epsilon` of the estimated values at `x`, and divides
//! the resulting fraction by the Lebesgue measure of that neighborhood:
//!
//! ```text
//! B(eps, x) = { y : |f_m(y) - f_m(x)| < eps  for every m = 1..M }
//! f_agg(x)  = #{ Y_j in B(eps, x) } / (l * mu(B(eps, x)))
//! ```
//!
//! The bank `f_1..f_M` is a family of kernel density estimators fit on one half
//! of the sample, the counting runs over the other half, and `mu` is estimated
//! by hit-or-miss Monte Carlo on a bounding box.
//!
//! The crate also carries the analytic ground-truth models and a seeded,
//! replicate-parallel simulation harness for L2-error tables and the
//! central-limit experiment. Parallel loops go through [`par`]; building with
//! `--no-default-features` swaps rayon for plain sequential iteration without
//! changing any result.

pub mod aggregate;
pub mod cli;
pub mod density;
pub mod error;
pub mod experiments;
pub mod kde;
pub mod kernels;
pub mod models;
pub mod neighborhood;
pub mod par;
pub mod points;
pub mod rng;
pub mod stats;

pub use aggregate::{AggregatedEstimator, AggregatorSettings, EpsilonSelection, Variant};
pub use density::Density;
pub use error::{Error, Result};
pub use kde::{BandwidthBank, KdeEstimator};
pub use kernels::KernelKind;
pub use models::AnalyticModel;
pub use neighborhood::{BoundingBox, NeighborhoodSpec};
pub use points::Points;
