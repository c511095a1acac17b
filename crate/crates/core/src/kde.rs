//! Product-kernel density estimation with a single scalar bandwidth, and
//! least-squares cross-validated bandwidth selection.
//!
//! Evaluation is exact: every fitting point contributes, except points outside
//! the support of a compact kernel, which are skipped through a window search
//! on the first coordinate (they would contribute exactly zero).

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::density::Density;
use crate::error::{Error, Result};
use crate::kernels::{exp_nonpositive, KernelKind};
use crate::par;
use crate::points::Points;
use crate::stats;

const BLOCK: usize = 64;

/// Fitting points in canonical (lexicographic) order, stored column-major.
#[derive(Debug)]
pub struct PointCloud {
    dim: usize,
    n: usize,
    cols: Vec<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: &Points) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::TooFewPoints { needed: 1, got: 0 });
        }
        let dim = points.dim();
        let mut rows: Vec<&[f64]> = points.iter().collect();
        rows.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        });
        let cols = (0..dim)
            .map(|axis| rows.iter().map(|r| r[axis]).collect())
            .collect();
        Ok(Self {
            dim,
            n: rows.len(),
            cols,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Index range of points whose first coordinate lies within `radius` of
    /// `center` (slightly widened so rounding never drops a contributor).
    fn window(&self, center: f64, radius: f64) -> (usize, usize) {
        let pad = radius * (1.0 + 1e-9);
        let c0 = &self.cols[0];
        let lo = c0.partition_point(|&v| v < center - pad);
        let hi = c0.partition_point(|&v| v <= center + pad);
        (lo, hi.max(lo))
    }
}

#[derive(Debug, Clone)]
pub struct KdeEstimator {
    cloud: Arc<PointCloud>,
    bandwidth: f64,
    kernel: KernelKind,
    norm: f64,
}

impl KdeEstimator {
    pub fn new(points: &Points, bandwidth: f64, kernel: KernelKind) -> Result<Self> {
        Self::from_cloud(Arc::new(PointCloud::new(points)?), bandwidth, kernel)
    }

    pub fn from_cloud(cloud: Arc<PointCloud>, bandwidth: f64, kernel: KernelKind) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid("bandwidth", format!("must be positive, got {bandwidth}")));
        }
        if !kernel.is_density() {
            return Err(Error::NotADensityKernel(kernel));
        }
        let d = cloud.dim as i32;
        let k0 = match kernel {
            KernelKind::Gaussian => (2.0 * PI).powf(-0.5 * d as f64),
            _ => kernel.eval_1d(0.0).powi(d),
        };
        let norm = k0 / (cloud.n as f64 * bandwidth.powi(d));
        Ok(Self {
            cloud,
            bandwidth,
            kernel,
            norm,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn kernel(&self) -> KernelKind {
        self.kernel
    }

    pub fn len(&self) -> usize {
        self.cloud.n
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.n == 0
    }

    pub fn cloud(&self) -> &Arc<PointCloud> {
        &self.cloud
    }

    /// `(1 / (n h^d)) sum_i prod_j K((x_j - X_ij) / h)`
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.cloud.dim {
            return Err(Error::DimensionMismatch {
                expected: self.cloud.dim,
                got: x.len(),
            });
        }
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let (lo, hi) = match self.kernel.support_radius() {
            Some(r) => self.cloud.window(x[0], r * self.bandwidth),
            None => (0, self.cloud.n),
        };
        let mut lanes = [0.0f64; 8];
        let mut buf = [0.0f64; BLOCK];
        let mut start = lo;
        while start < hi {
            let len = BLOCK.min(hi - start);
            let buf = &mut buf[..len];
            match self.kernel {
                KernelKind::Gaussian => {
                    buf.fill(0.0);
                    for (xd, col) in x.iter().zip(&self.cloud.cols) {
                        for (b, &c) in buf.iter_mut().zip(&col[start..start + len]) {
                            let diff = xd - c;
                            *b += diff * diff;
                        }
                    }
                    let scale = -0.5 / (self.bandwidth * self.bandwidth);
                    for b in buf.iter_mut() {
                        *b = exp_nonpositive(*b * scale);
                    }
                }
                _ => {
                    buf.fill(1.0);
                    let inv_h = 1.0 / self.bandwidth;
                    for (xd, col) in x.iter().zip(&self.cloud.cols) {
                        for (b, &c) in buf.iter_mut().zip(&col[start..start + len]) {
                            let u = (xd - c) * inv_h;
                            let t = 1.0 - u * u;
                            *b *= if t > 0.0 { t } else { 0.0 };
                        }
                    }
                }
            }
            for (i, v) in buf.iter().enumerate() {
                lanes[i & 7] += v;
            }
            start += len;
        }
        let total = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
            + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
        total * self.norm
    }
}

impl Density for KdeEstimator {
    fn dim(&self) -> usize {
        self.cloud.dim
    }

    fn density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.cloud.dim);
        self.eval_unchecked(x)
    }
}

/// Highest dimension for which [`BandIndex`] builds a cell grid.
const BAND_MAX_DIM: usize = 2;
/// Rings of cells visited before falling back to the full sum.
const BAND_RINGS: usize = 9;

/// Decides `|f(y) - target| < eps` for one estimator without always summing
/// every fitting point.
///
/// Fitting points are bucketed into cubic cells of side `h`. Cells are visited
/// in rings of increasing distance from the query, and points not yet visited
/// are bounded through the kernel profile at the ring distance. The answer is
/// returned as soon as the partial sum and that bound settle it with a margin
/// well above rounding; otherwise the exact sum is compared, so the result is
/// always the one `(f.density(y) - target).abs() < eps` gives.
#[derive(Debug, Clone)]
pub struct BandIndex<'a> {
    kde: &'a KdeEstimator,
    lower: Vec<f64>,
    shape: Vec<usize>,
    starts: Vec<usize>,
    /// Fitting points in cell order, one column per coordinate.
    cols: Vec<Vec<f64>>,
    offsets: Vec<isize>,
    /// `ring_ends[j]` is one past the last offset of ring `j`.
    ring_ends: Vec<usize>,
}

impl<'a> BandIndex<'a> {
    /// `None` when the dimension is too high for a cell grid.
    pub fn new(kde: &'a KdeEstimator) -> Option<Self> {
        let cloud = &kde.cloud;
        let d = cloud.dim;
        if d > BAND_MAX_DIM {
            return None;
        }
        let h = kde.bandwidth;
        let lower: Vec<f64> = cloud.cols.iter().map(|c| c.iter().copied().fold(f64::INFINITY, f64::min)).collect();
        let mut shape = Vec::with_capacity(d);
        for (c, lo) in cloud.cols.iter().zip(&lower) {
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let cells = ((hi - lo) / h).floor() + 1.0;
            if !(cells <= 4096.0) {
                return None;
            }
            shape.push(cells as usize);
        }
        let total: usize = shape.iter().product();
        if total > 1 << 22 {
            return None;
        }
        let cell_of = |i: usize| -> usize {
            let mut flat = 0;
            for a in 0..d {
                let c = (((cloud.cols[a][i] - lower[a]) / h).floor() as usize).min(shape[a] - 1);
                flat = flat * shape[a] + c;
            }
            flat
        };
        let mut counts = vec![0usize; total + 1];
        let cells: Vec<usize> = (0..cloud.n).map(cell_of).collect();
        for &c in &cells {
            counts[c + 1] += 1;
        }
        for i in 0..total {
            counts[i + 1] += counts[i];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut cols = vec![vec![0.0; cloud.n]; d];
        for (i, &c) in cells.iter().enumerate() {
            let slot = fill[c];
            fill[c] += 1;
            for a in 0..d {
                cols[a][slot] = cloud.cols[a][i];
            }
        }

        // Offsets within BAND_RINGS cells, ordered by the ring of their
        // smallest possible distance to a query anywhere in the center cell.
        let r = BAND_RINGS as isize;
        let mut all: Vec<(usize, Vec<isize>)> = Vec::new();
        let mut o = vec![-r; d];
        loop {
            let gap2: isize = o.iter().map(|v| (v.abs() - 1).max(0).pow(2)).sum();
            let ring = (gap2 as f64).sqrt().ceil() as usize;
            if ring < BAND_RINGS {
                all.push((ring, o.clone()));
            }
            let mut a = 0;
            while a < d {
                o[a] += 1;
                if o[a] <= r {
                    break;
                }
                o[a] = -r;
                a += 1;
            }
            if a == d {
                break;
            }
        }
        all.sort();
        let mut ring_ends = vec![0; BAND_RINGS];
        for (i, (ring, _)) in all.iter().enumerate() {
            ring_ends[*ring] = i + 1;
        }
        for j in 1..BAND_RINGS {
            ring_ends[j] = ring_ends[j].max(ring_ends[j - 1]);
        }
        let offsets = all.into_iter().flat_map(|(_, o)| o).collect();
        Some(Self { kde, lower, shape, starts, cols, offsets, ring_ends })
    }

    /// Largest unnormalized kernel contribution of a point at distance at
    /// least `rings * h` from the query.
    fn tail_bound(&self, rings: usize) -> f64 {
        let s = (rings * rings) as f64;
        match self.kde.kernel {
            KernelKind::Gaussian => (-0.5 * s).exp(),
            _ => {
                let d = self.shape.len() as f64;
                (1.0 - s / d).max(0.0).powf(d)
            }
        }
    }

    /// Unnormalized kernel sum over the points with cell-order index in
    /// `start..end`.
    fn range_sum(&self, y: &[f64], start: usize, end: usize) -> f64 {
        let mut buf = [0.0f64; BLOCK];
        let inv_h = 1.0 / self.kde.bandwidth;
        let mut total = 0.0;
        let mut s = start;
        while s < end {
            let len = BLOCK.min(end - s);
            let buf = &mut buf[..len];
            match self.kde.kernel {
                KernelKind::Gaussian => {
                    buf.fill(0.0);
                    for (yd, col) in y.iter().zip(&self.cols) {
                        for (b, &c) in buf.iter_mut().zip(&col[s..s + len]) {
                            let u = (yd - c) * inv_h;
                            *b += u * u;
                        }
                    }
                    for b in buf.iter_mut() {
                        *b = exp_nonpositive(-0.5 * *b);
                    }
                }
                _ => {
                    buf.fill(1.0);
                    for (yd, col) in y.iter().zip(&self.cols) {
                        for (b, &c) in buf.iter_mut().zip(&col[s..s + len]) {
                            let u = (yd - c) * inv_h;
                            let t = 1.0 - u * u;
                            *b *= if t > 0.0 { t } else { 0.0 };
                        }
                    }
                }
            }
            total += buf.iter().sum::<f64>();
            s += len;
        }
        total
    }

    /// Non-empty point ranges of the cells in `ring` around `home`, written
    /// to `out`; returns the number of points they hold.
    fn ring_cells(&self, home: &[isize], ring: usize, out: &mut Vec<(usize, usize)>) -> usize {
        out.clear();
        let d = home.len();
        let start = if ring == 0 { 0 } else { self.ring_ends[ring - 1] };
        let mut count = 0;
        'offsets: for off in self.offsets[start * d..self.ring_ends[ring] * d].chunks_exact(d) {
            let mut flat = 0usize;
            for a in 0..d {
                let c = home[a] + off[a];
                if c < 0 || c >= self.shape[a] as isize {
                    continue 'offsets;
                }
                flat = flat * self.shape[a] + c as usize;
            }
            let (s, e) = (self.starts[flat], self.starts[flat + 1]);
            if e > s {
                out.push((s, e));
                count += e - s;
            }
        }
        count
    }

    pub fn in_band(&self, y: &[f64], target: f64, eps: f64) -> bool {
        let exact = || (self.kde.density(y) - target).abs() < eps;
        let d = self.shape.len();
        if y.len() != d || !y.iter().all(|v| v.is_finite()) {
            return exact();
        }
        let norm = self.kde.norm;
        let n = self.kde.cloud.n;
        let margin = 1e-9 * (target.abs() + eps);
        let (lo, hi) = (target - eps, target + eps);
        let h = self.kde.bandwidth;
        let home: Vec<isize> = y
            .iter()
            .zip(&self.lower)
            .map(|(v, l)| ((v - l) / h).floor().clamp(-1e9, 1e9) as isize)
            .collect();
        let mut cur = Vec::new();
        let mut next = Vec::new();
        let mut cur_count = self.ring_cells(&home, 0, &mut cur);
        let mut seen = 0usize;
        let mut sum = 0.0;
        for ring in 0..BAND_RINGS {
            for &(s, e) in &cur {
                sum += self.range_sum(y, s, e);
            }
            seen += cur_count;
            // Unvisited points in the next ring lie beyond `ring` bandwidths,
            // everything else beyond `ring + 1`.
            let tail = if ring + 1 < BAND_RINGS {
                let next_count = self.ring_cells(&home, ring + 1, &mut next);
                let t = next_count as f64 * self.tail_bound(ring)
                    + (n - seen - next_count) as f64 * self.tail_bound(ring + 1);
                std::mem::swap(&mut cur, &mut next);
                cur_count = next_count;
                t
            } else {
                (n - seen) as f64 * self.tail_bound(ring)
            };
            let low = sum * norm;
            let high = low + tail * norm;
            if low >= hi + margin || high <= lo - margin {
                return false;
            }
            if low >= lo + margin && high <= hi - margin {
                return true;
            }
        }
        exact()
    }
}

/// Cross-validated bandwidth plus the multipliers that spread it into a bank.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthBank {
    pub hcv: f64,
    pub multipliers: Vec<f64>,
}

impl BandwidthBank {
    pub const DEFAULT_MULTIPLIERS: [f64; 5] = [0.9, 0.95, 1.0, 1.05, 1.1];

    pub fn new(hcv: f64) -> Self {
        Self {
            hcv,
            multipliers: Self::DEFAULT_MULTIPLIERS.to_vec(),
        }
    }

    pub fn with_multipliers(hcv: f64, multipliers: Vec<f64>) -> Self {
        Self { hcv, multipliers }
    }

    pub fn bandwidths(&self) -> Vec<f64> {
        self.multipliers.iter().map(|m| m * self.hcv).collect()
    }
}

/// One estimator per multiplier, all sharing the same fitting points.
pub fn build_bank(points: &Points, kernel: KernelKind, bank: &BandwidthBank) -> Result<Vec<KdeEstimator>> {
    if bank.multipliers.is_empty() {
        return Err(Error::invalid("multipliers", "at least one multiplier is required"));
    }
    if let Some(m) = bank.multipliers.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
        return Err(Error::invalid("multipliers", format!("must be positive, got {m}")));
    }
    let cloud = Arc::new(PointCloud::new(points)?);
    bank.bandwidths()
        .into_iter()
        .map(|h| KdeEstimator::from_cloud(Arc::clone(&cloud), h, kernel))
        .collect()
}

/// Least-squares cross-validation score
/// `LSCV(h) = int fhat_h^2 - (2/n) sum_i fhat_{h,-i}(X_i)`.
///
/// `int fhat_h^2` is computed exactly from the kernel self-convolution.
pub fn lscv_score(points: &Points, h: f64, kernel: KernelKind) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("bandwidth", format!("must be positive, got {h}")));
    }
    if !kernel.is_density() {
        return Err(Error::NotADensityKernel(kernel));
    }
    let cloud = PointCloud::new(points)?;
    let d = cloud.dim;
    let hd = h.powi(d as i32);

    // Pair sums over i < j.
    let (conv_pairs, kern_pairs) = match kernel {
        KernelKind::Gaussian => gaussian_pair_sums(&cloud, h),
        _ => compact_pair_sums(&cloud, h, kernel),
    };

    let conv0 = kernel.self_convolution_1d(0.0).powi(d as i32);
    let nf = n as f64;
    let integral = (nf * conv0 + 2.0 * conv_pairs) / (nf * nf * hd);
    let loo_mean = 2.0 * kern_pairs / ((nf - 1.0) * hd) / nf;
    Ok(integral - 2.0 * loo_mean)
}

fn gaussian_pair_sums(cloud: &PointCloud, h: f64) -> (f64, f64) {
    let d = cloud.dim as i32;
    // exp(-r^2 / 4h^2) is the convolution exponent; its square is the kernel's.
    let scale = -0.25 / (h * h);
    let per_row = par::map_range(cloud.n, |i| {
        let mut conv = 0.0;
        let mut kern = 0.0;
        let mut buf = [0.0f64; BLOCK];
        let mut start = i + 1;
        while start < cloud.n {
            let len = BLOCK.min(cloud.n - start);
            let buf = &mut buf[..len];
            buf.fill(0.0);
            for col in &cloud.cols {
                let xi = col[i];
                for (b, &c) in buf.iter_mut().zip(&col[start..start + len]) {
                    let diff = xi - c;
                    *b += diff * diff;
                }
            }
            for b in buf.iter() {
                let e = exp_nonpositive(b * scale);
                conv += e;
                kern += e * e;
            }
            start += len;
        }
        (conv, kern)
    });
    let (conv, kern) = per_row
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (c, k)| (a + c, b + k));
    (
        conv * (4.0 * PI).powf(-0.5 * d as f64),
        kern * (2.0 * PI).powf(-0.5 * d as f64),
    )
}

fn compact_pair_sums(cloud: &PointCloud, h: f64, kernel: KernelKind) -> (f64, f64) {
    let inv_h = 1.0 / h;
    let reach = 2.0 * h * (1.0 + 1e-9);
    let per_row = par::map_range(cloud.n, |i| {
        let mut conv = 0.0;
        let mut kern = 0.0;
        let c0 = &cloud.cols[0];
        let mut j = i + 1;
        while j < cloud.n && c0[j] - c0[i] < reach {
            let mut pc = 1.0;
            let mut pk = 1.0;
            for col in &cloud.cols {
                let u = (col[i] - col[j]) * inv_h;
                pc *= kernel.self_convolution_1d(u);
                pk *= kernel.eval_1d(u);
            }
            conv += pc;
            kern += pk;
            j += 1;
        }
        (conv, kern)
    });
    per_row
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (c, k)| (a + c, b + k))
}

/// The grid element minimizing [`lscv_score`]; ties go to the smaller value.
pub fn select_bandwidth(points: &Points, kernel: KernelKind, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::invalid("grid", "bandwidth grid is empty"));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("grid", "bandwidth grid must be sorted ascending"));
    }
    let scores = grid
        .iter()
        .map(|&h| lscv_score(points, h, kernel))
        .collect::<Result<Vec<_>>>()?;
    Ok(grid[stats::argmin_first(&scores).unwrap_or(0)])
}

/// Rule-of-thumb bandwidth `sigma (4/(d+2))^(1/(d+4)) n^(-1/(d+4))`, with
/// `sigma` the mean per-coordinate standard deviation, rescaled to the
/// kernel's canonical bandwidth (Gaussian factor 1).
pub fn reference_bandwidth(points: &Points, kernel: KernelKind) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let d = points.dim() as f64;
    let sigma = (0..points.dim())
        .map(|axis| stats::std_dev(&points.column(axis).collect::<Vec<_>>()))
        .sum::<f64>()
        / d;
    if !(sigma > 0.0) {
        return Err(Error::invalid("points", "sample has zero spread"));
    }
    let base = sigma * (4.0 / (d + 2.0)).powf(1.0 / (d + 4.0)) * (n as f64).powf(-1.0 / (d + 4.0));
    Ok(base * canonical_factor(kernel))
}

/// Ratio of canonical bandwidths `(R(K)/mu2(K)^2)^(1/5)` relative to the
/// Gaussian kernel.
fn canonical_factor(kernel: KernelKind) -> f64 {
    let delta = |roughness: f64, mu2: f64| (roughness / (mu2 * mu2)).powf(0.2);
    let gauss = delta(0.5 / PI.sqrt(), 1.0);
    match kernel {
        KernelKind::Epanechnikov => delta(0.6, 0.2) / gauss,
        _ => 1.0,
    }
}

/// 30 log-spaced bandwidths on `[0.1, 3] * reference_bandwidth`.
pub fn default_grid(points: &Points, kernel: KernelKind) -> Result<Vec<f64>> {
    let href = reference_bandwidth(points, kernel)?;
    Ok(stats::log_spaced(0.1 * href, 3.0 * href, 30))
}

/// Cross-validated bandwidth over [`default_grid`].
pub fn cross_validated_bandwidth(points: &Points, kernel: KernelKind) -> Result<f64> {
    select_bandwidth(points, kernel, &default_grid(points, kernel)?)
}
