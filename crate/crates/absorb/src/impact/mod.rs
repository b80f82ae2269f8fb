//! Quantifying the impact of outcome reporting bias: kernel density
//! estimates of the two posteriors, their Hellinger distance (the D
//! measure), credible intervals, Jaccard indices, and interpretation bands.
//!
//! Densities are estimated on uniform grids by linear binning followed by
//! convolution with a discretized Gaussian kernel; this is deterministic,
//! preserves the sample mean, and is fast enough for two-dimensional grids.
//! The Hellinger distance re-evaluates both estimates on a shared union
//! grid and renormalizes each to unit mass there, so identical inputs give
//! a distance of exactly zero and the result never exceeds one.

pub mod reference;

use serde::Serialize;
use thiserror::Error;

use crate::math::{mean, quantile_sorted, std_dev};
use crate::sampler::PosteriorDraws;
use reference::{reference_percentile, DColumn};

#[derive(Debug, Error, PartialEq)]
pub enum ImpactError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("sample is degenerate (zero variance) in dimension {0}")]
    DegenerateSample(usize),
    #[error("density grids have different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("fits reference different datasets: {0} vs {1}")]
    FingerprintMismatch(String, String),
    #[error("interval has zero length")]
    ZeroLengthInterval,
    #[error("d value {0} outside [0, 1]")]
    OutOfRange(f64),
}

/// Sample set and bandwidths behind a density grid, kept so the density can
/// be re-evaluated on another grid.
#[derive(Debug, Clone)]
enum KdeSource {
    OneD { samples: Vec<f64>, bandwidth: f64 },
    TwoD {
        samples: Vec<(f64, f64)>,
        bandwidth: (f64, f64),
    },
}

/// A kernel density estimate evaluated on a uniform grid.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    pub dims: usize,
    /// Grid coordinates per dimension, strictly increasing.
    pub grid: Vec<Vec<f64>>,
    /// Density values; row-major `values[ix * ny + iy]` in two dimensions.
    pub values: Vec<f64>,
    source: KdeSource,
}

/// Silverman's rule of thumb for one dimension.
fn silverman_1d(samples: &[f64]) -> f64 {
    let sd = std_dev(samples);
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (samples.len() as f64).powf(-0.2)
}

/// Silverman's multivariate rule for two dimensions: per-dimension sample
/// standard deviation scaled by n^(-1/6).
fn silverman_2d(samples: &[(f64, f64)]) -> (f64, f64) {
    let xs: Vec<f64> = samples.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = samples.iter().map(|p| p.1).collect();
    let n = samples.len() as f64;
    (std_dev(&xs) * n.powf(-1.0 / 6.0), std_dev(&ys) * n.powf(-1.0 / 6.0))
}

fn linspace(lo: f64, hi: f64, len: usize) -> Vec<f64> {
    let step = (hi - lo) / (len - 1) as f64;
    (0..len).map(|i| lo + step * i as f64).collect()
}

/// Linear binning: each sample splits its unit weight between the two
/// neighboring grid nodes, which preserves total mass and the first moment.
fn bin_linear(samples: &[f64], lo: f64, step: f64, len: usize) -> Vec<f64> {
    let mut bins = vec![0.0; len];
    for &x in samples {
        let pos = (x - lo) / step;
        if pos <= 0.0 {
            bins[0] += 1.0;
        } else if pos >= (len - 1) as f64 {
            bins[len - 1] += 1.0;
        } else {
            let i = pos.floor() as usize;
            let w = pos - i as f64;
            bins[i] += 1.0 - w;
            bins[i + 1] += w;
        }
    }
    bins
}

/// Discretized Gaussian kernel weights at grid offsets 0, 1, .., radius.
fn kernel_weights(step: f64, h: f64) -> Vec<f64> {
    let radius = ((8.0 * h / step).ceil() as usize).max(1);
    (0..=radius)
        .map(|k| crate::math::norm_pdf(k as f64 * step / h) / h)
        .collect()
}

fn convolve(bins: &[f64], kernel: &[f64]) -> Vec<f64> {
    let len = bins.len();
    let radius = kernel.len() - 1;
    let mut out = vec![0.0; len];
    for (i, &b) in bins.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        let k_lo = i.saturating_sub(radius);
        let k_hi = (i + radius).min(len - 1);
        for j in k_lo..=k_hi {
            let offset = i.abs_diff(j);
            out[j] += b * kernel[offset];
        }
    }
    out
}

fn eval_kde_1d(samples: &[f64], h: f64, grid: &[f64]) -> Vec<f64> {
    let step = grid[1] - grid[0];
    let bins = bin_linear(samples, grid[0], step, grid.len());
    let kernel = kernel_weights(step, h);
    let mut values = convolve(&bins, &kernel);
    let n = samples.len() as f64;
    for v in &mut values {
        *v /= n;
    }
    values
}

fn eval_kde_2d(
    samples: &[(f64, f64)],
    (h1, h2): (f64, f64),
    grid_x: &[f64],
    grid_y: &[f64],
) -> Vec<f64> {
    let (nx, ny) = (grid_x.len(), grid_y.len());
    let step_x = grid_x[1] - grid_x[0];
    let step_y = grid_y[1] - grid_y[0];

    // Bilinear binning into the nx * ny lattice.
    let mut bins = vec![0.0; nx * ny];
    for &(x, y) in samples {
        let px = ((x - grid_x[0]) / step_x).clamp(0.0, (nx - 1) as f64);
        let py = ((y - grid_y[0]) / step_y).clamp(0.0, (ny - 1) as f64);
        let ix = (px.floor() as usize).min(nx - 2);
        let iy = (py.floor() as usize).min(ny - 2);
        let wx = px - ix as f64;
        let wy = py - iy as f64;
        bins[ix * ny + iy] += (1.0 - wx) * (1.0 - wy);
        bins[(ix + 1) * ny + iy] += wx * (1.0 - wy);
        bins[ix * ny + iy + 1] += (1.0 - wx) * wy;
        bins[(ix + 1) * ny + iy + 1] += wx * wy;
    }

    // Separable convolution: rows with the y-kernel, columns with the x-kernel.
    let ky = kernel_weights(step_y, h2);
    let mut tmp = vec![0.0; nx * ny];
    for ix in 0..nx {
        let row = &bins[ix * ny..(ix + 1) * ny];
        let conv = convolve(row, &ky);
        tmp[ix * ny..(ix + 1) * ny].copy_from_slice(&conv);
    }
    let kx = kernel_weights(step_x, h1);
    let mut values = vec![0.0; nx * ny];
    let mut column = vec![0.0; nx];
    for iy in 0..ny {
        for ix in 0..nx {
            column[ix] = tmp[ix * ny + iy];
        }
        let conv = convolve(&column, &kx);
        for ix in 0..nx {
            values[ix * ny + iy] = conv[ix];
        }
    }
    let n = samples.len() as f64;
    for v in &mut values {
        *v /= n;
    }
    values
}

/// Gaussian-kernel density estimate of a univariate sample on a grid of
/// `grid_size` points spanning three bandwidths beyond the sample range.
pub fn kde(samples: &[f64], grid_size: usize) -> Result<DensityGrid, ImpactError> {
    if samples.len() < 100 {
        return Err(ImpactError::TooFewSamples {
            need: 100,
            got: samples.len(),
        });
    }
    let h = silverman_1d(samples);
    if !(h > 0.0) {
        return Err(ImpactError::DegenerateSample(0));
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let grid = linspace(lo, hi, grid_size.max(16));
    let values = eval_kde_1d(samples, h, &grid);
    Ok(DensityGrid {
        dims: 1,
        grid: vec![grid],
        values,
        source: KdeSource::OneD {
            samples: samples.to_vec(),
            bandwidth: h,
        },
    })
}

/// Product-kernel density estimate of a bivariate sample on a
/// `grid_size` x `grid_size` lattice.
pub fn kde2(samples: &[(f64, f64)], grid_size: usize) -> Result<DensityGrid, ImpactError> {
    if samples.len() < 100 {
        return Err(ImpactError::TooFewSamples {
            need: 100,
            got: samples.len(),
        });
    }
    let (h1, h2) = silverman_2d(samples);
    if !(h1 > 0.0) {
        return Err(ImpactError::DegenerateSample(0));
    }
    if !(h2 > 0.0) {
        return Err(ImpactError::DegenerateSample(1));
    }
    let (mut lo_x, mut hi_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut lo_y, mut hi_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in samples {
        lo_x = lo_x.min(x);
        hi_x = hi_x.max(x);
        lo_y = lo_y.min(y);
        hi_y = hi_y.max(y);
    }
    let grid_x = linspace(lo_x - 3.0 * h1, hi_x + 3.0 * h1, grid_size.max(16));
    let grid_y = linspace(lo_y - 3.0 * h2, hi_y + 3.0 * h2, grid_size.max(16));
    let values = eval_kde_2d(samples, (h1, h2), &grid_x, &grid_y);
    Ok(DensityGrid {
        dims: 2,
        grid: vec![grid_x, grid_y],
        values,
        source: KdeSource::TwoD {
            samples: samples.to_vec(),
            bandwidth: (h1, h2),
        },
    })
}

impl DensityGrid {
    /// Trapezoid-rule integral of the density over its grid.
    pub fn integral(&self) -> f64 {
        match self.dims {
            1 => trapezoid_1d(&self.grid[0], &self.values),
            2 => trapezoid_2d(&self.grid[0], &self.grid[1], &self.values),
            _ => unreachable!(),
        }
    }

    /// Grid-weighted mean per dimension.
    pub fn grid_mean(&self) -> Vec<f64> {
        match self.dims {
            1 => {
                let weighted: Vec<f64> = self.grid[0]
                    .iter()
                    .zip(&self.values)
                    .map(|(x, v)| x * v)
                    .collect();
                vec![trapezoid_1d(&self.grid[0], &weighted) / self.integral()]
            }
            2 => {
                let (gx, gy) = (&self.grid[0], &self.grid[1]);
                let ny = gy.len();
                let mut wx = vec![0.0; self.values.len()];
                let mut wy = vec![0.0; self.values.len()];
                for ix in 0..gx.len() {
                    for iy in 0..ny {
                        wx[ix * ny + iy] = gx[ix] * self.values[ix * ny + iy];
                        wy[ix * ny + iy] = gy[iy] * self.values[ix * ny + iy];
                    }
                }
                let total = self.integral();
                vec![
                    trapezoid_2d(gx, gy, &wx) / total,
                    trapezoid_2d(gx, gy, &wy) / total,
                ]
            }
            _ => unreachable!(),
        }
    }

    /// CSV export: `x,density` rows, or `x,y,density` in two dimensions.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        match self.dims {
            1 => {
                writeln!(w, "x,density")?;
                for (x, v) in self.grid[0].iter().zip(&self.values) {
                    writeln!(w, "{x},{v}")?;
                }
            }
            2 => {
                writeln!(w, "x,y,density")?;
                let ny = self.grid[1].len();
                for (ix, x) in self.grid[0].iter().enumerate() {
                    for (iy, y) in self.grid[1].iter().enumerate() {
                        writeln!(w, "{x},{y},{}", self.values[ix * ny + iy])?;
                    }
                }
            }
            _ => unreachable!(),
        }
        Ok(())
    }

    fn evaluate_on(&self, axes: &[Vec<f64>]) -> Vec<f64> {
        match &self.source {
            KdeSource::OneD { samples, bandwidth } => eval_kde_1d(samples, *bandwidth, &axes[0]),
            KdeSource::TwoD { samples, bandwidth } => {
                eval_kde_2d(samples, *bandwidth, &axes[0], &axes[1])
            }
        }
    }
}

fn trapezoid_1d(grid: &[f64], values: &[f64]) -> f64 {
    let step = grid[1] - grid[0];
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    step * (0.5 * values[0] + inner + 0.5 * values[values.len() - 1])
}

fn trapezoid_2d(grid_x: &[f64], grid_y: &[f64], values: &[f64]) -> f64 {
    let ny = grid_y.len();
    let step_y = grid_y[1] - grid_y[0];
    let rows: Vec<f64> = (0..grid_x.len())
        .map(|ix| {
            let row = &values[ix * ny..(ix + 1) * ny];
            let inner: f64 = row[1..ny - 1].iter().sum();
            step_y * (0.5 * row[0] + inner + 0.5 * row[ny - 1])
        })
        .collect();
    trapezoid_1d(grid_x, &rows)
}

/// Hellinger distance between two density estimates.
///
/// Both densities are re-evaluated on a shared union grid and renormalized
/// to unit mass there before integrating sqrt(f g) by the trapezoid rule.
/// Exactly symmetric in its arguments; clamped to [0, 1].
pub fn hellinger(f: &DensityGrid, g: &DensityGrid) -> Result<f64, ImpactError> {
    if f.dims != g.dims {
        return Err(ImpactError::DimensionMismatch(f.dims, g.dims));
    }
    let axes: Vec<Vec<f64>> = (0..f.dims)
        .map(|d| {
            let lo = f.grid[d][0].min(g.grid[d][0]);
            let hi = f.grid[d][f.grid[d].len() - 1].max(g.grid[d][g.grid[d].len() - 1]);
            let len = f.grid[d].len().max(g.grid[d].len());
            linspace(lo, hi, len)
        })
        .collect();

    let mut fv = f.evaluate_on(&axes);
    let mut gv = g.evaluate_on(&axes);
    let integrate = |vals: &[f64]| -> f64 {
        match axes.len() {
            1 => trapezoid_1d(&axes[0], vals),
            _ => trapezoid_2d(&axes[0], &axes[1], vals),
        }
    };
    let f_total = integrate(&fv);
    let g_total = integrate(&gv);
    for v in &mut fv {
        *v /= f_total;
    }
    for v in &mut gv {
        *v /= g_total;
    }
    let cross: Vec<f64> = fv
        .iter()
        .zip(&gv)
        .map(|(a, b)| (a * b).max(0.0).sqrt())
        .collect();
    let overlap = integrate(&cross);
    Ok((1.0 - overlap).clamp(0.0, 1.0).sqrt())
}

/// Equal-tailed credible interval by linear-interpolation quantiles.
pub fn credible_interval(samples: &[f64], level: f64) -> Result<(f64, f64), ImpactError> {
    assert!(level > 0.0 && level < 1.0, "level must lie in (0,1)");
    if samples.len() < 100 {
        return Err(ImpactError::TooFewSamples {
            need: 100,
            got: samples.len(),
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = (1.0 - level) / 2.0;
    Ok((
        quantile_sorted(&sorted, alpha),
        quantile_sorted(&sorted, 1.0 - alpha),
    ))
}

/// Intersection length over union length of two intervals, with the union
/// measured as |a| + |b| - |intersection|.
pub fn jaccard_index(a: (f64, f64), b: (f64, f64)) -> Result<f64, ImpactError> {
    let len_a = a.1 - a.0;
    let len_b = b.1 - b.0;
    if len_a <= 0.0 || len_b <= 0.0 {
        return Err(ImpactError::ZeroLengthInterval);
    }
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = len_a + len_b - inter;
    Ok(inter / union)
}

/// Interpretation bands for the D measure. The intervals overlap
/// deliberately, so a D value may carry two labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum ImpactBand {
    #[serde(rename = "probably no impact")]
    ProbablyNoImpact,
    #[serde(rename = "moderate")]
    Moderate,
    #[serde(rename = "substantial")]
    Substantial,
    #[serde(rename = "severe")]
    Severe,
}

impl ImpactBand {
    pub fn range(self) -> (f64, f64) {
        match self {
            ImpactBand::ProbablyNoImpact => (0.0, 0.20),
            ImpactBand::Moderate => (0.10, 0.40),
            ImpactBand::Substantial => (0.30, 0.60),
            ImpactBand::Severe => (0.50, 1.00),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ImpactBand::ProbablyNoImpact => "probably no impact",
            ImpactBand::Moderate => "moderate",
            ImpactBand::Substantial => "substantial",
            ImpactBand::Severe => "severe",
        }
    }

    const ALL: [ImpactBand; 4] = [
        ImpactBand::ProbablyNoImpact,
        ImpactBand::Moderate,
        ImpactBand::Substantial,
        ImpactBand::Severe,
    ];
}

/// All bands whose closed interval contains `d`.
pub fn interpret_d(d: f64) -> Result<Vec<ImpactBand>, ImpactError> {
    if !(0.0..=1.0).contains(&d) {
        return Err(ImpactError::OutOfRange(d));
    }
    Ok(ImpactBand::ALL
        .into_iter()
        .filter(|band| {
            let (lo, hi) = band.range();
            d >= lo && d <= hi
        })
        .collect())
}

/// Per-endpoint values in a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerEndpoint<T> {
    pub mu1: T,
    pub mu2: T,
}

/// Per-D-measure values in a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerD<T> {
    pub d1: T,
    pub d2: T,
    pub d12: T,
}

/// The full ORB-impact report comparing a bias-corrected fit against its
/// non-bias-corrected counterpart.
#[derive(Debug, Clone, Serialize)]
pub struct DReport {
    pub d1: f64,
    pub d2: f64,
    pub d12: f64,
    pub bands: PerD<Vec<ImpactBand>>,
    pub ci_abs: PerEndpoint<(f64, f64)>,
    pub ci_nbc: PerEndpoint<(f64, f64)>,
    pub jaccard: PerEndpoint<f64>,
    pub percentiles: PerD<f64>,
}

/// Density grids backing a D report, exported for plotting.
#[derive(Debug, Clone)]
pub struct ImpactGrids {
    pub mu1_abs: DensityGrid,
    pub mu1_nbc: DensityGrid,
    pub mu2_abs: DensityGrid,
    pub mu2_nbc: DensityGrid,
    pub joint_abs: DensityGrid,
    pub joint_nbc: DensityGrid,
}

/// Compute the D measures between a bias-corrected and a non-bias-corrected
/// fit of the same dataset.
pub fn d_measure(
    draws_abs: &PosteriorDraws,
    draws_nbc: &PosteriorDraws,
    grid_size_1d: usize,
    grid_size_2d: usize,
) -> Result<(DReport, ImpactGrids), ImpactError> {
    if draws_abs.dataset_fingerprint != draws_nbc.dataset_fingerprint {
        return Err(ImpactError::FingerprintMismatch(
            draws_abs.dataset_fingerprint.clone(),
            draws_nbc.dataset_fingerprint.clone(),
        ));
    }
    for draws in [draws_abs, draws_nbc] {
        if draws.n_retained() < 1000 {
            return Err(ImpactError::TooFewSamples {
                need: 1000,
                got: draws.n_retained(),
            });
        }
    }

    let mu1_abs = draws_abs.combined("mu1");
    let mu2_abs = draws_abs.combined("mu2");
    let mu1_nbc = draws_nbc.combined("mu1");
    let mu2_nbc = draws_nbc.combined("mu2");

    let grids = ImpactGrids {
        mu1_abs: kde(&mu1_abs, grid_size_1d)?,
        mu1_nbc: kde(&mu1_nbc, grid_size_1d)?,
        mu2_abs: kde(&mu2_abs, grid_size_1d)?,
        mu2_nbc: kde(&mu2_nbc, grid_size_1d)?,
        joint_abs: kde2(&draws_abs.combined_mu_pairs(), grid_size_2d)?,
        joint_nbc: kde2(&draws_nbc.combined_mu_pairs(), grid_size_2d)?,
    };

    let d1 = hellinger(&grids.mu1_abs, &grids.mu1_nbc)?;
    let d2 = hellinger(&grids.mu2_abs, &grids.mu2_nbc)?;
    let d12 = hellinger(&grids.joint_abs, &grids.joint_nbc)?;

    let ci_abs = PerEndpoint {
        mu1: credible_interval(&mu1_abs, 0.95)?,
        mu2: credible_interval(&mu2_abs, 0.95)?,
    };
    let ci_nbc = PerEndpoint {
        mu1: credible_interval(&mu1_nbc, 0.95)?,
        mu2: credible_interval(&mu2_nbc, 0.95)?,
    };
    let jaccard = PerEndpoint {
        mu1: jaccard_index(ci_abs.mu1, ci_nbc.mu1)?,
        mu2: jaccard_index(ci_abs.mu2, ci_nbc.mu2)?,
    };

    let report = DReport {
        d1,
        d2,
        d12,
        bands: PerD {
            d1: interpret_d(d1)?,
            d2: interpret_d(d2)?,
            d12: interpret_d(d12)?,
        },
        ci_abs,
        ci_nbc,
        jaccard,
        percentiles: PerD {
            d1: reference_percentile(DColumn::D1, d1),
            d2: reference_percentile(DColumn::D2, d2),
            d12: reference_percentile(DColumn::D12, d12),
        },
    };
    Ok((report, grids))
}

/// Mean of a sample; exposed for grid-versus-sample checks in tests.
pub fn sample_mean(samples: &[f64]) -> f64 {
    mean(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::norm_pdf;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn normal_samples(n: usize, mean: f64, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    #[test]
    fn kde_tracks_the_true_density() {
        let xs = normal_samples(100_000, 0.0, 1.0, 1);
        let grid = kde(&xs, 512).unwrap();
        let max_err = grid.grid[0]
            .iter()
            .zip(&grid.values)
            .map(|(x, v)| (v - norm_pdf(*x)).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 0.02, "max deviation {max_err}");
        let integral = grid.integral();
        assert!((0.98..=1.02).contains(&integral), "integral {integral}");
    }

    #[test]
    fn kde_preserves_the_sample_mean() {
        let xs = normal_samples(20_000, 0.7, 1.3, 2);
        let grid = kde(&xs, 512).unwrap();
        assert!((grid.grid_mean()[0] - sample_mean(&xs)).abs() < 1e-3);

        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let us: Vec<f64> = (0..5_000).map(|_| rng.gen_range(0.0..1.0)).collect();
        let grid = kde(&us, 256).unwrap();
        assert!((grid.grid_mean()[0] - sample_mean(&us)).abs() < 1e-3);
    }

    #[test]
    fn kde_is_deterministic() {
        let xs = normal_samples(5_000, 0.0, 1.0, 4);
        let a = kde(&xs, 128).unwrap();
        let b = kde(&xs, 128).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.grid, b.grid);
    }

    #[test]
    fn kde_rejects_bad_input() {
        assert!(matches!(
            kde(&[0.0; 50], 128),
            Err(ImpactError::TooFewSamples { .. })
        ));
        assert_eq!(
            kde(&vec![1.0; 500], 128).unwrap_err(),
            ImpactError::DegenerateSample(0)
        );
    }

    #[test]
    fn hellinger_zero_for_identical_densities() {
        let xs = normal_samples(50_000, 0.0, 1.0, 5);
        let f = kde(&xs, 512).unwrap();
        let g = kde(&xs, 512).unwrap();
        let h = hellinger(&f, &g).unwrap();
        assert!(h < 1e-6, "H(f,f) = {h}");
    }

    #[test]
    fn hellinger_matches_gaussian_closed_form() {
        // H^2 between N(0,1) and N(1,1) is 1 - exp(-1/8): H = 0.3428.
        let f = kde(&normal_samples(100_000, 0.0, 1.0, 6), 512).unwrap();
        let g = kde(&normal_samples(100_000, 1.0, 1.0, 7), 512).unwrap();
        let h = hellinger(&f, &g).unwrap();
        assert!((h - 0.3428).abs() < 0.02, "H = {h}");
    }

    #[test]
    fn hellinger_near_one_for_disjoint_supports() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let a: Vec<f64> = (0..20_000).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..20_000).map(|_| rng.gen_range(10.0..11.0)).collect();
        let h = hellinger(&kde(&a, 256).unwrap(), &kde(&b, 256).unwrap()).unwrap();
        assert!(h >= 0.999, "H = {h}");
    }

    #[test]
    fn hellinger_exactly_symmetric() {
        let f = kde(&normal_samples(10_000, 0.0, 1.0, 9), 300).unwrap();
        let g = kde(&normal_samples(10_000, 0.6, 1.4, 10), 200).unwrap();
        let hfg = hellinger(&f, &g).unwrap();
        let hgf = hellinger(&g, &f).unwrap();
        assert_eq!(hfg.to_bits(), hgf.to_bits());
    }

    #[test]
    fn hellinger_rejects_dimension_mismatch() {
        let f = kde(&normal_samples(5_000, 0.0, 1.0, 20), 128).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let pairs: Vec<(f64, f64)> = (0..5_000)
            .map(|_| {
                (
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                )
            })
            .collect();
        let g = kde2(&pairs, 64).unwrap();
        assert_eq!(
            hellinger(&f, &g).unwrap_err(),
            ImpactError::DimensionMismatch(1, 2)
        );
    }

    #[test]
    fn hellinger_triangle_inequality_within_slack() {
        let sets: Vec<DensityGrid> = (0..3)
            .map(|i| {
                kde(
                    &normal_samples(20_000, i as f64 * 0.4, 1.0 + 0.2 * i as f64, 11 + i as u64),
                    256,
                )
                .unwrap()
            })
            .collect();
        let h01 = hellinger(&sets[0], &sets[1]).unwrap();
        let h12 = hellinger(&sets[1], &sets[2]).unwrap();
        let h02 = hellinger(&sets[0], &sets[2]).unwrap();
        assert!(h02 <= h01 + h12 + 1e-3);
    }

    #[test]
    fn hellinger_2d_identical_and_shifted() {
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let pairs: Vec<(f64, f64)> = (0..30_000)
            .map(|_| {
                (
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                )
            })
            .collect();
        let f = kde2(&pairs, 96).unwrap();
        assert!(hellinger(&f, &f).unwrap() < 1e-6);
        let integral = f.integral();
        assert!((0.98..=1.02).contains(&integral), "integral {integral}");

        // Shift in one coordinate by 1: closed form H^2 = 1 - exp(-1/8).
        let shifted: Vec<(f64, f64)> = pairs.iter().map(|&(x, y)| (x + 1.0, y)).collect();
        let g = kde2(&shifted, 96).unwrap();
        let h = hellinger(&f, &g).unwrap();
        assert!((h - 0.3428).abs() < 0.03, "H = {h}");
    }

    #[test]
    fn credible_interval_quantiles() {
        let xs = normal_samples(100_000, 0.0, 1.0, 15);
        let (lo, hi) = credible_interval(&xs, 0.95).unwrap();
        assert!((lo + 1.96).abs() < 0.05, "lo {lo}");
        assert!((hi - 1.96).abs() < 0.05, "hi {hi}");

        let mut rng = ChaCha12Rng::seed_from_u64(16);
        let us: Vec<f64> = (0..100_000).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (lo, hi) = credible_interval(&us, 0.95).unwrap();
        assert!((lo - 0.025).abs() < 0.01);
        assert!((hi - 0.975).abs() < 0.01);

        let constant = vec![3.0; 500];
        assert_eq!(credible_interval(&constant, 0.95).unwrap(), (3.0, 3.0));
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard_index((0.0, 1.0), (0.0, 1.0)).unwrap(), 1.0);
        assert_eq!(jaccard_index((0.0, 1.0), (2.0, 3.0)).unwrap(), 0.0);
        let j = jaccard_index((0.0, 2.0), (1.0, 3.0)).unwrap();
        assert!((j - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            jaccard_index((1.0, 1.0), (0.0, 2.0)).unwrap_err(),
            ImpactError::ZeroLengthInterval
        );
    }

    #[test]
    fn interpret_d_boundaries() {
        use ImpactBand::*;
        let cases: [(f64, &[ImpactBand]); 8] = [
            (0.0, &[ProbablyNoImpact]),
            (0.10, &[ProbablyNoImpact, Moderate]),
            (0.20, &[ProbablyNoImpact, Moderate]),
            (0.30, &[Moderate, Substantial]),
            (0.40, &[Moderate, Substantial]),
            (0.50, &[Substantial, Severe]),
            (0.60, &[Substantial, Severe]),
            (1.0, &[Severe]),
        ];
        for (d, expected) in cases {
            assert_eq!(interpret_d(d).unwrap(), expected.to_vec(), "d = {d}");
        }
        assert!(interpret_d(1.5).is_err());
        assert!(interpret_d(-0.1).is_err());
    }

    #[test]
    fn interpret_d_nonempty_and_monotone() {
        let mut prev_max = ImpactBand::ProbablyNoImpact;
        let mut d = 0.0;
        while d <= 1.0 {
            let bands = interpret_d(d).unwrap();
            assert!(!bands.is_empty(), "no band for {d}");
            let max = *bands.iter().max().unwrap();
            assert!(max >= prev_max, "bands regressed at {d}");
            prev_max = max;
            d += 0.005;
        }
    }
}
