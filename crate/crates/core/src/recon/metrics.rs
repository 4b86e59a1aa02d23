//! SNR and SSIM evaluation metrics, plus per-slice summaries.

use crate::error::{Error, Result};
use crate::filters;
use crate::geometry::Volume;

/// SNR values are capped at this ceiling; exact equality reports the cap.
pub const SNR_CAP_DB: f64 = 300.0;

/// `20 * log10(||reference|| / ||reference - estimate||)`, capped at
/// [`SNR_CAP_DB`]. Rejects an all-zero reference.
pub fn snr_db(reference: &Volume, estimate: &Volume) -> Result<f64> {
    if !reference.same_shape(estimate) {
        return Err(Error::shape_mismatch(
            "snr volumes",
            &(reference.nx, reference.ny, reference.nz),
            &(estimate.nx, estimate.ny, estimate.nz),
        ));
    }
    let (ref_energy, err_energy) = energies(&reference.values, &estimate.values);
    if ref_energy == 0.0 {
        return Err(Error::InvalidArgument(
            "snr is undefined for a zero reference".into(),
        ));
    }
    Ok(snr_from_energies(ref_energy, err_energy))
}

fn energies(reference: &[f32], estimate: &[f32]) -> (f64, f64) {
    let mut ref_energy = 0.0_f64;
    let mut err_energy = 0.0_f64;
    for (&r, &e) in reference.iter().zip(estimate) {
        let r = r as f64;
        let d = r - e as f64;
        ref_energy += r * r;
        err_energy += d * d;
    }
    (ref_energy, err_energy)
}

fn snr_from_energies(ref_energy: f64, err_energy: f64) -> f64 {
    if err_energy == 0.0 {
        return SNR_CAP_DB;
    }
    (10.0 * (ref_energy / err_energy).log10()).min(SNR_CAP_DB)
}

/// Mean local SSIM with an 11-tap Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, computed per z-slice over valid window positions and averaged
/// across slices. `data_range` sets the dynamic range L (2.0 for normalized
/// phantoms).
pub fn ssim(reference: &Volume, estimate: &Volume, data_range: f64) -> Result<f64> {
    if !reference.same_shape(estimate) {
        return Err(Error::shape_mismatch(
            "ssim volumes",
            &(reference.nx, reference.ny, reference.nz),
            &(estimate.nx, estimate.ny, estimate.nz),
        ));
    }
    let mut acc = 0.0;
    for z in 0..reference.nz {
        let a = slice_xy(reference, z);
        let b = slice_xy(estimate, z);
        acc += ssim_image(&a, &b, reference.ny, reference.nx, data_range)?;
    }
    Ok(acc / reference.nz as f64)
}

/// SSIM window parameters: 11 taps of a sigma = 1.5 Gaussian.
const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Windowed SSIM of one 2D image pair over valid window positions.
pub fn ssim_image(a: &[f64], b: &[f64], rows: usize, cols: usize, data_range: f64) -> Result<f64> {
    if a.len() != rows * cols || b.len() != rows * cols {
        return Err(Error::shape_mismatch("ssim image", &a.len(), &(rows * cols)));
    }
    if rows < 2 * SSIM_RADIUS + 1 || cols < 2 * SSIM_RADIUS + 1 {
        return Err(Error::InvalidArgument(format!(
            "ssim needs slices of at least {0}x{0}, got {rows}x{cols}",
            2 * SSIM_RADIUS + 1
        )));
    }
    let taps = filters::gaussian_taps_with_radius(SSIM_SIGMA, SSIM_RADIUS);
    let aa: Vec<f64> = a.iter().map(|&v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|&v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x * y).collect();

    let (mu_a, orows, ocols) = filters::filter_valid_separable(a, rows, cols, &taps);
    let (mu_b, _, _) = filters::filter_valid_separable(b, rows, cols, &taps);
    let (m_aa, _, _) = filters::filter_valid_separable(&aa, rows, cols, &taps);
    let (m_bb, _, _) = filters::filter_valid_separable(&bb, rows, cols, &taps);
    let (m_ab, _, _) = filters::filter_valid_separable(&ab, rows, cols, &taps);

    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let mut acc = 0.0;
    for i in 0..orows * ocols {
        let var_a = m_aa[i] - mu_a[i] * mu_a[i];
        let var_b = m_bb[i] - mu_b[i] * mu_b[i];
        let cov = m_ab[i] - mu_a[i] * mu_b[i];
        let num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
        let den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2);
        acc += num / den;
    }
    Ok(acc / (orows * ocols) as f64)
}

/// Extracts z-slice `z` as an image with `ny` rows and `nx` columns.
fn slice_xy(vol: &Volume, z: usize) -> Vec<f64> {
    let mut img = Vec::with_capacity(vol.nx * vol.ny);
    for y in 0..vol.ny {
        for x in 0..vol.nx {
            img.push(vol.at(x, y, z) as f64);
        }
    }
    img
}

/// Aggregate statistics over a list of values. Quartiles use linear
/// interpolation between order statistics; std is the population deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl SummaryStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("summary of an empty list".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("metric values are finite"));
        Ok(SummaryStats {
            mean,
            std: var.sqrt(),
            min: sorted[0],
            q25: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q75: quantile(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        })
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Per-slice SNR along each axis plus quartile summaries. Slice lists are
/// ordered [z, y, x] with lengths (nz, ny, nx). Slices where both reference
/// and estimate are zero report the cap; zero-reference slices with nonzero
/// error report the negative cap.
#[derive(Debug, Clone)]
pub struct SliceMetrics {
    pub snr_z: Vec<f64>,
    pub snr_y: Vec<f64>,
    pub snr_x: Vec<f64>,
    pub summary_z: SummaryStats,
    pub summary_y: SummaryStats,
    pub summary_x: SummaryStats,
}

pub fn slicewise_stats(reference: &Volume, estimate: &Volume) -> Result<SliceMetrics> {
    if !reference.same_shape(estimate) {
        return Err(Error::shape_mismatch(
            "slicewise volumes",
            &(reference.nx, reference.ny, reference.nz),
            &(estimate.nx, estimate.ny, estimate.nz),
        ));
    }
    let slice_snr = |axis: usize, count: usize| -> Vec<f64> {
        (0..count)
            .map(|i| {
                let mut ref_energy = 0.0_f64;
                let mut err_energy = 0.0_f64;
                let mut visit = |x: usize, y: usize, z: usize| {
                    let r = reference.at(x, y, z) as f64;
                    let d = r - estimate.at(x, y, z) as f64;
                    ref_energy += r * r;
                    err_energy += d * d;
                };
                match axis {
                    0 => {
                        for y in 0..reference.ny {
                            for x in 0..reference.nx {
                                visit(x, y, i);
                            }
                        }
                    }
                    1 => {
                        for z in 0..reference.nz {
                            for x in 0..reference.nx {
                                visit(x, i, z);
                            }
                        }
                    }
                    _ => {
                        for z in 0..reference.nz {
                            for y in 0..reference.ny {
                                visit(i, y, z);
                            }
                        }
                    }
                }
                if ref_energy == 0.0 {
                    if err_energy == 0.0 {
                        SNR_CAP_DB
                    } else {
                        -SNR_CAP_DB
                    }
                } else {
                    snr_from_energies(ref_energy, err_energy)
                }
            })
            .collect()
    };
    let snr_z = slice_snr(0, reference.nz);
    let snr_y = slice_snr(1, reference.ny);
    let snr_x = slice_snr(2, reference.nx);
    Ok(SliceMetrics {
        summary_z: SummaryStats::from_values(&snr_z)?,
        summary_y: SummaryStats::from_values(&snr_y)?,
        summary_x: SummaryStats::from_values(&snr_x)?,
        snr_z,
        snr_y,
        snr_x,
    })
}
