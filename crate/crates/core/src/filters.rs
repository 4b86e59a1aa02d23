//! 2D image filtering helpers shared by the corruption physics and the SSIM
//! metric. Images are flat `f64` slices in row-major order.

/// Folds an out-of-range index back into `[0, n)` by repeated symmetric
/// reflection (edge samples duplicated), valid for arbitrarily large
/// excursions, so kernels may exceed the image size.
#[inline]
pub(crate) fn reflect_index(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    debug_assert!(n > 0);
    loop {
        if i < 0 {
            i = -1 - i;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Normalized 1D Gaussian taps with radius `ceil(3 * sigma)`.
pub(crate) fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    gaussian_taps_with_radius(sigma, radius)
}

pub(crate) fn gaussian_taps_with_radius(sigma: f64, radius: usize) -> Vec<f64> {
    let mut taps = Vec::with_capacity(2 * radius + 1);
    let denom = 2.0 * sigma * sigma;
    for k in -(radius as isize)..=(radius as isize) {
        taps.push((-(k * k) as f64 / denom).exp());
    }
    let sum: f64 = taps.iter().sum();
    for t in taps.iter_mut() {
        *t /= sum;
    }
    taps
}

/// Separable convolution with reflective boundaries (rows then columns).
pub(crate) fn convolve_separable_reflect(
    img: &[f64],
    rows: usize,
    cols: usize,
    taps: &[f64],
) -> Vec<f64> {
    let radius = taps.len() / 2;
    let mut tmp = vec![0.0; rows * cols];
    for r in 0..rows {
        let line = &img[r * cols..(r + 1) * cols];
        for c in 0..cols {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                let src = reflect_index(c as isize + k as isize - radius as isize, cols);
                acc += t * line[src];
            }
            tmp[r * cols + c] = acc;
        }
    }
    let mut out = vec![0.0; rows * cols];
    for c in 0..cols {
        for r in 0..rows {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                let src = reflect_index(r as isize + k as isize - radius as isize, rows);
                acc += t * tmp[src * cols + c];
            }
            out[r * cols + c] = acc;
        }
    }
    out
}

/// Dense 2D convolution with reflective boundaries. `kernel` is row-major
/// with odd extents.
pub(crate) fn convolve2d_reflect(
    img: &[f64],
    rows: usize,
    cols: usize,
    kernel: &[f64],
    k_rows: usize,
    k_cols: usize,
) -> Vec<f64> {
    debug_assert!(k_rows % 2 == 1 && k_cols % 2 == 1);
    let ry = (k_rows / 2) as isize;
    let rx = (k_cols / 2) as isize;
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            let mut acc = 0.0;
            for ky in 0..k_rows as isize {
                let src_r = reflect_index(r + ky - ry, rows);
                for kx in 0..k_cols as isize {
                    let src_c = reflect_index(c + kx - rx, cols);
                    acc += kernel[(ky * k_cols as isize + kx) as usize]
                        * img[src_r * cols + src_c];
                }
            }
            out[(r * cols as isize + c) as usize] = acc;
        }
    }
    out
}

/// Rotated anisotropic Gaussian kernel, normalized to unit sum. Orientation
/// 0 degrees puts the major axis along the column (horizontal) direction.
/// Returns (taps, k_rows, k_cols).
pub(crate) fn gaussian2d_rotated(
    sigma_major: f64,
    sigma_minor: f64,
    orientation_deg: f64,
) -> (Vec<f64>, usize, usize) {
    let radius = (3.0 * sigma_major).ceil().max(1.0) as isize;
    let size = (2 * radius + 1) as usize;
    let alpha = orientation_deg.to_radians();
    let (sin_a, cos_a) = alpha.sin_cos();
    let mut taps = vec![0.0; size * size];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            // Rotate the offset into the kernel frame.
            let major = dx as f64 * cos_a + dy as f64 * sin_a;
            let minor = -(dx as f64) * sin_a + dy as f64 * cos_a;
            let e = major * major / (2.0 * sigma_major * sigma_major)
                + minor * minor / (2.0 * sigma_minor * sigma_minor);
            taps[((dy + radius) * (2 * radius + 1) + (dx + radius)) as usize] = (-e).exp();
        }
    }
    let sum: f64 = taps.iter().sum();
    for t in taps.iter_mut() {
        *t /= sum;
    }
    (taps, size, size)
}

/// Separable "valid" filtering (no padding): output shrinks by the kernel
/// radius on every side. Returns (out, out_rows, out_cols).
pub(crate) fn filter_valid_separable(
    img: &[f64],
    rows: usize,
    cols: usize,
    taps: &[f64],
) -> (Vec<f64>, usize, usize) {
    let radius = taps.len() / 2;
    assert!(rows > 2 * radius && cols > 2 * radius, "image smaller than kernel");
    let out_cols = cols - 2 * radius;
    let mut tmp = vec![0.0; rows * out_cols];
    for r in 0..rows {
        let line = &img[r * cols..(r + 1) * cols];
        for c in 0..out_cols {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * line[c + k];
            }
            tmp[r * out_cols + c] = acc;
        }
    }
    let out_rows = rows - 2 * radius;
    let mut out = vec![0.0; out_rows * out_cols];
    for r in 0..out_rows {
        for c in 0..out_cols {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * tmp[(r + k) * out_cols + c];
            }
            out[r * out_cols + c] = acc;
        }
    }
    (out, out_rows, out_cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_folds_arbitrary_excursions() {
        assert_eq!(reflect_index(0, 4), 0);
        assert_eq!(reflect_index(-1, 4), 0);
        assert_eq!(reflect_index(-2, 4), 1);
        assert_eq!(reflect_index(4, 4), 3);
        assert_eq!(reflect_index(5, 4), 2);
        // Multiple folds: indices far outside a tiny image.
        assert_eq!(reflect_index(9, 4), 1);
        assert_eq!(reflect_index(-9, 4), 0);
    }

    #[test]
    fn gaussian_taps_are_normalized_and_symmetric() {
        let taps = gaussian_taps(2.0);
        let sum: f64 = taps.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for k in 0..taps.len() / 2 {
            assert_eq!(taps[k], taps[taps.len() - 1 - k]);
        }
    }

    #[test]
    fn flat_image_is_invariant_under_unit_sum_kernels() {
        let img = vec![3.25; 20 * 17];
        let out = convolve_separable_reflect(&img, 20, 17, &gaussian_taps(2.5));
        for &v in &out {
            assert!((v - 3.25).abs() < 1e-12);
        }
        let (k, kr, kc) = gaussian2d_rotated(2.0, 1.0, 17.0);
        let out = convolve2d_reflect(&img, 20, 17, &k, kr, kc);
        for &v in &out {
            assert!((v - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn rotated_kernel_marginal_moment_matches_sigma() {
        // Orientation 0: major axis along columns, so the column marginal
        // second moment equals sigma_major^2.
        let sigma = 2.0;
        let (k, kr, kc) = gaussian2d_rotated(sigma, sigma / 2.0, 0.0);
        let radius = (kc / 2) as isize;
        let mut m2 = 0.0;
        for r in 0..kr {
            for c in 0..kc {
                let dx = c as isize - radius;
                m2 += k[r * kc + c] * (dx * dx) as f64;
            }
        }
        assert!(
            (m2 - sigma * sigma).abs() / (sigma * sigma) < 0.05,
            "column moment {m2} vs {}",
            sigma * sigma
        );
    }
}
