//! Radiograph degradation physics: source/detector blur, correlated
//! scatter, polynomial background scatter, colored Poisson noise, the AWGN
//! model, and post-log conversion.
//!
//! The full per-view model builds the transmission `D = I0 * exp(-A x)`,
//! blurs it, adds a wide-kernel scatter copy and a low-order polynomial
//! background, draws two colored Poisson noise components whose means track
//! the total signal, clamps at a positive floor, and converts back with
//! `-log(. / I0)`. Every random parameter is drawn independently per view.

use crate::error::{Error, Result};
use crate::filters;
use crate::geometry::{forward_project, ProjectionStack, ScanGeometry, StackKind, Volume};
use crate::phantom::splitmix64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

/// One detector image in f64 working precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Image {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Image {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Mean over the central half-width region of the image.
    pub fn center_mean(&self) -> f64 {
        let r0 = self.rows / 4;
        let r1 = (3 * self.rows).div_ceil(4);
        let c0 = self.cols / 4;
        let c1 = (3 * self.cols).div_ceil(4);
        let mut acc = 0.0;
        let mut count = 0;
        for r in r0..r1 {
            for c in c0..c1 {
                acc += self.data[r * self.cols + c];
                count += 1;
            }
        }
        acc / count as f64
    }
}

/// Published sampling ranges for the per-radiograph corruption parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionRanges {
    pub blur_sigma_px: (f64, f64),
    pub blur_orientation_deg: (f64, f64),
    pub scatter_sigma_px: (f64, f64),
    pub scatter_kappa: (f64, f64),
    pub background_level_rel: (f64, f64),
    pub background_tilt: (f64, f64),
    pub gamma_level: (f64, f64),
    pub photon_level: (f64, f64),
}

impl Default for CorruptionRanges {
    fn default() -> Self {
        CorruptionRanges {
            blur_sigma_px: (1.0, 3.0),
            blur_orientation_deg: (5.0, 26.0),
            scatter_sigma_px: (10.0, 30.0),
            scatter_kappa: (0.1, 0.3),
            background_level_rel: (0.5, 1.5),
            background_tilt: (-0.10, 0.10),
            gamma_level: (39_000.0, 50_000.0),
            photon_level: (350.0, 450.0),
        }
    }
}

/// Fixed model constants plus component toggles and the RNG seed.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionConfig {
    /// Reference source intensity.
    pub i0: f64,
    pub ranges: CorruptionRanges,
    /// Isotropic detector blur width (pixels).
    pub detector_blur_sigma_px: f64,
    /// Source blur minor axis as a fraction of the sampled major sigma.
    pub source_blur_aspect: f64,
    /// Noise coloring kernel widths (pixels); a non-positive sigma means a
    /// delta kernel.
    pub gamma_kernel_sigma_px: f64,
    pub photon_kernel_sigma_px: f64,
    /// Transmission floor, relative to I0, applied before the log.
    pub log_floor_rel: f64,
    pub blur_enabled: bool,
    pub scatter_enabled: bool,
    pub background_enabled: bool,
    pub noise_enabled: bool,
    pub seed: u64,
}

impl CorruptionConfig {
    pub fn full(seed: u64) -> Self {
        CorruptionConfig {
            i0: 3.201e-4,
            ranges: CorruptionRanges::default(),
            detector_blur_sigma_px: 1.0,
            source_blur_aspect: 0.5,
            gamma_kernel_sigma_px: 2.0,
            photon_kernel_sigma_px: 0.5,
            log_floor_rel: 1e-6,
            blur_enabled: true,
            scatter_enabled: true,
            background_enabled: true,
            noise_enabled: true,
            seed,
        }
    }

    /// All components toggled off: the post-log pipeline then reduces to the
    /// clean line integrals.
    pub fn disabled(seed: u64) -> Self {
        CorruptionConfig {
            blur_enabled: false,
            scatter_enabled: false,
            background_enabled: false,
            noise_enabled: false,
            ..CorruptionConfig::full(seed)
        }
    }
}

/// One radiograph's sampled corruption parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionParams {
    pub blur_sigma_px: f64,
    pub blur_orientation_deg: f64,
    pub scatter_sigma_px: f64,
    pub scatter_kappa: f64,
    pub background_level_rel: f64,
    pub background_tilt_x: f64,
    pub background_tilt_y: f64,
    pub gamma_level: f64,
    pub photon_level: f64,
    /// Scale factors applied to the convolved, mean-subtracted Poisson
    /// fields; the sampler sets them to 1/level.
    pub kappa_g: f64,
    pub kappa_p: f64,
}

/// Uniform draw within every published range; deterministic per seed.
pub fn sample_params(ranges: &CorruptionRanges, seed: u64) -> CorruptionParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_params_with_rng(ranges, &mut rng)
}

pub fn sample_params_with_rng(ranges: &CorruptionRanges, rng: &mut ChaCha8Rng) -> CorruptionParams {
    let mut draw = |(lo, hi): (f64, f64)| rng.gen_range(lo..hi);
    let gamma_level = draw(ranges.gamma_level);
    let photon_level = draw(ranges.photon_level);
    CorruptionParams {
        blur_sigma_px: draw(ranges.blur_sigma_px),
        blur_orientation_deg: draw(ranges.blur_orientation_deg),
        scatter_sigma_px: draw(ranges.scatter_sigma_px),
        scatter_kappa: draw(ranges.scatter_kappa),
        background_level_rel: draw(ranges.background_level_rel),
        background_tilt_x: draw(ranges.background_tilt),
        background_tilt_y: draw(ranges.background_tilt),
        gamma_level,
        photon_level,
        kappa_g: 1.0 / gamma_level,
        kappa_p: 1.0 / photon_level,
    }
}

/// Anisotropic source blur followed by the isotropic detector blur. Kernels
/// are unit sum with reflective boundaries, so flat fields pass through
/// unchanged and total flux is preserved for interior-supported content.
pub fn apply_blur(direct: &Image, params: &CorruptionParams, cfg: &CorruptionConfig) -> Result<Image> {
    let sigma_major = params.blur_sigma_px;
    let radius = (3.0 * sigma_major).ceil() as usize;
    if 2 * radius + 1 > direct.rows.min(direct.cols) {
        return Err(Error::InvalidArgument(format!(
            "source blur kernel ({}px) larger than the detector ({}x{})",
            2 * radius + 1,
            direct.rows,
            direct.cols
        )));
    }
    let (taps, k_rows, k_cols) = filters::gaussian2d_rotated(
        sigma_major,
        cfg.source_blur_aspect * sigma_major,
        params.blur_orientation_deg,
    );
    let blurred = filters::convolve2d_reflect(&direct.data, direct.rows, direct.cols, &taps, k_rows, k_cols);
    let det_taps = filters::gaussian_taps(cfg.detector_blur_sigma_px);
    let out = filters::convolve_separable_reflect(&blurred, direct.rows, direct.cols, &det_taps);
    Ok(Image {
        rows: direct.rows,
        cols: direct.cols,
        data: out,
    })
}

/// Correlated scatter: the (blurred) direct signal convolved with a wide
/// isotropic Gaussian and scaled by kappa. The kernel may exceed the
/// detector size; reflective folding handles the overhang.
pub fn apply_scatter(blurred: &Image, params: &CorruptionParams) -> Image {
    let taps = filters::gaussian_taps(params.scatter_sigma_px);
    let mut data = filters::convolve_separable_reflect(&blurred.data, blurred.rows, blurred.cols, &taps);
    for v in data.iter_mut() {
        *v *= params.scatter_kappa;
    }
    Image {
        rows: blurred.rows,
        cols: blurred.cols,
        data,
    }
}

/// Separable polynomial background field: `sum_i a_i x^i + b_i y^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundPoly {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl BackgroundPoly {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut acc = 0.0;
        let mut xp = 1.0;
        for &c in &self.a {
            acc += c * xp;
            xp *= x;
        }
        let mut yp = 1.0;
        for &c in &self.b {
            acc += c * yp;
            yp *= y;
        }
        acc
    }

    /// Order-1 field whose value at the image center is
    /// `level_rel * center_mean` with the given relative tilts.
    pub fn from_level_and_tilt(params: &CorruptionParams, center_mean: f64) -> Self {
        let level = params.background_level_rel * center_mean;
        BackgroundPoly {
            a: vec![level, level * params.background_tilt_x],
            b: vec![0.0, level * params.background_tilt_y],
        }
    }
}

/// Evaluates a background polynomial over the detector on normalized
/// coordinates x, y in [-1, 1] (pixel index 0 maps to -1, the last to +1).
pub fn background_field(poly: &BackgroundPoly, rows: usize, cols: usize) -> Image {
    let coord = |i: usize, n: usize| -> f64 {
        if n <= 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (n - 1) as f64
        }
    };
    let mut img = Image::zeros(rows, cols);
    for r in 0..rows {
        let y = coord(r, rows);
        for c in 0..cols {
            let x = coord(c, cols);
            img.data[r * cols + c] = poly.eval(x, y);
        }
    }
    img
}

/// Colored gamma + photon Poisson noise. Per-pixel means are
/// `level * signal / mean(signal)`; draws are mean-subtracted, convolved
/// with their coloring kernel, scaled by kappa, and mapped back to signal
/// units through the spatial mean.
pub fn colored_noise(
    total_signal: &Image,
    params: &CorruptionParams,
    cfg: &CorruptionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Image> {
    if total_signal.data.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument(
            "colored noise requires a nonnegative total signal".into(),
        ));
    }
    let mean = total_signal.mean();
    let mut out = Image::zeros(total_signal.rows, total_signal.cols);
    if mean == 0.0 {
        return Ok(out);
    }
    // Gamma component first, photon second; the draw order is part of the
    // deterministic contract.
    for (level, kappa, kernel_sigma) in [
        (params.gamma_level, params.kappa_g, cfg.gamma_kernel_sigma_px),
        (params.photon_level, params.kappa_p, cfg.photon_kernel_sigma_px),
    ] {
        let field = poisson_fluctuation(total_signal, mean, level, rng)?;
        let colored = if kernel_sigma > 0.0 {
            let taps = filters::gaussian_taps(kernel_sigma);
            filters::convolve_separable_reflect(&field, total_signal.rows, total_signal.cols, &taps)
        } else {
            field
        };
        for (dst, src) in out.data.iter_mut().zip(colored) {
            *dst += mean * kappa * src;
        }
    }
    Ok(out)
}

/// Mean-subtracted Poisson draws with per-pixel mean
/// `level * signal / mean(signal)`, in count units.
fn poisson_fluctuation(
    signal: &Image,
    mean: f64,
    level: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let mut field = Vec::with_capacity(signal.data.len());
    for &s in &signal.data {
        let lambda = level * s / mean;
        if !lambda.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite Poisson mean from level {level} and signal {s}"
            )));
        }
        let draw = if lambda > 0.0 {
            let poisson = Poisson::new(lambda).map_err(|e| {
                Error::Numerical(format!("invalid Poisson mean {lambda}: {e:?}"))
            })?;
            poisson.sample(rng)
        } else {
            0.0
        };
        field.push(draw - lambda);
    }
    Ok(field)
}

/// Full non-ideal post-log pipeline. Parameters are sampled independently
/// per view from streams derived from `(cfg.seed, view)`, so views may be
/// processed in parallel with deterministic output. Returns the stack and
/// the per-view parameters for the run manifest.
pub fn corrupt_post_log(
    vol: &Volume,
    geom: &ScanGeometry,
    cfg: &CorruptionConfig,
) -> Result<(ProjectionStack, Vec<CorruptionParams>)> {
    if cfg.i0 <= 0.0 {
        return Err(Error::InvalidArgument("reference intensity must be positive".into()));
    }
    let clean = forward_project(vol, geom)?;
    let rows = geom.detector_rows;
    let cols = geom.detector_cols;
    let floor = cfg.log_floor_rel * cfg.i0;

    let per_view: Vec<(Vec<f32>, CorruptionParams)> = (0..geom.n_views)
        .into_par_iter()
        .map(|view| -> Result<(Vec<f32>, CorruptionParams)> {
            let mut rng = ChaCha8Rng::seed_from_u64(view_seed(cfg.seed, view));
            let params = sample_params_with_rng(&cfg.ranges, &mut rng);
            // Direct transmission D = I0 * exp(-Ax).
            let mut direct = Image::zeros(rows, cols);
            for (dst, &a) in direct.data.iter_mut().zip(clean.view(view)) {
                *dst = cfg.i0 * (-(a as f64)).exp();
            }
            let blurred = if cfg.blur_enabled {
                apply_blur(&direct, &params, cfg)?
            } else {
                direct
            };
            let mut total = blurred.clone();
            if cfg.scatter_enabled {
                let scatter = apply_scatter(&blurred, &params);
                for (dst, src) in total.data.iter_mut().zip(scatter.data) {
                    *dst += src;
                }
            }
            if cfg.background_enabled {
                let poly = BackgroundPoly::from_level_and_tilt(&params, blurred.center_mean());
                let bg = background_field(&poly, rows, cols);
                for (dst, src) in total.data.iter_mut().zip(bg.data) {
                    *dst += src;
                }
            }
            if cfg.noise_enabled {
                let eta = colored_noise(&total, &params, cfg, &mut rng)?;
                for (dst, src) in total.data.iter_mut().zip(eta.data) {
                    *dst += src;
                }
            }
            let mut out = Vec::with_capacity(rows * cols);
            for &t in &total.data {
                let clamped = t.max(floor);
                let y = -(clamped / cfg.i0).ln();
                if !y.is_finite() {
                    return Err(Error::Numerical(format!(
                        "post-log produced a non-finite value from transmission {t}"
                    )));
                }
                out.push(y as f32);
            }
            Ok((out, params))
        })
        .collect::<Result<_>>()?;

    let mut stack = ProjectionStack::zeros(geom, StackKind::PostLog);
    let mut all_params = Vec::with_capacity(geom.n_views);
    for (view, (img, params)) in per_view.into_iter().enumerate() {
        stack.view_mut(view).copy_from_slice(&img);
        all_params.push(params);
    }
    Ok((stack, all_params))
}

fn view_seed(seed: u64, view: usize) -> u64 {
    splitmix64(seed ^ splitmix64(view as u64 + 1))
}

/// AWGN corruption settings.
#[derive(Debug, Clone, PartialEq)]
pub struct AwgnParams {
    pub target_input_snr_db: f64,
    pub seed: u64,
}

impl Default for AwgnParams {
    fn default() -> Self {
        AwgnParams {
            target_input_snr_db: 40.0,
            seed: 0,
        }
    }
}

/// `y = A x + e` with Gaussian noise scaled per stack so the measured input
/// SNR equals the target exactly (up to float rounding).
pub fn corrupt_awgn(vol: &Volume, geom: &ScanGeometry, params: &AwgnParams) -> Result<ProjectionStack> {
    let clean = forward_project(vol, geom)?;
    let signal_norm = clean
        .data
        .iter()
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if signal_norm == 0.0 {
        return Err(Error::InvalidArgument(
            "AWGN SNR is undefined for a zero-energy clean signal".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let raw: Vec<f64> = (0..clean.data.len())
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    let raw_norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let target_norm = signal_norm * 10f64.powf(-params.target_input_snr_db / 20.0);
    let scale = target_norm / raw_norm;
    let mut stack = clean;
    stack.kind = StackKind::PostLog;
    for (dst, e) in stack.data.iter_mut().zip(raw) {
        *dst = (*dst as f64 + scale * e) as f32;
    }
    Ok(stack)
}

/// Measured input SNR of a corrupted stack against its clean counterpart.
pub fn measured_input_snr_db(clean: &ProjectionStack, noisy: &ProjectionStack) -> Result<f64> {
    if clean.data.len() != noisy.data.len() {
        return Err(Error::shape_mismatch(
            "snr stacks",
            &clean.data.len(),
            &noisy.data.len(),
        ));
    }
    let mut sig = 0.0_f64;
    let mut err = 0.0_f64;
    for (&c, &n) in clean.data.iter().zip(&noisy.data) {
        sig += (c as f64) * (c as f64);
        let d = n as f64 - c as f64;
        err += d * d;
    }
    if sig == 0.0 || err == 0.0 {
        return Err(Error::InvalidArgument("degenerate SNR measurement".into()));
    }
    Ok(10.0 * (sig / err).log10())
}
