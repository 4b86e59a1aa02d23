//! Classical reconstruction baselines: FBP wrapping (via geometry), TV
//! regularized least squares, the automated regularization-weight search,
//! and evaluation metrics.

mod metrics;

pub use metrics::{slicewise_stats, snr_db, ssim, ssim_image, SliceMetrics, SummaryStats, SNR_CAP_DB};

use crate::error::{Error, Result};
use crate::geometry::{
    back_project_views_f64, fdk_reconstruct, project_views_f64, ProjectionStack, ScanGeometry,
    StackKind, Volume, DEFAULT_STEP_FRAC,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Configuration for the TV solver and its regularization-weight search.
#[derive(Debug, Clone)]
pub struct TvConfig {
    /// Regularization weight; 0 reduces the solver to plain least squares.
    pub tau: f64,
    pub max_iters: usize,
    /// Relative objective decrease below which iteration stops.
    pub tolerance: f64,
    /// Regularization-weight search bracket.
    pub tau_low: f64,
    pub tau_high: f64,
    /// Dynamic range of the volume; sets the Huber smoothing width
    /// (1e-3 * data_range).
    pub data_range: f64,
    /// FBP Hann cutoff used for the initial iterate.
    pub init_hann_cutoff: f64,
}

impl Default for TvConfig {
    fn default() -> Self {
        TvConfig {
            tau: 0.0,
            max_iters: 60,
            tolerance: 1e-7,
            tau_low: 1e-4,
            tau_high: 1.0,
            data_range: 2.0,
            init_hann_cutoff: 0.3,
        }
    }
}

impl TvConfig {
    fn validate(&self) -> Result<()> {
        if self.tau < 0.0 {
            return Err(Error::InvalidArgument("tau must be >= 0".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        Ok(())
    }

    /// Scales the search bracket to `[1e-4, 1] * ||A^T y||_inf`, which spans
    /// under- to over-regularization across desk-scale noise levels.
    pub fn with_auto_bounds(
        mut self,
        stack: &ProjectionStack,
        geom: &ScanGeometry,
        vol_like: &Volume,
    ) -> Result<Self> {
        let views: Vec<Vec<f64>> = (0..stack.n_views)
            .map(|v| stack.view(v).iter().map(|&p| p as f64).collect())
            .collect();
        let aty = back_project_views_f64(&views, vol_like, geom, DEFAULT_STEP_FRAC);
        let scale = aty.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
        if scale <= 0.0 {
            return Err(Error::InvalidArgument(
                "cannot scale tau bounds from a zero back projection".into(),
            ));
        }
        self.tau_low = 1e-4 * scale;
        self.tau_high = scale;
        Ok(self)
    }
}

/// Huber value: t^2 / (2 eps) inside the smoothing width, |t| - eps/2 beyond.
#[inline]
fn huber(t: f64, eps: f64) -> f64 {
    if t.abs() <= eps {
        t * t / (2.0 * eps)
    } else {
        t.abs() - eps / 2.0
    }
}

/// Huber derivative: clamp(t / eps, -1, 1).
#[inline]
fn huber_grad(t: f64, eps: f64) -> f64 {
    (t / eps).clamp(-1.0, 1.0)
}

/// Anisotropic Huber-smoothed TV over forward differences along x, y, z.
fn tv_value(values: &[f64], vol: &Volume, eps: f64) -> f64 {
    let (nx, ny, nz) = (vol.nx, vol.ny, vol.nz);
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let mut acc = 0.0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let v = values[idx(x, y, z)];
                if x + 1 < nx {
                    acc += huber(values[idx(x + 1, y, z)] - v, eps);
                }
                if y + 1 < ny {
                    acc += huber(values[idx(x, y + 1, z)] - v, eps);
                }
                if z + 1 < nz {
                    acc += huber(values[idx(x, y, z + 1)] - v, eps);
                }
            }
        }
    }
    acc
}

/// Gradient of [`tv_value`] accumulated into `grad` (scaled by `weight`).
fn tv_grad(values: &[f64], vol: &Volume, eps: f64, weight: f64, grad: &mut [f64]) {
    let (nx, ny, nz) = (vol.nx, vol.ny, vol.nz);
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = idx(x, y, z);
                let v = values[i];
                if x + 1 < nx {
                    let j = idx(x + 1, y, z);
                    let g = weight * huber_grad(values[j] - v, eps);
                    grad[j] += g;
                    grad[i] -= g;
                }
                if y + 1 < ny {
                    let j = idx(x, y + 1, z);
                    let g = weight * huber_grad(values[j] - v, eps);
                    grad[j] += g;
                    grad[i] -= g;
                }
                if z + 1 < nz {
                    let j = idx(x, y, z + 1);
                    let g = weight * huber_grad(values[j] - v, eps);
                    grad[j] += g;
                    grad[i] -= g;
                }
            }
        }
    }
}

/// Largest eigenvalue of A^T A estimated with 20 power iterations from a
/// fixed seeded start, used as the Lipschitz constant of the data term.
fn estimate_lipschitz(vol_like: &Volume, geom: &ScanGeometry) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x51E9);
    let mut v: Vec<f64> = (0..vol_like.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut lambda = 1.0;
    for _ in 0..20 {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        let proj = project_views_f64(&v, vol_like, geom, DEFAULT_STEP_FRAC);
        let next = back_project_views_f64(&proj, vol_like, geom, DEFAULT_STEP_FRAC);
        lambda = next.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        v = next;
    }
    lambda.max(1e-12)
}

/// Result of a TV solve, including the objective trace over accepted
/// iterations (index 0 is the objective at the FBP initialization).
#[derive(Debug, Clone)]
pub struct TvSolution {
    pub volume: Volume,
    pub objective_trace: Vec<f64>,
    pub data_term_trace: Vec<f64>,
}

/// Minimizes `0.5 ||y - A x||^2 + tau * TV_eps(x)` by monotone proximal
/// gradient descent on the Huber-smoothed objective, with backtracking line
/// search from a 1/L step. Initialized at the FBP reconstruction.
pub fn tv_reconstruct(
    stack: &ProjectionStack,
    geom: &ScanGeometry,
    vol_like: &Volume,
    cfg: &TvConfig,
) -> Result<TvSolution> {
    cfg.validate()?;
    if stack.kind == StackKind::Transmission {
        return Err(Error::InvalidArgument(
            "TV expects line-integral or post-log data".into(),
        ));
    }
    if !stack.matches_geometry(geom) {
        return Err(Error::shape_mismatch(
            "projection stack vs geometry",
            &(stack.n_views, stack.rows, stack.cols),
            &(geom.n_views, geom.detector_rows, geom.detector_cols),
        ));
    }
    let eps = 1e-3 * cfg.data_range;
    let y: Vec<Vec<f64>> = (0..stack.n_views)
        .map(|v| stack.view(v).iter().map(|&p| p as f64).collect())
        .collect();

    let init = fdk_reconstruct(stack, geom, vol_like, cfg.init_hann_cutoff)?;
    let mut x: Vec<f64> = init.values.iter().map(|&v| v as f64).collect();

    let lipschitz = estimate_lipschitz(vol_like, geom);
    let mut step = 1.0 / lipschitz;

    let objective = |x: &[f64]| -> (f64, f64) {
        let ax = project_views_f64(x, vol_like, geom, DEFAULT_STEP_FRAC);
        let mut data = 0.0;
        for (av, yv) in ax.iter().zip(&y) {
            for (a, b) in av.iter().zip(yv) {
                let d = a - b;
                data += d * d;
            }
        }
        data *= 0.5;
        let reg = if cfg.tau > 0.0 {
            cfg.tau * tv_value(x, vol_like, eps)
        } else {
            0.0
        };
        (data + reg, data)
    };

    let (mut f_cur, mut data_cur) = objective(&x);
    if !f_cur.is_finite() {
        return Err(Error::Numerical(format!(
            "TV objective is not finite at the FBP initialization ({f_cur})"
        )));
    }
    let mut trace = vec![f_cur];
    let mut data_trace = vec![data_cur];
    let mut consecutive_failures = 0usize;

    for iter in 0..cfg.max_iters {
        // Gradient: A^T (A x - y) + tau * dTV.
        let ax = project_views_f64(&x, vol_like, geom, DEFAULT_STEP_FRAC);
        let residual: Vec<Vec<f64>> = ax
            .iter()
            .zip(&y)
            .map(|(av, yv)| av.iter().zip(yv).map(|(a, b)| a - b).collect())
            .collect();
        let mut grad = back_project_views_f64(&residual, vol_like, geom, DEFAULT_STEP_FRAC);
        if cfg.tau > 0.0 {
            tv_grad(&x, vol_like, eps, cfg.tau, &mut grad);
        }

        let mut accepted = false;
        let mut trial_step = step;
        for _ in 0..30 {
            let x_new: Vec<f64> = x
                .iter()
                .zip(&grad)
                .map(|(v, g)| v - trial_step * g)
                .collect();
            let (f_new, data_new) = objective(&x_new);
            if f_new.is_finite() && f_new <= f_cur {
                x = x_new;
                f_cur = f_new;
                data_cur = data_new;
                step = trial_step;
                accepted = true;
                break;
            }
            trial_step *= 0.5;
        }

        if accepted {
            consecutive_failures = 0;
            trace.push(f_cur);
            data_trace.push(data_cur);
            let prev = trace[trace.len() - 2];
            if prev - f_cur <= cfg.tolerance * prev.abs().max(1e-30) {
                break;
            }
        } else {
            consecutive_failures += 1;
            if consecutive_failures >= 5 {
                return Err(Error::Numerical(format!(
                    "TV solve diverged at iteration {iter}: objective {f_cur} \
                     could not be decreased after repeated backtracking"
                )));
            }
        }
    }

    let mut volume = Volume::zeros(vol_like.nx, vol_like.ny, vol_like.nz, vol_like.voxel_mm);
    for (dst, src) in volume.values.iter_mut().zip(&x) {
        *dst = *src as f32;
    }
    Ok(TvSolution {
        volume,
        objective_trace: trace,
        data_term_trace: data_trace,
    })
}

/// Golden-section maximization of `f` over `[a, b]`, spending at most
/// `max_evals` function evaluations (the endpoints are included in the
/// budget, so the result is never worse than either endpoint). Returns the
/// best evaluated point.
pub fn golden_section_max(
    f: &mut dyn FnMut(f64) -> f64,
    a: f64,
    b: f64,
    max_evals: usize,
) -> (f64, f64) {
    assert!(b >= a, "invalid bracket");
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut best = (a, f(a));
    let mut evals = 1;
    if evals < max_evals {
        let fb = f(b);
        evals += 1;
        if fb > best.1 {
            best = (b, fb);
        }
    }
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = if evals < max_evals {
        evals += 1;
        f(x1)
    } else {
        return best;
    };
    if f1 > best.1 {
        best = (x1, f1);
    }
    let mut f2 = if evals < max_evals {
        evals += 1;
        f(x2)
    } else {
        return best;
    };
    if f2 > best.1 {
        best = (x2, f2);
    }
    while evals < max_evals {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
            evals += 1;
            if f1 > best.1 {
                best = (x1, f1);
            }
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
            evals += 1;
            if f2 > best.1 {
                best = (x2, f2);
            }
        }
    }
    best
}

/// Number of TV solves spent by [`search_tau`].
pub const TAU_SEARCH_EVALS: usize = 20;

/// Oracle-tuned regularization weight: maximizes SNR against the reference
/// volume over `tau in [tau_low, tau_high]` with a golden-section search on
/// `log10(tau)` (at most [`TAU_SEARCH_EVALS`] TV solves). Returns the best
/// weight and its reconstruction.
pub fn search_tau(
    stack: &ProjectionStack,
    geom: &ScanGeometry,
    reference: &Volume,
    cfg: &TvConfig,
) -> Result<(f64, Volume)> {
    if !(cfg.tau_low > 0.0 && cfg.tau_low < cfg.tau_high) {
        return Err(Error::InvalidArgument(format!(
            "invalid tau bracket [{}, {}]",
            cfg.tau_low, cfg.tau_high
        )));
    }
    let mut best_volume: Option<(f64, Volume)> = None;
    let mut error: Option<Error> = None;
    {
        let mut eval = |log_tau: f64| -> f64 {
            if error.is_some() {
                return f64::NEG_INFINITY;
            }
            let mut local = cfg.clone();
            local.tau = 10f64.powf(log_tau);
            match tv_reconstruct(stack, geom, reference, &local) {
                Ok(sol) => {
                    let snr = snr_db(reference, &sol.volume).unwrap_or(f64::NEG_INFINITY);
                    if best_volume.as_ref().map_or(true, |(s, _)| snr > *s) {
                        best_volume = Some((snr, sol.volume));
                    }
                    snr
                }
                Err(e) => {
                    error = Some(e);
                    f64::NEG_INFINITY
                }
            }
        };
        let (lo, hi) = (cfg.tau_low.log10(), cfg.tau_high.log10());
        let (best_log_tau, _) = golden_section_max(&mut eval, lo, hi, TAU_SEARCH_EVALS);
        if let Some(e) = error {
            return Err(e);
        }
        let (_, volume) = best_volume.expect("at least one evaluation succeeded");
        Ok((10f64.powf(best_log_tau), volume))
    }
}
