//! Procedural double-shell phantoms: a gas-filled cavity inside a metal
//! shell whose interior surface carries azimuthal cosine-mode perturbations,
//! surrounded by vacuum.
//!
//! Region values are mass attenuation times density, globally normalized so
//! the densest material maps to 2.0 (display range [0, 2]). Boundaries are
//! anti-aliased with 2x per-axis supersampled occupancy fractions.

use crate::error::{Error, Result};
use crate::geometry::Volume;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One azimuthal cosine mode on the shell interior radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationMode {
    /// Angular mode number: the number of lobes on an equatorial slice.
    pub mode: u32,
    /// Amplitude as a fraction of the interior radius.
    pub amplitude_frac: f64,
    /// Phase offset added to the per-phantom random phase.
    pub phase_rad: f64,
}

/// Construction recipe for one phantom.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    /// Cubic grid extent.
    pub n: usize,
    pub voxel_mm: f64,
    /// Mass attenuation coefficients (cm^2/g).
    pub gas_mass_atten: f64,
    pub metal_mass_atten: f64,
    /// Region densities (g/cm^3) applied before normalization.
    pub gas_density: f64,
    pub metal_density: f64,
    /// Shell radii as fractions of the half-extent `n * voxel_mm / 2`.
    pub inner_radius_frac: f64,
    pub outer_radius_frac: f64,
    /// Interior-surface perturbation modes. The per-mode phase is drawn from
    /// `rng_seed` and shifted by each mode's `phase_rad`, so phantoms with
    /// nonzero amplitudes differ across seeds.
    pub perturbation: Vec<PerturbationMode>,
    pub rng_seed: u64,
}

impl PhantomSpec {
    /// Desk-scale default: 32^3 grid of 0.05 mm voxels, gas cavity at 30% and
    /// shell exterior at 42% of the half-extent, one mode-4 perturbation.
    pub fn desk_default(rng_seed: u64) -> Self {
        PhantomSpec {
            n: 32,
            voxel_mm: 0.05,
            gas_mass_atten: 9.40,
            metal_mass_atten: 13.03,
            gas_density: 0.1,
            metal_density: 1.0,
            inner_radius_frac: 0.30,
            outer_radius_frac: 0.42,
            perturbation: vec![PerturbationMode {
                mode: 4,
                amplitude_frac: 0.12,
                phase_rad: 0.0,
            }],
            rng_seed,
        }
    }

    /// Raw (pre-normalization) gas region value: mass attenuation * density.
    pub fn gas_value_raw(&self) -> f64 {
        self.gas_mass_atten * self.gas_density
    }

    /// Raw (pre-normalization) metal region value.
    pub fn metal_value_raw(&self) -> f64 {
        self.metal_mass_atten * self.metal_density
    }

    /// Scale mapping raw region values into the [0, 2] display range.
    pub fn normalization_scale(&self) -> f64 {
        2.0 / self.gas_value_raw().max(self.metal_value_raw())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument("phantom grid must be at least 2^3".into()));
        }
        if self.voxel_mm <= 0.0 {
            return Err(Error::InvalidArgument("voxel pitch must be positive".into()));
        }
        if !(0.0 < self.inner_radius_frac
            && self.inner_radius_frac < self.outer_radius_frac
            && self.outer_radius_frac < 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "need 0 < inner radius ({}) < outer radius ({}) < half-extent",
                self.inner_radius_frac, self.outer_radius_frac
            )));
        }
        let total_amp: f64 = self.perturbation.iter().map(|m| m.amplitude_frac.abs()).sum();
        if self.inner_radius_frac * (1.0 + total_amp) >= self.outer_radius_frac {
            return Err(Error::InvalidArgument(format!(
                "perturbed interior radius ({} * (1 + {})) would cross the exterior surface ({})",
                self.inner_radius_frac, total_amp, self.outer_radius_frac
            )));
        }
        if total_amp >= 1.0 {
            return Err(Error::InvalidArgument(
                "perturbation amplitudes must sum below 1".into(),
            ));
        }
        if self.gas_value_raw() <= 0.0 || self.metal_value_raw() <= 0.0 {
            return Err(Error::InvalidArgument(
                "region values must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-phantom RNG stream derived from a base seed and a phantom index.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates one phantom volume. Deterministic given the spec (the per-mode
/// phases come from `spec.rng_seed`).
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Volume> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let phases: Vec<f64> = spec
        .perturbation
        .iter()
        .map(|m| rng.gen_range(0.0..std::f64::consts::TAU) + m.phase_rad)
        .collect();

    let half_extent = spec.n as f64 * spec.voxel_mm / 2.0;
    let inner = spec.inner_radius_frac * half_extent;
    let outer = spec.outer_radius_frac * half_extent;
    let gas_raw = spec.gas_value_raw();
    let metal_raw = spec.metal_value_raw();
    let scale = spec.normalization_scale();

    let interior_radius = |theta: f64| -> f64 {
        let mut r = 1.0;
        for (mode, phase) in spec.perturbation.iter().zip(&phases) {
            r += mode.amplitude_frac * (mode.mode as f64 * theta + phase).cos();
        }
        inner * r
    };

    let mut vol = Volume::zeros(spec.n, spec.n, spec.n, spec.voxel_mm);
    let center = spec.n as f64 / 2.0;
    // 2x supersampling per axis: symmetric sub-voxel offsets.
    const SUB: [f64; 2] = [-0.25, 0.25];
    for z in 0..spec.n {
        for y in 0..spec.n {
            for x in 0..spec.n {
                let mut acc = 0.0;
                for sz in SUB {
                    for sy in SUB {
                        for sx in SUB {
                            let px = (x as f64 + 0.5 + sx - center) * spec.voxel_mm;
                            let py = (y as f64 + 0.5 + sy - center) * spec.voxel_mm;
                            let pz = (z as f64 + 0.5 + sz - center) * spec.voxel_mm;
                            let r = (px * px + py * py + pz * pz).sqrt();
                            if r > outer {
                                continue;
                            }
                            let r_in = if spec.perturbation.is_empty() {
                                inner
                            } else {
                                interior_radius(py.atan2(px))
                            };
                            acc += if r <= r_in { gas_raw } else { metal_raw };
                        }
                    }
                }
                let idx = vol.index(x, y, z);
                vol.values[idx] = (acc / 8.0 * scale) as f32;
            }
        }
    }
    Ok(vol)
}

/// Derives a randomized per-phantom spec: per-mode amplitudes are jittered
/// within [0.3, 1.0] of the base amplitude and phases are re-drawn through
/// the derived seed.
pub fn randomized_spec(base: &PhantomSpec, index: u64) -> PhantomSpec {
    let seed = derive_seed(base.rng_seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
    let mut spec = base.clone();
    spec.rng_seed = seed;
    for mode in spec.perturbation.iter_mut() {
        mode.amplitude_frac *= rng.gen_range(0.3..1.0);
    }
    spec
}

/// Generates `count` phantoms and splits them into train/val/test lists.
/// Split sizes are `round(fraction * count)` (the last split takes the
/// remainder); membership is deterministic given the base seed.
pub fn generate_dataset(
    count: usize,
    base_spec: &PhantomSpec,
    split: (f64, f64, f64),
) -> Result<(Vec<Volume>, Vec<Volume>, Vec<Volume>)> {
    let (f_train, f_val, f_test) = split;
    if (f_train + f_val + f_test - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must sum to 1, got {}",
            f_train + f_val + f_test
        )));
    }
    if count < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 phantoms to populate 3 splits, got {count}"
        )));
    }
    let n_train = (f_train * count as f64).round() as usize;
    let n_val = (f_val * count as f64).round() as usize;
    let n_test = count.saturating_sub(n_train + n_val);
    if n_train == 0 || n_val == 0 || n_test == 0 || n_train + n_val > count {
        return Err(Error::InvalidArgument(format!(
            "count {count} is too small for split sizes ({n_train}, {n_val}, {n_test})"
        )));
    }

    use rayon::prelude::*;
    let volumes: Vec<Volume> = (0..count)
        .into_par_iter()
        .map(|i| generate_phantom(&randomized_spec(base_spec, i as u64)))
        .collect::<Result<_>>()?;

    let mut iter = volumes.into_iter();
    let train: Vec<Volume> = iter.by_ref().take(n_train).collect();
    let val: Vec<Volume> = iter.by_ref().take(n_val).collect();
    let test: Vec<Volume> = iter.collect();
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unperturbed_spec(seed: u64) -> PhantomSpec {
        let mut spec = PhantomSpec::desk_default(seed);
        spec.perturbation.clear();
        spec
    }

    #[test]
    fn zero_perturbation_is_reflection_symmetric() {
        let vol = generate_phantom(&unperturbed_spec(5)).unwrap();
        let n = vol.nx;
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let v = vol.at(x, y, z);
                    // The 8 axis-aligned reflections about the center share
                    // the same radius, hence the same value, bit for bit.
                    for (mx, my, mz) in [
                        (n - 1 - x, y, z),
                        (x, n - 1 - y, z),
                        (x, y, n - 1 - z),
                        (n - 1 - x, n - 1 - y, n - 1 - z),
                    ] {
                        assert_eq!(v, vol.at(mx, my, mz), "asymmetry at ({x},{y},{z})");
                    }
                }
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical_and_seeds_differ() {
        let spec = PhantomSpec::desk_default(42);
        let a = generate_phantom(&spec).unwrap();
        let b = generate_phantom(&spec).unwrap();
        assert_eq!(a, b);
        let other = generate_phantom(&PhantomSpec::desk_default(43)).unwrap();
        assert_ne!(a, other, "different seeds with nonzero amplitudes must differ");
    }

    #[test]
    fn region_values_match_coefficients() {
        let spec = unperturbed_spec(1);
        // Pre-normalization values are mass attenuation times density.
        assert!((spec.metal_value_raw() - 13.03 * spec.metal_density).abs() < 1e-12);
        assert!((spec.gas_value_raw() - 9.40 * spec.gas_density).abs() < 1e-12);

        let vol = generate_phantom(&spec).unwrap();
        let scale = spec.normalization_scale();
        // A voxel at radius midway between the shell radii is pure metal.
        let half_extent = spec.n as f64 * spec.voxel_mm / 2.0;
        let mid_r = 0.5 * (spec.inner_radius_frac + spec.outer_radius_frac) * half_extent;
        let x = (spec.n as f64 / 2.0 + mid_r / spec.voxel_mm - 0.5).round() as usize;
        let got = vol.at(x, spec.n / 2, spec.n / 2) as f64;
        let expect = spec.metal_value_raw() * scale;
        assert!(
            (got - expect).abs() < 1e-5,
            "mid-shell voxel {got} vs normalized metal {expect}"
        );
        // A central voxel is pure gas.
        let got_gas = vol.at(spec.n / 2, spec.n / 2, spec.n / 2) as f64;
        let expect_gas = spec.gas_value_raw() * scale;
        assert!(
            (got_gas - expect_gas).abs() < 1e-5,
            "central voxel {got_gas} vs normalized gas {expect_gas}"
        );
    }

    #[test]
    fn values_bounded_and_ordered() {
        let vol = generate_phantom(&PhantomSpec::desk_default(7)).unwrap();
        let spec = PhantomSpec::desk_default(7);
        let scale = spec.normalization_scale();
        let gas = (spec.gas_value_raw() * scale) as f32;
        let metal = (spec.metal_value_raw() * scale) as f32;
        assert!(metal > gas && gas > 0.0);
        for &v in &vol.values {
            assert!((0.0..=2.0 + 1e-6).contains(&v), "value {v} out of range");
        }
        assert!(vol.values.iter().any(|&v| v == 0.0), "vacuum missing");
        assert!(
            vol.values.iter().any(|&v| (v - metal).abs() < 1e-6),
            "metal missing"
        );
        assert!(
            vol.values.iter().any(|&v| (v - gas).abs() < 1e-6),
            "gas missing"
        );
    }

    /// A mode-l perturbation makes exactly l lobes on the equatorial slice:
    /// the interior-radius deviation crosses zero 2l times.
    #[test]
    fn mode_count_matches_equatorial_lobes() {
        let mut spec = PhantomSpec::desk_default(11);
        spec.n = 48;
        spec.perturbation = vec![PerturbationMode {
            mode: 5,
            amplitude_frac: 0.10,
            phase_rad: 0.0,
        }];
        let vol = generate_phantom(&spec).unwrap();
        let scale = spec.normalization_scale();
        let gas = spec.gas_value_raw() * scale;
        let metal = spec.metal_value_raw() * scale;
        let threshold = 0.5 * (gas + metal);

        // Interior radius per azimuth, sampled on the (averaged) equatorial
        // plane with sub-voxel crossing interpolation.
        let samples = 720;
        let center = spec.n as f64 / 2.0;
        let z_lo = spec.n / 2 - 1;
        let z_hi = spec.n / 2;
        let value_at = |px: f64, py: f64| -> f64 {
            // Bilinear on the two central slices, averaged.
            let fx = px + center - 0.5;
            let fy = py + center - 0.5;
            let x0 = fx.floor() as isize;
            let y0 = fy.floor() as isize;
            let wx = fx - x0 as f64;
            let wy = fy - y0 as f64;
            let mut acc = 0.0;
            for z in [z_lo, z_hi] {
                for (dy, wy_) in [(0isize, 1.0 - wy), (1, wy)] {
                    for (dx, wx_) in [(0isize, 1.0 - wx), (1, wx)] {
                        let xi = (x0 + dx).clamp(0, spec.n as isize - 1) as usize;
                        let yi = (y0 + dy).clamp(0, spec.n as isize - 1) as usize;
                        acc += 0.5 * wy_ * wx_ * vol.at(xi, yi, z) as f64;
                    }
                }
            }
            acc
        };
        let mut radii = Vec::with_capacity(samples);
        for k in 0..samples {
            let theta = std::f64::consts::TAU * k as f64 / samples as f64;
            let (sin_t, cos_t) = theta.sin_cos();
            // Walk outward in quarter-voxel steps and find the gas-to-metal
            // crossing.
            let mut prev_r = 0.0;
            let mut prev_v = value_at(0.0, 0.0);
            let mut crossing = None;
            let mut r = 0.25;
            while r < spec.n as f64 / 2.0 {
                let v = value_at(r * cos_t, r * sin_t);
                if prev_v < threshold && v >= threshold {
                    let frac = (threshold - prev_v) / (v - prev_v);
                    crossing = Some(prev_r + frac * (r - prev_r));
                    break;
                }
                prev_r = r;
                prev_v = v;
                r += 0.25;
            }
            radii.push(crossing.expect("interior boundary not found"));
        }
        let mean = radii.iter().sum::<f64>() / samples as f64;
        let deviation: Vec<f64> = radii.iter().map(|r| r - mean).collect();
        let amp = deviation.iter().fold(0.0_f64, |m, &d| m.max(d.abs()));
        // Hysteresis crossing count: transitions between +/- bands.
        let band = 0.3 * amp;
        let mut crossings = 0;
        let mut state = 0i8;
        for k in 0..=samples {
            let d = deviation[k % samples];
            let s = if d > band {
                1
            } else if d < -band {
                -1
            } else {
                0
            };
            if s != 0 {
                if state != 0 && s != state {
                    crossings += 1;
                }
                state = s;
            }
        }
        assert_eq!(crossings, 2 * 5, "expected 10 band transitions for mode 5");
    }

    #[test]
    fn dataset_split_sizes() {
        let mut base = PhantomSpec::desk_default(3);
        base.n = 8; // keep the large split test fast
        // 126 phantoms at fractions 90/126, 18/126, 18/126 reproduce the
        // reference 90/18/18 split sizes.
        let (train, val, test) =
            generate_dataset(126, &base, (90.0 / 126.0, 18.0 / 126.0, 18.0 / 126.0)).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (90, 18, 18));

        let (train, val, test) = generate_dataset(10, &base, (0.8, 0.1, 0.1)).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (8, 1, 1));
    }

    #[test]
    fn dataset_seeds_are_unique() {
        let base = PhantomSpec::desk_default(3);
        let seeds: Vec<u64> = (0..108).map(|i| derive_seed(base.rng_seed, i)).collect();
        let unique: std::collections::BTreeSet<u64> = seeds.iter().copied().collect();
        assert_eq!(unique.len(), seeds.len());
    }

    #[test]
    fn dataset_rejects_impossible_splits() {
        let base = PhantomSpec::desk_default(3);
        assert!(generate_dataset(2, &base, (0.8, 0.1, 0.1)).is_err());
        assert!(generate_dataset(5, &base, (1.0, 0.0, 0.0)).is_err());
        assert!(generate_dataset(10, &base, (0.5, 0.2, 0.2)).is_err());
    }

    #[test]
    fn invalid_specs_name_the_violated_bound() {
        let mut spec = PhantomSpec::desk_default(1);
        spec.inner_radius_frac = 0.5;
        spec.outer_radius_frac = 0.4;
        let err = generate_phantom(&spec).unwrap_err();
        assert!(err.to_string().contains("inner radius"), "{err}");

        let mut spec = PhantomSpec::desk_default(1);
        spec.perturbation = vec![PerturbationMode {
            mode: 2,
            amplitude_frac: 0.5,
            phase_rad: 0.0,
        }];
        let err = generate_phantom(&spec).unwrap_err();
        assert!(err.to_string().contains("cross the exterior"), "{err}");
    }
}
