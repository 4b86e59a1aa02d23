//! Run configuration: a TOML file with sections, every field optional with
//! desk-scale defaults. Command-line flags override file values; the
//! effective configuration is echoed into each run's manifest.

use serde::Deserialize;
use std::path::Path;
use swapct_core::geometry::ScanGeometry;
use swapct_core::phantom::PhantomSpec;
use swapct_core::pipeline::{CorruptionMode, TrainingConfig};
use swapct_core::recon::TvConfig;
use swapct_core::swapnet::{parse_swap_order, Variant};
use swapct_core::{Error, Result};

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub phantom: PhantomSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub tv: TvSection,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub n_views: Option<usize>,
    pub angular_span_deg: Option<f64>,
    pub source_to_axis_mm: Option<f64>,
    pub source_to_detector_mm: Option<f64>,
    pub detector_rows: Option<usize>,
    pub detector_cols: Option<usize>,
    pub detector_pixel_mm: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PhantomSection {
    pub n: Option<usize>,
    pub voxel_mm: Option<f64>,
    pub count: Option<usize>,
    pub train_frac: Option<f64>,
    pub val_frac: Option<f64>,
    pub test_frac: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub mode: Option<String>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub val_every: Option<usize>,
    pub swap_order: Option<String>,
    pub variant: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TvSection {
    pub max_iters: Option<usize>,
    pub tolerance: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", p.display())))?;
                toml::from_str(&text)
                    .map_err(|e| Error::Format(format!("config {}: {e}", p.display())))
            }
        }
    }
}

/// Effective settings after merging file values and flag overrides.
#[derive(Debug, Clone)]
pub struct Effective {
    pub seed: u64,
    pub geometry: ScanGeometry,
    pub phantom: PhantomSpec,
    pub phantom_count: usize,
    pub split: (f64, f64, f64),
    pub training: TrainingConfig,
    pub tv: TvConfig,
}

/// Flag-level overrides shared by the subcommands; `None` defers to the
/// config file, which defers to desk-scale defaults.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub views: Option<usize>,
    pub mode: Option<String>,
    pub epochs: Option<usize>,
    pub count: Option<usize>,
    pub swap_order: Option<String>,
    pub variant: Option<String>,
}

pub fn resolve(file: &FileConfig, flags: &Overrides) -> Result<Effective> {
    let seed = flags.seed.or(file.run.seed).unwrap_or(1);

    let n_views = flags.views.or(file.geometry.n_views).unwrap_or(4);
    let mut geometry = ScanGeometry::desk_default(n_views);
    if let Some(v) = file.geometry.angular_span_deg {
        geometry.angular_span_deg = v;
    }
    if let Some(v) = file.geometry.source_to_axis_mm {
        geometry.source_to_axis_mm = v;
    }
    if let Some(v) = file.geometry.source_to_detector_mm {
        geometry.source_to_detector_mm = v;
    }
    if let Some(v) = file.geometry.detector_rows {
        geometry.detector_rows = v;
    }
    if let Some(v) = file.geometry.detector_cols {
        geometry.detector_cols = v;
    }
    if let Some(v) = file.geometry.detector_pixel_mm {
        geometry.detector_pixel_mm = v;
    }
    geometry.validate()?;

    let mut phantom = PhantomSpec::desk_default(seed);
    if let Some(v) = file.phantom.n {
        phantom.n = v;
    }
    if let Some(v) = file.phantom.voxel_mm {
        phantom.voxel_mm = v;
    }
    phantom.validate()?;
    let phantom_count = flags.count.or(file.phantom.count).unwrap_or(24);
    let split = (
        file.phantom.train_frac.unwrap_or(20.0 / 24.0),
        file.phantom.val_frac.unwrap_or(2.0 / 24.0),
        file.phantom.test_frac.unwrap_or(2.0 / 24.0),
    );

    let mode_str = flags
        .mode
        .clone()
        .or(file.training.mode.clone())
        .unwrap_or_else(|| "awgn".to_string());
    let mode = CorruptionMode::from_label(&mode_str)?;
    let mut training = TrainingConfig::desk_default(mode, n_views, seed);
    if let Some(v) = flags.epochs.or(file.training.epochs) {
        training.epochs = v;
    }
    if let Some(v) = file.training.lr {
        training.lr = v;
    }
    if let Some(v) = file.training.val_every {
        training.val_every = v;
    }
    if let Some(order) = flags.swap_order.clone().or(file.training.swap_order.clone()) {
        training.swap_order = parse_swap_order(&order)?;
    }
    if let Some(variant) = flags.variant.clone().or(file.training.variant.clone()) {
        training.variant = match variant.as_str() {
            "swap" => Variant::Swap,
            "non_swap" | "non-swap" => Variant::NonSwap,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown variant '{other}' (expected swap or non_swap)"
                )))
            }
        };
    }

    let mut tv = TvConfig::default();
    if let Some(v) = file.tv.max_iters {
        tv.max_iters = v;
    }
    if let Some(v) = file.tv.tolerance {
        tv.tolerance = v;
    }

    Ok(Effective {
        seed,
        geometry,
        phantom,
        phantom_count,
        split,
        training,
        tv,
    })
}
