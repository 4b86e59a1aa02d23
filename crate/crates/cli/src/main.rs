//! Command-line workflow for the sparse-view CBCT toolkit.
//!
//! Every subcommand is a thin wrapper around one library operation and
//! writes a manifest sufficient to reproduce the run. Exit codes: 0 on
//! success, 2 for usage errors, 3 for data errors, 4 for numerical faults.

mod config;

use clap::{Args, Parser, Subcommand};
use config::{resolve, Effective, FileConfig, Overrides};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use swapct_core::corruption::{corrupt_awgn, corrupt_post_log, AwgnParams, CorruptionConfig};
use swapct_core::geometry::{fdk_reconstruct, forward_project, Volume};
use swapct_core::phantom::{derive_seed, generate_dataset, generate_phantom, randomized_spec};
use swapct_core::pipeline::{
    ablation_swap_order, build_dataset, evaluate, load_stack, load_volume, load_weights,
    log_corruption, render_slice, save_stack, save_volume, save_weights, train, Baselines,
    CorruptionMode, Dataset, EvalReport, RunManifest,
};
use swapct_core::recon::{search_tau, tv_reconstruct};
use swapct_core::swapnet::{swap_order_label, Axis};
use swapct_core::Error;

#[derive(Parser)]
#[command(
    name = "swapct",
    about = "Sparse-view cone-beam CT simulation, reconstruction, and 2.5D network training",
    version
)]
struct Cli {
    /// TOML configuration file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap worker threads (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Print progress details.
    #[arg(short, long, global = true, default_value_t = false)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ViewArgs {
    /// Number of projection views.
    #[arg(long)]
    views: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate double-shell phantom volumes.
    Phantom {
        /// Number of phantoms.
        #[arg(long)]
        count: Option<usize>,
        /// Output directory for NNN.swv files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Forward-project a volume into a clean line-integral stack.
    Project {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        views: ViewArgs,
    },
    /// Corrupt a volume into a post-log measurement stack.
    Corrupt {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Corruption mode: awgn or scatter.
        #[arg(long)]
        mode: Option<String>,
        #[command(flatten)]
        views: ViewArgs,
    },
    /// Reconstruct a stack with FBP or TV.
    Reconstruct {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Method: fbp or tv.
        #[arg(long, default_value = "fbp")]
        method: String,
        /// Hann cutoff for FBP (relative to Nyquist).
        #[arg(long, default_value_t = 0.3)]
        cutoff: f64,
        /// Fixed TV regularization weight.
        #[arg(long)]
        tau: Option<f64>,
        /// Ground-truth volume for the oracle-tuned TV weight search.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Output volume extent (cubic) when no reference is given.
        #[arg(long, default_value_t = 32)]
        grid: usize,
        /// Voxel pitch (mm) when no reference is given.
        #[arg(long, default_value_t = 0.05)]
        voxel_mm: f64,
    },
    /// Generate a dataset and train the network.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
        /// Channel-axis order for the three blocks, e.g. xyz or zxy.
        #[arg(long)]
        swap_order: Option<String>,
        /// Network variant: swap or non_swap.
        #[arg(long)]
        variant: Option<String>,
        #[command(flatten)]
        views: ViewArgs,
    },
    /// Evaluate a training run directory against the baselines.
    Eval {
        /// Run directory produced by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Skip the TV baseline (it dominates runtime).
        #[arg(long, default_value_t = false)]
        no_tv: bool,
    },
    /// Train all swap-order variants and compare mean test SNR.
    Ablate {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated training seeds.
        #[arg(long, default_value = "1,2,3")]
        seeds: String,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
        #[command(flatten)]
        views: ViewArgs,
    },
    /// Export one slice of a volume as an 8-bit PNG (window [0, 2]).
    Render {
        #[arg(long)]
        volume: PathBuf,
        /// Slice axis: x, y, or z.
        #[arg(long, default_value = "z")]
        axis: String,
        /// Slice index along the axis.
        #[arg(long)]
        index: usize,
        #[arg(long)]
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err {
                Error::Numerical(_) => 4u8,
                _ => 3u8,
            })
        }
    }
}

fn run(cli: Cli) -> swapct_core::Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let threads = if cli.threads > 0 {
        cli.threads
    } else {
        file.run.threads.unwrap_or(0)
    };
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let verbose = cli.verbose;

    match cli.command {
        Command::Phantom { count, out } => {
            let eff = resolve(
                &file,
                &Overrides {
                    seed: cli.seed,
                    count,
                    ..Overrides::default()
                },
            )?;
            cmd_phantom(&eff, &out, verbose)
        }
        Command::Project { volume, output, views } => {
            let eff = resolve(
                &file,
                &Overrides {
                    seed: cli.seed,
                    views: views.views,
                    ..Overrides::default()
                },
            )?;
            cmd_project(&eff, &volume, &output)
        }
        Command::Corrupt {
            volume,
            output,
            mode,
            views,
        } => {
            let eff = resolve(
                &file,
                &Overrides {
                    seed: cli.seed,
                    views: views.views,
                    mode,
                    ..Overrides::default()
                },
            )?;
            cmd_corrupt(&eff, &volume, &output)
        }
        Command::Reconstruct {
            stack,
            output,
            method,
            cutoff,
            tau,
            reference,
            grid,
            voxel_mm,
        } => {
            let eff = resolve(
                &file,
                &Overrides {
                    seed: cli.seed,
                    ..Overrides::default()
                },
            )?;
            cmd_reconstruct(
                &eff, &stack, &output, &method, cutoff, tau, reference.as_deref(), grid, voxel_mm,
            )
        }
        Command::Train {
            out,
            mode,
            epochs,
            count,
            swap_order,
            variant,
            views,
        } => {
            let eff = resolve(
                &file,
                &Overrides {
                    seed: cli.seed,
                    views: views.views,
                    mode,
                    epochs,
                    count,
                    swap_order,
                    variant,
                },
            )?;
            cmd_train(&eff, &out, verbose)
        }
        Command::Eval { run, no_tv } => cmd_eval(&run, no_tv, verbose),
        Command::Ablate {
            out,
            seeds,
            mode,
            epochs,
            count,
            views,
        } => {
            let eff = resolve(
                &file,
                &Overrides {
                    seed: cli.seed,
                    views: views.views,
                    mode,
                    epochs,
                    count,
                    ..Overrides::default()
                },
            )?;
            let seeds: Vec<u64> = seeds
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<u64>()
                        .map_err(|e| Error::InvalidArgument(format!("bad seed '{s}': {e}")))
                })
                .collect::<swapct_core::Result<_>>()?;
            cmd_ablate(&eff, &out, &seeds, verbose)
        }
        Command::Render {
            volume,
            axis,
            index,
            output,
        } => cmd_render(&volume, &axis, index, &output),
    }
}

fn ensure_dir(dir: &Path) -> swapct_core::Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Echoes the effective configuration so a run can be reproduced exactly.
fn config_manifest(command: &str, eff: &Effective) -> RunManifest {
    let mut m = RunManifest::new();
    m.put("cli", "command", command);
    m.put("cli", "seed", eff.seed);
    m.put("geometry", "n_views", eff.geometry.n_views);
    m.put("geometry", "angular_span_deg", eff.geometry.angular_span_deg);
    m.put("geometry", "source_to_axis_mm", eff.geometry.source_to_axis_mm);
    m.put(
        "geometry",
        "source_to_detector_mm",
        eff.geometry.source_to_detector_mm,
    );
    m.put("geometry", "detector_rows", eff.geometry.detector_rows);
    m.put("geometry", "detector_cols", eff.geometry.detector_cols);
    m.put("geometry", "detector_pixel_mm", eff.geometry.detector_pixel_mm);
    m.put("phantom", "n", eff.phantom.n);
    m.put("phantom", "voxel_mm", eff.phantom.voxel_mm);
    m.put("phantom", "count", eff.phantom_count);
    m.put("phantom", "train_frac", eff.split.0);
    m.put("phantom", "val_frac", eff.split.1);
    m.put("phantom", "test_frac", eff.split.2);
    m.put("training", "mode", eff.training.mode.label());
    m.put("training", "epochs", eff.training.epochs);
    m.put("training", "lr", eff.training.lr);
    m.put("training", "val_every", eff.training.val_every);
    m.put("training", "swap_order", swap_order_label(&eff.training.swap_order));
    m.put("training", "variant", eff.training.variant.label());
    m.put("tv", "max_iters", eff.tv.max_iters);
    m
}

fn cmd_phantom(eff: &Effective, out: &Path, verbose: bool) -> swapct_core::Result<()> {
    ensure_dir(out)?;
    let mut manifest = config_manifest("phantom", eff);
    for i in 0..eff.phantom_count {
        let spec = randomized_spec(&eff.phantom, i as u64);
        let vol = generate_phantom(&spec)?;
        let path = out.join(format!("{i:03}.swv"));
        save_volume(&vol, &path)?;
        manifest.put("phantoms", &format!("{i:03}.seed"), spec.rng_seed);
        if verbose {
            eprintln!("wrote {}", path.display());
        }
    }
    manifest.save(&out.join("manifest.txt"))?;
    println!("wrote {} phantoms to {}", eff.phantom_count, out.display());
    Ok(())
}

fn cmd_project(eff: &Effective, volume: &Path, output: &Path) -> swapct_core::Result<()> {
    let vol = load_volume(volume)?;
    let stack = forward_project(&vol, &eff.geometry)?;
    save_stack(&stack, output)?;
    let mut manifest = config_manifest("project", eff);
    manifest.put("io", "input", volume.display());
    manifest.put("io", "output", output.display());
    manifest.save(&manifest_path(output))?;
    println!("projected {} views to {}", stack.n_views, output.display());
    Ok(())
}

fn cmd_corrupt(eff: &Effective, volume: &Path, output: &Path) -> swapct_core::Result<()> {
    let vol = load_volume(volume)?;
    let mut manifest = config_manifest("corrupt", eff);
    let stack = match eff.training.mode {
        CorruptionMode::Awgn => corrupt_awgn(
            &vol,
            &eff.geometry,
            &AwgnParams {
                target_input_snr_db: 40.0,
                seed: eff.seed,
            },
        )?,
        CorruptionMode::Scatter => {
            let (stack, params) =
                corrupt_post_log(&vol, &eff.geometry, &CorruptionConfig::full(eff.seed))?;
            let dataset = Dataset {
                items: Vec::new(),
                corruption_log: vec![params],
                mode: CorruptionMode::Scatter,
                seed: eff.seed,
            };
            log_corruption(&mut manifest, &dataset, "corruption");
            stack
        }
    };
    save_stack(&stack, output)?;
    manifest.put("io", "input", volume.display());
    manifest.put("io", "output", output.display());
    manifest.save(&manifest_path(output))?;
    println!(
        "corrupted ({}) {} views to {}",
        eff.training.mode.label(),
        stack.n_views,
        output.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_reconstruct(
    eff: &Effective,
    stack_path: &Path,
    output: &Path,
    method: &str,
    cutoff: f64,
    tau: Option<f64>,
    reference: Option<&Path>,
    grid: usize,
    voxel_mm: f64,
) -> swapct_core::Result<()> {
    let stack = load_stack(stack_path)?;
    let mut geom = eff.geometry.clone();
    geom.n_views = stack.n_views;
    geom.detector_rows = stack.rows;
    geom.detector_cols = stack.cols;
    let like = match reference {
        Some(p) => load_volume(p)?,
        None => Volume::zeros(grid, grid, grid, voxel_mm),
    };
    let mut manifest = config_manifest("reconstruct", eff);
    manifest.put("io", "stack", stack_path.display());
    manifest.put("io", "method", method);
    let vol = match method {
        "fbp" => {
            manifest.put("io", "hann_cutoff", cutoff);
            fdk_reconstruct(&stack, &geom, &like, cutoff)?
        }
        "tv" => {
            let mut cfg = eff.tv.clone();
            match (tau, reference) {
                (Some(t), _) => {
                    cfg.tau = t;
                    manifest.put("io", "tau", t);
                    tv_reconstruct(&stack, &geom, &like, &cfg)?.volume
                }
                (None, Some(_)) => {
                    let cfg = cfg.with_auto_bounds(&stack, &geom, &like)?;
                    let (best_tau, vol) = search_tau(&stack, &geom, &like, &cfg)?;
                    manifest.put("io", "tau", best_tau);
                    vol
                }
                (None, None) => {
                    return Err(Error::InvalidArgument(
                        "tv needs either --tau or --reference for the weight search".into(),
                    ))
                }
            }
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown method '{other}' (expected fbp or tv)"
            )))
        }
    };
    save_volume(&vol, output)?;
    manifest.put("io", "output", output.display());
    manifest.save(&manifest_path(output))?;
    println!("reconstructed ({method}) to {}", output.display());
    Ok(())
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.txt");
    output.with_file_name(name)
}

/// Builds the three splits deterministically from the effective config.
fn build_splits(eff: &Effective) -> swapct_core::Result<(Dataset, Dataset, Dataset)> {
    let mut base = eff.phantom.clone();
    base.rng_seed = eff.seed;
    let (train_p, val_p, test_p) = generate_dataset(eff.phantom_count, &base, eff.split)?;
    let mode = eff.training.mode;
    let train = build_dataset(&train_p, &eff.geometry, mode, derive_seed(eff.seed, 1000))?;
    let val = build_dataset(&val_p, &eff.geometry, mode, derive_seed(eff.seed, 1001))?;
    let test = build_dataset(&test_p, &eff.geometry, mode, derive_seed(eff.seed, 1002))?;
    Ok((train, val, test))
}

fn cmd_train(eff: &Effective, out: &Path, verbose: bool) -> swapct_core::Result<()> {
    ensure_dir(out)?;
    let (train_ds, val_ds, _) = build_splits(eff)?;
    if verbose {
        eprintln!(
            "dataset ready: {} train / {} val",
            train_ds.items.len(),
            val_ds.items.len()
        );
    }
    let outcome = train(&eff.training, &train_ds.items, &val_ds.items)?;
    save_weights(&outcome.net_config, &outcome.weights, &out.join("weights.sww"))?;

    let mut manifest = config_manifest("train", eff);
    for section in outcome.manifest.sections() {
        for (k, v) in outcome.manifest.values_with_prefix(section, "") {
            manifest.put(section, k, v);
        }
    }
    log_corruption(&mut manifest, &train_ds, "corruption.train");
    log_corruption(&mut manifest, &val_ds, "corruption.val");
    manifest.save(&out.join("manifest.txt"))?;
    println!(
        "trained {} epochs (best validation at epoch {}); weights in {}",
        eff.training.epochs,
        outcome.best_epoch,
        out.display()
    );
    Ok(())
}

fn cmd_eval(run_dir: &Path, no_tv: bool, verbose: bool) -> swapct_core::Result<()> {
    let manifest = RunManifest::load(&run_dir.join("manifest.txt"))?;
    let eff = effective_from_manifest(&manifest)?;
    let (net_cfg, weights) = load_weights(&run_dir.join("weights.sww"))?;
    let (_, _, test_ds) = build_splits(&eff)?;
    if verbose {
        eprintln!("evaluating {} test volumes", test_ds.items.len());
    }
    let mut report = evaluate(
        Some((&net_cfg, &weights)),
        &test_ds.items,
        &eff.geometry,
        Baselines {
            fbp: true,
            tv: !no_tv,
        },
        &eff.tv,
    )?;
    report.mode = eff.training.mode.label().to_string();
    let table = report.to_table();
    let csv = EvalReport::csv_table(&[&report]);
    std::fs::write(run_dir.join("table.txt"), &table)?;
    std::fs::write(run_dir.join("metrics.csv"), &csv)?;
    print!("{table}");
    println!("metrics written to {}", run_dir.join("metrics.csv").display());
    Ok(())
}

/// Rebuilds the effective config from a run manifest (flag-free).
fn effective_from_manifest(manifest: &RunManifest) -> swapct_core::Result<Effective> {
    let get = |section: &str, key: &str| -> swapct_core::Result<&str> {
        manifest.get(section, key).ok_or_else(|| {
            Error::Format(format!("manifest is missing [{section}] {key}"))
        })
    };
    let parse_num = |v: &str| -> swapct_core::Result<f64> {
        v.parse()
            .map_err(|e| Error::Format(format!("bad manifest number '{v}': {e}")))
    };
    let file = FileConfig::default();
    let flags = Overrides {
        seed: Some(parse_num(get("cli", "seed")?)? as u64),
        views: Some(parse_num(get("geometry", "n_views")?)? as usize),
        mode: Some(get("training", "mode")?.to_string()),
        epochs: Some(parse_num(get("training", "epochs")?)? as usize),
        count: Some(parse_num(get("phantom", "count")?)? as usize),
        swap_order: Some(get("training", "swap_order")?.to_string()),
        variant: Some(get("training", "variant")?.to_string()),
    };
    let mut eff = resolve(&file, &flags)?;
    eff.geometry.detector_rows = parse_num(get("geometry", "detector_rows")?)? as usize;
    eff.geometry.detector_cols = parse_num(get("geometry", "detector_cols")?)? as usize;
    eff.geometry.detector_pixel_mm = parse_num(get("geometry", "detector_pixel_mm")?)?;
    eff.geometry.source_to_axis_mm = parse_num(get("geometry", "source_to_axis_mm")?)?;
    eff.geometry.source_to_detector_mm = parse_num(get("geometry", "source_to_detector_mm")?)?;
    eff.phantom.n = parse_num(get("phantom", "n")?)? as usize;
    eff.phantom.voxel_mm = parse_num(get("phantom", "voxel_mm")?)?;
    eff.split = (
        parse_num(get("phantom", "train_frac")?)?,
        parse_num(get("phantom", "val_frac")?)?,
        parse_num(get("phantom", "test_frac")?)?,
    );
    eff.tv.max_iters = parse_num(get("tv", "max_iters")?)? as usize;
    Ok(eff)
}

fn cmd_ablate(eff: &Effective, out: &Path, seeds: &[u64], verbose: bool) -> swapct_core::Result<()> {
    ensure_dir(out)?;
    let (train_ds, val_ds, test_ds) = build_splits(eff)?;
    if verbose {
        eprintln!(
            "ablation over {} seeds, {} train volumes",
            seeds.len(),
            train_ds.items.len()
        );
    }
    let report = ablation_swap_order(
        &eff.training,
        &train_ds.items,
        &val_ds.items,
        &test_ds.items,
        seeds,
    )?;
    let table = report.to_table();
    std::fs::write(out.join("ablation.txt"), &table)?;
    let mut manifest = config_manifest("ablate", eff);
    for (variant, per_seed, mean) in &report.variants {
        manifest.put("ablation", &format!("{}.mean_snr_db", variant.name), mean);
        for (seed, snr) in report.seeds.iter().zip(per_seed) {
            manifest.put(
                "ablation",
                &format!("{}.seed.{seed}.snr_db", variant.name),
                snr,
            );
        }
    }
    manifest.save(&out.join("manifest.txt"))?;
    print!("{table}");
    Ok(())
}

fn cmd_render(volume: &Path, axis: &str, index: usize, output: &Path) -> swapct_core::Result<()> {
    let vol = load_volume(volume)?;
    let axis = match axis {
        "x" => Axis::X,
        "y" => Axis::Y,
        "z" => Axis::Z,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown axis '{other}' (expected x, y, or z)"
            )))
        }
    };
    let (width, height, pixels) = render_slice(&vol, axis, index)?;
    let img = image::GrayImage::from_raw(width as u32, height as u32, pixels)
        .expect("buffer sized by render_slice");
    img.save(output)
        .map_err(|e| Error::InvalidArgument(format!("writing {}: {e}", output.display())))?;
    println!("rendered {}[{}] to {}", axis.label(), index, output.display());
    Ok(())
}
