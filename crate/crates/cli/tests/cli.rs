//! End-to-end checks of the `swapct` binary: wrapper fidelity against
//! in-process library calls, file outputs, and exit codes.

use std::path::Path;
use std::process::Command;
use swapct_core::geometry::{fdk_reconstruct, forward_project, ScanGeometry};
use swapct_core::phantom::{generate_phantom, PhantomSpec};
use swapct_core::pipeline::{load_stack, load_volume, save_volume, RunManifest};

fn swapct() -> Command {
    Command::new(env!("CARGO_BIN_EXE_swapct"))
}

fn run_ok(cmd: &mut Command) {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Small config shared by the slow subcommand tests.
fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(
        &path,
        r#"
[geometry]
n_views = 4
detector_rows = 20
detector_cols = 20

[phantom]
n = 12
count = 4
train_frac = 0.5
val_frac = 0.25
test_frac = 0.25

[training]
epochs = 2
val_every = 1

[tv]
max_iters = 8
"#,
    )
    .unwrap();
    path
}

#[test]
fn reconstruct_fbp_matches_in_process_call_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let vol = generate_phantom(&PhantomSpec::desk_default(5)).unwrap();
    let vol_path = dir.path().join("gt.swv");
    save_volume(&vol, &vol_path).unwrap();

    run_ok(swapct()
        .args(["project", "--views", "4"])
        .arg("--volume")
        .arg(&vol_path)
        .arg("--output")
        .arg(dir.path().join("stack.swp")));

    run_ok(swapct()
        .args(["reconstruct", "--method", "fbp", "--cutoff", "0.3"])
        .arg("--stack")
        .arg(dir.path().join("stack.swp"))
        .arg("--reference")
        .arg(&vol_path)
        .arg("--output")
        .arg(dir.path().join("fbp.swv")));

    // In-process reference path.
    let geom = ScanGeometry::desk_default(4);
    let stack = forward_project(&vol, &geom).unwrap();
    let saved_stack = load_stack(&dir.path().join("stack.swp")).unwrap();
    assert_eq!(saved_stack.data, stack.data, "project wrapper fidelity");

    let fbp = fdk_reconstruct(&stack, &geom, &vol, 0.3).unwrap();
    let saved_fbp = load_volume(&dir.path().join("fbp.swv")).unwrap();
    assert_eq!(saved_fbp.values, fbp.values, "reconstruct wrapper fidelity");

    // Each output carries a manifest.
    assert!(dir.path().join("stack.swp.manifest.txt").exists());
    assert!(dir.path().join("fbp.swv.manifest.txt").exists());
}

#[test]
fn phantom_corrupt_render_produce_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("phantoms");
    run_ok(swapct()
        .args(["phantom", "--count", "2"])
        .arg("--out")
        .arg(&out));
    assert!(out.join("000.swv").exists());
    assert!(out.join("001.swv").exists());
    let manifest = RunManifest::load(&out.join("manifest.txt")).unwrap();
    assert_eq!(manifest.get("cli", "command"), Some("phantom"));

    run_ok(swapct()
        .args(["corrupt", "--mode", "scatter", "--views", "4"])
        .arg("--volume")
        .arg(out.join("000.swv"))
        .arg("--output")
        .arg(dir.path().join("noisy.swp")));
    let stack = load_stack(&dir.path().join("noisy.swp")).unwrap();
    assert_eq!(stack.n_views, 4);
    // The corruption manifest logs every per-view parameter draw.
    let m = RunManifest::load(&dir.path().join("noisy.swp.manifest.txt")).unwrap();
    assert_eq!(m.values_with_prefix("corruption", "p0.v").len(), 4 * 9);

    run_ok(swapct()
        .args(["render", "--axis", "z", "--index", "16"])
        .arg("--volume")
        .arg(out.join("000.swv"))
        .arg("--output")
        .arg(dir.path().join("slice.png")));
    let img = image::open(dir.path().join("slice.png")).unwrap().to_luma8();
    assert_eq!(img.dimensions(), (32, 32));
    // Vacuum corner is black; the metal shell hits the white end.
    assert_eq!(img.get_pixel(0, 0).0[0], 0);
    assert!(img.pixels().any(|p| p.0[0] > 200));
}

#[test]
fn train_then_eval_writes_reproducible_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let run_dir = dir.path().join("run");
    run_ok(swapct()
        .arg("--config")
        .arg(&config)
        .args(["--seed", "3", "train"])
        .arg("--out")
        .arg(&run_dir));
    assert!(run_dir.join("weights.sww").exists());
    let manifest = RunManifest::load(&run_dir.join("manifest.txt")).unwrap();
    assert_eq!(manifest.get("training", "epochs"), Some("2"));
    assert_eq!(manifest.values_with_prefix("train", "epoch.").len(), 2);

    run_ok(swapct().arg("eval").arg("--run").arg(&run_dir));
    let csv = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    // Header + 3 methods x 2 metrics.
    assert_eq!(lines.len(), 1 + 3 * 2, "csv:\n{csv}");
    assert!(lines[0].starts_with("method,views,mode"));
    assert!(run_dir.join("table.txt").exists());

    // Repeating evaluation is bit-identical (fixed seeds end to end).
    let table_a = std::fs::read_to_string(run_dir.join("table.txt")).unwrap();
    run_ok(swapct().arg("eval").arg("--run").arg(&run_dir));
    let table_b = std::fs::read_to_string(run_dir.join("table.txt")).unwrap();
    assert_eq!(table_a, table_b);
}

#[test]
fn usage_and_data_errors_use_distinct_exit_codes() {
    // Unknown flag: usage error, exit 2 (clap).
    let out = swapct().arg("--definitely-not-a-flag").output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");

    // Missing input file: data error, exit 3 with a one-line diagnostic.
    let out = swapct()
        .args(["render", "--axis", "z", "--index", "0"])
        .args(["--volume", "/nonexistent/vol.swv"])
        .args(["--output", "/tmp/never.png"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "stderr: {stderr}");
    assert!(stderr.starts_with("error: "), "stderr: {stderr}");

    // Malformed config file: data error.
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[training]\nepochs = \"many\"\n").unwrap();
    let out = swapct()
        .arg("--config")
        .arg(&bad)
        .args(["phantom", "--count", "1"])
        .arg("--out")
        .arg(dir.path().join("p"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{out:?}");
}
