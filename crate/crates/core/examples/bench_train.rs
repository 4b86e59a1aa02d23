use std::time::Instant;
use swapct_core::geometry::ScanGeometry;
use swapct_core::phantom::{generate_phantom, randomized_spec, PhantomSpec};
use swapct_core::pipeline::*;
use swapct_core::recon::{search_tau, snr_db, TvConfig};

fn main() {
    let base = PhantomSpec::desk_default(100);
    let phantoms: Vec<_> = (0..24)
        .map(|i| generate_phantom(&randomized_spec(&base, i)).unwrap())
        .collect();
    let geom = ScanGeometry::desk_default(4);
    let ds = build_dataset(&phantoms, &geom, CorruptionMode::Awgn, 1).unwrap();
    let (train_items, rest) = ds.items.split_at(20);
    let (val_items, test_items) = rest.split_at(2);

    // TV baseline on the two test items
    let t0 = Instant::now();
    for item in test_items {
        let cfg = TvConfig { max_iters: 40, ..TvConfig::default() }
            .with_auto_bounds(&item.stack, &geom, &item.ground_truth).unwrap();
        let (tau, vol) = search_tau(&item.stack, &geom, &item.ground_truth, &cfg).unwrap();
        println!("TV: tau {:.5}, SNR {:.2} dB (fbp {:.2})", tau,
            snr_db(&item.ground_truth, &vol).unwrap(),
            snr_db(&item.ground_truth, &item.fbp).unwrap());
    }
    println!("tv search pair: {:?}", t0.elapsed());

    let cfg = TrainingConfig {
        epochs: 40,
        ..TrainingConfig::desk_default(CorruptionMode::Awgn, 4, 5)
    };
    let t0 = Instant::now();
    let out = train(&cfg, train_items, val_items).unwrap();
    println!("40 epochs: {:?}, val trajectory {:?}", t0.elapsed(), out.val_snr);
    let test_snr = validate(&out.net_config, &out.weights, test_items).unwrap();
    println!("test SNR after 40 epochs: {:.2} dB", test_snr);
}
