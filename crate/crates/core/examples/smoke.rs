//! Trains the tiny variant on procedural dark scenes and reports how the
//! dataset loss and brightness moved.
//!
//! `cargo run --release --example smoke -- [learning_rate] [steps] [momentum]`

use std::time::Instant;

use selfdace::network::{ModelBundle, Variant};
use selfdace::pipeline::{dataset_loss, train_ia, TrainConfig};
use selfdace::synthetic::dark_scene;

fn main() -> selfdace::Result<()> {
    let mut args = std::env::args().skip(1);
    let lr: f64 = args.next().map_or(1e-3, |s| s.parse().expect("learning rate"));
    let steps: usize = args.next().map_or(200, |s| s.parse().expect("steps"));
    let momentum: f64 = args.next().map_or(0.9, |s| s.parse().expect("momentum"));
    let images: Vec<_> = (0..8).map(|i| dark_scene(128, 128, i)).collect();
    let cfg = TrainConfig {
        variant: Variant::Tiny,
        resize: (128, 128),
        epochs_ia: steps,
        max_steps: Some(steps),
        learning_rate: lr,
        momentum,
        seed: 7,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let mut init = ModelBundle::new(cfg.variant, cfg.seed);
    init.dn = None;
    let before = dataset_loss(&init, &images, &cfg.weights, 0)?;
    let trained = train_ia(&cfg, &images)?;
    let after = dataset_loss(&trained.model, &images, &cfg.weights, 0)?;
    println!("{}", selfdace::losses::LossReport::CSV_HEADER);
    println!("{}", before.csv_row(0));
    println!("{}", after.csv_row(steps));
    let fused = trained.model.fuse()?;
    let (mut m0, mut m1) = (0.0, 0.0);
    for img in &images {
        m0 += img.mean() as f64 / 8.0;
        m1 += fused.forward_fused(img, false)?.mean() as f64 / 8.0;
    }
    println!(
        "ratio {:.3} | mean {m0:.4} -> {m1:.4} | {:.1?}",
        after.total / before.total,
        t.elapsed()
    );
    Ok(())
}
