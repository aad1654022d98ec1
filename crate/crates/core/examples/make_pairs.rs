//! Regenerates the bundled low/normal evaluation pairs.
//!
//! `cargo run --release --example make_pairs -- tests/data/pairs`

use std::path::PathBuf;

use selfdace::pipeline::save_png;
use selfdace::synthetic::{darken, scene_with_saturation};

const SEEDS: [u64; 4] = [101, 102, 103, 104];

fn main() -> selfdace::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "tests/data/pairs".into()));
    for sub in ["low", "normal"] {
        std::fs::create_dir_all(root.join(sub)).map_err(|e| selfdace::Error::io(root.join(sub), e))?;
    }
    for (i, &seed) in SEEDS.iter().enumerate() {
        let normal = scene_with_saturation(128, 128, seed, 0.7);
        let low = darken(&normal, 0.12, 1.2, 0.006, seed ^ 0x10e);
        let name = format!("pair{}.png", i + 1);
        save_png(&normal, root.join("normal").join(&name))?;
        save_png(&low, root.join("low").join(&name))?;
        println!("{name}: normal mean {:.3}, low mean {:.3}", normal.mean(), low.mean());
    }
    Ok(())
}
