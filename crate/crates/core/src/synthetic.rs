//! Deterministic procedural scenes for smoke tests and examples.
//!
//! A scene is a smooth colored gradient with a few flat shapes on top.
//! [`darken`] turns it into a low-light capture: gamma, exposure drop and
//! shadow-weighted sensor noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

/// A well-exposed `[3,h,w]` scene in `[0.05, 0.95]`.
pub fn scene(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    scene_with_saturation(h, w, seed, 1.0)
}

/// Like [`scene`], with every color pulled toward its gray level so that
/// `saturation = 0` is monochrome and `1` keeps the full palette.
pub fn scene_with_saturation(h: usize, w: usize, seed: u64, saturation: f32) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.45..0.75));
    let tilt: [f32; 3] = std::array::from_fn(|_| rng.random_range(-0.2..0.2));
    let shapes: Vec<(f32, f32, f32, [f32; 3], bool)> = (0..6)
        .map(|_| {
            (
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
                rng.random_range(0.08..0.25),
                std::array::from_fn(|_| rng.random_range(0.2..0.95)),
                rng.random_bool(0.5),
            )
        })
        .collect();
    let freq = rng.random_range(2.0..6.0f32);
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f32 / w as f32, y as f32 / h as f32);
            let mut px: [f32; 3] = std::array::from_fn(|c| {
                base[c] + tilt[c] * (u - v) + 0.05 * (freq * (u + 2.0 * v)).sin()
            });
            for &(cx, cy, r, color, round) in &shapes {
                let inside = if round {
                    (u - cx).powi(2) + (v - cy).powi(2) < r * r
                } else {
                    (u - cx).abs() < r && (v - cy).abs() < r * 0.6
                };
                if inside {
                    px = color;
                }
            }
            let gray = (px[0] + px[1] + px[2]) / 3.0;
            for c in 0..3 {
                let v = gray + saturation * (px[c] - gray);
                data[c * h * w + y * w + x] = v.clamp(0.05, 0.95);
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("shape matches data")
}

/// Low-light rendering of `normal`: `exposure * I^gamma` plus noise whose
/// standard deviation is `noise * (1 - I)`, quantized to 8 bits.
pub fn darken(normal: &Tensor<f32>, exposure: f32, gamma: f32, noise: f32, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0f32, 1.0).expect("unit normal");
    let mut out = normal.clone();
    for v in out.data_mut() {
        let d = exposure * v.powf(gamma);
        let d = d + noise * (1.0 - d) * n.sample(&mut rng);
        *v = (d.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
    out
}

/// A low-light image produced directly from a fresh scene.
pub fn dark_scene(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    darken(&scene(h, w, seed), 0.18, 1.3, 0.004, seed ^ 0xda7c)
}
