//! Darkness-weighted Gaussian pseudo-noise for training the denoiser.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// How `sigma_range` is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SigmaUnits {
    /// Sigma is in 8-bit intensity steps and divided by 255.
    #[default]
    EightBit,
    /// Sigma is applied to unit-range data as given.
    Literal,
}

impl SigmaUnits {
    pub fn scale(self) -> f64 {
        match self {
            SigmaUnits::EightBit => 1.0 / 255.0,
            SigmaUnits::Literal => 1.0,
        }
    }
}

impl std::str::FromStr for SigmaUnits {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "8bit" | "eightbit" | "255" => Ok(SigmaUnits::EightBit),
            "literal" | "unit" => Ok(SigmaUnits::Literal),
            other => Err(Error::Config(format!("unknown sigma units {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    /// Inclusive `[lo, hi]` range sigma is drawn from, per channel.
    pub sigma_range: (f64, f64),
    pub units: SigmaUnits,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma_range: (1.0, 5.0),
            units: SigmaUnits::EightBit,
        }
    }
}

impl NoiseConfig {
    /// A config that always draws exactly `sigma`.
    pub fn fixed(sigma: f64) -> Self {
        NoiseConfig {
            sigma_range: (sigma, sigma),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.sigma_range;
        if lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "sigma range must satisfy 0 <= lo <= hi, got [{lo}, {hi}]"
            )))
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = self.sigma_range;
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    }
}

/// The additive noise field `(1 - I) * N(0, sigma_c)` before any clamping,
/// together with the per-channel sigma in normalized units.
pub fn pseudo_noise<T: Real, R: Rng + ?Sized>(
    image: &Tensor<T>,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<(Tensor<T>, [f64; 3])> {
    cfg.validate()?;
    let [3, h, w] = image.shape()[..] else {
        return Err(Error::Shape(format!(
            "expected a [3,H,W] image, got {:?}",
            image.shape()
        )));
    };
    let plane = h * w;
    let mut sigmas = [0.0; 3];
    for s in &mut sigmas {
        *s = cfg.draw(rng) * cfg.units.scale();
    }
    let mut out = Vec::with_capacity(image.len());
    for (c, chunk) in image.data().chunks(plane.max(1)).enumerate().take(3) {
        for &v in chunk {
            let z: f64 = StandardNormal.sample(rng);
            out.push(T::lit((1.0 - v.as_f64()) * sigmas[c] * z));
        }
    }
    Ok((Tensor::new(image.shape().to_vec(), out)?, sigmas))
}

/// `clamp01(I + pseudo_noise(I))`, plus the sigma used for each channel.
pub fn inject_noise<T: Real, R: Rng + ?Sized>(
    image: &Tensor<T>,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<(Tensor<T>, [f64; 3])> {
    let (noise, sigmas) = pseudo_noise(image, cfg, rng)?;
    Ok((image.zip_map(&noise, |a, b| a + b)?.clamp01(), sigmas))
}
