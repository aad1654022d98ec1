//! Illuminance / reflectance split and the statistics derived from it.
//!
//! Illuminance is the plain channel sum `L = I_r + I_g + I_b` (range
//! `[0, 3]`) and reflectance is `R_c = I_c / (L + eps)`, so a neutral pixel
//! has reflectance close to `(1/3, 1/3, 1/3)` regardless of brightness.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Var};

/// Offset guarding the reflectance division.
pub const EPSILON: f64 = 1e-4;

#[derive(Clone, Copy, Debug)]
pub struct Decomposition {
    /// `[H, W]`
    pub illuminance: Var,
    /// `[3, H, W]`
    pub reflectance: Var,
    pub epsilon: f64,
}

pub(crate) fn expect_rgb<T: Real>(g: &Graph<T>, image: Var) -> Result<[usize; 2]> {
    match g.shape(image)[..] {
        [3, h, w] => Ok([h, w]),
        ref s => Err(Error::Shape(format!("expected a [3,H,W] image, got {s:?}"))),
    }
}

pub fn decompose<T: Real>(g: &Graph<T>, image: Var) -> Result<Decomposition> {
    expect_rgb(g, image)?;
    let illuminance = g.sum_leading(image)?;
    let denom = g.add_scalar(illuminance, T::lit(EPSILON));
    let reflectance = g.div(image, denom)?;
    Ok(Decomposition {
        illuminance,
        reflectance,
        epsilon: EPSILON,
    })
}

/// Per-pixel closeness of the reflectance to neutral white:
/// `E = 1 - sum_c |R_c - 1/3|`, in `[-1/3, 1]`.
pub fn illuminance_estimator<T: Real>(g: &Graph<T>, reflectance: Var) -> Result<Var> {
    expect_rgb(g, reflectance)?;
    let dev = g.abs(g.add_scalar(reflectance, T::lit(-1.0 / 3.0)));
    let total = g.sum_leading(dev)?;
    Ok(g.rsub_scalar(T::one(), total))
}

/// Share of total image intensity carried by each channel, shape `[3]`.
///
/// Fails on an all-black image.
pub fn channel_averages<T: Real>(g: &Graph<T>, image: Var) -> Result<Var> {
    expect_rgb(g, image)?;
    let per_channel = g.sum_per_channel(image)?;
    let total = g.sum(per_channel);
    g.div(per_channel, total)
        .map_err(|_| Error::InvalidArgument("channel averages of an all-black image".into()))
}
