//! Adaptive adjustment curves.
//!
//! One curve application maps an intensity `I` to
//!
//! ```text
//! I + alpha / beta * C(beta; I)
//! ```
//!
//! where `C` is gated by a sigmoid so the curve switches off before it can
//! oscillate:
//!
//! * low-light enhancement (LAEC): `C = S(-k (I - beta + delta)) * I * (beta - I)`
//! * highlight suppression (HASC): `C = S(k (I - beta - delta)) * (1 - I) * (I - beta)`
//!
//! `alpha` and `beta` are per-pixel, per-channel maps predicted by the
//! network. Raw network outputs are squashed into the legal boxes by
//! [`map_raw_to_params`].

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CurveKind {
    /// Low-light area enhancement: `alpha` in `[0, 1]`, `beta` in `[0.3, 1]`.
    Laec,
    /// High-light area suppression: `alpha` in `[-1, 0]`, `beta` in `[0.7, 0.9]`.
    Hasc,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveConstants {
    /// Gate steepness.
    pub k: f64,
    /// Gate offset.
    pub delta: f64,
    /// Upper end of the HASC `beta` box.
    pub hasc_beta_max: f64,
}

impl Default for CurveConstants {
    fn default() -> Self {
        CurveConstants {
            k: 15.0,
            delta: 0.1,
            hasc_beta_max: 0.9,
        }
    }
}

impl CurveConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) || !(0.0..1.0).contains(&self.delta) {
            return Err(Error::InvalidArgument(format!(
                "curve constants need k > 0 and 0 <= delta < 1, got k={} delta={}",
                self.k, self.delta
            )));
        }
        if !(self.hasc_beta_max > 0.7 && self.hasc_beta_max <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "hasc_beta_max must lie in (0.7, 1], got {}",
                self.hasc_beta_max
            )));
        }
        Ok(())
    }
}

impl CurveKind {
    pub fn alpha_range(self) -> (f64, f64) {
        match self {
            CurveKind::Laec => (0.0, 1.0),
            CurveKind::Hasc => (-1.0, 0.0),
        }
    }

    pub fn beta_range(self, consts: &CurveConstants) -> (f64, f64) {
        match self {
            CurveKind::Laec => (0.3, 1.0),
            CurveKind::Hasc => (0.7, consts.hasc_beta_max),
        }
    }
}

/// Per-pixel curve parameters, either as tape variables or plain tensors.
#[derive(Clone, Debug)]
pub struct CurveParams<M> {
    pub alpha: M,
    pub beta: M,
    pub kind: CurveKind,
}

/// The curve at a single point.
pub fn aac<T: Real>(kind: CurveKind, i: T, alpha: T, beta: T, consts: &CurveConstants) -> T {
    let k = T::lit(consts.k);
    let delta = T::lit(consts.delta);
    let c = match kind {
        CurveKind::Laec => {
            let t = beta - i;
            sigmoid(k * (t - delta)) * i * t
        }
        CurveKind::Hasc => {
            let t = i - beta;
            sigmoid(k * (t - delta)) * (T::one() - i) * t
        }
    };
    i + alpha / beta * c
}

/// Squashes raw maps into the parameter boxes of `kind` with a sigmoid.
pub fn map_raw_to_params<T: Real>(
    g: &Graph<T>,
    raw_alpha: Var,
    raw_beta: Var,
    kind: CurveKind,
    consts: &CurveConstants,
) -> CurveParams<Var> {
    let sa = g.sigmoid(raw_alpha);
    let alpha = match kind {
        CurveKind::Laec => sa,
        CurveKind::Hasc => g.neg(sa),
    };
    let (lo, hi) = kind.beta_range(consts);
    let sb = g.sigmoid(raw_beta);
    let beta = g.add_scalar(g.mul_scalar(sb, T::lit(hi - lo)), T::lit(lo));
    CurveParams { alpha, beta, kind }
}

/// Eager counterpart of [`map_raw_to_params`].
pub fn map_raw_to_params_eager<T: Real>(
    raw_alpha: &Tensor<T>,
    raw_beta: &Tensor<T>,
    kind: CurveKind,
    consts: &CurveConstants,
) -> CurveParams<Tensor<T>> {
    let sign = T::lit(kind.alpha_range().0 + kind.alpha_range().1);
    let (lo, hi) = kind.beta_range(consts);
    let (lo, span) = (T::lit(lo), T::lit(hi - lo));
    CurveParams {
        alpha: raw_alpha.map(|x| sign * sigmoid(x)),
        beta: raw_beta.map(|x| lo + span * sigmoid(x)),
        kind,
    }
}

fn check_shapes(image: &[usize], alpha: &[usize], beta: &[usize]) -> Result<()> {
    if image != alpha || image != beta {
        return Err(Error::Shape(format!(
            "curve maps must match the image: image {image:?}, alpha {alpha:?}, beta {beta:?}"
        )));
    }
    Ok(())
}

/// Applies one curve on the tape; differentiable in the image and both maps.
pub fn apply_aac<T: Real>(
    g: &Graph<T>,
    image: Var,
    params: &CurveParams<Var>,
    consts: &CurveConstants,
) -> Result<Var> {
    check_shapes(
        &g.shape(image),
        &g.shape(params.alpha),
        &g.shape(params.beta),
    )?;
    let k = T::lit(consts.k);
    let delta = T::lit(consts.delta);
    let c = match params.kind {
        CurveKind::Laec => {
            let t = g.sub(params.beta, image)?;
            let gate = g.sigmoid(g.mul_scalar(g.add_scalar(t, -delta), k));
            g.mul(g.mul(gate, image)?, t)?
        }
        CurveKind::Hasc => {
            let t = g.sub(image, params.beta)?;
            let gate = g.sigmoid(g.mul_scalar(g.add_scalar(t, -delta), k));
            let dark = g.rsub_scalar(T::one(), image);
            g.mul(g.mul(gate, dark)?, t)?
        }
    };
    let step = g.div(g.mul(params.alpha, c)?, params.beta)?;
    g.add(image, step)
}

/// Eager counterpart of [`apply_aac`], evaluated pointwise without a tape.
pub fn apply_aac_eager<T: Real>(
    image: &Tensor<T>,
    params: &CurveParams<Tensor<T>>,
    consts: &CurveConstants,
) -> Result<Tensor<T>> {
    check_shapes(image.shape(), params.alpha.shape(), params.beta.shape())?;
    if params.beta.data().iter().any(|b| b.is_zero()) {
        return Err(Error::DivisionByZero("apply_aac_eager"));
    }
    let data = image
        .data()
        .iter()
        .zip(params.alpha.data())
        .zip(params.beta.data())
        .map(|((&i, &a), &b)| aac(params.kind, i, a, b, consts))
        .collect();
    Tensor::new(image.shape().to_vec(), data)
}
