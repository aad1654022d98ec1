//! Unsupervised training objectives.
//!
//! All image-domain squared norms are reduced as means over pixels so the
//! default weights behave the same at any resolution. The one exception is
//! the curve smoothness term, which sums channels before dividing by the
//! pixel count.

use std::fmt::Write as _;

use crate::curves::CurveParams;
use crate::error::{Error, Result};
use crate::retinex::{channel_averages, decompose, expect_rgb, illuminance_estimator};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Side of the SSIM window.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub reflectance: f64,
    pub white_balance: f64,
    pub illuminance: f64,
    pub smooth_alpha: f64,
    pub smooth_beta: f64,
    /// Weight of the SSIM term inside the denoising loss.
    pub ssim: f64,
    /// Weight of the gradient-matching term inside the denoising loss.
    pub gradient: f64,
    /// Expected illuminance level.
    pub target_level: f64,
    /// Divisor applied to the enhanced channel sum before it is compared
    /// with `target_level * E`. `1` is the literal channel sum, `3` turns it
    /// into a mean intensity.
    pub illuminance_scale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            reflectance: 20000.0,
            white_balance: 5.0,
            illuminance: 10.0,
            smooth_alpha: 20000.0,
            smooth_beta: 20000.0,
            ssim: 10.0,
            gradient: 40.0,
            target_level: 0.8,
            illuminance_scale: 3.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.reflectance,
            self.white_balance,
            self.illuminance,
            self.smooth_alpha,
            self.smooth_beta,
            self.ssim,
            self.gradient,
            self.target_level,
        ];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        if !(self.illuminance_scale > 0.0) {
            return Err(Error::InvalidArgument(
                "illuminance_scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Unweighted loss components of one step plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub rc: f64,
    pub wb: f64,
    pub il: f64,
    pub cs_alpha: f64,
    pub cs_beta: f64,
    pub dn: f64,
    pub total: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,rc,wb,il,cs,dn,total";

    /// Weighted sum of the components. `dn` enters unweighted since it
    /// carries its own internal weights.
    pub fn combine(
        rc: f64,
        wb: f64,
        il: f64,
        cs_alpha: f64,
        cs_beta: f64,
        dn: f64,
        w: &LossWeights,
    ) -> Self {
        let total = w.reflectance * rc
            + w.white_balance * wb
            + w.illuminance * il
            + w.smooth_alpha * cs_alpha
            + w.smooth_beta * cs_beta
            + dn;
        LossReport {
            rc,
            wb,
            il,
            cs_alpha,
            cs_beta,
            dn,
            total,
        }
    }

    /// Combined (unweighted) curve smoothness.
    pub fn cs(&self) -> f64 {
        self.cs_alpha + self.cs_beta
    }

    pub fn is_finite(&self) -> bool {
        [
            self.rc,
            self.wb,
            self.il,
            self.cs_alpha,
            self.cs_beta,
            self.dn,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub fn csv_row(&self, step: usize) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{step},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.rc,
            self.wb,
            self.il,
            self.cs(),
            self.dn,
            self.total
        );
        s
    }
}

/// Reflectance consistency: `sum_c mean_pixels (R_o^c - R_e^c)^2`.
pub fn loss_rc<T: Real>(g: &Graph<T>, orig: Var, enhanced: Var) -> Result<Var> {
    let [h, w] = expect_rgb(g, orig)?;
    let ro = decompose(g, orig)?.reflectance;
    let re = decompose(g, enhanced)?.reflectance;
    let sq = g.square(g.sub(ro, re)?);
    Ok(g.mul_scalar(g.sum(sq), T::lit(1.0 / (h * w) as f64)))
}

/// White balance: `sum_c (A_c - 1/3)^2`.
pub fn loss_wb<T: Real>(g: &Graph<T>, enhanced: Var) -> Result<Var> {
    let a = channel_averages(g, enhanced)?;
    let dev = g.add_scalar(a, T::lit(-1.0 / 3.0));
    Ok(g.sum(g.square(dev)))
}

/// Illuminance: `mean_pixels (y * E(R_o) - L_e / scale)^2`.
pub fn loss_il<T: Real>(
    g: &Graph<T>,
    orig: Var,
    enhanced: Var,
    target_level: f64,
    illuminance_scale: f64,
) -> Result<Var> {
    let ro = decompose(g, orig)?.reflectance;
    let e = illuminance_estimator(g, ro)?;
    let target = g.mul_scalar(e, T::lit(target_level));
    let le = decompose(g, enhanced)?.illuminance;
    let le = g.mul_scalar(le, T::lit(1.0 / illuminance_scale));
    Ok(g.mean(g.square(g.sub(target, le)?)))
}

/// Curve smoothness summed over `maps`; each `[C,H,W]` map contributes
/// `(1/N) sum_c ||grad map_c||^2` with `N = H * W`.
pub fn loss_cs<T: Real>(g: &Graph<T>, maps: &[Var]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &m in maps {
        let term = smoothness(g, m)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.unwrap_or_else(|| g.scalar(T::zero())))
}

fn smoothness<T: Real>(g: &Graph<T>, map: Var) -> Result<Var> {
    let shape = g.shape(map);
    let n = shape[shape.len().saturating_sub(2)..].iter().product::<usize>();
    let (dx, dy) = g.spatial_gradient(map)?;
    let energy = g.add(g.sum(g.square(dx)), g.sum(g.square(dy)))?;
    Ok(g.mul_scalar(energy, T::lit(1.0 / n as f64)))
}

/// `mean(dx^2) + mean(dy^2)` over all channels and pixels.
pub fn gradient_energy<T: Real>(g: &Graph<T>, x: Var) -> Result<Var> {
    let (dx, dy) = g.spatial_gradient(x)?;
    g.add(g.mean(g.square(dx)), g.mean(g.square(dy)))
}

/// Normalized 2-D Gaussian window, row-major `size * size`.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();
    taps.iter()
        .flat_map(|&a| taps.iter().map(move |&b| a * b))
        .collect()
}

fn blur<T: Real>(g: &Graph<T>, x: Var, window: Var) -> Result<Var> {
    let shape = g.shape(x);
    let [c, h, w] = shape[..] else {
        return Err(Error::Shape(format!("blur expects [C,H,W], got {shape:?}")));
    };
    let planes = g.reshape(x, vec![c, 1, h, w])?;
    g.conv2d(planes, window, None, 0)
}

/// Mean SSIM over channels and valid window positions; differentiable.
pub fn ssim<T: Real>(g: &Graph<T>, a: Var, b: Var) -> Result<Var> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb || sa.len() != 3 {
        return Err(Error::Shape(format!("ssim operands {sa:?} vs {sb:?}")));
    }
    if sa[1] < SSIM_WINDOW || sa[2] < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            sa[1], sa[2]
        )));
    }
    let kernel = gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
        .into_iter()
        .map(T::lit)
        .collect();
    let window = g.constant(Tensor::new(vec![1, 1, SSIM_WINDOW, SSIM_WINDOW], kernel)?);

    let mu_a = blur(g, a, window)?;
    let mu_b = blur(g, b, window)?;
    let e_aa = blur(g, g.square(a), window)?;
    let e_bb = blur(g, g.square(b), window)?;
    let e_ab = blur(g, g.mul(a, b)?, window)?;

    let mu_aa = g.square(mu_a);
    let mu_bb = g.square(mu_b);
    let mu_ab = g.mul(mu_a, mu_b)?;
    let var_a = g.sub(e_aa, mu_aa)?;
    let var_b = g.sub(e_bb, mu_bb)?;
    let cov = g.sub(e_ab, mu_ab)?;

    let (c1, c2) = (T::lit(SSIM_C1), T::lit(SSIM_C2));
    let num_l = g.add_scalar(g.mul_scalar(mu_ab, T::lit(2.0)), c1);
    let num_s = g.add_scalar(g.mul_scalar(cov, T::lit(2.0)), c2);
    let den_l = g.add_scalar(g.add(mu_aa, mu_bb)?, c1);
    let den_s = g.add_scalar(g.add(var_a, var_b)?, c2);
    let map = g.div(g.mul(num_l, num_s)?, g.mul(den_l, den_s)?)?;
    Ok(g.mean(map))
}

/// Denoising loss: `-w_s SSIM(I_e, I_d) + w_g ||grad I_e - grad I_d||^2 + ||grad I_d||^2`.
pub fn loss_dn<T: Real>(
    g: &Graph<T>,
    enhanced: Var,
    denoised: Var,
    w_ssim: f64,
    w_gradient: f64,
) -> Result<Var> {
    let s = ssim(g, enhanced, denoised)?;
    let diff = gradient_energy(g, g.sub(enhanced, denoised)?)?;
    let own = gradient_energy(g, denoised)?;
    let total = g.add(
        g.mul_scalar(s, T::lit(-w_ssim)),
        g.add(g.mul_scalar(diff, T::lit(w_gradient)), own)?,
    )?;
    Ok(total)
}

/// Loss components of one illuminance-adjustment step, still on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub rc: Var,
    pub wb: Var,
    pub il: Var,
    pub cs_alpha: Var,
    pub cs_beta: Var,
    pub dn: Option<Var>,
}

impl LossTerms {
    /// Builds every illuminance-adjustment term for one forward pass.
    pub fn illuminance_adjustment<T: Real>(
        g: &Graph<T>,
        orig: Var,
        enhanced: Var,
        trace: &[CurveParams<Var>],
        w: &LossWeights,
    ) -> Result<Self> {
        let alphas: Vec<Var> = trace.iter().map(|p| p.alpha).collect();
        let betas: Vec<Var> = trace.iter().map(|p| p.beta).collect();
        Ok(LossTerms {
            rc: loss_rc(g, orig, enhanced)?,
            wb: loss_wb(g, enhanced)?,
            il: loss_il(g, orig, enhanced, w.target_level, w.illuminance_scale)?,
            cs_alpha: loss_cs(g, &alphas)?,
            cs_beta: loss_cs(g, &betas)?,
            dn: None,
        })
    }

    /// Weighted total on the tape.
    pub fn total<T: Real>(&self, g: &Graph<T>, w: &LossWeights) -> Result<Var> {
        let parts = [
            (self.rc, w.reflectance),
            (self.wb, w.white_balance),
            (self.il, w.illuminance),
            (self.cs_alpha, w.smooth_alpha),
            (self.cs_beta, w.smooth_beta),
        ];
        let mut acc = g.scalar(T::zero());
        for (v, weight) in parts {
            acc = g.add(acc, g.mul_scalar(v, T::lit(weight)))?;
        }
        if let Some(dn) = self.dn {
            acc = g.add(acc, dn)?;
        }
        Ok(acc)
    }

    pub fn report<T: Real>(&self, g: &Graph<T>, w: &LossWeights) -> Result<LossReport> {
        let v = |x: Var| -> Result<f64> { Ok(g.value(x).item()?.as_f64()) };
        Ok(LossReport::combine(
            v(self.rc)?,
            v(self.wb)?,
            v(self.il)?,
            v(self.cs_alpha)?,
            v(self.cs_beta)?,
            self.dn.map(v).transpose()?.unwrap_or(0.0),
            w,
        ))
    }
}
