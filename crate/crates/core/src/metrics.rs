//! Evaluation metrics: PSNR, SSIM and mean CIEDE2000 color difference.
//!
//! Images are `[3,H,W]` sRGB tensors in `[0, 1]`. All arithmetic is `f64`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::losses::{gaussian_window, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
use crate::tensor::{Real, Tensor};

fn check_pair<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<[usize; 2]> {
    match (a.shape(), b.shape()) {
        ([3, h, w], s) if s == a.shape() => Ok([*h, *w]),
        (sa, sb) => Err(Error::Shape(format!(
            "metric operands must be equal [3,H,W] images, got {sa:?} and {sb:?}"
        ))),
    }
}

/// Peak signal-to-noise ratio with peak 1. Identical images give `f64::INFINITY`.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    check_pair(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

/// Separable "valid" Gaussian blur of one `h * w` plane.
fn blur_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|j| taps[j] * plane[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn gaussian_taps() -> Vec<f64> {
    // The 2-D window is an outer product; its first row over its first tap
    // recovers the 1-D taps exactly up to rounding.
    let win = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let row: Vec<f64> = win[..SSIM_WINDOW].to_vec();
    let s: f64 = row.iter().sum();
    row.iter().map(|v| v / s).collect()
}

/// Mean SSIM over channels and valid window positions, without a tape.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let [h, w] = check_pair(a, b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps();
    let plane = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let pa: Vec<f64> = a.data()[c * plane..(c + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let pb: Vec<f64> = b.data()[c * plane..(c + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let sq = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
        let mu_a = blur_valid(&pa, h, w, &taps);
        let mu_b = blur_valid(&pb, h, w, &taps);
        let e_aa = blur_valid(&sq(&pa, &pa), h, w, &taps);
        let e_bb = blur_valid(&sq(&pb, &pb), h, w, &taps);
        let e_ab = blur_valid(&sq(&pa, &pb), h, w, &taps);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            total += (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// CIE Lab color.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lab {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl Lab {
    pub fn new(l: f64, a: f64, b: f64) -> Self {
        Lab { l, a, b }
    }
}

const D65: [f64; 3] = [0.95047, 1.0, 1.08883];

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D * D * D {
        t.cbrt()
    } else {
        t / (3.0 * D * D) + 4.0 / 29.0
    }
}

/// sRGB in `[0, 1]` to Lab under D65.
pub fn srgb_to_lab(rgb: [f64; 3]) -> Lab {
    let [r, g, b] = rgb.map(srgb_to_linear);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let (fx, fy, fz) = (lab_f(x / D65[0]), lab_f(y / D65[1]), lab_f(z / D65[2]));
    Lab {
        l: 116.0 * fy - 16.0,
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

/// CIEDE2000 color difference with `kL = kC = kH = 1`.
pub fn delta_e_2000(p: Lab, q: Lab) -> f64 {
    use std::f64::consts::PI;
    let deg = |r: f64| r * 180.0 / PI;
    let rad = |d: f64| d * PI / 180.0;
    let pow7 = |v: f64| v.powi(7);

    let c1 = p.a.hypot(p.b);
    let c2 = q.a.hypot(q.b);
    let c_bar = (c1 + c2) / 2.0;
    let g = 0.5 * (1.0 - (pow7(c_bar) / (pow7(c_bar) + pow7(25.0))).sqrt());
    let a1 = (1.0 + g) * p.a;
    let a2 = (1.0 + g) * q.a;
    let c1p = a1.hypot(p.b);
    let c2p = a2.hypot(q.b);
    let hue = |b: f64, a: f64| {
        if a == 0.0 && b == 0.0 {
            0.0
        } else {
            deg(b.atan2(a)).rem_euclid(360.0)
        }
    };
    let h1 = hue(p.b, a1);
    let h2 = hue(q.b, a2);

    let dl = q.l - p.l;
    let dc = c2p - c1p;
    let dh = if c1p * c2p == 0.0 {
        0.0
    } else if (h2 - h1).abs() <= 180.0 {
        h2 - h1
    } else if h2 - h1 > 180.0 {
        h2 - h1 - 360.0
    } else {
        h2 - h1 + 360.0
    };
    let d_hue = 2.0 * (c1p * c2p).sqrt() * rad(dh / 2.0).sin();

    let l_bar = (p.l + q.l) / 2.0;
    let cp_bar = (c1p + c2p) / 2.0;
    let hp_bar = if c1p * c2p == 0.0 {
        h1 + h2
    } else if (h1 - h2).abs() <= 180.0 {
        (h1 + h2) / 2.0
    } else if h1 + h2 < 360.0 {
        (h1 + h2 + 360.0) / 2.0
    } else {
        (h1 + h2 - 360.0) / 2.0
    };
    let t = 1.0 - 0.17 * rad(hp_bar - 30.0).cos()
        + 0.24 * rad(2.0 * hp_bar).cos()
        + 0.32 * rad(3.0 * hp_bar + 6.0).cos()
        - 0.20 * rad(4.0 * hp_bar - 63.0).cos();
    let d_theta = 30.0 * (-((hp_bar - 275.0) / 25.0).powi(2)).exp();
    let rc = 2.0 * (pow7(cp_bar) / (pow7(cp_bar) + pow7(25.0))).sqrt();
    let sl = 1.0 + 0.015 * (l_bar - 50.0).powi(2) / (20.0 + (l_bar - 50.0).powi(2)).sqrt();
    let sc = 1.0 + 0.045 * cp_bar;
    let sh = 1.0 + 0.015 * cp_bar * t;
    let rt = -rad(2.0 * d_theta).sin() * rc;

    let (tl, tc, th) = (dl / sl, dc / sc, d_hue / sh);
    (tl * tl + tc * tc + th * th + rt * tc * th).sqrt()
}

/// Mean per-pixel CIEDE2000 between two sRGB images.
pub fn ciede2000<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let [h, w] = check_pair(a, b)?;
    let plane = h * w;
    if plane == 0 {
        return Ok(0.0);
    }
    let px = |t: &Tensor<T>, i: usize| {
        let d = t.data();
        [d[i].as_f64(), d[plane + i].as_f64(), d[2 * plane + i].as_f64()]
    };
    let sum: f64 = (0..plane)
        .map(|i| delta_e_2000(srgb_to_lab(px(a, i)), srgb_to_lab(px(b, i))))
        .sum();
    Ok(sum / plane as f64)
}

/// Metrics for one prediction / ground-truth pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub ciede2000: f64,
}

impl MetricReport {
    pub fn compute<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<Self> {
        Ok(MetricReport {
            psnr: psnr(pred, gt)?,
            ssim: ssim(pred, gt)?,
            ciede2000: ciede2000(pred, gt)?,
        })
    }

    /// Mean of each column. PSNR averages to `inf` if any row is `inf`.
    pub fn mean(rows: &[MetricReport]) -> Option<Self> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some(MetricReport {
            psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            ciede2000: rows.iter().map(|r| r.ciede2000).sum::<f64>() / n,
        })
    }
}

fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

/// CSV with a header, one row per file and a final `mean` row.
pub fn report_csv(rows: &[(String, MetricReport)]) -> String {
    let mut s = String::from("filename,psnr,ssim,ciede2000\n");
    let mut push = |name: &str, r: &MetricReport| {
        let _ = writeln!(
            s,
            "{name},{},{},{}",
            fmt_value(r.psnr),
            fmt_value(r.ssim),
            fmt_value(r.ciede2000)
        );
    };
    for (name, r) in rows {
        push(name, r);
    }
    let reports: Vec<MetricReport> = rows.iter().map(|(_, r)| *r).collect();
    if let Some(m) = MetricReport::mean(&reports) {
        push("mean", &m);
    }
    s
}
