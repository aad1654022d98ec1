//! Acceptance suite: one test per criterion, each printing a single
//! `PASS`/`FAIL` line with the measured value and its pinned tolerance.
//!
//! Run with `cargo test -p selfdace --test acceptance -- --nocapture`.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selfdace::curves::{
    apply_aac, apply_aac_eager, map_raw_to_params, CurveConstants, CurveKind, CurveParams,
};
use selfdace::losses::{
    gradient_energy, loss_cs, loss_dn, loss_il, loss_rc, loss_wb, ssim as ssim_loss, LossTerms,
    LossWeights,
};
use selfdace::metrics::{delta_e_2000, psnr, ssim, Lab};
use selfdace::network::{
    checkpoint, fuse, Block, BlockKind, ConvModule, DenoiseNet, DmArch, DnArch, IaBlock,
    ModelBundle, Variant,
};
use selfdace::noise::{inject_noise, pseudo_noise, NoiseConfig};
use selfdace::pipeline::{dataset_loss, save_png, train_ia, Dataset, TrainConfig};
use selfdace::retinex::{channel_averages, decompose, illuminance_estimator};
use selfdace::synthetic::dark_scene;
use selfdace::tensor::{Graph, Tensor, Var};

fn verdict(id: u32, title: &str, pass: bool, detail: &str) {
    println!("{} [{id}] {title}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} ({title}) failed: {detail}");
}

// ---------------------------------------------------------------------------
// 1. Gradient integrity
// ---------------------------------------------------------------------------

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const FD_INSTANCES: usize = 20;

type Scalar = Box<dyn Fn(&Graph<f64>, &[Var]) -> selfdace::Result<Var>>;

/// Fixed, non-trivial projection weights so a tensor output becomes a scalar
/// whose gradient exercises every output element.
fn probe(shape: &[usize], salt: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |i| (0.37 * i as f64 + salt).sin() + 0.25)
}

fn project(g: &Graph<f64>, v: Var, salt: f64) -> Var {
    let shape = g.shape(v);
    let w = g.constant(probe(&shape, salt));
    g.sum(g.mul(v, w).unwrap())
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Relative error between the tape gradient and central differences of `f`
/// with respect to every element of every input.
fn gradcheck(inputs: &[Tensor<f64>], f: &Scalar) -> f64 {
    let g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&g, &vars).unwrap();
    let out = if g.shape(out).iter().product::<usize>() == 1 {
        g.sum(out)
    } else {
        project(&g, out, 0.1)
    };
    g.backward(out).unwrap();
    let mut analytic = Vec::new();
    for &v in &vars {
        analytic.extend_from_slice(g.grad(v).unwrap().data());
    }

    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let g = Graph::<f64>::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&g, &vars).unwrap();
        let out = if g.shape(out).iter().product::<usize>() == 1 {
            g.sum(out)
        } else {
            project(&g, out, 0.1)
        };
        g.value(out).item().unwrap()
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut xs = inputs.to_vec();
    for k in 0..xs.len() {
        for j in 0..xs[k].len() {
            let x0 = xs[k].data()[j];
            xs[k].data_mut()[j] = x0 + FD_STEP;
            let fp = eval(&xs);
            xs[k].data_mut()[j] = x0 - FD_STEP;
            let fm = eval(&xs);
            xs[k].data_mut()[j] = x0;
            numeric.push((fp - fm) / (2.0 * FD_STEP));
        }
    }
    rel_err(&analytic, &numeric)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Values with magnitude in `[lo, hi]` and random sign, away from a kink at 0.
fn signed(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(lo..hi);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Values in `[-0.5, 1.5]` kept at least 0.01 away from the clamp corners.
fn off_corners(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| loop {
        let v: f64 = rng.random_range(-0.5..1.5);
        if v.abs() > 0.01 && (v - 1.0).abs() > 0.01 {
            break v;
        }
    })
}

/// Reflectance deviating from neutral by at least 0.01 in every channel,
/// so the estimator's absolute value is differentiable at the sample.
fn away_from_neutral(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| loop {
        let v: f64 = rng.random_range(0.0..0.8);
        if (v - 1.0 / 3.0).abs() > 0.01 {
            break v;
        }
    })
}

fn in_box(rng: &mut ChaCha8Rng, shape: &[usize], (lo, hi): (f64, f64)) -> Tensor<f64> {
    let pad = 0.02 * (hi - lo);
    uniform(rng, shape, lo + pad, hi - pad)
}

type Case = (&'static str, Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>>, Scalar);

fn case(
    name: &'static str,
    gen: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>> + 'static,
    f: impl Fn(&Graph<f64>, &[Var]) -> selfdace::Result<Var> + 'static,
) -> Case {
    (name, Box::new(gen), Box::new(f))
}

fn gradcheck_cases() -> Vec<Case> {
    let consts = CurveConstants::default();
    let w = LossWeights::default();
    let s = [3usize, 4, 5];
    let img = [3usize, 6, 7];
    let big = [3usize, 12, 13];
    let mut cases = vec![
        case("add", move |r| vec![uniform(r, &s, -1.0, 1.0), uniform(r, &s, -1.0, 1.0)], |g, v| g.add(v[0], v[1])),
        case("add broadcast", move |r| vec![uniform(r, &s, -1.0, 1.0), uniform(r, &s[1..], -1.0, 1.0)], |g, v| g.add(v[0], v[1])),
        case("sub", move |r| vec![uniform(r, &s, -1.0, 1.0), uniform(r, &s, -1.0, 1.0)], |g, v| g.sub(v[0], v[1])),
        case("sub broadcast", move |r| vec![uniform(r, &s[1..], -1.0, 1.0), uniform(r, &s, -1.0, 1.0)], |g, v| g.sub(v[0], v[1])),
        case("mul", move |r| vec![uniform(r, &s, -1.0, 1.0), uniform(r, &s, -1.0, 1.0)], |g, v| g.mul(v[0], v[1])),
        case("mul broadcast", move |r| vec![uniform(r, &s, -1.0, 1.0), uniform(r, &[1], -1.0, 1.0)], |g, v| g.mul(v[0], v[1])),
        case("div", move |r| vec![uniform(r, &s, -1.0, 1.0), signed(r, &s, 0.5, 2.0)], |g, v| g.div(v[0], v[1])),
        case("div broadcast", move |r| vec![uniform(r, &s, -1.0, 1.0), uniform(r, &s[1..], 0.5, 2.0)], |g, v| g.div(v[0], v[1])),
        case("add_scalar", move |r| vec![uniform(r, &s, -1.0, 1.0)], |g, v| Ok(g.add_scalar(v[0], 0.7))),
        case("mul_scalar", move |r| vec![uniform(r, &s, -1.0, 1.0)], |g, v| Ok(g.mul_scalar(v[0], -1.3))),
        case("neg", move |r| vec![uniform(r, &s, -1.0, 1.0)], |g, v| Ok(g.neg(v[0]))),
        case("rsub_scalar", move |r| vec![uniform(r, &s, -1.0, 1.0)], |g, v| Ok(g.rsub_scalar(0.4, v[0]))),
        case("sigmoid", move |r| vec![uniform(r, &s, -3.0, 3.0)], |g, v| Ok(g.sigmoid(v[0]))),
        case("tanh", move |r| vec![uniform(r, &s, -2.0, 2.0)], |g, v| Ok(g.tanh(v[0]))),
        case("square", move |r| vec![uniform(r, &s, -2.0, 2.0)], |g, v| Ok(g.square(v[0]))),
        case("sqrt", move |r| vec![uniform(r, &s, 0.2, 2.0)], |g, v| Ok(g.sqrt(v[0]))),
        case("abs", move |r| vec![signed(r, &s, 0.05, 1.0)], |g, v| Ok(g.abs(v[0]))),
        case("clamp01", move |r| vec![off_corners(r, &s)], |g, v| Ok(g.clamp01(v[0]))),
        case("sum", move |r| vec![uniform(r, &s, -1.0, 1.0)], |g, v| Ok(g.sum(v[0]))),
        case("mean", move |r| vec![uniform(r, &s, -1.0, 1.0)], |g, v| Ok(g.mean(v[0]))),
        case("sum_leading", move |r| vec![uniform(r, &s, -1.0, 1.0)], |g, v| g.sum_leading(v[0])),
        case("sum_per_channel", move |r| vec![uniform(r, &s, -1.0, 1.0)], |g, v| g.sum_per_channel(v[0])),
        case("reshape", move |r| vec![uniform(r, &s, -1.0, 1.0)], |g, v| g.reshape(v[0], vec![4, 15])),
        case(
            "spatial_gradient",
            move |r| vec![uniform(r, &s, -1.0, 1.0)],
            |g, v| {
                let (dx, dy) = g.spatial_gradient(v[0])?;
                g.add(project(g, dx, 0.3), project(g, dy, 0.9))
            },
        ),
        case(
            "conv2d 3x3 pad 1",
            move |r| vec![uniform(r, &[3, 5, 6], -1.0, 1.0), uniform(r, &[4, 3, 3, 3], -0.5, 0.5), uniform(r, &[4], -0.5, 0.5)],
            |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1),
        ),
        case(
            "conv2d 1x1",
            move |r| vec![uniform(r, &[3, 4, 5], -1.0, 1.0), uniform(r, &[3, 3, 1, 1], -0.5, 0.5), uniform(r, &[3], -0.5, 0.5)],
            |g, v| g.conv2d(v[0], v[1], Some(v[2]), 0),
        ),
        case(
            "conv2d batched valid",
            move |r| vec![uniform(r, &[2, 1, 6, 7], -1.0, 1.0), uniform(r, &[1, 1, 3, 3], -0.5, 0.5)],
            |g, v| g.conv2d(v[0], v[1], None, 0),
        ),
        case(
            "retinex reflectance",
            move |r| vec![uniform(r, &img, 0.02, 1.0)],
            |g, v| Ok(decompose(g, v[0])?.reflectance),
        ),
        case(
            "retinex illuminance",
            move |r| vec![uniform(r, &img, 0.0, 1.0)],
            |g, v| Ok(decompose(g, v[0])?.illuminance),
        ),
        case(
            "illuminance estimator",
            move |r| vec![away_from_neutral(r, &img)],
            |g, v| illuminance_estimator(g, v[0]),
        ),
        case("channel averages", move |r| vec![uniform(r, &img, 0.02, 1.0)], |g, v| channel_averages(g, v[0])),
        case(
            "loss rc",
            move |r| vec![uniform(r, &img, 0.02, 1.0), uniform(r, &img, 0.02, 1.0)],
            |g, v| loss_rc(g, v[0], v[1]),
        ),
        case("loss wb", move |r| vec![uniform(r, &img, 0.02, 1.0)], |g, v| loss_wb(g, v[0])),
        case(
            "loss il (scale 3)",
            move |r| vec![uniform(r, &img, 0.02, 1.0), uniform(r, &img, 0.0, 1.0)],
            |g, v| {
                loss_il(g, v[0], v[1], 0.8, 3.0)
            },
        ),
        case(
            "loss il (scale 1)",
            move |r| vec![uniform(r, &img, 0.02, 1.0), uniform(r, &img, 0.0, 1.0)],
            |g, v| loss_il(g, v[0], v[1], 0.8, 1.0),
        ),
        case(
            "loss cs",
            move |r| vec![uniform(r, &img, 0.0, 1.0), uniform(r, &img, 0.3, 1.0)],
            |g, v| loss_cs(g, &[v[0], v[1]]),
        ),
        case("gradient energy", move |r| vec![uniform(r, &img, 0.0, 1.0)], |g, v| gradient_energy(g, v[0])),
        case(
            "ssim",
            move |r| vec![uniform(r, &big, 0.0, 1.0), uniform(r, &big, 0.0, 1.0)],
            |g, v| ssim_loss(g, v[0], v[1]),
        ),
        case(
            "loss dn",
            move |r| vec![uniform(r, &big, 0.0, 1.0), uniform(r, &big, 0.0, 1.0)],
            move |g, v| loss_dn(g, v[0], v[1], w.ssim, w.gradient),
        ),
    ];
    for kind in [CurveKind::Laec, CurveKind::Hasc] {
        let name = match kind {
            CurveKind::Laec => "curve laec",
            CurveKind::Hasc => "curve hasc",
        };
        cases.push(case(
            name,
            move |r| {
                vec![
                    uniform(r, &s, 0.0, 1.0),
                    in_box(r, &s, kind.alpha_range()),
                    in_box(r, &s, kind.beta_range(&consts)),
                ]
            },
            move |g, v| {
                let p = CurveParams {
                    alpha: v[1],
                    beta: v[2],
                    kind,
                };
                apply_aac(g, v[0], &p, &consts)
            },
        ));
        let name = match kind {
            CurveKind::Laec => "raw maps -> laec",
            CurveKind::Hasc => "raw maps -> hasc",
        };
        cases.push(case(
            name,
            move |r| vec![uniform(r, &s, 0.0, 1.0), uniform(r, &s, -3.0, 3.0), uniform(r, &s, -3.0, 3.0)],
            move |g, v| {
                let p = map_raw_to_params(g, v[1], v[2], kind, &consts);
                apply_aac(g, v[0], &p, &consts)
            },
        ));
    }
    cases
}

/// Central-difference check of a scalar `loss(model)` against the tape
/// gradient of the tensors returned by `tensors`. `coords` limits the check
/// to that many randomly chosen scalars.
fn gradcheck_model<M: Clone>(
    model: &M,
    tensors: fn(&mut M) -> Vec<&mut Tensor<f64>>,
    loss: &dyn Fn(&M, &Graph<f64>) -> (Var, Vec<Var>),
    coords: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> (f64, usize) {
    let g = Graph::<f64>::new();
    let (l, vars) = loss(model, &g);
    g.backward(l).unwrap();
    let grads: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad(v).unwrap()).collect();
    let mut all: Vec<(usize, usize)> = grads
        .iter()
        .enumerate()
        .flat_map(|(t, gr)| (0..gr.len()).map(move |j| (t, j)))
        .collect();
    if let Some(n) = coords {
        all.shuffle(rng);
        all.truncate(n);
    }
    let value = |m: &M| {
        let g = Graph::<f64>::new();
        let (l, _) = loss(m, &g);
        g.value(l).item().unwrap()
    };
    let mut analytic = Vec::with_capacity(all.len());
    let mut numeric = Vec::with_capacity(all.len());
    let mut m = model.clone();
    for &(t, j) in &all {
        analytic.push(grads[t].data()[j]);
        let x0 = tensors(&mut m)[t].data()[j];
        tensors(&mut m)[t].data_mut()[j] = x0 + FD_STEP;
        let fp = value(&m);
        tensors(&mut m)[t].data_mut()[j] = x0 - FD_STEP;
        let fm = value(&m);
        tensors(&mut m)[t].data_mut()[j] = x0;
        numeric.push((fp - fm) / (2.0 * FD_STEP));
    }
    (rel_err(&analytic, &numeric), all.len())
}

type EndToEnd = (ModelBundle<f64>, Tensor<f64>);

fn e2e_tensors(m: &mut EndToEnd) -> Vec<&mut Tensor<f64>> {
    let (bundle, image) = m;
    let mut out = bundle.ia_tensors_mut();
    out.push(image);
    out
}

/// Total training loss through `forward_train`, with a fixed module order.
fn e2e_loss(m: &EndToEnd, g: &Graph<f64>) -> (Var, Vec<Var>) {
    let (bundle, image) = m;
    let w = LossWeights::default();
    let bound = bundle.bind_ia(g).unwrap();
    let mut params = bound.params();
    let x = g.param(image.clone());
    params.push(x);
    let mut order = ChaCha8Rng::seed_from_u64(5);
    let (enhanced, trace) = bundle.forward_train(g, &bound, x, &mut order).unwrap();
    let terms = LossTerms::illuminance_adjustment(g, x, enhanced, &trace, &w).unwrap();
    (terms.total(g, &w).unwrap(), params)
}

fn dn_tensors(m: &mut (DenoiseNet<f64>, Tensor<f64>, Tensor<f64>)) -> Vec<&mut Tensor<f64>> {
    m.0.tensors_mut()
}

fn dn_loss(m: &(DenoiseNet<f64>, Tensor<f64>, Tensor<f64>), g: &Graph<f64>) -> (Var, Vec<Var>) {
    let (dn, noisy, clean) = m;
    let w = LossWeights::default();
    let bound = dn.bind(g);
    let denoised = bound.denoise(g, g.constant(noisy.clone())).unwrap();
    let loss = loss_dn(g, g.constant(clean.clone()), denoised, w.ssim, w.gradient).unwrap();
    (loss, bound.params())
}

#[test]
fn criterion_01_gradient_integrity() {
    let t = Instant::now();
    let mut worst: (f64, &str) = (0.0, "");
    let mut failures = Vec::new();
    let cases = gradcheck_cases();
    for (i, (name, gen, f)) in cases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
        for _ in 0..FD_INSTANCES {
            let e = gradcheck(&gen(&mut rng), f);
            if e > worst.0 {
                worst = (e, name);
            }
            if !(e < FD_TOL) {
                failures.push(format!("{name}: {e:.2e}"));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut e2e = Vec::new();
    for (variant, coords) in [(Variant::Tiny, None), (Variant::Small, Some(60))] {
        let mut bundle = ModelBundle::<f32>::new(variant, 11).cast::<f64>();
        bundle.dn = None;
        let image = dark_scene(16, 16, 3).cast::<f64>();
        let (e, n) = gradcheck_model(&(bundle, image), e2e_tensors, &e2e_loss, coords, &mut rng);
        e2e.push(format!("{variant:?} {e:.2e} over {n} scalars"));
        if !(e < FD_TOL) {
            failures.push(format!("forward_train {variant:?}: {e:.2e}"));
        }
    }
    for seed in 0..3u64 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut dn = DenoiseNet::<f32>::init(DnArch::compact(), &mut r).cast::<f64>();
        // A live output layer and mid-range pixels keep the final clamp inactive.
        let out = dn.layers.last_mut().unwrap();
        let shape = out.weight.shape().to_vec();
        out.weight = uniform(&mut r, &shape, -0.02, 0.02);
        let clean = uniform(&mut r, &[3, 12, 12], 0.25, 0.75);
        let noisy = inject_noise(&clean, &NoiseConfig::fixed(5.0), &mut r).unwrap().0;
        let (e, _) = gradcheck_model(&(dn, noisy, clean), dn_tensors, &dn_loss, None, &mut rng);
        if !(e < FD_TOL) {
            failures.push(format!("denoiser: {e:.2e}"));
        }
    }

    let secs = t.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 60.0;
    verdict(
        1,
        "gradient integrity",
        pass,
        &format!(
            "{} ops x {FD_INSTANCES} instances, worst rel err {:.2e} ({}) < {FD_TOL:e}; end-to-end {}; {secs:.1} s < 60 s{}",
            cases.len(),
            worst.0,
            worst.1,
            e2e.join(", "),
            if failures.is_empty() { String::new() } else { format!("; failures: {}", failures.join("; ")) }
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. Curve correctness
// ---------------------------------------------------------------------------

/// Scalar curve written directly from its definition.
fn curve_oracle(kind: CurveKind, i: f64, alpha: f64, beta: f64) -> f64 {
    let (k, delta) = (15.0, 0.1);
    let gate = |x: f64| 1.0 / (1.0 + (-x).exp());
    let c = match kind {
        CurveKind::Laec => gate(k * (beta - i - delta)) * i * (beta - i),
        CurveKind::Hasc => gate(k * (i - beta - delta)) * (1.0 - i) * (i - beta),
    };
    i + alpha / beta * c
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect()
}

#[test]
fn criterion_02_curve_correctness() {
    let consts = CurveConstants::default();
    let mut worst_tape: f64 = 0.0;
    let mut worst_eager: f64 = 0.0;
    let mut exact = true;
    for kind in [CurveKind::Laec, CurveKind::Hasc] {
        let (alo, ahi) = kind.alpha_range();
        let (blo, bhi) = kind.beta_range(&consts);
        let is = linspace(0.0, 1.0, 101);
        let alphas = linspace(alo, ahi, 11);
        let betas = linspace(blo, bhi, 11);
        let n = is.len() * alphas.len() * betas.len();
        let (mut iv, mut av, mut bv) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for &i in &is {
            for &a in &alphas {
                for &b in &betas {
                    iv.push(i);
                    av.push(a);
                    bv.push(b);
                }
            }
        }
        let shape = vec![1, is.len(), alphas.len() * betas.len()];
        let image = Tensor::new(shape.clone(), iv.clone()).unwrap();
        let alpha = Tensor::new(shape.clone(), av.clone()).unwrap();
        let beta = Tensor::new(shape.clone(), bv.clone()).unwrap();

        let g = Graph::<f64>::new();
        let p = CurveParams {
            alpha: g.constant(alpha.clone()),
            beta: g.constant(beta.clone()),
            kind,
        };
        let tape = g.value(apply_aac(&g, g.constant(image.clone()), &p, &consts).unwrap());
        let eager = apply_aac_eager(
            &image.cast::<f32>(),
            &CurveParams {
                alpha: alpha.cast::<f32>(),
                beta: beta.cast::<f32>(),
                kind,
            },
            &consts,
        )
        .unwrap();
        for j in 0..n {
            let want = curve_oracle(kind, iv[j], av[j], bv[j]);
            worst_tape = worst_tape.max((tape.data()[j] - want).abs());
            worst_eager = worst_eager.max((eager.data()[j] as f64 - want).abs());
        }

        // alpha = 0 leaves every input untouched.
        let zero = Tensor::zeros(shape.clone());
        let id = apply_aac_eager(
            &image,
            &CurveParams {
                alpha: zero.clone(),
                beta: beta.clone(),
                kind,
            },
            &consts,
        )
        .unwrap();
        let g = Graph::<f64>::new();
        let p = CurveParams {
            alpha: g.constant(zero),
            beta: g.constant(beta.clone()),
            kind,
        };
        let id_tape = g.value(apply_aac(&g, g.constant(image.clone()), &p, &consts).unwrap());
        exact &= id.data() == image.data() && id_tape.data() == image.data();

        // I = beta is a fixed point for every alpha.
        let fixed = apply_aac_eager(
            &beta,
            &CurveParams {
                alpha: alpha.clone(),
                beta: beta.clone(),
                kind,
            },
            &consts,
        )
        .unwrap();
        let g = Graph::<f64>::new();
        let p = CurveParams {
            alpha: g.constant(alpha.clone()),
            beta: g.constant(beta.clone()),
            kind,
        };
        let fixed_tape = g.value(apply_aac(&g, g.constant(beta.clone()), &p, &consts).unwrap());
        exact &= fixed.data() == beta.data() && fixed_tape.data() == beta.data();
    }
    let pass = worst_tape <= 1e-6 && worst_eager <= 1e-6 && exact;
    verdict(
        2,
        "curve correctness",
        pass,
        &format!(
            "101x11x11 grid per kind, max |err| tape {worst_tape:.2e}, eager f32 {worst_eager:.2e} (<= 1e-6); identity and fixed point exact: {exact}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Fusion
// ---------------------------------------------------------------------------

fn random_block(kind: BlockKind, arch: DmArch, k: usize, seed: u64) -> Block<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Block {
        kind,
        modules: (0..k).map(|_| ConvModule::init(arch, &mut rng)).collect(),
    }
}

/// Applies `module` `times` times with the eager curve, as self-looping inference does.
fn loop_module(module: &ConvModule<f32>, kind: CurveKind, times: usize, image: &Tensor<f32>) -> Tensor<f32> {
    let consts = CurveConstants::default();
    let mut x = image.clone();
    for _ in 0..times {
        let (ra, rb) = module.forward(&x).unwrap();
        let p = selfdace::curves::map_raw_to_params_eager(&ra, &rb, kind, &consts);
        x = apply_aac_eager(&x, &p, &consts).unwrap();
    }
    x
}

#[test]
fn criterion_03_fusion() {
    let mut worst_mean: f64 = 0.0;
    for (arch, seed) in [(DmArch::Tiny, 1), (DmArch::default(), 2)] {
        let block = random_block(BlockKind::Llae, arch, 9, seed);
        let fused = fuse(&block).unwrap();
        let named = fused.module.named_tensors();
        for (idx, (_, t)) in named.iter().enumerate() {
            for (j, &v) in t.data().iter().enumerate() {
                let mean = block
                    .modules
                    .iter()
                    .map(|m| m.named_tensors()[idx].1.data()[j] as f64)
                    .sum::<f64>()
                    / 9.0;
                let tol = f32::EPSILON as f64 * mean.abs().max(1e-30);
                worst_mean = worst_mean.max((v as f64 - mean).abs() / tol);
            }
        }
    }

    // K identical modules fuse back into that module and loop it K times.
    let image = dark_scene(24, 32, 9);
    let mut identical = true;
    for kind in [BlockKind::Llae, BlockKind::Hlas] {
        let one = random_block(kind, DmArch::Tiny, 1, 3).modules.remove(0);
        let k = kind.default_modules();
        let fused = fuse(&Block {
            kind,
            modules: vec![one.clone(); k],
        })
        .unwrap();
        identical &= fused.module == one && fused.iterations == k;
        let looped = loop_module(&one, kind.curve_kind(), k, &image);
        let via_fused = loop_module(&fused.module, kind.curve_kind(), fused.iterations, &image);
        identical &= looped.data() == via_fused.data();
    }

    // forward_fused does not depend on the source module order.
    let mut ordered = true;
    for variant in [Variant::Tiny, Variant::Small] {
        let bundle = ModelBundle::<f32>::new(variant, 21);
        let base = bundle.fuse().unwrap().forward_fused(&image, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3 {
            let mut shuffled = bundle.clone();
            for block in [&mut shuffled.llae, &mut shuffled.hlas] {
                if let IaBlock::Distinct(b) = block {
                    b.modules.shuffle(&mut rng);
                }
            }
            let out = shuffled.fuse().unwrap().forward_fused(&image, false).unwrap();
            ordered &= out.data() == base.data();
        }
    }

    let pass = worst_mean <= 1.0 && identical && ordered;
    verdict(
        3,
        "fusion",
        pass,
        &format!(
            "fused = mean within {worst_mean:.2} ulp (<= 1 ulp); identical modules bitwise: {identical}; order invariant bitwise: {ordered}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. Parameter budgets
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_parameter_budgets() {
    let count = |v| ModelBundle::<f32>::new(v, 0).fuse().unwrap().count_params();
    let (tiny, small, standard) = (count(Variant::Tiny), count(Variant::Small), count(Variant::Standard));
    let rel = |n: usize, target: f64| (n as f64 - target).abs() / target;
    let pass = tiny <= 400 && rel(small, 23_000.0) <= 0.10 && rel(standard, 654_000.0) <= 0.10;
    verdict(
        4,
        "parameter budgets",
        pass,
        &format!(
            "tiny {tiny} (<= 400), small {small} ({:+.1}% of 23,000, within 10%), standard {standard} ({:+.1}% of 654,000, within 10%)",
            100.0 * (small as f64 / 23_000.0 - 1.0),
            100.0 * (standard as f64 / 654_000.0 - 1.0)
        ),
    );
}

// ---------------------------------------------------------------------------
// 5. Smoke training
// ---------------------------------------------------------------------------

/// Tiny variant, 200 plain momentum-SGD steps, fixed seed.
fn smoke_config() -> TrainConfig {
    TrainConfig {
        variant: Variant::Tiny,
        resize: (128, 128),
        epochs_ia: 200,
        max_steps: Some(200),
        learning_rate: 1e-3,
        momentum: 0.9,
        seed: 7,
        ..TrainConfig::default()
    }
}

fn fresh_tiny(cfg: &TrainConfig) -> ModelBundle {
    let mut b = ModelBundle::new(cfg.variant, cfg.seed);
    b.curves = cfg.curve_constants();
    b.dn = None;
    b
}

#[test]
fn criterion_05_smoke_training() {
    let t = Instant::now();
    let cfg = smoke_config();
    let images: Vec<Tensor<f32>> = (0..8).map(|i| dark_scene(128, 128, i)).collect();
    let before = dataset_loss(&fresh_tiny(&cfg), &images, &cfg.weights, 0).unwrap();
    let trained = train_ia(&cfg, &images).unwrap();
    let after = dataset_loss(&trained.model, &images, &cfg.weights, 0).unwrap();
    let finite = before.is_finite() && after.is_finite() && trained.reports.iter().all(|r| r.is_finite());
    let ratio = after.total / before.total;

    let fused = trained.model.fuse().unwrap();
    let mut brighter = 0;
    let (mut lin, mut lout) = (0.0, 0.0);
    for img in &images {
        let out = fused.forward_fused(img, false).unwrap();
        finite_check(&out);
        let (a, b) = (img.mean() as f64, out.mean() as f64);
        brighter += usize::from(b > a);
        lin += a / images.len() as f64;
        lout += b / images.len() as f64;
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = finite && ratio <= 0.5 && lout > lin && brighter == images.len() && secs < 300.0;
    verdict(
        5,
        "smoke training",
        pass,
        &format!(
            "dataset loss {:.4} -> {:.4} (ratio {ratio:.3} <= 0.5); mean intensity {lin:.4} -> {lout:.4}, brighter on {brighter}/8; finite: {finite}; {secs:.1} s < 300 s",
            before.total, after.total
        ),
    );
}

fn finite_check(t: &Tensor<f32>) {
    assert!(t.all_finite(), "non-finite enhanced output");
}

// ---------------------------------------------------------------------------
// 6. Paired sanity
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_paired_sanity() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/pairs");
    let dataset = Dataset::from_dir(root.join("low"))
        .unwrap()
        .with_ground_truth(root.join("normal"))
        .unwrap();
    let cfg = smoke_config();
    let images = dataset.training_images(cfg.resize).unwrap();
    let trained = train_ia(&cfg, &images).unwrap();
    let fused = trained.model.fuse().unwrap();

    let mut gains = Vec::new();
    for (img, gt) in images.iter().zip(dataset.ground_truth().unwrap()) {
        let base = gt.evaluate(img).unwrap().psnr;
        let out = gt.evaluate(&fused.forward_fused(img, false).unwrap()).unwrap().psnr;
        gains.push((base, out));
    }
    let passing = gains.iter().filter(|(b, o)| o - b >= 2.0).count();
    let detail = gains
        .iter()
        .map(|(b, o)| format!("{b:.2} -> {o:.2} dB ({:+.2})", o - b))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        6,
        "paired sanity",
        passing >= 3,
        &format!("{passing}/4 pairs gain >= 2 dB (need >= 3): {detail}"),
    );
}

// ---------------------------------------------------------------------------
// 7. Noise model
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_noise_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let black = Tensor::<f64>::zeros(vec![3, 250, 400]);
    let mut worst: f64 = 0.0;
    let mut stds = Vec::new();
    for sigma in [1.0, 3.0, 5.0] {
        let (noise, _) = pseudo_noise(&black, &NoiseConfig::fixed(sigma), &mut rng).unwrap();
        let plane = 250 * 400;
        for c in 0..3 {
            let v = &noise.data()[c * plane..(c + 1) * plane];
            let mean = v.iter().sum::<f64>() / plane as f64;
            let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (plane - 1) as f64).sqrt();
            let want = sigma / 255.0;
            worst = worst.max((std - want).abs() / want);
            stds.push(std * 255.0);
        }
    }
    let white = Tensor::<f64>::full(vec![3, 64, 64], 1.0);
    let (noise, _) = pseudo_noise(&white, &NoiseConfig::fixed(5.0), &mut rng).unwrap();
    let (noisy, _) = inject_noise(&white, &NoiseConfig::fixed(5.0), &mut rng).unwrap();
    let zero_on_white = noise.data().iter().all(|&v| v == 0.0) && noisy.data() == white.data();
    let pass = worst < 0.05 && zero_on_white;
    verdict(
        7,
        "noise model",
        pass,
        &format!(
            "sigma 1/3/5 on black, 100000 samples per channel, worst relative std error {:.2}% (< 5%); zero noise on white: {zero_on_white}",
            100.0 * worst
        ),
    );
}

// ---------------------------------------------------------------------------
// 8. Metrics
// ---------------------------------------------------------------------------

/// Direct 2-D sliding-window SSIM: 11x11 Gaussian (sigma 1.5), valid
/// positions only, averaged over channels.
fn ssim_reference(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let n = 11;
    let mut win = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let (dy, dx) = (y as f64 - 5.0, x as f64 - 5.0);
            win[y * n + x] = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let at = |t: &Tensor<f64>, ch: usize, y: usize, x: usize| t.data()[ch * h * w + y * w + x];
    let mut acc = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        for y0 in 0..=h - n {
            for x0 in 0..=w - n {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in 0..n {
                    for x in 0..n {
                        let k = win[y * n + x];
                        let (p, q) = (at(a, ch, y0 + y, x0 + x), at(b, ch, y0 + y, x0 + x));
                        ma += k * p;
                        mb += k * q;
                        saa += k * p * p;
                        sbb += k * q * q;
                        sab += k * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    acc / count as f64
}

/// (L1, a1, b1, L2, a2, b2, expected difference)
const CIEDE2000_PAIRS: [[f64; 7]; 34] = [
    [50.0000, 2.6772, -79.7751, 50.0000, 0.0000, -82.7485, 2.0425],
    [50.0000, 3.1571, -77.2803, 50.0000, 0.0000, -82.7485, 2.8615],
    [50.0000, 2.8361, -74.0200, 50.0000, 0.0000, -82.7485, 3.4412],
    [50.0000, -1.3802, -84.2814, 50.0000, 0.0000, -82.7485, 1.0000],
    [50.0000, -1.1848, -84.8006, 50.0000, 0.0000, -82.7485, 1.0000],
    [50.0000, -0.9009, -85.5211, 50.0000, 0.0000, -82.7485, 1.0000],
    [50.0000, 0.0000, 0.0000, 50.0000, -1.0000, 2.0000, 2.3669],
    [50.0000, -1.0000, 2.0000, 50.0000, 0.0000, 0.0000, 2.3669],
    [50.0000, 2.4900, -0.0010, 50.0000, -2.4900, 0.0009, 7.1792],
    [50.0000, 2.4900, -0.0010, 50.0000, -2.4900, 0.0010, 7.1792],
    [50.0000, 2.4900, -0.0010, 50.0000, -2.4900, 0.0011, 7.2195],
    [50.0000, 2.4900, -0.0010, 50.0000, -2.4900, 0.0012, 7.2195],
    [50.0000, -0.0010, 2.4900, 50.0000, 0.0009, -2.4900, 4.8045],
    [50.0000, -0.0010, 2.4900, 50.0000, 0.0010, -2.4900, 4.8045],
    [50.0000, -0.0010, 2.4900, 50.0000, 0.0011, -2.4900, 4.7461],
    [50.0000, 2.5000, 0.0000, 50.0000, 0.0000, -2.5000, 4.3065],
    [50.0000, 2.5000, 0.0000, 73.0000, 25.0000, -18.0000, 27.1492],
    [50.0000, 2.5000, 0.0000, 61.0000, -5.0000, 29.0000, 22.8977],
    [50.0000, 2.5000, 0.0000, 56.0000, -27.0000, -3.0000, 31.9030],
    [50.0000, 2.5000, 0.0000, 58.0000, 24.0000, 15.0000, 19.4535],
    [50.0000, 2.5000, 0.0000, 50.0000, 3.1736, 0.5854, 1.0000],
    [50.0000, 2.5000, 0.0000, 50.0000, 3.2972, 0.0000, 1.0000],
    [50.0000, 2.5000, 0.0000, 50.0000, 1.8634, 0.5757, 1.0000],
    [50.0000, 2.5000, 0.0000, 50.0000, 3.2592, 0.3350, 1.0000],
    [60.2574, -34.0099, 36.2677, 60.4626, -34.1751, 39.4387, 1.2644],
    [63.0109, -31.0961, -5.8663, 62.8187, -29.7946, -4.0864, 1.2630],
    [61.2901, 3.7196, -5.3901, 61.4292, 2.2480, -4.9620, 1.8731],
    [35.0831, -44.1164, 3.7933, 35.0232, -40.0716, 1.5901, 1.8645],
    [22.7233, 20.0904, -46.6940, 23.0331, 14.9730, -42.5619, 2.0373],
    [36.4612, 47.8580, 18.3852, 36.2715, 50.5065, 21.2231, 1.4146],
    [90.8027, -2.0831, 1.4410, 91.1528, -1.6435, 0.0447, 1.4441],
    [90.9257, -0.5406, -0.9208, 88.6381, -0.8985, -0.7239, 1.5381],
    [6.7747, -0.2908, -2.4247, 5.8714, -0.0985, -2.2286, 0.6377],
    [2.0776, 0.0795, -1.1350, 0.9033, -0.0636, -0.5514, 0.9082],
];

#[test]
fn criterion_08_metrics() {
    // PSNR closed forms.
    let a = Tensor::<f64>::full(vec![3, 8, 8], 0.25);
    let mut psnr_err: f64 = 0.0;
    let same = psnr(&a, &a).unwrap();
    for d in [0.1, 0.05, 0.5] {
        let b = a.map(|v| v + d);
        psnr_err = psnr_err.max((psnr(&a, &b).unwrap() - (-20.0 * f64::log10(d))).abs());
    }
    let zeros = Tensor::<f64>::zeros(vec![3, 4, 4]);
    let ones = Tensor::<f64>::full(vec![3, 4, 4], 1.0);
    psnr_err = psnr_err.max(psnr(&zeros, &ones).unwrap().abs());
    // Half the pixels off by d: MSE = d^2 / 2.
    let half = Tensor::<f64>::from_fn(vec![3, 4, 4], |i| if i % 2 == 0 { 0.2 } else { 0.0 });
    psnr_err = psnr_err.max((psnr(&zeros, &half).unwrap() - 10.0 * f64::log10(2.0 / 0.04)).abs());
    let psnr_ok = same == f64::INFINITY && psnr_err <= 1e-6;

    // SSIM against the direct sliding-window reference.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ssim_err: f64 = 0.0;
    let mut self_err: f64 = 0.0;
    for i in 0..6 {
        let x = dark_scene(20 + i, 24, i as u64).cast::<f64>();
        let jitter = uniform(&mut rng, x.shape(), -0.05, 0.05);
        let y = x.zip_map(&jitter, |v, j| (v + j).clamp(0.0, 1.0)).unwrap();
        let z = uniform(&mut rng, &[3, 16, 19], 0.0, 1.0);
        let zz = uniform(&mut rng, &[3, 16, 19], 0.0, 1.0);
        for (p, q) in [(&x, &y), (&z, &zz)] {
            let want = ssim_reference(p, q);
            ssim_err = ssim_err.max((ssim(p, q).unwrap() - want).abs());
            let g = Graph::<f64>::new();
            let tape = g.value(ssim_loss(&g, g.constant(p.clone()), g.constant(q.clone())).unwrap()).item().unwrap();
            ssim_err = ssim_err.max((tape - want).abs());
        }
        self_err = self_err.max((ssim(&x, &x).unwrap() - 1.0).abs());
    }
    let ssim_ok = ssim_err <= 1e-4 && self_err <= 1e-12;

    let mut de_err: f64 = 0.0;
    for p in &CIEDE2000_PAIRS {
        let (x, y) = (Lab::new(p[0], p[1], p[2]), Lab::new(p[3], p[4], p[5]));
        de_err = de_err.max((delta_e_2000(x, y) - p[6]).abs());
        de_err = de_err.max((delta_e_2000(y, x) - p[6]).abs());
    }
    let de_ok = de_err <= 1e-4;

    verdict(
        8,
        "metrics",
        psnr_ok && ssim_ok && de_ok,
        &format!(
            "PSNR closed forms max err {psnr_err:.1e} (<= 1e-6), identical -> inf: {}; SSIM vs direct reference max err {ssim_err:.1e} (<= 1e-4), SSIM(a,a) - 1 = {self_err:.1e}; CIEDE2000 34 pairs max err {de_err:.1e} (<= 1e-4)",
            same == f64::INFINITY
        ),
    );
}

// ---------------------------------------------------------------------------
// 9. Throughput
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_throughput() {
    let bundle = ModelBundle::<f32>::new(Variant::Tiny, 1).fuse().unwrap();
    let image = Tensor::from_fn(vec![3, 900, 1200], |i| ((i * 7919) % 1000) as f32 / 4000.0);
    // The library never spawns threads itself; the pool only pins the count.
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let t = Instant::now();
    let out = pool.install(|| bundle.forward_fused(&image, true).unwrap());
    let secs = t.elapsed().as_secs_f64();
    assert_eq!(out.shape(), image.shape());
    verdict(
        9,
        "throughput",
        secs < 2.0,
        &format!(
            "fused tiny on 1200x900, one thread: {secs:.3} s (< 2 s, {:.2} images/s); published accelerator figure for context only: 51.37 images/s",
            1.0 / secs
        ),
    );
}

// ---------------------------------------------------------------------------
// 10. Determinism
// ---------------------------------------------------------------------------

fn train_once(data: &Path, out: &Path) -> (Vec<u8>, Vec<u8>) {
    let cfg = TrainConfig {
        dataset_dir: data.to_path_buf(),
        variant: Variant::Tiny,
        resize: (32, 32),
        epochs_ia: 5,
        epochs_dn: 5,
        max_steps: Some(12),
        learning_rate: 1e-3,
        learning_rate_dn: 1e-3,
        seed: 99,
        train_dn: true,
        dn_arch: selfdace::pipeline::DnChoice::Compact,
        output: out.join("model.dace"),
        ..TrainConfig::default()
    };
    selfdace::pipeline::run(&cfg).unwrap();
    let ckpt = std::fs::read(&cfg.output).unwrap();
    let model = checkpoint::load(&cfg.output).unwrap().fuse().unwrap();
    let enhanced = model.forward_fused(&dark_scene(40, 48, 5), true).unwrap();
    let png = out.join("enhanced.png");
    save_png(&enhanced, &png).unwrap();
    (ckpt, std::fs::read(png).unwrap())
}

#[test]
fn criterion_10_determinism() {
    let data = tempfile::tempdir().unwrap();
    for i in 0..4 {
        save_png(&dark_scene(32, 32, 40 + i), data.path().join(format!("{i}.png"))).unwrap();
    }
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ckpt_a, png_a) = train_once(data.path(), a.path());
    let (ckpt_b, png_b) = train_once(data.path(), b.path());
    let pass = ckpt_a == ckpt_b && png_a == png_b;
    verdict(
        10,
        "determinism",
        pass,
        &format!(
            "two seeded runs: checkpoints identical ({} bytes): {}; enhanced PNGs identical: {}",
            ckpt_a.len(),
            ckpt_a == ckpt_b,
            png_a == png_b
        ),
    );
}
