use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{loss_dn, LossReport, LossTerms};
use crate::network::{checkpoint, DenoiseNet, DnArch, ModelBundle};
use crate::noise::inject_noise;
use crate::tensor::{Graph, Tensor, Var};

use super::config::{OptimizerKind, TrainConfig};
use super::dataset::Dataset;

/// Gradient descent with heavy-ball momentum: `v = mu * v + g; w -= lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor<f32>>, grads: &[Tensor<f32>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        let (lr, mu) = (self.learning_rate as f32, self.momentum as f32);
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            if p.shape() != g.shape() || v.len() != g.len() {
                return Err(Error::Shape(format!(
                    "parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vi = mu * *vi + gi;
                *w -= lr * *vi;
            }
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor<f32>>, grads: &[Tensor<f32>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = self.learning_rate;
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() || m.len() != g.len() {
                return Err(Error::Shape(format!(
                    "parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi as f64;
                let mn = b1 * *mi as f64 + (1.0 - b1) * gi;
                let vn = b2 * *vi as f64 + (1.0 - b2) * gi * gi;
                *mi = mn as f32;
                *vi = vn as f32;
                *w -= (lr * (mn / c1) / ((vn / c2).sqrt() + self.epsilon)) as f32;
            }
        }
        Ok(())
    }
}

/// The optimizer selected by [`TrainConfig::optimizer`].
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, momentum: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd::new(learning_rate, momentum)),
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(learning_rate)),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor<f32>>, grads: &[Tensor<f32>]) -> Result<()> {
        match self {
            Optimizer::Sgd(o) => o.step(params, grads),
            Optimizer::Adam(o) => o.step(params, grads),
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `limit`.
fn clip(grads: &mut [Tensor<f32>], limit: f64) {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if norm > limit {
        let s = (limit / norm) as f32;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

fn collect_grads(g: &Graph<f32>, params: &[Var], acc: &mut Vec<Tensor<f32>>) -> Result<()> {
    if acc.is_empty() {
        acc.extend(params.iter().map(|&p| Tensor::zeros(g.shape(p))));
    }
    for (a, &p) in acc.iter_mut().zip(params) {
        if let Some(grad) = g.grad(p) {
            a.add_assign(&grad)?;
        }
    }
    Ok(())
}

fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let f = |get: fn(&LossReport) -> f64| reports.iter().map(get).sum::<f64>() / n;
    LossReport {
        rc: f(|r| r.rc),
        wb: f(|r| r.wb),
        il: f(|r| r.il),
        cs_alpha: f(|r| r.cs_alpha),
        cs_beta: f(|r| r.cs_beta),
        dn: f(|r| r.dn),
        total: f(|r| r.total),
    }
}

struct CsvLog(Option<BufWriter<File>>, std::path::PathBuf);

impl CsvLog {
    fn open(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(CsvLog(None, Default::default())),
            Some(p) => {
                let f = File::create(p).map_err(|e| Error::io(p, e))?;
                let mut w = BufWriter::new(f);
                writeln!(w, "{}", LossReport::CSV_HEADER).map_err(|e| Error::io(p, e))?;
                Ok(CsvLog(Some(w), p.to_path_buf()))
            }
        }
    }

    fn row(&mut self, step: usize, r: &LossReport) -> Result<()> {
        if let Some(w) = &mut self.0 {
            writeln!(w, "{}", r.csv_row(step)).map_err(|e| Error::io(&self.1, e))?;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        if let Some(w) = &mut self.0 {
            w.flush().map_err(|e| Error::io(&self.1, e))?;
        }
        Ok(())
    }
}

/// Per-epoch shuffled mini-batches of image indices, capped at `max_steps`.
fn schedule(n: usize, epochs: usize, batch: usize, max_steps: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut steps = Vec::new();
    'outer: for _ in 0..epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            if max_steps.is_some_and(|m| steps.len() >= m) {
                break 'outer;
            }
            steps.push(chunk.to_vec());
        }
    }
    steps
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A trained model together with the per-step loss history.
#[derive(Clone, Debug)]
pub struct Trained<M> {
    pub model: M,
    pub reports: Vec<LossReport>,
}

/// Mean loss over `images` with no parameter update. Module order is drawn
/// from a generator seeded with `seed`, so repeated calls agree.
pub fn dataset_loss(
    bundle: &ModelBundle,
    images: &[Tensor<f32>],
    weights: &crate::losses::LossWeights,
    seed: u64,
) -> Result<LossReport> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("no images".into()));
    }
    let mut rng = stream_rng(seed, 6);
    let mut reports = Vec::with_capacity(images.len());
    for img in images {
        let g = Graph::<f32>::new();
        let bound = bundle.bind_ia(&g)?;
        let x = g.constant(img.clone());
        let (enhanced, trace) = bundle.forward_train(&g, &bound, x, &mut rng)?;
        let terms = LossTerms::illuminance_adjustment(&g, x, enhanced, &trace, weights)?;
        reports.push(terms.report(&g, weights)?);
    }
    Ok(mean_report(&reports))
}

/// Jointly trains every curve module of a fresh bundle on `images`.
pub fn train_ia(cfg: &TrainConfig, images: &[Tensor<f32>]) -> Result<Trained<ModelBundle>> {
    let mut bundle = ModelBundle::new(cfg.variant, cfg.seed);
    bundle.curves = cfg.curve_constants();
    bundle.dn = None;
    train_ia_from(cfg, images, bundle)
}

/// Continues curve-module training from `bundle`, which must be unfused.
pub fn train_ia_from(
    cfg: &TrainConfig,
    images: &[Tensor<f32>],
    mut bundle: ModelBundle,
) -> Result<Trained<ModelBundle>> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::InvalidArgument("no training images".into()));
    }
    let mut order_rng = stream_rng(cfg.seed, 1);
    let mut curve_rng = stream_rng(cfg.seed, 2);
    let steps = schedule(images.len(), cfg.epochs_ia, cfg.batch_size, cfg.max_steps, &mut order_rng);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.momentum);
    let mut log = CsvLog::open(cfg.log_csv.as_deref())?;
    let mut reports: Vec<LossReport> = Vec::with_capacity(steps.len());
    info!("training curve modules: {} steps, variant {}", steps.len(), cfg.variant);

    for (step, batch) in steps.iter().enumerate() {
        let mut grads = Vec::new();
        let mut batch_reports = Vec::with_capacity(batch.len());
        let scale = 1.0 / batch.len() as f32;
        for &idx in batch {
            let g = Graph::<f32>::new();
            let bound = bundle.bind_ia(&g)?;
            let params = bound.params();
            let x = g.constant(images[idx].clone());
            let (enhanced, trace) = bundle.forward_train(&g, &bound, x, &mut curve_rng)?;
            let terms = LossTerms::illuminance_adjustment(&g, x, enhanced, &trace, &cfg.weights)?;
            let total = terms.total(&g, &cfg.weights)?;
            batch_reports.push(terms.report(&g, &cfg.weights)?);
            g.backward(g.mul_scalar(total, scale))?;
            collect_grads(&g, &params, &mut grads)?;
        }
        let report = mean_report(&batch_reports);
        let grads_finite = grads.iter().all(Tensor::all_finite);
        if !report.is_finite() || !grads_finite {
            log.finish()?;
            return Err(Error::Divergence {
                step,
                last: reports.last().copied(),
            });
        }
        if let Some(limit) = cfg.grad_clip {
            clip(&mut grads, limit);
        }
        opt.step(bundle.ia_tensors_mut(), &grads)?;
        log.row(step, &report)?;
        if !bundle.ia_tensors_mut().iter().all(|t| t.all_finite()) {
            log.finish()?;
            return Err(Error::Divergence {
                step,
                last: Some(report),
            });
        }
        debug!("step {step}: total {:.6}", report.total);
        reports.push(report);
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            checkpoint::save(&bundle, &cfg.output)?;
        }
    }
    log.finish()?;
    Ok(Trained {
        model: bundle,
        reports,
    })
}

/// Trains a denoiser behind a frozen curve stage.
///
/// Each step enhances the clean image and a pseudo-noise copy of it, runs
/// the denoiser on the noisy enhancement and pulls it toward the clean one.
pub fn train_dn(
    cfg: &TrainConfig,
    images: &[Tensor<f32>],
    frozen: &ModelBundle,
    arch: DnArch,
) -> Result<Trained<DenoiseNet>> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::InvalidArgument("no training images".into()));
    }
    let ia = frozen.fuse()?;
    let clean: Vec<Tensor<f32>> = images
        .iter()
        .map(|x| ia.forward_fused(x, false))
        .collect::<Result<_>>()?;
    let mut init_rng = stream_rng(cfg.seed, 3);
    let mut order_rng = stream_rng(cfg.seed, 4);
    let mut noise_rng = stream_rng(cfg.seed, 5);
    let mut dn = DenoiseNet::init(arch, &mut init_rng);
    let steps = schedule(images.len(), cfg.epochs_dn, cfg.batch_size, cfg.max_steps, &mut order_rng);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate_dn, cfg.momentum);
    let mut reports: Vec<LossReport> = Vec::with_capacity(steps.len());
    info!("training denoiser: {} steps", steps.len());

    for (step, batch) in steps.iter().enumerate() {
        let mut grads = Vec::new();
        let mut losses = Vec::with_capacity(batch.len());
        let scale = 1.0 / batch.len() as f32;
        for &idx in batch {
            let (noisy, _) = inject_noise(&images[idx], &cfg.noise, &mut noise_rng)?;
            let noisy_enhanced = ia.forward_fused(&noisy, false)?;
            let g = Graph::<f32>::new();
            let bound = dn.bind(&g);
            let params = bound.params();
            let target = g.constant(clean[idx].clone());
            let denoised = bound.denoise(&g, g.constant(noisy_enhanced))?;
            let loss = loss_dn(&g, target, denoised, cfg.weights.ssim, cfg.weights.gradient)?;
            losses.push(g.value(loss).item()? as f64);
            g.backward(g.mul_scalar(loss, scale))?;
            collect_grads(&g, &params, &mut grads)?;
        }
        let value = losses.iter().sum::<f64>() / losses.len() as f64;
        let report = LossReport {
            dn: value,
            total: value,
            ..LossReport::default()
        };
        if !value.is_finite() || !grads.iter().all(Tensor::all_finite) {
            return Err(Error::Divergence {
                step,
                last: reports.last().copied(),
            });
        }
        if let Some(limit) = cfg.grad_clip {
            clip(&mut grads, limit);
        }
        opt.step(dn.tensors_mut(), &grads)?;
        if !dn.tensors_mut().iter().all(|t| t.all_finite()) {
            return Err(Error::Divergence {
                step,
                last: Some(report),
            });
        }
        reports.push(report);
    }
    Ok(Trained { model: dn, reports })
}

/// Full training run driven by a config: curve modules, then the optional
/// denoiser. Writes the unfused checkpoint to `cfg.output`.
pub fn run(cfg: &TrainConfig) -> Result<Trained<ModelBundle>> {
    let dataset = Dataset::from_dir(&cfg.dataset_dir)?;
    let images = dataset.training_images(cfg.resize)?;
    let mut trained = train_ia(cfg, &images)?;
    if cfg.train_dn {
        let arch = cfg.dn_arch.resolve(cfg.variant).ok_or_else(|| {
            Error::Config(format!("train_dn is set but variant {} has no denoiser; set dn_arch", cfg.variant))
        })?;
        let dn = train_dn(cfg, &images, &trained.model, arch)?;
        trained.model.dn = Some(dn.model);
        trained.reports.extend(dn.reports);
    }
    checkpoint::save(&trained.model, &cfg.output)?;
    Ok(trained)
}
