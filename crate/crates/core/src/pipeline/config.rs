//! Flat `key = value` training configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error so typos do not silently fall back to defaults.
//!
//! ```text
//! dataset_dir = data/train
//! resize = 256x256
//! variant = tiny
//! epochs_ia = 10
//! learning_rate = 1e-4
//! ```

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::losses::{LossWeights, SSIM_WINDOW};
use crate::network::{DnArch, Variant};
use crate::noise::{NoiseConfig, SigmaUnits};

/// Denoiser shape selected by the `dn_arch` key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DnChoice {
    /// Whatever the variant carries.
    Variant,
    Full,
    Compact,
    None,
}

impl DnChoice {
    pub fn resolve(self, variant: Variant) -> Option<DnArch> {
        match self {
            DnChoice::Variant => variant.dn_arch(),
            DnChoice::Full => Some(DnArch::full()),
            DnChoice::Compact => Some(DnArch::compact()),
            DnChoice::None => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Gradient descent with heavy-ball momentum.
    #[default]
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dataset_dir: PathBuf,
    /// `(width, height)` every training image is resized to.
    pub resize: (u32, u32),
    pub epochs_ia: usize,
    pub epochs_dn: usize,
    /// Caps the number of optimizer steps of each stage when set.
    pub max_steps: Option<usize>,
    pub learning_rate: f64,
    pub learning_rate_dn: f64,
    /// Used by [`OptimizerKind::Sgd`] only.
    pub momentum: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    /// Global gradient norm limit; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub weights: LossWeights,
    pub variant: Variant,
    pub seed: u64,
    pub hasc_beta_max: f64,
    pub noise: NoiseConfig,
    pub train_dn: bool,
    pub dn_arch: DnChoice,
    pub output: PathBuf,
    pub log_csv: Option<PathBuf>,
    /// Write the checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset_dir: PathBuf::from("data"),
            resize: (256, 256),
            epochs_ia: 10,
            epochs_dn: 200,
            max_steps: None,
            learning_rate: 1e-4,
            learning_rate_dn: 1e-4,
            momentum: 0.9,
            optimizer: OptimizerKind::Sgd,
            batch_size: 1,
            grad_clip: None,
            weights: LossWeights::default(),
            variant: Variant::Standard,
            seed: 0,
            hasc_beta_max: 0.9,
            noise: NoiseConfig::default(),
            train_dn: false,
            dn_arch: DnChoice::Variant,
            output: PathBuf::from("model.dace"),
            log_csv: None,
            checkpoint_every: 0,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

fn pair(key: &str, v: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = v.split([',', ' ']).filter(|s| !s.is_empty()).collect();
    match parts[..] {
        [a, b] => Ok((num(key, a)?, num(key, b)?)),
        _ => Err(Error::Config(format!("{key}: expected two numbers, got {v:?}"))),
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            c.set(key.trim(), value.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            for p in [&mut c.dataset_dir, &mut c.output] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            if let Some(p) = c.log_csv.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let w = &mut self.weights;
        match key {
            "dataset_dir" => self.dataset_dir = PathBuf::from(v),
            "resize" => {
                let (a, b) = v
                    .split_once(['x', 'X', ','])
                    .ok_or_else(|| Error::Config(format!("resize: expected WxH, got {v:?}")))?;
                self.resize = (num(key, a.trim())?, num(key, b.trim())?);
            }
            "epochs_ia" => self.epochs_ia = num(key, v)?,
            "epochs_dn" => self.epochs_dn = num(key, v)?,
            "max_steps" => self.max_steps = Some(num(key, v)?),
            "learning_rate" => self.learning_rate = num(key, v)?,
            "learning_rate_dn" => self.learning_rate_dn = num(key, v)?,
            "momentum" => self.momentum = num(key, v)?,
            "optimizer" => {
                self.optimizer = match v.to_ascii_lowercase().as_str() {
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => OptimizerKind::Adam,
                    _ => return Err(Error::Config(format!("optimizer: unknown value {v:?}"))),
                }
            }
            "batch_size" => self.batch_size = num(key, v)?,
            "grad_clip" => {
                let g: f64 = num(key, v)?;
                self.grad_clip = (g > 0.0).then_some(g);
            }
            "w_reflectance" => w.reflectance = num(key, v)?,
            "w_white_balance" => w.white_balance = num(key, v)?,
            "w_illuminance" => w.illuminance = num(key, v)?,
            "w_alpha" => w.smooth_alpha = num(key, v)?,
            "w_beta" => w.smooth_beta = num(key, v)?,
            "w_ssim" => w.ssim = num(key, v)?,
            "w_gradient" => w.gradient = num(key, v)?,
            "target_level" => w.target_level = num(key, v)?,
            "illuminance_scale" => w.illuminance_scale = num(key, v)?,
            "variant" => self.variant = v.parse()?,
            "seed" => self.seed = num(key, v)?,
            "hasc_beta_max" => self.hasc_beta_max = num(key, v)?,
            "sigma_range" => self.noise.sigma_range = pair(key, v)?,
            "sigma_units" => self.noise.units = v.parse::<SigmaUnits>()?,
            "train_dn" => self.train_dn = flag(key, v)?,
            "dn_arch" => {
                self.dn_arch = match v.to_ascii_lowercase().as_str() {
                    "variant" | "default" => DnChoice::Variant,
                    "full" => DnChoice::Full,
                    "compact" => DnChoice::Compact,
                    "none" => DnChoice::None,
                    _ => return Err(Error::Config(format!("dn_arch: unknown value {v:?}"))),
                }
            }
            "output" => self.output = PathBuf::from(v),
            "log_csv" => self.log_csv = Some(PathBuf::from(v)),
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let min = SSIM_WINDOW as u32;
        if self.resize.0 < min || self.resize.1 < min {
            return Err(Error::Config(format!(
                "resize must be at least {min}x{min}, got {}x{}",
                self.resize.0, self.resize.1
            )));
        }
        if self.epochs_ia == 0 || self.epochs_dn == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate_dn >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        self.weights.validate()?;
        self.noise.validate()?;
        self.curve_constants().validate()
    }

    pub fn curve_constants(&self) -> crate::curves::CurveConstants {
        crate::curves::CurveConstants {
            hasc_beta_max: self.hasc_beta_max,
            ..Default::default()
        }
    }
}
