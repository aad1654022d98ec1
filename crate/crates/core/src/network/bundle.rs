use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::curves::{
    apply_aac, apply_aac_eager, map_raw_to_params, map_raw_to_params_eager, CurveConstants,
    CurveParams,
};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

use super::block::{Block, BlockKind, FusedBlock, IaBlock};
use super::denoise::{BoundDenoise, DenoiseNet, DnArch};
use super::dm::{BoundModule, ConvModule, DmArch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Standard modules plus the denoiser.
    Standard,
    /// Standard modules, no denoiser.
    Small,
    /// Simplified modules, no denoiser.
    Tiny,
}

impl Variant {
    pub fn dm_arch(self) -> DmArch {
        match self {
            Variant::Standard | Variant::Small => DmArch::default(),
            Variant::Tiny => DmArch::Tiny,
        }
    }

    /// Denoiser carried by default, if any.
    pub fn dn_arch(self) -> Option<DnArch> {
        match self {
            Variant::Standard => Some(DnArch::full()),
            Variant::Small | Variant::Tiny => None,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Variant::Standard => 0,
            Variant::Small => 1,
            Variant::Tiny => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Variant::Standard),
            1 => Some(Variant::Small),
            2 => Some(Variant::Tiny),
            _ => None,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "standard" => Ok(Variant::Standard),
            "small" => Ok(Variant::Small),
            "tiny" => Ok(Variant::Tiny),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Standard => "standard",
            Variant::Small => "small",
            Variant::Tiny => "tiny",
        })
    }
}

/// The whole network: both curve blocks, the optional denoiser and the
/// curve constants they share.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle<T: Real = f32> {
    pub variant: Variant,
    pub llae: IaBlock<T>,
    pub hlas: IaBlock<T>,
    pub dn: Option<DenoiseNet<T>>,
    pub curves: CurveConstants,
    pub seed: u64,
}

/// Trainable handles of the curve blocks on one tape.
#[derive(Clone, Debug)]
pub struct BoundIa {
    pub llae: Vec<BoundModule>,
    pub hlas: Vec<BoundModule>,
}

impl BoundIa {
    /// Parameter handles in [`ModelBundle::ia_tensors_mut`] order.
    pub fn params(&self) -> Vec<Var> {
        self.llae
            .iter()
            .chain(&self.hlas)
            .flat_map(BoundModule::params)
            .collect()
    }
}

impl<T: Real> ModelBundle<T> {
    /// Freshly initialized, unfused bundle with the default module counts.
    pub fn new(variant: Variant, seed: u64) -> Self {
        Self::with_counts(
            variant,
            BlockKind::Llae.default_modules(),
            BlockKind::Hlas.default_modules(),
            seed,
        )
    }

    pub fn with_counts(variant: Variant, llae: usize, hlas: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = variant.dm_arch();
        let mut block = |kind, n| {
            IaBlock::Distinct(Block {
                kind,
                modules: (0..n).map(|_| ConvModule::init(arch, &mut rng)).collect(),
            })
        };
        let llae = block(BlockKind::Llae, llae);
        let hlas = block(BlockKind::Hlas, hlas);
        let dn = variant.dn_arch().map(|a| DenoiseNet::init(a, &mut rng));
        ModelBundle {
            variant,
            llae,
            hlas,
            dn,
            curves: CurveConstants::default(),
            seed,
        }
    }

    /// Every module replaced by [`ConvModule::identity`].
    pub fn identity(variant: Variant) -> Self {
        let arch = variant.dm_arch();
        let block = |kind: BlockKind| {
            IaBlock::Distinct(Block {
                kind,
                modules: vec![ConvModule::identity(arch); kind.default_modules()],
            })
        };
        ModelBundle {
            variant,
            llae: block(BlockKind::Llae),
            hlas: block(BlockKind::Hlas),
            dn: variant.dn_arch().map(DenoiseNet::zeros),
            curves: CurveConstants::default(),
            seed: 0,
        }
    }

    pub fn is_fused(&self) -> bool {
        self.llae.is_fused() && self.hlas.is_fused()
    }

    /// Total number of trainable scalars; fused blocks count their single module once.
    pub fn count_params(&self) -> usize {
        self.llae.param_count()
            + self.hlas.param_count()
            + self.dn.as_ref().map_or(0, DenoiseNet::param_count)
    }

    /// Both blocks averaged into single self-looping modules.
    pub fn fuse(&self) -> Result<Self> {
        Ok(ModelBundle {
            llae: IaBlock::Fused(self.llae.fused()?),
            hlas: IaBlock::Fused(self.hlas.fused()?),
            ..self.clone()
        })
    }

    pub fn cast<U: Real>(&self) -> ModelBundle<U> {
        ModelBundle {
            variant: self.variant,
            llae: self.llae.cast(),
            hlas: self.hlas.cast(),
            dn: self.dn.as_ref().map(DenoiseNet::cast),
            curves: self.curves,
            seed: self.seed,
        }
    }

    /// Curve-block tensors in the order used by [`BoundIa::params`].
    pub fn ia_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for block in [&mut self.llae, &mut self.hlas] {
            for m in block.modules_mut() {
                out.extend(m.tensors_mut());
            }
        }
        out
    }

    /// Every tensor keyed by a stable dotted name.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for block in [&self.llae, &self.hlas] {
            let prefix = block.kind().name();
            match block {
                IaBlock::Distinct(b) => {
                    for (i, m) in b.modules.iter().enumerate() {
                        for (n, t) in m.named_tensors() {
                            out.push((format!("{prefix}.{i}.{n}"), t));
                        }
                    }
                }
                IaBlock::Fused(f) => {
                    for (n, t) in f.module.named_tensors() {
                        out.push((format!("{prefix}.fused.{n}"), t));
                    }
                }
            }
        }
        if let Some(dn) = &self.dn {
            for (n, t) in dn.named_tensors() {
                out.push((format!("dn.{n}"), t));
            }
        }
        out
    }

    pub fn bind_ia(&self, g: &Graph<T>) -> Result<BoundIa> {
        let bind = |block: &IaBlock<T>| match block {
            IaBlock::Distinct(b) => Ok(b.modules.iter().map(|m| m.bind(g)).collect()),
            IaBlock::Fused(_) => Err(Error::ModelState(
                "training needs distinct modules; this bundle is fused".into(),
            )),
        };
        Ok(BoundIa {
            llae: bind(&self.llae)?,
            hlas: bind(&self.hlas)?,
        })
    }

    /// Random-order training pass.
    ///
    /// Each block's modules are shuffled with `rng`, then applied one after
    /// another, each seeing the current intermediate image. Returns the
    /// unclamped result and the curve parameters of every iteration.
    pub fn forward_train<R: Rng + ?Sized>(
        &self,
        g: &Graph<T>,
        bound: &BoundIa,
        image: Var,
        rng: &mut R,
    ) -> Result<(Var, Vec<CurveParams<Var>>)> {
        if self.is_fused() || self.llae.is_fused() || self.hlas.is_fused() {
            return Err(Error::ModelState(
                "forward_train called on a fused bundle".into(),
            ));
        }
        let mut current = image;
        let mut trace = Vec::with_capacity(bound.llae.len() + bound.hlas.len());
        for (kind, modules) in [(BlockKind::Llae, &bound.llae), (BlockKind::Hlas, &bound.hlas)] {
            let mut order: Vec<usize> = (0..modules.len()).collect();
            order.shuffle(rng);
            for idx in order {
                let (ra, rb) = modules[idx].forward(g, current)?;
                let params = map_raw_to_params(g, ra, rb, kind.curve_kind(), &self.curves);
                current = apply_aac(g, current, &params, &self.curves)?;
                trace.push(params);
            }
        }
        Ok((current, trace))
    }

    /// Self-looping inference through the fused blocks, clamped to `[0, 1]`,
    /// followed by the denoiser when present and `denoise` is set.
    pub fn forward_fused(&self, image: &Tensor<T>, denoise: bool) -> Result<Tensor<T>> {
        let (IaBlock::Fused(llae), IaBlock::Fused(hlas)) = (&self.llae, &self.hlas) else {
            return Err(Error::ModelState(
                "forward_fused needs a fused bundle; call fuse() first".into(),
            ));
        };
        match image.shape() {
            [3, _, _] => {}
            s => return Err(Error::Shape(format!("expected a [3,H,W] image, got {s:?}"))),
        }
        let mut current = image.clone();
        for block in [llae, hlas] {
            current = self.run_fused(block, current)?;
        }
        let current = current.clamp01();
        match (&self.dn, denoise) {
            (Some(dn), true) => dn.denoise(&current),
            _ => Ok(current),
        }
    }

    fn run_fused(&self, block: &FusedBlock<T>, mut current: Tensor<T>) -> Result<Tensor<T>> {
        let kind = block.kind.curve_kind();
        for _ in 0..block.iterations {
            let (ra, rb) = block.module.forward(&current)?;
            let params = map_raw_to_params_eager(&ra, &rb, kind, &self.curves);
            current = apply_aac_eager(&current, &params, &self.curves)?;
        }
        Ok(current)
    }

    /// Applies only the denoiser (identity when absent).
    pub fn denoise(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.dn {
            Some(dn) => dn.denoise(image),
            None => Ok(image.clone()),
        }
    }

    pub fn bind_dn(&self, g: &Graph<T>) -> Option<BoundDenoise> {
        self.dn.as_ref().map(|dn| dn.bind(g))
    }
}
