use crate::curves::CurveKind;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use super::dm::ConvModule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    /// Low-light area enhancement.
    Llae,
    /// High-light area suppression.
    Hlas,
}

impl BlockKind {
    pub fn curve_kind(self) -> CurveKind {
        match self {
            BlockKind::Llae => CurveKind::Laec,
            BlockKind::Hlas => CurveKind::Hasc,
        }
    }

    pub fn default_modules(self) -> usize {
        match self {
            BlockKind::Llae => 9,
            BlockKind::Hlas => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Llae => "llae",
            BlockKind::Hlas => "hlas",
        }
    }
}

/// Distinct modules, applied in a fresh random order each training step.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<T: Real = f32> {
    pub kind: BlockKind,
    pub modules: Vec<ConvModule<T>>,
}

/// A single averaged module applied `iterations` times.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedBlock<T: Real = f32> {
    pub kind: BlockKind,
    pub module: ConvModule<T>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum IaBlock<T: Real = f32> {
    Distinct(Block<T>),
    Fused(FusedBlock<T>),
}

impl<T: Real> IaBlock<T> {
    pub fn kind(&self) -> BlockKind {
        match self {
            IaBlock::Distinct(b) => b.kind,
            IaBlock::Fused(f) => f.kind,
        }
    }

    pub fn is_fused(&self) -> bool {
        matches!(self, IaBlock::Fused(_))
    }

    pub fn modules(&self) -> Vec<&ConvModule<T>> {
        match self {
            IaBlock::Distinct(b) => b.modules.iter().collect(),
            IaBlock::Fused(f) => vec![&f.module],
        }
    }

    pub fn modules_mut(&mut self) -> Vec<&mut ConvModule<T>> {
        match self {
            IaBlock::Distinct(b) => b.modules.iter_mut().collect(),
            IaBlock::Fused(f) => vec![&mut f.module],
        }
    }

    /// Number of curve applications per forward pass.
    pub fn iterations(&self) -> usize {
        match self {
            IaBlock::Distinct(b) => b.modules.len(),
            IaBlock::Fused(f) => f.iterations,
        }
    }

    pub fn param_count(&self) -> usize {
        self.modules().iter().map(|m| m.param_count()).sum()
    }

    /// Fuses a distinct block; a fused block is returned as is.
    pub fn fused(&self) -> Result<FusedBlock<T>> {
        match self {
            IaBlock::Distinct(b) => fuse(b),
            IaBlock::Fused(f) => Ok(f.clone()),
        }
    }

    pub fn cast<U: Real>(&self) -> IaBlock<U> {
        match self {
            IaBlock::Distinct(b) => IaBlock::Distinct(Block {
                kind: b.kind,
                modules: b.modules.iter().map(ConvModule::cast).collect(),
            }),
            IaBlock::Fused(f) => IaBlock::Fused(FusedBlock {
                kind: f.kind,
                module: f.module.cast(),
                iterations: f.iterations,
            }),
        }
    }
}

/// Averages every weight and bias of the block's modules into one module
/// that is then applied once per source module.
///
/// Sums are accumulated in `f64`, so averaging `K` identical `f32` modules
/// reproduces the source bit for bit.
pub fn fuse<T: Real>(block: &Block<T>) -> Result<FusedBlock<T>> {
    let (first, rest) = block
        .modules
        .split_first()
        .ok_or_else(|| Error::ModelState("cannot fuse an empty block".into()))?;
    for m in rest {
        first.check_shape(m)?;
    }
    let k = block.modules.len() as f64;
    let mut module = first.clone();
    let sources: Vec<Vec<(String, &Tensor<T>)>> =
        block.modules.iter().map(|m| m.named_tensors()).collect();
    for (idx, dst) in module.tensors_mut().into_iter().enumerate() {
        let mut acc = vec![0.0f64; dst.len()];
        for src in &sources {
            for (a, v) in acc.iter_mut().zip(src[idx].1.data()) {
                *a += v.as_f64();
            }
        }
        for (d, a) in dst.data_mut().iter_mut().zip(acc) {
            *d = T::lit(a / k);
        }
    }
    Ok(FusedBlock {
        kind: block.kind,
        module,
        iterations: block.modules.len(),
    })
}
