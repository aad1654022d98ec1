//! Disordered modules, curve blocks, fusion and the denoiser.

mod block;
pub mod checkpoint;
mod bundle;
mod denoise;
mod dm;

pub use block::{fuse, Block, BlockKind, FusedBlock, IaBlock};
pub use bundle::{BoundIa, ModelBundle, Variant};
pub use denoise::{BoundDenoise, DenoiseNet, DnArch};
pub use dm::{BoundLayer, BoundModule, ConvLayer, ConvModule, DmArch, ALPHA_HEAD_BIAS};
