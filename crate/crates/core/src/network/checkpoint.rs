//! Binary checkpoint format.
//!
//! ```text
//! "DACE"               4 bytes magic
//! version              u32 LE (currently 1)
//! variant              u8  (0 standard, 1 small, 2 tiny)
//! fused                u8  (0 or 1)
//! then, until EOF, one record per tensor:
//!   name_len           u32 LE
//!   name               UTF-8 bytes
//!   rank               u32 LE
//!   dims               rank x u32 LE
//!   data               prod(dims) x f32 LE
//! ```
//!
//! Tensor names are dotted paths such as `llae.3.trunk.0.weight`,
//! `hlas.fused.head_beta.bias` or `dn.2.weight`. Two bookkeeping records
//! ride along: `meta.curve = [k, delta, hasc_beta_max]` and
//! `meta.iterations = [llae, hlas]`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::curves::CurveConstants;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::block::{Block, BlockKind, FusedBlock, IaBlock};
use super::bundle::{ModelBundle, Variant};
use super::denoise::{DenoiseNet, DnArch};
use super::dm::{ConvModule, DmArch};

pub const MAGIC: &[u8; 4] = b"DACE";
pub const VERSION: u32 = 1;

/// Serializes a bundle to bytes.
pub fn to_bytes(bundle: &ModelBundle<f32>) -> Result<Vec<u8>> {
    let fused = match (bundle.llae.is_fused(), bundle.hlas.is_fused()) {
        (true, true) => 1u8,
        (false, false) => 0u8,
        _ => {
            return Err(Error::ModelState(
                "cannot checkpoint a half-fused bundle".into(),
            ))
        }
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(bundle.variant.tag());
    out.push(fused);

    let c = bundle.curves;
    let meta_curve = Tensor::new(
        vec![3],
        vec![c.k as f32, c.delta as f32, c.hasc_beta_max as f32],
    )?;
    let meta_iters = Tensor::new(
        vec![2],
        vec![
            bundle.llae.iterations() as f32,
            bundle.hlas.iterations() as f32,
        ],
    )?;
    write_record(&mut out, "meta.curve", &meta_curve);
    write_record(&mut out, "meta.iterations", &meta_iters);
    for (name, t) in bundle.named_tensors() {
        write_record(&mut out, &name, t);
    }
    Ok(out)
}

fn write_record(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save(bundle: &ModelBundle<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(bundle)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelBundle<f32>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Parses the raw `(name, tensor)` records, in file order.
pub fn read_records(bytes: &[u8]) -> Result<(Variant, bool, Vec<(String, Tensor<f32>)>)> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let variant = Variant::from_tag(cur.u8()?)
        .ok_or_else(|| Error::Checkpoint("unknown variant tag".into()))?;
    let fused = match cur.u8()? {
        0 => false,
        1 => true,
        f => return Err(Error::Checkpoint(format!("bad fused flag {f}"))),
    };
    let mut records = Vec::new();
    while !cur.done() {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u32()? as usize;
        let dims = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: dimension overflow")))?;
        let raw = cur.take(n.checked_mul(4).ok_or_else(|| {
            Error::Checkpoint(format!("{name}: dimension overflow"))
        })?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        records.push((name, Tensor::new(dims, data)?));
    }
    Ok((variant, fused, records))
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelBundle<f32>> {
    let (variant, fused, records) = read_records(bytes)?;
    let mut map: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    for (name, t) in records {
        if map.insert(name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
    }

    let curve = take(&mut map, "meta.curve")?;
    let iters = take(&mut map, "meta.iterations")?;
    let (&[k, delta, hasc_beta_max], &[n_llae, n_hlas]) = (curve.data(), iters.data()) else {
        return Err(Error::Checkpoint("malformed meta records".into()));
    };
    let curves = CurveConstants {
        k: widen(k),
        delta: widen(delta),
        hasc_beta_max: widen(hasc_beta_max),
    };
    curves.validate()?;

    let arch = match variant {
        Variant::Tiny => DmArch::Tiny,
        _ => {
            let probe = if fused { "llae.fused.trunk.0.weight" } else { "llae.0.trunk.0.weight" };
            let width = map
                .get(probe)
                .map(|t| t.shape()[0])
                .ok_or_else(|| Error::Checkpoint(format!("missing {probe}")))?;
            DmArch::Standard { width }
        }
    };

    let mut block = |kind: BlockKind, count: f32| -> Result<IaBlock<f32>> {
        let count = count as usize;
        let prefix = kind.name();
        if fused {
            Ok(IaBlock::Fused(FusedBlock {
                kind,
                module: read_module(&mut map, &format!("{prefix}.fused"), arch)?,
                iterations: count,
            }))
        } else {
            let modules = (0..count)
                .map(|i| read_module(&mut map, &format!("{prefix}.{i}"), arch))
                .collect::<Result<_>>()?;
            Ok(IaBlock::Distinct(Block { kind, modules }))
        }
    };
    let llae = block(BlockKind::Llae, n_llae)?;
    let hlas = block(BlockKind::Hlas, n_hlas)?;

    let depth = (0..)
        .take_while(|i| map.contains_key(&format!("dn.{i}.weight")))
        .count();
    let dn = if depth > 0 {
        let width = map["dn.0.weight"].shape()[0];
        let mut dn = DenoiseNet::zeros(DnArch { width, depth });
        let names: Vec<String> = dn.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (name, dst) in names.iter().zip(dn.tensors_mut()) {
            fill(&mut map, &format!("dn.{name}"), dst)?;
        }
        Some(dn)
    } else {
        None
    };

    if let Some(extra) = map.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    Ok(ModelBundle {
        variant,
        llae,
        hlas,
        dn,
        curves,
        seed: 0,
    })
}

/// `f32 -> f64` through the shortest decimal form, so `0.1f32` reads back as `0.1`.
fn widen(v: f32) -> f64 {
    v.to_string().parse().unwrap_or(v as f64)
}

fn take(map: &mut BTreeMap<String, Tensor<f32>>, name: &str) -> Result<Tensor<f32>> {
    map.remove(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
}

fn fill(map: &mut BTreeMap<String, Tensor<f32>>, name: &str, dst: &mut Tensor<f32>) -> Result<()> {
    let t = take(map, name)?;
    if t.shape() != dst.shape() {
        return Err(Error::Checkpoint(format!(
            "{name}: expected shape {:?}, found {:?}",
            dst.shape(),
            t.shape()
        )));
    }
    *dst = t;
    Ok(())
}

fn read_module(
    map: &mut BTreeMap<String, Tensor<f32>>,
    prefix: &str,
    arch: DmArch,
) -> Result<ConvModule<f32>> {
    let mut m = ConvModule::zeros(arch);
    let names: Vec<String> = m.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, dst) in names.iter().zip(m.tensors_mut()) {
        fill(map, &format!("{prefix}.{name}"), dst)?;
    }
    Ok(m)
}
