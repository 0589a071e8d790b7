//! CAFM model files.
//!
//! ```text
//! "CAFM" | version u8 = 1
//!        | layers per stack u8 x 4 | prior radius u16 | scale floor f32 | trained lambda f64
//!        | layer table: (type u8, in u16, out u16, kernel u8, stride u8) per layer
//!        | parameters f32 LE in layer order | model_hash u64
//! ```
//!
//! Stacks are stored in the order analysis, synthesis, hyper analysis,
//! hyper synthesis. The lambda field is NaN for untrained models.

use std::path::Path;

use caufc_core::codec::LayerSpec;
use caufc_core::{CodecArch, CodecModel};

use crate::error::{Error, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"CAFM";
pub const VERSION: u8 = 1;

/// A model together with the rate-distortion weight it was trained for.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub model: CodecModel,
    pub lambda: f64,
}

pub fn to_bytes(m: &ModelFile) -> Vec<u8> {
    let arch = m.model.arch();
    let stacks = arch.stacks();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for s in &stacks {
        out.push(s.len() as u8);
    }
    out.extend_from_slice(&arch.prior_radius.to_le_bytes());
    out.extend_from_slice(&m.model.scale_floor().to_le_bytes());
    out.extend_from_slice(&m.lambda.to_le_bytes());
    for l in stacks.iter().flat_map(|s| s.iter()) {
        out.push(l.type_code());
        out.extend_from_slice(&l.in_channels.to_le_bytes());
        out.extend_from_slice(&l.out_channels.to_le_bytes());
        out.push(l.kernel);
        out.push(l.stride);
    }
    for p in m.model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out.extend_from_slice(&m.model.model_hash().to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                detail: format!("needed {} more bytes at offset {}", n, self.at),
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<ModelFile> {
    let mut c = Cursor { bytes, at: 0, path };
    let magic = c.take(4)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "CAFM",
            found: magic.try_into().unwrap(),
        });
    }
    let version = c.u8()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {}", version)));
    }
    let counts: Vec<usize> = c.take(4)?.iter().map(|&n| n as usize).collect();
    let prior_radius = c.u16()?;
    let scale_floor = f32::from_le_bytes(c.take(4)?.try_into().unwrap());
    let lambda = f64::from_le_bytes(c.take(8)?.try_into().unwrap());
    let mut stacks: [Vec<LayerSpec>; 4] = Default::default();
    for (stack, &n) in stacks.iter_mut().zip(&counts) {
        for _ in 0..n {
            let code = c.u8()?;
            let (ic, oc) = (c.u16()?, c.u16()?);
            let (k, s) = (c.u8()?, c.u8()?);
            let layer = LayerSpec::from_type_code(code, ic, oc, k, s).ok_or_else(|| Error::format(path, format!("unknown layer type {}", code)))?;
            stack.push(layer);
        }
    }
    let [analysis, synthesis, hyper_analysis, hyper_synthesis] = stacks;
    let arch = CodecArch {
        analysis,
        synthesis,
        hyper_analysis,
        hyper_synthesis,
        prior_radius,
    };
    arch.validate().map_err(|e| Error::format(path, e.to_string()))?;
    let n = arch.param_count();
    let params: Vec<f32> = c.take(4 * n)?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    let stored = u64::from_le_bytes(c.take(8)?.try_into().unwrap());
    if c.at != bytes.len() {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - c.at)));
    }
    let model = CodecModel::from_parts(arch, params, scale_floor).map_err(|e| Error::format(path, e.to_string()))?;
    if model.model_hash() != stored {
        return Err(Error::format(
            path,
            format!("stored hash {:016x} does not match parameters ({:016x})", stored, model.model_hash()),
        ));
    }
    Ok(ModelFile { model, lambda })
}

pub fn write_model(m: &ModelFile, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &to_bytes(m))
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    from_bytes(&fsutil::read(path)?, path)
}
