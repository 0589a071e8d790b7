//! The CAFB container and the encode/decode pipeline around it.
//!
//! ```text
//! "CAFB" | version u8 | model_hash u64 | AlignmentSpec (17 bytes)
//!        | layout u8 | dims u32 x ndims | token rows u16 | token cols u16
//!        | z length u32 | z payload | y length u32 | y payload
//! ```
//! All integers little-endian.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use super::layers::Maps;
use super::model::CodecModel;
use super::network::{mse, ForwardMode, Net};
use super::prior::gaussian_table;
use crate::alignment::{align, unalign, AlignmentSpec, TokenMatrix, TokenOrigin, SPEC_BYTES};
use crate::entropy::{decode_escaped, encode_escaped, CdfTable, RangeDecoder, RangeEncoder};
use crate::tensor::{check_dims, ArchTag, FeatureTensor, Layout};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CAFB";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Bitstream {
    pub model_hash: u64,
    pub spec: AlignmentSpec,
    pub layout: Layout,
    pub dims: Vec<usize>,
    /// Token rows and columns before padding.
    pub pad_info: (u16, u16),
    pub z_payload: Vec<u8>,
    pub y_payload: Vec<u8>,
}

impl Bitstream {
    /// Bits in the two entropy-coded payloads (header excluded).
    pub fn payload_bits(&self) -> u64 {
        8 * (self.z_payload.len() + self.y_payload.len()) as u64
    }

    pub fn header_bits(&self) -> u64 {
        8 * (self.to_bytes().len() as u64) - self.payload_bits()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + self.z_payload.len() + self.y_payload.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.model_hash.to_le_bytes());
        out.extend_from_slice(&self.spec.to_bytes());
        out.push(self.layout.code());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.pad_info.0.to_le_bytes());
        out.extend_from_slice(&self.pad_info.1.to_le_bytes());
        for p in [&self.z_payload, &self.y_payload] {
            out.extend_from_slice(&(p.len() as u32).to_le_bytes());
            out.extend_from_slice(p);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(malformed("bad magic"));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(malformed(&format!("unsupported version {}", version)));
        }
        let model_hash = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let spec = AlignmentSpec::from_bytes(r.take(SPEC_BYTES)?)?;
        let layout = Layout::from_code(r.u8()?).ok_or_else(|| malformed("unknown layout"))?;
        let dims = (0..layout.ndims()).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        check_dims(layout, &dims)?;
        let pad_info = (r.u16()?, r.u16()?);
        let z_len = r.u32()? as usize;
        let z_payload = r.take(z_len)?.to_vec();
        let y_len = r.u32()? as usize;
        let y_payload = r.take(y_len)?.to_vec();
        if r.pos != bytes.len() {
            return Err(malformed("trailing bytes after payload"));
        }
        Ok(Self {
            model_hash,
            spec,
            layout,
            dims,
            pad_info,
            z_payload,
            y_payload,
        })
    }
}

fn malformed(m: &str) -> Error {
    Error::MalformedBitstream(m.to_string())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(malformed("truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Everything measured while encoding one feature.
#[derive(Clone, Debug)]
pub struct EncodeReport {
    pub bitstream: Bitstream,
    /// `sum -log2 p` of the rounded latents under the model.
    pub bits_estimate: f64,
    /// MSE between aligned input and reconstruction, in the normalized domain.
    pub aligned_mse: f64,
    /// What [`decode`] will return for this bitstream.
    pub reconstruction: FeatureTensor,
}

/// Token grid of a feature with the given layout and dims.
fn token_shape(layout: Layout, dims: &[usize]) -> (usize, usize, TokenOrigin) {
    match layout {
        Layout::ChannelMajor3D => (
            dims[1] * dims[2],
            dims[0],
            TokenOrigin::FromCnn {
                channels: dims[0],
                height: dims[1],
                width: dims[2],
            },
        ),
        Layout::Tokens2D => (dims[0], dims[1], TokenOrigin::NativeTokens),
    }
}

/// Architecture implied by a layout; bitstreams do not carry the tag.
pub fn arch_for_layout(layout: Layout) -> ArchTag {
    match layout {
        Layout::ChannelMajor3D => ArchTag::CnnLike,
        Layout::Tokens2D => ArchTag::VitLike,
    }
}

fn reconstruct(net: &Net<'_, f32>, y_hat: Maps<f32>, b: &Bitstream) -> Result<(Vec<f32>, FeatureTensor)> {
    let (rows, cols, origin) = token_shape(b.layout, &b.dims);
    let x_hat = net.synthesize(y_hat, rows, cols).data;
    let m = TokenMatrix::new(rows, cols, x_hat.clone(), origin, arch_for_layout(b.layout))?;
    Ok((x_hat, unalign(&m, &b.spec)?))
}

fn z_tables(net: &Net<'_, f32>) -> Result<Vec<CdfTable>> {
    let p = net.prior();
    (0..p.channels()).map(|c| p.table(c).map_err(Error::from)).collect()
}

pub fn encode(model: &CodecModel, t: &FeatureTensor, spec: &AlignmentSpec) -> Result<Bitstream> {
    Ok(encode_with_report(model, t, spec)?.bitstream)
}

pub fn encode_with_report(model: &CodecModel, t: &FeatureTensor, spec: &AlignmentSpec) -> Result<EncodeReport> {
    let x = align(t, spec)?;
    let (rows, cols) = x.shape();
    if rows > u16::MAX as usize || cols > u16::MAX as usize {
        return Err(Error::InvalidShape(format!("token grid {}x{} exceeds the 16-bit header fields", rows, cols)));
    }
    let net = Net::<f32>::new(model.arch(), model.params(), model.scale_floor() as f64)?;
    let pass = net.forward(x.data(), rows, cols, ForwardMode::EvalRound, false)?;

    let mut enc = RangeEncoder::new();
    let tables = z_tables(&net)?;
    let plane = pass.z_hat.h * pass.z_hat.w;
    for (i, &v) in pass.z_hat.data.iter().enumerate() {
        encode_escaped(&mut enc, v as i64, &tables[i / plane])?;
    }
    let z_payload = enc.finish();

    let mut enc = RangeEncoder::new();
    for (&v, &s) in pass.y_hat.data.iter().zip(&pass.sigma) {
        encode_escaped(&mut enc, v as i64, &gaussian_table(s as f64)?)?;
    }
    let y_payload = enc.finish();

    let bitstream = Bitstream {
        model_hash: model.model_hash(),
        spec: *spec,
        layout: t.layout(),
        dims: t.dims().to_vec(),
        pad_info: (rows as u16, cols as u16),
        z_payload,
        y_payload,
    };
    let (x_hat, reconstruction) = reconstruct(&net, pass.y_hat, &bitstream)?;
    Ok(EncodeReport {
        bitstream,
        bits_estimate: pass.y_bits + pass.z_bits,
        aligned_mse: mse(&x_hat, x.data()),
        reconstruction,
    })
}

pub fn decode(model: &CodecModel, b: &Bitstream) -> Result<FeatureTensor> {
    let found = model.model_hash();
    if b.model_hash != found {
        return Err(Error::HashMismatch {
            expected: b.model_hash,
            found,
        });
    }
    let (rows, cols, _) = token_shape(b.layout, &b.dims);
    if (rows, cols) != (b.pad_info.0 as usize, b.pad_info.1 as usize) {
        return Err(malformed("token grid disagrees with dims"));
    }
    let net = Net::<f32>::new(model.arch(), model.params(), model.scale_floor() as f64)?;
    if rows < net.min_size() || cols < net.min_size() {
        return Err(Error::InputTooSmall {
            rows,
            cols,
            min: net.min_size(),
        });
    }
    let ((yc, yh, yw), (zc, zh, zw)) = net.grids(rows, cols);

    let tables = z_tables(&net)?;
    let mut dec = RangeDecoder::new(&b.z_payload);
    let mut z = Maps::zeros(zc, zh, zw);
    for (i, v) in z.data.iter_mut().enumerate() {
        *v = decode_escaped(&mut dec, &tables[i / (zh * zw)])? as f32;
    }
    dec.finish()?;

    let sigma = net.scales_for(z, yh, yw);
    let mut dec = RangeDecoder::new(&b.y_payload);
    let mut y = Maps::zeros(yc, yh, yw);
    for (v, &s) in y.data.iter_mut().zip(&sigma) {
        *v = decode_escaped(&mut dec, &gaussian_table(s as f64)?)? as f32;
    }
    dec.finish()?;
    Ok(reconstruct(&net, y, b)?.1)
}
