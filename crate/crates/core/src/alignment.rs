//! Format alignment (tokenization) and value alignment (truncation and
//! normalization).
//!
//! A CNN feature `(N, H, W)` becomes an `(H*W) x N` token matrix: row
//! `r = h*W + w` gathers every channel's value at spatial location `(h, w)`,
//! so each column holds one channel, just as each column of a transformer
//! token matrix holds one learned attribute. Transformer features pass
//! through unchanged.
//!
//! Values are then clamped to `[trunc_lo, trunc_hi]` and mapped affinely by
//! `(x - norm_lo) / (norm_hi - norm_lo)`. In shifted mode the lower bound is
//! borrowed from the transformer range, so ReLU-positive CNN values land in
//! the upper half of `[0, 1]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{ArchTag, FeatureTensor, Layout};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormMode {
    Standard,
    Shifted,
}

impl NormMode {
    pub fn code(self) -> u8 {
        match self {
            NormMode::Standard => 0,
            NormMode::Shifted => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(NormMode::Standard),
            1 => Some(NormMode::Shifted),
            _ => None,
        }
    }
}

/// Truncation and normalization bounds; fully determines the value mapping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignmentSpec {
    trunc_lo: f32,
    trunc_hi: f32,
    mode: NormMode,
    norm_lo: f32,
    norm_hi: f32,
}

/// Serialized size of an [`AlignmentSpec`].
pub const SPEC_BYTES: usize = 17;

impl AlignmentSpec {
    pub fn new(trunc_lo: f32, trunc_hi: f32, mode: NormMode, norm_lo: f32, norm_hi: f32) -> Result<Self> {
        let all = [trunc_lo, trunc_hi, norm_lo, norm_hi];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite alignment bounds {:?}", all)));
        }
        if trunc_lo >= trunc_hi || norm_lo >= norm_hi {
            return Err(Error::InvalidParameter(format!(
                "bounds must be increasing: trunc [{}, {}], norm [{}, {}]",
                trunc_lo, trunc_hi, norm_lo, norm_hi
            )));
        }
        match mode {
            NormMode::Standard if norm_lo != trunc_lo || norm_hi != trunc_hi => {
                Err(Error::InvalidParameter(format!(
                    "standard normalization must reuse the truncation bounds [{}, {}], got [{}, {}]",
                    trunc_lo, trunc_hi, norm_lo, norm_hi
                )))
            }
            NormMode::Shifted if norm_lo > trunc_lo => Err(Error::InvalidParameter(format!(
                "shifted normalization lower bound {} must not exceed truncation lower bound {}",
                norm_lo, trunc_lo
            ))),
            _ => Ok(Self {
                trunc_lo,
                trunc_hi,
                mode,
                norm_lo,
                norm_hi,
            }),
        }
    }

    /// Truncate to `[lo, hi]` and normalize with the same bounds.
    pub fn standard(lo: f32, hi: f32) -> Result<Self> {
        Self::new(lo, hi, NormMode::Standard, lo, hi)
    }

    /// Transformer preset: `[-5, 5]`, standard normalization.
    pub fn vit_default() -> Self {
        Self::vit_range(5.0).expect("preset is valid")
    }

    /// CNN preset: truncate to `[0, 5]`, normalize with `[-5, 5]`.
    pub fn cnn_default() -> Self {
        Self::cnn_range(5.0).expect("preset is valid")
    }

    /// Symmetric transformer range `[-r, r]` (the ablation ranges are 3 and 10).
    pub fn vit_range(r: f32) -> Result<Self> {
        Self::standard(-r, r)
    }

    /// CNN range `[0, r]` shifted onto the transformer range `[-r, r]`.
    pub fn cnn_range(r: f32) -> Result<Self> {
        Self::new(0.0, r, NormMode::Shifted, -r, r)
    }

    /// Default preset for an architecture; unknown features use the
    /// transformer preset.
    pub fn preset_for(arch: ArchTag) -> Self {
        match arch {
            ArchTag::CnnLike => Self::cnn_default(),
            ArchTag::VitLike | ArchTag::Unknown => Self::vit_default(),
        }
    }

    pub fn trunc_lo(&self) -> f32 {
        self.trunc_lo
    }
    pub fn trunc_hi(&self) -> f32 {
        self.trunc_hi
    }
    pub fn mode(&self) -> NormMode {
        self.mode
    }
    pub fn norm_lo(&self) -> f32 {
        self.norm_lo
    }
    pub fn norm_hi(&self) -> f32 {
        self.norm_hi
    }

    /// `mode u8 | trunc_lo f32 | trunc_hi f32 | norm_lo f32 | norm_hi f32`, little-endian.
    pub fn to_bytes(&self) -> [u8; SPEC_BYTES] {
        let mut out = [0u8; SPEC_BYTES];
        out[0] = self.mode.code();
        for (i, v) in [self.trunc_lo, self.trunc_hi, self.norm_lo, self.norm_hi].iter().enumerate() {
            out[1 + 4 * i..5 + 4 * i].copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < SPEC_BYTES {
            return Err(Error::InvalidParameter("alignment spec truncated".into()));
        }
        let mode = NormMode::from_code(bytes[0])
            .ok_or_else(|| Error::InvalidParameter(format!("unknown normalization mode {}", bytes[0])))?;
        let f = |i: usize| f32::from_le_bytes([bytes[1 + 4 * i], bytes[2 + 4 * i], bytes[3 + 4 * i], bytes[4 + 4 * i]]);
        Self::new(f(0), f(1), mode, f(2), f(3))
    }
}

/// Where a token matrix came from; needed to undo tokenization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenOrigin {
    FromCnn {
        channels: usize,
        height: usize,
        width: usize,
    },
    NativeTokens,
}

/// Row-major `rows x cols` matrix of tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    origin: TokenOrigin,
    arch: ArchTag,
}

impl TokenMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>, origin: TokenOrigin, arch: ArchTag) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::InvalidShape(format!(
                "token matrix {}x{} with {} values",
                rows,
                cols,
                data.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            data,
            origin,
            arch,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn origin(&self) -> TokenOrigin {
        self.origin
    }
    pub fn arch(&self) -> ArchTag {
        self.arch
    }
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub(crate) fn with_data(&self, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            data,
            ..self.clone()
        }
    }

    /// Column means over all tokens: the pooled `1 x cols` feature vector.
    pub fn mean_token(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.cols];
        for r in 0..self.rows {
            for (a, &v) in acc.iter_mut().zip(self.row(r)) {
                *a += v as f64;
            }
        }
        let n = self.rows as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

pub fn tokenize(t: &FeatureTensor) -> TokenMatrix {
    let dims = t.dims();
    match t.layout() {
        Layout::Tokens2D => TokenMatrix {
            rows: dims[0],
            cols: dims[1],
            data: t.data().to_vec(),
            origin: TokenOrigin::NativeTokens,
            arch: t.arch(),
        },
        Layout::ChannelMajor3D => {
            let (n, h, w) = (dims[0], dims[1], dims[2]);
            let plane = h * w;
            let src = t.data();
            let mut data = vec![0.0f32; n * plane];
            for c in 0..n {
                for (r, &v) in src[c * plane..(c + 1) * plane].iter().enumerate() {
                    data[r * n + c] = v;
                }
            }
            TokenMatrix {
                rows: plane,
                cols: n,
                data,
                origin: TokenOrigin::FromCnn {
                    channels: n,
                    height: h,
                    width: w,
                },
                arch: t.arch(),
            }
        }
    }
}

pub fn detokenize(m: &TokenMatrix) -> Result<FeatureTensor> {
    match m.origin {
        TokenOrigin::NativeTokens => {
            FeatureTensor::new(Layout::Tokens2D, vec![m.rows, m.cols], m.data.clone(), m.arch)
        }
        TokenOrigin::FromCnn {
            channels,
            height,
            width,
        } => {
            let plane = height * width;
            if m.rows != plane || m.cols != channels {
                return Err(Error::ShapeMismatch(format!(
                    "{}x{} tokens cannot come from a {}x{}x{} feature",
                    m.rows, m.cols, channels, height, width
                )));
            }
            let mut data = vec![0.0f32; channels * plane];
            for r in 0..plane {
                for (c, &v) in m.row(r).iter().enumerate() {
                    data[c * plane + r] = v;
                }
            }
            FeatureTensor::new(Layout::ChannelMajor3D, vec![channels, height, width], data, m.arch)
        }
    }
}

pub fn truncate(m: &TokenMatrix, lo: f32, hi: f32) -> TokenMatrix {
    debug_assert!(lo < hi);
    m.with_data(m.data.iter().map(|&v| v.clamp(lo, hi)).collect())
}

pub fn normalize(m: &TokenMatrix, spec: &AlignmentSpec) -> Result<TokenMatrix> {
    let (lo, hi) = (spec.norm_lo as f64, spec.norm_hi as f64);
    let span = hi - lo;
    let mut out = Vec::with_capacity(m.data.len());
    for (index, &v) in m.data.iter().enumerate() {
        if !(spec.trunc_lo..=spec.trunc_hi).contains(&v) {
            return Err(Error::OutOfRange {
                index,
                value: v,
                lo: spec.trunc_lo,
                hi: spec.trunc_hi,
            });
        }
        out.push(((v as f64 - lo) / span) as f32);
    }
    Ok(m.with_data(out))
}

pub fn denormalize(m: &TokenMatrix, spec: &AlignmentSpec) -> TokenMatrix {
    let (lo, hi) = (spec.norm_lo as f64, spec.norm_hi as f64);
    let span = hi - lo;
    m.with_data(m.data.iter().map(|&v| (v as f64 * span + lo) as f32).collect())
}

/// `normalize(truncate(tokenize(t)))`.
pub fn align(t: &FeatureTensor, spec: &AlignmentSpec) -> Result<TokenMatrix> {
    let tokens = tokenize(t);
    normalize(&truncate(&tokens, spec.trunc_lo, spec.trunc_hi), spec)
}

/// `detokenize(denormalize(m))`; exact inverse of [`align`] up to float
/// rounding for values that were inside the truncation range.
pub fn unalign(m: &TokenMatrix, spec: &AlignmentSpec) -> Result<FeatureTensor> {
    detokenize(&denormalize(m, spec))
}
