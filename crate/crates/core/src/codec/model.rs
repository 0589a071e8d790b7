use alloc::format;
use alloc::vec::Vec;

use super::arch::CodecArch;
use super::prior::FactorizedPrior;
use crate::rng::{tag, SplitMix64};
use crate::{Error, Result};

/// Smallest predicted Gaussian scale.
pub const DEFAULT_SCALE_FLOOR: f32 = 0.04;

/// All learnable parameters of the codec plus its architecture.
///
/// Parameters are stored flat, stack by stack (analysis, synthesis, hyper
/// analysis, hyper synthesis), each layer as weights `[out][in][k][k]`
/// followed by biases, then the factorized-prior logits `[channel][bin]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CodecModel {
    arch: CodecArch,
    params: Vec<f32>,
    scale_floor: f32,
}

/// 64-bit FNV-1a over the little-endian parameter bytes.
pub fn params_hash(params: &[f32]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in params {
        for b in p.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl CodecModel {
    /// Fresh model: He-style normal weights, zero biases and a symmetric,
    /// Laplace-shaped factorized prior.
    pub fn init(arch: CodecArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        let mut params = alloc::vec![0.0f32; layout.total];
        let mut rng = SplitMix64::stream(seed, tag::INIT, 0);
        let stacks = arch.stacks();
        let blocks = [&layout.analysis, &layout.synthesis, &layout.hyper_analysis, &layout.hyper_synthesis];
        for (layers, offsets) in stacks.iter().zip(blocks) {
            for (l, off) in layers.iter().zip(offsets.iter()) {
                let fan_in = (l.in_channels as usize * l.kernel as usize * l.kernel as usize) as f64;
                let gain = if l.activation { 2.0 / (1.0 + 0.04) } else { 1.0 };
                let std = libm::sqrt(gain / fan_in);
                for w in &mut params[off.weight.clone()] {
                    *w = (rng.next_normal() * std) as f32;
                }
            }
        }
        let bins = arch.prior_bins();
        let r = arch.prior_radius as f64;
        for c in 0..arch.hyper_channels() {
            for j in 0..bins {
                params[layout.prior.start + c * bins + j] = (-0.5 * libm::fabs(j as f64 - r)) as f32;
            }
        }
        Self::from_parts(arch, params, DEFAULT_SCALE_FLOOR)
    }

    pub fn from_parts(arch: CodecArch, params: Vec<f32>, scale_floor: f32) -> Result<Self> {
        arch.validate()?;
        let want = arch.param_count();
        if params.len() != want {
            return Err(Error::InvalidParameter(format!("expected {} parameters, got {}", want, params.len())));
        }
        if let Some(index) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if !(scale_floor.is_finite() && scale_floor > 0.0) {
            return Err(Error::InvalidParameter(format!("scale floor must be positive, got {}", scale_floor)));
        }
        Ok(Self { arch, params, scale_floor })
    }

    pub fn arch(&self) -> &CodecArch {
        &self.arch
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn scale_floor(&self) -> f32 {
        self.scale_floor
    }

    pub fn model_hash(&self) -> u64 {
        params_hash(&self.params)
    }

    pub fn prior(&self) -> FactorizedPrior {
        let layout = self.arch.layout();
        FactorizedPrior::from_logits(&self.params[layout.prior], self.arch.hyper_channels(), self.arch.prior_radius as usize)
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }
}
