use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use crate::{Error, Result};

/// How a layer maps its input grid to its output grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    /// Zero-padded "same" convolution with the given stride.
    Conv,
    /// Nearest-neighbour upsampling by `stride`, then a stride-1 convolution.
    UpConv,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::Conv => 0,
            LayerKind::UpConv => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: u16,
    pub out_channels: u16,
    pub kernel: u8,
    pub stride: u8,
    /// Leaky ReLU (slope [`LEAKY_SLOPE`]) after the convolution.
    pub activation: bool,
}

pub const LEAKY_SLOPE: f64 = 0.2;

impl LayerSpec {
    pub const fn conv(in_channels: u16, out_channels: u16, kernel: u8, stride: u8, activation: bool) -> Self {
        Self {
            kind: LayerKind::Conv,
            in_channels,
            out_channels,
            kernel,
            stride,
            activation,
        }
    }

    pub const fn up_conv(in_channels: u16, out_channels: u16, kernel: u8, factor: u8, activation: bool) -> Self {
        Self {
            kind: LayerKind::UpConv,
            in_channels,
            out_channels,
            kernel,
            stride: factor,
            activation,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels as usize * self.in_channels as usize * self.kernel as usize * self.kernel as usize
    }

    /// Layer-table type code: bit 0 is the kind, bit 1 the activation.
    pub fn type_code(&self) -> u8 {
        self.kind.code() | ((self.activation as u8) << 1)
    }

    pub fn from_type_code(code: u8, in_channels: u16, out_channels: u16, kernel: u8, stride: u8) -> Option<Self> {
        let kind = match code & 1 {
            0 => LayerKind::Conv,
            _ => LayerKind::UpConv,
        };
        if code > 3 {
            return None;
        }
        Some(Self {
            kind,
            in_channels,
            out_channels,
            kernel,
            stride,
            activation: code & 2 != 0,
        })
    }
}

/// Layer stacks of the hyperprior codec and the shape of its factorized prior.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CodecArch {
    pub analysis: Vec<LayerSpec>,
    pub synthesis: Vec<LayerSpec>,
    pub hyper_analysis: Vec<LayerSpec>,
    pub hyper_synthesis: Vec<LayerSpec>,
    /// Hyper-latent symbols covered by the factorized prior: `[-r, r]`.
    pub prior_radius: u16,
}

/// Hidden width of the default analysis and synthesis transforms.
pub const DEFAULT_HIDDEN_CHANNELS: u16 = 16;

impl Default for CodecArch {
    fn default() -> Self {
        Self::with_hidden_channels(DEFAULT_HIDDEN_CHANNELS)
    }
}

impl CodecArch {
    /// `n`-`n`-8 analysis with strides 2-2-1 (kernel 5), mirrored synthesis,
    /// kernel-3 hyper path with one stride-2 stage and 4 hyper channels.
    pub fn with_hidden_channels(n: u16) -> Self {
        Self {
            analysis: alloc::vec![
                LayerSpec::conv(1, n, 5, 2, true),
                LayerSpec::conv(n, n, 5, 2, true),
                LayerSpec::conv(n, 8, 5, 1, false),
            ],
            synthesis: alloc::vec![
                LayerSpec::conv(8, n, 5, 1, true),
                LayerSpec::up_conv(n, n, 5, 2, true),
                LayerSpec::up_conv(n, 1, 5, 2, false),
            ],
            hyper_analysis: alloc::vec![LayerSpec::conv(8, 8, 3, 1, true), LayerSpec::conv(8, 4, 3, 2, false)],
            hyper_synthesis: alloc::vec![LayerSpec::up_conv(4, 8, 3, 2, true), LayerSpec::conv(8, 8, 3, 1, false)],
            prior_radius: 15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct LayerParams {
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

/// Offsets of every parameter block inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct ParamLayout {
    pub analysis: Vec<LayerParams>,
    pub synthesis: Vec<LayerParams>,
    pub hyper_analysis: Vec<LayerParams>,
    pub hyper_synthesis: Vec<LayerParams>,
    pub prior: Range<usize>,
    pub total: usize,
}

fn stack_stride(stack: &[LayerSpec], kind: LayerKind) -> usize {
    stack.iter().filter(|l| l.kind == kind).map(|l| l.stride as usize).product()
}

impl CodecArch {
    pub fn latent_channels(&self) -> usize {
        self.analysis.last().map(|l| l.out_channels as usize).unwrap_or(0)
    }

    pub fn hyper_channels(&self) -> usize {
        self.hyper_analysis.last().map(|l| l.out_channels as usize).unwrap_or(0)
    }

    /// Symbols per hyper channel in the factorized prior.
    pub fn prior_bins(&self) -> usize {
        2 * self.prior_radius as usize + 1
    }

    /// Downsampling of the analysis transform; inputs are padded to a multiple.
    pub fn total_stride(&self) -> usize {
        stack_stride(&self.analysis, LayerKind::Conv)
    }

    pub fn hyper_stride(&self) -> usize {
        stack_stride(&self.hyper_analysis, LayerKind::Conv)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::InvalidParameter(format!("codec architecture: {}", m)));
        let stacks = [&self.analysis, &self.synthesis, &self.hyper_analysis, &self.hyper_synthesis];
        if stacks.iter().any(|s| s.is_empty()) {
            return err("every stack needs at least one layer");
        }
        for stack in stacks {
            for pair in stack.windows(2) {
                if pair[0].out_channels != pair[1].in_channels {
                    return err("channel counts do not chain");
                }
            }
            for l in stack.iter() {
                if l.kernel % 2 == 0 || l.stride == 0 || l.in_channels == 0 || l.out_channels == 0 {
                    return err("kernels must be odd, strides and channels positive");
                }
            }
        }
        let cy = self.latent_channels() as u16;
        let cz = self.hyper_channels() as u16;
        if self.analysis[0].in_channels != 1 || self.synthesis.last().unwrap().out_channels != 1 {
            return err("input and output must have one channel");
        }
        if self.synthesis[0].in_channels != cy
            || self.hyper_analysis[0].in_channels != cy
            || self.hyper_synthesis.last().unwrap().out_channels != cy
            || self.hyper_synthesis[0].in_channels != cz
        {
            return err("latent channel counts disagree between stacks");
        }
        if self.analysis.iter().any(|l| l.kind != LayerKind::Conv)
            || self.hyper_analysis.iter().any(|l| l.kind != LayerKind::Conv)
            || self.synthesis.iter().chain(&self.hyper_synthesis).any(|l| l.kind == LayerKind::Conv && l.stride != 1)
        {
            return err("analysis stacks downsample with Conv, synthesis stacks upsample with UpConv");
        }
        if stack_stride(&self.synthesis, LayerKind::UpConv) != self.total_stride()
            || stack_stride(&self.hyper_synthesis, LayerKind::UpConv) != self.hyper_stride()
        {
            return err("synthesis upsampling must mirror analysis downsampling");
        }
        if self.prior_radius == 0 || self.prior_radius > 4096 {
            return err("prior radius must be in 1..=4096");
        }
        Ok(())
    }

    pub(crate) fn layout(&self) -> ParamLayout {
        let mut at = 0usize;
        let mut stack = |layers: &[LayerSpec]| -> Vec<LayerParams> {
            layers
                .iter()
                .map(|l| {
                    let w = at..at + l.weight_count();
                    at = w.end;
                    let b = at..at + l.out_channels as usize;
                    at = b.end;
                    LayerParams { weight: w, bias: b }
                })
                .collect()
        };
        let analysis = stack(&self.analysis);
        let synthesis = stack(&self.synthesis);
        let hyper_analysis = stack(&self.hyper_analysis);
        let hyper_synthesis = stack(&self.hyper_synthesis);
        let prior = at..at + self.hyper_channels() * self.prior_bins();
        let total = prior.end;
        ParamLayout {
            analysis,
            synthesis,
            hyper_analysis,
            hyper_synthesis,
            prior,
            total,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    /// All layers in storage order: analysis, synthesis, hyper analysis,
    /// hyper synthesis.
    pub fn stacks(&self) -> [&[LayerSpec]; 4] {
        [&self.analysis, &self.synthesis, &self.hyper_analysis, &self.hyper_synthesis]
    }
}
