use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Memory layout of a feature tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layout {
    /// CNN feature map, dims `(N, H, W)`.
    ChannelMajor3D,
    /// Token sequence, dims `(M, L)`.
    Tokens2D,
}

impl Layout {
    pub fn code(self) -> u8 {
        match self {
            Layout::ChannelMajor3D => 0,
            Layout::Tokens2D => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Layout::ChannelMajor3D),
            1 => Some(Layout::Tokens2D),
            _ => None,
        }
    }

    pub fn ndims(self) -> usize {
        match self {
            Layout::ChannelMajor3D => 3,
            Layout::Tokens2D => 2,
        }
    }
}

/// Which family of network produced a feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArchTag {
    CnnLike,
    VitLike,
    Unknown,
}

impl ArchTag {
    pub fn code(self) -> u8 {
        match self {
            ArchTag::CnnLike => 0,
            ArchTag::VitLike => 1,
            ArchTag::Unknown => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ArchTag::CnnLike),
            1 => Some(ArchTag::VitLike),
            2 => Some(ArchTag::Unknown),
            _ => None,
        }
    }

    /// Short name used in manifests, CSV files and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            ArchTag::CnnLike => "cnn",
            ArchTag::VitLike => "vit",
            ArchTag::Unknown => "unknown",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "cnn" => Some(ArchTag::CnnLike),
            "vit" => Some(ArchTag::VitLike),
            "unknown" => Some(ArchTag::Unknown),
            _ => None,
        }
    }
}

/// A raw feature: row-major `f32` data with its layout and dims.
///
/// Always valid once constructed: dims match the layout, every dim is
/// positive, the data length is the product of dims and every value is
/// finite.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    layout: Layout,
    dims: Vec<usize>,
    data: Vec<f32>,
    arch: ArchTag,
}

impl FeatureTensor {
    pub fn new(layout: Layout, dims: Vec<usize>, data: Vec<f32>, arch: ArchTag) -> Result<Self> {
        check_dims(layout, &dims)?;
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::InvalidShape(format!(
                "dims {:?} need {} values, got {}",
                dims,
                expected,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            layout,
            dims,
            data,
            arch,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn arch(&self) -> ArchTag {
        self.arch
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

pub(crate) fn check_dims(layout: Layout, dims: &[usize]) -> Result<()> {
    if dims.len() != layout.ndims() {
        return Err(Error::InvalidShape(format!(
            "{:?} needs {} dims, got {}",
            layout,
            layout.ndims(),
            dims.len()
        )));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidShape(format!("zero-sized dim in {:?}", dims)));
    }
    if dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).is_none() {
        return Err(Error::InvalidShape(format!("dims {:?} overflow", dims)));
    }
    Ok(())
}

/// A feature together with its class id, as produced by the generators.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFeature {
    pub tensor: FeatureTensor,
    pub label: u32,
}
