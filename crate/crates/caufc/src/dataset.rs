//! Synthetic datasets on disk: CAFT files, a manifest and class centroids.

use std::path::Path;

use caufc_core::synthetic::{GenSpec, Generator};
use caufc_core::{ArchTag, FeatureTensor, Layout};

use crate::caft;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::manifest::{DatasetManifest, ManifestEntry};

pub const MANIFEST_NAME: &str = "manifest.tsv";
pub const CENTROIDS_NAME: &str = "centroids.caft";

/// Writes samples `0..count`; see [`gen_dataset_range`].
pub fn gen_dataset(spec: &GenSpec, count: u64, out_dir: &Path) -> Result<DatasetManifest> {
    gen_dataset_range(spec, 0, count, out_dir)
}

/// Writes samples `start..start + count` of the generator as
/// `<arch>_<index>.caft`, plus `manifest.tsv` and `centroids.caft` (the
/// per-class mean tokens as an `n_classes x L` matrix). Sample `i` has
/// label `i % n_classes`, so any range drawn from one spec shares centroids.
pub fn gen_dataset_range(spec: &GenSpec, start: u64, count: u64, out_dir: &Path) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(Error::Usage("count must be at least 1".into()));
    }
    let generator = Generator::new(spec.clone())?;
    fsutil::create_dir(out_dir)?;
    let mut entries = Vec::with_capacity(count as usize);
    for index in start..start + count {
        let sample = generator.sample(index);
        let name = format!("{}_{:06}.caft", spec.arch.name(), index);
        caft::write_caft(&sample.tensor, &out_dir.join(&name))?;
        entries.push(ManifestEntry {
            path: name,
            arch: spec.arch,
            label: Some(sample.label),
        });
    }
    write_centroids(&generator.pooled_centroids(), spec.arch, &out_dir.join(CENTROIDS_NAME))?;
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    manifest.write(&out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

pub fn write_centroids(centroids: &[Vec<f64>], arch: ArchTag, path: &Path) -> Result<()> {
    let width = centroids.first().map(Vec::len).unwrap_or(0);
    let data = centroids.iter().flat_map(|c| c.iter().map(|&v| v as f32)).collect();
    let t = FeatureTensor::new(Layout::Tokens2D, vec![centroids.len(), width], data, arch)?;
    caft::write_caft(&t, path)
}

/// Centroid rows and their architecture tag.
pub fn read_centroids(path: &Path) -> Result<(ArchTag, Vec<Vec<f64>>)> {
    let t = caft::read_caft(path)?;
    if t.layout() != Layout::Tokens2D {
        return Err(Error::format(path, "centroids must be a 2-D token matrix"));
    }
    let width = t.dims()[1];
    Ok((t.arch(), t.data().chunks(width).map(|r| r.iter().map(|&v| v as f64).collect()).collect()))
}
