//! File-level composition of the core operations used by the CLI.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use caufc_core::alignment::align;
use caufc_core::codec::{self, train_with, EpochLog, TrainingLog, TrainingSet};
use caufc_core::eval::{nearest_centroid, pooled, rd_csv, rd_svg, RDRecord, CSV_HEADER};
use caufc_core::{AlignmentSpec, ArchTag, Bitstream, CodecArch, CodecModel, FeatureTensor, TrainingConfig};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::manifest::DatasetManifest;
use crate::model_file::ModelFile;

/// Alignment spec per architecture. Unknown features use the ViT spec.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpecPair {
    pub cnn: AlignmentSpec,
    pub vit: AlignmentSpec,
}

impl Default for SpecPair {
    fn default() -> Self {
        Self {
            cnn: AlignmentSpec::cnn_default(),
            vit: AlignmentSpec::vit_default(),
        }
    }
}

impl SpecPair {
    pub fn for_arch(&self, arch: ArchTag) -> AlignmentSpec {
        match arch {
            ArchTag::CnnLike => self.cnn,
            _ => self.vit,
        }
    }
}

/// Aligns every manifest entry into the per-architecture training pools,
/// keeping manifest order.
pub fn training_set(manifest: &DatasetManifest, specs: &SpecPair) -> Result<TrainingSet> {
    let mut set = TrainingSet::default();
    for (i, e) in manifest.entries.iter().enumerate() {
        let t = manifest.load(i)?;
        let m = align(&t, &specs.for_arch(e.arch))?;
        match e.arch {
            ArchTag::CnnLike => set.cnn.push(m),
            ArchTag::VitLike => set.vit.push(m),
            ArchTag::Unknown => {
                return Err(Error::format(manifest.resolve(e), "training entries must be tagged cnn or vit"));
            }
        }
    }
    Ok(set)
}

/// Trains a fresh model (initialized from `config.seed`) on a manifest.
pub fn train_manifest(
    manifest: &DatasetManifest,
    specs: &SpecPair,
    arch: CodecArch,
    config: &TrainingConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(ModelFile, TrainingLog)> {
    let set = training_set(manifest, specs)?;
    let init = CodecModel::init(arch, config.seed)?;
    let (model, log) = train_with(&init, &set, config, on_epoch)?;
    Ok((ModelFile { model, lambda: config.lambda }, log))
}

pub const TRAIN_LOG_HEADER: &str = "epoch,train_loss,val_loss,lr,val_bpfp,val_mse";

pub fn train_log_csv(log: &TrainingLog) -> String {
    let mut s = String::from(TRAIN_LOG_HEADER);
    s.push('\n');
    for e in &log.epochs {
        let _ = writeln!(s, "{},{},{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.lr, e.val_bpfp, e.val_mse);
    }
    s
}

/// Encodes and serializes one feature.
pub fn encode_bytes(model: &CodecModel, t: &FeatureTensor, spec: &AlignmentSpec) -> Result<Vec<u8>> {
    Ok(codec::encode(model, t, spec)?.to_bytes())
}

pub fn decode_bytes(model: &CodecModel, bytes: &[u8]) -> Result<FeatureTensor> {
    Ok(codec::decode(model, &Bitstream::from_bytes(bytes)?)?)
}

/// Per-feature outcome of an encode/decode round trip.
struct Scored {
    arch: ArchTag,
    bits: u64,
    elements: usize,
    sq_err: f64,
    correct: bool,
}

/// Runs every labeled manifest entry through encode, serialization and
/// decode, and reports one record per architecture present (CNN first).
///
/// BPFP is total payload bits over total elements, MSE is measured in the
/// original feature domain and accuracy is nearest-centroid on mean-pooled
/// reconstructions.
pub fn evaluate(
    model: &ModelFile,
    manifest: &DatasetManifest,
    centroids: &BTreeMap<u8, Vec<Vec<f64>>>,
    specs: &SpecPair,
) -> Result<Vec<RDRecord>> {
    let labeled: Vec<_> = manifest.entries.iter().enumerate().filter(|(_, e)| e.label.is_some()).collect();
    if labeled.is_empty() {
        return Err(Error::Usage("manifest has no labeled entries to evaluate".into()));
    }
    let scored: Vec<Scored> = labeled
        .par_iter()
        .map(|&(i, e)| {
            let label = e.label.unwrap();
            let cents = centroids
                .get(&e.arch.code())
                .ok_or_else(|| Error::Usage(format!("no centroids given for {} features", e.arch.name())))?;
            if label as usize >= cents.len() {
                return Err(caufc_core::Error::MissingCentroid(label).into());
            }
            let t = manifest.load(i)?;
            let bytes = encode_bytes(&model.model, &t, &specs.for_arch(e.arch))?;
            let b = Bitstream::from_bytes(&bytes)?;
            let rec = codec::decode(&model.model, &b)?;
            let sq_err = t.data().iter().zip(rec.data()).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum();
            let p = pooled(&rec);
            if p.len() != cents[0].len() {
                return Err(caufc_core::Error::ShapeMismatch(format!("pooled width {} vs centroid width {}", p.len(), cents[0].len())).into());
            }
            Ok(Scored {
                arch: e.arch,
                bits: b.payload_bits(),
                elements: t.len(),
                sq_err,
                correct: nearest_centroid(&p, cents) == Some(label as usize),
            })
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    for arch in [ArchTag::CnnLike, ArchTag::VitLike, ArchTag::Unknown] {
        let group: Vec<&Scored> = scored.iter().filter(|s| s.arch == arch).collect();
        if group.is_empty() {
            continue;
        }
        let bits: u64 = group.iter().map(|s| s.bits).sum();
        let elements: usize = group.iter().map(|s| s.elements).sum();
        let sq_err: f64 = group.iter().map(|s| s.sq_err).sum();
        let correct = group.iter().filter(|s| s.correct).count();
        records.push(RDRecord {
            lambda: model.lambda,
            arch,
            bpfp: bits as f64 / elements as f64,
            mse: sq_err / elements as f64,
            accuracy: correct as f64 / group.len() as f64,
            n: group.len(),
        });
    }
    Ok(records)
}

pub fn write_records(records: &[RDRecord], path: &Path) -> Result<()> {
    fsutil::write_atomic(path, rd_csv(records).as_bytes())
}

/// Reads a records CSV written by [`write_records`].
pub fn read_records(path: &Path) -> Result<Vec<RDRecord>> {
    let bytes = fsutil::read(path)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::format(path, format!("expected header {:?}", CSV_HEADER)));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::format(path, e.to_string()))?;
        let bad = |what: &str| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 2,
            detail: format!("bad {}", what),
        };
        let num = |k: usize, what: &str| row[k].parse::<f64>().map_err(|_| bad(what));
        out.push(RDRecord {
            lambda: num(0, "lambda")?,
            arch: ArchTag::from_name(&row[1]).ok_or_else(|| bad("arch"))?,
            bpfp: num(2, "bpfp")?,
            mse: num(3, "mse")?,
            accuracy: num(4, "accuracy")?,
            n: row[5].parse().map_err(|_| bad("n"))?,
        });
    }
    Ok(out)
}

/// Writes the combined records as CSV and SVG.
pub fn rd_curve(records: &[RDRecord], csv_path: &Path, svg_path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Usage("an RD curve needs at least one record".into()));
    }
    fsutil::write_atomic(csv_path, rd_csv(records).as_bytes())?;
    fsutil::write_atomic(svg_path, rd_svg(records).as_bytes())
}
