//! Command-line front end. Every flag is parsed and validated before any
//! file is written; exit codes are 0 on success, 1 on runtime errors and 2
//! on usage errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use caufc_core::alignment::NormMode;
use caufc_core::codec::ratio_for_lambda;
use caufc_core::synthetic::GenSpec;
use caufc_core::{AlignmentSpec, CodecArch, TrainingConfig};

use crate::dataset::{gen_dataset_range, read_centroids};
use crate::error::{Error, Result};
use crate::manifest::load_manifest;
use crate::model_file::{read_model, write_model};
use crate::pipeline::{self, SpecPair};
use crate::{caft, fsutil};

#[derive(Parser, Debug)]
#[command(name = "caufc", version, about = "Cross-architecture feature codec")]
pub struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Suppress status lines.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic labeled dataset.
    Gen(GenArgs),
    /// Train a codec on a manifest.
    Train(TrainArgs),
    /// Encode a feature file or every entry of a manifest.
    Encode(EncodeArgs),
    /// Decode bitstreams back to feature files.
    Decode(DecodeArgs),
    /// Rate, distortion and proxy accuracy of a model over a manifest.
    Eval(EvalArgs),
    /// Combine record files into one CSV and an SVG plot.
    Curve(CurveArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ArchArg {
    Cnn,
    Vit,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub arch: ArchArg,
    /// `NxHxW` for cnn, `MxL` for vit.
    #[arg(long)]
    pub dims: String,
    #[arg(long)]
    pub count: u64,
    #[arg(long, default_value_t = 4)]
    pub classes: u32,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long = "centroid-scale")]
    pub centroid_scale: Option<f64>,
    /// Index of the first sample; ranges of one spec share class centroids.
    #[arg(long, default_value_t = 0)]
    pub start: u64,
}

/// Per-architecture alignment flags. `--*-norm` takes `standard`,
/// `shifted` (bounds `-hi..hi`) or `shifted:LO,HI`.
#[derive(Args, Debug, Default)]
pub struct SpecArgs {
    /// Use the default presets (the behavior when no other spec flag is set).
    #[arg(long = "preset-specs", conflicts_with_all = ["cnn_trunc", "cnn_norm", "vit_trunc", "vit_norm"])]
    pub preset_specs: bool,
    #[arg(long = "cnn-trunc")]
    pub cnn_trunc: Option<String>,
    #[arg(long = "cnn-norm")]
    pub cnn_norm: Option<String>,
    #[arg(long = "vit-trunc")]
    pub vit_trunc: Option<String>,
    #[arg(long = "vit-norm")]
    pub vit_norm: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub lambda: f64,
    /// CNN:ViT sampling ratio; defaults to the grid value for `--lambda`.
    #[arg(long)]
    pub ratio: Option<String>,
    #[command(flatten)]
    pub specs: SpecArgs,
    #[arg(long = "lr-init")]
    pub lr_init: Option<f64>,
    #[arg(long = "lr-min")]
    pub lr_min: Option<f64>,
    #[arg(long = "plateau-factor")]
    pub plateau_factor: Option<f64>,
    #[arg(long)]
    pub patience: Option<u32>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long = "steps-per-epoch")]
    pub steps_per_epoch: Option<usize>,
    #[arg(long = "max-epochs")]
    pub max_epochs: Option<u32>,
    /// Validation features per architecture, `CNN,VIT`.
    #[arg(long = "val-counts")]
    pub val_counts: Option<String>,
    #[arg(long = "distortion-scale")]
    pub distortion_scale: Option<f64>,
    /// Hidden channels of the analysis and synthesis transforms.
    #[arg(long, default_value_t = caufc_core::codec::DEFAULT_HIDDEN_CHANNELS)]
    pub channels: u16,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    VitDefault,
    CnnDefault,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// A `.caft` file or a manifest.
    #[arg(long)]
    pub input: PathBuf,
    /// Fixed spec for every input; otherwise each feature's architecture
    /// picks its default preset.
    #[arg(long = "spec-preset", value_enum, conflicts_with_all = ["trunc", "norm"])]
    pub spec_preset: Option<Preset>,
    #[arg(long, requires = "norm")]
    pub trunc: Option<String>,
    #[arg(long, requires = "trunc")]
    pub norm: Option<String>,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Centroid files written by `gen`, one per architecture.
    #[arg(long, required = true, num_args = 1..)]
    pub centroids: Vec<PathBuf>,
    #[command(flatten)]
    pub specs: SpecArgs,
    /// Name of the records file inside `--out`.
    #[arg(long = "records-name", default_value = "records.csv")]
    pub records_name: String,
}

#[derive(Args, Debug)]
pub struct CurveArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub records: Vec<PathBuf>,
    #[arg(long, default_value = "rd")]
    pub name: String,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

fn parse_dims(s: &str, arch: ArchArg) -> Result<Vec<usize>> {
    let want = match arch {
        ArchArg::Cnn => 3,
        ArchArg::Vit => 2,
    };
    let dims: Option<Vec<usize>> = s.split('x').map(|p| p.trim().parse().ok().filter(|&d| d > 0)).collect();
    match dims {
        Some(d) if d.len() == want => Ok(d),
        _ => Err(usage(format!("--dims {:?}: expected {} positive sizes joined by 'x'", s, want))),
    }
}

fn parse_ratio(s: &str) -> Result<(u32, u32)> {
    let bad = || usage(format!("--ratio {:?}: expected A:B with both parts >= 1", s));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let (a, b): (u32, u32) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a == 0 || b == 0 {
        return Err(bad());
    }
    Ok((a, b))
}

fn parse_pair<T: std::str::FromStr>(flag: &str, s: &str) -> Result<(T, T)> {
    let bad = || usage(format!("{} {:?}: expected two comma-separated numbers", flag, s));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// Builds one spec from `--*-trunc` / `--*-norm`, falling back to `preset`.
fn build_spec(flag: &str, trunc: Option<&str>, norm: Option<&str>, preset: AlignmentSpec) -> Result<AlignmentSpec> {
    if trunc.is_none() && norm.is_none() {
        return Ok(preset);
    }
    let (lo, hi) = match trunc {
        Some(t) => parse_pair::<f32>(&format!("--{}trunc", flag), t)?,
        None => (preset.trunc_lo(), preset.trunc_hi()),
    };
    let norm = norm.unwrap_or(match preset.mode() {
        NormMode::Standard => "standard",
        NormMode::Shifted => "shifted",
    });
    let (mode, nlo, nhi) = match norm.split_once(':') {
        None if norm == "standard" => (NormMode::Standard, lo, hi),
        None if norm == "shifted" => (NormMode::Shifted, -hi, hi),
        Some(("shifted", b)) => {
            let (a, b) = parse_pair::<f32>(&format!("--{}norm", flag), b)?;
            (NormMode::Shifted, a, b)
        }
        _ => return Err(usage(format!("--{}norm {:?}: expected standard, shifted or shifted:LO,HI", flag, norm))),
    };
    AlignmentSpec::new(lo, hi, mode, nlo, nhi).map_err(|e| usage(format!("--{}trunc/--{}norm: {}", flag, flag, e)))
}

fn spec_pair(a: &SpecArgs) -> Result<SpecPair> {
    let d = SpecPair::default();
    Ok(SpecPair {
        cnn: build_spec("cnn-", a.cnn_trunc.as_deref(), a.cnn_norm.as_deref(), d.cnn)?,
        vit: build_spec("vit-", a.vit_trunc.as_deref(), a.vit_norm.as_deref(), d.vit)?,
    })
}

/// Default codec architecture with `channels` hidden channels.
pub fn arch_with_channels(channels: u16) -> Result<CodecArch> {
    let arch = CodecArch::with_hidden_channels(channels);
    arch.validate().map_err(|e| usage(format!("--channels {}: {}", channels, e)))?;
    Ok(arch)
}

struct Status {
    quiet: bool,
}

impl Status {
    fn line(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

/// Parses `CAUFC_THREADS` (unset or 0 = automatic).
fn thread_count() -> Result<usize> {
    match std::env::var("CAUFC_THREADS") {
        Err(_) => Ok(0),
        Ok(v) => v.trim().parse().map_err(|_| usage(format!("CAUFC_THREADS {:?} is not a non-negative integer", v))),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = thread_count()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| usage(format!("CAUFC_THREADS: {}", e)))?;
    let status = Status { quiet: cli.quiet };
    pool.install(|| match cli.command {
        Command::Gen(a) => cmd_gen(a, cli.seed, &cli.out, &status),
        Command::Train(a) => cmd_train(a, cli.seed, &cli.out, &status),
        Command::Encode(a) => cmd_encode(a, &cli.out, &status),
        Command::Decode(a) => cmd_decode(a, &cli.out, &status),
        Command::Eval(a) => cmd_eval(a, &cli.out, &status),
        Command::Curve(a) => cmd_curve(a, &cli.out, &status),
    })
}

fn cmd_gen(a: GenArgs, seed: u64, out: &Path, status: &Status) -> Result<()> {
    let dims = parse_dims(&a.dims, a.arch)?;
    if a.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    if a.classes == 0 {
        return Err(usage("--classes must be at least 1"));
    }
    let mut spec = match a.arch {
        ArchArg::Cnn => GenSpec::cnn(dims, a.classes, seed),
        ArchArg::Vit => GenSpec::vit(dims, a.classes, seed),
    };
    if let Some(n) = a.noise {
        spec.noise_scale = n;
    }
    if let Some(c) = a.centroid_scale {
        spec.centroid_scale = c;
    }
    spec.validate().map_err(|e| usage(format!("--noise/--centroid-scale: {}", e)))?;
    let m = gen_dataset_range(&spec, a.start, a.count, out)?;
    status.line(format!("wrote {} features to {}", m.entries.len(), out.display()));
    Ok(())
}

fn cmd_train(a: TrainArgs, seed: u64, out: &Path, status: &Status) -> Result<()> {
    let ratio = match a.ratio.as_deref() {
        Some(r) => parse_ratio(r)?,
        None => ratio_for_lambda(a.lambda).ok_or_else(|| usage(format!("--lambda {} is not on the grid; pass --ratio", a.lambda)))?,
    };
    let mut cfg = TrainingConfig::new(a.lambda, ratio);
    cfg.seed = seed;
    if let Some(v) = a.lr_init {
        cfg.lr_init = v;
    }
    if let Some(v) = a.lr_min {
        cfg.lr_min = v;
    }
    if let Some(v) = a.plateau_factor {
        cfg.plateau_factor = v;
    }
    if let Some(v) = a.patience {
        cfg.plateau_patience = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.steps_per_epoch {
        cfg.steps_per_epoch = v;
    }
    if let Some(v) = a.distortion_scale {
        cfg.distortion_scale = v;
    }
    cfg.max_epochs = a.max_epochs;
    if let Some(v) = a.val_counts.as_deref() {
        cfg.val_counts = parse_pair("--val-counts", v)?;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let specs = spec_pair(&a.specs)?;
    let arch = arch_with_channels(a.channels)?;
    let manifest = load_manifest(&a.manifest)?;
    fsutil::create_dir(out)?;
    let (model, log) = pipeline::train_manifest(&manifest, &specs, arch, &cfg, |e| {
        status.line(format!(
            "epoch {} train {:.5} val {:.5} bpfp {:.4} mse {:.6} lr {:.3e}",
            e.epoch, e.train_loss, e.val_loss, e.val_bpfp, e.val_mse, e.lr
        ))
    })?;
    write_model(&model, &out.join("model.cafm"))?;
    fsutil::write_atomic(&out.join("train_log.csv"), pipeline::train_log_csv(&log).as_bytes())?;
    status.line(format!("model {:016x}, best epoch {}", model.model.model_hash(), log.best_epoch));
    Ok(())
}

fn encode_spec(a: &EncodeArgs) -> Result<Option<AlignmentSpec>> {
    Ok(match (a.spec_preset, a.trunc.as_deref(), a.norm.as_deref()) {
        (Some(Preset::VitDefault), ..) => Some(AlignmentSpec::vit_default()),
        (Some(Preset::CnnDefault), ..) => Some(AlignmentSpec::cnn_default()),
        (None, Some(t), Some(n)) => Some(build_spec("", Some(t), Some(n), AlignmentSpec::vit_default())?),
        _ => None,
    })
}

fn is_caft(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "caft")
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into())
}

fn cmd_encode(a: EncodeArgs, out: &Path, status: &Status) -> Result<()> {
    use rayon::prelude::*;
    let fixed = encode_spec(&a)?;
    let model = read_model(&a.model)?.model;
    let inputs: Vec<PathBuf> = if is_caft(&a.input) {
        vec![a.input.clone()]
    } else {
        let m = load_manifest(&a.input)?;
        m.entries.iter().map(|e| m.resolve(e)).collect()
    };
    let encoded: Vec<(PathBuf, Vec<u8>)> = inputs
        .par_iter()
        .map(|p| {
            let t = caft::read_caft(p)?;
            let spec = fixed.unwrap_or_else(|| AlignmentSpec::preset_for(t.arch()));
            Ok((out.join(format!("{}.cafb", stem(p))), pipeline::encode_bytes(&model, &t, &spec)?))
        })
        .collect::<Result<_>>()?;
    fsutil::create_dir(out)?;
    let mut bytes = 0;
    for (p, b) in &encoded {
        fsutil::write_atomic(p, b)?;
        bytes += b.len();
    }
    status.line(format!("encoded {} features, {} bytes", encoded.len(), bytes));
    Ok(())
}

fn cmd_decode(a: DecodeArgs, out: &Path, status: &Status) -> Result<()> {
    use rayon::prelude::*;
    let model = read_model(&a.model)?.model;
    let decoded: Vec<_> = a
        .input
        .par_iter()
        .map(|p| Ok((out.join(format!("{}.caft", stem(p))), pipeline::decode_bytes(&model, &fsutil::read(p)?)?)))
        .collect::<Result<_>>()?;
    fsutil::create_dir(out)?;
    for (p, t) in &decoded {
        caft::write_caft(t, p)?;
    }
    status.line(format!("decoded {} bitstreams", decoded.len()));
    Ok(())
}

fn cmd_eval(a: EvalArgs, out: &Path, status: &Status) -> Result<()> {
    let specs = spec_pair(&a.specs)?;
    let model = read_model(&a.model)?;
    let manifest = load_manifest(&a.manifest)?;
    let mut centroids = BTreeMap::new();
    for p in &a.centroids {
        let (arch, c) = read_centroids(p)?;
        if centroids.insert(arch.code(), c).is_some() {
            return Err(usage(format!("--centroids: two files for {} features", arch.name())));
        }
    }
    let records = pipeline::evaluate(&model, &manifest, &centroids, &specs)?;
    fsutil::create_dir(out)?;
    pipeline::write_records(&records, &out.join(&a.records_name))?;
    for r in &records {
        status.line(format!(
            "lambda {} {}: bpfp {:.5} mse {:.6} accuracy {:.4} (n = {})",
            r.lambda,
            r.arch.name(),
            r.bpfp,
            r.mse,
            r.accuracy,
            r.n
        ));
    }
    Ok(())
}

fn cmd_curve(a: CurveArgs, out: &Path, status: &Status) -> Result<()> {
    let mut records = Vec::new();
    for p in &a.records {
        records.extend(pipeline::read_records(p)?);
    }
    fsutil::create_dir(out)?;
    let (csv, svg) = (out.join(format!("{}.csv", a.name)), out.join(format!("{}.svg", a.name)));
    pipeline::rd_curve(&records, &csv, &svg)?;
    status.line(format!("{} records -> {}, {}", records.len(), csv.display(), svg.display()));
    Ok(())
}
