//! Mixed-architecture training: ratio sampling, Adam, plateau schedule and
//! best-validation selection.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::model::CodecModel;
use super::network::{mse, ForwardMode, Net, Noise};
use crate::alignment::TokenMatrix;
use crate::rng::{tag, SplitMix64};
use crate::tensor::ArchTag;
use crate::{Error, Result};

/// The four operating points: lambda and its CNN:ViT sampling ratio.
pub const LAMBDA_GRID: [(f64, (u32, u32)); 4] = [(0.001, (1, 1)), (0.003, (1, 2)), (0.005, (1, 3)), (0.01, (1, 5))];

/// Sampling ratio paired with `lambda` on the standard grid.
pub fn ratio_for_lambda(lambda: f64) -> Option<(u32, u32)> {
    LAMBDA_GRID.iter().find(|(l, _)| (l - lambda).abs() <= 1e-12 * l).map(|&(_, r)| r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub lambda: f64,
    /// Long-run CnnLike:VitLike draw ratio.
    pub ratio_cnn_to_vit: (u32, u32),
    pub lr_init: f64,
    pub lr_min: f64,
    pub plateau_factor: f64,
    /// Epochs without improvement tolerated before the rate is reduced.
    pub plateau_patience: u32,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub seed: u64,
    /// Held-out (CnnLike, VitLike) feature counts, taken from the front of each pool.
    pub val_counts: (usize, usize),
    /// Hard cap on epochs; `None` trains until the rate reaches `lr_min`.
    pub max_epochs: Option<u32>,
    /// Multiplier on the MSE term, so the effective distortion weight is
    /// `lambda * distortion_scale`. Inputs live in `[0, 1]`; 255^2 puts the
    /// weight on the customary 8-bit scale.
    pub distortion_scale: f64,
}

pub const DEFAULT_DISTORTION_SCALE: f64 = 255.0 * 255.0;

impl TrainingConfig {
    pub fn new(lambda: f64, ratio_cnn_to_vit: (u32, u32)) -> Self {
        Self {
            lambda,
            ratio_cnn_to_vit,
            lr_init: 1e-4,
            lr_min: 1e-8,
            plateau_factor: 0.5,
            plateau_patience: 20,
            batch_size: 8,
            steps_per_epoch: 50,
            seed: 0,
            val_counts: (100, 100),
            max_epochs: None,
            distortion_scale: DEFAULT_DISTORTION_SCALE,
        }
    }

    pub fn distortion_weight(&self) -> f64 {
        self.lambda * self.distortion_scale
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("training config: {}", m)));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if self.ratio_cnn_to_vit.0 < 1 || self.ratio_cnn_to_vit.1 < 1 {
            return bad("ratio parts must be at least 1");
        }
        if !(self.lr_min > 0.0 && self.lr_min < self.lr_init && self.lr_init.is_finite()) {
            return bad("need 0 < lr_min < lr_init");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau factor must be in (0, 1)");
        }
        if self.batch_size == 0 || self.steps_per_epoch == 0 {
            return bad("batch size and steps per epoch must be positive");
        }
        if self.val_counts.0 == 0 || self.val_counts.1 == 0 {
            return bad("validation needs features of both architectures");
        }
        if !(self.distortion_scale > 0.0 && self.distortion_scale.is_finite()) {
            return bad("distortion scale must be positive");
        }
        if self.max_epochs == Some(0) {
            return bad("max_epochs must be positive");
        }
        Ok(())
    }
}

/// Deterministic architecture sequence with exactly `a` CnnLike and `b`
/// VitLike draws in every cycle of `a + b`, spread evenly.
#[derive(Clone, Debug)]
pub struct RatioSampler {
    a: u64,
    b: u64,
    pos: u64,
}

impl RatioSampler {
    pub fn new(ratio: (u32, u32)) -> Self {
        Self {
            a: ratio.0 as u64,
            b: ratio.1 as u64,
            pos: 0,
        }
    }
}

impl Iterator for RatioSampler {
    type Item = ArchTag;

    fn next(&mut self) -> Option<ArchTag> {
        let n = self.a + self.b;
        let k = self.pos % n;
        self.pos += 1;
        let cnn = (k + 1) * self.a / n > k * self.a / n;
        Some(if cnn { ArchTag::CnnLike } else { ArchTag::VitLike })
    }
}

/// Aligned training features grouped by architecture.
#[derive(Clone, Debug, Default)]
pub struct TrainingSet {
    pub cnn: Vec<TokenMatrix>,
    pub vit: Vec<TokenMatrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_bpfp: f64,
    pub val_mse: f64,
    /// Learning rate after this epoch's schedule update.
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: u32,
}

/// Mean loss, pooled BPFP and pooled MSE of rounded coding over `samples`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SetScore {
    pub loss: f64,
    pub bpfp: f64,
    pub mse: f64,
}

pub fn score_set(model: &CodecModel, samples: &[&TokenMatrix], distortion_weight: f64) -> Result<SetScore> {
    let net = Net::<f32>::new(model.arch(), model.params(), model.scale_floor() as f64)?;
    let (mut loss, mut bits, mut sse, mut n) = (0.0, 0.0, 0.0, 0.0);
    for x in samples {
        let p = net.forward(x.data(), x.rows(), x.cols(), ForwardMode::EvalRound, false)?;
        let count = x.data().len() as f64;
        let b = p.y_bits + p.z_bits;
        let m = mse(&p.x_hat.data, x.data());
        loss += b / count + distortion_weight * m;
        bits += b;
        sse += m * count;
        n += count;
    }
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(SetScore {
        loss: loss / samples.len() as f64,
        bpfp: bits / n,
        mse: sse / n,
    })
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    const B1: f32 = 0.9;
    const B2: f32 = 0.999;
    const EPS: f32 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f32], grad: &[f32], lr: f32) {
        self.t += 1;
        let c1 = 1.0 - libm::powf(Self::B1, self.t as f32);
        let c2 = 1.0 - libm::powf(Self::B2, self.t as f32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (libm::sqrtf(vh) + Self::EPS);
        }
    }
}

/// Relative-threshold plateau detector.
struct Plateau {
    best: f64,
    bad: u32,
}

impl Plateau {
    const THRESHOLD: f64 = 1e-4;

    /// Returns true when the rate should drop.
    fn update(&mut self, val: f64, patience: u32) -> bool {
        if val < self.best * (1.0 - Self::THRESHOLD) {
            self.best = val;
            self.bad = 0;
        } else {
            self.bad += 1;
        }
        if self.bad > patience {
            self.bad = 0;
            true
        } else {
            false
        }
    }
}

pub fn train(model: &CodecModel, data: &TrainingSet, config: &TrainingConfig) -> Result<(CodecModel, TrainingLog)> {
    train_with(model, data, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    model: &CodecModel,
    data: &TrainingSet,
    config: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(CodecModel, TrainingLog)> {
    config.validate()?;
    if data.cnn.is_empty() {
        return Err(Error::MissingArch("cnn"));
    }
    if data.vit.is_empty() {
        return Err(Error::MissingArch("vit"));
    }
    let (vc, vv) = config.val_counts;
    if data.cnn.len() <= vc || data.vit.len() <= vv {
        return Err(Error::InvalidParameter(format!(
            "need more than {} cnn and {} vit features to hold out validation, have {} and {}",
            vc,
            vv,
            data.cnn.len(),
            data.vit.len()
        )));
    }
    let val: Vec<&TokenMatrix> = data.cnn[..vc].iter().chain(&data.vit[..vv]).collect();
    let pools = [&data.cnn[vc..], &data.vit[vv..]];

    let weight = config.distortion_weight();
    let mut current = model.clone();
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut log = TrainingLog::default();
    let mut adam = Adam::new(current.params().len());
    let mut sampler = RatioSampler::new(config.ratio_cnn_to_vit);
    let mut plateau = Plateau {
        best: f64::INFINITY,
        bad: 0,
    };
    let mut lr = config.lr_init;
    let mut draws: u64 = 0;
    let mut grad = vec![0.0f32; current.params().len()];

    for epoch in 1u32.. {
        let mut train_loss = 0.0;
        for step in 0..config.steps_per_epoch {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut rng = SplitMix64::stream(config.seed, tag::BATCH, (epoch as u64) << 32 | step as u64);
            let net = Net::<f32>::new(current.arch(), current.params(), current.scale_floor() as f64)?;
            for _ in 0..config.batch_size {
                let pool = match sampler.next() {
                    Some(ArchTag::CnnLike) => pools[0],
                    _ => pools[1],
                };
                let x = &pool[rng.below(pool.len() as u64) as usize];
                let noise = Noise::Seeded {
                    seed: config.seed,
                    index: draws,
                };
                draws += 1;
                let pass = net.forward(x.data(), x.rows(), x.cols(), ForwardMode::TrainNoise(noise), true)?;
                let n = x.data().len() as f64;
                let loss = (pass.y_bits + pass.z_bits) / n + weight * mse(&pass.x_hat.data, x.data());
                if !loss.is_finite() {
                    return Err(Error::Divergence(format!("non-finite training loss at epoch {}", epoch)));
                }
                train_loss += loss;
                let g = net.backward(&pass, x.data(), weight)?;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += *b;
                }
            }
            let inv = 1.0 / config.batch_size as f32;
            grad.iter_mut().for_each(|g| *g *= inv);
            adam.step(current.params_mut(), &grad, lr as f32);
        }
        train_loss /= (config.steps_per_epoch * config.batch_size) as f64;

        let score = score_set(&current, &val, weight)?;
        if !score.loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite validation loss at epoch {}", epoch)));
        }
        if score.loss < best_val {
            best_val = score.loss;
            best = current.clone();
            log.best_epoch = epoch;
        }
        if plateau.update(score.loss, config.plateau_patience) {
            lr = (lr * config.plateau_factor).max(config.lr_min);
        }
        let entry = EpochLog {
            epoch,
            train_loss,
            val_loss: score.loss,
            val_bpfp: score.bpfp,
            val_mse: score.mse,
            lr,
        };
        on_epoch(&entry);
        log.epochs.push(entry);
        if lr <= config.lr_min || config.max_epochs.is_some_and(|m| epoch >= m) {
            break;
        }
    }
    Ok((best, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::TokenOrigin;
    use crate::codec::arch::CodecArch;

    #[test]
    fn grid_ratios() {
        assert_eq!(ratio_for_lambda(0.001), Some((1, 1)));
        assert_eq!(ratio_for_lambda(0.01), Some((1, 5)));
        assert_eq!(ratio_for_lambda(0.002), None);
    }

    #[test]
    fn sampler_hits_ratio_every_cycle() {
        for &(a, b) in &[(1u32, 1u32), (1, 5), (2, 3), (4, 1)] {
            let draws: Vec<ArchTag> = RatioSampler::new((a, b)).take(((a + b) * 7) as usize).collect();
            for cycle in draws.chunks((a + b) as usize) {
                assert_eq!(cycle.iter().filter(|t| **t == ArchTag::CnnLike).count(), a as usize);
            }
        }
        let s: Vec<ArchTag> = RatioSampler::new((1, 1)).take(4).collect();
        assert_eq!(s, [ArchTag::VitLike, ArchTag::CnnLike, ArchTag::VitLike, ArchTag::CnnLike]);
    }

    #[test]
    fn plateau_waits_for_patience() {
        let mut p = Plateau {
            best: f64::INFINITY,
            bad: 0,
        };
        assert!(!p.update(1.0, 2));
        assert!(!p.update(1.0, 2));
        assert!(!p.update(0.99995, 2));
        assert!(p.update(1.0, 2));
        assert!(!p.update(0.5, 2));
    }

    #[test]
    fn config_validation() {
        let mut c = TrainingConfig::new(0.01, (1, 5));
        c.validate().unwrap();
        c.ratio_cnn_to_vit = (0, 5);
        assert!(c.validate().is_err());
        let mut c = TrainingConfig::new(0.0, (1, 1));
        assert!(c.validate().is_err());
        c.lambda = 0.1;
        c.lr_min = 1e-3;
        assert!(c.validate().is_err());
    }

    fn set(n: usize, seed: u64) -> TrainingSet {
        let mut rng = SplitMix64::new(seed);
        let mut mk = |arch| {
            let data = (0..64).map(|_| rng.next_f64() as f32).collect();
            TokenMatrix::new(8, 8, data, TokenOrigin::NativeTokens, arch).unwrap()
        };
        TrainingSet {
            cnn: (0..n).map(|_| mk(ArchTag::CnnLike)).collect(),
            vit: (0..n).map(|_| mk(ArchTag::VitLike)).collect(),
        }
    }

    fn quick(lambda: f64) -> TrainingConfig {
        let mut c = TrainingConfig::new(lambda, (1, 2));
        c.batch_size = 2;
        c.steps_per_epoch = 3;
        c.val_counts = (2, 2);
        c.plateau_patience = 0;
        c.plateau_factor = 0.1;
        c.lr_init = 1e-3;
        c.lr_min = 1e-6;
        c.max_epochs = Some(6);
        c
    }

    #[test]
    fn training_is_deterministic_and_logs_nonincreasing_lr() {
        let model = CodecModel::init(CodecArch::default(), 2).unwrap();
        let data = set(6, 1);
        let (a, la) = train(&model, &data, &quick(0.01)).unwrap();
        let (b, lb) = train(&model, &data, &quick(0.01)).unwrap();
        assert_eq!(a.model_hash(), b.model_hash());
        assert_eq!(la, lb);
        assert!(la.epochs.windows(2).all(|w| w[1].lr <= w[0].lr));
        let best = la.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(la.epochs[la.best_epoch as usize - 1].val_loss, best);
    }

    #[test]
    fn missing_arch_rejected() {
        let model = CodecModel::init(CodecArch::default(), 2).unwrap();
        let mut data = set(6, 1);
        data.vit.clear();
        assert_eq!(train(&model, &data, &quick(0.01)).unwrap_err(), Error::MissingArch("vit"));
    }
}
