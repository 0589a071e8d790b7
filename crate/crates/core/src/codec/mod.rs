//! Scale-hyperprior codec with hand-written gradients.
//!
//! An analysis transform maps the aligned token grid to a latent `y`; a
//! hyper analysis of `|y|` gives `z`. `z` is coded with a learned
//! per-channel factorized prior and, through the hyper synthesis, predicts
//! the Gaussian scale of every `y` element. Training replaces rounding with
//! additive uniform noise and minimizes `bits / n + lambda * mse`.

mod arch;
mod bitstream;
mod layers;
mod loss;
mod model;
mod network;
mod prior;
mod train;

pub use arch::{CodecArch, LayerKind, LayerSpec, DEFAULT_HIDDEN_CHANNELS, LEAKY_SLOPE};
pub use bitstream::{arch_for_layout, decode, encode, encode_with_report, Bitstream, EncodeReport, MAGIC as BITSTREAM_MAGIC};
pub use layers::{Maps, Scalar};
pub use loss::{rd_loss, rd_loss_from_parts};
pub use model::{params_hash, CodecModel, DEFAULT_SCALE_FLOOR};
pub use network::{forward, loss_and_gradient, loss_at, Evaluation, ForwardMode, ForwardOutput, LatentPair, Noise};
pub use prior::{likelihood_gaussian, std_normal_cdf, FactorizedPrior, LIKELIHOOD_FLOOR};
pub use train::{
    ratio_for_lambda, score_set, train, train_with, EpochLog, RatioSampler, SetScore, TrainingConfig, TrainingLog, TrainingSet,
    DEFAULT_DISTORTION_SCALE, LAMBDA_GRID,
};

/// `c(z + 1/2) - c(z - 1/2)` for channel `channel` of the model's prior.
pub fn likelihood_factorized(z_hat: f64, channel: usize, model: &CodecModel) -> f64 {
    model.prior().likelihood(channel, z_hat)
}
