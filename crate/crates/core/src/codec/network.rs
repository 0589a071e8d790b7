//! Forward pass, rate estimate and analytic backward pass of the codec.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::arch::{CodecArch, LayerParams, ParamLayout};
use super::layers::{reflect_pad, Scalar, stack_backward, stack_forward, Maps, StackParams, StackTape};
use super::model::CodecModel;
use super::prior::{gaussian_bin, FactorizedPrior, LIKELIHOOD_FLOOR};
use crate::alignment::TokenMatrix;
use crate::rng::{tag, SplitMix64};
use crate::{Error, Result};

/// Source of the additive quantization noise used in training mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Noise {
    /// Uniform noise in `[-0.5, 0.5)` from the stream `(seed, index)`.
    Seeded { seed: u64, index: u64 },
    /// No noise: latents pass through unquantized.
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    TrainNoise(Noise),
    EvalRound,
}

/// Quantized latents of one feature.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPair {
    pub y: Maps<f32>,
    pub z: Maps<f32>,
    /// Token rows and columns before padding.
    pub pad_info: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub x_hat: TokenMatrix,
    pub latents: LatentPair,
    /// `y_bits + z_bits`
    pub bits_estimate: f64,
    pub y_bits: f64,
    pub z_bits: f64,
}

/// Loss, its parts and the gradient with respect to every parameter.
#[derive(Clone, Debug)]
pub struct Evaluation<F> {
    pub loss: f64,
    pub bits: f64,
    pub mse: f64,
    pub gradient: Vec<F>,
    /// Identifies the piecewise-smooth region of the loss (activation signs,
    /// `|y|` signs, prior intervals, floored likelihoods). Finite differences
    /// are only meaningful between points with equal regime.
    pub regime: u64,
}

fn softplus<F: Float>(v: F) -> F {
    v.max(F::zero()) + (-v.abs()).exp().ln_1p()
}

fn sigmoid<F: Float>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

fn to_f64<F: Float>(v: F) -> f64 {
    v.to_f64().unwrap()
}

fn cast<F: Float>(v: f64) -> F {
    F::from(v).unwrap()
}

struct Tapes<F> {
    analysis: StackTape<F>,
    synthesis: StackTape<F>,
    hyper_analysis: StackTape<F>,
    hyper_synthesis: StackTape<F>,
}

/// Everything computed by one forward pass.
pub(crate) struct Pass<F> {
    pub rows: usize,
    pub cols: usize,
    pub y: Maps<F>,
    pub y_hat: Maps<F>,
    pub z_hat: Maps<F>,
    /// Hyper-synthesis output cropped to the `y` grid.
    pub hs: Maps<F>,
    pub hs_full: (usize, usize),
    pub sigma: Vec<F>,
    pub x_hat: Maps<F>,
    pub xh_full: (usize, usize),
    pub y_bits: f64,
    pub z_bits: f64,
    tapes: Option<Tapes<F>>,
}

/// A view of a parameter vector through an architecture.
pub(crate) struct Net<'a, F> {
    arch: &'a CodecArch,
    layout: ParamLayout,
    params: &'a [F],
    scale_floor: F,
    prior: FactorizedPrior,
}

impl<'a, F: Scalar> Net<'a, F> {
    pub fn new(arch: &'a CodecArch, params: &'a [F], scale_floor: f64) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        if params.len() != layout.total {
            return Err(Error::InvalidParameter(format!("expected {} parameters, got {}", layout.total, params.len())));
        }
        let prior = FactorizedPrior::from_logits(&params[layout.prior.clone()], arch.hyper_channels(), arch.prior_radius as usize);
        Ok(Self {
            arch,
            layout,
            params,
            scale_floor: cast(scale_floor),
            prior,
        })
    }

    pub fn prior(&self) -> &FactorizedPrior {
        &self.prior
    }

    fn stack(&self, which: usize) -> (StackParams<'_, F>, &[LayerParams]) {
        let layers = self.arch.stacks()[which];
        let offsets: &[LayerParams] = match which {
            0 => &self.layout.analysis,
            1 => &self.layout.synthesis,
            2 => &self.layout.hyper_analysis,
            _ => &self.layout.hyper_synthesis,
        };
        let p = StackParams {
            layers,
            weights: offsets.iter().map(|o| &self.params[o.weight.clone()]).collect(),
            biases: offsets.iter().map(|o| &self.params[o.bias.clone()]).collect(),
        };
        (p, offsets)
    }

    pub fn min_size(&self) -> usize {
        self.arch.total_stride()
    }

    /// Hyper synthesis of quantized `z`, cropped to the `y` grid, and the
    /// resulting scales `floor + softplus(.)`.
    fn scales(&self, z_hat: Maps<F>, yh: usize, yw: usize, keep: bool) -> (Maps<F>, (usize, usize), Vec<F>, Option<StackTape<F>>) {
        let (full, tape) = stack_forward(&self.stack(3).0, z_hat, keep);
        let hs = full.crop(yh, yw);
        let sigma = hs.data.iter().map(|&v| self.scale_floor + softplus(v)).collect();
        (hs, (full.h, full.w), sigma, tape)
    }

    /// Scales for decoding; identical arithmetic to the encoder's.
    pub fn scales_for(&self, z_hat: Maps<F>, yh: usize, yw: usize) -> Vec<F> {
        self.scales(z_hat, yh, yw, false).2
    }

    /// Synthesis of quantized `y`, cropped to `rows x cols`.
    pub fn synthesize(&self, y_hat: Maps<F>, rows: usize, cols: usize) -> Maps<F> {
        stack_forward(&self.stack(1).0, y_hat, false).0.crop(rows, cols)
    }

    /// Latent grid sizes for a `rows x cols` input.
    pub fn grids(&self, rows: usize, cols: usize) -> ((usize, usize, usize), (usize, usize, usize)) {
        let s = self.arch.total_stride();
        let (yh, yw) = (rows.div_ceil(s), cols.div_ceil(s));
        let hs = self.arch.hyper_stride();
        ((self.arch.latent_channels(), yh, yw), (self.arch.hyper_channels(), yh.div_ceil(hs), yw.div_ceil(hs)))
    }

    pub fn forward(&self, x: &[f32], rows: usize, cols: usize, mode: ForwardMode, keep: bool) -> Result<Pass<F>> {
        let min = self.min_size();
        if rows < min || cols < min {
            return Err(Error::InputTooSmall { rows, cols, min });
        }
        debug_assert_eq!(x.len(), rows * cols);
        let padded: Maps<F> = reflect_pad(x, rows, cols, self.arch.total_stride());
        let (y, ta) = stack_forward(&self.stack(0).0, padded, keep);
        check_finite(&y.data, "analysis output")?;
        let abs_y = Maps {
            data: y.data.iter().map(|v| v.abs()).collect(),
            ..y.clone()
        };
        let (z, tha) = stack_forward(&self.stack(2).0, abs_y, keep);
        check_finite(&z.data, "hyper-analysis output")?;

        let (y_hat, z_hat) = match mode {
            ForwardMode::EvalRound => (map(&y, |v| v.round()), map(&z, |v| v.round())),
            ForwardMode::TrainNoise(Noise::Zero) => (y.clone(), z),
            ForwardMode::TrainNoise(Noise::Seeded { seed, index }) => {
                let mut rng = SplitMix64::stream(seed, tag::NOISE, index);
                let mut add = |m: &Maps<F>| map(m, |v| v + cast(rng.next_f64() - 0.5));
                let y_hat = add(&y);
                let z_hat = add(&z);
                (y_hat, z_hat)
            }
        };

        let (hs, hs_full, sigma, ths) = self.scales(z_hat.clone(), y.h, y.w, keep);
        check_finite(&sigma, "predicted scales")?;
        let (xh, tsyn) = stack_forward(&self.stack(1).0, y_hat.clone(), keep);
        let xh_full = (xh.h, xh.w);
        let x_hat = xh.crop(rows, cols);
        check_finite(&x_hat.data, "reconstruction")?;

        let y_bits: f64 = y_hat
            .data
            .iter()
            .zip(&sigma)
            .map(|(&v, &s)| -libm::log2(gaussian_bin(to_f64(v), to_f64(s)).p))
            .sum();
        let plane = z_hat.h * z_hat.w;
        let z_bits: f64 = z_hat
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| -libm::log2(self.prior.likelihood(i / plane, to_f64(v))))
            .sum();

        let tapes = match (ta, tsyn, tha, ths) {
            (Some(analysis), Some(synthesis), Some(hyper_analysis), Some(hyper_synthesis)) => Some(Tapes {
                analysis,
                synthesis,
                hyper_analysis,
                hyper_synthesis,
            }),
            _ => None,
        };
        Ok(Pass {
            rows,
            cols,
            y,
            y_hat,
            z_hat,
            hs,
            hs_full,
            sigma,
            x_hat,
            xh_full,
            y_bits,
            z_bits,
            tapes,
        })
    }

    /// Gradient of `(y_bits + z_bits) / n + weight * mse`, where `n` is the
    /// element count of `x`.
    pub fn backward(&self, pass: &Pass<F>, x: &[f32], weight: f64) -> Result<Vec<F>> {
        let tapes = pass.tapes.as_ref().ok_or_else(|| Error::InvalidParameter("forward pass kept no tape".into()))?;
        let n = x.len() as f64;
        let mut grads = vec![F::zero(); self.layout.total];

        // distortion
        let k = 2.0 * weight / n;
        let gx = Maps {
            data: pass.x_hat.data.iter().zip(x).map(|(&a, &b)| cast::<F>(k * (to_f64(a) - b as f64))).collect(),
            ..pass.x_hat.clone()
        }
        .uncrop(pass.xh_full.0, pass.xh_full.1);
        let (syn, off) = self.stack(1);
        let mut g_yhat = stack_backward(&syn, &tapes.synthesis, gx, &mut grads, off, true).unwrap();

        // rate of y
        let ln2 = core::f64::consts::LN_2;
        let mut g_hs = pass.hs.clone();
        for i in 0..g_yhat.data.len() {
            let b = gaussian_bin(to_f64(pass.y_hat.data[i]), to_f64(pass.sigma[i]));
            let coef = -1.0 / (b.p * ln2 * n);
            g_yhat.data[i] = g_yhat.data[i] + cast(coef * b.dp_dy);
            g_hs.data[i] = cast::<F>(coef * b.dp_dsigma) * sigmoid(pass.hs.data[i]);
        }
        let (hsyn, off) = self.stack(3);
        let g_hs = g_hs.uncrop(pass.hs_full.0, pass.hs_full.1);
        let mut g_z = stack_backward(&hsyn, &tapes.hyper_synthesis, g_hs, &mut grads, off, true).unwrap();

        // rate of z
        let bins = self.arch.prior_bins();
        let plane = pass.z_hat.h * pass.z_hat.w;
        let mut g_logits = vec![0.0f64; self.layout.prior.len()];
        for (i, &v) in pass.z_hat.data.iter().enumerate() {
            let c = i / plane;
            let z = to_f64(v);
            let (p, dpdz) = self.prior.bin(c, z);
            if p <= LIKELIHOOD_FLOOR {
                continue;
            }
            let coef = -1.0 / (p * ln2 * n);
            g_z.data[i] = g_z.data[i] + cast(coef * dpdz);
            self.prior.accumulate_logit_grad(c, z, coef, &mut g_logits[c * bins..(c + 1) * bins]);
        }
        for (g, v) in grads[self.layout.prior.clone()].iter_mut().zip(&g_logits) {
            *g = cast(*v);
        }

        let (ha, off) = self.stack(2);
        let g_abs = stack_backward(&ha, &tapes.hyper_analysis, g_z, &mut grads, off, true).unwrap();
        for ((g, &ga), &yv) in g_yhat.data.iter_mut().zip(&g_abs.data).zip(&pass.y.data) {
            let s = if yv > F::zero() {
                F::one()
            } else if yv < F::zero() {
                -F::one()
            } else {
                F::zero()
            };
            *g = *g + ga * s;
        }
        let (an, off) = self.stack(0);
        stack_backward(&an, &tapes.analysis, g_yhat, &mut grads, off, false);
        check_finite(&grads, "gradient")?;
        Ok(grads)
    }

    /// See [`Evaluation::regime`].
    pub fn regime(&self, pass: &Pass<F>) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        if let Some(t) = &pass.tapes {
            let stacks = [&t.analysis, &t.synthesis, &t.hyper_analysis, &t.hyper_synthesis];
            for (layers, tape) in self.arch.stacks().iter().zip(stacks) {
                for (l, pre) in layers.iter().zip(&tape.pre) {
                    if l.activation {
                        pre.data.iter().for_each(|&v| feed((v > F::zero()) as u64));
                    }
                }
            }
        }
        pass.y.data.iter().for_each(|&v| feed(((v > F::zero()) as u64) | (((v < F::zero()) as u64) << 1)));
        for (&v, &s) in pass.y_hat.data.iter().zip(&pass.sigma) {
            feed((gaussian_bin(to_f64(v), to_f64(s)).p <= LIKELIHOOD_FLOOR) as u64);
        }
        let plane = pass.z_hat.h * pass.z_hat.w;
        for (i, &v) in pass.z_hat.data.iter().enumerate() {
            let z = to_f64(v);
            feed(libm::floor(z) as i64 as u64);
            feed((self.prior.likelihood(i / plane, z) <= LIKELIHOOD_FLOOR) as u64);
        }
        h
    }
}

fn map<F: Float>(m: &Maps<F>, f: impl FnMut(F) -> F) -> Maps<F> {
    Maps {
        data: m.data.iter().cloned().map(f).collect(),
        ..m.clone()
    }
}

fn check_finite<F: Float>(data: &[F], what: &str) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Divergence(format!("non-finite {} at element {}", what, i))),
        None => Ok(()),
    }
}

pub(crate) fn mse<F: Float>(x_hat: &[F], x: &[f32]) -> f64 {
    let s: f64 = x_hat.iter().zip(x).map(|(&a, &b)| {
            let d = to_f64(a) - b as f64;
            d * d
        })
        .sum();
    s / x.len() as f64
}

/// Runs the codec on an aligned token matrix.
pub fn forward(model: &CodecModel, x: &TokenMatrix, mode: ForwardMode) -> Result<ForwardOutput> {
    let net = Net::<f32>::new(model.arch(), model.params(), model.scale_floor() as f64)?;
    let pass = net.forward(x.data(), x.rows(), x.cols(), mode, false)?;
    let x_hat = x.with_data(pass.x_hat.data);
    Ok(ForwardOutput {
        x_hat,
        latents: LatentPair {
            y: pass.y_hat,
            z: pass.z_hat,
            pad_info: (pass.rows, pass.cols),
        },
        bits_estimate: pass.y_bits + pass.z_bits,
        y_bits: pass.y_bits,
        z_bits: pass.z_bits,
    })
}

/// Training loss `bits / n + distortion_weight * mse` and its analytic
/// gradient, computed in `F` (use `f64` for finite-difference checks).
pub fn loss_and_gradient<F: Scalar>(
    arch: &CodecArch,
    params: &[F],
    scale_floor: f64,
    x: &TokenMatrix,
    distortion_weight: f64,
    noise: Noise,
) -> Result<Evaluation<F>> {
    let net = Net::new(arch, params, scale_floor)?;
    let pass = net.forward(x.data(), x.rows(), x.cols(), ForwardMode::TrainNoise(noise), true)?;
    let gradient = net.backward(&pass, x.data(), distortion_weight)?;
    let n = x.data().len() as f64;
    let bits = pass.y_bits + pass.z_bits;
    let mse = mse(&pass.x_hat.data, x.data());
    let loss = bits / n + distortion_weight * mse;
    if !loss.is_finite() {
        return Err(Error::Divergence("non-finite loss".into()));
    }
    Ok(Evaluation {
        loss,
        bits,
        mse,
        gradient,
        regime: net.regime(&pass),
    })
}

/// Loss and regime without the backward pass.
pub fn loss_at<F: Scalar>(
    arch: &CodecArch,
    params: &[F],
    scale_floor: f64,
    x: &TokenMatrix,
    distortion_weight: f64,
    noise: Noise,
) -> Result<(f64, u64)> {
    let net = Net::new(arch, params, scale_floor)?;
    let pass = net.forward(x.data(), x.rows(), x.cols(), ForwardMode::TrainNoise(noise), true)?;
    let n = x.data().len() as f64;
    let loss = (pass.y_bits + pass.z_bits) / n + distortion_weight * mse(&pass.x_hat.data, x.data());
    Ok((loss, net.regime(&pass)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::TokenOrigin;
    use crate::tensor::ArchTag;

    fn tokens(rows: usize, cols: usize, seed: u64) -> TokenMatrix {
        let mut rng = SplitMix64::new(seed);
        let data = (0..rows * cols).map(|_| rng.next_f64() as f32).collect();
        TokenMatrix::new(rows, cols, data, TokenOrigin::NativeTokens, ArchTag::VitLike).unwrap()
    }

    #[test]
    fn padding_and_crop_shapes() {
        let model = CodecModel::init(CodecArch::default(), 1).unwrap();
        let x = tokens(49, 20, 2);
        let out = forward(&model, &x, ForwardMode::EvalRound).unwrap();
        assert_eq!(out.x_hat.shape(), (49, 20));
        assert_eq!(out.latents.y.shape(), (8, 13, 5));
        assert_eq!(out.latents.z.shape(), (4, 7, 3));
        assert_eq!(out.latents.pad_info, (49, 20));
        assert!(out.bits_estimate >= 0.0);
    }

    #[test]
    fn zero_noise_matches_rounding_on_integer_latents() {
        // Zero weights and integer biases make every latent an integer.
        let arch = CodecArch::default();
        let layout = arch.layout();
        let mut params = vec![0.0f32; layout.total];
        for (i, b) in layout.analysis[2].bias.clone().enumerate() {
            params[b] = i as f32 - 3.0;
        }
        for b in layout.hyper_analysis[1].bias.clone() {
            params[b] = 2.0;
        }
        let model = CodecModel::from_parts(arch, params, 0.04).unwrap();
        let x = tokens(8, 8, 3);
        let a = forward(&model, &x, ForwardMode::TrainNoise(Noise::Zero)).unwrap();
        let b = forward(&model, &x, ForwardMode::EvalRound).unwrap();
        assert_eq!(a.latents, b.latents);
        assert_eq!(a.x_hat, b.x_hat);
        assert_eq!(a.bits_estimate, b.bits_estimate);
    }

    #[test]
    fn rounding_is_nearest_integer() {
        let model = CodecModel::init(CodecArch::default(), 5).unwrap();
        let x = tokens(8, 12, 4);
        let net = Net::<f32>::new(model.arch(), model.params(), 0.04).unwrap();
        let p = net.forward(x.data(), 8, 12, ForwardMode::EvalRound, false).unwrap();
        for (&v, &q) in p.y.data.iter().zip(&p.y_hat.data) {
            assert!((v - q).abs() <= 0.5);
            assert_eq!(q, q.round());
        }
    }

    #[test]
    fn too_small_input_rejected() {
        let model = CodecModel::init(CodecArch::default(), 5).unwrap();
        let x = tokens(3, 40, 4);
        assert!(matches!(
            forward(&model, &x, ForwardMode::EvalRound),
            Err(Error::InputTooSmall { rows: 3, cols: 40, min: 4 })
        ));
    }

    #[test]
    fn scales_respect_floor() {
        let model = CodecModel::init(CodecArch::default(), 6).unwrap();
        let x = tokens(16, 16, 1);
        let net = Net::<f32>::new(model.arch(), model.params(), 0.04).unwrap();
        let p = net.forward(x.data(), 16, 16, ForwardMode::EvalRound, false).unwrap();
        assert!(p.sigma.iter().all(|&s| s >= 0.04));
    }

    #[test]
    fn zero_input_zero_weights_no_analysis_gradient_from_distortion() {
        let arch = CodecArch::default();
        let params = vec![0.0f64; arch.param_count()];
        let x = TokenMatrix::new(8, 8, vec![0.0; 64], TokenOrigin::NativeTokens, ArchTag::VitLike).unwrap();
        let e0 = loss_and_gradient(&arch, &params, 0.04, &x, 0.0, Noise::Zero).unwrap();
        let e1 = loss_and_gradient(&arch, &params, 0.04, &x, 5.0, Noise::Zero).unwrap();
        let l = arch.layout();
        for i in l.analysis[0].weight.start..l.analysis[2].bias.end {
            assert_eq!(e1.gradient[i] - e0.gradient[i], 0.0);
        }
    }

    #[test]
    fn distortion_gradient_is_linear_in_weight() {
        let model = CodecModel::init(CodecArch::default(), 8).unwrap();
        let params: Vec<f64> = model.params().iter().map(|&v| v as f64).collect();
        let x = tokens(8, 8, 9);
        let noise = Noise::Seeded { seed: 1, index: 0 };
        let g0 = loss_and_gradient(model.arch(), &params, 0.04, &x, 0.0, noise).unwrap().gradient;
        let g1 = loss_and_gradient(model.arch(), &params, 0.04, &x, 1.0, noise).unwrap().gradient;
        let g3 = loss_and_gradient(model.arch(), &params, 0.04, &x, 3.0, noise).unwrap().gradient;
        for i in 0..g0.len() {
            let d1 = g1[i] - g0[i];
            let d3 = g3[i] - g0[i];
            assert!((d3 - 3.0 * d1).abs() <= 1e-9 * (1.0 + d3.abs()), "param {}", i);
        }
    }
}
