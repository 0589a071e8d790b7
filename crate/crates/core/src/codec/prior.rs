//! Entropy models: zero-mean Gaussian conditional for the main latent and a
//! per-channel piecewise-linear CDF for the hyper latent.
//!
//! Both return the probability mass of the unit bin around a (possibly
//! noisy) value, floored at `2^-32`, and the derivatives needed for
//! training. All math is `f64`.

use alloc::vec::Vec;

use crate::entropy::{CdfTable, CoderError};

/// Lower bound on any bin probability.
pub const LIKELIHOOD_FLOOR: f64 = 1.0 / 4_294_967_296.0;

/// Largest half-width of a Gaussian coding table.
const MAX_GAUSSIAN_RADIUS: i64 = 8192;

pub fn std_normal_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t * core::f64::consts::FRAC_1_SQRT_2)
}

pub fn std_normal_pdf(t: f64) -> f64 {
    libm::exp(-0.5 * t * t) * (0.5 * core::f64::consts::FRAC_2_SQRT_PI * core::f64::consts::FRAC_1_SQRT_2)
}

/// `Phi((y + 1/2) / sigma) - Phi((y - 1/2) / sigma)`, floored at `2^-32`.
pub fn likelihood_gaussian(y_hat: f64, sigma: f64) -> f64 {
    gaussian_bin(y_hat, sigma).p
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Bin {
    pub p: f64,
    /// dp / dy (zero when floored)
    pub dp_dy: f64,
    /// dp / dsigma (zero when floored)
    pub dp_dsigma: f64,
}

pub(crate) fn gaussian_bin(y: f64, sigma: f64) -> Bin {
    // Evaluated on the left tail for accuracy: both CDF terms stay small.
    let u = libm::fabs(y);
    let a = (0.5 - u) / sigma;
    let b = (-0.5 - u) / sigma;
    let p = std_normal_cdf(a) - std_normal_cdf(b);
    if !(p > LIKELIHOOD_FLOOR) {
        return Bin {
            p: LIKELIHOOD_FLOOR,
            dp_dy: 0.0,
            dp_dsigma: 0.0,
        };
    }
    let (pa, pb) = (std_normal_pdf(a), std_normal_pdf(b));
    let dp_du = (pb - pa) / sigma;
    let sign = if y < 0.0 { -1.0 } else { 1.0 };
    Bin {
        p,
        dp_dy: sign * dp_du,
        dp_dsigma: -(a * pa - b * pb) / sigma,
    }
}

/// Half-width of the coded support for scale `sigma`; symbols at
/// `+-(radius + 1)` are escapes.
pub(crate) fn gaussian_radius(sigma: f64) -> i64 {
    (libm::ceil(7.0 * sigma) as i64 + 1).min(MAX_GAUSSIAN_RADIUS)
}

/// Coding table for a Gaussian latent: `[-r-1, r+1]` with escape ends
/// carrying the tail masses.
pub(crate) fn gaussian_table(sigma: f64) -> Result<CdfTable, CoderError> {
    let r = gaussian_radius(sigma);
    let mut probs = Vec::with_capacity(2 * r as usize + 3);
    let tail = std_normal_cdf((-(r as f64) - 0.5) / sigma).max(LIKELIHOOD_FLOOR);
    probs.push(tail);
    for s in -r..=r {
        probs.push(likelihood_gaussian(s as f64, sigma));
    }
    probs.push(tail);
    CdfTable::build((-r - 1) as i32, &probs)
}

/// Learned CDFs of the hyper-latent channels.
///
/// Channel `c` has `2R + 1` unit intervals with knots at half integers from
/// `-R - 1/2` to `R + 1/2`; interval masses are a softmax of free logits, so
/// the CDF is nondecreasing, 0 at the first knot and 1 at the last.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedPrior {
    radius: usize,
    /// Softmax weights per channel.
    weights: Vec<Vec<f64>>,
    /// Prefix sums of `weights`; `prefix[c][j]` is the CDF at knot `j`.
    prefix: Vec<Vec<f64>>,
}

impl FactorizedPrior {
    pub fn from_logits<F: num_traits::Float>(logits: &[F], channels: usize, radius: usize) -> Self {
        let bins = 2 * radius + 1;
        debug_assert_eq!(logits.len(), channels * bins);
        let mut weights = Vec::with_capacity(channels);
        let mut prefix = Vec::with_capacity(channels);
        for c in 0..channels {
            let l: Vec<f64> = logits[c * bins..(c + 1) * bins].iter().map(|v| v.to_f64().unwrap()).collect();
            let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = l.iter().map(|&v| libm::exp(v - m)).collect();
            let s: f64 = e.iter().sum();
            let w: Vec<f64> = e.iter().map(|v| v / s).collect();
            let mut p = Vec::with_capacity(bins + 1);
            let mut acc = 0.0;
            p.push(0.0);
            for &wi in &w {
                acc += wi;
                p.push(acc);
            }
            // Pin the last knot to exactly one.
            *p.last_mut().unwrap() = 1.0;
            weights.push(w);
            prefix.push(p);
        }
        Self { radius, weights, prefix }
    }

    pub fn channels(&self) -> usize {
        self.weights.len()
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    fn bins(&self) -> usize {
        2 * self.radius + 1
    }

    /// Interval index and fractional position of `x`, or `None` outside the knots.
    fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let t = x + self.radius as f64 + 0.5;
        if !(t > 0.0 && t < self.bins() as f64) {
            return None;
        }
        let j = libm::floor(t);
        Some((j as usize, t - j))
    }

    pub fn cdf(&self, channel: usize, x: f64) -> f64 {
        let t = x + self.radius as f64 + 0.5;
        if t <= 0.0 {
            return 0.0;
        }
        match self.locate(x) {
            Some((j, f)) => self.prefix[channel][j] + f * self.weights[channel][j],
            None => 1.0,
        }
    }

    fn density(&self, channel: usize, x: f64) -> f64 {
        self.locate(x).map(|(j, _)| self.weights[channel][j]).unwrap_or(0.0)
    }

    /// `c(z + 1/2) - c(z - 1/2)`, floored at `2^-32`.
    pub fn likelihood(&self, channel: usize, z: f64) -> f64 {
        (self.cdf(channel, z + 0.5) - self.cdf(channel, z - 0.5)).max(LIKELIHOOD_FLOOR)
    }

    /// Probability and `dp/dz`, zero derivative when floored.
    pub(crate) fn bin(&self, channel: usize, z: f64) -> (f64, f64) {
        let p = self.cdf(channel, z + 0.5) - self.cdf(channel, z - 0.5);
        if !(p > LIKELIHOOD_FLOOR) {
            return (LIKELIHOOD_FLOOR, 0.0);
        }
        (p, self.density(channel, z + 0.5) - self.density(channel, z - 0.5))
    }

    /// Adds `g * dp/dlogit` for the bin around `z` into `out` (one channel's
    /// logits).
    pub(crate) fn accumulate_logit_grad(&self, channel: usize, z: f64, g: f64, out: &mut [f64]) {
        let bins = self.bins();
        let w = &self.weights[channel];
        // dp/dw_i = dc(z+1/2)/dw_i - dc(z-1/2)/dw_i
        let mut dw = alloc::vec![0.0f64; bins];
        for (x, sign) in [(z + 0.5, 1.0), (z - 0.5, -1.0)] {
            let t = x + self.radius as f64 + 0.5;
            if t <= 0.0 {
                continue;
            }
            match self.locate(x) {
                Some((j, f)) => {
                    dw[..j].iter_mut().for_each(|d| *d += sign);
                    dw[j] += sign * f;
                }
                None => dw.iter_mut().for_each(|d| *d += sign),
            }
        }
        let mean: f64 = dw.iter().zip(w).map(|(d, wi)| d * wi).sum();
        for i in 0..bins {
            out[i] += g * w[i] * (dw[i] - mean);
        }
    }

    /// Coding table for a channel: `[-R-1, R+1]` with escape ends.
    pub fn table(&self, channel: usize) -> Result<CdfTable, CoderError> {
        let r = self.radius as i64;
        let mut probs = Vec::with_capacity(self.bins() + 2);
        probs.push((self.cdf(channel, -(r as f64) - 0.5)).max(LIKELIHOOD_FLOOR));
        for s in -r..=r {
            probs.push(self.likelihood(channel, s as f64));
        }
        probs.push((1.0 - self.cdf(channel, r as f64 + 0.5)).max(LIKELIHOOD_FLOOR));
        CdfTable::build((-r - 1) as i32, &probs)
    }
}
