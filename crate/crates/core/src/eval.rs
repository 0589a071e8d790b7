//! Rate, distortion, distribution and proxy-accuracy metrics, plus RD-curve
//! rendering to CSV and SVG text.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::alignment::{tokenize, TokenMatrix};
use crate::codec::{forward, Bitstream, CodecModel, ForwardMode};
use crate::tensor::{ArchTag, FeatureTensor, LabeledFeature};
use crate::{Error, Result};

/// One point of a rate-distortion-accuracy curve.
#[derive(Clone, Debug, PartialEq)]
pub struct RDRecord {
    pub lambda: f64,
    pub arch: ArchTag,
    pub bpfp: f64,
    pub mse: f64,
    pub accuracy: f64,
    pub n: usize,
}

/// Payload bits per element of the original feature.
pub fn bpfp(bitstream: &Bitstream, original: &FeatureTensor) -> f64 {
    bitstream.payload_bits() as f64 / original.len() as f64
}

/// Two-sample Kolmogorov-Smirnov statistic: `sup |F_a(x) - F_b(x)|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let sorted = |s: &[f64]| {
        let mut v = s.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        // Step past every copy of the smallest pending value in both samples.
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Mean token of a feature in its token layout.
pub fn pooled(t: &FeatureTensor) -> Vec<f64> {
    tokenize(t).mean_token()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest_centroid(v: &[f64], centroids: &[Vec<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, c) in centroids.iter().enumerate() {
        let d: f64 = v.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((k, d));
        }
    }
    best.map(|(k, _)| k)
}

/// Fraction of features whose mean-pooled token is nearest to its own
/// class centroid.
pub fn nearest_centroid_accuracy(features: &[LabeledFeature], centroids: &[Vec<f64>]) -> Result<f64> {
    let pooled: Vec<(Vec<f64>, u32)> = features.iter().map(|f| (pooled(&f.tensor), f.label)).collect();
    pooled_accuracy(&pooled, centroids)
}

/// [`nearest_centroid_accuracy`] on already pooled vectors.
pub fn pooled_accuracy(features: &[(Vec<f64>, u32)], centroids: &[Vec<f64>]) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut hits = 0usize;
    for (v, label) in features {
        if *label as usize >= centroids.len() {
            return Err(Error::MissingCentroid(*label));
        }
        if let Some(c) = centroids.iter().find(|c| c.len() != v.len()) {
            return Err(Error::ShapeMismatch(alloc::format!("centroid length {} vs feature {}", c.len(), v.len())));
        }
        if nearest_centroid(v, centroids) == Some(*label as usize) {
            hits += 1;
        }
    }
    Ok(hits as f64 / features.len() as f64)
}

/// Mean `|y_hat|` of the rounded main latents over a set of aligned features.
pub fn latent_concentration(model: &CodecModel, samples: &[TokenMatrix]) -> Result<f64> {
    let (mut sum, mut n) = (0.0f64, 0usize);
    for x in samples {
        let out = forward(model, x, ForwardMode::EvalRound)?;
        sum += out.latents.y.data.iter().map(|v| v.abs() as f64).sum::<f64>();
        n += out.latents.y.data.len();
    }
    if n == 0 {
        return Err(Error::EmptySample);
    }
    Ok(sum / n as f64)
}

pub const CSV_HEADER: &str = "lambda,arch,bpfp,mse,accuracy,n";

/// CSV text with header [`CSV_HEADER`], one line per record in input order.
pub fn rd_csv(records: &[RDRecord]) -> String {
    let mut s = String::new();
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.lambda, r.arch.name(), r.bpfp, r.mse, r.accuracy, r.n);
    }
    s
}

const W: f64 = 800.0;
const H: f64 = 600.0;
const MARGIN: f64 = 70.0;
const COLORS: [&str; 3] = ["#d62728", "#1f77b4", "#2ca02c"];

/// Accuracy-versus-BPFP plot: one polyline per architecture, points sorted
/// by BPFP.
pub fn rd_svg(records: &[RDRecord]) -> String {
    let mut groups: BTreeMap<u8, Vec<&RDRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.arch.code()).or_default().push(r);
    }
    let xmax = records.iter().map(|r| r.bpfp).fold(0.0, f64::max);
    let xmax = if xmax > 0.0 { xmax * 1.05 } else { 1.0 };
    let px = |b: f64| MARGIN + b / xmax * (W - 2.0 * MARGIN);
    let py = |a: f64| H - MARGIN - a.clamp(0.0, 1.0) * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" viewBox="0 0 800 600" width="800" height="600">"#);
    let _ = writeln!(s, r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="black"/>"#, MARGIN, H - MARGIN, W - MARGIN);
    let _ = writeln!(s, r#"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/>"#, MARGIN, H - MARGIN, MARGIN);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{:.4}</text>"#, px(f * xmax), H - MARGIN + 18.0, f * xmax);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end">{:.2}</text>"#, MARGIN - 6.0, py(f) + 4.0, f);
    }
    let _ = writeln!(s, r#"<text x="400" y="{}" font-size="14" text-anchor="middle">BPFP</text>"#, H - 20.0);
    let _ = writeln!(s, r#"<text x="20" y="300" font-size="14" text-anchor="middle" transform="rotate(-90 20 300)">accuracy</text>"#);
    for (gi, (code, mut rs)) in groups.into_iter().enumerate() {
        rs.sort_by(|a, b| a.bpfp.total_cmp(&b.bpfp).then(a.lambda.total_cmp(&b.lambda)));
        let color = COLORS[gi % COLORS.len()];
        let points: Vec<String> = rs.iter().map(|r| alloc::format!("{:.2},{:.2}", px(r.bpfp), py(r.accuracy))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#, color, points.join(" "));
        let name = ArchTag::from_code(code).map(|a| a.name()).unwrap_or("unknown");
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="13" fill="{}">{}</text>"#, W - MARGIN - 80.0, MARGIN + 18.0 * gi as f64, color, name);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::tensor::Layout;
    use alloc::vec;

    #[test]
    fn ks_basics() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(ks_distance(&a, &[4.0, 5.0]).unwrap(), 1.0);
        assert_eq!(ks_distance(&[], &a), Err(Error::EmptySample));
        // ties across samples: F_a jumps to 1 at 1, F_b to 1/2
        assert_eq!(ks_distance(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), 0.5);
    }

    /// Brute force: evaluate both empirical CDFs at every pooled point.
    fn ks_brute(a: &[f64], b: &[f64]) -> f64 {
        let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        a.iter().chain(b).map(|&x| (cdf(a, x) - cdf(b, x)).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn ks_matches_brute_force() {
        let mut rng = SplitMix64::new(11);
        for _ in 0..20 {
            let na = 1 + rng.below(40) as usize;
            let nb = 1 + rng.below(40) as usize;
            let a: Vec<f64> = (0..na).map(|_| rng.below(10) as f64).collect();
            let b: Vec<f64> = (0..nb).map(|_| rng.below(12) as f64 * 0.9).collect();
            assert!((ks_distance(&a, &b).unwrap() - ks_brute(&a, &b)).abs() < 1e-12);
            assert_eq!(ks_distance(&a, &b).unwrap(), ks_distance(&b, &a).unwrap());
        }
    }

    fn labeled(v: Vec<f32>, label: u32) -> LabeledFeature {
        let n = v.len();
        LabeledFeature {
            tensor: FeatureTensor::new(Layout::Tokens2D, vec![1, n], v, ArchTag::VitLike).unwrap(),
            label,
        }
    }

    #[test]
    fn centroid_accuracy() {
        let cents = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let feats = vec![labeled(vec![0.0, 0.0], 0), labeled(vec![1.0, 1.0], 1)];
        assert_eq!(nearest_centroid_accuracy(&feats, &cents).unwrap(), 1.0);
        let swapped = vec![labeled(vec![0.0, 0.0], 1), labeled(vec![1.0, 1.0], 0)];
        assert_eq!(nearest_centroid_accuracy(&swapped, &cents).unwrap(), 0.0);
        // equidistant: lowest class wins
        assert_eq!(nearest_centroid(&[0.5, 0.5], &cents), Some(0));
        assert_eq!(nearest_centroid_accuracy(&[labeled(vec![0.0, 0.0], 2)], &cents), Err(Error::MissingCentroid(2)));
    }

    fn rec(lambda: f64, arch: ArchTag, bpfp: f64) -> RDRecord {
        RDRecord {
            lambda,
            arch,
            bpfp,
            mse: 0.1,
            accuracy: 0.5,
            n: 10,
        }
    }

    #[test]
    fn csv_and_svg_shape() {
        let mut rs = Vec::new();
        for &l in &[0.001, 0.003, 0.005, 0.01] {
            rs.push(rec(l, ArchTag::CnnLike, l * 10.0));
            rs.push(rec(l, ArchTag::VitLike, l * 20.0));
        }
        let csv = rd_csv(&rs);
        assert_eq!(csv.lines().count(), 9);
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
        let svg = rd_svg(&rs);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg, rd_svg(&rs));
        let one = rd_svg(&rs[..1]);
        assert_eq!(one.matches("<polyline").count(), 1);
        assert!(!svg.contains("<path") && !svg.contains("<rect"));
    }

    #[test]
    fn polyline_points_sorted_by_rate() {
        let rs = vec![rec(0.01, ArchTag::VitLike, 0.3), rec(0.001, ArchTag::VitLike, 0.1), rec(0.005, ArchTag::VitLike, 0.2)];
        let svg = rd_svg(&rs);
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        let xs: Vec<f64> = pts.split(' ').map(|p| p.split(',').next().unwrap().parse().unwrap()).collect();
        assert!(xs.windows(2).all(|w| w[0] < w[1]));
    }
}
