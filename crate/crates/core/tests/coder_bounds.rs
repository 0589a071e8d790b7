//! Range-coder efficiency against the quantized Shannon bound.

use caufc_core::entropy::{build_table, decode_symbols, encode_symbols, ideal_bits, CdfTable};
use caufc_core::rng::SplitMix64;

fn draw(table: &CdfTable, rng: &mut SplitMix64) -> i64 {
    let u = rng.below(table.cum()[table.len()] as u64) as u32;
    let k = table.cum().partition_point(|&c| c <= u) - 1;
    table.min() as i64 + k as i64
}

fn check(probs: &[f64], n: usize, seed: u64) {
    let table = build_table(-(probs.len() as i32) / 2, probs).unwrap();
    let mut rng = SplitMix64::new(seed);
    let symbols: Vec<i64> = (0..n).map(|_| draw(&table, &mut rng)).collect();
    let tables = vec![table; n];
    let bytes = encode_symbols(&symbols, &tables).unwrap();
    let bound = ideal_bits(&symbols, &tables).unwrap() / 8.0;
    println!("{} symbols: {} bytes, bound {:.1} bytes", n, bytes.len(), bound);
    assert!((bytes.len() as f64) <= 1.01 * bound + 8.0, "{} bytes vs bound {:.1}", bytes.len(), bound);
    assert_eq!(decode_symbols(&bytes, &tables, n).unwrap(), symbols);
}

#[test]
fn skewed_source_is_within_one_percent() {
    let probs: Vec<f64> = (0..21).map(|i: i32| (-0.4 * (i - 10).abs() as f64).exp()).collect();
    check(&probs, 100_000, 1);
}

#[test]
fn near_uniform_source_is_within_one_percent() {
    let probs: Vec<f64> = (0..256).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
    check(&probs, 100_000, 2);
}

#[test]
fn highly_predictable_source_is_within_one_percent() {
    check(&[0.001, 0.998, 0.001], 100_000, 3);
}
