//! Quantized cumulative-frequency tables and a 32-bit range coder.
//!
//! Frequencies are 16-bit (every table totals exactly `2^16`). The coder
//! keeps a 32-bit `range` and a 33-bit `low` (the extra bit is a pending
//! carry), and renormalizes one byte at a time. Interval bounds are
//! `floor(range * cum / 2^16)`, i.e. multiply before dividing, so almost no
//! range is lost per symbol even for near-certain symbols.
//!
//! Termination writes the fewest bytes that pin the final interval; the
//! decoder pads with zeros and, on [`RangeDecoder::finish`], recomputes the
//! same termination point to check that the stream ended exactly where it
//! should. This always catches trailing bytes and catches most truncations
//! and corruptions.

use alloc::vec;
use alloc::vec::Vec;

pub const PRECISION_BITS: u32 = 16;
/// Sum of every table's frequencies.
pub const TOTAL: u32 = 1 << PRECISION_BITS;
const TOP: u32 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CoderError {
    #[error("empty symbol support")]
    EmptySupport,
    #[error("support of {0} symbols exceeds the frequency precision")]
    SupportTooLarge(usize),
    #[error("probability for symbol index {0} is not positive and finite")]
    InvalidProbability(usize),
    #[error("symbol {symbol} outside table support [{min}, {max}]")]
    OutOfSupport { symbol: i64, min: i32, max: i32 },
    #[error("invalid cumulative table")]
    InvalidTable,
    #[error("corrupt stream: {0}")]
    Corrupt(&'static str),
}

type CoderResult<T> = core::result::Result<T, CoderError>;

/// Cumulative frequencies over the integer support `[min, min + n - 1]`.
///
/// `cum` has `n + 1` entries, starts at 0, ends at [`TOTAL`] and is strictly
/// increasing, so every in-support symbol is codable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfTable {
    min: i32,
    cum: Vec<u32>,
}

impl CdfTable {
    pub fn from_cumulative(min: i32, cum: Vec<u32>) -> CoderResult<Self> {
        if cum.len() < 2 || cum[0] != 0 || *cum.last().unwrap() != TOTAL || cum.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoderError::InvalidTable);
        }
        Ok(Self { min, cum })
    }

    /// Quantizes `probs` (for symbols `min, min+1, ...`) to 16-bit frequencies.
    ///
    /// Symbols whose share would round below one unit get exactly one unit;
    /// the remaining units are split in proportion to the remaining mass and
    /// rounded by largest remainder (ties go to the lower index).
    pub fn build(min: i32, probs: &[f64]) -> CoderResult<Self> {
        let n = probs.len();
        if n == 0 {
            return Err(CoderError::EmptySupport);
        }
        if n > TOTAL as usize {
            return Err(CoderError::SupportTooLarge(n));
        }
        if let Some(i) = probs.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(CoderError::InvalidProbability(i));
        }
        let mut floored = vec![false; n];
        let mut n_floored = 0usize;
        loop {
            let free = (TOTAL as usize - n_floored) as f64;
            let mass: f64 = probs.iter().zip(&floored).filter(|(_, &f)| !f).map(|(p, _)| p).sum();
            let mut changed = false;
            for i in 0..n {
                if !floored[i] && probs[i] / mass * free < 1.0 {
                    floored[i] = true;
                    n_floored += 1;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let free_units = TOTAL as i64 - n_floored as i64;
        let mass: f64 = probs.iter().zip(&floored).filter(|(_, &f)| !f).map(|(p, _)| p).sum();
        let mut freq = vec![1i64; n];
        let mut remainders: Vec<(f64, usize)> = Vec::new();
        let mut assigned = n_floored as i64;
        for i in 0..n {
            if floored[i] {
                continue;
            }
            let ideal = probs[i] / mass * free_units as f64;
            let whole = (libm::floor(ideal) as i64).max(1);
            freq[i] = whole;
            assigned += whole;
            remainders.push((ideal - whole as f64, i));
        }
        // Largest remainder first; stable on index for ties.
        remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
        let mut left = TOTAL as i64 - assigned;
        let mut k = 0;
        while left > 0 {
            freq[remainders[k % remainders.len()].1] += 1;
            left -= 1;
            k += 1;
        }
        // Float rounding can overshoot by a unit or so; take it back from the
        // smallest remainders that can spare it.
        let mut k = remainders.len();
        while left < 0 {
            k = if k == 0 { remainders.len() - 1 } else { k - 1 };
            let i = remainders[k].1;
            if freq[i] > 1 {
                freq[i] -= 1;
                left += 1;
            }
        }
        let mut cum = Vec::with_capacity(n + 1);
        let mut acc = 0u32;
        cum.push(0);
        for f in freq {
            acc += f as u32;
            cum.push(acc);
        }
        Self::from_cumulative(min, cum)
    }

    /// Every symbol in `[min, min + n - 1]` equally likely.
    pub fn uniform(min: i32, n: usize) -> CoderResult<Self> {
        Self::build(min, &vec![1.0; n])
    }

    pub fn min(&self) -> i32 {
        self.min
    }

    pub fn max(&self) -> i32 {
        self.min + self.len() as i32 - 1
    }

    pub fn len(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cum(&self) -> &[u32] {
        &self.cum
    }

    fn index_of(&self, symbol: i64) -> CoderResult<usize> {
        let idx = symbol - self.min as i64;
        if idx < 0 || idx >= self.len() as i64 {
            return Err(CoderError::OutOfSupport {
                symbol,
                min: self.min,
                max: self.max(),
            });
        }
        Ok(idx as usize)
    }

    pub fn freq(&self, symbol: i64) -> CoderResult<u32> {
        let i = self.index_of(symbol)?;
        Ok(self.cum[i + 1] - self.cum[i])
    }

    /// Quantized probability of `symbol`.
    pub fn probability(&self, symbol: i64) -> CoderResult<f64> {
        Ok(self.freq(symbol)? as f64 / TOTAL as f64)
    }

    /// `-log2` of the quantized probability.
    pub fn cost_bits(&self, symbol: i64) -> CoderResult<f64> {
        Ok(PRECISION_BITS as f64 - libm::log2(self.freq(symbol)? as f64))
    }
}

/// Table-building entry point.
pub fn build_table(min: i32, probs: &[f64]) -> CoderResult<CdfTable> {
    CdfTable::build(min, probs)
}

/// Two equally likely symbols `{0, 1}`; costs exactly one bit per symbol.
pub fn binary_table() -> CdfTable {
    CdfTable {
        min: 0,
        cum: vec![0, TOTAL / 2, TOTAL],
    }
}

/// Offset from `low` to the termination point and how many bytes of the
/// 32-bit window it occupies.
fn termination(low: u32, range: u32) -> (u32, usize) {
    for nbytes in 0..4usize {
        let zero_bits = 32 - 8 * nbytes as u32;
        let unit = 1u64 << zero_bits;
        let v = (low as u64 + unit - 1) & !(unit - 1);
        let delta = v - low as u64;
        if delta < range as u64 {
            return (delta as u32, nbytes);
        }
    }
    (0, 4)
}

#[derive(Clone, Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    started: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            pending: 0,
            started: false,
            out: Vec::new(),
        }
    }

    pub fn encode(&mut self, symbol: i64, table: &CdfTable) -> CoderResult<()> {
        let i = table.index_of(symbol)?;
        let (lo, hi) = (table.cum[i], table.cum[i + 1]);
        if hi - lo == TOTAL {
            return Ok(());
        }
        let r = self.range as u64;
        let a = (r * lo as u64) >> PRECISION_BITS;
        let b = (r * hi as u64) >> PRECISION_BITS;
        self.low += a;
        self.range = (b - a) as u32;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
        Ok(())
    }

    pub fn encode_bit(&mut self, bit: bool) {
        self.encode(bit as i64, &binary_table()).expect("binary symbol");
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low >= 1 << 32 {
            let carry = (self.low >> 32) as u8;
            if self.started {
                self.out.push(self.cache.wrapping_add(carry));
            } else {
                debug_assert_eq!(carry, 0, "carry cannot reach before the first byte");
            }
            for _ in 0..self.pending {
                self.out.push(0xFFu8.wrapping_add(carry));
            }
            self.pending = 0;
            self.cache = ((self.low >> 24) & 0xFF) as u8;
            self.started = true;
        } else {
            self.pending += 1;
        }
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Writes the minimal termination and returns the stream.
    pub fn finish(mut self) -> Vec<u8> {
        let (delta, nbytes) = termination(self.low as u32, self.range);
        self.low += delta as u64;
        for _ in 0..nbytes {
            self.shift_low();
        }
        let carry = (self.low >> 32) as u8;
        if self.started {
            self.out.push(self.cache.wrapping_add(carry));
        }
        for _ in 0..self.pending {
            self.out.push(0xFFu8.wrapping_add(carry));
        }
        self.out
    }
}

#[derive(Clone, Debug)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    low: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        let mut d = Self {
            data,
            pos: 0,
            code: 0,
            low: 0,
            range: u32::MAX,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.data.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    pub fn decode(&mut self, table: &CdfTable) -> CoderResult<i64> {
        if table.len() == 1 {
            return Ok(table.min as i64);
        }
        if self.pos > self.data.len() + 4 {
            return Err(CoderError::Corrupt("read past end of stream"));
        }
        let r = self.range as u64;
        let off = self.code.wrapping_sub(self.low) as u64;
        if off >= r {
            return Err(CoderError::Corrupt("code outside interval"));
        }
        // Largest cum[i] with floor(r * cum[i] / T) <= off.
        let q = (((off + 1) << PRECISION_BITS) - 1) / r;
        let i = table.cum.partition_point(|&c| (c as u64) <= q) - 1;
        if i >= table.len() {
            return Err(CoderError::Corrupt("code outside interval"));
        }
        let a = (r * table.cum[i] as u64) >> PRECISION_BITS;
        let b = (r * table.cum[i + 1] as u64) >> PRECISION_BITS;
        debug_assert!(a <= off && off < b);
        self.low = self.low.wrapping_add(a as u32);
        self.range = (b - a) as u32;
        while self.range < TOP {
            self.range <<= 8;
            self.low <<= 8;
            self.code = (self.code << 8) | self.next_byte() as u32;
        }
        Ok(table.min as i64 + i as i64)
    }

    pub fn decode_bit(&mut self) -> CoderResult<bool> {
        Ok(self.decode(&binary_table())? == 1)
    }

    /// Checks that the stream ends exactly at the encoder's termination point.
    pub fn finish(self) -> CoderResult<()> {
        let (delta, nbytes) = termination(self.low, self.range);
        if self.code != self.low.wrapping_add(delta) {
            return Err(CoderError::Corrupt("final state does not match termination"));
        }
        if self.data.len() + 4 != self.pos + nbytes {
            return Err(CoderError::Corrupt("stream length does not match termination"));
        }
        Ok(())
    }
}

/// Encodes `symbols[i]` with `tables[i]`.
pub fn encode_symbols(symbols: &[i64], tables: &[CdfTable]) -> CoderResult<Vec<u8>> {
    if symbols.len() != tables.len() {
        return Err(CoderError::InvalidTable);
    }
    let mut enc = RangeEncoder::new();
    for (&s, t) in symbols.iter().zip(tables) {
        enc.encode(s, t)?;
    }
    Ok(enc.finish())
}

pub fn decode_symbols(bytes: &[u8], tables: &[CdfTable], count: usize) -> CoderResult<Vec<i64>> {
    if tables.len() != count {
        return Err(CoderError::InvalidTable);
    }
    let mut dec = RangeDecoder::new(bytes);
    let out = tables.iter().map(|t| dec.decode(t)).collect::<CoderResult<Vec<_>>>()?;
    dec.finish()?;
    Ok(out)
}

/// `sum(-log2 p_quantized)` over a symbol sequence.
pub fn ideal_bits(symbols: &[i64], tables: &[CdfTable]) -> CoderResult<f64> {
    symbols.iter().zip(tables).map(|(&s, t)| t.cost_bits(s)).sum()
}

/// Codes `value` against a table whose first and last symbols are escapes.
///
/// Values strictly inside the table are coded directly. Values at or beyond
/// an end are coded as that end symbol followed by the overshoot in Elias
/// gamma, one equiprobable bit at a time.
pub fn encode_escaped(enc: &mut RangeEncoder, value: i64, table: &CdfTable) -> CoderResult<()> {
    if table.len() < 3 {
        return Err(CoderError::InvalidTable);
    }
    let (lo, hi) = (table.min() as i64, table.max() as i64);
    if value > lo && value < hi {
        return enc.encode(value, table);
    }
    let (edge, over) = if value <= lo { (lo, lo - value) } else { (hi, value - hi) };
    enc.encode(edge, table)?;
    let x = over as u64 + 1;
    let nbits = 64 - x.leading_zeros();
    for _ in 1..nbits {
        enc.encode_bit(false);
    }
    for b in (0..nbits).rev() {
        enc.encode_bit((x >> b) & 1 == 1);
    }
    Ok(())
}

pub fn decode_escaped(dec: &mut RangeDecoder<'_>, table: &CdfTable) -> CoderResult<i64> {
    if table.len() < 3 {
        return Err(CoderError::InvalidTable);
    }
    let (lo, hi) = (table.min() as i64, table.max() as i64);
    let s = dec.decode(table)?;
    if s > lo && s < hi {
        return Ok(s);
    }
    let mut zeros = 0u32;
    while !dec.decode_bit()? {
        zeros += 1;
        if zeros > 40 {
            return Err(CoderError::Corrupt("escape length overflow"));
        }
    }
    let mut x = 1u64;
    for _ in 0..zeros {
        x = (x << 1) | dec.decode_bit()? as u64;
    }
    let over = (x - 1) as i64;
    Ok(if s == lo { lo - over } else { hi + over })
}
