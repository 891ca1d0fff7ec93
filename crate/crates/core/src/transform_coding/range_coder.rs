//! Carry-propagating range coder over 16-bit frequency tables, plus the
//! per-channel tables derived from an [`EntropyModel`].
//!
//! Symbols outside a channel's table are sent as an escape symbol followed
//! by a side bit and an Elias-gamma coded distance, all in bypass mode.

use super::entropy_model::EntropyModel;
use super::quantize::SYMBOL_BOUND;
use crate::error::{Error, Result};

pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;
/// Upper limit on in-table symbols per channel (the escape takes one more slot).
pub const MAX_SYMBOLS: usize = 4095;
const TOP: u32 = 1 << 24;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
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
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Encodes the interval `[cum, cum + freq)` of a `TOTAL`-sized table.
    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= TOTAL);
        let r = self.range >> PRECISION;
        self.low += r as u64 * cum as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn encode_bit(&mut self, bit: bool) {
        let half = TOTAL / 2;
        self.encode(if bit { half } else { 0 }, half);
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        if data.len() < 5 {
            return Err(Error::bitstream(0, "range-coded payload shorter than 5 bytes"));
        }
        let mut d = Self {
            data,
            pos: 0,
            code: 0,
            range: u32::MAX,
        };
        for _ in 0..5 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self
            .data
            .get(self.pos)
            .ok_or_else(|| Error::bitstream(self.pos, "range-coded payload is truncated"))?;
        self.pos += 1;
        Ok(b)
    }

    /// Position within the table of the next symbol; follow with [`Self::consume`].
    pub fn peek(&self) -> u32 {
        (self.code / (self.range >> PRECISION)).min(TOTAL - 1)
    }

    pub fn consume(&mut self, cum: u32, freq: u32) -> Result<()> {
        let r = self.range >> PRECISION;
        self.code = self
            .code
            .checked_sub(r * cum)
            .ok_or_else(|| Error::bitstream(self.pos, "corrupt range-coded payload"))?;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        Ok(())
    }

    pub fn decode_bit(&mut self) -> Result<bool> {
        let half = TOTAL / 2;
        let bit = self.peek() >= half;
        self.consume(if bit { half } else { 0 }, half)?;
        Ok(bit)
    }

    pub fn position(&self) -> usize {
        self.pos
    }
}

/// Quantized PMF of one channel over `offset ..= offset + len - 1`, with the
/// escape symbol last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelTable {
    pub offset: i32,
    pub freqs: Vec<u32>,
    pub cums: Vec<u32>,
}

impl ChannelTable {
    /// Table from real-valued probabilities (the last entry is the escape).
    pub fn from_probabilities(offset: i32, probs: &[f64]) -> Self {
        let mut freqs: Vec<u32> = probs
            .iter()
            .map(|&p| ((p.max(0.0) * TOTAL as f64).round() as u32).max(1))
            .collect();
        let mut sum: i64 = freqs.iter().map(|&f| f as i64).sum();
        while sum != TOTAL as i64 {
            let (imax, _) = freqs
                .iter()
                .enumerate()
                .max_by_key(|(i, f)| (**f, std::cmp::Reverse(*i)))
                .expect("non-empty table");
            if sum > TOTAL as i64 {
                let take = (sum - TOTAL as i64).min(freqs[imax] as i64 - 1);
                assert!(take > 0, "table has more symbols than the precision allows");
                freqs[imax] -= take as u32;
                sum -= take;
            } else {
                freqs[imax] += (TOTAL as i64 - sum) as u32;
                sum = TOTAL as i64;
            }
        }
        let mut cums = Vec::with_capacity(freqs.len());
        let mut acc = 0;
        for &f in &freqs {
            cums.push(acc);
            acc += f;
        }
        Self { offset, freqs, cums }
    }

    fn escape(&self) -> usize {
        self.freqs.len() - 1
    }

    fn symbol_at(&self, target: u32) -> usize {
        self.cums.partition_point(|&c| c <= target) - 1
    }
}

/// One table per channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodingTables {
    pub channels: Vec<ChannelTable>,
}

impl CodingTables {
    pub fn build(model: &dyn EntropyModel) -> Self {
        let tail = model.tail_mass().max(1e-12);
        let bound = SYMBOL_BOUND as f64 + 0.5;
        let channels = (0..model.channels())
            .map(|c| {
                let qlo = model.quantile(c, tail / 2.0, -bound, bound);
                let qhi = model.quantile(c, 1.0 - tail / 2.0, -bound, bound);
                let mut lo = qlo.floor() as i64;
                let mut hi = qhi.ceil() as i64;
                if (hi - lo + 1) as usize > MAX_SYMBOLS {
                    let median = model.quantile(c, 0.5, -bound, bound).round() as i64;
                    let half = (MAX_SYMBOLS / 2) as i64;
                    lo = lo.max(median - half);
                    hi = lo + MAX_SYMBOLS as i64 - 1;
                }
                let lo = lo.clamp(-(SYMBOL_BOUND as i64), SYMBOL_BOUND as i64);
                let hi = hi.clamp(lo, SYMBOL_BOUND as i64);
                let mut probs: Vec<f64> = (lo..=hi)
                    .map(|v| (model.cdf(c, v as f64 + 0.5) - model.cdf(c, v as f64 - 0.5)).max(0.0))
                    .collect();
                let inside: f64 = probs.iter().sum();
                probs.push((1.0 - inside).max(0.0));
                ChannelTable::from_probabilities(lo as i32, &probs)
            })
            .collect();
        Self { channels }
    }

    /// Range-codes `values` laid out channel-major with `plane` symbols per channel.
    pub fn encode(&self, values: &[i32], plane: usize) -> Vec<u8> {
        let mut enc = RangeEncoder::new();
        for (i, &v) in values.iter().enumerate() {
            let t = &self.channels[i / plane];
            let idx = v as i64 - t.offset as i64;
            if idx >= 0 && (idx as usize) < t.escape() {
                let s = idx as usize;
                enc.encode(t.cums[s], t.freqs[s]);
            } else {
                let e = t.escape();
                enc.encode(t.cums[e], t.freqs[e]);
                let above = idx >= 0;
                enc.encode_bit(above);
                let dist = if above { idx - t.escape() as i64 } else { -idx - 1 } as u64;
                encode_gamma(&mut enc, dist + 1);
            }
        }
        enc.finish()
    }

    pub fn decode(&self, payload: &[u8], count: usize, plane: usize) -> Result<Vec<i32>> {
        let mut dec = RangeDecoder::new(payload)?;
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            let t = &self.channels[i / plane];
            let s = t.symbol_at(dec.peek());
            dec.consume(t.cums[s], t.freqs[s])?;
            let idx = if s < t.escape() {
                s as i64
            } else {
                let above = dec.decode_bit()?;
                let dist = decode_gamma(&mut dec)? as i64 - 1;
                if above {
                    t.escape() as i64 + dist
                } else {
                    -dist - 1
                }
            };
            let v = t.offset as i64 + idx;
            if v.abs() > SYMBOL_BOUND as i64 {
                return Err(Error::bitstream(dec.position(), format!("decoded symbol {v} is out of range")));
            }
            out.push(v as i32);
        }
        Ok(out)
    }
}

fn encode_gamma(enc: &mut RangeEncoder, n: u64) {
    debug_assert!(n >= 1);
    let bits = 64 - n.leading_zeros();
    for _ in 1..bits {
        enc.encode_bit(false);
    }
    for b in (0..bits).rev() {
        enc.encode_bit((n >> b) & 1 == 1);
    }
}

fn decode_gamma(dec: &mut RangeDecoder) -> Result<u64> {
    let mut zeros = 0;
    while !dec.decode_bit()? {
        zeros += 1;
        if zeros > 40 {
            return Err(Error::bitstream(dec.position(), "malformed escape value"));
        }
    }
    let mut n = 1u64;
    for _ in 0..zeros {
        n = (n << 1) | dec.decode_bit()? as u64;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform_coding::entropy_model::LaplaceModel;
    use proptest::prelude::*;

    fn tables() -> CodingTables {
        CodingTables::build(&LaplaceModel::new(vec![0.0, 2.0], vec![1.0, 4.0], 1e-9))
    }

    #[test]
    fn tables_are_normalized() {
        for t in tables().channels {
            assert_eq!(t.freqs.iter().sum::<u32>(), TOTAL);
            assert!(t.freqs.iter().all(|&f| f >= 1));
            assert!(t.freqs.len() <= MAX_SYMBOLS + 1);
        }
    }

    #[test]
    fn escape_round_trip() {
        let t = tables();
        let values = vec![0, 1, -1, 30000, -32768, 32768, 2, 5, -400, 7];
        let bytes = t.encode(&values, 5);
        assert_eq!(t.decode(&bytes, values.len(), 5).unwrap(), values);
    }

    #[test]
    fn truncated_payload_errors() {
        let t = tables();
        let values: Vec<i32> = (0..200).map(|i| (i % 7) - 3).collect();
        let bytes = t.encode(&values, 100);
        assert!(t.decode(&bytes[..bytes.len() / 2], values.len(), 100).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(values in proptest::collection::vec(-40i32..40, 0..300)) {
            let t = tables();
            let plane = values.len().div_ceil(2).max(1);
            let bytes = t.encode(&values, plane);
            prop_assert_eq!(t.decode(&bytes, values.len(), plane).unwrap(), values);
        }

        #[test]
        fn raw_bits_round_trip(bits in proptest::collection::vec(any::<bool>(), 0..500)) {
            let mut enc = RangeEncoder::new();
            for &b in &bits {
                enc.encode_bit(b);
            }
            let bytes = enc.finish();
            let mut dec = RangeDecoder::new(&bytes).unwrap();
            for &b in &bits {
                prop_assert_eq!(dec.decode_bit().unwrap(), b);
            }
        }
    }
}
