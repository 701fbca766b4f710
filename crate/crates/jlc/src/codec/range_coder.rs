//! Multi-symbol range coder with 16-bit digit renormalization.
//!
//! The state keeps a 48-bit window (range in (0, 2^48], digits of 16 bits),
//! so with 16-bit frequency totals the truncation loss per symbol is below
//! 2^-16 of the interval — negligible against the 2% payload budget.
//! Carry propagation follows the cache/pending scheme: the first emitted
//! word is a dummy the decoder skips during initialization.

use crate::error::{Error, Result};

const MASK48: u64 = (1 << 48) - 1;
const BOT: u64 = 1 << 32;

pub struct RangeEncoder {
    low: u64,
    range: u64,
    cache: u16,
    cache_count: u64,
    words: Vec<u16>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: MASK48,
            cache: 0,
            cache_count: 1,
            words: Vec::new(),
        }
    }

    /// Encode one symbol occupying [cum, cum + freq) out of 2^total_bits.
    pub fn encode(&mut self, cum: u32, freq: u32, total_bits: u32) {
        debug_assert!(freq > 0);
        let r = self.range >> total_bits;
        self.low += r * cum as u64;
        self.range = r * freq as u64;
        while self.range < BOT {
            self.shift_low();
            self.range <<= 16;
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFFFF_0000_0000 || self.low > MASK48 {
            let carry = (self.low >> 48) as u16;
            self.words.push(self.cache.wrapping_add(carry));
            for _ in 1..self.cache_count {
                self.words.push(0xFFFFu16.wrapping_add(carry));
            }
            self.cache = ((self.low >> 32) & 0xFFFF) as u16;
            self.cache_count = 0;
        }
        self.cache_count += 1;
        self.low = (self.low << 16) & MASK48;
    }

    /// Flush the remaining state; output is little-endian bytes.
    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..4 {
            self.shift_low();
        }
        let mut out = Vec::with_capacity(self.words.len() * 2);
        for w in self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }
}

pub struct RangeDecoder<'a> {
    code: u64,
    range: u64,
    words: std::slice::ChunksExact<'a, u8>,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(payload: &'a [u8]) -> Result<Self> {
        if payload.len() % 2 != 0 {
            return Err(Error::Decode("payload length is not word-aligned".into()));
        }
        let mut d = RangeDecoder {
            code: 0,
            range: MASK48,
            words: payload.chunks_exact(2),
        };
        // consume the encoder's dummy cache word plus the 48-bit window
        for _ in 0..4 {
            d.code = ((d.code << 16) | d.next_word()? as u64) & MASK48;
        }
        Ok(d)
    }

    fn next_word(&mut self) -> Result<u16> {
        match self.words.next() {
            Some(w) => Ok(u16::from_le_bytes([w[0], w[1]])),
            None => Err(Error::Decode("payload truncated".into())),
        }
    }

    /// Cumulative-frequency position of the next symbol.
    pub fn decode_target(&self, total_bits: u32) -> u32 {
        let r = self.range >> total_bits;
        let t = self.code / r;
        let max = (1u64 << total_bits) - 1;
        t.min(max) as u32
    }

    /// Advance past a symbol previously located at [cum, cum + freq).
    pub fn advance(&mut self, cum: u32, freq: u32, total_bits: u32) -> Result<()> {
        let r = self.range >> total_bits;
        self.code -= r * cum as u64;
        self.range = r * freq as u64;
        if self.code >= self.range {
            return Err(Error::Decode("corrupt payload: code outside range".into()));
        }
        while self.range < BOT {
            self.code = ((self.code << 16) | self.next_word()? as u64) & MASK48;
            self.range <<= 16;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn roundtrip(symbols: &[u32], cum: &[u32], total_bits: u32) -> Vec<u32> {
        let mut enc = RangeEncoder::new();
        for &s in symbols {
            enc.encode(cum[s as usize], cum[s as usize + 1] - cum[s as usize], total_bits);
        }
        let payload = enc.finish();
        let mut dec = RangeDecoder::new(&payload).unwrap();
        let mut out = Vec::new();
        for _ in 0..symbols.len() {
            let t = dec.decode_target(total_bits);
            let s = cum.windows(2).position(|w| w[0] <= t && t < w[1]).unwrap();
            dec.advance(cum[s], cum[s + 1] - cum[s], total_bits).unwrap();
            out.push(s as u32);
        }
        out
    }

    #[test]
    fn uniform_roundtrip_and_length() {
        // 16 symbols, 4 bits each: 1600 symbols -> ~800 bytes payload
        let cum: Vec<u32> = (0..=16).map(|i| i * 4096).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let symbols: Vec<u32> = (0..1600).map(|_| rng.gen_range(0..16)).collect();

        let mut enc = RangeEncoder::new();
        for &s in &symbols {
            enc.encode(cum[s as usize], 4096, 16);
        }
        let payload = enc.finish();
        let bits = payload.len() * 8;
        assert!(
            bits as f64 <= 6400.0 * 1.02 + 512.0,
            "payload {bits} bits exceeds entropy bound"
        );

        let decoded = roundtrip(&symbols, &cum, 16);
        assert_eq!(decoded, symbols);
    }

    #[test]
    fn skewed_distribution_roundtrip() {
        // heavily skewed table exercises carry and renormalization paths
        let cum = vec![0u32, 60000, 60001, 65000, 65536];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let symbols: Vec<u32> = (0..5000)
            .map(|_| match rng.gen_range(0..100) {
                0..=89 => 0,
                90 => 1,
                91..=97 => 2,
                _ => 3,
            })
            .collect();
        let decoded = roundtrip(&symbols, &cum, 16);
        assert_eq!(decoded, symbols);
    }

    #[test]
    fn empty_stream_is_just_flush() {
        let enc = RangeEncoder::new();
        let payload = enc.finish();
        assert_eq!(payload.len(), 8);
        assert!(RangeDecoder::new(&payload).is_ok());
    }

    #[test]
    fn truncated_payload_errors() {
        let cum: Vec<u32> = (0..=16).map(|i| i * 4096).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let symbols: Vec<u32> = (0..4000).map(|_| rng.gen_range(0..16)).collect();
        let mut enc = RangeEncoder::new();
        for &s in &symbols {
            enc.encode(cum[s as usize], 4096, 16);
        }
        let payload = enc.finish();
        let cut = &payload[..payload.len() / 2];
        let mut dec = RangeDecoder::new(cut).unwrap();
        let mut failed = false;
        for _ in 0..symbols.len() {
            let t = dec.decode_target(16);
            let s = cum.windows(2).position(|w| w[0] <= t && t < w[1]).unwrap();
            if dec.advance(cum[s], cum[s + 1] - cum[s], 16).is_err() {
                failed = true;
                break;
            }
        }
        assert!(failed, "truncated payload must raise a decode error");
    }
}
