//! Versioned container for entropy-coded latents (`.jlc` files).
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic "JLC1" | version u16 | image h u32 | image w u32
//! latent c u32 | latent h u32 | latent w u32 | batch u32
//! em_hash u64
//! per channel: support lo i32 | symbol count u32
//! payload_len u32 | payload bytes (range-coded)
//! ```
//!
//! The header alone determines the latent shape, and the per-channel
//! support lets the decoder rebuild the exact frequency tables from the
//! same entropy model.

use crate::codec::entropy::{self, ChannelTable, EntropyModel, CODER_TOTAL_BITS};
use crate::codec::range_coder::{RangeDecoder, RangeEncoder};
use crate::codec::types::{QuantizeMode, QuantizedLatent};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"JLC1";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitstreamHeader {
    pub version: u16,
    /// Original image dims (pre-padding); what the decoder crops to.
    pub image_h: u32,
    pub image_w: u32,
    pub latent_c: u32,
    pub latent_h: u32,
    pub latent_w: u32,
    pub batch: u32,
    pub em_hash: u64,
    /// Per-channel (support lo, symbol count).
    pub supports: Vec<(i32, u32)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitstream {
    pub header: BitstreamHeader,
    pub payload: Vec<u8>,
}

impl Bitstream {
    pub fn payload_bits(&self) -> usize {
        self.payload.len() * 8
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&h.version.to_le_bytes());
        out.extend_from_slice(&h.image_h.to_le_bytes());
        out.extend_from_slice(&h.image_w.to_le_bytes());
        out.extend_from_slice(&h.latent_c.to_le_bytes());
        out.extend_from_slice(&h.latent_h.to_le_bytes());
        out.extend_from_slice(&h.latent_w.to_le_bytes());
        out.extend_from_slice(&h.batch.to_le_bytes());
        out.extend_from_slice(&h.em_hash.to_le_bytes());
        for &(lo, n) in &h.supports {
            out.extend_from_slice(&lo.to_le_bytes());
            out.extend_from_slice(&n.to_le_bytes());
        }
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format("not a JLC bitstream (bad magic)".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported bitstream version {version}, expected {VERSION}"
            )));
        }
        let image_h = r.u32()?;
        let image_w = r.u32()?;
        let latent_c = r.u32()?;
        let latent_h = r.u32()?;
        let latent_w = r.u32()?;
        let batch = r.u32()?;
        let em_hash = r.u64()?;
        let mut supports = Vec::with_capacity(latent_c as usize);
        for _ in 0..latent_c {
            let lo = r.i32()?;
            let n = r.u32()?;
            supports.push((lo, n));
        }
        let payload_len = r.u32()? as usize;
        let payload = r.take(payload_len)?.to_vec();
        Ok(Bitstream {
            header: BitstreamHeader {
                version,
                image_h,
                image_w,
                latent_c,
                latent_h,
                latent_w,
                batch,
                em_hash,
                supports,
            },
            payload,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("bitstream header truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Range-code a rounded latent against the entropy model's quantized CDF
/// tables. `image_dims` records the (h, w) the reconstruction should be
/// cropped to.
pub fn encode_bitstream(
    yhat: &QuantizedLatent,
    em: &EntropyModel,
    image_dims: (usize, usize),
) -> Result<Bitstream> {
    entropy::require_rounded(yhat)?;
    let (b, c, h, w) = yhat.dims();
    let tables = em.coding_tables(Some(yhat))?;
    let supports: Vec<(i32, u32)> = tables
        .iter()
        .map(|t| {
            if t.lo < i32::MIN as i64 || t.hi() > i32::MAX as i64 {
                return Err(Error::Numeric("coding support exceeds i32".into()));
            }
            Ok((t.lo as i32, t.symbols() as u32))
        })
        .collect::<Result<_>>()?;

    let payload = if yhat.data.numel() == 0 {
        Vec::new()
    } else {
        let mut enc = RangeEncoder::new();
        let data = yhat.data.data();
        for bi in 0..b {
            for ci in 0..c {
                let table = &tables[ci];
                let plane = &data[(bi * c + ci) * h * w..][..h * w];
                for &v in plane {
                    let (cum, freq) = table.locate(v as i64)?;
                    enc.encode(cum, freq, CODER_TOTAL_BITS);
                }
            }
        }
        enc.finish()
    };

    Ok(Bitstream {
        header: BitstreamHeader {
            version: VERSION,
            image_h: image_dims.0 as u32,
            image_w: image_dims.1 as u32,
            latent_c: c as u32,
            latent_h: h as u32,
            latent_w: w as u32,
            batch: b as u32,
            em_hash: em.content_hash(),
            supports,
        },
        payload,
    })
}

/// Decode a bitstream back into the exact rounded latent. The entropy model
/// must match the encoder's (checked via the header hash).
pub fn decode_bitstream(bs: &Bitstream, em: &EntropyModel) -> Result<QuantizedLatent> {
    let h = &bs.header;
    if h.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported bitstream version {}",
            h.version
        )));
    }
    if h.em_hash != em.content_hash() {
        return Err(Error::Format(
            "bitstream was produced with a different entropy model".into(),
        ));
    }
    if h.latent_c as usize != em.channels() {
        return Err(Error::Format(format!(
            "bitstream has {} latent channels, model has {}",
            h.latent_c,
            em.channels()
        )));
    }
    let (b, c, lh, lw) = (
        h.batch as usize,
        h.latent_c as usize,
        h.latent_h as usize,
        h.latent_w as usize,
    );
    let mut data = Tensor::zeros(&[b, c, lh, lw]);
    if data.numel() > 0 {
        let tables: Vec<ChannelTable> = h
            .supports
            .iter()
            .enumerate()
            .map(|(ci, &(lo, n))| {
                if n == 0 {
                    return Err(Error::Format(format!("channel {ci} has empty support")));
                }
                em.channel_table(ci, lo as i64, lo as i64 + n as i64 - 1)
            })
            .collect::<Result<_>>()?;
        let mut dec = RangeDecoder::new(&bs.payload)?;
        let out = data.data_mut();
        for bi in 0..b {
            for ci in 0..c {
                let table = &tables[ci];
                let plane = &mut out[(bi * c + ci) * lh * lw..][..lh * lw];
                for slot in plane.iter_mut() {
                    let target = dec.decode_target(CODER_TOTAL_BITS);
                    let sym = table.symbol_at(target);
                    let (cum, freq) = table.locate(sym)?;
                    dec.advance(cum, freq, CODER_TOTAL_BITS)?;
                    *slot = sym as f64;
                }
            }
        }
    }
    Ok(QuantizedLatent {
        data,
        mode: QuantizeMode::InferRound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_latent(shape: &[usize], lo: i64, hi: i64, seed: u64) -> QuantizedLatent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..=hi) as f64).collect();
        QuantizedLatent {
            data: Tensor::from_vec(shape, data),
            mode: QuantizeMode::InferRound,
        }
    }

    #[test]
    fn roundtrip_is_lossless_on_many_random_latents() {
        let em = EntropyModel::init(4, 4, 21);
        for seed in 0..100 {
            let q = random_latent(&[1, 4, 5, 7], -32, 31, seed);
            let bs = encode_bitstream(&q, &em, (40, 56)).unwrap();
            let back = decode_bitstream(&bs, &em).unwrap();
            assert_eq!(back.data, q.data, "roundtrip failed for seed {seed}");
            assert_eq!(back.mode, QuantizeMode::InferRound);
        }
    }

    #[test]
    fn container_bytes_roundtrip() {
        let em = EntropyModel::init(2, 4, 1);
        let q = random_latent(&[2, 2, 3, 3], -5, 5, 9);
        let bs = encode_bitstream(&q, &em, (24, 24)).unwrap();
        let bytes = bs.to_bytes();
        let parsed = Bitstream::from_bytes(&bytes).unwrap();
        assert_eq!(parsed, bs);
    }

    #[test]
    fn empty_latent_gives_header_only_stream() {
        let em = EntropyModel::init(2, 4, 1);
        let q = QuantizedLatent {
            data: Tensor::zeros(&[0, 2, 0, 0]),
            mode: QuantizeMode::InferRound,
        };
        let bs = encode_bitstream(&q, &em, (0, 0)).unwrap();
        assert!(bs.payload.is_empty());
        let back = decode_bitstream(&bs, &em).unwrap();
        assert_eq!(back.data.numel(), 0);
    }

    #[test]
    fn noisy_latent_is_rejected() {
        let em = EntropyModel::init(1, 4, 1);
        let q = QuantizedLatent {
            data: Tensor::zeros(&[1, 1, 2, 2]),
            mode: QuantizeMode::TrainNoise,
        };
        assert!(matches!(
            encode_bitstream(&q, &em, (16, 16)),
            Err(Error::Mode(_))
        ));
    }

    #[test]
    fn version_mismatch_is_a_format_error() {
        let em = EntropyModel::init(1, 4, 1);
        let q = random_latent(&[1, 1, 2, 2], -3, 3, 4);
        let bs = encode_bitstream(&q, &em, (16, 16)).unwrap();
        let mut bytes = bs.to_bytes();
        bytes[4] = 99; // version field
        assert!(matches!(
            Bitstream::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn wrong_model_is_a_format_error() {
        let em = EntropyModel::init(1, 4, 1);
        let other = EntropyModel::init(1, 4, 2);
        let q = random_latent(&[1, 1, 4, 4], -3, 3, 4);
        let bs = encode_bitstream(&q, &em, (32, 32)).unwrap();
        assert!(matches!(
            decode_bitstream(&bs, &other),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn truncated_payload_is_a_decode_error() {
        let em = EntropyModel::init(2, 4, 3);
        let q = random_latent(&[1, 2, 16, 16], -20, 20, 5);
        let mut bs = encode_bitstream(&q, &em, (128, 128)).unwrap();
        bs.payload.truncate(bs.payload.len() / 2 & !1);
        assert!(matches!(
            decode_bitstream(&bs, &em),
            Err(Error::Decode(_))
        ));
    }

    #[test]
    fn payload_tracks_entropy_estimate() {
        // >= 10^4 elements: measured bits within 2% + 64 bytes of estimate
        let em = EntropyModel::init(8, 4, 13);
        let q = random_latent(&[1, 8, 40, 40], -6, 6, 8);
        let pixels = 64 * 64;
        let est = crate::codec::entropy::estimate_rate_bpp(&q, &em, pixels).unwrap();
        let bs = encode_bitstream(&q, &em, (64, 64)).unwrap();
        let measured = bs.payload_bits() as f64;
        let budget = est * pixels as f64 * 1.02 + 64.0 * 8.0;
        assert!(
            measured <= budget,
            "measured {measured} bits exceeds budget {budget}"
        );
    }
}
