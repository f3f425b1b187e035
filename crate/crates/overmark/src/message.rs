//! Watermark payloads: fixed-length bit vectors.

use rand::Rng;

use crate::error::{Error, Result};

/// A length-`L` binary payload.
///
/// Bits are stored one byte per bit with values 0 or 1. Hex round-tripping
/// packs bits most-significant-first within each byte, so `L` that is not a
/// multiple of 8 pads the final byte with low zero bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WatermarkMessage {
    bits: Vec<u8>,
}

impl WatermarkMessage {
    /// Wraps a bit vector, rejecting anything that is not strictly 0/1.
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::input("message must contain at least one bit"));
        }
        if let Some(bad) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::input(format!("message bits must be 0 or 1, got {bad}")));
        }
        Ok(Self { bits })
    }

    /// Samples a uniformly random message of `len` bits.
    pub fn random(len: usize, rng: &mut impl Rng) -> Self {
        let bits = (0..len).map(|_| rng.random_range(0..=1u8)).collect();
        Self { bits }
    }

    /// Parses a hex string carrying exactly `len` bits.
    ///
    /// The string must contain `ceil(len / 8)` bytes of hex; trailing pad bits
    /// in the final byte must be zero so that the encoding is unambiguous.
    pub fn from_hex(hex: &str, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::input("message length must be positive"));
        }
        let want_bytes = len.div_ceil(8);
        let hex = hex.trim();
        if hex.len() != want_bytes * 2 {
            return Err(Error::input(format!(
                "hex message must encode {len} bits ({} hex chars), got {} chars",
                want_bytes * 2,
                hex.len()
            )));
        }
        let mut bytes = Vec::with_capacity(want_bytes);
        for i in 0..want_bytes {
            let pair = &hex[2 * i..2 * i + 2];
            let byte = u8::from_str_radix(pair, 16)
                .map_err(|_| Error::input(format!("invalid hex byte {pair:?}")))?;
            bytes.push(byte);
        }
        let mut bits = Vec::with_capacity(len);
        for (i, byte) in bytes.iter().enumerate() {
            for b in 0..8 {
                let bit = (byte >> (7 - b)) & 1;
                let pos = i * 8 + b;
                if pos < len {
                    bits.push(bit);
                } else if bit != 0 {
                    return Err(Error::input("nonzero padding bits in hex message"));
                }
            }
        }
        Ok(Self { bits })
    }

    /// Hex encoding of the payload (MSB-first bit packing).
    pub fn to_hex(&self) -> String {
        let mut out = String::with_capacity(self.bits.len().div_ceil(8) * 2);
        for chunk in self.bits.chunks(8) {
            let mut byte = 0u8;
            for (i, &bit) in chunk.iter().enumerate() {
                byte |= bit << (7 - i);
            }
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Bits as f32 0.0/1.0, the form consumed by the networks.
    pub fn as_f32(&self) -> Vec<f32> {
        self.bits.iter().map(|&b| b as f32).collect()
    }

    /// Recovers a message from per-bit probabilities by thresholding at 0.5.
    pub fn from_probabilities(probs: &[f32]) -> Self {
        let bits = probs.iter().map(|&p| if p >= 0.5 { 1u8 } else { 0u8 }).collect();
        Self { bits }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn rejects_non_binary() {
        assert!(WatermarkMessage::new(vec![0, 1, 2]).is_err());
        assert!(WatermarkMessage::new(vec![]).is_err());
    }

    #[test]
    fn hex_round_trip() {
        let mut rng = rng_for(11, &["msg-test"], 0);
        for len in [1usize, 7, 8, 9, 32, 100] {
            let m = WatermarkMessage::random(len, &mut rng);
            let hex = m.to_hex();
            let back = WatermarkMessage::from_hex(&hex, len).unwrap();
            assert_eq!(m, back, "len {len}");
        }
    }

    #[test]
    fn hex_rejects_bad_length_and_padding() {
        assert!(WatermarkMessage::from_hex("ff", 16).is_err());
        // 9 bits from 0xff 0xff: pad bits set.
        assert!(WatermarkMessage::from_hex("ffff", 9).is_err());
        assert!(WatermarkMessage::from_hex("ff80", 9).is_ok());
    }

    #[test]
    fn thresholding() {
        let m = WatermarkMessage::from_probabilities(&[0.1, 0.9, 0.5, 0.4999]);
        assert_eq!(m.bits(), &[0, 1, 1, 0]);
    }
}
