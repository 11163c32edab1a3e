//! Packed bit sequences used for fingerprints, codewords and tag-class tables.

use serde::{Deserialize, Serialize};

/// Fixed-length bit sequence packed into 64-bit words, LSB-first within a word.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitString {
    len: usize,
    words: Vec<u64>,
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        BitString { len, words: vec![0; len.div_ceil(64)] }
    }

    pub fn from_fn(len: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut out = Self::zeros(len);
        for i in 0..len {
            if f(i) {
                out.set(i, true);
            }
        }
        out
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        Self::from_fn(bits.len(), |i| bits[i] != 0)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (i & 63);
        if value {
            self.words[i >> 6] |= mask;
        } else {
            self.words[i >> 6] &= !mask;
        }
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of positions at which `self` and `other` differ.
    pub fn hamming(&self, other: &Self) -> usize {
        assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Copies `src[src_range]` into `self` starting at `dst_start`.
    pub fn copy_range(&mut self, dst_start: usize, src: &Self, src_range: std::ops::Range<usize>) {
        for (off, i) in src_range.enumerate() {
            self.set(dst_start + off, src.get(i));
        }
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        let mut out = Self::zeros(range.len());
        out.copy_range(0, self, range);
        out
    }

    /// Packed little-endian bytes; trailing pad bits are zero.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len.div_ceil(8)];
        for (w, chunk) in self.words.iter().zip(out.chunks_mut(8)) {
            let bytes = w.to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
        out
    }

    pub fn from_bytes(len: usize, bytes: &[u8]) -> crate::error::Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(crate::error::Error::parameter(
                "bytes",
                format!("expected {} bytes for {} bits, got {}", len.div_ceil(8), len, bytes.len()),
            ));
        }
        let mut words = vec![0u64; len.div_ceil(64)];
        for (w, chunk) in words.iter_mut().zip(bytes.chunks(8)) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            *w = u64::from_le_bytes(buf);
        }
        let out = BitString { len, words };
        Ok(out)
    }
}

impl std::fmt::Debug for BitString {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BitString[{} bits, weight {}]", self.len, self.count_ones())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_get_roundtrip() {
        let mut b = BitString::zeros(130);
        b.set(0, true);
        b.set(64, true);
        b.set(129, true);
        assert!(b.get(0) && b.get(64) && b.get(129));
        assert!(!b.get(1));
        assert_eq!(b.count_ones(), 3);
    }

    #[test]
    fn byte_roundtrip() {
        let b = BitString::from_fn(77, |i| i % 3 == 0);
        let bytes = b.to_bytes();
        let back = BitString::from_bytes(77, &bytes).unwrap();
        assert_eq!(b, back);
    }

    #[test]
    fn hamming_distance() {
        let a = BitString::from_fn(100, |i| i % 2 == 0);
        let b = BitString::from_fn(100, |i| i % 2 == 1);
        assert_eq!(a.hamming(&b), 100);
        assert_eq!(a.hamming(&a), 0);
    }

    #[test]
    fn slice_and_copy() {
        let a = BitString::from_fn(64, |i| i < 10);
        let s = a.slice(5..15);
        assert_eq!(s.len(), 10);
        assert_eq!(s.count_ones(), 5);
    }
}
