//! Permute-then-encrypt layer: position-bound deterministic encryption of
//! fingerprint bits, permutation key management, and segment/blob
//! encryption for proxy-to-authority transfers.
//!
//! Tag semantics: at every position k there are exactly two valid tags,
//! one per bit value, so tag equality at a position is equivalent to
//! equality of the permuted plaintext bits. The mock backend realizes the
//! tags as keyed-PRF outputs; the Paillier backend fixes the encryption
//! randomness r_k per position.

pub mod paillier;

use std::sync::atomic::{AtomicU64, Ordering};

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use paillier::PaillierKeypair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecurityLevel {
    /// Keyed-PRF tags; preserves all contractual properties at test speed.
    Mock,
    Paillier1024,
    Paillier2048,
}

impl SecurityLevel {
    fn modulus_bits(self) -> Option<usize> {
        match self {
            SecurityLevel::Mock => None,
            SecurityLevel::Paillier1024 => Some(1024),
            SecurityLevel::Paillier2048 => Some(2048),
        }
    }
}

/// Secret bijection on bit positions. `permute` realizes sigma(x)^(k) =
/// x^(sigma(k)).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationKey {
    forward: Vec<u32>,
    inverse: Vec<u32>,
}

impl PermutationKey {
    pub fn identity(len: usize) -> Self {
        let forward: Vec<u32> = (0..len as u32).collect();
        PermutationKey { inverse: forward.clone(), forward }
    }

    pub fn random(len: usize, rng: &mut impl Rng) -> Self {
        let mut forward: Vec<u32> = (0..len as u32).collect();
        // Fisher-Yates
        for i in (1..len).rev() {
            let j = rng.gen_range(0..=i);
            forward.swap(i, j);
        }
        Self::from_forward(forward).expect("valid by construction")
    }

    pub fn from_forward(forward: Vec<u32>) -> Result<Self> {
        let len = forward.len();
        let mut inverse = vec![u32::MAX; len];
        for (k, &j) in forward.iter().enumerate() {
            if j as usize >= len || inverse[j as usize] != u32::MAX {
                return Err(Error::parameter("sigma", "not a permutation"));
            }
            inverse[j as usize] = k as u32;
        }
        Ok(PermutationKey { forward, inverse })
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// Image position: sigma(x)^(k) = x^(forward(k)).
    #[inline]
    pub fn source_of(&self, k: usize) -> usize {
        self.forward[k] as usize
    }

    /// Position that original index j lands on after permutation.
    #[inline]
    pub fn dest_of(&self, j: usize) -> usize {
        self.inverse[j] as usize
    }

    pub fn permute_bits(&self, x: &BitString) -> Result<BitString> {
        if x.len() != self.len() {
            return Err(Error::parameter("bits", "length does not match permutation"));
        }
        Ok(BitString::from_fn(x.len(), |k| x.get(self.forward[k] as usize)))
    }

    pub fn inverse_permute_bits(&self, y: &BitString) -> Result<BitString> {
        if y.len() != self.len() {
            return Err(Error::parameter("bits", "length does not match permutation"));
        }
        Ok(BitString::from_fn(y.len(), |j| y.get(self.inverse[j] as usize)))
    }

    pub fn permute_f64(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.len() {
            return Err(Error::parameter("values", "length does not match permutation"));
        }
        Ok((0..x.len()).map(|k| x[self.forward[k] as usize]).collect())
    }
}

#[derive(Debug, Serialize, Deserialize)]
enum BackendKeys {
    Mock {
        secret: [u8; 32],
    },
    Paillier {
        keypair: PaillierKeypair,
        nonce_seed: [u8; 32],
        /// r_k^n mod n^2, precomputed per bit position.
        #[serde(skip)]
        position_rn: Vec<BigUint>,
    },
}

/// T_A's key material for one content item: keypair, per-position secret
/// nonces, and the decrypt instrumentation counter used by the
/// non-decryption assertions.
#[derive(Debug, Serialize, Deserialize)]
pub struct AuthorityKeyMaterial {
    pub content_binding: String,
    pub bit_length: usize,
    pub security: SecurityLevel,
    backend: BackendKeys,
    #[serde(skip)]
    decrypt_calls: AtomicU64,
}

/// Generates fresh key material and a uniformly random permutation for one
/// content item. Deterministic under a fixed seed.
pub fn generate_keys(
    bit_length: usize,
    security: SecurityLevel,
    seed: u64,
    content_binding: &str,
) -> Result<(AuthorityKeyMaterial, PermutationKey)> {
    if bit_length == 0 {
        return Err(Error::parameter("bit_length", "must be positive"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let backend = match security.modulus_bits() {
        None => {
            let mut secret = [0u8; 32];
            rng.fill_bytes(&mut secret);
            BackendKeys::Mock { secret }
        }
        Some(bits) => {
            let keypair = PaillierKeypair::generate(bits, &mut rng)?;
            let mut nonce_seed = [0u8; 32];
            rng.fill_bytes(&mut nonce_seed);
            let position_rn = precompute_position_rn(&keypair, &nonce_seed, bit_length);
            BackendKeys::Paillier { keypair, nonce_seed, position_rn }
        }
    };
    let keys = AuthorityKeyMaterial {
        content_binding: content_binding.to_string(),
        bit_length,
        security,
        backend,
        decrypt_calls: AtomicU64::new(0),
    };
    let sigma = PermutationKey::random(bit_length, &mut rng);
    Ok((keys, sigma))
}

fn position_nonce(keypair: &PaillierKeypair, nonce_seed: &[u8; 32], k: usize) -> BigUint {
    // Expand a per-position secret element of Z_n^* from the nonce seed.
    let mut bytes = Vec::new();
    let mut ctr = 0u32;
    let need = keypair.modulus_bits / 8 + 16;
    while bytes.len() < need {
        let mut h = Sha256::new();
        h.update(nonce_seed);
        h.update(b"position-nonce");
        h.update((k as u64).to_le_bytes());
        h.update(ctr.to_le_bytes());
        bytes.extend_from_slice(&h.finalize());
        ctr += 1;
    }
    let r = BigUint::from_bytes_be(&bytes) % &keypair.n;
    if r.is_zero() { BigUint::one() } else { r }
}

fn precompute_position_rn(
    keypair: &PaillierKeypair,
    nonce_seed: &[u8; 32],
    bit_length: usize,
) -> Vec<BigUint> {
    let rn: Vec<BigUint> = maybe_par_map(0..bit_length, |k| {
        let r = position_nonce(keypair, nonce_seed, k);
        r.modpow(&keypair.n, &keypair.n_squared)
    });
    rn
}

#[cfg(feature = "parallel")]
fn maybe_par_map<T: Send, F: Fn(usize) -> T + Sync + Send>(
    range: std::ops::Range<usize>,
    f: F,
) -> Vec<T> {
    use rayon::prelude::*;
    range.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn maybe_par_map<T, F: Fn(usize) -> T>(range: std::ops::Range<usize>, f: F) -> Vec<T> {
    range.map(f).collect()
}

impl AuthorityKeyMaterial {
    pub fn tag_width(&self) -> usize {
        match &self.backend {
            BackendKeys::Mock { .. } => 16,
            BackendKeys::Paillier { keypair, .. } => keypair.ciphertext_width(),
        }
    }

    /// Restores caches dropped by serialization.
    pub fn rehydrate(&mut self) {
        if let BackendKeys::Paillier { keypair, nonce_seed, position_rn } = &mut self.backend {
            if position_rn.len() != self.bit_length {
                *position_rn = precompute_position_rn(keypair, nonce_seed, self.bit_length);
            }
        }
    }

    /// Number of decrypt operations performed with this key material.
    pub fn decrypt_calls(&self) -> u64 {
        self.decrypt_calls.load(Ordering::Relaxed)
    }

    /// Position-bound deterministic encryption of one bit.
    pub fn encrypt_bit(&self, bit: bool, position: usize) -> Result<Vec<u8>> {
        if position >= self.bit_length {
            return Err(Error::parameter(
                "position",
                format!("{position} out of range for l={}", self.bit_length),
            ));
        }
        match &self.backend {
            BackendKeys::Mock { secret } => {
                let mut h = Sha256::new();
                h.update(secret);
                h.update(b"bit-tag");
                h.update((position as u64).to_le_bytes());
                h.update([bit as u8]);
                Ok(h.finalize()[..16].to_vec())
            }
            BackendKeys::Paillier { keypair, position_rn, .. } => {
                let m = if bit { BigUint::one() } else { BigUint::zero() };
                let c = keypair.encrypt_with_rn(&m, &position_rn[position]);
                Ok(keypair.ciphertext_to_bytes(&c))
            }
        }
    }

    /// Recovers the bit from a tag produced by `encrypt_bit` at `position`.
    pub fn decrypt_bit(&self, tag: &[u8], position: usize) -> Result<bool> {
        self.decrypt_calls.fetch_add(1, Ordering::Relaxed);
        if position >= self.bit_length {
            return Err(Error::parameter("position", "out of range"));
        }
        match &self.backend {
            BackendKeys::Mock { .. } => {
                for bit in [false, true] {
                    if self.encrypt_bit(bit, position)? == tag {
                        return Ok(bit);
                    }
                }
                Err(Error::Integrity(format!("tag at position {position} matches neither bit")))
            }
            BackendKeys::Paillier { keypair, .. } => {
                let c = keypair.ciphertext_from_bytes(tag)?;
                let m = keypair.decrypt(&c)?;
                let bit = if m.is_zero() {
                    false
                } else if m.is_one() {
                    true
                } else {
                    return Err(Error::Integrity("tag decrypts outside {0,1}".into()));
                };
                // The tag must be the canonical position-bound ciphertext.
                if self.encrypt_bit(bit, position)? != tag {
                    return Err(Error::Integrity(format!(
                        "tag at position {position} has foreign randomness"
                    )));
                }
                Ok(bit)
            }
        }
    }

    /// Probabilistic encryption of an arbitrary byte string (used for
    /// fragment and segment-group transport, not for fingerprint tags).
    pub fn encrypt_blob(&self, data: &[u8], rng: &mut impl Rng) -> Vec<u8> {
        match &self.backend {
            BackendKeys::Mock { secret } => {
                let mut nonce = [0u8; 16];
                rng.fill_bytes(&mut nonce);
                let mut out = nonce.to_vec();
                out.extend_from_slice(&xor_keystream(secret, &nonce, data));
                let mac = blob_mac(secret, &nonce, &out[16..]);
                out.extend_from_slice(&mac);
                out
            }
            BackendKeys::Paillier { keypair, .. } => {
                let chunk = keypair.plaintext_chunk_bytes();
                let mut out = (data.len() as u64).to_le_bytes().to_vec();
                for part in data.chunks(chunk.max(1)) {
                    let m = BigUint::from_bytes_be(part);
                    let mut r_bytes = vec![0u8; keypair.modulus_bits / 8];
                    rng.fill_bytes(&mut r_bytes);
                    let mut r = BigUint::from_bytes_be(&r_bytes) % &keypair.n;
                    if r.is_zero() {
                        r = BigUint::one();
                    }
                    let c = keypair.encrypt_with_r(&m, &r);
                    out.extend_from_slice(&keypair.ciphertext_to_bytes(&c));
                }
                out
            }
        }
    }

    pub fn decrypt_blob(&self, blob: &[u8]) -> Result<Vec<u8>> {
        self.decrypt_calls.fetch_add(1, Ordering::Relaxed);
        match &self.backend {
            BackendKeys::Mock { secret } => {
                if blob.len() < 32 {
                    return Err(Error::Integrity("blob too short".into()));
                }
                let nonce: [u8; 16] = blob[..16].try_into().unwrap();
                let (ct, mac) = blob[16..].split_at(blob.len() - 32);
                if blob_mac(secret, &nonce, ct) != mac {
                    return Err(Error::Integrity("blob authentication failed".into()));
                }
                Ok(xor_keystream(secret, &nonce, ct))
            }
            BackendKeys::Paillier { keypair, .. } => {
                if blob.len() < 8 {
                    return Err(Error::Integrity("blob too short".into()));
                }
                let total = u64::from_le_bytes(blob[..8].try_into().unwrap()) as usize;
                let chunk = keypair.plaintext_chunk_bytes().max(1);
                let width = keypair.ciphertext_width();
                let body = &blob[8..];
                if body.len() % width != 0 || body.len() / width != total.div_ceil(chunk) {
                    return Err(Error::Integrity("blob framing invalid".into()));
                }
                let mut out = Vec::with_capacity(total);
                let mut remaining = total;
                for part in body.chunks(width) {
                    let c = keypair.ciphertext_from_bytes(part)?;
                    let m = keypair.decrypt(&c)?;
                    let want = remaining.min(chunk);
                    let raw = m.to_bytes_be();
                    if raw.len() > want {
                        return Err(Error::Integrity("blob chunk overflow".into()));
                    }
                    let mut padded = vec![0u8; want - raw.len()];
                    padded.extend_from_slice(&raw);
                    out.extend_from_slice(&padded);
                    remaining -= want;
                }
                Ok(out)
            }
        }
    }
}

fn xor_keystream(secret: &[u8; 32], nonce: &[u8; 16], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len());
    for (i, block) in data.chunks(32).enumerate() {
        let mut h = Sha256::new();
        h.update(secret);
        h.update(b"blob-stream");
        h.update(nonce);
        h.update((i as u64).to_le_bytes());
        let ks = h.finalize();
        out.extend(block.iter().zip(ks.iter()).map(|(a, b)| a ^ b));
    }
    out
}

fn blob_mac(secret: &[u8; 32], nonce: &[u8; 16], ct: &[u8]) -> [u8; 16] {
    let mut h = Sha256::new();
    h.update(secret);
    h.update(b"blob-mac");
    h.update(nonce);
    h.update(ct);
    h.finalize()[..16].try_into().unwrap()
}

/// l position-bound ciphertext tags of the permuted fingerprint bits,
/// stored contiguously at fixed tag width.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncryptedFingerprint {
    tag_width: usize,
    data: Vec<u8>,
}

impl EncryptedFingerprint {
    pub fn len(&self) -> usize {
        self.data.len() / self.tag_width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tag_width(&self) -> usize {
        self.tag_width
    }

    pub fn tag(&self, k: usize) -> &[u8] {
        &self.data[k * self.tag_width..(k + 1) * self.tag_width]
    }

    pub fn tags(&self) -> impl Iterator<Item = &[u8]> + '_ {
        self.data.chunks(self.tag_width)
    }

    /// Digest of the full tag sequence; equality of digests stands in for
    /// tag-by-tag equality in database lookups.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.tag_width as u64).to_le_bytes());
        h.update(&self.data);
        h.finalize().into()
    }
}

/// Eq. of the distribution protocol: permute the fingerprint with sigma,
/// then encrypt each bit position-bound.
pub fn encrypt_fingerprint(
    f: &Fingerprint,
    sigma: &PermutationKey,
    keys: &AuthorityKeyMaterial,
) -> Result<EncryptedFingerprint> {
    if f.total_bits() != keys.bit_length || sigma.len() != keys.bit_length {
        return Err(Error::parameter("fingerprint", "length does not match key material"));
    }
    let permuted = sigma.permute_bits(f.bits())?;
    let tag_width = keys.tag_width();
    let chunks: Vec<Vec<u8>> =
        maybe_par_map(0..keys.bit_length, |k| {
            keys.encrypt_bit(permuted.get(k), k).expect("position in range")
        });
    let mut data = Vec::with_capacity(tag_width * keys.bit_length);
    for c in chunks {
        data.extend_from_slice(&c);
    }
    Ok(EncryptedFingerprint { tag_width, data })
}

/// Full inverse of `encrypt_fingerprint`.
pub fn decrypt_fingerprint(
    enc: &EncryptedFingerprint,
    sigma: &PermutationKey,
    keys: &AuthorityKeyMaterial,
    num_segments: usize,
    segment_length: usize,
) -> Result<Fingerprint> {
    if enc.len() != keys.bit_length {
        return Err(Error::parameter("enc", "length does not match key material"));
    }
    let mut permuted = BitString::zeros(keys.bit_length);
    for k in 0..keys.bit_length {
        permuted.set(k, keys.decrypt_bit(enc.tag(k), k)?);
    }
    let bits = sigma.inverse_permute_bits(&permuted)?;
    Fingerprint::from_bits(bits, num_segments, segment_length)
}

/// Proxy-side encryption of a group of per-segment ciphertexts for
/// forwarding to the authority.
pub fn encrypt_segment_group(
    segment_ciphertexts: &[Vec<u8>],
    keys: &AuthorityKeyMaterial,
    rng: &mut impl Rng,
) -> Vec<u8> {
    let mut plain = (segment_ciphertexts.len() as u32).to_le_bytes().to_vec();
    for ct in segment_ciphertexts {
        plain.extend_from_slice(&(ct.len() as u32).to_le_bytes());
        plain.extend_from_slice(ct);
    }
    keys.encrypt_blob(&plain, rng)
}

/// Authority-side inverse: recovers the per-segment ciphertexts.
pub fn decrypt_segment_group(
    group: &[u8],
    keys: &AuthorityKeyMaterial,
) -> Result<Vec<Vec<u8>>> {
    let plain = keys.decrypt_blob(group)?;
    if plain.len() < 4 {
        return Err(Error::Integrity("segment group truncated".into()));
    }
    let count = u32::from_le_bytes(plain[..4].try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(count);
    let mut pos = 4;
    for _ in 0..count {
        if pos + 4 > plain.len() {
            return Err(Error::Integrity("segment group framing invalid".into()));
        }
        let len = u32::from_le_bytes(plain[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4;
        if pos + len > plain.len() {
            return Err(Error::Integrity("segment group framing invalid".into()));
        }
        out.push(plain[pos..pos + len].to_vec());
        pos += len;
    }
    if pos != plain.len() {
        return Err(Error::Integrity("segment group has trailing bytes".into()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Key file: versioned serialized generation inputs (secrets file).
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
pub struct KeyFile {
    pub version: u16,
    pub security: SecurityLevel,
    pub bit_length: usize,
    pub content_binding: String,
    pub key_seed: u64,
}

impl KeyFile {
    pub const VERSION: u16 = 1;

    pub fn new(security: SecurityLevel, bit_length: usize, content_binding: &str, key_seed: u64) -> Self {
        KeyFile {
            version: Self::VERSION,
            security,
            bit_length,
            content_binding: content_binding.to_string(),
            key_seed,
        }
    }

    /// Re-derives the full key material and permutation from the stored
    /// generation seed.
    pub fn materialize(&self) -> Result<(AuthorityKeyMaterial, PermutationKey)> {
        if self.version != Self::VERSION {
            return Err(Error::Integrity(format!("unsupported key file version {}", self.version)));
        }
        generate_keys(self.bit_length, self.security, self.key_seed, &self.content_binding)
    }
}
