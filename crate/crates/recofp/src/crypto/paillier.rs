//! Minimal Paillier cryptosystem over num-bigint, with externally supplied
//! randomness so that per-position encryption can be made deterministic.

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaillierKeypair {
    pub modulus_bits: usize,
    #[serde(with = "biguint_hex")]
    pub n: BigUint,
    #[serde(with = "biguint_hex")]
    pub n_squared: BigUint,
    #[serde(with = "biguint_hex")]
    lambda: BigUint,
    #[serde(with = "biguint_hex")]
    mu: BigUint,
}

mod biguint_hex {
    use num_bigint::BigUint;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_str_radix(16))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let s = String::deserialize(d)?;
        BigUint::parse_bytes(s.as_bytes(), 16).ok_or_else(|| serde::de::Error::custom("bad hex"))
    }
}

impl PaillierKeypair {
    /// Generates an n of roughly `modulus_bits` bits from two random primes.
    pub fn generate(modulus_bits: usize, rng: &mut impl Rng) -> Result<Self> {
        if modulus_bits < 64 {
            return Err(Error::parameter("modulus_bits", "too small"));
        }
        let half = modulus_bits / 2;
        let p = gen_prime(half, rng);
        let q = loop {
            let c = gen_prime(half, rng);
            if c != p {
                break c;
            }
        };
        let n = &p * &q;
        let n_squared = &n * &n;
        let one = BigUint::one();
        let lambda = (&p - &one).lcm(&(&q - &one));
        // With g = n+1: L(g^lambda mod n^2) = lambda mod n, so mu = lambda^-1 mod n.
        let mu = modinv(&(&lambda % &n), &n)
            .ok_or_else(|| Error::Integrity("lambda not invertible mod n".into()))?;
        Ok(PaillierKeypair { modulus_bits, n, n_squared, lambda, mu })
    }

    /// c = (1 + m*n) * r^n mod n^2, with caller-chosen randomness r.
    pub fn encrypt_with_r(&self, m: &BigUint, r: &BigUint) -> BigUint {
        let rn = r.modpow(&self.n, &self.n_squared);
        self.encrypt_with_rn(m, &rn)
    }

    /// Same, with r^n mod n^2 precomputed.
    pub fn encrypt_with_rn(&self, m: &BigUint, rn: &BigUint) -> BigUint {
        let gm = (BigUint::one() + m * &self.n) % &self.n_squared;
        (gm * rn) % &self.n_squared
    }

    pub fn decrypt(&self, c: &BigUint) -> Result<BigUint> {
        if c.is_zero() || c >= &self.n_squared {
            return Err(Error::Integrity("ciphertext out of range".into()));
        }
        let x = c.modpow(&self.lambda, &self.n_squared);
        let l = (&x - BigUint::one()) / &self.n;
        Ok((l * &self.mu) % &self.n)
    }

    /// Fixed-width big-endian encoding of a ciphertext (n^2 width).
    pub fn ciphertext_width(&self) -> usize {
        (2 * self.modulus_bits).div_ceil(8)
    }

    pub fn ciphertext_to_bytes(&self, c: &BigUint) -> Vec<u8> {
        let mut out = vec![0u8; self.ciphertext_width()];
        let raw = c.to_bytes_be();
        out[self.ciphertext_width() - raw.len()..].copy_from_slice(&raw);
        out
    }

    pub fn ciphertext_from_bytes(&self, bytes: &[u8]) -> Result<BigUint> {
        if bytes.len() != self.ciphertext_width() {
            return Err(Error::Integrity("ciphertext width mismatch".into()));
        }
        Ok(BigUint::from_bytes_be(bytes))
    }

    /// Largest plaintext chunk (in bytes) guaranteed below n.
    pub fn plaintext_chunk_bytes(&self) -> usize {
        self.modulus_bits / 8 - 1
    }
}

fn modinv(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    // Extended Euclid over signed arithmetic.
    use num_bigint::BigInt;
    let (mut old_r, mut r) = (BigInt::from(a.clone()), BigInt::from(m.clone()));
    let (mut old_s, mut s) = (BigInt::one(), BigInt::zero());
    while !r.is_zero() {
        let q = &old_r / &r;
        let tmp = &old_r - &q * &r;
        old_r = std::mem::replace(&mut r, tmp);
        let tmp = &old_s - &q * &s;
        old_s = std::mem::replace(&mut s, tmp);
    }
    if !old_r.is_one() {
        return None;
    }
    let m_int = BigInt::from(m.clone());
    let inv = ((old_s % &m_int) + &m_int) % &m_int;
    inv.to_biguint()
}

fn gen_prime(bits: usize, rng: &mut impl Rng) -> BigUint {
    loop {
        let mut bytes = vec![0u8; bits.div_ceil(8)];
        rng.fill_bytes(&mut bytes);
        let mut c = BigUint::from_bytes_be(&bytes);
        c |= BigUint::one() << (bits - 1); // top bit
        c |= BigUint::one(); // odd
        c &= (BigUint::one() << bits) - BigUint::one();
        if is_probable_prime(&c, rng) {
            return c;
        }
    }
}

const SMALL_PRIMES: [u32; 15] = [3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn is_probable_prime(n: &BigUint, rng: &mut impl Rng) -> bool {
    for &sp in &SMALL_PRIMES {
        let sp = BigUint::from(sp);
        if n == &sp {
            return true;
        }
        if (n % &sp).is_zero() {
            return false;
        }
    }
    // Miller-Rabin, 32 random bases.
    let one = BigUint::one();
    let two = BigUint::from(2u32);
    let n_minus_1 = n - &one;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    'witness: for _ in 0..32 {
        let mut bytes = vec![0u8; (n.bits() as usize).div_ceil(8)];
        rng.fill_bytes(&mut bytes);
        let a = BigUint::from_bytes_be(&bytes) % (n - &two - &one) + &two;
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_1 {
            continue;
        }
        for _ in 0..s - 1 {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}
