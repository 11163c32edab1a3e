//! Property tests for the invariants that hold for *every* input, not
//! just the acceptance drill's sampled ones.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use recofp::attacks::{average_attack, max_attack, min_attack, verify_marking_assumption};
use recofp::bits::BitString;
use recofp::code::cleartext_score;
use recofp::crypto::{encrypt_fingerprint, generate_keys, SecurityLevel};
use recofp::fingerprint::{random_parent_assignment, recombine, Fingerprint};
use recofp::tracing::encrypted_domain_score;

fn coalition_strategy(l: usize, q: usize) -> impl Strategy<Value = Vec<Vec<bool>>> {
    prop::collection::vec(prop::collection::vec(any::<bool>(), l), q)
}

fn to_fps(raw: &[Vec<bool>], n_s: usize, l0: usize) -> Vec<Fingerprint> {
    raw.iter()
        .map(|bits| {
            let bs = BitString::from_fn(bits.len(), |j| bits[j]);
            Fingerprint::from_bits(bs, n_s, l0).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The encrypted-domain score never depends on which permutation the
    /// authority drew, and always equals the cleartext oracle exactly.
    #[test]
    fn score_is_permutation_invariant_and_matches_oracle(
        seed in any::<u64>(),
        l in 16usize..200,
    ) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..l).map(|_| rng.gen_range(0.05..0.95)).collect();
        let a = BitString::from_fn(l, |j| rng.gen::<f64>() < p[j]);
        let b = BitString::from_fn(l, |j| rng.gen::<f64>() < p[j]);
        let oracle = cleartext_score(&a, &b, &p).unwrap();
        for kseed in [seed ^ 1, seed ^ 2] {
            let (keys, sigma) = generate_keys(l, SecurityLevel::Mock, kseed, "prop").unwrap();
            let fa = Fingerprint::from_bits(a.clone(), 1, l).unwrap();
            let fb = Fingerprint::from_bits(b.clone(), 1, l).unwrap();
            let ea = encrypt_fingerprint(&fa, &sigma, &keys).unwrap();
            let eb = encrypt_fingerprint(&fb, &sigma, &keys).unwrap();
            let s = encrypted_domain_score(&a, &ea, &eb, &p, &sigma).unwrap();
            prop_assert_eq!(s.to_bits(), oracle.to_bits());
        }
    }

    /// All three attacks respect the marking assumption by construction.
    #[test]
    fn attacks_respect_marking_assumption(
        raw in coalition_strategy(96, 4),
        tie_seed in any::<u64>(),
    ) {
        let fps = to_fps(&raw, 8, 12);
        let refs: Vec<&Fingerprint> = fps.iter().collect();
        let (avg, _) = average_attack(&refs, tie_seed).unwrap();
        for colluded in [avg, min_attack(&refs).unwrap(), max_attack(&refs).unwrap()] {
            let (holds, violations) = verify_marking_assumption(&colluded, &refs).unwrap();
            prop_assert!(holds, "violations at {:?}", violations);
        }
    }

    /// min <= average <= max, bitwise.
    #[test]
    fn attack_outputs_are_ordered(
        raw in coalition_strategy(64, 3),
        tie_seed in any::<u64>(),
    ) {
        let fps = to_fps(&raw, 4, 16);
        let refs: Vec<&Fingerprint> = fps.iter().collect();
        let lo = min_attack(&refs).unwrap();
        let (mid, _) = average_attack(&refs, tie_seed).unwrap();
        let hi = max_attack(&refs).unwrap();
        for j in 0..lo.len() {
            prop_assert!(lo.get(j) <= mid.get(j));
            prop_assert!(mid.get(j) <= hi.get(j));
        }
    }

    /// Every segment of a recombined fingerprint is one of the parents'
    /// segments, verbatim (closure under recombination).
    #[test]
    fn recombination_is_segmentwise_closed(
        raw in coalition_strategy(120, 3),
        seed in any::<u64>(),
    ) {
        let (n_s, l0) = (10, 12);
        let fps = to_fps(&raw, n_s, l0);
        let refs: Vec<&Fingerprint> = fps.iter().collect();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let assignment = random_parent_assignment(refs.len(), n_s, &mut rng).unwrap();
        let child = recombine(&refs, &assignment).unwrap();
        for s in 0..n_s {
            let seg = child.segment(s);
            prop_assert!(
                refs.iter().any(|f| f.segment(s) == seg),
                "segment {} matches no parent", s
            );
        }
    }

    /// Packed byte round-trip preserves every bit at every length.
    #[test]
    fn bitstring_bytes_roundtrip(bits in prop::collection::vec(any::<bool>(), 1..300)) {
        let bs = BitString::from_fn(bits.len(), |j| bits[j]);
        let back = BitString::from_bytes(bs.len(), &bs.to_bytes()).unwrap();
        prop_assert_eq!(&bs, &back);
        for (j, &b) in bits.iter().enumerate() {
            prop_assert_eq!(bs.get(j), b);
        }
    }

    /// Encrypting under two different keys never yields the same tags
    /// (tags are key-bound), but decrypting recovers the fingerprint.
    #[test]
    fn encryption_roundtrip_and_key_binding(
        raw in prop::collection::vec(any::<bool>(), 32..128),
        seed in any::<u64>(),
    ) {
        let l = raw.len();
        let bs = BitString::from_fn(l, |j| raw[j]);
        let fp = Fingerprint::from_bits(bs, 1, l).unwrap();
        let (k1, s1) = generate_keys(l, SecurityLevel::Mock, seed, "p1").unwrap();
        let (k2, _) = generate_keys(l, SecurityLevel::Mock, seed ^ 0xdead, "p2").unwrap();
        let e1 = encrypt_fingerprint(&fp, &s1, &k1).unwrap();
        let e2 = encrypt_fingerprint(&fp, &s1, &k2).unwrap();
        let back = recofp::crypto::decrypt_fingerprint(&e1, &s1, &k1, 1, l).unwrap();
        prop_assert_eq!(back.bits(), fp.bits());
        prop_assert!((0..l).any(|k| e1.tag(k) != e2.tag(k)));
    }
}
