//! Traitor tracing: exact lookup for single re-distributors and the
//! two-party encrypted-domain scoring protocol for collusions — the
//! monitor compares ciphertext tags (Algorithm 1), the authority turns
//! the comparison vectors into scores with the permutation key and the
//! traced fingerprint (Algorithm 2).
//!
//! Per-buyer score terms are accumulated in unpermuted index order, which
//! makes the encrypted-domain score bit-identical to the cleartext oracle
//! and independent of the permutation key.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::code::{cleartext_score, phi};
use crate::crypto::{encrypt_fingerprint, AuthorityKeyMaterial, EncryptedFingerprint, PermutationKey};
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::simnet::Simulation;

/// Monitor-side output of Algorithm 1 for one tested buyer: weight
/// vectors (unpermuted index space, shared across buyers) and the
/// equality encodings D0/D1 (permuted index space).
#[derive(Debug, Clone)]
pub struct TracingVectors {
    pub omega1: Vec<f64>,
    pub omega2: Vec<f64>,
    pub d0: Vec<i8>,
    pub d1: Vec<i8>,
}

/// Algorithm 1: tag-wise comparison of the traced and tested encrypted
/// fingerprints. Never decrypts; only tag equality is used.
pub fn mo_tracing_vectors(
    enc_traced: &EncryptedFingerprint,
    enc_tested: &EncryptedFingerprint,
    p: &[f64],
) -> Result<TracingVectors> {
    let l = p.len();
    if enc_traced.len() != l || enc_tested.len() != l {
        return Err(Error::parameter("fingerprints", "length mismatch with bias"));
    }
    let mut omega1 = Vec::with_capacity(l);
    let mut omega2 = Vec::with_capacity(l);
    for &pk in p {
        omega1.push(phi(1.0 - pk)?);
        omega2.push(phi(pk)?);
    }
    let mut d0 = Vec::with_capacity(l);
    let mut d1 = Vec::with_capacity(l);
    for k in 0..l {
        if enc_traced.tag(k) == enc_tested.tag(k) {
            d0.push(1);
            d1.push(2);
        } else {
            d0.push(-2);
            d1.push(-1);
        }
    }
    Ok(TracingVectors { omega1, omega2, d0, d1 })
}

#[inline]
fn sign(x: i8) -> f64 {
    if x >= 0 { 1.0 } else { -1.0 }
}

/// Algorithm 2: the authority permutes the weights, selects D0 or D1 by
/// the traced bit, and averages the per-bit scores.
///
/// The sum runs over original positions j (permuted position k =
/// sigma^-1(j)); the traced bit selecting D_j at permuted position k is
/// sigma(f')^(k) = f'^(j), so every term can be formed in unpermuted
/// order. This is the same mathematical sum as iterating k directly, in
/// an order that matches the cleartext oracle exactly.
pub fn ta_score(
    vectors: &TracingVectors,
    traced: &BitString,
    sigma: &PermutationKey,
) -> Result<f64> {
    let l = traced.len();
    if vectors.omega1.len() != l || vectors.d0.len() != l || sigma.len() != l {
        return Err(Error::parameter("vectors", "length mismatch"));
    }
    // W1 = sigma(omega1), W2 = sigma(omega2): W1^(k) = omega1^(sigma(k)),
    // so at k = dest_of(j) the weights are omega1^(j), omega2^(j).
    let mut sum = 0.0f64;
    for j in 0..l {
        let k = sigma.dest_of(j);
        let d = if traced.get(j) { vectors.d1[k] } else { vectors.d0[k] };
        let w = match d.abs() {
            1 => vectors.omega1[j],
            2 => vectors.omega2[j],
            _ => return Err(Error::Integrity("D entry outside {±1,±2}".into())),
        };
        sum += sign(d) * w;
    }
    Ok(sum / l as f64)
}

/// Full encrypted-domain score for one tested buyer, composing
/// Algorithms 1 and 2 exactly as Protocol 4 does.
pub fn encrypted_domain_score(
    traced: &BitString,
    enc_traced: &EncryptedFingerprint,
    enc_tested: &EncryptedFingerprint,
    p: &[f64],
    sigma: &PermutationKey,
) -> Result<f64> {
    let v = mo_tracing_vectors(enc_traced, enc_tested, p)?;
    ta_score(&v, traced, sigma)
}

// ---------------------------------------------------------------------------
// Protocol 3
// ---------------------------------------------------------------------------

/// Basic tracing without collusion: re-encrypt f' and search the
/// transaction database for the exact tag sequence.
pub fn trace_exact(
    redistributed: &Fingerprint,
    keys: &AuthorityKeyMaterial,
    sigma: &PermutationKey,
    sim: &Simulation,
) -> Result<Option<String>> {
    let enc = encrypt_fingerprint(redistributed, sigma, keys)?;
    Ok(sim.monitor.exact_lookup(&enc).map(|s| s.to_string()))
}

// ---------------------------------------------------------------------------
// Protocol 4
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuyerScore {
    pub register_index: usize,
    pub buyer_index: usize,
    pub pseudonym: String,
    pub score: f64,
    pub accused: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    pub threshold: f64,
    pub scores: Vec<BuyerScore>,
    pub accused: Vec<String>,
    pub max_accused: Option<f64>,
    pub min_accused: Option<f64>,
    pub max_innocent: Option<f64>,
    pub min_innocent: Option<f64>,
    /// Empty accused set: tracing failed to identify any colluder.
    pub tracing_failure: bool,
}

/// Buyer score as reported by Protocol 4: the bitwise mean scaled back to
/// per-segment units (sum of bitwise scores divided by the segment
/// length l0), matching the magnitude of the published score plots
/// (colluders near 16 at default parameters).
pub fn report_scale(mean_score: f64, num_segments: usize) -> f64 {
    mean_score * num_segments as f64
}

/// Fast equivalent of the Algorithm 1 + Algorithm 2 composition for one
/// register, using the monitor's packed tag classes. Produces the exact
/// same term sequence in the exact same order as `encrypted_domain_score`
/// (validated by tests), at packed-bit speed.
fn score_register_fast(
    traced: &BitString,
    traced_classes: &BitString,
    traced_known: &BitString,
    register_classes: &BitString,
    plus: &[f64],
    minus: &[f64],
    sigma: &PermutationKey,
) -> f64 {
    let l = traced.len();
    let mut sum = 0.0f64;
    for j in 0..l {
        let k = sigma.dest_of(j);
        let eq = traced_known.get(k) && traced_classes.get(k) == register_classes.get(k);
        sum += if eq { plus[j] } else { minus[j] };
    }
    sum / l as f64
}

/// Scores every register against the colluded fingerprint; `parallel`
/// selects the rayon worker pool (only available when the crate is built
/// with the `parallel` feature; otherwise the sequential path runs).
/// Both paths produce bit-identical scores — the bench suite compares
/// their throughput.
pub fn register_scores(colluded: &BitString, sim: &Simulation, parallel: bool) -> Result<Vec<f64>> {
    let l = sim.code.total_bits();
    if colluded.len() != l {
        return Err(Error::parameter("colluded", "length mismatch"));
    }
    let p = sim.code.concatenated_bias();
    let n_s = sim.code.num_segments();

    // T_A side: encrypt the traced fingerprint and precompute the two
    // possible per-position terms, in unpermuted order.
    let traced_fp = Fingerprint::from_bits(colluded.clone(), n_s, sim.code.segment_length())?;
    let enc_traced = encrypt_fingerprint(&traced_fp, &sim.sigma, &sim.keys)?;
    let mut plus = Vec::with_capacity(l);
    let mut minus = Vec::with_capacity(l);
    for j in 0..l {
        let (w1, w2) = (phi(1.0 - p[j])?, phi(p[j])?);
        if colluded.get(j) {
            plus.push(w2);
            minus.push(-w1);
        } else {
            plus.push(w1);
            minus.push(-w2);
        }
    }

    // MO side: classify the traced tags against the registration-time
    // dictionary (pure tag comparisons).
    let (traced_classes, traced_known) = sim.monitor.tag_dict.classify(&enc_traced);

    let score_one = |reg: &crate::simnet::TransactionRegister| -> f64 {
        let mean = score_register_fast(
            colluded,
            &traced_classes,
            &traced_known,
            &reg.classes,
            &plus,
            &minus,
            &sim.sigma,
        );
        report_scale(mean, n_s)
    };

    #[cfg(feature = "parallel")]
    let raw: Vec<f64> = if parallel {
        sim.monitor.registers.par_iter().map(score_one).collect()
    } else {
        sim.monitor.registers.iter().map(score_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let raw: Vec<f64> = {
        let _ = parallel;
        sim.monitor.registers.iter().map(score_one).collect()
    };
    Ok(raw)
}

/// Protocol 4: score every non-seed register against the colluded
/// fingerprint and accuse those above the threshold. No stored
/// fingerprint is decrypted; the monitor side works on tag classes only.
pub fn trace_colluders(
    colluded: &BitString,
    sim: &Simulation,
    threshold: f64,
) -> Result<ScoreReport> {
    if threshold <= 0.0 {
        return Err(Error::parameter("threshold", "must be positive"));
    }
    let raw = register_scores(colluded, sim, cfg!(feature = "parallel"))?;
    let mut scores = Vec::with_capacity(raw.len());
    let mut accused = Vec::new();
    for (i, (reg, &s)) in sim.monitor.registers.iter().zip(&raw).enumerate() {
        let is_accused = s > threshold;
        if is_accused {
            accused.push(reg.pseudonym.clone());
        }
        scores.push(BuyerScore {
            register_index: i,
            buyer_index: reg.buyer_index,
            pseudonym: reg.pseudonym.clone(),
            score: s,
            accused: is_accused,
        });
    }
    let acc: Vec<f64> = scores.iter().filter(|s| s.accused).map(|s| s.score).collect();
    let inn: Vec<f64> = scores.iter().filter(|s| !s.accused).map(|s| s.score).collect();
    let fold = |v: &[f64], max: bool| -> Option<f64> {
        v.iter().copied().reduce(|a, b| if (b > a) == max { b } else { a })
    };
    Ok(ScoreReport {
        threshold,
        tracing_failure: accused.is_empty(),
        accused,
        max_accused: fold(&acc, true),
        min_accused: fold(&acc, false),
        max_innocent: fold(&inn, true),
        min_innocent: fold(&inn, false),
        scores,
    })
}

/// Global threshold from the expected colluder score.
pub fn calibrate_threshold(ta: f64) -> Result<f64> {
    if ta <= 0.0 {
        return Err(Error::parameter("ta", "expected colluder score must be positive"));
    }
    Ok(0.75 * ta)
}

/// Reference cleartext score at report scale, for oracles and analysis.
pub fn cleartext_report_score(
    traced: &BitString,
    tested: &BitString,
    p: &[f64],
    num_segments: usize,
) -> Result<f64> {
    Ok(report_scale(cleartext_score(traced, tested, p)?, num_segments))
}

/// CSV export of a score report: fixed column order, one row per buyer.
pub fn write_score_csv<W: std::io::Write>(report: &ScoreReport, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["buyer_index", "pseudonym", "score", "accused"])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for s in &report.scores {
        wtr.write_record([
            s.buyer_index.to_string(),
            s.pseudonym.clone(),
            format!("{:.12}", s.score),
            (s.accused as u8).to_string(),
        ])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::{sample_bias_vector, CodeParameters, FullCode};
    use crate::crypto::{generate_keys, SecurityLevel};
    use crate::simnet::{SimConfig, Simulation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_case(seed: u64, l: usize) -> (BitString, BitString, Vec<f64>) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..l).map(|_| rng.gen_range(0.05..0.95)).collect();
        let a = BitString::from_fn(l, |j| rng.gen::<f64>() < p[j]);
        let b = BitString::from_fn(l, |j| rng.gen::<f64>() < p[j]);
        (a, b, p)
    }

    fn encrypted_pair(
        a: &BitString,
        b: &BitString,
        seed: u64,
    ) -> (EncryptedFingerprint, EncryptedFingerprint, PermutationKey, AuthorityKeyMaterial) {
        let l = a.len();
        let (keys, sigma) = generate_keys(l, SecurityLevel::Mock, seed, "t").unwrap();
        let fa = Fingerprint::from_bits(a.clone(), 1, l).unwrap();
        let fb = Fingerprint::from_bits(b.clone(), 1, l).unwrap();
        let ea = encrypt_fingerprint(&fa, &sigma, &keys).unwrap();
        let eb = encrypt_fingerprint(&fb, &sigma, &keys).unwrap();
        (ea, eb, sigma, keys)
    }

    #[test]
    fn identical_fingerprints_all_equal_branch() {
        let (a, _, p) = random_case(1, 64);
        let (ea, _, sigma, _) = encrypted_pair(&a, &a, 9);
        let v = mo_tracing_vectors(&ea, &ea, &p).unwrap();
        assert!(v.d0.iter().all(|&d| d == 1) && v.d1.iter().all(|&d| d == 2));
        let s = ta_score(&v, &a, &sigma).unwrap();
        assert!(s > 0.0);
    }

    #[test]
    fn uniform_bias_extremes() {
        let l = 32;
        let p = vec![0.5; l];
        let a = BitString::from_fn(l, |j| j % 3 == 0);
        let comp = BitString::from_fn(l, |j| !a.get(j));
        let (ea, eb, sigma, _) = encrypted_pair(&a, &a, 5);
        let v = mo_tracing_vectors(&ea, &eb, &p).unwrap();
        assert!((ta_score(&v, &a, &sigma).unwrap() - 1.0).abs() < 1e-12);
        let (ea2, ec, sigma2, _) = encrypted_pair(&a, &comp, 6);
        let v2 = mo_tracing_vectors(&ea2, &ec, &p).unwrap();
        assert!((ta_score(&v2, &a, &sigma2).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_equivalence_exact_many() {
        for seed in 0..200 {
            let (a, b, p) = random_case(seed, 197);
            let (ea, eb, sigma, _) = encrypted_pair(&a, &b, seed ^ 0x55);
            let s = encrypted_domain_score(&a, &ea, &eb, &p, &sigma).unwrap();
            let oracle = cleartext_score(&a, &b, &p).unwrap();
            assert_eq!(s.to_bits(), oracle.to_bits(), "seed {seed}");
        }
    }

    #[test]
    fn permutation_invariance_exact() {
        let (a, b, p) = random_case(77, 256);
        let mut last: Option<u64> = None;
        for seed in [1u64, 2, 3, 4] {
            let (ea, eb, sigma, _) = encrypted_pair(&a, &b, seed);
            let s = encrypted_domain_score(&a, &ea, &eb, &p, &sigma).unwrap();
            if let Some(prev) = last {
                assert_eq!(prev, s.to_bits());
            }
            last = Some(s.to_bits());
        }
    }

    fn sim_with_population(seed: u64) -> Simulation {
        let params = CodeParameters { codeword_length: 256, ..CodeParameters::defaults() };
        let code = FullCode::generate(&params, 16, false, seed ^ 0x7e).unwrap();
        let config = SimConfig {
            num_segments: 16,
            set_size: 4,
            parents_min: 2,
            parents_max: 4,
            security: SecurityLevel::Mock,
        };
        let mut sim = Simulation::bootstrap(code, config, seed).unwrap();
        sim.grow_population(4).unwrap();
        sim
    }

    #[test]
    fn fast_path_matches_literal_pipeline() {
        let sim = sim_with_population(11);
        let p = sim.code.concatenated_bias();
        let victim = &sim.buyers[30];
        let traced = victim.fingerprint.bits().clone();
        let report = trace_colluders(&traced, &sim, 1.0).unwrap();
        let enc_traced = encrypt_fingerprint(&victim.fingerprint, &sim.sigma, &sim.keys).unwrap();
        for reg in sim.monitor.registers.iter().take(20) {
            let tested = &sim.buyers[reg.buyer_index].fingerprint;
            let enc_tested = encrypt_fingerprint(tested, &sim.sigma, &sim.keys).unwrap();
            let literal =
                encrypted_domain_score(&traced, &enc_traced, &enc_tested, &p, &sim.sigma).unwrap();
            let fast = report.scores[report
                .scores
                .iter()
                .position(|s| s.buyer_index == reg.buyer_index)
                .unwrap()]
            .score;
            let scaled = report_scale(literal, sim.code.num_segments());
            assert_eq!(fast.to_bits(), scaled.to_bits(), "buyer {}", reg.buyer_index);
        }
    }

    #[test]
    fn self_trace_scores_highest_and_exact_lookup_hits() {
        let mut max_idx = 0;
        let sim = sim_with_population(13);
        let victim = sim.buyers[25].clone();
        let found = trace_exact(&victim.fingerprint, &sim.keys, &sim.sigma, &sim).unwrap();
        assert_eq!(found.as_deref(), Some(victim.pseudonym.as_str()));
        let report = trace_colluders(victim.fingerprint.bits(), &sim, 1.0).unwrap();
        let mut best = f64::NEG_INFINITY;
        for s in &report.scores {
            if s.score > best {
                best = s.score;
                max_idx = s.buyer_index;
            }
        }
        assert_eq!(max_idx, victim.index);
    }

    #[test]
    fn seed_fingerprint_not_traceable_exactly() {
        let sim = sim_with_population(17);
        let seed_fp = sim.buyers[3].fingerprint.clone();
        assert!(trace_exact(&seed_fp, &sim.keys, &sim.sigma, &sim).unwrap().is_none());
    }

    #[test]
    fn no_decryption_during_tracing() {
        let sim = sim_with_population(19);
        let before = sim.keys.decrypt_calls();
        let traced = sim.buyers[20].fingerprint.bits().clone();
        let _ = trace_exact(&sim.buyers[20].fingerprint, &sim.keys, &sim.sigma, &sim).unwrap();
        let _ = trace_colluders(&traced, &sim, 12.0).unwrap();
        assert_eq!(sim.keys.decrypt_calls(), before);
    }

    #[test]
    fn threshold_above_all_scores_is_failure_value() {
        let sim = sim_with_population(23);
        let traced = sim.buyers[20].fingerprint.bits().clone();
        let report = trace_colluders(&traced, &sim, 1e6).unwrap();
        assert!(report.tracing_failure && report.accused.is_empty());
    }

    #[test]
    fn calibration() {
        assert_eq!(calibrate_threshold(16.0).unwrap(), 12.0);
        assert_eq!(calibrate_threshold(1.0).unwrap(), 0.75);
        assert!(calibrate_threshold(0.0).is_err());
    }

    #[test]
    fn bias_sampler_feeds_scoring() {
        let params = CodeParameters { codeword_length: 788, ..CodeParameters::defaults() };
        let bias = sample_bias_vector(&params, 3).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let a = BitString::from_fn(788, |j| rng.gen::<f64>() < bias.values()[j]);
        let b = BitString::from_fn(788, |j| rng.gen::<f64>() < bias.values()[j]);
        let (ea, eb, sigma, _) = encrypted_pair(&a, &b, 8);
        let s = encrypted_domain_score(&a, &ea, &eb, bias.values(), &sigma).unwrap();
        let oracle = cleartext_score(&a, &b, bias.values()).unwrap();
        assert_eq!(s.to_bits(), oracle.to_bits());
    }
}
