//! Segment-level bias-based anti-collusion codebooks and the bitwise
//! accusation weight function shared by cleartext and encrypted-domain
//! tracing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};

/// How per-position bias probabilities are drawn.
///
/// `DiscreteNuida` uses a finite support table loaded from a data file
/// (see `data/nuida_bias.json`). `ClippedArcsine` is the arcsine density
/// `1/(pi*sqrt(x(1-x)))` restricted to `[t, 1-t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BiasSpec {
    DiscreteNuida,
    ClippedArcsine { cutoff: f64 },
}

impl BiasSpec {
    /// Default arcsine cutoff for a given coalition bound.
    pub fn default_arcsine(c0: u32) -> Self {
        BiasSpec::ClippedArcsine { cutoff: 1.0 / (300.0 * c0 as f64) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeParameters {
    /// Maximum tolerated coalition size.
    pub c0: u32,
    /// Error probability bound of the code.
    pub epsilon: f64,
    /// Codewords per segment position (M).
    pub num_codewords: u32,
    /// Bits per segment (l0).
    pub codeword_length: u32,
    pub bias_spec: BiasSpec,
}

impl CodeParameters {
    /// Paper-scale defaults: M=10, c0=4, l0=788, epsilon=1e-3.
    pub fn defaults() -> Self {
        CodeParameters {
            c0: 4,
            epsilon: 1e-3,
            num_codewords: 10,
            codeword_length: 788,
            bias_spec: BiasSpec::DiscreteNuida,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c0 < 2 {
            return Err(Error::parameter("c0", "must be at least 2"));
        }
        if self.num_codewords <= self.c0 {
            return Err(Error::parameter("num_codewords", "M must exceed c0"));
        }
        if self.codeword_length == 0 {
            return Err(Error::parameter("codeword_length", "l0 must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::parameter("epsilon", "must lie in (0,1)"));
        }
        if let BiasSpec::ClippedArcsine { cutoff } = self.bias_spec {
            if !(cutoff >= 0.0 && cutoff < 0.5) {
                return Err(Error::parameter("bias_spec", "arcsine cutoff must lie in [0, 0.5)"));
            }
        }
        Ok(())
    }
}

/// Per-position bias probabilities, all strictly inside (0,1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVector {
    p: Vec<f64>,
}

impl BiasVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return Err(Error::parameter("bias", "entries must lie strictly in (0,1)"));
        }
        Ok(BiasVector { p })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }
}

/// Bias vector plus the M candidate codewords for one segment position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCodebook {
    pub bias: BiasVector,
    pub codewords: Vec<BitString>,
}

impl SegmentCodebook {
    pub fn num_codewords(&self) -> usize {
        self.codewords.len()
    }

    pub fn codeword_length(&self) -> usize {
        self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum CodebookLayout {
    Shared(SegmentCodebook),
    PerSegment(Vec<SegmentCodebook>),
}

/// The full anti-collusion code across all segment positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullCode {
    pub params: CodeParameters,
    num_segments: usize,
    layout: CodebookLayout,
}

impl FullCode {
    /// One codebook shared by every segment position.
    pub fn shared(params: CodeParameters, num_segments: usize, book: SegmentCodebook) -> Result<Self> {
        params.validate()?;
        if book.codeword_length() != params.codeword_length as usize
            || book.num_codewords() != params.num_codewords as usize
        {
            return Err(Error::parameter("codebook", "shape does not match parameters"));
        }
        Ok(FullCode { params, num_segments, layout: CodebookLayout::Shared(book) })
    }

    /// Independent codebook per segment position.
    pub fn per_segment(params: CodeParameters, books: Vec<SegmentCodebook>) -> Result<Self> {
        params.validate()?;
        for book in &books {
            if book.codeword_length() != params.codeword_length as usize
                || book.num_codewords() != params.num_codewords as usize
            {
                return Err(Error::parameter("codebook", "shape does not match parameters"));
            }
        }
        let num_segments = books.len();
        Ok(FullCode { params, num_segments, layout: CodebookLayout::PerSegment(books) })
    }

    /// Generates a code from parameters and a seed: one bias vector and
    /// codebook by default, or per-position books when requested.
    pub fn generate(
        params: &CodeParameters,
        num_segments: usize,
        per_position: bool,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        if per_position {
            let books = (0..num_segments)
                .map(|j| {
                    let bias = sample_bias_vector(params, seed ^ (j as u64).wrapping_mul(0x9e37_79b9))?;
                    generate_codebook(params, &bias, seed.wrapping_add(j as u64).wrapping_mul(2) + 1)
                })
                .collect::<Result<Vec<_>>>()?;
            FullCode::per_segment(params.clone(), books)
        } else {
            let bias = sample_bias_vector(params, seed)?;
            let book = generate_codebook(params, &bias, seed.wrapping_mul(2) + 1)?;
            FullCode::shared(params.clone(), num_segments, book)
        }
    }

    pub fn num_segments(&self) -> usize {
        self.num_segments
    }

    pub fn segment_length(&self) -> usize {
        self.params.codeword_length as usize
    }

    pub fn total_bits(&self) -> usize {
        self.num_segments * self.segment_length()
    }

    pub fn codebook(&self, segment: usize) -> &SegmentCodebook {
        match &self.layout {
            CodebookLayout::Shared(book) => book,
            CodebookLayout::PerSegment(books) => &books[segment],
        }
    }

    /// In-order concatenation of per-segment bias vectors, length l.
    pub fn concatenated_bias(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_bits());
        for j in 0..self.num_segments {
            out.extend_from_slice(self.codebook(j).bias.values());
        }
        out
    }
}

const NUIDA_TABLES: &str = include_str!("../data/nuida_bias.json");

#[derive(Deserialize)]
struct NuidaFile {
    tables: std::collections::BTreeMap<String, Vec<(f64, f64)>>,
}

/// Support/probability pairs of the discrete bias distribution covering
/// coalitions of size up to `c0`.
pub fn nuida_support(c0: u32) -> Result<Vec<(f64, f64)>> {
    let file: NuidaFile =
        serde_json::from_str(NUIDA_TABLES).map_err(|e| Error::Serde(e.to_string()))?;
    let mut keyed: Vec<(u32, Vec<(f64, f64)>)> = file
        .tables
        .into_iter()
        .map(|(k, v)| {
            let key = k.parse::<u32>().map_err(|_| Error::Serde(format!("bad table key {k}")))?;
            Ok((key, v))
        })
        .collect::<Result<Vec<_>>>()?;
    keyed.sort_by_key(|(k, _)| *k);
    keyed
        .into_iter()
        .find(|(k, _)| *k >= c0)
        .map(|(_, v)| v)
        .ok_or_else(|| Error::parameter("c0", format!("no discrete bias table covers c0={c0}")))
}

/// Draws the l0 per-position bias probabilities from the configured
/// distribution. Deterministic under a fixed seed.
pub fn sample_bias_vector(params: &CodeParameters, seed: u64) -> Result<BiasVector> {
    params.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let l0 = params.codeword_length as usize;
    let p = match params.bias_spec {
        BiasSpec::DiscreteNuida => {
            let support = nuida_support(params.c0)?;
            (0..l0)
                .map(|_| {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    for &(point, prob) in &support {
                        acc += prob;
                        if u < acc {
                            return point;
                        }
                    }
                    support.last().expect("non-empty support").0
                })
                .collect()
        }
        BiasSpec::ClippedArcsine { cutoff } => {
            // Inverse-CDF sampling: F(x) = (2/pi) asin(sqrt(x)).
            let lo = if cutoff > 0.0 { 2.0 / std::f64::consts::PI * cutoff.sqrt().asin() } else { 0.0 };
            let hi = 1.0 - lo;
            (0..l0)
                .map(|_| {
                    let u: f64 = rng.gen_range(lo..hi);
                    let x = (std::f64::consts::PI * u / 2.0).sin().powi(2);
                    x.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
                })
                .collect()
        }
    };
    BiasVector::new(p)
}

/// Samples the M codewords bit-by-bit with Pr[bit_k = 1] = p_k.
pub fn generate_codebook(
    params: &CodeParameters,
    bias: &BiasVector,
    seed: u64,
) -> Result<SegmentCodebook> {
    params.validate()?;
    let l0 = params.codeword_length as usize;
    if bias.len() != l0 {
        return Err(Error::parameter("bias", format!("length {} != l0 {}", bias.len(), l0)));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let codewords = (0..params.num_codewords)
        .map(|_| BitString::from_fn(l0, |k| rng.gen::<f64>() < bias.values()[k]))
        .collect();
    Ok(SegmentCodebook { bias: bias.clone(), codewords })
}

/// Accusation weight function: sqrt((1-x)/x), defined on (0,1).
pub fn phi(x: f64) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::parameter("x", format!("phi undefined at {x}")));
    }
    Ok(((1.0 - x) / x).sqrt())
}

/// Reference accusation score in the cleartext domain.
///
/// Per-bit contributions, summed in index order and divided by the length:
/// both bits 1 -> +phi(p), both 0 -> +phi(1-p), traced 1 vs tested 0 ->
/// -phi(1-p), traced 0 vs tested 1 -> -phi(p). The encrypted-domain
/// pipeline must reproduce this value bit-exactly.
pub fn cleartext_score(traced: &BitString, tested: &BitString, p: &[f64]) -> Result<f64> {
    Ok(cleartext_score_sum(traced, tested, p)? / traced.len() as f64)
}

/// Un-normalized in-order sum of per-bit accusation terms.
pub fn cleartext_score_sum(traced: &BitString, tested: &BitString, p: &[f64]) -> Result<f64> {
    if traced.len() != tested.len() || traced.len() != p.len() {
        return Err(Error::parameter(
            "length",
            format!("traced {} / tested {} / bias {}", traced.len(), tested.len(), p.len()),
        ));
    }
    let mut sum = 0.0;
    for k in 0..traced.len() {
        let w_one = phi(p[k])?;
        let w_zero = phi(1.0 - p[k])?;
        sum += match (traced.get(k), tested.get(k)) {
            (true, true) => w_one,
            (false, false) => w_zero,
            (true, false) => -w_zero,
            (false, true) => -w_one,
        };
    }
    Ok(sum)
}

// ---------------------------------------------------------------------------
// Codebook file format: versioned binary, byte-exact round trip.
// ---------------------------------------------------------------------------

const CODEBOOK_MAGIC: &[u8; 4] = b"RFCB";
const CODEBOOK_VERSION: u16 = 1;

impl FullCode {
    pub fn write_to(&self, w: &mut impl std::io::Write) -> Result<()> {
        w.write_all(CODEBOOK_MAGIC)?;
        w.write_all(&CODEBOOK_VERSION.to_le_bytes())?;
        let header = serde_json::to_vec(&self)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl std::io::Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CODEBOOK_MAGIC {
            return Err(Error::Integrity("not a codebook file".into()));
        }
        let mut ver = [0u8; 2];
        r.read_exact(&mut ver)?;
        if u16::from_le_bytes(ver) != CODEBOOK_VERSION {
            return Err(Error::Integrity(format!(
                "unsupported codebook version {}",
                u16::from_le_bytes(ver)
            )));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut buf = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut buf)?;
        let code: FullCode = serde_json::from_slice(&buf)?;
        code.params.validate()?;
        Ok(code)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(bias: BiasSpec) -> CodeParameters {
        CodeParameters { bias_spec: bias, ..CodeParameters::defaults() }
    }

    #[test]
    fn phi_values() {
        assert_eq!(phi(0.5).unwrap(), 1.0);
        assert!((phi(0.2).unwrap() - 2.0).abs() < 1e-12);
        assert!((phi(0.8).unwrap() - 0.5).abs() < 1e-12);
        assert!(phi(0.0).is_err());
        assert!(phi(1.0).is_err());
        assert!(phi(-0.1).is_err());
    }

    #[test]
    fn phi_reciprocal_symmetry() {
        for i in 1..100 {
            let x = i as f64 / 100.0;
            let prod = phi(x).unwrap() * phi(1.0 - x).unwrap();
            assert!((prod - 1.0).abs() < 1e-12, "phi(x)*phi(1-x) = {prod} at x={x}");
        }
    }

    #[test]
    fn phi_strictly_decreasing() {
        let mut prev = f64::INFINITY;
        for i in 1..1000 {
            let v = phi(i as f64 / 1000.0).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn arcsine_mean_is_half() {
        // Unclipped arcsine density is symmetric about 0.5.
        let p = params(BiasSpec::ClippedArcsine { cutoff: 0.0 });
        let mut sum = 0.0;
        let mut n = 0usize;
        for seed in 0..127 {
            let v = sample_bias_vector(&p, seed).unwrap();
            sum += v.values().iter().sum::<f64>();
            n += v.len();
        }
        let mean = sum / n as f64; // ~1e5 samples
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn bias_sampling_deterministic() {
        let p = params(BiasSpec::default_arcsine(4));
        assert_eq!(sample_bias_vector(&p, 99).unwrap(), sample_bias_vector(&p, 99).unwrap());
    }

    #[test]
    fn nuida_samples_stay_on_support() {
        let p = params(BiasSpec::DiscreteNuida);
        let support = nuida_support(4).unwrap();
        let mut seen = 0;
        for seed in 0..13 {
            let v = sample_bias_vector(&p, seed).unwrap();
            for &x in v.values() {
                assert!(
                    support.iter().any(|&(pt, _)| (pt - x).abs() < 1e-15),
                    "sample {x} off support"
                );
                seen += 1;
            }
        }
        assert!(seen >= 10_000);
    }

    #[test]
    fn codebook_column_frequencies() {
        // All-0.5 bias: column-wise fraction of ones over many regenerations.
        let p = CodeParameters {
            bias_spec: BiasSpec::ClippedArcsine { cutoff: 0.0 },
            ..CodeParameters::defaults()
        };
        let bias = BiasVector::new(vec![0.5; 788]).unwrap();
        let mut ones = vec![0usize; 788];
        let regenerations = 1000;
        for seed in 0..regenerations {
            let book = generate_codebook(&p, &bias, seed).unwrap();
            for row in &book.codewords {
                for k in 0..788 {
                    if row.get(k) {
                        ones[k] += 1;
                    }
                }
            }
        }
        let rows = regenerations as f64 * 10.0;
        for &c in ones.iter().step_by(97) {
            let freq = c as f64 / rows;
            assert!((freq - 0.5).abs() < 0.02, "column frequency {freq}");
        }
    }

    #[test]
    fn codebook_rows_distinct() {
        let p = params(BiasSpec::DiscreteNuida);
        let bias = sample_bias_vector(&p, 1).unwrap();
        let book = generate_codebook(&p, &bias, 2).unwrap();
        for i in 0..book.codewords.len() {
            for j in i + 1..book.codewords.len() {
                assert!(book.codewords[i] != book.codewords[j]);
            }
        }
    }

    #[test]
    fn single_codeword_degenerate() {
        let p = CodeParameters { num_codewords: 3, c0: 2, ..params(BiasSpec::DiscreteNuida) };
        let bias = sample_bias_vector(&p, 1).unwrap();
        let book = generate_codebook(&p, &bias, 2).unwrap();
        assert_eq!(book.codewords.len(), 3);
    }

    #[test]
    fn codebook_rejects_bias_length_mismatch() {
        let p = params(BiasSpec::DiscreteNuida);
        let bias = BiasVector::new(vec![0.5; 10]).unwrap();
        assert!(generate_codebook(&p, &bias, 0).is_err());
    }

    #[test]
    fn cleartext_score_identical_and_complement() {
        let p = vec![0.5; 64];
        let a = BitString::from_fn(64, |i| i % 3 == 0);
        let b = BitString::from_fn(64, |i| i % 3 != 0);
        assert_eq!(cleartext_score(&a, &a, &p).unwrap(), 1.0);
        assert_eq!(cleartext_score(&a, &b, &p).unwrap(), -1.0);
    }

    #[test]
    fn cleartext_score_self_positive() {
        let params = params(BiasSpec::default_arcsine(4));
        let bias = sample_bias_vector(&params, 3).unwrap();
        let book = generate_codebook(&params, &bias, 4).unwrap();
        for row in &book.codewords {
            assert!(cleartext_score(row, row, bias.values()).unwrap() > 0.0);
        }
    }

    #[test]
    fn cleartext_score_complement_symmetry() {
        // Complementing both sequences and p -> 1-p leaves the score unchanged.
        let params = params(BiasSpec::default_arcsine(4));
        let bias = sample_bias_vector(&params, 7).unwrap();
        let book = generate_codebook(&params, &bias, 8).unwrap();
        let a = &book.codewords[0];
        let b = &book.codewords[1];
        let s1 = cleartext_score(a, b, bias.values()).unwrap();
        let not_a = BitString::from_fn(a.len(), |i| !a.get(i));
        let not_b = BitString::from_fn(b.len(), |i| !b.get(i));
        let flipped: Vec<f64> = bias.values().iter().map(|p| 1.0 - p).collect();
        let s2 = cleartext_score(&not_a, &not_b, &flipped).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn cleartext_score_length_mismatch() {
        let p = vec![0.5; 10];
        let a = BitString::zeros(10);
        let b = BitString::zeros(11);
        assert!(cleartext_score(&a, &b, &p).is_err());
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut p = CodeParameters::defaults();
        p.c0 = 1;
        assert!(p.validate().is_err());
        let mut p = CodeParameters::defaults();
        p.num_codewords = 4;
        assert!(p.validate().is_err());
        let mut p = CodeParameters::defaults();
        p.epsilon = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn codebook_file_roundtrip() {
        let p = params(BiasSpec::DiscreteNuida);
        let code = FullCode::generate(&p, 5, false, 42).unwrap();
        let mut buf = Vec::new();
        code.write_to(&mut buf).unwrap();
        let back = FullCode::read_from(&mut &buf[..]).unwrap();
        assert_eq!(code, back);
        // byte-exact: re-serialization matches
        let mut buf2 = Vec::new();
        back.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }
}
