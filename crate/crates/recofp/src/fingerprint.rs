//! Segment-structured fingerprints, recombination from parent copies, and
//! the contiguous segment-set layout proxies operate on.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::code::FullCode;
use crate::error::{Error, Result};

/// A buyer fingerprint: n_s ordered segments of l0 bits each.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    bits: BitString,
    num_segments: usize,
    segment_length: usize,
}

impl Fingerprint {
    pub fn from_bits(bits: BitString, num_segments: usize, segment_length: usize) -> Result<Self> {
        if bits.len() != num_segments * segment_length {
            return Err(Error::parameter(
                "bits",
                format!("expected {} bits, got {}", num_segments * segment_length, bits.len()),
            ));
        }
        Ok(Fingerprint { bits, num_segments, segment_length })
    }

    pub fn bits(&self) -> &BitString {
        &self.bits
    }

    pub fn num_segments(&self) -> usize {
        self.num_segments
    }

    pub fn segment_length(&self) -> usize {
        self.segment_length
    }

    pub fn total_bits(&self) -> usize {
        self.bits.len()
    }

    pub fn segment(&self, j: usize) -> BitString {
        let l0 = self.segment_length;
        self.bits.slice(j * l0..(j + 1) * l0)
    }

    /// Bit-packed serialization with an (n_s, l0) header.
    pub fn to_packed(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.bits.len() / 8 + 1);
        out.extend_from_slice(&(self.num_segments as u32).to_le_bytes());
        out.extend_from_slice(&(self.segment_length as u32).to_le_bytes());
        out.extend_from_slice(&self.bits.to_bytes());
        out
    }

    pub fn from_packed(data: &[u8]) -> Result<Self> {
        if data.len() < 8 {
            return Err(Error::Integrity("fingerprint blob too short".into()));
        }
        let num_segments = u32::from_le_bytes(data[0..4].try_into().unwrap()) as usize;
        let segment_length = u32::from_le_bytes(data[4..8].try_into().unwrap()) as usize;
        let bits = BitString::from_bytes(num_segments * segment_length, &data[8..])?;
        Fingerprint::from_bits(bits, num_segments, segment_length)
    }
}

/// Partition of segment indices into L contiguous sets: the first L-1 sets
/// have exactly m segments, the last absorbs the remainder (between m and
/// 2m-1 segments), so that 0 <= n_s - L*m < m.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSetLayout {
    pub segments_per_set: usize,
    bounds: Vec<(usize, usize)>,
}

impl SegmentSetLayout {
    pub fn num_sets(&self) -> usize {
        self.bounds.len()
    }

    pub fn set_range(&self, i: usize) -> std::ops::Range<usize> {
        self.bounds[i].0..self.bounds[i].1
    }

    pub fn iter(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.bounds.iter().map(|&(a, b)| a..b)
    }
}

pub fn segment_set_layout(num_segments: usize, m: usize) -> Result<SegmentSetLayout> {
    if m == 0 {
        return Err(Error::parameter("m", "must be positive"));
    }
    if num_segments < m {
        return Err(Error::parameter("n_s", format!("{num_segments} < set size {m}")));
    }
    let num_sets = num_segments / m;
    let mut bounds = Vec::with_capacity(num_sets);
    for i in 0..num_sets {
        let start = i * m;
        let end = if i + 1 == num_sets { num_segments } else { start + m };
        bounds.push((start, end));
    }
    Ok(SegmentSetLayout { segments_per_set: m, bounds })
}

/// Maps each segment index to the parent that supplies it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParentAssignment {
    assignment: Vec<usize>,
    parent_count: usize,
}

impl ParentAssignment {
    pub fn parent_of(&self, segment: usize) -> usize {
        self.assignment[segment]
    }

    pub fn parent_count(&self) -> usize {
        self.parent_count
    }

    pub fn num_segments(&self) -> usize {
        self.assignment.len()
    }
}

/// Uniform i.i.d. per-segment assignment, resampled until every parent
/// supplies at least one segment.
pub fn random_parent_assignment(
    parents: usize,
    num_segments: usize,
    rng: &mut impl Rng,
) -> Result<ParentAssignment> {
    if parents < 2 {
        return Err(Error::ProtocolViolation(format!(
            "recombination requires at least two parents, got {parents}"
        )));
    }
    if parents > num_segments {
        return Err(Error::parameter(
            "parents",
            format!("{parents} parents cannot each supply a segment of {num_segments}"),
        ));
    }
    loop {
        let assignment: Vec<usize> = (0..num_segments).map(|_| rng.gen_range(0..parents)).collect();
        let mut seen = vec![false; parents];
        for &p in &assignment {
            seen[p] = true;
        }
        if seen.iter().all(|&s| s) {
            return Ok(ParentAssignment { assignment, parent_count: parents });
        }
    }
}

/// The i-th seed copy: segment j is row `seed_index` of codebook j.
/// `seed_index` is zero-based and must be below M.
pub fn seed_fingerprint(code: &FullCode, seed_index: usize) -> Result<Fingerprint> {
    let m = code.params.num_codewords as usize;
    if seed_index >= m {
        return Err(Error::parameter(
            "seed_index",
            format!("{seed_index} out of range for M={m} codewords"),
        ));
    }
    let l0 = code.segment_length();
    let mut bits = BitString::zeros(code.total_bits());
    for j in 0..code.num_segments() {
        let row = &code.codebook(j).codewords[seed_index];
        bits.copy_range(j * l0, row, 0..l0);
    }
    Fingerprint::from_bits(bits, code.num_segments(), l0)
}

/// Child fingerprint: segment j copied from parent `assignment(j)`.
pub fn recombine(parents: &[&Fingerprint], assignment: &ParentAssignment) -> Result<Fingerprint> {
    if parents.len() != assignment.parent_count() {
        return Err(Error::parameter(
            "parents",
            format!("{} parents but assignment expects {}", parents.len(), assignment.parent_count()),
        ));
    }
    let first = parents[0];
    if parents
        .iter()
        .any(|p| p.num_segments() != first.num_segments() || p.segment_length() != first.segment_length())
    {
        return Err(Error::parameter("parents", "parent fingerprint shapes differ"));
    }
    if assignment.num_segments() != first.num_segments() {
        return Err(Error::parameter("assignment", "segment count mismatch"));
    }
    let l0 = first.segment_length();
    let mut bits = BitString::zeros(first.total_bits());
    for j in 0..first.num_segments() {
        let src = parents[assignment.parent_of(j)];
        bits.copy_range(j * l0, src.bits(), j * l0..(j + 1) * l0);
    }
    Fingerprint::from_bits(bits, first.num_segments(), l0)
}
