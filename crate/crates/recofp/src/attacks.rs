//! Collusion attacks on fingerprint copies: linear (averaging) and
//! non-linear (minimum, maximum), plus the marking-assumption checker.
//!
//! Attacks operate at the extracted-bit level; averaging is
//! mean-then-round with fair-coin ties drawn from the tie seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Average,
    Min,
    Max,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::Average, AttackKind::Min, AttackKind::Max];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Average => "average",
            AttackKind::Min => "min",
            AttackKind::Max => "max",
        }
    }
}

/// Byte-exact replay record for one colluded copy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackTrace {
    pub kind: AttackKind,
    pub coalition: Vec<usize>,
    pub tie_seed: u64,
    /// Positions where the average was an exact tie, with the coin result.
    pub tie_decisions: Vec<(usize, bool)>,
}

fn check_coalition(coalition: &[&Fingerprint]) -> Result<usize> {
    let first = coalition.first().ok_or_else(|| Error::parameter("coalition", "empty"))?;
    let l = first.total_bits();
    for f in coalition {
        if f.total_bits() != l
            || f.num_segments() != first.num_segments()
            || f.segment_length() != first.segment_length()
        {
            return Err(Error::parameter("coalition", "mismatched fingerprint shapes"));
        }
    }
    Ok(l)
}

/// Per bit: mean of coalition bits, re-binarized at 0.5; exact ties
/// resolved by a fair coin from `tie_seed`.
pub fn average_attack(coalition: &[&Fingerprint], tie_seed: u64) -> Result<(BitString, AttackTrace)> {
    let l = check_coalition(coalition)?;
    let c = coalition.len();
    let mut rng = ChaCha12Rng::seed_from_u64(tie_seed);
    let mut out = BitString::zeros(l);
    let mut ties = Vec::new();
    for k in 0..l {
        let ones = coalition.iter().filter(|f| f.bits().get(k)).count();
        let bit = if 2 * ones == c {
            let coin = rng.gen::<bool>();
            ties.push((k, coin));
            coin
        } else {
            2 * ones > c
        };
        out.set(k, bit);
    }
    let trace = AttackTrace { kind: AttackKind::Average, coalition: Vec::new(), tie_seed, tie_decisions: ties };
    Ok((out, trace))
}

/// Bitwise AND of the coalition copies.
pub fn min_attack(coalition: &[&Fingerprint]) -> Result<BitString> {
    let l = check_coalition(coalition)?;
    Ok(BitString::from_fn(l, |k| coalition.iter().all(|f| f.bits().get(k))))
}

/// Bitwise OR of the coalition copies.
pub fn max_attack(coalition: &[&Fingerprint]) -> Result<BitString> {
    let l = check_coalition(coalition)?;
    Ok(BitString::from_fn(l, |k| coalition.iter().any(|f| f.bits().get(k))))
}

pub fn run_attack(
    kind: AttackKind,
    coalition: &[&Fingerprint],
    tie_seed: u64,
) -> Result<(BitString, AttackTrace)> {
    match kind {
        AttackKind::Average => average_attack(coalition, tie_seed),
        AttackKind::Min => {
            let y = min_attack(coalition)?;
            Ok((y, AttackTrace { kind, coalition: Vec::new(), tie_seed, tie_decisions: Vec::new() }))
        }
        AttackKind::Max => {
            let y = max_attack(coalition)?;
            Ok((y, AttackTrace { kind, coalition: Vec::new(), tie_seed, tie_decisions: Vec::new() }))
        }
    }
}

/// True iff `colluded` carries the common bit at every undetectable
/// position (positions where all coalition copies agree). Violating
/// positions are returned for diagnosis.
pub fn verify_marking_assumption(
    colluded: &BitString,
    coalition: &[&Fingerprint],
) -> Result<(bool, Vec<usize>)> {
    let l = check_coalition(coalition)?;
    if colluded.len() != l {
        return Err(Error::parameter("colluded", "length mismatch"));
    }
    let mut violations = Vec::new();
    for k in 0..l {
        let first = coalition[0].bits().get(k);
        if coalition.iter().all(|f| f.bits().get(k) == first) && colluded.get(k) != first {
            violations.push(k);
        }
    }
    Ok((violations.is_empty(), violations))
}
