//! In-process simulation of the six entities: merchant, transaction
//! monitor, tracing authority, proxies, and buyers, running the
//! distribution protocol (fragments from parents to child through
//! proxies), the anonymous-transfer session-key machinery, and
//! exponential population growth.
//!
//! All actors share one logical clock; every protocol step appends to the
//! event log, which is what the "merchant does zero work per purchase"
//! assertion reads.

use std::collections::HashMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bits::BitString;
use crate::code::FullCode;
use crate::crypto::{
    decrypt_segment_group, encrypt_fingerprint, encrypt_segment_group, generate_keys,
    AuthorityKeyMaterial, EncryptedFingerprint, PermutationKey, SecurityLevel,
};
use crate::error::{Error, Result};
use crate::fingerprint::{
    random_parent_assignment, seed_fingerprint, segment_set_layout, Fingerprint, SegmentSetLayout,
};

// ---------------------------------------------------------------------------
// Events
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Actor {
    Merchant,
    Monitor,
    Authority,
    Proxy(usize),
    Buyer(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Event {
    pub clock: u64,
    pub actor: Actor,
    pub kind: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<Event>,
    clock: u64,
}

impl EventLog {
    fn record(&mut self, actor: Actor, kind: impl Into<String>) {
        self.clock += 1;
        self.events.push(Event { clock: self.clock, actor, kind: kind.into() });
    }

    pub fn count_for(&self, actor: Actor) -> usize {
        self.events.iter().filter(|e| e.actor == actor).count()
    }
}

// ---------------------------------------------------------------------------
// Content fragments
// ---------------------------------------------------------------------------

/// One content fragment: the watermark channel is simulated, so the
/// embedded segment rides along verbatim as `payload`, together with the
/// authority-encrypted copy of the segment and the merchant signature
/// created at embedding time. All three propagate unchanged from parent
/// to child.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub segment_index: usize,
    pub payload: Vec<u8>,
    pub seg_ciphertext: Vec<u8>,
    pub signature: [u8; 32],
}

fn sign_fragment(sign_key: &[u8; 32], segment_index: usize, payload: &[u8], ct: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(sign_key);
    h.update(b"fragment-sig");
    h.update((segment_index as u64).to_le_bytes());
    h.update((payload.len() as u64).to_le_bytes());
    h.update(payload);
    h.update(ct);
    h.finalize().into()
}

// ---------------------------------------------------------------------------
// Session store (Protocol 2 state machine)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionState {
    Available,
    Blocked { since: u64 },
    Removed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SessionRecord {
    key: [u8; 32],
    child: String,
    state: SessionState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub clock: u64,
    pub handle: u64,
    pub offender: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct SessionStore {
    records: HashMap<u64, SessionRecord>,
    next_handle: u64,
    pub detections: Vec<DetectionEvent>,
}

impl SessionStore {
    fn store(&mut self, key: [u8; 32], child: &str) -> u64 {
        let r = self.next_handle;
        self.next_handle += 1;
        self.records.insert(r, SessionRecord {
            key,
            child: child.to_string(),
            state: SessionState::Available,
        });
        r
    }

    /// Key lookup by the child. Any other requester is treated as a
    /// malicious party probing the key database and raises a detection.
    fn fetch(&mut self, handle: u64, requester: &str, clock: u64) -> Result<[u8; 32]> {
        let rec = self
            .records
            .get_mut(&handle)
            .ok_or_else(|| Error::State(format!("no session record {handle}")))?;
        if requester != rec.child {
            self.detections.push(DetectionEvent {
                clock,
                handle,
                offender: requester.to_string(),
            });
            return Err(Error::MaliciousProxy(format!(
                "{requester} requested session key {handle} held for another party"
            )));
        }
        match rec.state {
            SessionState::Available => {
                rec.state = SessionState::Blocked { since: clock };
                Ok(rec.key)
            }
            SessionState::Blocked { .. } => {
                Err(Error::State(format!("session record {handle} already blocked")))
            }
            SessionState::Removed => Err(Error::State(format!("session record {handle} removed"))),
        }
    }

    fn complete(&mut self, handle: u64) -> Result<()> {
        let rec = self
            .records
            .get_mut(&handle)
            .ok_or_else(|| Error::State(format!("no session record {handle}")))?;
        match rec.state {
            SessionState::Blocked { .. } => {
                rec.state = SessionState::Removed;
                rec.key = [0u8; 32];
                Ok(())
            }
            _ => Err(Error::State(format!("session record {handle} not blocked"))),
        }
    }

    pub fn state_of(&self, handle: u64) -> Option<SessionState> {
        self.records.get(&handle).map(|r| r.state)
    }
}

// ---------------------------------------------------------------------------
// Monitor database
// ---------------------------------------------------------------------------

/// Per permuted position, the (at most two) distinct tags MO has observed.
/// Bit value 0/1 of the underlying plaintext is unknown to MO; classes are
/// assigned by observation order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TagDictionary {
    slots: Vec<[Option<Vec<u8>>; 2]>,
}

impl TagDictionary {
    fn new(len: usize) -> Self {
        TagDictionary { slots: vec![[None, None]; len] }
    }

    fn class_of_insert(&mut self, k: usize, tag: &[u8]) -> Result<bool> {
        let slot = &mut self.slots[k];
        for (c, s) in slot.iter().enumerate() {
            if s.as_deref() == Some(tag) {
                return Ok(c == 1);
            }
        }
        for (c, s) in slot.iter_mut().enumerate() {
            if s.is_none() {
                *s = Some(tag.to_vec());
                return Ok(c == 1);
            }
        }
        Err(Error::Integrity(format!("third distinct tag observed at position {k}")))
    }

    /// Read-only classification: class bit plus a known flag (a tag never
    /// observed at registration time matches no stored fingerprint).
    pub fn classify(&self, enc: &EncryptedFingerprint) -> (BitString, BitString) {
        let l = enc.len();
        let mut classes = BitString::zeros(l);
        let mut known = BitString::zeros(l);
        for k in 0..l {
            let tag = enc.tag(k);
            if self.slots[k][0].as_deref() == Some(tag) {
                known.set(k, true);
            } else if self.slots[k][1].as_deref() == Some(tag) {
                classes.set(k, true);
                known.set(k, true);
            }
        }
        (classes, known)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransactionRegister {
    pub buyer_index: usize,
    pub pseudonym: String,
    pub digest: [u8; 32],
    /// Packed per-position tag classes (observation-order encoding).
    pub classes: BitString,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Monitor {
    pub tag_dict: TagDictionary,
    pub registers: Vec<TransactionRegister>,
    digest_index: HashMap<[u8; 32], usize>,
    pub sessions: SessionStore,
}

impl Monitor {
    fn new(bit_length: usize) -> Self {
        Monitor {
            tag_dict: TagDictionary::new(bit_length),
            registers: Vec::new(),
            digest_index: HashMap::new(),
            sessions: SessionStore::default(),
        }
    }

    fn register(&mut self, buyer_index: usize, pseudonym: &str, enc: &EncryptedFingerprint) -> Result<()> {
        let l = enc.len();
        let mut classes = BitString::zeros(l);
        for k in 0..l {
            classes.set(k, self.tag_dict.class_of_insert(k, enc.tag(k))?);
        }
        let digest = enc.digest();
        let idx = self.registers.len();
        self.registers.push(TransactionRegister {
            buyer_index,
            pseudonym: pseudonym.to_string(),
            digest,
            classes,
        });
        self.digest_index.insert(digest, idx);
        Ok(())
    }

    /// Protocol 3 step: exact search of E(sigma(f')) in the transaction
    /// database, by tag-sequence digest.
    pub fn exact_lookup(&self, enc: &EncryptedFingerprint) -> Option<&str> {
        self.digest_index.get(&enc.digest()).map(|&i| self.registers[i].pseudonym.as_str())
    }

    pub fn pseudonym_of_register(&self, idx: usize) -> &str {
        &self.registers[idx].pseudonym
    }
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Buyer {
    pub index: usize,
    pub pseudonym: String,
    pub generation: usize,
    pub parents: Vec<usize>,
    pub fingerprint: Fingerprint,
    pub fragments: Vec<Fragment>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub num_segments: usize,
    pub set_size: usize,
    pub parents_min: usize,
    pub parents_max: usize,
    pub security: SecurityLevel,
}

pub struct Simulation {
    pub config: SimConfig,
    pub code: FullCode,
    pub keys: AuthorityKeyMaterial,
    pub sigma: PermutationKey,
    pub layout: SegmentSetLayout,
    pub buyers: Vec<Buyer>,
    pub generations: Vec<std::ops::Range<usize>>,
    pub monitor: Monitor,
    pub log: EventLog,
    identities: HashMap<String, String>,
    sign_key: [u8; 32],
    rng: ChaCha12Rng,
    bootstrapped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferOutcome {
    pub handle: u64,
    pub roundtrip_ok: bool,
    pub detected: bool,
}

fn sym_stream(key: &[u8; 32], nonce: u64, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len());
    for (i, block) in data.chunks(32).enumerate() {
        let mut h = Sha256::new();
        h.update(key);
        h.update(b"session-stream");
        h.update(nonce.to_le_bytes());
        h.update((i as u64).to_le_bytes());
        let ks = h.finalize();
        out.extend(block.iter().zip(ks.iter()).map(|(a, b)| a ^ b));
    }
    out
}

impl Simulation {
    /// Bootstrap: generate the code and key material, create the M seed
    /// buyers with merchant-prepared copies. Seeds get no transaction
    /// registers.
    pub fn bootstrap(code: FullCode, config: SimConfig, master_seed: u64) -> Result<Self> {
        let n_s = code.num_segments();
        if n_s != config.num_segments {
            return Err(Error::parameter("num_segments", "config does not match code"));
        }
        let layout = segment_set_layout(n_s, config.set_size)?;
        if config.parents_min < 2 || config.parents_max < config.parents_min {
            return Err(Error::parameter("parents", "need 2 <= min <= max"));
        }
        let l = code.total_bits();
        let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
        let key_seed = rng.gen::<u64>();
        let (keys, sigma) = generate_keys(l, config.security, key_seed, "content-0")?;
        let mut sign_key = [0u8; 32];
        rng.fill_bytes(&mut sign_key);

        let mut sim = Simulation {
            monitor: Monitor::new(l),
            layout,
            buyers: Vec::new(),
            generations: Vec::new(),
            log: EventLog::default(),
            identities: HashMap::new(),
            sign_key,
            rng,
            bootstrapped: false,
            config,
            code,
            keys,
            sigma,
        };

        let m = sim.code.params.num_codewords as usize;
        sim.log.record(Actor::Merchant, "bootstrap:codebook");
        sim.log.record(Actor::Authority, "bootstrap:keys");
        for i in 0..m {
            let f = seed_fingerprint(&sim.code, i)?;
            let fragments = sim.build_fragments(&f)?;
            let pseudonym = sim.make_pseudonym(i);
            sim.identities.insert(pseudonym.clone(), format!("Id(seed-{i})"));
            sim.buyers.push(Buyer {
                index: i,
                pseudonym,
                generation: 1,
                parents: Vec::new(),
                fingerprint: f,
                fragments,
            });
            sim.log.record(Actor::Merchant, format!("bootstrap:seed-copy:{i}"));
        }
        sim.generations.push(0..m);
        sim.bootstrapped = true;
        Ok(sim)
    }

    fn make_pseudonym(&mut self, index: usize) -> String {
        let mut h = Sha256::new();
        h.update(b"pseudonym");
        h.update(self.sign_key);
        h.update((index as u64).to_le_bytes());
        format!("P{:05}-{}", index, hex::encode(&h.finalize()[..4]))
    }

    /// Merchant-side fragment preparation at embedding time.
    fn build_fragments(&mut self, f: &Fingerprint) -> Result<Vec<Fragment>> {
        let mut out = Vec::with_capacity(f.num_segments());
        for j in 0..f.num_segments() {
            let payload = f.segment(j).to_bytes();
            let ct = self.keys.encrypt_blob(&payload, &mut self.rng);
            let signature = sign_fragment(&self.sign_key, j, &payload, &ct);
            out.push(Fragment { segment_index: j, payload, seg_ciphertext: ct, signature });
        }
        Ok(out)
    }

    pub fn population(&self) -> usize {
        self.buyers.len()
    }

    pub fn num_seeds(&self) -> usize {
        self.code.params.num_codewords as usize
    }

    /// Protocol 2 engine: one session-key transfer of `fragments` from
    /// `parent` to `child` through `proxy`. With `malicious_proxy`, the
    /// proxy attempts to fetch the session key before relaying; the
    /// monitor records a detection and the transfer is aborted.
    pub fn transfer_set(
        &mut self,
        parent: usize,
        proxy: usize,
        child_pseudonym: &str,
        fragments: &[Fragment],
        malicious_proxy: bool,
    ) -> Result<(Vec<Fragment>, TransferOutcome)> {
        let mut key = [0u8; 32];
        self.rng.fill_bytes(&mut key);
        let handle = self.monitor.sessions.store(key, child_pseudonym);
        self.log.record(Actor::Buyer(parent), format!("p2:store-key:{handle}"));

        // Parent encrypts the fragment payloads under the session key; the
        // authority-encrypted segments and signatures travel as-is.
        let plain = serde_json::to_vec(fragments)?;
        let ciphertext = sym_stream(&key, handle, &plain);
        self.log.record(Actor::Proxy(proxy), format!("p2:relay:{handle}"));

        if malicious_proxy {
            let offender = format!("proxy-{proxy}");
            let clock = self.log.events.len() as u64;
            let err = self.monitor.sessions.fetch(handle, &offender, clock).unwrap_err();
            self.log.record(Actor::Monitor, format!("p2:detection:{handle}"));
            let outcome = TransferOutcome { handle, roundtrip_ok: false, detected: true };
            return match err {
                Error::MaliciousProxy(_) => Ok((Vec::new(), outcome)),
                other => Err(other),
            };
        }

        let clock = self.log.events.len() as u64;
        let fetched = self.monitor.sessions.fetch(handle, child_pseudonym, clock)?;
        let decrypted = sym_stream(&fetched, handle, &ciphertext);
        let received: Vec<Fragment> = serde_json::from_slice(&decrypted)
            .map_err(|_| Error::Integrity("fragment decryption failed".into()))?;
        self.monitor.sessions.complete(handle)?;
        self.log.record(Actor::Monitor, format!("p2:purge:{handle}"));

        let ok = received == fragments;
        Ok((received, TransferOutcome { handle, roundtrip_ok: ok, detected: false }))
    }

    /// Protocol 1: one full purchase for a new buyer. Parents are chosen
    /// uniformly without replacement from all previous buyers (seed buyers
    /// included); one proxy per segment set relays fragments and forwards
    /// the group-encrypted segments to the authority, which reassembles
    /// the child fingerprint and registers it at the monitor.
    pub fn purchase(&mut self, generation: usize) -> Result<usize> {
        if !self.bootstrapped {
            return Err(Error::State("bootstrap required before purchase".into()));
        }
        let child_index = self.buyers.len();
        let pool = child_index;
        if pool < 2 {
            return Err(Error::ProtocolViolation("fewer than 2 parents reachable".into()));
        }
        let parent_count = self
            .rng
            .gen_range(self.config.parents_min..=self.config.parents_max.min(pool));
        // uniform draw without replacement over all previous buyers
        let mut parents: Vec<usize> = Vec::with_capacity(parent_count);
        while parents.len() < parent_count {
            let p = self.rng.gen_range(0..pool);
            if !parents.contains(&p) {
                parents.push(p);
            }
        }
        let assignment =
            random_parent_assignment(parent_count, self.config.num_segments, &mut self.rng)?;

        let child_pseudonym = self.make_pseudonym(child_index);
        let mut child_fragments: Vec<Option<Fragment>> = vec![None; self.config.num_segments];
        let mut groups: Vec<(usize, Vec<u8>)> = Vec::with_capacity(self.layout.num_sets());

        let set_ranges: Vec<std::ops::Range<usize>> = self.layout.iter().collect();
        for (proxy, set) in set_ranges.into_iter().enumerate() {
            // group the set's segments by supplying parent; one Protocol 2
            // session per (parent, proxy) pair
            let mut per_parent: Vec<(usize, Vec<Fragment>)> = Vec::new();
            for j in set.clone() {
                let parent = parents[assignment.parent_of(j)];
                let frag = self.buyers[parent].fragments[j].clone();
                match per_parent.iter_mut().find(|(p, _)| *p == parent) {
                    Some((_, v)) => v.push(frag),
                    None => per_parent.push((parent, vec![frag])),
                }
            }
            let mut relayed: Vec<Fragment> = Vec::new();
            for (parent, frags) in per_parent {
                let (received, outcome) =
                    self.transfer_set(parent, proxy, &child_pseudonym, &frags, false)?;
                if !outcome.roundtrip_ok {
                    return Err(Error::Integrity("fragment transfer corrupted".into()));
                }
                relayed.extend(received);
            }
            // proxy forwards the authority-encrypted segments as one group
            relayed.sort_by_key(|f| f.segment_index);
            let cts: Vec<Vec<u8>> = relayed.iter().map(|f| f.seg_ciphertext.clone()).collect();
            let group = encrypt_segment_group(&cts, &self.keys, &mut self.rng);
            self.log.record(Actor::Proxy(proxy), format!("p1:forward-group:set{}", proxy));
            groups.push((set.start, group));
            for f in relayed {
                let j = f.segment_index;
                child_fragments[j] = Some(f);
            }
        }

        // Authority side: decrypt groups, verify signatures, reassemble.
        let mut bits = BitString::zeros(self.code.total_bits());
        let l0 = self.code.segment_length();
        for (set_start, group) in &groups {
            let cts = decrypt_segment_group(group, &self.keys)?;
            for (offset, ct) in cts.iter().enumerate() {
                let j = set_start + offset;
                let payload = self.keys.decrypt_blob(ct)?;
                let frag = child_fragments[j].as_ref().expect("fragment present");
                let expect = sign_fragment(&self.sign_key, j, &frag.payload, &frag.seg_ciphertext);
                if frag.signature != expect {
                    return Err(Error::MaliciousProxy(format!(
                        "signature failure on segment {j} (proxy {})",
                        self.layout.iter().position(|r| r.contains(&j)).unwrap_or(0)
                    )));
                }
                let seg = BitString::from_bytes(l0, &payload)?;
                for t in 0..l0 {
                    bits.set(j * l0 + t, seg.get(t));
                }
            }
        }
        let f_child = Fingerprint::from_bits(bits, self.config.num_segments, l0)?;
        let enc = encrypt_fingerprint(&f_child, &self.sigma, &self.keys)?;
        self.log.record(Actor::Authority, format!("p1:encrypt-fp:{child_index}"));
        self.monitor.register(child_index, &child_pseudonym, &enc)?;
        self.log.record(Actor::Monitor, format!("p1:register:{child_index}"));

        // child keeps the copy
        let fragments: Vec<Fragment> =
            child_fragments.into_iter().map(|f| f.expect("all segments delivered")).collect();
        self.identities
            .insert(child_pseudonym.clone(), format!("Id(buyer-{child_index})"));
        self.buyers.push(Buyer {
            index: child_index,
            pseudonym: child_pseudonym,
            generation,
            parents,
            fingerprint: f_child,
            fragments,
        });
        Ok(child_index)
    }

    /// Exponential growth: each generation g >= 2 doubles the cumulative
    /// population; parents are drawn uniformly at random from all the
    /// previous generations, seed buyers included.
    pub fn grow_population(&mut self, generations: usize) -> Result<()> {
        if generations < 1 {
            return Err(Error::parameter("generations", "must be >= 1"));
        }
        while self.generations.len() < generations {
            let g = self.generations.len() + 1;
            let new = self.buyers.len();
            let start = self.buyers.len();
            for _ in 0..new {
                self.purchase(g)?;
            }
            self.generations.push(start..self.buyers.len());
        }
        Ok(())
    }

    /// Standalone Protocol 2 run between random existing parties, for the
    /// state-machine acceptance drills.
    pub fn simulate_transfer(&mut self, malicious: bool) -> Result<TransferOutcome> {
        if self.buyers.len() < 2 {
            return Err(Error::State("need at least 2 buyers".into()));
        }
        let parent = self.rng.gen_range(0..self.buyers.len());
        let mut child = self.rng.gen_range(0..self.buyers.len());
        while child == parent {
            child = self.rng.gen_range(0..self.buyers.len());
        }
        let proxy = self.rng.gen_range(0..self.layout.num_sets());
        let n_frags = self.rng.gen_range(1..=4usize);
        let fragments: Vec<Fragment> =
            self.buyers[parent].fragments[..n_frags].to_vec();
        let child_pseudonym = self.buyers[child].pseudonym.clone();
        let (_, outcome) =
            self.transfer_set(parent, proxy, &child_pseudonym, &fragments, malicious)?;
        Ok(outcome)
    }

    /// Merchant-side identity resolution, used only on proven guilt.
    pub fn resolve_identity(&mut self, pseudonym: &str) -> Result<String> {
        self.log.record(Actor::Merchant, format!("resolve:{pseudonym}"));
        self.identities
            .get(pseudonym)
            .cloned()
            .ok_or_else(|| Error::Lookup(format!("unknown pseudonym {pseudonym}")))
    }

    /// Merchant events recorded after bootstrap, excluding identity
    /// resolution: must stay zero (the merchant is not involved in
    /// distribution).
    pub fn merchant_distribution_events(&self) -> usize {
        self.log
            .events
            .iter()
            .filter(|e| e.actor == Actor::Merchant && !e.kind.starts_with("bootstrap:") && !e.kind.starts_with("resolve:"))
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::CodeParameters;

    fn small_sim(seed: u64) -> Simulation {
        let params = CodeParameters { codeword_length: 64, ..CodeParameters::defaults() };
        let code = FullCode::generate(&params, 12, false, seed ^ 0xabc).unwrap();
        let config = SimConfig {
            num_segments: 12,
            set_size: 3,
            parents_min: 2,
            parents_max: 4,
            security: SecurityLevel::Mock,
        };
        Simulation::bootstrap(code, config, seed).unwrap()
    }

    #[test]
    fn bootstrap_creates_seeds_without_registers() {
        let sim = small_sim(1);
        assert_eq!(sim.population(), 10);
        assert_eq!(sim.monitor.registers.len(), 0);
        assert_eq!(sim.generations.len(), 1);
    }

    #[test]
    fn growth_doubles_and_registers() {
        let mut sim = small_sim(2);
        sim.grow_population(4).unwrap();
        assert_eq!(sim.population(), 80); // 10 * 2^3
        assert_eq!(sim.monitor.registers.len(), 70); // N - M
        assert_eq!(sim.generations[3], 40..80);
    }

    #[test]
    fn children_are_valid_recombinations() {
        let mut sim = small_sim(3);
        sim.grow_population(3).unwrap();
        for b in &sim.buyers[10..] {
            assert!(b.parents.len() >= 2 && b.parents.len() <= 4);
            for j in 0..sim.config.num_segments {
                let seg = b.fingerprint.segment(j);
                assert!(
                    b.parents.iter().any(|&p| sim.buyers[p].fingerprint.segment(j) == seg),
                    "segment {j} of buyer {} not from any parent",
                    b.index
                );
            }
            // fragments consistent with fingerprint
            for j in 0..sim.config.num_segments {
                assert_eq!(b.fragments[j].payload, b.fingerprint.segment(j).to_bytes());
            }
        }
    }

    #[test]
    fn registered_fingerprints_found_by_exact_lookup() {
        let mut sim = small_sim(4);
        sim.grow_population(2).unwrap();
        for b in sim.buyers[10..].to_vec() {
            let enc = encrypt_fingerprint(&b.fingerprint, &sim.sigma, &sim.keys).unwrap();
            assert_eq!(sim.monitor.exact_lookup(&enc), Some(b.pseudonym.as_str()));
        }
        // seed fingerprints are not registered
        let enc = encrypt_fingerprint(&sim.buyers[0].fingerprint, &sim.sigma, &sim.keys).unwrap();
        assert_eq!(sim.monitor.exact_lookup(&enc), None);
    }

    #[test]
    fn merchant_does_no_distribution_work() {
        let mut sim = small_sim(5);
        sim.grow_population(3).unwrap();
        assert_eq!(sim.merchant_distribution_events(), 0);
        let p = sim.monitor.registers[0].pseudonym.clone();
        let id = sim.resolve_identity(&p).unwrap();
        assert!(id.starts_with("Id("));
        assert_eq!(sim.merchant_distribution_events(), 0);
    }

    #[test]
    fn honest_transfer_roundtrips() {
        let mut sim = small_sim(6);
        sim.grow_population(2).unwrap();
        for _ in 0..20 {
            let o = sim.simulate_transfer(false).unwrap();
            assert!(o.roundtrip_ok && !o.detected);
            assert_eq!(sim.monitor.sessions.state_of(o.handle), Some(SessionState::Removed));
        }
        assert!(sim.monitor.sessions.detections.is_empty());
    }

    #[test]
    fn malicious_proxy_detected() {
        let mut sim = small_sim(7);
        sim.grow_population(2).unwrap();
        let o = sim.simulate_transfer(true).unwrap();
        assert!(o.detected && !o.roundtrip_ok);
        assert_eq!(sim.monitor.sessions.detections.len(), 1);
        // the key was never released: record still available
        assert_eq!(sim.monitor.sessions.state_of(o.handle), Some(SessionState::Available));
    }

    #[test]
    fn session_state_machine_transitions() {
        let mut store = SessionStore::default();
        let r = store.store([7u8; 32], "child");
        assert_eq!(store.state_of(r), Some(SessionState::Available));
        assert!(store.complete(r).is_err()); // cannot purge before block
        let k = store.fetch(r, "child", 1).unwrap();
        assert_eq!(k, [7u8; 32]);
        assert!(matches!(store.state_of(r), Some(SessionState::Blocked { .. })));
        assert!(store.fetch(r, "child", 2).is_err()); // double fetch blocked
        store.complete(r).unwrap();
        assert_eq!(store.state_of(r), Some(SessionState::Removed));
        assert!(store.fetch(r, "child", 3).is_err());
    }

    #[test]
    fn tag_dictionary_rejects_third_tag() {
        let mut d = TagDictionary::new(1);
        assert!(!d.class_of_insert(0, b"aa").unwrap());
        assert!(d.class_of_insert(0, b"bb").unwrap());
        assert!(!d.class_of_insert(0, b"aa").unwrap());
        assert!(d.class_of_insert(0, b"cc").is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let mut a = small_sim(42);
        let mut b = small_sim(42);
        a.grow_population(3).unwrap();
        b.grow_population(3).unwrap();
        for (x, y) in a.buyers.iter().zip(&b.buyers) {
            assert_eq!(x.fingerprint, y.fingerprint);
            assert_eq!(x.pseudonym, y.pseudonym);
            assert_eq!(x.parents, y.parents);
        }
    }
}
