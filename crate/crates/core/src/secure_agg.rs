//! Pairwise-mask secure aggregation over fixed-point encodings.
//!
//! Each partner encodes its update as integers modulo 2^64 (scale 2^16) and
//! adds one pseudorandom mask per peer: `+PRF(seed_uv)` toward higher ids and
//! `-PRF(seed_uv)` toward lower ids. Summed over the roster the pairwise masks
//! cancel exactly. An optional group mask, known to partners but not to the
//! server, survives aggregation and is removed by [`unblind`].
//!
//! The PRF is ChaCha20 keyed by the 32-byte seed with the round number as
//! stream id; coordinate `c` is the `c`-th 64-bit output.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

pub const SCALE_BITS: u32 = 16;
pub const SCALE: f64 = (1u64 << SCALE_BITS) as f64;
/// Largest encodable magnitude, `2^40 / scale`.
pub const MAX_ABS: f64 = (1u64 << 24) as f64;

pub type Seed = [u8; 32];

/// Encodes one real as a two's-complement residue modulo 2^64.
pub fn encode_value(v: f64) -> u64 {
    let v = v.clamp(-MAX_ABS, MAX_ABS);
    (v * SCALE).round() as i64 as u64
}

pub fn decode_value(x: u64) -> f64 {
    x as i64 as f64 / SCALE
}

/// `round(v * scale) / scale` for `v` in the encodable range.
pub fn quantize(v: f64) -> f64 {
    decode_value(encode_value(v))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPointVector {
    values: Vec<u64>,
}

impl FixedPointVector {
    pub fn encode(v: &[f64]) -> Self {
        Self { values: v.iter().map(|&x| encode_value(x)).collect() }
    }

    pub fn from_values(values: Vec<u64>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0; len] }
    }

    pub fn decode(&self) -> Vec<f64> {
        self.values.iter().map(|&x| decode_value(x)).collect()
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn wrapping_add_assign(&mut self, other: &FixedPointVector) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a = a.wrapping_add(*b);
        }
    }
}

/// Pseudorandom residues for `(seed, round)`, one per coordinate.
fn prf_stream(seed: &Seed, round: u32) -> ChaCha20Rng {
    let mut r = ChaCha20Rng::from_seed(*seed);
    r.set_stream(u64::from(round));
    r
}

pub fn prf(seed: &Seed, round: u32, len: usize) -> Vec<u64> {
    let mut r = prf_stream(seed, round);
    (0..len).map(|_| r.next_u64()).collect()
}

/// First 8 bytes of SHA-256 over the sorted roster ids (little-endian u32).
pub fn roster_digest(roster: &[u32]) -> [u8; 8] {
    let mut ids = roster.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.to_le_bytes());
    }
    let out = h.finalize();
    let mut d = [0u8; 8];
    d.copy_from_slice(&out[..8]);
    d
}

/// Mask seeds held by one party.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskKeyring {
    owner: Option<u32>,
    pairwise: BTreeMap<(u32, u32), Seed>,
    group: Option<Seed>,
}

impl MaskKeyring {
    /// Deals seeds for every pair of `partners` (and a group seed if asked).
    /// The result holds everything; hand out views with
    /// [`MaskKeyring::for_partner`] and [`MaskKeyring::for_server`].
    pub fn deal(partners: &[u32], with_group: bool, seed: u64) -> Self {
        let mut r = rng::derive(seed, &[tag::KEYS]);
        let mut ids = partners.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let mut pairwise = BTreeMap::new();
        for (a, &u) in ids.iter().enumerate() {
            for &v in &ids[a + 1..] {
                pairwise.insert((u, v), r.random());
            }
        }
        let group = with_group.then(|| r.random());
        Self { owner: None, pairwise, group }
    }

    /// Seeds shared with `partner`, plus the group seed.
    pub fn for_partner(&self, partner: u32) -> Self {
        Self {
            owner: Some(partner),
            pairwise: self
                .pairwise
                .iter()
                .filter(|((u, v), _)| *u == partner || *v == partner)
                .map(|(k, s)| (*k, *s))
                .collect(),
            group: self.group,
        }
    }

    /// The aggregator holds no mask seeds at all.
    pub fn for_server(&self) -> Self {
        Self { owner: None, pairwise: BTreeMap::new(), group: None }
    }

    pub fn owner(&self) -> Option<u32> {
        self.owner
    }

    pub fn pair_seed(&self, u: u32, v: u32) -> Option<&Seed> {
        self.pairwise.get(&(u.min(v), u.max(v)))
    }

    pub fn group_seed(&self) -> Option<&Seed> {
        self.group.as_ref()
    }

    /// Replaces the seed shared by `u` and `v`.
    pub fn set_pair_seed(&mut self, u: u32, v: u32, seed: Seed) {
        self.pairwise.insert((u.min(v), u.max(v)), seed);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedUpdate {
    pub partner_id: u32,
    pub round: u32,
    pub roster_digest: [u8; 8],
    pub payload: FixedPointVector,
}

pub const HEADER_LEN: usize = 16;

impl MaskedUpdate {
    /// Wire layout: `partner_id: u32 LE | round: u32 LE | roster_digest: 8
    /// bytes | payload: u64 LE ...`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.payload.len());
        out.extend_from_slice(&self.partner_id.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.roster_digest);
        for v in self.payload.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || (bytes.len() - HEADER_LEN) % 8 != 0 {
            return Err(Error::protocol(format!("malformed message of {} bytes", bytes.len())));
        }
        let partner_id = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let round = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let roster_digest: [u8; 8] = bytes[8..16].try_into().unwrap();
        let values = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { partner_id, round, roster_digest, payload: FixedPointVector::from_values(values) })
    }
}

fn add_stream(payload: &mut [u64], seed: &Seed, round: u32, sign_positive: bool) {
    let mut r = prf_stream(seed, round);
    for v in payload.iter_mut() {
        let m = r.next_u64();
        *v = if sign_positive { v.wrapping_add(m) } else { v.wrapping_sub(m) };
    }
}

/// Encodes and masks `update` for partner `partner` in `round`.
pub fn mask(update: &[f64], partner: u32, round: u32, keyring: &MaskKeyring, roster: &[u32]) -> Result<MaskedUpdate> {
    if !roster.contains(&partner) {
        return Err(Error::protocol(format!("partner {partner} not in roster")));
    }
    if keyring.owner().is_some_and(|o| o != partner) {
        return Err(Error::protocol(format!("keyring does not belong to partner {partner}")));
    }
    let mut payload = FixedPointVector::encode(update);
    let mut peers = roster.to_vec();
    peers.sort_unstable();
    peers.dedup();
    for &v in peers.iter().filter(|&&v| v != partner) {
        let seed = keyring
            .pair_seed(partner, v)
            .ok_or_else(|| Error::protocol(format!("no mask seed for pair ({partner}, {v})")))?;
        add_stream(&mut payload.values, seed, round, v > partner);
    }
    if let Some(g) = keyring.group_seed() {
        add_stream(&mut payload.values, g, round, true);
    }
    Ok(MaskedUpdate { partner_id: partner, round, roster_digest: roster_digest(&peers), payload })
}

/// Coordinatewise modular sum of consistent messages.
pub fn aggregate(messages: &[MaskedUpdate]) -> Result<FixedPointVector> {
    let first = messages.first().ok_or_else(|| Error::protocol("no messages to aggregate"))?;
    let mut seen = Vec::with_capacity(messages.len());
    let mut sum = FixedPointVector::zeros(first.payload.len());
    for m in messages {
        if m.payload.len() != first.payload.len() {
            return Err(Error::protocol(format!(
                "partner {} sent {} coordinates, expected {}",
                m.partner_id,
                m.payload.len(),
                first.payload.len()
            )));
        }
        if m.round != first.round {
            return Err(Error::protocol(format!("partner {} sent round {}, expected {}", m.partner_id, m.round, first.round)));
        }
        if m.roster_digest != first.roster_digest {
            return Err(Error::protocol(format!("partner {} masked for a different roster", m.partner_id)));
        }
        if seen.contains(&m.partner_id) {
            return Err(Error::protocol(format!("duplicate message from partner {}", m.partner_id)));
        }
        seen.push(m.partner_id);
        sum.wrapping_add_assign(&m.payload);
    }
    Ok(sum)
}

/// [`aggregate`] plus a completeness check against the expected roster.
pub fn aggregate_round(messages: &[MaskedUpdate], roster: &[u32]) -> Result<FixedPointVector> {
    let digest = roster_digest(roster);
    let mut expected = roster.to_vec();
    expected.sort_unstable();
    expected.dedup();
    let mut got: Vec<u32> = messages.iter().map(|m| m.partner_id).collect();
    got.sort_unstable();
    if got != expected {
        return Err(Error::protocol(format!("roster {expected:?} but messages from {got:?}")));
    }
    if let Some(m) = messages.iter().find(|m| m.roster_digest != digest) {
        return Err(Error::protocol(format!("partner {} masked for a different roster", m.partner_id)));
    }
    aggregate(messages)
}

/// Removes `roster_size` copies of the group mask (if any) and decodes.
pub fn unblind(agg: &FixedPointVector, group: Option<&Seed>, round: u32, roster_size: usize) -> Vec<f64> {
    match group {
        None => agg.decode(),
        Some(seed) => {
            let mut r = prf_stream(seed, round);
            let k = roster_size as u64;
            agg.values()
                .iter()
                .map(|&v| decode_value(v.wrapping_sub(r.next_u64().wrapping_mul(k))))
                .collect()
        }
    }
}
