//! Beaver triples: the trusted dealer, per-party stores, budgets and the
//! `SEDT` store file format.

use std::fmt;
use std::io::{Read, Write};
use std::ops::{Add, Mul};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PartyId, Ring};
use crate::error::{Error, ProtocolError, Result};

pub const STORE_MAGIC: &[u8; 4] = b"SEDT";
pub const STORE_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum RingTag {
    Z2 = 0,
    Z2l = 1,
}

impl RingTag {
    fn slot(self) -> usize {
        self as usize
    }

    fn from_u8(v: u8) -> Option<RingTag> {
        match v {
            0 => Some(RingTag::Z2),
            1 => Some(RingTag::Z2l),
            _ => None,
        }
    }
}

impl fmt::Display for RingTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RingTag::Z2 => f.write_str("Z2"),
            RingTag::Z2l => f.write_str("Z2l"),
        }
    }
}

/// One party's share of a triple `(t1, t2, t3 = t1 * t2)`.
///
/// The serial is the triple's position in the dealer output; both parties
/// must consume the same serial in the same multiplication.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TripleShare {
    pub serial: u64,
    pub t1: u64,
    pub t2: u64,
    pub t3: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleBudget {
    pub z2_triples: usize,
    pub z2l_triples: usize,
}

impl TripleBudget {
    pub fn new(z2_triples: usize, z2l_triples: usize) -> Self {
        TripleBudget {
            z2_triples,
            z2l_triples,
        }
    }

    pub fn covers(&self, other: &TripleBudget) -> bool {
        self.z2_triples >= other.z2_triples && self.z2l_triples >= other.z2l_triples
    }
}

impl Add for TripleBudget {
    type Output = TripleBudget;
    fn add(self, rhs: TripleBudget) -> TripleBudget {
        TripleBudget {
            z2_triples: self.z2_triples + rhs.z2_triples,
            z2l_triples: self.z2l_triples + rhs.z2l_triples,
        }
    }
}

impl Mul<usize> for TripleBudget {
    type Output = TripleBudget;
    fn mul(self, k: usize) -> TripleBudget {
        TripleBudget {
            z2_triples: self.z2_triples * k,
            z2l_triples: self.z2l_triples * k,
        }
    }
}

/// Triples consumed by one secure comparison at width `bits`.
///
/// Z2: `l` AND gates for the generate signals, two ANDs per full carry node
/// (`l/2 - 1` at the first level, then `l/4 + ... + 2`), and one AND for the
/// final carry. Z2l: one for the bit-to-arithmetic conversion.
pub fn scmp_budget(bits: u32) -> Result<TripleBudget> {
    let l = Ring::for_comparison(bits)?.bits() as usize;
    Ok(TripleBudget::new(3 * l - 5, 1))
}

/// Worst-case per-sample budget (every sample passes the threshold check),
/// exact for the sequential strategy and an upper bound for the tournament.
pub fn per_sample_budget(bits: u32, classes: usize) -> Result<TripleBudget> {
    if classes < 2 {
        return Err(Error::usage(format!("need at least 2 classes, got {classes}")));
    }
    let cmp = scmp_budget(bits)?;
    let n = classes;
    // phase 1: N-1 compares + N-1 selects; phase 2: one compare;
    // phase 3: N-1 compares, N-2 value selects, N-2 shared-index selects.
    let compares = 2 * (n - 1) + 1;
    let selects = (n - 1) + 2 * (n - 2);
    Ok(cmp * compares + TripleBudget::new(0, selects))
}

pub fn count_triples(bits: u32, classes: usize, samples: usize) -> Result<TripleBudget> {
    Ok(per_sample_budget(bits, classes)? * samples)
}

/// One server's pre-dealt triples.
#[derive(Clone, Debug)]
pub struct TripleStore {
    party: PartyId,
    ring: Ring,
    triples: [Vec<TripleShare>; 2],
    next: [usize; 2],
    consumed: [Vec<bool>; 2],
}

impl TripleStore {
    pub fn empty(party: PartyId, ring: Ring) -> Self {
        TripleStore {
            party,
            ring,
            triples: [Vec::new(), Vec::new()],
            next: [0, 0],
            consumed: [Vec::new(), Vec::new()],
        }
    }

    fn from_parts(party: PartyId, ring: Ring, z2: Vec<TripleShare>, z2l: Vec<TripleShare>) -> Self {
        let consumed = [vec![false; z2.len()], vec![false; z2l.len()]];
        TripleStore {
            party,
            ring,
            triples: [z2, z2l],
            next: [0, 0],
            consumed,
        }
    }

    pub fn party(&self) -> PartyId {
        self.party
    }

    pub fn ring(&self) -> Ring {
        self.ring
    }

    pub fn len(&self, tag: RingTag) -> usize {
        self.triples[tag.slot()].len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.iter().all(Vec::is_empty)
    }

    pub fn remaining(&self, tag: RingTag) -> usize {
        self.len(tag) - self.next[tag.slot()]
    }

    pub fn remaining_budget(&self) -> TripleBudget {
        TripleBudget::new(self.remaining(RingTag::Z2), self.remaining(RingTag::Z2l))
    }

    pub fn consumed_count(&self, tag: RingTag) -> usize {
        self.consumed[tag.slot()].iter().filter(|&&c| c).count()
    }

    pub fn triples(&self, tag: RingTag) -> &[TripleShare] {
        &self.triples[tag.slot()]
    }

    /// Hand out the next `n` triples in dealer order. Consumption is
    /// recorded separately by [`TripleStore::consume`].
    pub fn take(&mut self, tag: RingTag, n: usize) -> Result<Vec<TripleShare>> {
        let slot = tag.slot();
        let available = self.remaining(tag);
        if n > available {
            return Err(ProtocolError::TripleExhausted {
                ring: tag,
                needed: n,
                available,
            }
            .into());
        }
        let start = self.next[slot];
        self.next[slot] += n;
        Ok(self.triples[slot][start..start + n].to_vec())
    }

    pub fn consume(&mut self, tag: RingTag, serial: u64) -> Result<()> {
        let flags = &mut self.consumed[tag.slot()];
        let flag = flags.get_mut(serial as usize).ok_or_else(|| {
            ProtocolError::Malformed(format!("{tag} triple #{serial} not in {}'s store", self.party))
        })?;
        if *flag {
            return Err(ProtocolError::TripleReused { ring: tag, serial }.into());
        }
        *flag = true;
        Ok(())
    }

    /// Write both rings as two consecutive `SEDT` blocks (Z2 first).
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        write_block(&mut w, RingTag::Z2, 1, self.triples(RingTag::Z2))?;
        write_block(&mut w, RingTag::Z2l, self.ring.bits(), self.triples(RingTag::Z2l))?;
        Ok(())
    }

    pub fn load<R: Read>(mut r: R, party: PartyId) -> Result<Self> {
        let (tag0, _, z2) = read_block(&mut r)?;
        let (tag1, bits, z2l) = read_block(&mut r)?;
        if tag0 != RingTag::Z2 || tag1 != RingTag::Z2l {
            return Err(Error::usage("triple store blocks out of order"));
        }
        Ok(TripleStore::from_parts(party, Ring::new(bits)?, z2, z2l))
    }
}

fn write_block<W: Write>(w: &mut W, tag: RingTag, bits: u32, triples: &[TripleShare]) -> Result<()> {
    w.write_all(STORE_MAGIC)?;
    w.write_all(&[STORE_VERSION, tag as u8, bits as u8])?;
    w.write_all(&(triples.len() as u64).to_le_bytes())?;
    let width = bits.div_ceil(8) as usize;
    let mut buf = Vec::with_capacity(triples.len() * 3 * width);
    for t in triples {
        for v in [t.t1, t.t2, t.t3] {
            buf.extend_from_slice(&v.to_le_bytes()[..width]);
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_block<R: Read>(r: &mut R) -> Result<(RingTag, u32, Vec<TripleShare>)> {
    let mut head = [0u8; 15];
    r.read_exact(&mut head)?;
    if &head[..4] != STORE_MAGIC {
        return Err(Error::usage("not a triple store (bad magic)"));
    }
    if head[4] != STORE_VERSION {
        return Err(Error::usage(format!("unsupported store version {}", head[4])));
    }
    let tag = RingTag::from_u8(head[5])
        .ok_or_else(|| Error::usage(format!("unknown ring tag {}", head[5])))?;
    let bits = u32::from(head[6]);
    if bits == 0 || bits > 64 {
        return Err(Error::usage(format!("bad element width {bits}")));
    }
    let count = u64::from_le_bytes(head[7..15].try_into().expect("8 bytes"));
    let width = bits.div_ceil(8) as usize;
    let mut body = vec![0u8; count as usize * 3 * width];
    r.read_exact(&mut body)?;
    let read = |chunk: &[u8]| {
        let mut le = [0u8; 8];
        le[..width].copy_from_slice(chunk);
        u64::from_le_bytes(le)
    };
    let triples = body
        .chunks_exact(3 * width)
        .enumerate()
        .map(|(i, c)| TripleShare {
            serial: i as u64,
            t1: read(&c[..width]),
            t2: read(&c[width..2 * width]),
            t3: read(&c[2 * width..]),
        })
        .collect();
    Ok((tag, bits, triples))
}

/// Trusted-dealer triple generation, run by the requester offline.
pub fn deal_triples<R: Rng + ?Sized>(
    budget: TripleBudget,
    ring: Ring,
    rng: &mut R,
) -> [TripleStore; 2] {
    let mut z2 = [
        Vec::with_capacity(budget.z2_triples),
        Vec::with_capacity(budget.z2_triples),
    ];
    for serial in 0..budget.z2_triples as u64 {
        let bits: u64 = rng.gen();
        let (t1, t2) = (bits & 1, (bits >> 1) & 1);
        let t3 = t1 & t2;
        let (r1, r2, r3) = ((bits >> 2) & 1, (bits >> 3) & 1, (bits >> 4) & 1);
        z2[0].push(TripleShare { serial, t1: t1 ^ r1, t2: t2 ^ r2, t3: t3 ^ r3 });
        z2[1].push(TripleShare { serial, t1: r1, t2: r2, t3: r3 });
    }
    let mut z2l = [
        Vec::with_capacity(budget.z2l_triples),
        Vec::with_capacity(budget.z2l_triples),
    ];
    for serial in 0..budget.z2l_triples as u64 {
        let t1 = ring.random(rng);
        let t2 = ring.random(rng);
        let t3 = ring.mul(t1, t2);
        let [r1, r2, r3] = [(); 3].map(|_| ring.random(rng));
        z2l[0].push(TripleShare {
            serial,
            t1: ring.sub(t1, r1),
            t2: ring.sub(t2, r2),
            t3: ring.sub(t3, r3),
        });
        z2l[1].push(TripleShare { serial, t1: r1, t2: r2, t3: r3 });
    }
    let [z2a, z2b] = z2;
    let [z2la, z2lb] = z2l;
    [
        TripleStore::from_parts(PartyId::P0, ring, z2a, z2la),
        TripleStore::from_parts(PartyId::P1, ring, z2b, z2lb),
    ]
}
