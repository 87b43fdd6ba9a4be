//! Boolean-shared gadgets: carry-lookahead MSB extraction, secure comparison,
//! bit-to-arithmetic conversion and oblivious selection.
//!
//! Every gadget works on a batch; a batch of any size costs the same number
//! of rounds as a single element, which is what the tournament strategy in
//! [`crate::protocol`] relies on.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ring::{note_reconstruction, Engine, PartyId, Ring, SharedBits, SharedVec};
use crate::simnet::Step;

/// One party's share of a bit over `Z_2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BitShare {
    pub bit: u8,
    pub party: PartyId,
}

pub fn share_bit<R: Rng + ?Sized>(bit: u8, rng: &mut R) -> (BitShare, BitShare) {
    let r = rng.gen::<u8>() & 1;
    (
        BitShare { bit: (bit & 1) ^ r, party: PartyId::P0 },
        BitShare { bit: r, party: PartyId::P1 },
    )
}

pub fn reconstruct_bit(s0: BitShare, s1: BitShare) -> Result<u8> {
    if s0.party != PartyId::P0 || s1.party != PartyId::P1 {
        return Err(Error::usage("reconstruct_bit expects shares of S0 then S1"));
    }
    note_reconstruction(1);
    Ok(s0.bit ^ s1.bit)
}

/// Carry generate (`g`) and propagate (`p`) signals for a batch of carry-tree
/// nodes. On plaintext input bits `a, b`: `G = a & b`, `P = a ^ b`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GpBatch {
    pub g: SharedBits,
    pub p: SharedBits,
}

impl GpBatch {
    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    fn gather(&self, idx: &[usize]) -> GpBatch {
        GpBatch {
            g: self.g.gather(idx),
            p: self.p.gather(idx),
        }
    }

    fn concat(&self, other: &GpBatch) -> GpBatch {
        GpBatch {
            g: self.g.concat(&other.g),
            p: self.p.concat(&other.p),
        }
    }
}

/// `hi ∘ lo`: `G* = G'' + G'·P''`, `P* = P'·P''` where `hi = (G'', P'')`
/// covers the more significant bits. Two ANDs per node, one round.
pub fn gp_combine(engine: &mut Engine<'_>, step: Step, hi: &GpBatch, lo: &GpBatch) -> Result<GpBatch> {
    let n = hi.len();
    if lo.len() != n {
        return Err(Error::usage("gp_combine operands differ in length"));
    }
    let x = lo.g.concat(&lo.p);
    let y = hi.p.concat(&hi.p);
    let prod = engine.beaver_and(step, &x, &y)?;
    let (gp, pp) = prod.split_at(n);
    Ok(GpBatch {
        g: hi.g.xor(&gp),
        p: pp,
    })
}

fn bits_of(values: &[u64], l: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * l);
    for &v in values {
        out.extend((0..l).map(|j| ((v >> j) & 1) as u8));
    }
    out
}

/// Secure MSB of each element of `f`.
///
/// S0 feeds the bits of its share as `x`, S1 the bits of its share as `y`;
/// the carry into bit `l-1` comes out of a `log2 l`-level tree over bits
/// `0..l-1` and the MSB is `x_{l-1} ^ y_{l-1} ^ c_{l-1}`. Costs
/// `1 + log2 l` rounds and `3l - 5` AND triples per element.
pub fn msb_extract(engine: &mut Engine<'_>, f: &SharedVec) -> Result<SharedBits> {
    let ring = Ring::for_comparison(engine.ring().bits())?;
    let l = ring.bits() as usize;
    let levels = l.trailing_zeros() as usize;
    let m = f.len();
    if m == 0 {
        return Ok(SharedBits::default());
    }

    let zeros = vec![0u8; m * l];
    let x = SharedBits::from_parts(bits_of(f.part(PartyId::P0), l), zeros.clone())?;
    let y = SharedBits::from_parts(zeros, bits_of(f.part(PartyId::P1), l))?;

    let g = engine.beaver_and(Step::AndGates, &x, &y)?;
    let p = x.xor(&y);
    let leaves = GpBatch { g, p: p.clone() };

    // Level 1: node 0 is bit 0 alone, node k pairs bits (2k, 2k-1).
    let half = l / 2;
    let hi: Vec<usize> = (0..m)
        .flat_map(|v| (1..half).map(move |k| v * l + 2 * k))
        .collect();
    let lo: Vec<usize> = hi.iter().map(|i| i - 1).collect();
    let paired = gp_combine(
        engine,
        Step::CarryLevel(1),
        &leaves.gather(&hi),
        &leaves.gather(&lo),
    )?;
    let node0: Vec<usize> = (0..m).map(|v| v * l).collect();
    let stacked = leaves.gather(&node0).concat(&paired);
    let order: Vec<usize> = (0..m)
        .flat_map(|v| (0..half).map(move |k| if k == 0 { v } else { m + v * (half - 1) + k - 1 }))
        .collect();
    let mut level = stacked.gather(&order);
    let mut width = half;

    for t in 2..levels {
        let next = width / 2;
        let hi: Vec<usize> = (0..m)
            .flat_map(|v| (0..next).map(move |k| v * width + 2 * k + 1))
            .collect();
        let lo: Vec<usize> = hi.iter().map(|i| i - 1).collect();
        level = gp_combine(
            engine,
            Step::CarryLevel(t as u8),
            &level.gather(&hi),
            &level.gather(&lo),
        )?;
        width = next;
    }
    debug_assert_eq!(width, 2);

    // Last level only needs the carry: G_1 + G_0 * P_1.
    let idx0: Vec<usize> = (0..m).map(|v| 2 * v).collect();
    let idx1: Vec<usize> = (0..m).map(|v| 2 * v + 1).collect();
    let prod = engine.beaver_and(
        Step::CarryLevel(levels as u8),
        &level.g.gather(&idx0),
        &level.p.gather(&idx1),
    )?;
    let carry = level.g.gather(&idx1).xor(&prod);

    let top: Vec<usize> = (0..m).map(|v| v * l + l - 1).collect();
    Ok(p.gather(&top).xor(&carry))
}

/// Lift Z2-shared bits into `Z_{2^l}`: `e = p1 + p2 - 2·p1·p2` with S0's
/// share as `p1` and S1's as `p2`. One round, one Z2l triple per bit.
pub fn bit_to_arith(engine: &mut Engine<'_>, bits: &SharedBits) -> Result<SharedVec> {
    let ring = engine.ring();
    let m = bits.len();
    let own = |p: PartyId| bits.part(p).iter().map(|&b| u64::from(b)).collect::<Vec<_>>();
    let p1 = SharedVec::from_parts(own(PartyId::P0), vec![0; m])?;
    let p2 = SharedVec::from_parts(vec![0; m], own(PartyId::P1))?;
    let prod = engine.beaver_mul(Step::BitToArith, &p1, &p2)?;
    Ok(p1.add(ring, &p2).sub(ring, &prod.mul_public(ring, 2)))
}

/// Secure comparison: element-wise `e = 1` iff `a < b` (signed), else 0,
/// shared over `Z_{2^l}`. Requires `|a - b| < 2^(l-1)`. Costs
/// `log2 l + 2` rounds.
pub fn scmp(engine: &mut Engine<'_>, a: &SharedVec, b: &SharedVec) -> Result<SharedVec> {
    if a.len() != b.len() {
        return Err(Error::usage("scmp operands differ in length"));
    }
    let f = a.sub(engine.ring(), b);
    let msb = msb_extract(engine, &f)?;
    bit_to_arith(engine, &msb)
}

/// `d = a + e·(b - a)`: the larger of `a, b` given `e = scmp(a, b)`, ties
/// keeping `a`. One Z2l triple per element.
pub fn oblivious_select_max(
    engine: &mut Engine<'_>,
    a: &SharedVec,
    b: &SharedVec,
    e: &SharedVec,
) -> Result<SharedVec> {
    let ring = engine.ring();
    let diff = b.sub(ring, a);
    let prod = engine.beaver_mul(Step::Select, e, &diff)?;
    Ok(a.add(ring, &prod))
}

/// `s = p + z·(q - p)` for public indices: local, no triples, no rounds.
pub fn oblivious_select_index(ring: Ring, p: u64, q: u64, z: &SharedVec) -> SharedVec {
    let n = z.len();
    z.mul_public(ring, ring.sub(q, p)).add_public(ring, &vec![p; n])
}
