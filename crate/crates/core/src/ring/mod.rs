//! Arithmetic over `Z_{2^l}` and 2-of-2 additive secret sharing.
//!
//! Values are carried in a `u64` and reduced by the ring's mask after every
//! operation, so any width `1..=64` works; the comparison gadget further
//! requires a power of two of at least 4.

mod beaver;
mod triples;

use std::cell::Cell;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use beaver::{Engine, SharedBits, SharedVec};
pub use triples::{
    count_triples, deal_triples, per_sample_budget, scmp_budget, RingTag, TripleBudget,
    TripleShare, TripleStore, STORE_MAGIC, STORE_VERSION,
};

pub const DEFAULT_RING_BITS: u32 = 64;

/// Ring `Z_{2^bits}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ring {
    bits: u32,
}

impl Ring {
    pub fn new(bits: u32) -> Result<Self> {
        if bits == 0 || bits > 64 {
            return Err(Error::usage(format!("ring width must be in 1..=64, got {bits}")));
        }
        Ok(Ring { bits })
    }

    /// Width accepted by the comparison gadget.
    pub fn for_comparison(bits: u32) -> Result<Self> {
        if !bits.is_power_of_two() || !(4..=64).contains(&bits) {
            return Err(Error::usage(format!(
                "comparison ring width must be a power of two in 4..=64, got {bits}"
            )));
        }
        Ring::new(bits)
    }

    #[inline]
    pub const fn bits(self) -> u32 {
        self.bits
    }

    #[inline]
    pub const fn mask(self) -> u64 {
        if self.bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.bits) - 1
        }
    }

    /// Wire width of one element.
    #[inline]
    pub const fn byte_width(self) -> usize {
        self.bits.div_ceil(8) as usize
    }

    #[inline]
    pub fn reduce(self, v: u64) -> u64 {
        v & self.mask()
    }

    #[inline]
    pub fn add(self, a: u64, b: u64) -> u64 {
        a.wrapping_add(b) & self.mask()
    }

    #[inline]
    pub fn sub(self, a: u64, b: u64) -> u64 {
        a.wrapping_sub(b) & self.mask()
    }

    #[inline]
    pub fn mul(self, a: u64, b: u64) -> u64 {
        a.wrapping_mul(b) & self.mask()
    }

    #[inline]
    pub fn neg(self, a: u64) -> u64 {
        a.wrapping_neg() & self.mask()
    }

    /// Two's-complement embedding; wraps values outside the signed range.
    #[inline]
    pub fn from_signed(self, v: i64) -> u64 {
        (v as u64) & self.mask()
    }

    /// Two's-complement reading of a reduced element.
    #[inline]
    pub fn to_signed(self, v: u64) -> i64 {
        let shift = 64 - self.bits;
        ((v << shift) as i64) >> shift
    }

    /// Largest magnitude `m` with `-m..m` representable as signed.
    pub fn signed_half(self) -> u128 {
        1u128 << (self.bits - 1)
    }

    #[inline]
    pub fn msb(self, v: u64) -> u8 {
        ((v >> (self.bits - 1)) & 1) as u8
    }

    pub fn random<R: Rng + ?Sized>(self, rng: &mut R) -> u64 {
        rng.gen::<u64>() & self.mask()
    }

    pub fn element(self, v: u64) -> RingElement {
        RingElement::new(self, v)
    }
}

impl Default for Ring {
    fn default() -> Self {
        Ring {
            bits: DEFAULT_RING_BITS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RingElement {
    value: u64,
    ring: Ring,
}

impl RingElement {
    pub fn new(ring: Ring, value: u64) -> Self {
        RingElement {
            value: ring.reduce(value),
            ring,
        }
    }

    pub fn from_signed(ring: Ring, v: i64) -> Self {
        RingElement {
            value: ring.from_signed(v),
            ring,
        }
    }

    #[inline]
    pub fn value(self) -> u64 {
        self.value
    }

    #[inline]
    pub fn ring(self) -> Ring {
        self.ring
    }

    pub fn to_signed(self) -> i64 {
        self.ring.to_signed(self.value)
    }
}

impl fmt::Display for RingElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (mod 2^{})", self.value, self.ring.bits)
    }
}

macro_rules! ring_binop {
    ($tr:ident, $method:ident) => {
        impl $tr for RingElement {
            type Output = RingElement;
            fn $method(self, rhs: RingElement) -> RingElement {
                assert_eq!(self.ring, rhs.ring, "mixed ring widths");
                RingElement {
                    value: self.ring.$method(self.value, rhs.value),
                    ring: self.ring,
                }
            }
        }
    };
}

ring_binop!(Add, add);
ring_binop!(Sub, sub);
ring_binop!(Mul, mul);

impl Neg for RingElement {
    type Output = RingElement;
    fn neg(self) -> RingElement {
        RingElement {
            value: self.ring.neg(self.value),
            ring: self.ring,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PartyId {
    P0,
    P1,
}

impl PartyId {
    pub const BOTH: [PartyId; 2] = [PartyId::P0, PartyId::P1];

    #[inline]
    pub const fn index(self) -> usize {
        match self {
            PartyId::P0 => 0,
            PartyId::P1 => 1,
        }
    }

    pub const fn other(self) -> PartyId {
        match self {
            PartyId::P0 => PartyId::P1,
            PartyId::P1 => PartyId::P0,
        }
    }

    pub fn from_index(i: usize) -> Result<PartyId> {
        match i {
            0 => Ok(PartyId::P0),
            1 => Ok(PartyId::P1),
            _ => Err(Error::usage(format!("no party {i}"))),
        }
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.index())
    }
}

/// One party's additive share.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Share {
    pub element: RingElement,
    pub party: PartyId,
}

impl Share {
    pub fn new(party: PartyId, element: RingElement) -> Self {
        Share { element, party }
    }
}

thread_local! {
    static RECONSTRUCTIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of plaintext reconstructions performed on this thread so far.
///
/// Every path that turns shares back into a value bumps this counter, which
/// is what the leakage audit reads.
pub fn reconstruction_count() -> u64 {
    RECONSTRUCTIONS.with(Cell::get)
}

pub(crate) fn note_reconstruction(n: usize) {
    RECONSTRUCTIONS.with(|c| c.set(c.get() + n as u64));
}

/// Split `secret` into `(secret - r, r)` with `r` uniform.
pub fn share<R: Rng + ?Sized>(secret: RingElement, rng: &mut R) -> (Share, Share) {
    let ring = secret.ring();
    let r = ring.element(ring.random(rng));
    (
        Share::new(PartyId::P0, secret - r),
        Share::new(PartyId::P1, r),
    )
}

pub fn reconstruct(s0: Share, s1: Share) -> Result<RingElement> {
    if s0.party != PartyId::P0 || s1.party != PartyId::P1 {
        return Err(Error::usage(format!(
            "reconstruct expects shares of S0 then S1, got {} and {}",
            s0.party, s1.party
        )));
    }
    if s0.element.ring() != s1.element.ring() {
        return Err(Error::usage("shares live in different rings"));
    }
    note_reconstruction(1);
    Ok(s0.element + s1.element)
}

fn same_holder(a: &Share, b: &Share) -> Result<()> {
    if a.party != b.party {
        return Err(Error::usage(format!(
            "local op on shares held by {} and {}",
            a.party, b.party
        )));
    }
    if a.element.ring() != b.element.ring() {
        return Err(Error::usage("local op across ring widths"));
    }
    Ok(())
}

pub fn add_local(a: Share, b: Share) -> Result<Share> {
    same_holder(&a, &b)?;
    Ok(Share::new(a.party, a.element + b.element))
}

pub fn sub_local(a: Share, b: Share) -> Result<Share> {
    same_holder(&a, &b)?;
    Ok(Share::new(a.party, a.element - b.element))
}

pub fn mul_const(a: Share, c: RingElement) -> Result<Share> {
    if a.element.ring() != c.ring() {
        return Err(Error::usage("constant from a different ring"));
    }
    Ok(Share::new(a.party, a.element * c))
}

/// Add a public constant: only S0 moves its share.
pub fn add_public(a: Share, c: RingElement) -> Result<Share> {
    if a.element.ring() != c.ring() {
        return Err(Error::usage("constant from a different ring"));
    }
    Ok(match a.party {
        PartyId::P0 => Share::new(a.party, a.element + c),
        PartyId::P1 => a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::mock::StepRng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn zero_secret_wraps() {
        let ring = Ring::new(8).unwrap();
        // StepRng yields 5 as its first u64; low 8 bits are 5.
        let mut rng = StepRng::new(5, 0);
        let (s0, s1) = share(ring.element(0), &mut rng);
        assert_eq!(s0.element.value(), 251);
        assert_eq!(s1.element.value(), 5);
        assert_eq!(reconstruct(s0, s1).unwrap().value(), 0);
    }

    #[test]
    fn round_trip_many() {
        let ring = Ring::default();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..100_000 {
            let x = ring.element(rng.gen());
            let (a, b) = share(x, &mut rng);
            assert_eq!(reconstruct(a, b).unwrap(), x);
        }
    }

    #[test]
    fn reconstruct_rejects_bad_tags() {
        let ring = Ring::new(16).unwrap();
        let a = Share::new(PartyId::P0, ring.element(1));
        let b = Share::new(PartyId::P0, ring.element(2));
        assert!(matches!(reconstruct(a, b), Err(Error::Usage(_))));
        let c = Share::new(PartyId::P1, Ring::new(8).unwrap().element(2));
        assert!(matches!(reconstruct(a, c), Err(Error::Usage(_))));
    }

    #[test]
    fn local_ops_homomorphic() {
        let ring = Ring::default();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let x = ring.element(rng.gen());
            let y = ring.element(rng.gen());
            let c = ring.element(rng.gen());
            let (x0, x1) = share(x, &mut rng);
            let (y0, y1) = share(y, &mut rng);
            let sum = reconstruct(add_local(x0, y0).unwrap(), add_local(x1, y1).unwrap()).unwrap();
            assert_eq!(sum.value(), x.value().wrapping_add(y.value()));
            let diff = reconstruct(sub_local(x0, y0).unwrap(), sub_local(x1, y1).unwrap()).unwrap();
            assert_eq!(diff.value(), x.value().wrapping_sub(y.value()));
            let scaled =
                reconstruct(mul_const(x0, c).unwrap(), mul_const(x1, c).unwrap()).unwrap();
            assert_eq!(scaled.value(), x.value().wrapping_mul(c.value()));
            let shifted =
                reconstruct(add_public(x0, c).unwrap(), add_public(x1, c).unwrap()).unwrap();
            assert_eq!(shifted.value(), x.value().wrapping_add(c.value()));
        }
    }

    #[test]
    fn identities() {
        let ring = Ring::new(32).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let x = ring.element(123_456);
        let (x0, x1) = share(x, &mut rng);
        let (z0, z1) = share(ring.element(0), &mut rng);
        let s = reconstruct(add_local(x0, z0).unwrap(), add_local(x1, z1).unwrap()).unwrap();
        assert_eq!(s, x);
        let one = ring.element(1);
        let m = reconstruct(mul_const(x0, one).unwrap(), mul_const(x1, one).unwrap()).unwrap();
        assert_eq!(m, x);
    }

    #[test]
    fn cross_party_local_op_rejected() {
        let ring = Ring::new(8).unwrap();
        let a = Share::new(PartyId::P0, ring.element(1));
        let b = Share::new(PartyId::P1, ring.element(1));
        assert!(add_local(a, b).is_err());
        assert!(sub_local(a, b).is_err());
    }

    #[test]
    fn signed_view() {
        let ring = Ring::new(8).unwrap();
        assert_eq!(ring.to_signed(255), -1);
        assert_eq!(ring.to_signed(128), -128);
        assert_eq!(ring.to_signed(127), 127);
        assert_eq!(ring.from_signed(-15), 241);
        let r64 = Ring::default();
        assert_eq!(r64.to_signed(r64.from_signed(i64::MIN)), i64::MIN);
    }

    #[test]
    fn width_validation() {
        assert!(Ring::new(0).is_err());
        assert!(Ring::new(65).is_err());
        assert!(Ring::for_comparison(24).is_err());
        assert!(Ring::for_comparison(2).is_err());
        assert!(Ring::for_comparison(8).is_ok());
    }
}
