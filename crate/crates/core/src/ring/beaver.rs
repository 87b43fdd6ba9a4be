//! The two-server engine: shared vectors and Beaver multiplication.
//!
//! Both servers run in lockstep inside one [`Engine`]. Each server's state is
//! kept in its own slot (`parts[0]`, `parts[1]`, `stores[0]`, ...) and the
//! per-party code paths only read their own slot plus what the fabric
//! delivered, so the only cross-party data flow is through
//! [`Session::exchange`].

use rand::Rng;

use super::triples::{RingTag, TripleShare, TripleStore};
use super::{note_reconstruction, PartyId, Ring};
use crate::error::{Error, ProtocolError, Result};
use crate::simnet::{Audience, Payload, Phase, Session, Step};

/// A vector secret-shared over `Z_{2^l}`; `parts[i]` is server `i`'s share.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SharedVec {
    parts: [Vec<u64>; 2],
}

impl SharedVec {
    pub fn from_parts(p0: Vec<u64>, p1: Vec<u64>) -> Result<Self> {
        if p0.len() != p1.len() {
            return Err(Error::usage(format!(
                "share vectors differ in length ({} vs {})",
                p0.len(),
                p1.len()
            )));
        }
        Ok(SharedVec { parts: [p0, p1] })
    }

    /// Trivial sharing of public values: S0 holds them, S1 holds zeros.
    pub fn public(ring: Ring, values: &[u64]) -> Self {
        SharedVec {
            parts: [
                values.iter().map(|&v| ring.reduce(v)).collect(),
                vec![0; values.len()],
            ],
        }
    }

    /// Fresh random sharing, for tests and dealers.
    pub fn share<R: Rng + ?Sized>(ring: Ring, values: &[u64], rng: &mut R) -> Self {
        let r: Vec<u64> = values.iter().map(|_| ring.random(rng)).collect();
        let p0 = values.iter().zip(&r).map(|(&v, &r)| ring.sub(v, r)).collect();
        SharedVec { parts: [p0, r] }
    }

    pub fn len(&self) -> usize {
        self.parts[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts[0].is_empty()
    }

    pub fn part(&self, party: PartyId) -> &[u64] {
        &self.parts[party.index()]
    }

    pub fn into_parts(self) -> [Vec<u64>; 2] {
        self.parts
    }

    fn zip_with(&self, other: &SharedVec, f: impl Fn(u64, u64) -> u64) -> SharedVec {
        assert_eq!(self.len(), other.len(), "shared vectors differ in length");
        SharedVec {
            parts: [0, 1].map(|p| {
                self.parts[p]
                    .iter()
                    .zip(&other.parts[p])
                    .map(|(&a, &b)| f(a, b))
                    .collect()
            }),
        }
    }

    pub fn add(&self, ring: Ring, other: &SharedVec) -> SharedVec {
        self.zip_with(other, |a, b| ring.add(a, b))
    }

    pub fn sub(&self, ring: Ring, other: &SharedVec) -> SharedVec {
        self.zip_with(other, |a, b| ring.sub(a, b))
    }

    pub fn mul_public(&self, ring: Ring, c: u64) -> SharedVec {
        SharedVec {
            parts: [0, 1].map(|p| self.parts[p].iter().map(|&a| ring.mul(a, c)).collect()),
        }
    }

    /// Add public constants (S0 only).
    pub fn add_public(&self, ring: Ring, consts: &[u64]) -> SharedVec {
        assert_eq!(self.len(), consts.len());
        let mut out = self.clone();
        for (a, &c) in out.parts[0].iter_mut().zip(consts) {
            *a = ring.add(*a, c);
        }
        out
    }

    pub fn gather(&self, idx: &[usize]) -> SharedVec {
        SharedVec {
            parts: [0, 1].map(|p| idx.iter().map(|&i| self.parts[p][i]).collect()),
        }
    }

    pub fn concat(&self, other: &SharedVec) -> SharedVec {
        SharedVec {
            parts: [0, 1].map(|p| {
                let mut v = self.parts[p].clone();
                v.extend_from_slice(&other.parts[p]);
                v
            }),
        }
    }

    pub fn split_at(&self, n: usize) -> (SharedVec, SharedVec) {
        let [a0, b0] = [&self.parts[0][..n], &self.parts[0][n..]];
        let [a1, b1] = [&self.parts[1][..n], &self.parts[1][n..]];
        (
            SharedVec { parts: [a0.to_vec(), a1.to_vec()] },
            SharedVec { parts: [b0.to_vec(), b1.to_vec()] },
        )
    }

    /// Plaintext reconstruction. Counted by [`super::reconstruction_count`].
    pub fn reconstruct(&self, ring: Ring) -> Vec<u64> {
        note_reconstruction(self.len());
        self.parts[0]
            .iter()
            .zip(&self.parts[1])
            .map(|(&a, &b)| ring.add(a, b))
            .collect()
    }
}

/// A vector of bits secret-shared over `Z_2`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SharedBits {
    parts: [Vec<u8>; 2],
}

impl SharedBits {
    pub fn from_parts(p0: Vec<u8>, p1: Vec<u8>) -> Result<Self> {
        if p0.len() != p1.len() {
            return Err(Error::usage("bit share vectors differ in length"));
        }
        if p0.iter().chain(&p1).any(|&b| b > 1) {
            return Err(Error::usage("bit shares must be 0 or 1"));
        }
        Ok(SharedBits { parts: [p0, p1] })
    }

    pub fn share<R: Rng + ?Sized>(bits: &[u8], rng: &mut R) -> Self {
        let r: Vec<u8> = bits.iter().map(|_| rng.gen::<u8>() & 1).collect();
        let p0 = bits.iter().zip(&r).map(|(&b, &r)| (b & 1) ^ r).collect();
        SharedBits { parts: [p0, r] }
    }

    pub fn len(&self) -> usize {
        self.parts[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts[0].is_empty()
    }

    pub fn part(&self, party: PartyId) -> &[u8] {
        &self.parts[party.index()]
    }

    pub fn xor(&self, other: &SharedBits) -> SharedBits {
        assert_eq!(self.len(), other.len());
        SharedBits {
            parts: [0, 1].map(|p| {
                self.parts[p]
                    .iter()
                    .zip(&other.parts[p])
                    .map(|(a, b)| a ^ b)
                    .collect()
            }),
        }
    }

    pub fn gather(&self, idx: &[usize]) -> SharedBits {
        SharedBits {
            parts: [0, 1].map(|p| idx.iter().map(|&i| self.parts[p][i]).collect()),
        }
    }

    pub fn concat(&self, other: &SharedBits) -> SharedBits {
        SharedBits {
            parts: [0, 1].map(|p| {
                let mut v = self.parts[p].clone();
                v.extend_from_slice(&other.parts[p]);
                v
            }),
        }
    }

    pub fn split_at(&self, n: usize) -> (SharedBits, SharedBits) {
        (
            SharedBits {
                parts: [0, 1].map(|p| self.parts[p][..n].to_vec()),
            },
            SharedBits {
                parts: [0, 1].map(|p| self.parts[p][n..].to_vec()),
            },
        )
    }

    pub fn reconstruct(&self) -> Vec<u8> {
        note_reconstruction(self.len());
        self.parts[0]
            .iter()
            .zip(&self.parts[1])
            .map(|(a, b)| a ^ b)
            .collect()
    }
}

/// Two lockstep servers sharing a metered session.
pub struct Engine<'s> {
    ring: Ring,
    session: &'s mut Session,
    stores: [TripleStore; 2],
}

impl<'s> Engine<'s> {
    pub fn new(ring: Ring, session: &'s mut Session, stores: [TripleStore; 2]) -> Result<Self> {
        for (i, s) in stores.iter().enumerate() {
            if s.party().index() != i {
                return Err(Error::usage("triple stores must be ordered S0, S1"));
            }
            if s.ring() != ring {
                return Err(Error::usage(format!(
                    "triple store dealt for {}-bit ring, engine uses {}",
                    s.ring().bits(),
                    ring.bits()
                )));
            }
        }
        Ok(Engine {
            ring,
            session,
            stores,
        })
    }

    pub fn ring(&self) -> Ring {
        self.ring
    }

    pub fn session(&self) -> &Session {
        self.session
    }

    pub fn session_mut(&mut self) -> &mut Session {
        self.session
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.session.set_phase(phase);
    }

    pub fn store(&self, party: PartyId) -> &TripleStore {
        &self.stores[party.index()]
    }

    pub fn into_stores(self) -> [TripleStore; 2] {
        self.stores
    }

    fn take_triples(&mut self, tag: RingTag, n: usize) -> Result<[Vec<TripleShare>; 2]> {
        // Check both stores before touching either, so exhaustion leaves no
        // half-consumed state.
        for s in &self.stores {
            if s.remaining(tag) < n {
                return Err(ProtocolError::TripleExhausted {
                    ring: tag,
                    needed: n,
                    available: s.remaining(tag),
                }
                .into());
            }
        }
        Ok([self.stores[0].take(tag, n)?, self.stores[1].take(tag, n)?])
    }

    fn consume(&mut self, tag: RingTag, triples: &[Vec<TripleShare>; 2], n: usize) -> Result<()> {
        if triples[0].len() != n || triples[1].len() != n {
            return Err(Error::usage(format!("need {n} triples per party")));
        }
        for (a, b) in triples[0].iter().zip(&triples[1]) {
            if a.serial != b.serial {
                return Err(ProtocolError::TripleMismatch {
                    ring: tag,
                    left: a.serial,
                    right: b.serial,
                }
                .into());
            }
        }
        for p in PartyId::BOTH {
            for t in &triples[p.index()] {
                self.stores[p.index()].consume(tag, t.serial)?;
            }
        }
        Ok(())
    }

    /// Element-wise product over `Z_{2^l}` in one round.
    pub fn beaver_mul(&mut self, step: Step, x: &SharedVec, y: &SharedVec) -> Result<SharedVec> {
        if x.len() != y.len() {
            return Err(Error::usage("beaver_mul operands differ in length"));
        }
        if x.is_empty() {
            return Ok(SharedVec::default());
        }
        let triples = self.take_triples(RingTag::Z2l, x.len())?;
        self.beaver_mul_with(step, x, y, triples)
    }

    /// [`Engine::beaver_mul`] with caller-supplied triples (already taken
    /// from the stores); each serial may be consumed once.
    pub fn beaver_mul_with(
        &mut self,
        step: Step,
        x: &SharedVec,
        y: &SharedVec,
        triples: [Vec<TripleShare>; 2],
    ) -> Result<SharedVec> {
        let n = x.len();
        if y.len() != n {
            return Err(Error::usage("beaver_mul operands differ in length"));
        }
        self.consume(RingTag::Z2l, &triples, n)?;
        let ring = self.ring;

        // Each party masks its operands: e_i = x_i - t1_i, f_i = y_i - t2_i.
        let masked: [Vec<u64>; 2] = [0, 1].map(|p| {
            let ts = &triples[p];
            let mut ef = Vec::with_capacity(2 * n);
            ef.extend(x.parts[p].iter().zip(ts).map(|(&v, t)| ring.sub(v, t.t1)));
            ef.extend(y.parts[p].iter().zip(ts).map(|(&v, t)| ring.sub(v, t.t2)));
            ef
        });
        let delivered = self.session.exchange(
            step,
            [Payload::ring(ring, &masked[0]), Payload::ring(ring, &masked[1])],
        )?;

        let mut out = SharedVec::default();
        for p in PartyId::BOTH {
            let i = p.index();
            let theirs = delivered[i].payload.decode_ring(ring)?;
            if theirs.len() != 2 * n {
                return Err(ProtocolError::Malformed("short beaver opening".into()).into());
            }
            let mine = &masked[i];
            out.parts[i] = triples[i]
                .iter()
                .enumerate()
                .map(|(k, t)| {
                    let e = ring.add(mine[k], theirs[k]);
                    let f = ring.add(mine[n + k], theirs[n + k]);
                    let mut z = ring.add(ring.mul(f, t.t1), ring.mul(e, t.t2));
                    z = ring.add(z, t.t3);
                    if p == PartyId::P0 {
                        z = ring.add(z, ring.mul(e, f));
                    }
                    z
                })
                .collect();
        }
        Ok(out)
    }

    /// Element-wise AND over `Z_2` in one round.
    pub fn beaver_and(&mut self, step: Step, x: &SharedBits, y: &SharedBits) -> Result<SharedBits> {
        if x.len() != y.len() {
            return Err(Error::usage("beaver_and operands differ in length"));
        }
        if x.is_empty() {
            return Ok(SharedBits::default());
        }
        let triples = self.take_triples(RingTag::Z2, x.len())?;
        self.beaver_and_with(step, x, y, triples)
    }

    pub fn beaver_and_with(
        &mut self,
        step: Step,
        x: &SharedBits,
        y: &SharedBits,
        triples: [Vec<TripleShare>; 2],
    ) -> Result<SharedBits> {
        let n = x.len();
        if y.len() != n {
            return Err(Error::usage("beaver_and operands differ in length"));
        }
        self.consume(RingTag::Z2, &triples, n)?;
        let masked: [Vec<u8>; 2] = [0, 1].map(|p| {
            let ts = &triples[p];
            let mut ef = Vec::with_capacity(2 * n);
            ef.extend(x.parts[p].iter().zip(ts).map(|(&v, t)| v ^ t.t1 as u8));
            ef.extend(y.parts[p].iter().zip(ts).map(|(&v, t)| v ^ t.t2 as u8));
            ef
        });
        let enc = self.session.z2_encoding();
        let delivered = self.session.exchange(
            step,
            [Payload::bits(enc, &masked[0]), Payload::bits(enc, &masked[1])],
        )?;
        let mut out = SharedBits::default();
        for p in PartyId::BOTH {
            let i = p.index();
            let theirs = delivered[i].payload.decode_bits()?;
            if theirs.len() != 2 * n {
                return Err(ProtocolError::Malformed("short beaver opening".into()).into());
            }
            let mine = &masked[i];
            out.parts[i] = triples[i]
                .iter()
                .enumerate()
                .map(|(k, t)| {
                    let e = mine[k] ^ theirs[k];
                    let f = mine[n + k] ^ theirs[n + k];
                    let mut z = (f & t.t1 as u8) ^ (e & t.t2 as u8) ^ t.t3 as u8;
                    if p == PartyId::P0 {
                        z ^= e & f;
                    }
                    z
                })
                .collect();
        }
        Ok(out)
    }

    /// Open a shared vector to both servers. Every call is an audited reveal.
    pub fn open(&mut self, step: Step, x: &SharedVec, label: &str) -> Result<Vec<u64>> {
        let ring = self.ring;
        let delivered = self.session.exchange(
            step,
            [Payload::ring(ring, x.part(PartyId::P0)), Payload::ring(ring, x.part(PartyId::P1))],
        )?;
        // Both servers now hold both shares; reconstruct once per server view
        // and check they agree.
        let theirs0 = delivered[0].payload.decode_ring(ring)?;
        let view0 = SharedVec::from_parts(x.part(PartyId::P0).to_vec(), theirs0)?;
        let value = view0.reconstruct(ring);
        self.session.record_reveal(Audience::Servers, label, x.len());
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::{deal_triples, TripleBudget};
    use crate::simnet::SessionConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn setup(bits: u32, z2: usize, z2l: usize, seed: u64) -> (Ring, Session, [TripleStore; 2]) {
        let ring = Ring::new(bits).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let stores = deal_triples(TripleBudget::new(z2, z2l), ring, &mut rng);
        (ring, Session::new(0, SessionConfig::default()), stores)
    }

    #[test]
    fn product_matches_plaintext_z2l() {
        let n = 10_000;
        let (ring, mut session, stores) = setup(64, 0, n, 1);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let a: Vec<u64> = (0..n).map(|_| rng.gen()).collect();
        let b: Vec<u64> = (0..n).map(|_| rng.gen()).collect();
        let x = SharedVec::share(ring, &a, &mut rng);
        let y = SharedVec::share(ring, &b, &mut rng);
        let mut engine = Engine::new(ring, &mut session, stores).unwrap();
        let z = engine.beaver_mul(Step::Multiply, &x, &y).unwrap();
        let got = z.reconstruct(ring);
        for i in 0..n {
            assert_eq!(got[i], a[i].wrapping_mul(b[i]));
        }
        assert_eq!(engine.store(PartyId::P0).consumed_count(RingTag::Z2l), n);
        assert_eq!(session.rounds(), 1);
    }

    #[test]
    fn zero_annihilates_and_one_and_one_is_one() {
        let (ring, mut session, stores) = setup(16, 1, 1, 3);
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let x = SharedVec::share(ring, &[0], &mut rng);
        let y = SharedVec::share(ring, &[12345], &mut rng);
        let mut engine = Engine::new(ring, &mut session, stores).unwrap();
        let z = engine.beaver_mul(Step::Multiply, &x, &y).unwrap();
        assert_eq!(z.reconstruct(ring), vec![0]);
        let one = SharedBits::share(&[1], &mut rng);
        let and = engine.beaver_and(Step::Multiply, &one, &one.clone()).unwrap();
        assert_eq!(and.reconstruct(), vec![1]);
    }

    #[test]
    fn and_matches_truth_table() {
        let (_, mut session, stores) = setup(8, 10_000, 0, 5);
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let a: Vec<u8> = (0..10_000).map(|_| rng.gen::<u8>() & 1).collect();
        let b: Vec<u8> = (0..10_000).map(|_| rng.gen::<u8>() & 1).collect();
        let x = SharedBits::share(&a, &mut rng);
        let y = SharedBits::share(&b, &mut rng);
        let mut engine = Engine::new(Ring::new(8).unwrap(), &mut session, stores).unwrap();
        let z = engine.beaver_and(Step::Multiply, &x, &y).unwrap().reconstruct();
        for i in 0..a.len() {
            assert_eq!(z[i], a[i] & b[i]);
        }
    }

    #[test]
    fn reused_triple_is_rejected() {
        let (ring, mut session, mut stores) = setup(32, 0, 2, 7);
        let t = [
            stores[0].take(RingTag::Z2l, 1).unwrap(),
            stores[1].take(RingTag::Z2l, 1).unwrap(),
        ];
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let x = SharedVec::share(ring, &[3], &mut rng);
        let y = SharedVec::share(ring, &[4], &mut rng);
        let mut engine = Engine::new(ring, &mut session, stores).unwrap();
        let z = engine.beaver_mul_with(Step::Multiply, &x, &y, t.clone()).unwrap();
        assert_eq!(z.reconstruct(ring), vec![12]);
        let again = engine.beaver_mul_with(Step::Multiply, &x, &y, t);
        assert!(matches!(
            again,
            Err(Error::Protocol(ProtocolError::TripleReused { serial: 0, .. }))
        ));
    }

    #[test]
    fn exhaustion_sends_nothing() {
        let (ring, mut session, stores) = setup(32, 0, 1, 9);
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let x = SharedVec::share(ring, &[1, 2], &mut rng);
        let mut engine = Engine::new(ring, &mut session, stores).unwrap();
        assert!(matches!(
            engine.beaver_mul(Step::Multiply, &x, &x.clone()),
            Err(Error::Protocol(ProtocolError::TripleExhausted { .. }))
        ));
        assert_eq!(session.rounds(), 0);
    }

    #[test]
    fn store_ring_must_match() {
        let (_, mut session, stores) = setup(32, 0, 1, 11);
        assert!(Engine::new(Ring::new(64).unwrap(), &mut session, stores).is_err());
    }
}
