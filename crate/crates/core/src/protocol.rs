//! The aggregation protocol: client sharing, the three server phases and
//! requester reconstruction, plus the plaintext oracle it must agree with.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ProtocolError, Result};
use crate::gadgets::{oblivious_select_index, oblivious_select_max, scmp};
use crate::privacy::{fixed_point_encode_signed, gauss_sample, NoiseIndex, DEFAULT_SCALE};
use crate::ring::{
    deal_triples, per_sample_budget, Engine, PartyId, Ring, SharedVec, TripleBudget, TripleStore,
    DEFAULT_RING_BITS,
};
use crate::seed;
use crate::simnet::{Audience, CommStats, Fabric, Message, Payload, Phase, RevealRecord, Session, Step};

/// A teacher's one-hot label prediction.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PredictionVector {
    bits: Vec<u8>,
}

impl PredictionVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) || bits.iter().filter(|&&b| b == 1).count() != 1 {
            return Err(Error::usage("prediction must be one-hot"));
        }
        Ok(PredictionVector { bits })
    }

    pub fn one_hot(class: usize, classes: usize) -> Result<Self> {
        if class >= classes {
            return Err(Error::usage(format!("class {class} out of range for {classes} classes")));
        }
        let mut bits = vec![0; classes];
        bits[class] = 1;
        Ok(PredictionVector { bits })
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn classes(&self) -> usize {
        self.bits.len()
    }

    pub fn class(&self) -> usize {
        self.bits.iter().position(|&b| b == 1).expect("one-hot")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AggregationOutcome {
    Consensus(usize),
    NoConsensus,
}

impl AggregationOutcome {
    pub fn label(self) -> Option<usize> {
        match self {
            AggregationOutcome::Consensus(c) => Some(c),
            AggregationOutcome::NoConsensus => None,
        }
    }
}

/// How the servers locate a maximum among `N` shared values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxStrategy {
    /// Left-to-right sweep, `N-1` dependent comparisons.
    #[default]
    Sequential,
    /// Pairwise knockout, `ceil(log2 N)` batched levels.
    Tournament,
}

impl fmt::Display for MaxStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaxStrategy::Sequential => "sequential",
            MaxStrategy::Tournament => "tournament",
        })
    }
}

impl FromStr for MaxStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(MaxStrategy::Sequential),
            "tournament" => Ok(MaxStrategy::Tournament),
            _ => Err(Error::usage(format!("unknown strategy {s:?} (sequential|tournament)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub teachers: usize,
    pub classes: usize,
    /// Fraction of teachers that must agree.
    pub threshold: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub ring_bits: u32,
    pub scale: u64,
    pub seed: u64,
    pub strategy: MaxStrategy,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            teachers: 250,
            classes: 10,
            threshold: 0.6,
            sigma1: 0.0,
            sigma2: 0.0,
            ring_bits: DEFAULT_RING_BITS,
            scale: DEFAULT_SCALE,
            seed: 0,
            strategy: MaxStrategy::Sequential,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.teachers == 0 {
            return Err(Error::usage("need at least one teacher"));
        }
        if self.classes < 2 {
            return Err(Error::usage("need at least two classes"));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::usage(format!("threshold must be in (0, 1], got {}", self.threshold)));
        }
        for (name, s) in [("sigma1", self.sigma1), ("sigma2", self.sigma2)] {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::usage(format!("{name} must be finite and >= 0, got {s}")));
            }
        }
        if self.scale == 0 {
            return Err(Error::usage("scale must be >= 1"));
        }
        Ring::for_comparison(self.ring_bits)?;
        Ok(())
    }

    pub fn ring(&self) -> Result<Ring> {
        Ring::for_comparison(self.ring_bits)
    }

    /// `ceil(T·K)` teachers; the small slack keeps `0.6·250` from rounding up.
    pub fn threshold_votes(&self) -> u64 {
        (self.threshold * self.teachers as f64 - 1e-9).ceil().max(0.0) as u64
    }

    pub fn threshold_scaled(&self) -> u128 {
        u128::from(self.threshold_votes()) * u128::from(self.scale)
    }
}

/// Fixed-point noise for one sample, as party 0 adds it to its shares.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedNoise {
    /// Added to `[n*]_0` before the threshold check.
    pub threshold: i64,
    /// Added to `[n_i]_0` before the label argmax.
    pub label: Vec<i64>,
}

impl EncodedNoise {
    pub fn zero(classes: usize) -> Self {
        EncodedNoise { threshold: 0, label: vec![0; classes] }
    }
}

/// Draw and encode the noise for `sample`. Party 0 and the oracle both call
/// this, so they see identical values.
pub fn encoded_noise(config: &ProtocolConfig, sample: u64) -> Result<EncodedNoise> {
    let ring = config.ring()?;
    let enc = |sigma: f64, phase: Phase, class: usize| -> Result<i64> {
        let g = gauss_sample(sigma, config.seed, NoiseIndex::new(sample, phase as u8, class as u32))?;
        fixed_point_encode_signed(g, config.scale, ring)
    };
    Ok(EncodedNoise {
        threshold: enc(config.sigma1, Phase::ThresholdCheck, 0)?,
        label: (0..config.classes)
            .map(|i| enc(config.sigma2, Phase::ConsensusLabel, i))
            .collect::<Result<_>>()?,
    })
}

/// Every compared value must stay below `2^(l-2)` in magnitude so that
/// differences never wrap past the sign bit.
pub fn check_signed_range(config: &ProtocolConfig, noise: &EncodedNoise) -> Result<()> {
    let ring = config.ring()?;
    let votes = config.teachers as u128 * u128::from(config.scale);
    let worst_noise = noise
        .label
        .iter()
        .chain(std::iter::once(&noise.threshold))
        .map(|g| g.unsigned_abs() as u128)
        .max()
        .unwrap_or(0);
    let limit = ring.signed_half() / 2;
    if votes + worst_noise >= limit {
        return Err(Error::Range(format!(
            "K·scale + |noise| = {} does not fit the signed-safe range 2^{} of a {}-bit ring",
            votes + worst_noise,
            ring.bits() - 2,
            ring.bits()
        )));
    }
    Ok(())
}

/// Additively share `scale · y`: `[y]_0 = r`, `[y]_1 = scale·y - r`.
pub fn client_share<R: Rng + ?Sized>(
    y: &PredictionVector,
    ring: Ring,
    scale: u64,
    rng: &mut R,
) -> Result<(Vec<u64>, Vec<u64>)> {
    let y = PredictionVector::new(y.bits.clone())?;
    if u128::from(scale) >= ring.signed_half() {
        return Err(Error::Range(format!("scale {scale} does not fit a {}-bit ring", ring.bits())));
    }
    let r: Vec<u64> = y.bits.iter().map(|_| ring.random(rng)).collect();
    let s1 = y
        .bits
        .iter()
        .zip(&r)
        .map(|(&b, &r)| ring.sub(ring.mul(u64::from(b), scale), r))
        .collect();
    Ok((r, s1))
}

/// Shared maximum of `votes`; ties keep the earlier element.
pub fn phase1_highest_vote(engine: &mut Engine<'_>, votes: &SharedVec, strategy: MaxStrategy) -> Result<SharedVec> {
    engine.set_phase(Phase::HighestVote);
    let n = votes.len();
    if n < 2 {
        return Err(Error::usage("need at least two vote counts"));
    }
    match strategy {
        MaxStrategy::Sequential => {
            let mut cur = votes.gather(&[0]);
            for i in 1..n {
                let next = votes.gather(&[i]);
                let e = scmp(engine, &cur, &next)?;
                cur = oblivious_select_max(engine, &cur, &next, &e)?;
            }
            Ok(cur)
        }
        MaxStrategy::Tournament => {
            let mut level = votes.clone();
            while level.len() > 1 {
                let pairs = level.len() / 2;
                let a = level.gather(&(0..pairs).map(|k| 2 * k).collect::<Vec<_>>());
                let b = level.gather(&(0..pairs).map(|k| 2 * k + 1).collect::<Vec<_>>());
                let e = scmp(engine, &a, &b)?;
                let mut winners = oblivious_select_max(engine, &a, &b, &e)?;
                if level.len() % 2 == 1 {
                    winners = winners.concat(&level.gather(&[level.len() - 1]));
                }
                level = winners;
            }
            Ok(level)
        }
    }
}

/// Compare `n* + g` against the public threshold and open the result.
///
/// Returns `t`, where `t = 1` means no consensus. This is the only value the
/// servers ever see in the clear.
pub fn phase2_threshold_check(
    engine: &mut Engine<'_>,
    n_star: &SharedVec,
    threshold_scaled: u64,
    noise: i64,
) -> Result<u8> {
    engine.set_phase(Phase::ThresholdCheck);
    if n_star.len() != 1 {
        return Err(Error::usage("threshold check takes a single shared value"));
    }
    let ring = engine.ring();
    // S0 perturbs its share; S1 keeps its share as is.
    let noisy = n_star.add_public(ring, &[ring.from_signed(noise)]);
    let threshold = SharedVec::public(ring, &[threshold_scaled]);
    let e = scmp(engine, &noisy, &threshold)?;
    let t = engine.open(Step::Reveal, &e, "threshold bit")?;
    match t[0] {
        0 | 1 => Ok(t[0] as u8),
        v => Err(ProtocolError::Malformed(format!("threshold bit opened to {v}")).into()),
    }
}

#[derive(Clone, Debug)]
enum Index {
    Public(u64),
    Shared(SharedVec),
}

impl Index {
    fn shared(&self, ring: Ring) -> SharedVec {
        match self {
            Index::Public(p) => SharedVec::public(ring, &[*p]),
            Index::Shared(s) => s.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Candidate {
    value: SharedVec,
    index: Index,
}

/// One batched knockout step over `pairs`. Value and shared-index selects go
/// into a single multiplication round; `last` drops the value select since
/// nothing reads it afterwards.
fn merge_pairs(engine: &mut Engine<'_>, pairs: Vec<(Candidate, Candidate)>, last: bool) -> Result<Vec<Candidate>> {
    let ring = engine.ring();
    let mut a = SharedVec::default();
    let mut b = SharedVec::default();
    for (x, y) in &pairs {
        a = a.concat(&x.value);
        b = b.concat(&y.value);
    }
    let e = scmp(engine, &a, &b)?;

    let m = pairs.len();
    let (mut lhs, mut rhs) = if last {
        (SharedVec::default(), SharedVec::default())
    } else {
        (e.clone(), b.sub(ring, &a))
    };
    let mut shared_slots = Vec::new();
    for (k, (x, y)) in pairs.iter().enumerate() {
        if matches!((&x.index, &y.index), (Index::Public(_), Index::Public(_))) {
            continue;
        }
        shared_slots.push(k);
        lhs = lhs.concat(&e.gather(&[k]));
        rhs = rhs.concat(&y.index.shared(ring).sub(ring, &x.index.shared(ring)));
    }
    let prod = engine.beaver_mul(Step::Select, &lhs, &rhs)?;
    let (value_prod, index_prod) = prod.split_at(if last { 0 } else { m });

    let mut out = Vec::with_capacity(m);
    let mut next_shared = 0;
    for (k, (x, y)) in pairs.into_iter().enumerate() {
        let value = if last {
            SharedVec::default()
        } else {
            x.value.add(ring, &value_prod.gather(&[k]))
        };
        let index = match (&x.index, &y.index) {
            (Index::Public(p), Index::Public(q)) => {
                Index::Shared(oblivious_select_index(ring, *p, *q, &e.gather(&[k])))
            }
            _ => {
                debug_assert_eq!(shared_slots[next_shared], k);
                let s = x.index.shared(ring).add(ring, &index_prod.gather(&[next_shared]));
                next_shared += 1;
                Index::Shared(s)
            }
        };
        out.push(Candidate { value, index });
    }
    Ok(out)
}

/// Shared noisy argmax of `votes`, ties to the lowest index. Refuses to run
/// unless the threshold check passed (`t = 0`).
pub fn phase3_consensus_label(
    engine: &mut Engine<'_>,
    votes: &SharedVec,
    t: u8,
    noise: &[i64],
    strategy: MaxStrategy,
) -> Result<SharedVec> {
    if t != 0 {
        return Err(Error::usage("consensus label requested although the threshold check failed"));
    }
    let n = votes.len();
    if n < 2 || noise.len() != n {
        return Err(Error::usage("need one noise value per class and at least two classes"));
    }
    engine.set_phase(Phase::ConsensusLabel);
    let ring = engine.ring();
    let offsets: Vec<u64> = noise.iter().map(|&g| ring.from_signed(g)).collect();
    let noisy = votes.add_public(ring, &offsets);
    let mut cands: Vec<Candidate> = (0..n)
        .map(|i| Candidate {
            value: noisy.gather(&[i]),
            index: Index::Public(i as u64),
        })
        .collect();

    let winner = match strategy {
        MaxStrategy::Sequential => {
            let mut rest = cands.split_off(1).into_iter();
            let mut cur = cands.pop().expect("n >= 2");
            let mut left = n - 1;
            for next in rest.by_ref() {
                left -= 1;
                cur = merge_pairs(engine, vec![(cur, next)], left == 0)?.pop().expect("one pair");
            }
            cur
        }
        MaxStrategy::Tournament => {
            while cands.len() > 1 {
                let last = cands.len() == 2;
                let carry = if cands.len() % 2 == 1 { cands.pop() } else { None };
                let mut pairs = Vec::with_capacity(cands.len() / 2);
                let mut it = cands.into_iter();
                while let (Some(x), Some(y)) = (it.next(), it.next()) {
                    pairs.push((x, y));
                }
                cands = merge_pairs(engine, pairs, last)?;
                cands.extend(carry);
            }
            cands.pop().expect("one winner")
        }
    };
    Ok(winner.index.shared(ring))
}

/// Both servers hand their share of `i*` to the requester, who alone
/// reconstructs it.
pub fn requester_reconstruct(session: &mut Session, ring: Ring, label: &SharedVec) -> Result<usize> {
    let mut got = [Vec::new(), Vec::new()];
    for p in PartyId::BOTH {
        let msg = session.deliver_to_requester(p, Payload::ring(ring, label.part(p)))?;
        got[p.index()] = msg.payload.decode_ring(ring)?;
    }
    let [s0, s1] = got;
    let value = SharedVec::from_parts(s0, s1)?.reconstruct(ring);
    session.record_reveal(Audience::Requester, "consensus label", value.len());
    match value.as_slice() {
        [v] => Ok(*v as usize),
        _ => Err(ProtocolError::Malformed("label share must be a single element".into()).into()),
    }
}

/// Everything one sample's session produced.
#[derive(Clone, Debug)]
pub struct SampleRun {
    pub sample: u64,
    pub outcome: AggregationOutcome,
    pub stats: CommStats,
    pub reveals: Vec<RevealRecord>,
    /// Empty unless the fabric was configured to trace.
    pub trace: Vec<Message>,
}

impl SampleRun {
    pub fn server_reveals(&self) -> usize {
        self.reveals.iter().filter(|r| r.audience == Audience::Servers).count()
    }
}

fn check_predictions(config: &ProtocolConfig, predictions: &[PredictionVector]) -> Result<()> {
    if predictions.len() != config.teachers {
        return Err(Error::usage(format!(
            "expected {} predictions, got {}",
            config.teachers,
            predictions.len()
        )));
    }
    for p in predictions {
        if p.classes() != config.classes {
            return Err(Error::usage(format!(
                "prediction has {} classes, expected {}",
                p.classes(),
                config.classes
            )));
        }
    }
    Ok(())
}

/// Run one sample end to end with triples dealt from the config seed.
pub fn run_sample(
    config: &ProtocolConfig,
    sample: u64,
    predictions: &[PredictionVector],
    fabric: &mut Fabric,
) -> Result<SampleRun> {
    config.validate()?;
    let ring = config.ring()?;
    let budget = per_sample_budget(ring.bits(), config.classes)?;
    let stores = deal_triples(budget, ring, &mut seed::rng(config.seed, &[seed::DEALER, sample]));
    run_sample_with_triples(config, sample, predictions, stores, fabric)
}

/// Run one sample with caller-supplied triples. All checks (triple budget,
/// input shape, signed range) happen before the first message.
pub fn run_sample_with_triples(
    config: &ProtocolConfig,
    sample: u64,
    predictions: &[PredictionVector],
    stores: [TripleStore; 2],
    fabric: &mut Fabric,
) -> Result<SampleRun> {
    config.validate()?;
    check_predictions(config, predictions)?;
    let ring = config.ring()?;
    let need = per_sample_budget(ring.bits(), config.classes)?;
    for s in &stores {
        let have = s.remaining_budget();
        if !have.covers(&need) {
            return Err(ProtocolError::InsufficientTriples {
                needed_z2: need.z2_triples,
                needed_z2l: need.z2l_triples,
                have_z2: have.z2_triples,
                have_z2l: have.z2l_triples,
            }
            .into());
        }
    }
    let noise = encoded_noise(config, sample)?;
    check_signed_range(config, &noise)?;
    let threshold = u64::try_from(config.threshold_scaled()).expect("checked by range");

    let id = fabric.open_session();
    let outcome = run_session(config, sample, predictions, stores, &noise, threshold, fabric.session_mut(id)?);
    let session = fabric.close_session(id)?;
    Ok(SampleRun {
        sample,
        outcome: outcome?,
        stats: session.snapshot(),
        reveals: session.reveals().to_vec(),
        trace: session.trace().to_vec(),
    })
}

fn run_session(
    config: &ProtocolConfig,
    sample: u64,
    predictions: &[PredictionVector],
    stores: [TripleStore; 2],
    noise: &EncodedNoise,
    threshold: u64,
    session: &mut Session,
) -> Result<AggregationOutcome> {
    let ring = config.ring()?;
    let n = config.classes;
    session.set_phase(Phase::HighestVote);

    // Each server sums what it received; no interaction.
    let mut sums = [vec![0u64; n], vec![0u64; n]];
    for (j, y) in predictions.iter().enumerate() {
        let mut rng = seed::rng(config.seed, &[seed::CLIENT, sample, j as u64]);
        let (s0, s1) = client_share(y, ring, config.scale, &mut rng)?;
        for (p, share) in [(PartyId::P0, s0), (PartyId::P1, s1)] {
            let msg = session.client_upload(j as u32, p, Payload::ring(ring, &share))?;
            for (acc, v) in sums[p.index()].iter_mut().zip(msg.payload.decode_ring(ring)?) {
                *acc = ring.add(*acc, v);
            }
        }
    }
    let [v0, v1] = sums;
    let votes = SharedVec::from_parts(v0, v1)?;

    let mut engine = Engine::new(ring, session, stores)?;
    let n_star = phase1_highest_vote(&mut engine, &votes, config.strategy)?;
    let t = phase2_threshold_check(&mut engine, &n_star, threshold, noise.threshold)?;
    if t == 1 {
        return Ok(AggregationOutcome::NoConsensus);
    }
    let label = phase3_consensus_label(&mut engine, &votes, t, &noise.label, config.strategy)?;
    let class = requester_reconstruct(engine.session_mut(), ring, &label)?;
    if class >= n {
        return Err(ProtocolError::Malformed(format!("reconstructed label {class} out of range")).into());
    }
    Ok(AggregationOutcome::Consensus(class))
}

/// Per-class vote counts.
pub fn vote_counts(predictions: &[PredictionVector], classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; classes];
    for p in predictions {
        counts[p.class()] += 1;
    }
    counts
}

/// The same computation in the clear, with the same encoding, noise, tie
/// rules and range check.
pub fn plaintext_oracle(
    config: &ProtocolConfig,
    predictions: &[PredictionVector],
    noise: &EncodedNoise,
) -> Result<AggregationOutcome> {
    config.validate()?;
    check_predictions(config, predictions)?;
    if noise.label.len() != config.classes {
        return Err(Error::usage("need one label noise value per class"));
    }
    check_signed_range(config, noise)?;
    let scale = i128::from(config.scale);
    let counts: Vec<i128> = vote_counts(predictions, config.classes)
        .into_iter()
        .map(|c| i128::from(c) * scale)
        .collect();

    let mut n_star = counts[0];
    for &c in &counts[1..] {
        if n_star < c {
            n_star = c;
        }
    }
    if n_star + i128::from(noise.threshold) < config.threshold_scaled() as i128 {
        return Ok(AggregationOutcome::NoConsensus);
    }
    let mut best = 0;
    let mut best_value = counts[0] + i128::from(noise.label[0]);
    for (i, (&c, &g)) in counts.iter().zip(&noise.label).enumerate().skip(1) {
        let v = c + i128::from(g);
        if best_value < v {
            best = i;
            best_value = v;
        }
    }
    Ok(AggregationOutcome::Consensus(best))
}

/// Triples each server needs for `samples` samples of this config.
pub fn required_triples(config: &ProtocolConfig, samples: usize) -> Result<TripleBudget> {
    Ok(per_sample_budget(config.ring_bits, config.classes)? * samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::{reconstruction_count, scmp_budget};
    use crate::simnet::SessionConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    const SCALE: u64 = 1000;

    fn small_config(k: usize, n: usize) -> ProtocolConfig {
        ProtocolConfig {
            teachers: k,
            classes: n,
            scale: SCALE,
            ..ProtocolConfig::default()
        }
    }

    fn votes_to_predictions(votes: &[usize]) -> Vec<PredictionVector> {
        votes
            .iter()
            .enumerate()
            .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
            .map(|c| PredictionVector::one_hot(c, votes.len()).unwrap())
            .collect()
    }

    fn shared_votes(ring: Ring, counts: &[u64], seed: u64) -> SharedVec {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let scaled: Vec<u64> = counts.iter().map(|c| c * SCALE).collect();
        SharedVec::share(ring, &scaled, &mut rng)
    }

    fn with_engine<T>(bits: u32, classes: usize, f: impl FnOnce(&mut Engine<'_>) -> T) -> (T, Session) {
        let ring = Ring::new(bits).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let stores = deal_triples(per_sample_budget(bits, classes).unwrap(), ring, &mut rng);
        let mut session = Session::new(0, SessionConfig::default());
        let out = {
            let mut engine = Engine::new(ring, &mut session, stores).unwrap();
            f(&mut engine)
        };
        (out, session)
    }

    #[test]
    fn client_share_round_trip() {
        let ring = Ring::default();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let y = PredictionVector::one_hot(2, 4).unwrap();
        let (s0, s1) = client_share(&y, ring, DEFAULT_SCALE, &mut rng).unwrap();
        let sum: Vec<u64> = s0.iter().zip(&s1).map(|(&a, &b)| ring.add(a, b)).collect();
        assert_eq!(sum, vec![0, 0, DEFAULT_SCALE, 0]);

        for _ in 0..1000 {
            let n = rng.gen_range(2..12);
            let c = rng.gen_range(0..n);
            let y = PredictionVector::one_hot(c, n).unwrap();
            let (s0, s1) = client_share(&y, ring, DEFAULT_SCALE, &mut rng).unwrap();
            for i in 0..n {
                let want = if i == c { DEFAULT_SCALE } else { 0 };
                assert_eq!(ring.add(s0[i], s1[i]), want);
            }
        }
    }

    #[test]
    fn prediction_must_be_one_hot() {
        assert!(PredictionVector::new(vec![0, 0, 0]).is_err());
        assert!(PredictionVector::new(vec![1, 0, 1]).is_err());
        assert!(PredictionVector::new(vec![0, 2, 0]).is_err());
        assert_eq!(PredictionVector::new(vec![0, 1]).unwrap().class(), 1);
        assert!(PredictionVector::one_hot(3, 3).is_err());
    }

    #[test]
    fn highest_vote_examples() {
        for strategy in [MaxStrategy::Sequential, MaxStrategy::Tournament] {
            let ring = Ring::default();
            let (got, _) = with_engine(64, 4, |e| {
                let v = shared_votes(ring, &[0, 0, 3, 0], 2);
                phase1_highest_vote(e, &v, strategy).unwrap().reconstruct(ring)
            });
            assert_eq!(got, vec![3 * SCALE]);
            let (got, _) = with_engine(64, 3, |e| {
                let v = shared_votes(ring, &[5, 5, 2], 3);
                phase1_highest_vote(e, &v, strategy).unwrap().reconstruct(ring)
            });
            assert_eq!(got, vec![5 * SCALE]);
        }
    }

    #[test]
    fn strategies_agree_and_tournament_is_shallower() {
        let ring = Ring::new(32).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..200 {
            let n = rng.gen_range(2..=10);
            let counts: Vec<u64> = (0..n).map(|_| rng.gen_range(0..20)).collect();
            let want = counts.iter().max().unwrap() * SCALE;
            let mut rounds = Vec::new();
            for strategy in [MaxStrategy::Sequential, MaxStrategy::Tournament] {
                let (got, session) = with_engine(32, n, |e| {
                    let v = shared_votes(ring, &counts, 5);
                    phase1_highest_vote(e, &v, strategy).unwrap().reconstruct(ring)
                });
                assert_eq!(got, vec![want], "{counts:?} {strategy}");
                rounds.push(session.rounds());
            }
            let per_level = 32u32.trailing_zeros() + 3;
            assert_eq!(rounds[0], (n as u32 - 1) * per_level);
            assert_eq!(rounds[1], (n as f64).log2().ceil() as u32 * per_level);
            if n >= 4 {
                assert!(rounds[1] < rounds[0]);
            }
        }
    }

    #[test]
    fn threshold_examples() {
        let ring = Ring::default();
        let (t, session) = with_engine(64, 2, |e| {
            let n_star = shared_votes(ring, &[3], 6);
            phase2_threshold_check(e, &n_star, 2 * SCALE, 0).unwrap()
        });
        assert_eq!(t, 0);
        assert_eq!(session.rounds(), 8 + 1);
        assert_eq!(session.reveals().len(), 1);
        let (t, _) = with_engine(64, 2, |e| {
            let n_star = shared_votes(ring, &[1], 7);
            phase2_threshold_check(e, &n_star, 2 * SCALE, 0).unwrap()
        });
        assert_eq!(t, 1);
        // equality counts as consensus
        let (t, _) = with_engine(64, 2, |e| {
            let n_star = shared_votes(ring, &[2], 8);
            phase2_threshold_check(e, &n_star, 2 * SCALE, 0).unwrap()
        });
        assert_eq!(t, 0);
        // noise pushes it under
        let (t, _) = with_engine(64, 2, |e| {
            let n_star = shared_votes(ring, &[2], 8);
            phase2_threshold_check(e, &n_star, 2 * SCALE, -1).unwrap()
        });
        assert_eq!(t, 1);
    }

    #[test]
    fn label_examples() {
        let ring = Ring::default();
        for strategy in [MaxStrategy::Sequential, MaxStrategy::Tournament] {
            for (counts, want) in [(vec![1u64, 4, 2], 1u64), (vec![4, 4, 1], 0), (vec![3, 3, 3], 0), (vec![0, 7], 1)] {
                let n = counts.len();
                let (got, _) = with_engine(64, n, |e| {
                    let v = shared_votes(ring, &counts, 9);
                    phase3_consensus_label(e, &v, 0, &vec![0; n], strategy)
                        .unwrap()
                        .reconstruct(ring)
                });
                assert_eq!(got, vec![want], "{counts:?} {strategy}");
            }
        }
    }

    #[test]
    fn label_refuses_after_failed_threshold() {
        let ring = Ring::default();
        let (r, session) = with_engine(64, 3, |e| {
            let v = shared_votes(ring, &[1, 2, 3], 10);
            phase3_consensus_label(e, &v, 1, &[0, 0, 0], MaxStrategy::Sequential)
        });
        assert!(matches!(r, Err(Error::Usage(_))));
        assert_eq!(session.rounds(), 0);
    }

    #[test]
    fn label_matches_noisy_argmax_oracle() {
        let ring = Ring::default();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(2..=10);
            let counts: Vec<u64> = (0..n).map(|_| rng.gen_range(0..6)).collect();
            let noise: Vec<i64> = (0..n).map(|_| rng.gen_range(-3000..3000)).collect();
            let noisy: Vec<i64> = counts.iter().zip(&noise).map(|(&c, &g)| (c * SCALE) as i64 + g).collect();
            let mut want = 0;
            for i in 1..n {
                if noisy[want] < noisy[i] {
                    want = i;
                }
            }
            for strategy in [MaxStrategy::Sequential, MaxStrategy::Tournament] {
                let (got, _) = with_engine(64, n, |e| {
                    let v = shared_votes(ring, &counts, 12);
                    phase3_consensus_label(e, &v, 0, &noise, strategy).unwrap().reconstruct(ring)
                });
                assert_eq!(got, vec![want as u64]);
            }
        }
    }

    #[test]
    fn sequential_run_uses_exact_budget() {
        let config = small_config(7, 5);
        let ring = config.ring().unwrap();
        let budget = per_sample_budget(64, 5).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let stores = deal_triples(budget, ring, &mut rng);
        let preds = votes_to_predictions(&[5, 1, 0, 1, 0]);
        let mut fabric = Fabric::new(SessionConfig::default());
        let run = run_sample_with_triples(&config, 0, &preds, stores, &mut fabric).unwrap();
        assert_eq!(run.outcome, AggregationOutcome::Consensus(0));
        let cmp = scmp_budget(64).unwrap();
        assert_eq!(budget, cmp * 9 + TripleBudget::new(0, 4 + 6));
    }

    #[test]
    fn run_sample_examples() {
        let mut fabric = Fabric::new(SessionConfig::default());
        let config = small_config(10, 4);
        let unanimous = votes_to_predictions(&[0, 10, 0, 0]);
        assert_eq!(
            run_sample(&config, 0, &unanimous, &mut fabric).unwrap().outcome,
            AggregationOutcome::Consensus(1)
        );
        let split = votes_to_predictions(&[5, 5, 0, 0]);
        let run = run_sample(&config, 1, &split, &mut fabric).unwrap();
        assert_eq!(run.outcome, AggregationOutcome::NoConsensus);
        assert_eq!(run.stats.phase(Phase::ConsensusLabel).rounds, 0);
        assert_eq!(run.server_reveals(), 1);
        assert_eq!(
            plaintext_oracle(&config, &split, &EncodedNoise::zero(4)).unwrap(),
            AggregationOutcome::NoConsensus
        );
    }

    #[test]
    fn oracle_examples() {
        let config = ProtocolConfig { threshold: 0.3, ..small_config(9, 3) };
        let preds = votes_to_predictions(&[3, 3, 3]);
        assert_eq!(
            plaintext_oracle(&config, &preds, &EncodedNoise::zero(3)).unwrap(),
            AggregationOutcome::Consensus(0)
        );
        assert_eq!(
            plaintext_oracle(&config, &preds, &encoded_noise(&config, 0).unwrap()).unwrap(),
            plaintext_oracle(&config, &preds, &EncodedNoise::zero(3)).unwrap()
        );
    }

    #[test]
    fn seeded_runs_match_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let mut fabric = Fabric::new(SessionConfig::default());
        for sample in 0..40 {
            let k = rng.gen_range(1..30);
            let n = rng.gen_range(2..6);
            let config = ProtocolConfig {
                sigma1: rng.gen_range(0.0..3.0),
                sigma2: rng.gen_range(0.0..3.0),
                seed: rng.gen(),
                strategy: if rng.gen() { MaxStrategy::Sequential } else { MaxStrategy::Tournament },
                ..small_config(k, n)
            };
            let preds: Vec<_> = (0..k)
                .map(|_| PredictionVector::one_hot(rng.gen_range(0..n), n).unwrap())
                .collect();
            let run = run_sample(&config, sample, &preds, &mut fabric).unwrap();
            let noise = encoded_noise(&config, sample).unwrap();
            assert_eq!(run.outcome, plaintext_oracle(&config, &preds, &noise).unwrap());
        }
    }

    #[test]
    fn insufficient_triples_fail_before_any_message() {
        let config = small_config(3, 3);
        let ring = config.ring().unwrap();
        let mut budget = per_sample_budget(64, 3).unwrap();
        budget.z2l_triples -= 1;
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let stores = deal_triples(budget, ring, &mut rng);
        let mut fabric = Fabric::new(SessionConfig { trace: true, ..SessionConfig::default() });
        let preds = votes_to_predictions(&[3, 0, 0]);
        let err = run_sample_with_triples(&config, 0, &preds, stores, &mut fabric).unwrap_err();
        assert!(matches!(err, Error::Protocol(ProtocolError::InsufficientTriples { .. })));
        // no session was opened
        assert_eq!(fabric.open_session(), 0);
    }

    #[test]
    fn range_errors_hit_both_paths() {
        let config = ProtocolConfig {
            ring_bits: 16,
            ..small_config(20, 2)
        };
        let preds = votes_to_predictions(&[20, 0]);
        let mut fabric = Fabric::new(SessionConfig::default());
        assert!(matches!(run_sample(&config, 0, &preds, &mut fabric), Err(Error::Range(_))));
        assert!(matches!(
            plaintext_oracle(&config, &preds, &EncodedNoise::zero(2)),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn servers_reconstruct_only_the_threshold_bit() {
        let config = small_config(12, 4);
        let preds = votes_to_predictions(&[9, 2, 1, 0]);
        let mut fabric = Fabric::new(SessionConfig { trace: true, ..SessionConfig::default() });
        let before = reconstruction_count();
        let run = run_sample(&config, 3, &preds, &mut fabric).unwrap();
        // one for t at the servers, one for the label at the requester
        assert_eq!(reconstruction_count() - before, 2);
        assert_eq!(run.outcome, AggregationOutcome::Consensus(0));
        let audiences: Vec<_> = run.reveals.iter().map(|r| (r.audience, r.phase)).collect();
        assert_eq!(
            audiences,
            vec![(Audience::Servers, Phase::ThresholdCheck), (Audience::Requester, Phase::ConsensusLabel)]
        );
        let uploads = run.trace.iter().filter(|m| m.step == Step::Upload).count();
        assert_eq!(uploads, 2 * 12);
    }

    #[test]
    fn threshold_rounding() {
        let c = ProtocolConfig { threshold: 0.6, teachers: 250, ..ProtocolConfig::default() };
        assert_eq!(c.threshold_votes(), 150);
        let c = ProtocolConfig { threshold: 0.6, teachers: 10, ..ProtocolConfig::default() };
        assert_eq!(c.threshold_votes(), 6);
        let c = ProtocolConfig { threshold: 0.55, teachers: 10, ..ProtocolConfig::default() };
        assert_eq!(c.threshold_votes(), 6);
    }

    #[test]
    fn config_validation() {
        assert!(ProtocolConfig::default().validate().is_ok());
        for bad in [
            ProtocolConfig { teachers: 0, ..Default::default() },
            ProtocolConfig { classes: 1, ..Default::default() },
            ProtocolConfig { threshold: 0.0, ..Default::default() },
            ProtocolConfig { threshold: 1.5, ..Default::default() },
            ProtocolConfig { sigma1: -1.0, ..Default::default() },
            ProtocolConfig { scale: 0, ..Default::default() },
            ProtocolConfig { ring_bits: 48, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Usage(_))), "{bad:?}");
        }
        assert_eq!("tournament".parse::<MaxStrategy>().unwrap(), MaxStrategy::Tournament);
        assert!("best".parse::<MaxStrategy>().is_err());
    }
}
