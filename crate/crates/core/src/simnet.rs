//! In-process message fabric between the two servers.
//!
//! A round is one simultaneous exchange: each server submits exactly one batch
//! and receives the other's. The session meters rounds, messages and payload
//! bytes per protocol phase; framing is not counted. Client uploads and
//! deliveries to the requester are traced and metered separately so phase
//! figures describe server-to-server traffic only.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, ProtocolError, Result};
use crate::ring::{PartyId, Ring};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Phase {
    /// Gadget runs outside a protocol sample.
    Standalone = 0,
    HighestVote = 1,
    ThresholdCheck = 2,
    ConsensusLabel = 3,
}

impl Phase {
    pub const PROTOCOL: [Phase; 3] = [Phase::HighestVote, Phase::ThresholdCheck, Phase::ConsensusLabel];

    fn from_u8(v: u8) -> Option<Phase> {
        Some(match v {
            0 => Phase::Standalone,
            1 => Phase::HighestVote,
            2 => Phase::ThresholdCheck,
            3 => Phase::ConsensusLabel,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Step {
    Upload,
    /// Generate signals `G_j = x_j * y_j`.
    AndGates,
    /// Carry tree level `t` (1-based).
    CarryLevel(u8),
    BitToArith,
    Select,
    Reveal,
    Multiply,
    Deliver,
}

impl Step {
    pub fn code(self) -> u8 {
        match self {
            Step::Upload => 1,
            Step::AndGates => 2,
            Step::BitToArith => 3,
            Step::Select => 4,
            Step::Reveal => 5,
            Step::Multiply => 6,
            Step::Deliver => 7,
            Step::CarryLevel(t) => 0x10 + t,
        }
    }

    pub fn from_code(c: u8) -> Option<Step> {
        Some(match c {
            1 => Step::Upload,
            2 => Step::AndGates,
            3 => Step::BitToArith,
            4 => Step::Select,
            5 => Step::Reveal,
            6 => Step::Multiply,
            7 => Step::Deliver,
            0x10..=0x50 => Step::CarryLevel(c - 0x10),
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Server(PartyId),
    Requester,
    Client(u32),
}

impl Node {
    pub fn code(self) -> u32 {
        match self {
            Node::Server(p) => p.index() as u32,
            Node::Requester => 2,
            Node::Client(j) => 3 + j,
        }
    }

    pub fn from_code(c: u32) -> Node {
        match c {
            0 => Node::Server(PartyId::P0),
            1 => Node::Server(PartyId::P1),
            2 => Node::Requester,
            j => Node::Client(j - 3),
        }
    }
}

/// How Z2 payloads go on the wire.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Z2Encoding {
    /// One byte per bit.
    #[default]
    BytePerBit,
    /// Eight bits per byte, LSB first.
    Packed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum PayloadKind {
    /// `l`-bit little-endian ring elements, each rounded up to whole bytes.
    Ring = 0,
    PackedBits = 1,
    ByteBits = 2,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Payload {
    pub kind: PayloadKind,
    pub elements: u32,
    pub element_bits: u8,
    pub bytes: Vec<u8>,
}

impl Payload {
    pub fn empty() -> Self {
        Payload {
            kind: PayloadKind::Ring,
            elements: 0,
            element_bits: 64,
            bytes: Vec::new(),
        }
    }

    pub fn ring(ring: Ring, values: &[u64]) -> Self {
        let width = ring.byte_width();
        let mut bytes = Vec::with_capacity(values.len() * width);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes()[..width]);
        }
        Payload {
            kind: PayloadKind::Ring,
            elements: values.len() as u32,
            element_bits: ring.bits() as u8,
            bytes,
        }
    }

    pub fn bits(encoding: Z2Encoding, bits: &[u8]) -> Self {
        let (kind, bytes) = match encoding {
            Z2Encoding::BytePerBit => (PayloadKind::ByteBits, bits.iter().map(|b| b & 1).collect()),
            Z2Encoding::Packed => {
                let mut out = vec![0u8; bits.len().div_ceil(8)];
                for (i, b) in bits.iter().enumerate() {
                    out[i / 8] |= (b & 1) << (i % 8);
                }
                (PayloadKind::PackedBits, out)
            }
        };
        Payload {
            kind,
            elements: bits.len() as u32,
            element_bits: 1,
            bytes,
        }
    }

    pub fn expected_len(&self) -> usize {
        let n = self.elements as usize;
        match self.kind {
            PayloadKind::Ring => n * usize::from(self.element_bits).div_ceil(8),
            PayloadKind::PackedBits => n.div_ceil(8),
            PayloadKind::ByteBits => n,
        }
    }

    fn check(&self) -> Result<()> {
        if self.bytes.len() != self.expected_len() {
            return Err(ProtocolError::Malformed(format!(
                "payload of {} elements has {} bytes, expected {}",
                self.elements,
                self.bytes.len(),
                self.expected_len()
            ))
            .into());
        }
        Ok(())
    }

    pub fn decode_ring(&self, ring: Ring) -> Result<Vec<u64>> {
        self.check()?;
        if self.kind != PayloadKind::Ring || u32::from(self.element_bits) != ring.bits() {
            return Err(ProtocolError::Malformed("expected ring payload".into()).into());
        }
        let width = ring.byte_width();
        Ok(self
            .bytes
            .chunks_exact(width)
            .map(|c| {
                let mut le = [0u8; 8];
                le[..width].copy_from_slice(c);
                u64::from_le_bytes(le)
            })
            .collect())
    }

    pub fn decode_bits(&self) -> Result<Vec<u8>> {
        self.check()?;
        match self.kind {
            PayloadKind::ByteBits => Ok(self.bytes.clone()),
            PayloadKind::PackedBits => Ok((0..self.elements as usize)
                .map(|i| (self.bytes[i / 8] >> (i % 8)) & 1)
                .collect()),
            PayloadKind::Ring => Err(ProtocolError::Malformed("expected bit payload".into()).into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub session_id: u64,
    pub phase: Phase,
    pub step: Step,
    pub round: u32,
    pub from: Node,
    pub to: Node,
    pub payload: Payload,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub rounds: u64,
    pub messages: u64,
    pub bytes: u64,
    /// Bytes sent by S0, S1.
    pub sent: [u64; 2],
    /// Bytes received by S0, S1.
    pub received: [u64; 2],
}

impl PhaseStats {
    fn merge(&mut self, o: &PhaseStats) {
        self.rounds += o.rounds;
        self.messages += o.messages;
        self.bytes += o.bytes;
        for i in 0..2 {
            self.sent[i] += o.sent[i];
            self.received[i] += o.received[i];
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommStats {
    /// Indexed by `Phase as usize`; slot 0 is standalone gadget traffic.
    pub phases: [PhaseStats; 4],
    pub client_messages: u64,
    pub client_bytes: u64,
    pub delivery_messages: u64,
    pub delivery_bytes: u64,
}

impl CommStats {
    pub fn phase(&self, phase: Phase) -> &PhaseStats {
        &self.phases[phase as usize]
    }

    /// Server-to-server totals across all phases.
    pub fn servers(&self) -> PhaseStats {
        let mut t = PhaseStats::default();
        for p in &self.phases {
            t.merge(p);
        }
        t
    }

    pub fn merge(&mut self, o: &CommStats) {
        for (a, b) in self.phases.iter_mut().zip(&o.phases) {
            a.merge(b);
        }
        self.client_messages += o.client_messages;
        self.client_bytes += o.client_bytes;
        self.delivery_messages += o.delivery_messages;
        self.delivery_bytes += o.delivery_bytes;
    }

    pub fn protocol_rounds(&self) -> [u64; 3] {
        Phase::PROTOCOL.map(|p| self.phase(p).rounds)
    }

    pub fn protocol_bytes(&self) -> [u64; 3] {
        Phase::PROTOCOL.map(|p| self.phase(p).bytes)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Audience {
    Servers,
    Requester,
}

/// A point where a plaintext value was materialized.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevealRecord {
    pub audience: Audience,
    pub label: String,
    pub phase: Phase,
    pub elements: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SessionConfig {
    pub z2_encoding: Z2Encoding,
    /// Polls tolerated while one party's batch is missing.
    pub step_budget: u32,
    pub trace: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            z2_encoding: Z2Encoding::default(),
            step_budget: 1,
            trace: false,
        }
    }
}

#[derive(Debug)]
pub struct Session {
    id: u64,
    config: SessionConfig,
    phase: Phase,
    round: u32,
    stats: CommStats,
    pending: [Option<(Step, Payload)>; 2],
    polls: u32,
    trace: Vec<Message>,
    reveals: Vec<RevealRecord>,
}

impl Session {
    pub fn new(id: u64, config: SessionConfig) -> Self {
        Session {
            id,
            config,
            phase: Phase::Standalone,
            round: 0,
            stats: CommStats::default(),
            pending: [None, None],
            polls: 0,
            trace: Vec::new(),
            reveals: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn config(&self) -> SessionConfig {
        self.config
    }

    pub fn z2_encoding(&self) -> Z2Encoding {
        self.config.z2_encoding
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    /// Completed rounds across all phases.
    pub fn rounds(&self) -> u32 {
        self.round
    }

    pub fn stats(&self) -> &CommStats {
        &self.stats
    }

    pub fn snapshot(&self) -> CommStats {
        self.stats
    }

    pub fn trace(&self) -> &[Message] {
        &self.trace
    }

    pub fn reveals(&self) -> &[RevealRecord] {
        &self.reveals
    }

    pub fn submit(&mut self, from: PartyId, step: Step, payload: Payload) -> Result<()> {
        let slot = &mut self.pending[from.index()];
        if slot.is_some() {
            return Err(ProtocolError::DoubleSubmit(from.index() as u8).into());
        }
        payload.check()?;
        *slot = Some((step, payload));
        Ok(())
    }

    /// Complete the round if both batches are in. A batch that stays missing
    /// past the step budget is reported as a deadlock.
    pub fn poll(&mut self) -> Result<Option<[Message; 2]>> {
        match (&self.pending[0], &self.pending[1]) {
            (Some(_), Some(_)) => {}
            (None, None) => return Ok(None),
            (a, _) => {
                self.polls += 1;
                if self.polls > self.config.step_budget {
                    let waiting_on = if a.is_none() { 0 } else { 1 };
                    return Err(ProtocolError::Deadlock {
                        waiting_on,
                        round: self.round,
                        polls: self.polls,
                    }
                    .into());
                }
                return Ok(None);
            }
        }
        self.polls = 0;
        let (s0, p0) = self.pending[0].take().expect("checked");
        let (s1, p1) = self.pending[1].take().expect("checked");
        if s0 != s1 {
            return Err(ProtocolError::Malformed(format!(
                "parties disagree on step ({s0:?} vs {s1:?})"
            ))
            .into());
        }
        let round = self.round;
        self.round += 1;
        let stats = &mut self.stats.phases[self.phase as usize];
        stats.rounds += 1;
        stats.messages += 2;
        let (b0, b1) = (p0.bytes.len() as u64, p1.bytes.len() as u64);
        stats.bytes += b0 + b1;
        stats.sent[0] += b0;
        stats.sent[1] += b1;
        stats.received[1] += b0;
        stats.received[0] += b1;
        let to_p1 = Message {
            session_id: self.id,
            phase: self.phase,
            step: s0,
            round,
            from: Node::Server(PartyId::P0),
            to: Node::Server(PartyId::P1),
            payload: p0,
        };
        let to_p0 = Message {
            from: Node::Server(PartyId::P1),
            to: Node::Server(PartyId::P0),
            payload: p1,
            ..to_p1.clone()
        };
        if self.config.trace {
            self.trace.push(to_p1.clone());
            self.trace.push(to_p0.clone());
        }
        Ok(Some([to_p0, to_p1]))
    }

    /// Simultaneous exchange; element `i` of the result is what party `i`
    /// receives.
    pub fn exchange(&mut self, step: Step, payloads: [Payload; 2]) -> Result<[Message; 2]> {
        let [p0, p1] = payloads;
        self.submit(PartyId::P0, step, p0)?;
        self.submit(PartyId::P1, step, p1)?;
        Ok(self.poll()?.expect("both batches submitted"))
    }

    pub fn client_upload(&mut self, client: u32, to: PartyId, payload: Payload) -> Result<Message> {
        payload.check()?;
        self.stats.client_messages += 1;
        self.stats.client_bytes += payload.bytes.len() as u64;
        let msg = Message {
            session_id: self.id,
            phase: self.phase,
            step: Step::Upload,
            round: self.round,
            from: Node::Client(client),
            to: Node::Server(to),
            payload,
        };
        if self.config.trace {
            self.trace.push(msg.clone());
        }
        Ok(msg)
    }

    pub fn deliver_to_requester(&mut self, from: PartyId, payload: Payload) -> Result<Message> {
        payload.check()?;
        self.stats.delivery_messages += 1;
        self.stats.delivery_bytes += payload.bytes.len() as u64;
        let msg = Message {
            session_id: self.id,
            phase: self.phase,
            step: Step::Deliver,
            round: self.round,
            from: Node::Server(from),
            to: Node::Requester,
            payload,
        };
        if self.config.trace {
            self.trace.push(msg.clone());
        }
        Ok(msg)
    }

    pub fn record_reveal(&mut self, audience: Audience, label: &str, elements: usize) {
        self.reveals.push(RevealRecord {
            audience,
            label: label.to_string(),
            phase: self.phase,
            elements,
        });
    }
}

/// Registry of sessions by id.
#[derive(Debug, Default)]
pub struct Fabric {
    config: SessionConfig,
    next_id: u64,
    sessions: BTreeMap<u64, Session>,
}

impl Fabric {
    pub fn new(config: SessionConfig) -> Self {
        Fabric {
            config,
            next_id: 0,
            sessions: BTreeMap::new(),
        }
    }

    pub fn open_session(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.sessions.insert(id, Session::new(id, self.config));
        id
    }

    pub fn session_mut(&mut self, id: u64) -> Result<&mut Session> {
        self.sessions
            .get_mut(&id)
            .ok_or_else(|| Error::usage(format!("unknown session {id}")))
    }

    pub fn snapshot_stats(&self, id: u64) -> Result<CommStats> {
        self.sessions
            .get(&id)
            .map(Session::snapshot)
            .ok_or_else(|| Error::usage(format!("unknown session {id}")))
    }

    pub fn close_session(&mut self, id: u64) -> Result<Session> {
        self.sessions
            .remove(&id)
            .ok_or_else(|| Error::usage(format!("unknown session {id}")))
    }
}

const FRAME_HEADER: usize = 8 + 1 + 1 + 4 + 4 + 4 + 1 + 4 + 1;

/// Write messages as frames: `u32` LE length, then header fields and payload.
pub fn write_trace<W: Write>(mut w: W, messages: &[Message]) -> Result<()> {
    for m in messages {
        let len = (FRAME_HEADER + m.payload.bytes.len()) as u32;
        let mut frame = Vec::with_capacity(4 + len as usize);
        frame.extend_from_slice(&len.to_le_bytes());
        frame.extend_from_slice(&m.session_id.to_le_bytes());
        frame.push(m.phase as u8);
        frame.push(m.step.code());
        frame.extend_from_slice(&m.round.to_le_bytes());
        frame.extend_from_slice(&m.from.code().to_le_bytes());
        frame.extend_from_slice(&m.to.code().to_le_bytes());
        frame.push(m.payload.kind as u8);
        frame.extend_from_slice(&m.payload.elements.to_le_bytes());
        frame.push(m.payload.element_bits);
        frame.extend_from_slice(&m.payload.bytes);
        w.write_all(&frame)?;
    }
    Ok(())
}

pub fn read_trace<R: Read>(mut r: R) -> Result<Vec<Message>> {
    let mut out = Vec::new();
    loop {
        let mut len = [0u8; 4];
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_le_bytes(len) as usize;
        if len < FRAME_HEADER {
            return Err(ProtocolError::Malformed(format!("frame of {len} bytes")).into());
        }
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let u32_at = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().expect("4 bytes"));
        let bad = |what: &str| Error::from(ProtocolError::Malformed(format!("bad {what} in trace")));
        let kind = match buf[22] {
            0 => PayloadKind::Ring,
            1 => PayloadKind::PackedBits,
            2 => PayloadKind::ByteBits,
            _ => return Err(bad("payload kind")),
        };
        let payload = Payload {
            kind,
            elements: u32_at(23),
            element_bits: buf[27],
            bytes: buf[FRAME_HEADER..].to_vec(),
        };
        payload.check()?;
        out.push(Message {
            session_id: u64::from_le_bytes(buf[..8].try_into().expect("8 bytes")),
            phase: Phase::from_u8(buf[8]).ok_or_else(|| bad("phase"))?,
            step: Step::from_code(buf[9]).ok_or_else(|| bad("step"))?,
            round: u32_at(10),
            from: Node::from_code(u32_at(14)),
            to: Node::from_code(u32_at(18)),
            payload,
        });
    }
    Ok(out)
}
