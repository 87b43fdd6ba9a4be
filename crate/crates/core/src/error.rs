use thiserror::Error;

use crate::ring::RingTag;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller handed us something the contract forbids.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("protocol error: {0}")]
    Protocol(#[from] ProtocolError),
    /// A value does not fit the signed range of the ring.
    #[error("range error: {0}")]
    Range(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("{ring} triples exhausted: needed {needed}, {available} left")]
    TripleExhausted {
        ring: RingTag,
        needed: usize,
        available: usize,
    },
    #[error("{ring} triple #{serial} already consumed")]
    TripleReused { ring: RingTag, serial: u64 },
    #[error("parties disagree on {ring} triple serial ({left} vs {right})")]
    TripleMismatch { ring: RingTag, left: u64, right: u64 },
    #[error("insufficient triples for a full run: need {needed_z2} Z2 / {needed_z2l} Z2l, have {have_z2} / {have_z2l}")]
    InsufficientTriples {
        needed_z2: usize,
        needed_z2l: usize,
        have_z2: usize,
        have_z2l: usize,
    },
    #[error("party {waiting_on} never submitted its batch for round {round} ({polls} polls)")]
    Deadlock {
        waiting_on: u8,
        round: u32,
        polls: u32,
    },
    #[error("party {0} submitted twice in one round")]
    DoubleSubmit(u8),
    #[error("malformed message: {0}")]
    Malformed(String),
}
