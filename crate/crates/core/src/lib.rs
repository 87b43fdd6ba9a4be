//! Two-server secret-shared aggregation of teacher label votes.
//!
//! Clients additively share one-hot predictions over `Z_{2^l}`; two
//! non-colluding servers add the shares, find the highest vote with a
//! carry-lookahead secure comparison, check it against a noisy threshold and,
//! when the teachers agree, produce a secret-shared noisy-argmax label that
//! only the requester reconstructs. Noise is calibrated with a Rényi-DP
//! accountant.
//!
//! The crate is a desk-scale simulator: both servers run in lockstep in one
//! process and talk only through [`simnet::Session`], which meters every round
//! and byte. A plaintext oracle ([`protocol::plaintext_oracle`]) fed the same
//! encoded noise must agree with the secure path bit for bit.

pub mod error;
pub mod gadgets;
pub mod harness;
pub mod privacy;
pub mod protocol;
pub mod ring;
pub mod seed;
pub mod simnet;

pub use error::{Error, ProtocolError, Result};
pub use protocol::{AggregationOutcome, MaxStrategy, PredictionVector, ProtocolConfig};
pub use ring::{PartyId, Ring, RingElement, Share};
