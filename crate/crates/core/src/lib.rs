//! Entangled Merkle-tree state machines and the proofs built on them.
//!
//! Each node commits one Merkle tree per round. Trees chain to their
//! predecessor and include roots submitted by peers, so a root committed by
//! one node transitively commits the history of everything it entangled.

pub mod crypto;
pub mod entangle;
pub mod hashtree;
pub mod identity;
pub mod node;
pub mod sexpr;
pub mod simnet;
pub mod store;
pub mod wire;

pub use crypto::{KeyDirectory, KeyPair, NodeId, PublicKey, Signature};
pub use entangle::{
    ChainProof, DigestPath, HubProof, LinkProof, Receipt, Submission, TrustStore, Window,
};
pub use hashtree::{Digest, InclusionProof, MerkleTree};
pub use node::{Commitment, NodeMachine, RoundState, SealedRound};
pub use sexpr::{Expr, Value};
pub use simnet::{ScenarioConfig, Simulation};
pub use store::{Ledger, ProofFile};
pub use wire::{Decode, Encode};
