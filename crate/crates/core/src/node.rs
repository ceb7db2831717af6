//! Per-node round state machine.
//!
//! Every round a node commits a Merkle tree whose leaves follow a fixed
//! layout:
//!
//! | index            | leaf                                              |
//! |------------------|---------------------------------------------------|
//! | 0                | digest of the previous commitment (zeros at 0)    |
//! | 1                | content address of the payload expression         |
//! | 2                | manifest of outgoing links                        |
//! | 3 ..             | entangled peer roots, sorted by (peer, round)     |
//! | ..               | retained receipts, sorted by (issuer, round)      |
//! | ..               | attached records, sorted by leaf bytes            |
//!
//! The signed, hash-chained sequence of commitments is the node's identity.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{KeyDirectory, KeyPair, NodeId, PublicKey, Signature};
use crate::entangle::Receipt;
use crate::hashtree::{verify_inclusion, Digest, InclusionProof, MerkleTree, DIGEST_LEN};
use crate::sexpr::{self, Expr};
use crate::wire::{Decode, Encode, Reader, WireError, Writer};

pub const TAG_MANIFEST: u8 = 0x01;
pub const TAG_ENTANGLED: u8 = 0x02;
pub const TAG_RECEIPT: u8 = 0x03;
pub const TAG_CREDENTIAL: u8 = 0x04;
pub const TAG_REVOCATIONS: u8 = 0x05;
pub const TAG_POLICY: u8 = 0x06;
pub const TAG_KEY_ROTATION: u8 = 0x07;

/// Leaf index of the previous-commitment digest.
pub const PREV_LEAF: usize = 0;
/// Leaf index of the payload content address.
pub const PAYLOAD_LEAF: usize = 1;
/// Leaf index of the manifest.
pub const MANIFEST_LEAF: usize = 2;

/// Encoded size of a [`Commitment`].
pub const COMMITMENT_LEN: usize = 32 + 8 + 32 + 8 + 32 + 64;

const COMMITMENT_CONTEXT: &[u8] = b"synweb/commitment/v1";

pub fn manifest_leaf(manifest: &[NodeId]) -> Vec<u8> {
    let mut w = Writer::new();
    w.u8(TAG_MANIFEST).list(manifest);
    w.into_bytes()
}

pub fn entangled_leaf(peer: &NodeId, round: u64, root: &Digest) -> Vec<u8> {
    let mut w = Writer::new();
    w.u8(TAG_ENTANGLED).put(peer).u64(round).digest(root);
    w.into_bytes()
}

pub fn receipt_leaf(receipt: &Receipt) -> Vec<u8> {
    let mut w = Writer::new();
    w.u8(TAG_RECEIPT)
        .put(&receipt.issuer_id)
        .u64(receipt.issuer_round)
        .digest(&receipt.digest());
    w.into_bytes()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntangledRoot {
    pub peer: NodeId,
    pub round: u64,
    pub root: Digest,
}

/// Identity-layer facts a node commits alongside its protocol leaves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Credential { digest: Digest },
    Revocations { revoked: Vec<Digest> },
    RecoveryPolicy { digest: Digest },
    KeyRotation { certificate: Digest },
}

impl Record {
    pub fn leaf(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Record::Credential { digest } => w.u8(TAG_CREDENTIAL).digest(digest),
            Record::Revocations { revoked } => w.u8(TAG_REVOCATIONS).list(revoked),
            Record::RecoveryPolicy { digest } => w.u8(TAG_POLICY).digest(digest),
            Record::KeyRotation { certificate } => w.u8(TAG_KEY_ROTATION).digest(certificate),
        };
        w.into_bytes()
    }
}

impl Encode for Record {
    fn encode(&self, w: &mut Writer) {
        w.bytes(&self.leaf());
    }
}

impl Decode for Record {
    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let bytes = r.bytes()?;
        let mut inner = Reader::new(bytes);
        let record = match inner.u8()? {
            TAG_CREDENTIAL => Record::Credential { digest: inner.digest()? },
            TAG_REVOCATIONS => Record::Revocations { revoked: inner.list(DIGEST_LEN)? },
            TAG_POLICY => Record::RecoveryPolicy { digest: inner.digest()? },
            TAG_KEY_ROTATION => Record::KeyRotation { certificate: inner.digest()? },
            _ => return Err(r.invalid("record tag")),
        };
        inner.finish()?;
        Ok(record)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundState {
    pub node_id: NodeId,
    pub round: u64,
    pub prev_commitment_digest: Digest,
    pub payload: Expr,
    pub manifest: Vec<NodeId>,
    pub entangled_roots: Vec<EntangledRoot>,
    pub evidence: Vec<Receipt>,
    pub records: Vec<Record>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NodeError {
    #[error("round state invariant violated: {0}")]
    InvariantViolation(String),
    #[error("no sealed round yet")]
    NoHistory,
}

fn strictly_ascending<T: Ord>(items: impl IntoIterator<Item = T>) -> bool {
    let mut prev: Option<T> = None;
    for item in items {
        if let Some(p) = &prev {
            if p >= &item {
                return false;
            }
        }
        prev = Some(item);
    }
    true
}

impl RoundState {
    pub fn genesis(node_id: NodeId, payload: Expr) -> Self {
        RoundState {
            node_id,
            round: 0,
            prev_commitment_digest: Digest::ZERO,
            payload,
            manifest: Vec::new(),
            entangled_roots: Vec::new(),
            evidence: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), NodeError> {
        let fail = |msg: &str| Err(NodeError::InvariantViolation(msg.to_string()));
        if self.round == 0 && self.prev_commitment_digest != Digest::ZERO {
            return fail("round 0 must chain from the zero digest");
        }
        if !strictly_ascending(self.manifest.iter()) {
            return fail("manifest must be sorted without duplicates");
        }
        if !strictly_ascending(self.entangled_roots.iter().map(|e| (e.peer, e.round))) {
            return fail("entangled roots must be sorted by (peer, round) without duplicates");
        }
        if !strictly_ascending(self.evidence.iter().map(|r| (r.issuer_id, r.issuer_round))) {
            return fail("evidence must be sorted by (issuer, round) without duplicates");
        }
        if !strictly_ascending(self.records.iter().map(Record::leaf)) {
            return fail("records must be sorted by leaf bytes without duplicates");
        }
        let revocation_lists = self
            .records
            .iter()
            .filter(|r| matches!(r, Record::Revocations { .. }))
            .count();
        if revocation_lists > 1 {
            return fail("at most one revocation list per round");
        }
        Ok(())
    }

    /// Leaves in committed order.
    pub fn leaves(&self) -> Vec<Vec<u8>> {
        let mut leaves = Vec::with_capacity(self.leaf_count());
        leaves.push(self.prev_commitment_digest.as_bytes().to_vec());
        leaves.push(sexpr::encode_tree(&self.payload).root().as_bytes().to_vec());
        leaves.push(manifest_leaf(&self.manifest));
        leaves.extend(
            self.entangled_roots
                .iter()
                .map(|e| entangled_leaf(&e.peer, e.round, &e.root)),
        );
        leaves.extend(self.evidence.iter().map(receipt_leaf));
        leaves.extend(self.records.iter().map(Record::leaf));
        leaves
    }

    pub fn leaf_count(&self) -> usize {
        3 + self.entangled_roots.len() + self.evidence.len() + self.records.len()
    }

    pub fn entangled_index(&self, peer: &NodeId, round: u64) -> Option<usize> {
        self.entangled_roots
            .iter()
            .position(|e| &e.peer == peer && e.round == round)
            .map(|i| 3 + i)
    }

    pub fn evidence_index(&self, issuer: &NodeId, issuer_round: u64) -> Option<usize> {
        self.evidence
            .iter()
            .position(|r| &r.issuer_id == issuer && r.issuer_round == issuer_round)
            .map(|i| 3 + self.entangled_roots.len() + i)
    }

    pub fn record_index(&self, record: &Record) -> Option<usize> {
        self.records
            .iter()
            .position(|r| r == record)
            .map(|i| 3 + self.entangled_roots.len() + self.evidence.len() + i)
    }

    pub fn tree(&self) -> MerkleTree {
        MerkleTree::new(self.leaves()).expect("a round always has three fixed leaves")
    }
}

impl Encode for RoundState {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.node_id)
            .u64(self.round)
            .digest(&self.prev_commitment_digest)
            .bytes(self.payload.to_string().as_bytes())
            .list(&self.manifest)
            .len(self.entangled_roots.len());
        for e in &self.entangled_roots {
            w.put(&e.peer).u64(e.round).digest(&e.root);
        }
        w.len(self.evidence.len());
        for receipt in &self.evidence {
            w.bytes(&receipt.to_bytes());
        }
        w.list(&self.records);
    }
}

impl Decode for RoundState {
    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let node_id = r.get()?;
        let round = r.u64()?;
        let prev_commitment_digest = r.digest()?;
        let text = std::str::from_utf8(r.bytes()?).map_err(|_| r.invalid("payload utf-8"))?;
        let payload = sexpr::parse(text).map_err(|_| r.invalid("payload expression"))?;
        let manifest = r.list(DIGEST_LEN)?;
        let n = r.count(DIGEST_LEN + 8 + DIGEST_LEN)?;
        let mut entangled_roots = Vec::with_capacity(n);
        for _ in 0..n {
            entangled_roots.push(EntangledRoot {
                peer: r.get()?,
                round: r.u64()?,
                root: r.digest()?,
            });
        }
        let n = r.count(4)?;
        let mut evidence = Vec::with_capacity(n);
        for _ in 0..n {
            evidence.push(Receipt::from_bytes(r.bytes()?)?);
        }
        let records = r.list(4)?;
        Ok(RoundState {
            node_id,
            round,
            prev_commitment_digest,
            payload,
            manifest,
            entangled_roots,
            evidence,
            records,
        })
    }
}

/// A node's signed statement of its root for one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commitment {
    pub node_id: NodeId,
    pub round: u64,
    pub root: Digest,
    pub leaf_count: u64,
    pub key: PublicKey,
    pub signature: Signature,
}

fn commitment_message(node_id: &NodeId, round: u64, root: &Digest, leaf_count: u64) -> Vec<u8> {
    let mut w = Writer::new();
    w.raw(COMMITMENT_CONTEXT)
        .put(node_id)
        .u64(round)
        .digest(root)
        .u64(leaf_count);
    w.into_bytes()
}

impl Commitment {
    pub fn sign(key: &KeyPair, node_id: NodeId, round: u64, root: Digest, leaf_count: u64) -> Self {
        let signature = key.sign(&commitment_message(&node_id, round, &root, leaf_count));
        Commitment {
            node_id,
            round,
            root,
            leaf_count,
            key: key.public(),
            signature,
        }
    }

    /// Signature is valid and made by the key `keys` accepts for this node
    /// and round.
    pub fn verify(&self, keys: &KeyDirectory) -> bool {
        keys.accepts(&self.node_id, self.round, &self.key)
            && self.key.verify(
                &commitment_message(&self.node_id, self.round, &self.root, self.leaf_count),
                &self.signature,
            )
    }

    /// The value the next round's first leaf must carry.
    pub fn digest(&self) -> Digest {
        Digest::sha256(&self.to_bytes())
    }
}

impl Encode for Commitment {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.node_id)
            .u64(self.round)
            .digest(&self.root)
            .u64(self.leaf_count)
            .put(&self.key)
            .put(&self.signature);
    }
}

impl Decode for Commitment {
    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(Commitment {
            node_id: r.get()?,
            round: r.u64()?,
            root: r.digest()?,
            leaf_count: r.u64()?,
            key: r.get()?,
            signature: r.get()?,
        })
    }
}

pub fn build_round(state: &RoundState, key: &KeyPair) -> Result<(MerkleTree, Commitment), NodeError> {
    state.validate()?;
    let tree = state.tree();
    let commitment = Commitment::sign(key, state.node_id, state.round, tree.root(), tree.len() as u64);
    Ok((tree, commitment))
}

/// Why a presented commitment sequence is not one unbroken identity.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "round")]
pub enum ChainFault {
    #[error("bad signature at round {0}")]
    BadSignature(u64),
    #[error("round gap before round {0}")]
    RoundGap(u64),
    #[error("chain break at round {0}")]
    ChainBreak(u64),
}

fn check_sequence(commitments: &[Commitment], keys: &KeyDirectory) -> Result<(), ChainFault> {
    let Some(first) = commitments.first() else {
        return Ok(());
    };
    for (i, c) in commitments.iter().enumerate() {
        if !c.verify(keys) {
            return Err(ChainFault::BadSignature(c.round));
        }
        if c.node_id != first.node_id {
            return Err(ChainFault::ChainBreak(c.round));
        }
        if i > 0 && Some(c.round) != commitments[i - 1].round.checked_add(1) {
            return Err(ChainFault::RoundGap(c.round));
        }
    }
    Ok(())
}

/// Checks signatures, round contiguity, and that each tree's first leaf is
/// the digest of the previous commitment.
pub fn verify_commitment_chain(
    commitments: &[Commitment],
    trees: &[MerkleTree],
    keys: &KeyDirectory,
) -> Result<(), ChainFault> {
    check_sequence(commitments, keys)?;
    for (i, c) in commitments.iter().enumerate() {
        let Some(tree) = trees.get(i) else {
            return Err(ChainFault::ChainBreak(c.round));
        };
        if tree.root() != c.root || tree.len() as u64 != c.leaf_count {
            return Err(ChainFault::ChainBreak(c.round));
        }
        let expected_prev = match i {
            0 if c.round == 0 => Digest::ZERO,
            0 => continue,
            _ => commitments[i - 1].digest(),
        };
        if tree.leaf(PREV_LEAF) != Some(expected_prev.as_bytes().as_slice()) {
            return Err(ChainFault::ChainBreak(c.round));
        }
    }
    if trees.len() != commitments.len() {
        return Err(ChainFault::ChainBreak(
            commitments.last().map(|c| c.round + 1).unwrap_or(0),
        ));
    }
    Ok(())
}

/// True iff `proof` shows `next`'s first leaf is the digest of `prev`.
pub fn continues(prev: &Commitment, next: &Commitment, proof: &InclusionProof) -> bool {
    prev.node_id == next.node_id
        && Some(next.round) == prev.round.checked_add(1)
        && proof.leaf_index == PREV_LEAF as u64
        && proof.tree_size == next.leaf_count
        && verify_inclusion(prev.digest().as_bytes(), proof, &next.root)
}

/// Same contract as [`verify_commitment_chain`], with a first-leaf inclusion
/// proof standing in for each tree after the first.
pub fn verify_commitment_links(
    commitments: &[Commitment],
    links: &[InclusionProof],
    keys: &KeyDirectory,
) -> Result<(), ChainFault> {
    check_sequence(commitments, keys)?;
    if links.len() + 1 != commitments.len().max(1) {
        return Err(ChainFault::ChainBreak(
            commitments.first().map(|c| c.round).unwrap_or(0),
        ));
    }
    for (pair, proof) in commitments.windows(2).zip(links) {
        if !continues(&pair[0], &pair[1], proof) {
            return Err(ChainFault::ChainBreak(pair[1].round));
        }
    }
    Ok(())
}

/// A built round: its state, tree, and signed commitment.
#[derive(Debug, Clone)]
pub struct SealedRound {
    pub state: RoundState,
    pub tree: MerkleTree,
    pub commitment: Commitment,
}

/// The tree is derived from the state, so it takes no part in equality.
impl PartialEq for SealedRound {
    fn eq(&self, other: &Self) -> bool {
        self.state == other.state && self.commitment == other.commitment
    }
}

impl Eq for SealedRound {}

impl SealedRound {
    pub fn from_state(state: RoundState, key: &KeyPair) -> Result<Self, NodeError> {
        let (tree, commitment) = build_round(&state, key)?;
        Ok(SealedRound {
            state,
            tree,
            commitment,
        })
    }

    /// Rebuilds the tree of a stored round and checks it against the stored
    /// commitment.
    pub fn restore(state: RoundState, commitment: Commitment) -> Result<Self, NodeError> {
        state.validate()?;
        let tree = state.tree();
        if tree.root() != commitment.root
            || tree.len() as u64 != commitment.leaf_count
            || state.node_id != commitment.node_id
            || state.round != commitment.round
        {
            return Err(NodeError::InvariantViolation(format!(
                "stored round {} does not reproduce its committed root",
                state.round
            )));
        }
        Ok(SealedRound {
            state,
            tree,
            commitment,
        })
    }

    pub fn round(&self) -> u64 {
        self.state.round
    }

    pub fn prove(&self, index: usize) -> InclusionProof {
        self.tree.prove(index).expect("index taken from this round's layout")
    }

    /// Proof that leaf 0 carries the previous commitment's digest.
    pub fn continuity_proof(&self) -> InclusionProof {
        self.prove(PREV_LEAF)
    }
}

#[derive(Debug, Clone, Default)]
struct Pending {
    payload: Option<Expr>,
    entangled: BTreeMap<(NodeId, u64), Digest>,
    evidence: BTreeMap<(NodeId, u64), Receipt>,
    records: BTreeMap<Vec<u8>, Record>,
}

/// Single-writer state machine: accumulates one round's inputs, seals
/// them, and keeps the sealed history.
#[derive(Debug, Clone)]
pub struct NodeMachine {
    id: NodeId,
    key: KeyPair,
    links: BTreeSet<NodeId>,
    history: Vec<SealedRound>,
    pending: Pending,
}

impl NodeMachine {
    pub fn new(key: KeyPair) -> Self {
        NodeMachine {
            id: key.node_id(),
            key,
            links: BTreeSet::new(),
            history: Vec::new(),
            pending: Pending::default(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn key(&self) -> &KeyPair {
        &self.key
    }

    /// Round number the next `seal` will produce.
    pub fn next_round(&self) -> u64 {
        self.history.last().map(|s| s.round() + 1).unwrap_or(0)
    }

    pub fn history(&self) -> &[SealedRound] {
        &self.history
    }

    pub fn last(&self) -> Option<&SealedRound> {
        self.history.last()
    }

    pub fn sealed(&self, round: u64) -> Option<&SealedRound> {
        let first = self.history.first()?.round();
        self.history.get(round.checked_sub(first)? as usize)
    }

    pub fn links(&self) -> &BTreeSet<NodeId> {
        &self.links
    }

    pub fn link_to(&mut self, peer: NodeId) {
        self.links.insert(peer);
    }

    pub fn unlink(&mut self, peer: &NodeId) {
        self.links.remove(peer);
    }

    pub fn set_payload(&mut self, payload: Expr) {
        self.pending.payload = Some(payload);
    }

    pub fn entangle(&mut self, peer: NodeId, round: u64, root: Digest) {
        self.pending.entangled.insert((peer, round), root);
    }

    pub fn retain(&mut self, receipt: Receipt) {
        self.pending
            .evidence
            .insert((receipt.issuer_id, receipt.issuer_round), receipt);
    }

    pub fn attach(&mut self, record: Record) {
        if let Record::Revocations { .. } = record {
            self.pending
                .records
                .retain(|_, r| !matches!(r, Record::Revocations { .. }));
        }
        self.pending.records.insert(record.leaf(), record);
    }

    /// The state `seal` would commit right now.
    pub fn pending_state(&self) -> RoundState {
        RoundState {
            node_id: self.id,
            round: self.next_round(),
            prev_commitment_digest: self
                .history
                .last()
                .map(|s| s.commitment.digest())
                .unwrap_or(Digest::ZERO),
            payload: self.pending.payload.clone().unwrap_or(Expr::Int(0)),
            manifest: self.links.iter().copied().collect(),
            entangled_roots: self
                .pending
                .entangled
                .iter()
                .map(|(&(peer, round), &root)| EntangledRoot { peer, round, root })
                .collect(),
            evidence: self.pending.evidence.values().cloned().collect(),
            records: self.pending.records.values().cloned().collect(),
        }
    }

    /// Builds a signed round from the pending state with `edit` applied,
    /// without recording it.
    pub fn build_variant(&self, edit: impl FnOnce(&mut RoundState)) -> Result<SealedRound, NodeError> {
        let mut state = self.pending_state();
        edit(&mut state);
        SealedRound::from_state(state, &self.key)
    }

    pub fn seal(&mut self) -> Result<&SealedRound, NodeError> {
        let sealed = SealedRound::from_state(self.pending_state(), &self.key)?;
        self.history.push(sealed);
        self.pending = Pending::default();
        Ok(self.history.last().expect("just pushed"))
    }

    /// Replaces the most recent round with a re-signed variant carrying a
    /// different payload and returns the original. Only faulty nodes do this.
    pub fn rewrite_last(&mut self, payload: Expr) -> Result<SealedRound, NodeError> {
        let last = self.history.last().ok_or(NodeError::NoHistory)?;
        let mut state = last.state.clone();
        state.payload = payload;
        let forked = SealedRound::from_state(state, &self.key)?;
        Ok(std::mem::replace(
            self.history.last_mut().expect("checked above"),
            forked,
        ))
    }

    /// Switches to `key` for all future rounds and commits `certificate`
    /// in the next round so the rotation is part of the history.
    pub fn rotate_key(&mut self, key: KeyPair, certificate: Digest) {
        self.key = key;
        self.attach(Record::KeyRotation { certificate });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(n: u8) -> KeyPair {
        KeyPair::from_seed([n; 32])
    }

    fn run_rounds(machine: &mut NodeMachine, n: u64) {
        for r in 0..n {
            machine.set_payload(Expr::Int(r as i64));
            machine.seal().unwrap();
        }
    }

    fn chain_parts(m: &NodeMachine) -> (Vec<Commitment>, Vec<MerkleTree>) {
        m.history()
            .iter()
            .map(|s| (s.commitment, s.tree.clone()))
            .unzip()
    }

    #[test]
    fn genesis_round_has_three_leaves() {
        let k = key(1);
        let state = RoundState::genesis(k.node_id(), Expr::Int(0));
        let (tree, commitment) = build_round(&state, &k).unwrap();
        assert_eq!(tree.len(), 3);
        assert_eq!(commitment.leaf_count, 3);
        assert!(commitment.verify(&KeyDirectory::new()));
        assert_eq!(tree.leaf(0).unwrap(), &[0u8; 32]);
    }

    #[test]
    fn entangling_changes_root() {
        let k = key(1);
        let base = RoundState::genesis(k.node_id(), Expr::Int(0));
        let mut with_peer = base.clone();
        with_peer.entangled_roots.push(EntangledRoot {
            peer: key(2).node_id(),
            round: 0,
            root: Digest::sha256(b"peer"),
        });
        let (_, a) = build_round(&base, &k).unwrap();
        let (_, b) = build_round(&with_peer, &k).unwrap();
        assert_ne!(a.root, b.root);
        assert_eq!(b.leaf_count, 4);
    }

    #[test]
    fn same_fields_same_root_different_signature() {
        let shared = RoundState::genesis(key(9).node_id(), Expr::Int(5));
        let (_, a) = build_round(&shared, &key(1)).unwrap();
        let (_, b) = build_round(&shared, &key(2)).unwrap();
        assert_eq!(a.root, b.root);
        assert_ne!(a.signature, b.signature);
    }

    #[test]
    fn invariant_violations() {
        let k = key(1);
        let mut s = RoundState::genesis(k.node_id(), Expr::Int(0));
        s.prev_commitment_digest = Digest::sha256(b"x");
        assert!(build_round(&s, &k).is_err());

        let mut s = RoundState::genesis(k.node_id(), Expr::Int(0));
        s.manifest = vec![key(3).node_id(), key(3).node_id()];
        assert!(build_round(&s, &k).is_err());

        let mut s = RoundState::genesis(k.node_id(), Expr::Int(0));
        let (a, b) = {
            let mut ids = [key(2).node_id(), key(3).node_id()];
            ids.sort();
            (ids[0], ids[1])
        };
        s.entangled_roots = vec![
            EntangledRoot { peer: b, round: 0, root: Digest::ZERO },
            EntangledRoot { peer: a, round: 0, root: Digest::ZERO },
        ];
        assert!(matches!(build_round(&s, &k), Err(NodeError::InvariantViolation(_))));
    }

    #[test]
    fn honest_chain_verifies() {
        let mut m = NodeMachine::new(key(1));
        run_rounds(&mut m, 5);
        let (cs, ts) = chain_parts(&m);
        assert_eq!(verify_commitment_chain(&cs, &ts, &KeyDirectory::new()), Ok(()));

        let links: Vec<_> = m.history()[1..].iter().map(SealedRound::continuity_proof).collect();
        assert_eq!(verify_commitment_links(&cs, &links, &KeyDirectory::new()), Ok(()));
    }

    #[test]
    fn deleted_round_is_a_gap() {
        let mut m = NodeMachine::new(key(1));
        run_rounds(&mut m, 5);
        let (mut cs, mut ts) = chain_parts(&m);
        cs.remove(2);
        ts.remove(2);
        assert_eq!(
            verify_commitment_chain(&cs, &ts, &KeyDirectory::new()),
            Err(ChainFault::RoundGap(3))
        );
    }

    #[test]
    fn substituted_round_breaks_at_next() {
        let mut m = NodeMachine::new(key(1));
        run_rounds(&mut m, 5);
        let (mut cs, mut ts) = chain_parts(&m);
        let mut state = m.history()[2].state.clone();
        state.payload = Expr::Int(99);
        let fork = SealedRound::from_state(state, m.key()).unwrap();
        assert_ne!(fork.commitment.root, cs[2].root);
        cs[2] = fork.commitment;
        ts[2] = fork.tree;
        assert_eq!(
            verify_commitment_chain(&cs, &ts, &KeyDirectory::new()),
            Err(ChainFault::ChainBreak(3))
        );
    }

    #[test]
    fn forged_signature_detected() {
        let mut m = NodeMachine::new(key(1));
        run_rounds(&mut m, 3);
        let (mut cs, ts) = chain_parts(&m);
        cs[1].signature.0[0] ^= 1;
        assert_eq!(
            verify_commitment_chain(&cs, &ts, &KeyDirectory::new()),
            Err(ChainFault::BadSignature(1))
        );
    }

    #[test]
    fn rewrite_last_forks_history() {
        let mut m = NodeMachine::new(key(1));
        run_rounds(&mut m, 2);
        let original = m.rewrite_last(Expr::Int(7)).unwrap();
        assert_ne!(original.commitment, m.last().unwrap().commitment);
        m.seal().unwrap();
        let third = m.last().unwrap();
        assert!(!continues(&original.commitment, &third.commitment, &third.continuity_proof()));
        assert!(continues(&m.history()[1].commitment, &third.commitment, &third.continuity_proof()));
    }

    #[test]
    fn round_state_wire_round_trip() {
        let mut m = NodeMachine::new(key(1));
        m.link_to(key(2).node_id());
        m.entangle(key(3).node_id(), 0, Digest::sha256(b"r"));
        m.attach(Record::Credential { digest: Digest::sha256(b"c") });
        m.attach(Record::Revocations { revoked: vec![Digest::sha256(b"c")] });
        m.set_payload(sexpr::parse("(state #x00ff -3)").unwrap());
        let sealed = m.seal().unwrap().clone();
        let bytes = sealed.state.to_bytes();
        let back = RoundState::from_bytes(&bytes).unwrap();
        assert_eq!(back, sealed.state);
        let restored = SealedRound::restore(back, sealed.commitment).unwrap();
        assert_eq!(restored.tree.root(), sealed.tree.root());

        let c = Commitment::from_bytes(&sealed.commitment.to_bytes()).unwrap();
        assert_eq!(c, sealed.commitment);
        assert_eq!(sealed.commitment.to_bytes().len(), COMMITMENT_LEN);
    }

    #[test]
    fn one_revocation_list_per_round() {
        let mut m = NodeMachine::new(key(1));
        m.attach(Record::Revocations { revoked: vec![] });
        m.attach(Record::Revocations { revoked: vec![Digest::ZERO] });
        let s = m.pending_state();
        assert_eq!(s.records, vec![Record::Revocations { revoked: vec![Digest::ZERO] }]);
    }
}
