//! Submissions, receipts, and the three proof shapes built from them:
//! links (one holder, one issuer), hubs (every link of a holder), and
//! chains (links composed toward a trust anchor).
//!
//! Timing: a holder's round-`r` root is entangled in the issuer's round
//! `r + 1` tree, and the receipt for it is retained in the holder's round
//! `r + 2` tree.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{KeyDirectory, NodeId};
use crate::hashtree::{verify_inclusion, Digest, InclusionProof, DIGEST_LEN};
use crate::node::{
    self, entangled_leaf, manifest_leaf, receipt_leaf, verify_commitment_links, ChainFault,
    Commitment, NodeMachine, SealedRound, COMMITMENT_LEN, MANIFEST_LEAF, PREV_LEAF,
};
use crate::wire::{Decode, Encode, Reader, WireError, Writer};

/// Default bound on how far a submission may trail the issuer.
pub const DEFAULT_MAX_LAG: u64 = 1;

const PROOF_LEN_MIN: usize = 20;

/// A holder's signed root, offered to an issuer for entanglement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub commitment: Commitment,
    /// Shows the first leaf of this round is the previous commitment's digest.
    pub continuity: Option<InclusionProof>,
}

impl Submission {
    pub fn from_sealed(sealed: &SealedRound) -> Self {
        Submission {
            commitment: sealed.commitment,
            continuity: (sealed.round() > 0).then(|| sealed.continuity_proof()),
        }
    }

    pub fn holder_id(&self) -> NodeId {
        self.commitment.node_id
    }

    pub fn holder_round(&self) -> u64 {
        self.commitment.round
    }

    pub fn holder_root(&self) -> Digest {
        self.commitment.root
    }
}

/// Issuer's proof that a holder root is a leaf of one of its round trees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub issuer_id: NodeId,
    pub issuer_round: u64,
    pub inclusion: InclusionProof,
    pub issuer_commitment: Commitment,
}

impl Receipt {
    pub fn digest(&self) -> Digest {
        Digest::sha256(&self.to_bytes())
    }

    /// The receipt shows `holder`'s root entangled in a correctly signed
    /// issuer tree.
    pub fn covers(&self, holder: &Commitment, keys: &KeyDirectory) -> bool {
        let c = &self.issuer_commitment;
        self.issuer_id == c.node_id
            && self.issuer_round == c.round
            && self.inclusion.tree_size == c.leaf_count
            && c.verify(keys)
            && verify_inclusion(
                &entangled_leaf(&holder.node_id, holder.round, &holder.root),
                &self.inclusion,
                &c.root,
            )
    }
}

/// What an issuer sends back to a holder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiptMessage {
    pub receipt: Receipt,
    pub continuity: Option<InclusionProof>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EntangleError {
    #[error("submission signature does not verify")]
    BadSignature,
    #[error("submission from round {holder_round} is stale at issuer round {issuer_round}")]
    StaleSubmission { holder_round: u64, issuer_round: u64 },
    #[error("holder root is not entangled in the issuer's latest round")]
    NotEntangled,
    #[error("no receipt retained for round {0}")]
    MissingReceipt(u64),
    #[error("round {0} is not in the ledger")]
    MissingRound(u64),
    #[error("manifest changed within the window at round {0}")]
    ManifestChanged(u64),
    #[error("holder has no outgoing links")]
    NoLinks,
    #[error("window end precedes window start")]
    EmptyWindow,
    #[error("no chain of links between the endpoints")]
    NoChain,
}

fn check_submission(
    sub: &Submission,
    issuer_round: u64,
    keys: &KeyDirectory,
    max_lag: u64,
) -> Result<(), EntangleError> {
    if !sub.commitment.verify(keys) {
        return Err(EntangleError::BadSignature);
    }
    let holder_round = sub.holder_round();
    if holder_round >= issuer_round || issuer_round - holder_round > max_lag {
        return Err(EntangleError::StaleSubmission {
            holder_round,
            issuer_round,
        });
    }
    Ok(())
}

/// Queues a submitted root for the issuer's next round.
pub fn accept_submission(
    issuer: &mut NodeMachine,
    sub: &Submission,
    keys: &KeyDirectory,
    max_lag: u64,
) -> Result<(), EntangleError> {
    check_submission(sub, issuer.next_round(), keys, max_lag)?;
    issuer.entangle(sub.holder_id(), sub.holder_round(), sub.holder_root());
    Ok(())
}

/// Receipt for a submission entangled in the issuer's sealed round.
pub fn issue_receipt(
    issuer: &SealedRound,
    sub: &Submission,
    keys: &KeyDirectory,
    max_lag: u64,
) -> Result<Receipt, EntangleError> {
    check_submission(sub, issuer.round(), keys, max_lag)?;
    let index = issuer
        .state
        .entangled_index(&sub.holder_id(), sub.holder_round())
        .ok_or(EntangleError::NotEntangled)?;
    if issuer.state.entangled_roots[index - 3].root != sub.holder_root() {
        return Err(EntangleError::NotEntangled);
    }
    Ok(Receipt {
        issuer_id: issuer.commitment.node_id,
        issuer_round: issuer.round(),
        inclusion: issuer.prove(index),
        issuer_commitment: issuer.commitment,
    })
}

/// Inclusive range of holder rounds a proof covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: u64,
    pub end: u64,
}

impl Window {
    pub fn new(start: u64, end: u64) -> Result<Self, EntangleError> {
        if end < start {
            return Err(EntangleError::EmptyWindow);
        }
        Ok(Window { start, end })
    }

    pub fn single(round: u64) -> Self {
        Window { start: round, end: round }
    }

    pub fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn rounds(&self) -> impl Iterator<Item = u64> {
        self.start..=self.end
    }

    pub fn contains(&self, round: u64) -> bool {
        (self.start..=self.end).contains(&round)
    }

    pub fn shifted(&self, by: u64) -> Option<Self> {
        Some(Window {
            start: self.start.checked_add(by)?,
            end: self.end.checked_add(by)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkEntry {
    pub receipt: Receipt,
    /// The receipt leaf inside the holder's tree two rounds later.
    pub evidence: InclusionProof,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkProof {
    pub holder: NodeId,
    pub issuer: NodeId,
    pub window: Window,
    /// Holder commitments for `window.start ..= window.end + 2`.
    pub holder_commitments: Vec<Commitment>,
    /// First-leaf proofs for every holder commitment after the first.
    pub continuity: Vec<InclusionProof>,
    /// One entry per round of the window.
    pub entries: Vec<LinkEntry>,
}

impl LinkProof {
    pub fn holder_commitment(&self, round: u64) -> Option<&Commitment> {
        let i = round.checked_sub(self.window.start)?;
        self.holder_commitments.get(usize::try_from(i).ok()?)
    }

    /// Issuer commitments the proof relies on, keyed by round.
    pub fn issuer_commitments(&self) -> impl Iterator<Item = &Commitment> {
        self.entries.iter().map(|e| &e.receipt.issuer_commitment)
    }
}

/// Why a link proof does not verify. Rounds are holder rounds.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "round")]
pub enum LinkFault {
    #[error("proof is malformed")]
    Malformed,
    #[error("holder commitments do not chain: {0}")]
    HolderChain(ChainFault),
    #[error("issuer commitment for holder round {0} does not match the trusted root")]
    IssuerMismatch(u64),
    #[error("issuer signature invalid for holder round {0}")]
    IssuerSignature(u64),
    #[error("holder root of round {0} is not entangled by the issuer")]
    NotEntangled(u64),
    #[error("receipt for round {0} is not retained by the holder")]
    NotRetained(u64),
}

/// Verifier's ground truth: trusted roots per node and round, and the key
/// bindings used to check signatures.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustStore {
    roots: BTreeMap<NodeId, BTreeMap<u64, Digest>>,
    pub keys: KeyDirectory,
}

impl TrustStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_keys(keys: KeyDirectory) -> Self {
        TrustStore {
            roots: BTreeMap::new(),
            keys,
        }
    }

    pub fn trust(&mut self, commitment: &Commitment) {
        self.trust_root(commitment.node_id, commitment.round, commitment.root);
    }

    pub fn trust_root(&mut self, node: NodeId, round: u64, root: Digest) {
        self.roots.entry(node).or_default().insert(round, root);
    }

    pub fn root(&self, node: &NodeId, round: u64) -> Option<Digest> {
        self.roots.get(node)?.get(&round).copied()
    }

    pub fn latest_round(&self, node: &NodeId) -> Option<u64> {
        self.roots.get(node)?.keys().next_back().copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.roots.keys()
    }

    /// Only roots from rounds `<= max_round`.
    pub fn truncated(&self, max_round: u64) -> Self {
        TrustStore {
            roots: self
                .roots
                .iter()
                .map(|(id, rounds)| (*id, rounds.range(..=max_round).map(|(r, d)| (*r, *d)).collect()))
                .collect(),
            keys: self.keys.clone(),
        }
    }
}

fn find_round(history: &[SealedRound], round: u64) -> Option<&SealedRound> {
    let first = history.first()?.round();
    let sealed = history.get(usize::try_from(round.checked_sub(first)?).ok()?)?;
    (sealed.round() == round).then_some(sealed)
}

fn receipt_for(
    history: &[SealedRound],
    issuer: &NodeId,
    round: u64,
) -> Result<LinkEntry, EntangleError> {
    let missing = EntangleError::MissingReceipt(round);
    let retained_in = find_round(history, round + 2).ok_or(missing.clone())?;
    let index = retained_in
        .state
        .evidence_index(issuer, round + 1)
        .ok_or(missing)?;
    let receipt = retained_in.state.evidence[index - 3 - retained_in.state.entangled_roots.len()].clone();
    Ok(LinkEntry {
        receipt,
        evidence: retained_in.prove(index),
    })
}

/// Builds a link proof from the holder's own history.
pub fn build_link_proof(
    holder: &[SealedRound],
    issuer: NodeId,
    window: Window,
) -> Result<LinkProof, EntangleError> {
    let Window { start, end } = Window::new(window.start, window.end)?;
    let mut holder_commitments = Vec::new();
    let mut continuity = Vec::new();
    for round in start..=end + 2 {
        let sealed = find_round(holder, round).ok_or(EntangleError::MissingRound(round))?;
        holder_commitments.push(sealed.commitment);
        if round > start {
            continuity.push(sealed.continuity_proof());
        }
    }
    let entries = (start..=end)
        .map(|r| receipt_for(holder, &issuer, r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LinkProof {
        holder: holder_commitments[0].node_id,
        issuer,
        window,
        holder_commitments,
        continuity,
        entries,
    })
}

/// Link verification with the issuer's expected roots supplied by the
/// caller.
pub fn check_link(
    proof: &LinkProof,
    keys: &KeyDirectory,
    issuer_root: impl Fn(u64) -> Option<Digest>,
) -> Result<(), LinkFault> {
    let Window { start, end } = proof.window;
    if end < start || end.checked_add(3).is_none() {
        return Err(LinkFault::Malformed);
    }
    let len = usize::try_from(end - start + 1).map_err(|_| LinkFault::Malformed)?;
    let hc = &proof.holder_commitments;
    if proof.entries.len() != len
        || hc.len() != len + 2
        || proof.continuity.len() != len + 1
        || hc[0].round != start
        || hc[0].node_id != proof.holder
    {
        return Err(LinkFault::Malformed);
    }
    verify_commitment_links(hc, &proof.continuity, keys).map_err(LinkFault::HolderChain)?;

    for (i, entry) in proof.entries.iter().enumerate() {
        let round = start + i as u64;
        let receipt = &entry.receipt;
        let c = &receipt.issuer_commitment;
        if receipt.issuer_id != proof.issuer
            || c.node_id != proof.issuer
            || receipt.issuer_round != round + 1
            || c.round != round + 1
        {
            return Err(LinkFault::IssuerMismatch(round));
        }
        if !c.verify(keys) {
            return Err(LinkFault::IssuerSignature(round));
        }
        if issuer_root(round + 1) != Some(c.root) {
            return Err(LinkFault::IssuerMismatch(round));
        }
        if !receipt.covers(&hc[i], keys) {
            return Err(LinkFault::NotEntangled(round));
        }
        let retained_in = &hc[i + 2];
        if entry.evidence.tree_size != retained_in.leaf_count
            || !verify_inclusion(&receipt_leaf(receipt), &entry.evidence, &retained_in.root)
        {
            return Err(LinkFault::NotRetained(round));
        }
    }
    Ok(())
}

pub fn verify_link(proof: &LinkProof, trust: &TrustStore) -> Result<(), LinkFault> {
    check_link(proof, &trust.keys, |round| trust.root(&proof.issuer, round))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HubProof {
    pub holder: NodeId,
    pub window: Window,
    pub manifest: Vec<NodeId>,
    /// Manifest leaf inclusion, one per window round.
    pub manifest_proofs: Vec<InclusionProof>,
    /// One link per manifest entry, sorted by issuer.
    pub links: Vec<LinkProof>,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum HubFault {
    #[error("presented links do not match the committed manifest")]
    ManifestMismatch,
    #[error("link to {issuer} failed: {fault}")]
    LinkFailed { issuer: NodeId, fault: LinkFault },
}

pub fn build_hub_proof(holder: &[SealedRound], window: Window) -> Result<HubProof, EntangleError> {
    let window = Window::new(window.start, window.end)?;
    let first = find_round(holder, window.start).ok_or(EntangleError::MissingRound(window.start))?;
    let manifest = first.state.manifest.clone();
    if manifest.is_empty() {
        return Err(EntangleError::NoLinks);
    }
    let mut manifest_proofs = Vec::new();
    for round in window.rounds() {
        let sealed = find_round(holder, round).ok_or(EntangleError::MissingRound(round))?;
        if sealed.state.manifest != manifest {
            return Err(EntangleError::ManifestChanged(round));
        }
        manifest_proofs.push(sealed.prove(MANIFEST_LEAF));
    }
    let links = manifest
        .iter()
        .map(|issuer| build_link_proof(holder, *issuer, window))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(HubProof {
        holder: first.commitment.node_id,
        window,
        manifest,
        manifest_proofs,
        links,
    })
}

pub fn verify_hub(proof: &HubProof, trust: &TrustStore) -> Result<(), HubFault> {
    let issuers: Vec<NodeId> = proof.links.iter().map(|l| l.issuer).collect();
    let sorted_unique = issuers.windows(2).all(|w| w[0] < w[1]);
    if proof.links.is_empty() || !sorted_unique || issuers != proof.manifest {
        return Err(HubFault::ManifestMismatch);
    }
    for link in &proof.links {
        let failed = |fault| HubFault::LinkFailed {
            issuer: link.issuer,
            fault,
        };
        if link.holder != proof.holder || link.window != proof.window {
            return Err(failed(LinkFault::Malformed));
        }
        if link.holder_commitments != proof.links[0].holder_commitments {
            return Err(failed(LinkFault::Malformed));
        }
        verify_link(link, trust).map_err(failed)?;
    }
    let commitments = &proof.links[0].holder_commitments;
    let leaf = manifest_leaf(&proof.manifest);
    if proof.manifest_proofs.len() != commitments.len() - 2 {
        return Err(HubFault::ManifestMismatch);
    }
    for (p, c) in proof.manifest_proofs.iter().zip(commitments) {
        if p.leaf_index != MANIFEST_LEAF as u64
            || p.tree_size != c.leaf_count
            || !verify_inclusion(&leaf, p, &c.root)
        {
            return Err(HubFault::ManifestMismatch);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainProof {
    /// Hop `i` links the holder of hop `i` to the holder of hop `i + 1`;
    /// the last hop's issuer is the anchor.
    pub hops: Vec<LinkProof>,
    /// Anchor commitment covering the last round of the last hop.
    pub anchor_commitment: Commitment,
}

impl ChainProof {
    pub fn holder(&self) -> Option<NodeId> {
        self.hops.first().map(|h| h.holder)
    }

    pub fn anchor(&self) -> NodeId {
        self.anchor_commitment.node_id
    }

    pub fn window(&self) -> Option<Window> {
        self.hops.first().map(|h| h.window)
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum ChainProofFault {
    #[error("hop {hop} is broken")]
    BrokenHop { hop: usize, fault: Option<LinkFault> },
    #[error("anchor commitment does not match the trusted root")]
    AnchorMismatch,
    #[error("needs the anchor root of round {needed}, latest trusted is {available:?}")]
    InsufficientLatency { needed: u64, available: Option<u64> },
}

/// Builds a chain through `path` (holder first, anchor last).
pub fn build_chain_proof(
    histories: &[&[SealedRound]],
    anchor: NodeId,
    window: Window,
) -> Result<ChainProof, EntangleError> {
    if histories.is_empty() {
        return Err(EntangleError::NoChain);
    }
    let mut hops = Vec::with_capacity(histories.len());
    for (i, history) in histories.iter().enumerate() {
        let issuer = match histories.get(i + 1) {
            Some(next) => next.first().ok_or(EntangleError::NoChain)?.commitment.node_id,
            None => anchor,
        };
        let hop_window = window.shifted(i as u64).ok_or(EntangleError::EmptyWindow)?;
        hops.push(build_link_proof(history, issuer, hop_window)?);
    }
    let last = hops.last().expect("non-empty");
    let anchor_commitment = last
        .entries
        .last()
        .expect("windows are non-empty")
        .receipt
        .issuer_commitment;
    Ok(ChainProof {
        hops,
        anchor_commitment,
    })
}

pub fn verify_chain(proof: &ChainProof, trust: &TrustStore) -> Result<(), ChainProofFault> {
    let broken = |hop, fault| ChainProofFault::BrokenHop { hop, fault };
    let Some(first) = proof.hops.first() else {
        return Err(broken(0, None));
    };
    for (i, pair) in proof.hops.windows(2).enumerate() {
        let expected = first.window.shifted(i as u64 + 1);
        if pair[0].issuer != pair[1].holder || Some(pair[1].window) != expected {
            return Err(broken(i + 1, None));
        }
    }
    for (i, hop) in proof.hops.iter().enumerate() {
        if hop.window != first.window.shifted(i as u64).ok_or(broken(i, None))? {
            return Err(broken(i, None));
        }
        let next = proof.hops.get(i + 1);
        // The last hop's issuer roots are checked against the trust store below.
        let result = match next {
            Some(next) => check_link(hop, &trust.keys, |round| {
                next.holder_commitment(round).map(|c| c.root)
            }),
            None => check_link(hop, &trust.keys, |round| {
                let i = round.checked_sub(hop.window.start + 1)?;
                hop.entries
                    .get(usize::try_from(i).ok()?)
                    .map(|e| e.receipt.issuer_commitment.root)
            }),
        };
        result.map_err(|fault| broken(i, Some(fault)))?;
        if let Some(next) = next {
            for e in &hop.entries {
                if next.holder_commitment(e.receipt.issuer_round) != Some(&e.receipt.issuer_commitment) {
                    return Err(broken(i, Some(LinkFault::IssuerMismatch(e.receipt.issuer_round - 1))));
                }
            }
        }
    }

    let last = proof.hops.last().expect("non-empty");
    let anchor = proof.anchor_commitment;
    let final_receipt = &last.entries.last().ok_or(broken(proof.hops.len() - 1, None))?.receipt;
    if anchor.node_id != last.issuer
        || final_receipt.issuer_commitment != anchor
        || !anchor.verify(&trust.keys)
    {
        return Err(ChainProofFault::AnchorMismatch);
    }
    let available = trust.latest_round(&anchor.node_id);
    if available.map_or(true, |latest| latest < anchor.round) {
        return Err(ChainProofFault::InsufficientLatency {
            needed: anchor.round,
            available,
        });
    }
    for c in last.issuer_commitments() {
        if trust.root(&anchor.node_id, c.round) != Some(c.root) {
            return Err(ChainProofFault::AnchorMismatch);
        }
    }
    Ok(())
}

/// How one step of a digest path moves forward a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    /// The previous root is an entangled leaf of `into`.
    Entangled,
    /// `into` is the same node's next round, chaining from the previous one.
    Continuity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    pub kind: StepKind,
    pub into: Commitment,
    pub inclusion: InclusionProof,
}

/// Evidence that one commitment's root is transitively committed by another.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigestPath {
    pub origin: Commitment,
    pub steps: Vec<PathStep>,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[error("digest path fails at step {step}")]
pub struct PathFault {
    pub step: usize,
}

/// Returns the commitment the path ends at.
pub fn verify_digest_path(path: &DigestPath, keys: &KeyDirectory) -> Result<Commitment, PathFault> {
    if !path.origin.verify(keys) {
        return Err(PathFault { step: 0 });
    }
    let mut current = path.origin;
    for (i, step) in path.steps.iter().enumerate() {
        let into = &step.into;
        let ok = into.verify(keys)
            && Some(into.round) == current.round.checked_add(1)
            && step.inclusion.tree_size == into.leaf_count
            && match step.kind {
                StepKind::Entangled => verify_inclusion(
                    &entangled_leaf(&current.node_id, current.round, &current.root),
                    &step.inclusion,
                    &into.root,
                ),
                StepKind::Continuity => node::continues(&current, into, &step.inclusion),
            };
        if !ok {
            return Err(PathFault { step: i + 1 });
        }
        current = *into;
    }
    Ok(current)
}

/// Breadth-first search for a digest path from `from` to `to` through the
/// given histories. Every step advances one round, so any path found is as
/// short as possible.
pub fn find_digest_path(
    histories: &BTreeMap<NodeId, &[SealedRound]>,
    from: (NodeId, u64),
    to: (NodeId, u64),
) -> Option<DigestPath> {
    let lookup = |(id, round): (NodeId, u64)| find_round(histories.get(&id)?, round);
    let origin = lookup(from)?;
    if to.1 < from.1 {
        return None;
    }
    // Who entangled (peer, round) in their next round.
    let mut entangled_by: BTreeMap<(NodeId, u64), Vec<NodeId>> = BTreeMap::new();
    for (id, history) in histories {
        for sealed in history.iter() {
            for e in &sealed.state.entangled_roots {
                entangled_by.entry((e.peer, e.round)).or_default().push(*id);
            }
        }
    }
    let mut parent: BTreeMap<(NodeId, u64), ((NodeId, u64), StepKind)> = BTreeMap::new();
    let mut seen = BTreeSet::from([from]);
    let mut queue = VecDeque::from([from]);
    while let Some(at) = queue.pop_front() {
        if at == to {
            break;
        }
        if at.1 >= to.1 {
            continue;
        }
        let here = lookup(at)?;
        let mut next = vec![((at.0, at.1 + 1), StepKind::Continuity)];
        for peer in entangled_by.get(&at).into_iter().flatten() {
            next.push(((*peer, at.1 + 1), StepKind::Entangled));
        }
        for (candidate, kind) in next {
            let Some(sealed) = lookup(candidate) else { continue };
            let links_here = match kind {
                StepKind::Continuity => sealed.state.prev_commitment_digest == here.commitment.digest(),
                StepKind::Entangled => sealed
                    .state
                    .entangled_index(&at.0, at.1)
                    .is_some_and(|i| sealed.state.entangled_roots[i - 3].root == here.commitment.root),
            };
            if links_here && seen.insert(candidate) {
                parent.insert(candidate, (at, kind));
                queue.push_back(candidate);
            }
        }
    }
    if !seen.contains(&to) {
        return None;
    }
    let mut steps = Vec::new();
    let mut at = to;
    while at != from {
        let (prev, kind) = parent[&at];
        let sealed = lookup(at)?;
        let index = match kind {
            StepKind::Continuity => PREV_LEAF,
            StepKind::Entangled => sealed.state.entangled_index(&prev.0, prev.1)?,
        };
        steps.push(PathStep {
            kind,
            into: sealed.commitment,
            inclusion: sealed.prove(index),
        });
        at = prev;
    }
    steps.reverse();
    Some(DigestPath {
        origin: origin.commitment,
        steps,
    })
}

// Binary encodings.

fn put_option(w: &mut Writer, proof: &Option<InclusionProof>) {
    match proof {
        None => w.u8(0),
        Some(p) => w.u8(1).put(p),
    };
}

fn get_option(r: &mut Reader<'_>) -> Result<Option<InclusionProof>, WireError> {
    Ok(if r.bool()? { Some(r.get()?) } else { None })
}

impl Encode for Submission {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.commitment);
        put_option(w, &self.continuity);
    }
}

impl Decode for Submission {
    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(Submission {
            commitment: r.get()?,
            continuity: get_option(r)?,
        })
    }
}

impl Encode for Receipt {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.issuer_id)
            .u64(self.issuer_round)
            .put(&self.inclusion)
            .put(&self.issuer_commitment);
    }
}

impl Decode for Receipt {
    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(Receipt {
            issuer_id: r.get()?,
            issuer_round: r.u64()?,
            inclusion: r.get()?,
            issuer_commitment: r.get()?,
        })
    }
}

impl Encode for ReceiptMessage {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.receipt);
        put_option(w, &self.continuity);
    }
}

impl Decode for ReceiptMessage {
    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(ReceiptMessage {
            receipt: r.get()?,
            continuity: get_option(r)?,
        })
    }
}

impl Encode for Window {
    fn encode(&self, w: &mut Writer) {
        w.u64(self.start).u64(self.end);
    }
}

impl Decode for Window {
    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let (start, end) = (r.u64()?, r.u64()?);
        if end < start {
            return Err(r.invalid("window"));
        }
        Ok(Window { start, end })
    }
}

impl Encode for LinkEntry {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.receipt).put(&self.evidence);
    }
}

impl Decode for LinkEntry {
    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(LinkEntry {
            receipt: r.get()?,
            evidence: r.get()?,
        })
    }
}

impl Encode for LinkProof {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.holder)
            .put(&self.issuer)
            .put(&self.window)
            .list(&self.holder_commitments)
            .list(&self.continuity)
            .list(&self.entries);
    }
}

impl Decode for LinkProof {
    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(LinkProof {
            holder: r.get()?,
            issuer: r.get()?,
            window: r.get()?,
            holder_commitments: r.list(COMMITMENT_LEN)?,
            continuity: r.list(PROOF_LEN_MIN)?,
            entries: r.list(DIGEST_LEN + COMMITMENT_LEN)?,
        })
    }
}

impl Encode for HubProof {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.holder)
            .put(&self.window)
            .list(&self.manifest)
            .list(&self.manifest_proofs)
            .list(&self.links);
    }
}

impl Decode for HubProof {
    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(HubProof {
            holder: r.get()?,
            window: r.get()?,
            manifest: r.list(DIGEST_LEN)?,
            manifest_proofs: r.list(PROOF_LEN_MIN)?,
            links: r.list(COMMITMENT_LEN)?,
        })
    }
}

impl Encode for ChainProof {
    fn encode(&self, w: &mut Writer) {
        w.list(&self.hops).put(&self.anchor_commitment);
    }
}

impl Decode for ChainProof {
    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(ChainProof {
            hops: r.list(COMMITMENT_LEN)?,
            anchor_commitment: r.get()?,
        })
    }
}

impl Encode for PathStep {
    fn encode(&self, w: &mut Writer) {
        w.u8(match self.kind {
            StepKind::Entangled => 0,
            StepKind::Continuity => 1,
        })
        .put(&self.into)
        .put(&self.inclusion);
    }
}

impl Decode for PathStep {
    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let kind = match r.u8()? {
            0 => StepKind::Entangled,
            1 => StepKind::Continuity,
            _ => return Err(r.invalid("step kind")),
        };
        Ok(PathStep {
            kind,
            into: r.get()?,
            inclusion: r.get()?,
        })
    }
}

impl Encode for DigestPath {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.origin).list(&self.steps);
    }
}

impl Decode for DigestPath {
    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(DigestPath {
            origin: r.get()?,
            steps: r.list(1 + COMMITMENT_LEN)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use crate::sexpr::Expr;

    /// Runs holders linked to one issuer under the standard timing.
    struct Star {
        issuer: NodeMachine,
        holders: Vec<NodeMachine>,
    }

    impl Star {
        fn new(n: u8) -> Self {
            let issuer = NodeMachine::new(KeyPair::from_seed([100; 32]));
            let holders: Vec<_> = (0..n)
                .map(|i| {
                    let mut h = NodeMachine::new(KeyPair::from_seed([i + 1; 32]));
                    h.link_to(issuer.id());
                    h
                })
                .collect();
            Star { issuer, holders }
        }

        fn run(&mut self, rounds: u64) {
            let keys = KeyDirectory::new();
            let mut submissions: Vec<Submission> = Vec::new();
            let mut receipts: Vec<Option<Receipt>> = vec![None; self.holders.len()];
            for round in 0..rounds {
                for sub in &submissions {
                    accept_submission(&mut self.issuer, sub, &keys, DEFAULT_MAX_LAG).unwrap();
                }
                for (h, receipt) in self.holders.iter_mut().zip(receipts.iter_mut()) {
                    if let Some(rc) = receipt.take() {
                        h.retain(rc);
                    }
                    h.set_payload(Expr::Int(round as i64));
                    h.seal().unwrap();
                }
                let sealed = self.issuer.seal().unwrap().clone();
                for sub in &submissions {
                    let i = self.holders.iter().position(|h| h.id() == sub.holder_id()).unwrap();
                    receipts[i] = Some(issue_receipt(&sealed, sub, &keys, DEFAULT_MAX_LAG).unwrap());
                }
                submissions = self
                    .holders
                    .iter()
                    .map(|h| Submission::from_sealed(h.last().unwrap()))
                    .collect();
            }
        }

        fn trust(&self) -> TrustStore {
            let mut t = TrustStore::new();
            for s in self.issuer.history() {
                t.trust(&s.commitment);
            }
            t
        }
    }

    #[test]
    fn both_holders_receive_receipts_against_same_root() {
        let mut star = Star::new(2);
        star.run(3);
        let retained: Vec<&Receipt> = star
            .holders
            .iter()
            .map(|h| &h.sealed(2).unwrap().state.evidence[0])
            .collect();
        assert_eq!(retained[0].issuer_commitment.root, retained[1].issuer_commitment.root);
        for (h, rc) in star.holders.iter().zip(&retained) {
            assert!(rc.covers(&h.sealed(0).unwrap().commitment, &KeyDirectory::new()));
        }
    }

    #[test]
    fn tampered_holder_root_breaks_receipt() {
        let mut star = Star::new(1);
        star.run(3);
        let h = &star.holders[0];
        let rc = &h.sealed(2).unwrap().state.evidence[0];
        let mut forged = h.sealed(0).unwrap().commitment;
        forged.root = Digest::sha256(b"other");
        assert!(!rc.covers(&forged, &KeyDirectory::new()));
    }

    #[test]
    fn stale_and_forged_submissions_rejected() {
        let mut star = Star::new(1);
        star.run(3);
        let keys = KeyDirectory::new();
        let old = Submission::from_sealed(star.holders[0].sealed(0).unwrap());
        assert!(matches!(
            accept_submission(&mut star.issuer, &old, &keys, DEFAULT_MAX_LAG),
            Err(EntangleError::StaleSubmission { holder_round: 0, issuer_round: 3 })
        ));
        let mut forged = Submission::from_sealed(star.holders[0].last().unwrap());
        forged.commitment.root = Digest::ZERO;
        assert_eq!(
            accept_submission(&mut star.issuer, &forged, &keys, DEFAULT_MAX_LAG),
            Err(EntangleError::BadSignature)
        );
    }

    #[test]
    fn four_round_link_verifies() {
        let mut star = Star::new(1);
        star.run(6);
        let proof = build_link_proof(star.holders[0].history(), star.issuer.id(), Window::new(0, 3).unwrap()).unwrap();
        assert_eq!(proof.entries.len(), 4);
        assert_eq!(verify_link(&proof, &star.trust()), Ok(()));

        let single = build_link_proof(star.holders[0].history(), star.issuer.id(), Window::single(2)).unwrap();
        assert_eq!(verify_link(&single, &star.trust()), Ok(()));

        let bytes = proof.to_bytes();
        assert_eq!(LinkProof::from_bytes(&bytes).unwrap(), proof);
    }

    #[test]
    fn forged_issuer_root_rejected() {
        let mut star = Star::new(1);
        star.run(6);
        let proof = build_link_proof(star.holders[0].history(), star.issuer.id(), Window::new(0, 3).unwrap()).unwrap();
        let mut trust = star.trust();
        trust.trust_root(star.issuer.id(), 2, Digest::sha256(b"forged"));
        assert_eq!(verify_link(&proof, &trust), Err(LinkFault::IssuerMismatch(1)));
    }

    #[test]
    fn missing_receipt_reported() {
        let mut star = Star::new(1);
        star.run(4);
        assert_eq!(
            build_link_proof(star.holders[0].history(), star.issuer.id(), Window::new(0, 3).unwrap()).unwrap_err(),
            EntangleError::MissingRound(4)
        );
    }

    #[test]
    fn digest_path_through_star() {
        let mut star = Star::new(2);
        star.run(3);
        let mut histories = BTreeMap::new();
        histories.insert(star.issuer.id(), star.issuer.history());
        for h in &star.holders {
            histories.insert(h.id(), h.history());
        }
        let from = (star.holders[0].id(), 0);
        let to = (star.issuer.id(), 2);
        let path = find_digest_path(&histories, from, to).unwrap();
        assert_eq!(path.steps.len(), 2);
        let end = verify_digest_path(&path, &KeyDirectory::new()).unwrap();
        assert_eq!(end, star.issuer.sealed(2).unwrap().commitment);
        assert!(find_digest_path(&histories, (star.holders[0].id(), 0), (star.holders[1].id(), 1)).is_none());
        let decoded = DigestPath::from_bytes(&path.to_bytes()).unwrap();
        assert_eq!(decoded, path);
    }
}
