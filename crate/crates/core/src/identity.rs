//! Credentials, revocation, and guardian-based key recovery.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{KeyDirectory, KeyPair, NodeId, PublicKey, Signature};
use crate::entangle::{verify_hub, HubFault, HubProof, TrustStore};
use crate::hashtree::{verify_inclusion, Digest, InclusionProof};
use crate::node::{Commitment, NodeMachine, Record, SealedRound};
use crate::sexpr::{self, Expr, Value};
use crate::wire::{Decode, Encode, Reader, WireError, Writer};

const ENDORSEMENT_CONTEXT: &[u8] = b"synweb/recovery-endorsement/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Verifiers ask the issuer for live status.
    IssuerControlled,
    /// The holder presents it; nobody checks status.
    HolderControlled,
}

impl Mode {
    fn symbol(self) -> &'static str {
        match self {
            Mode::IssuerControlled => "issuer-controlled",
            Mode::HolderControlled => "holder-controlled",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "issuer-controlled" => Ok(Mode::IssuerControlled),
            "holder-controlled" => Ok(Mode::HolderControlled),
            other => Err(format!("unknown credential mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    pub issuer: NodeId,
    pub subject: NodeId,
    pub claims: Expr,
    pub issued_round: u64,
    pub mode: Mode,
}

impl Credential {
    /// `(credential #x<issuer> #x<subject> <claims> <round> <mode>)`
    pub fn expr(&self) -> Expr {
        Expr::list([
            Expr::symbol("credential").expect("valid symbol"),
            Expr::Bytes(self.issuer.0.as_bytes().to_vec()),
            Expr::Bytes(self.subject.0.as_bytes().to_vec()),
            self.claims.clone(),
            Expr::Int(i64::try_from(self.issued_round).unwrap_or(i64::MAX)),
            Expr::symbol(self.mode.symbol()).expect("valid symbol"),
        ])
    }

    pub fn digest(&self) -> Digest {
        self.expr().content_address()
    }

    pub fn record(&self) -> Record {
        Record::Credential { digest: self.digest() }
    }
}

/// A credential together with proof that its issuer committed it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuedCredential {
    pub credential: Credential,
    pub issuer_commitment: Commitment,
    pub inclusion: InclusionProof,
}

impl IssuedCredential {
    pub fn verify(&self, keys: &KeyDirectory) -> bool {
        let c = &self.issuer_commitment;
        c.node_id == self.credential.issuer
            && c.round == self.credential.issued_round
            && c.verify(keys)
            && self.inclusion.tree_size == c.leaf_count
            && verify_inclusion(&self.credential.record().leaf(), &self.inclusion, &c.root)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationStatus {
    pub credential_digest: Digest,
    pub status_round: u64,
    pub revoked: bool,
    /// The issuer's full revocation list at `status_round`.
    pub revoked_list: Vec<Digest>,
    pub proof: InclusionProof,
    pub issuer_commitment: Commitment,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusFault {
    #[error("issuer commitment is not trusted")]
    UntrustedIssuer,
    #[error("revocation list is not committed")]
    NotCommitted,
    #[error("revoked flag disagrees with the list")]
    Inconsistent,
}

impl RevocationStatus {
    /// Returns whether the credential is revoked, once the answer is proven.
    pub fn verify(&self, trust: &TrustStore) -> Result<bool, StatusFault> {
        let c = &self.issuer_commitment;
        if c.round != self.status_round
            || !c.verify(&trust.keys)
            || trust
                .root(&c.node_id, c.round)
                .is_some_and(|root| root != c.root)
        {
            return Err(StatusFault::UntrustedIssuer);
        }
        let leaf = Record::Revocations {
            revoked: self.revoked_list.clone(),
        }
        .leaf();
        if self.proof.tree_size != c.leaf_count || !verify_inclusion(&leaf, &self.proof, &c.root) {
            return Err(StatusFault::NotCommitted);
        }
        if self.revoked != self.revoked_list.binary_search(&self.credential_digest).is_ok() {
            return Err(StatusFault::Inconsistent);
        }
        Ok(self.revoked)
    }
}

impl Encode for RevocationStatus {
    fn encode(&self, w: &mut Writer) {
        w.digest(&self.credential_digest)
            .u64(self.status_round)
            .u8(self.revoked as u8)
            .list(&self.revoked_list)
            .put(&self.proof)
            .put(&self.issuer_commitment);
    }
}

impl Decode for RevocationStatus {
    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(RevocationStatus {
            credential_digest: r.digest()?,
            status_round: r.u64()?,
            revoked: r.bool()?,
            revoked_list: r.list(32)?,
            proof: r.get()?,
            issuer_commitment: r.get()?,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdentityError {
    #[error("holder-controlled credentials have no status to check")]
    NotCheckable,
    #[error("credential is unknown to this issuer")]
    UnknownCredential,
    #[error("only issuer-controlled credentials can be revoked")]
    WrongMode,
    #[error("issuer has not sealed round {0}")]
    RoundUnavailable(u64),
    #[error("invalid recovery policy: {0}")]
    InvalidPolicy(String),
}

/// Per-issuer registry. Only issuer-controlled credentials leave a trace
/// here; holder-controlled ones exist solely as committed leaves.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CredentialIssuer {
    /// Digest to the round it was revoked in, if any.
    status: BTreeMap<Digest, Option<u64>>,
    observed_queries: u64,
}

impl CredentialIssuer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Commits a new credential in the issuer's pending round.
    pub fn issue(
        &mut self,
        machine: &mut NodeMachine,
        subject: NodeId,
        claims: Expr,
        mode: Mode,
    ) -> Credential {
        let credential = Credential {
            issuer: machine.id(),
            subject,
            claims,
            issued_round: machine.next_round(),
            mode,
        };
        machine.attach(credential.record());
        if mode == Mode::IssuerControlled {
            self.status.insert(credential.digest(), None);
        }
        self.commit_status(machine);
        credential
    }

    /// The proof a holder receives once the issuing round is sealed.
    pub fn certify(credential: &Credential, sealed: &SealedRound) -> Result<IssuedCredential, IdentityError> {
        let index = sealed
            .state
            .record_index(&credential.record())
            .filter(|_| sealed.commitment.node_id == credential.issuer)
            .ok_or(IdentityError::UnknownCredential)?;
        Ok(IssuedCredential {
            credential: credential.clone(),
            issuer_commitment: sealed.commitment,
            inclusion: sealed.prove(index),
        })
    }

    /// Revokes from the issuer's pending round onward; returns that round.
    pub fn revoke(&mut self, machine: &mut NodeMachine, credential: &Credential) -> Result<u64, IdentityError> {
        if credential.issuer != machine.id() {
            return Err(IdentityError::UnknownCredential);
        }
        if credential.mode == Mode::HolderControlled {
            return Err(IdentityError::WrongMode);
        }
        let round = machine.next_round();
        let entry = self
            .status
            .get_mut(&credential.digest())
            .ok_or(IdentityError::UnknownCredential)?;
        let revoked_at = *entry.get_or_insert(round);
        self.commit_status(machine);
        Ok(revoked_at)
    }

    pub fn revoked_list(&self, round: u64) -> Vec<Digest> {
        self.status
            .iter()
            .filter(|(_, at)| at.is_some_and(|at| at <= round))
            .map(|(d, _)| *d)
            .collect()
    }

    pub fn has_status_entries(&self) -> bool {
        !self.status.is_empty()
    }

    /// Attaches this round's revocation list. Issuers with any
    /// issuer-controlled credential call this every round.
    pub fn commit_status(&self, machine: &mut NodeMachine) {
        if self.has_status_entries() {
            machine.attach(Record::Revocations {
                revoked: self.revoked_list(machine.next_round()),
            });
        }
    }

    /// Answers a status query from the issuer's round-`at_round` tree. Each
    /// answered query is visible to the issuer.
    pub fn check_status(
        &mut self,
        machine: &NodeMachine,
        credential: &Credential,
        at_round: u64,
    ) -> Result<RevocationStatus, IdentityError> {
        if credential.mode == Mode::HolderControlled {
            return Err(IdentityError::NotCheckable);
        }
        let digest = credential.digest();
        if credential.issuer != machine.id()
            || !self.status.contains_key(&digest)
            || credential.issued_round > at_round
        {
            return Err(IdentityError::UnknownCredential);
        }
        let sealed = machine
            .sealed(at_round)
            .ok_or(IdentityError::RoundUnavailable(at_round))?;
        let revoked_list = self.revoked_list(at_round);
        let record = Record::Revocations {
            revoked: revoked_list.clone(),
        };
        let index = sealed
            .state
            .record_index(&record)
            .ok_or(IdentityError::RoundUnavailable(at_round))?;
        self.observed_queries += 1;
        Ok(RevocationStatus {
            credential_digest: digest,
            status_round: at_round,
            revoked: revoked_list.binary_search(&digest).is_ok(),
            revoked_list,
            proof: sealed.prove(index),
            issuer_commitment: sealed.commitment,
        })
    }

    /// Status queries this issuer has answered.
    pub fn observed_queries(&self) -> u64 {
        self.observed_queries
    }

    /// Bytes of per-credential state the issuer keeps.
    pub fn stored_bytes(&self) -> u64 {
        self.status.len() as u64 * (32 + 9)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryPolicy {
    pub holder: NodeId,
    pub guardians: Vec<NodeId>,
    pub threshold: u32,
    pub committed_round: u64,
}

impl RecoveryPolicy {
    pub fn new(
        holder: NodeId,
        guardians: impl IntoIterator<Item = NodeId>,
        threshold: u32,
        committed_round: u64,
    ) -> Result<Self, IdentityError> {
        let set: BTreeSet<NodeId> = guardians.into_iter().collect();
        if threshold == 0 || threshold as usize > set.len() {
            return Err(IdentityError::InvalidPolicy(format!(
                "threshold {threshold} with {} guardians",
                set.len()
            )));
        }
        Ok(RecoveryPolicy {
            holder,
            guardians: set.into_iter().collect(),
            threshold,
            committed_round,
        })
    }

    /// `(threshold m #x<g1> ... #x<gn>)`
    pub fn expr(&self) -> Expr {
        let mut items = vec![
            Expr::symbol("threshold").expect("valid symbol"),
            Expr::Int(i64::from(self.threshold)),
        ];
        items.extend(self.guardians.iter().map(|g| Expr::Bytes(g.0.as_bytes().to_vec())));
        Expr::List(items)
    }

    pub fn digest(&self) -> Digest {
        Expr::list([
            Expr::symbol("recovery-policy").expect("valid symbol"),
            Expr::Bytes(self.holder.0.as_bytes().to_vec()),
            self.expr(),
        ])
        .content_address()
    }

    pub fn record(&self) -> Record {
        Record::RecoveryPolicy { digest: self.digest() }
    }

    /// Evaluates the policy with each guardian replaced by whether it
    /// endorsed.
    pub fn satisfied_by(&self, endorsed: &BTreeSet<NodeId>) -> bool {
        let substituted = self.expr().substitute(&|e| match e {
            Expr::Bytes(b) => {
                let id = NodeId(Digest::from(<[u8; 32]>::try_from(b.as_slice()).ok()?));
                Some(Expr::boolean(endorsed.contains(&id)))
            }
            _ => None,
        });
        matches!(sexpr::eval(&substituted), Ok(Value::Bool(true)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endorsement {
    pub guardian: NodeId,
    pub key: PublicKey,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryCertificate {
    pub holder: NodeId,
    pub new_key: PublicKey,
    /// First round signed by the new key.
    pub effective_round: u64,
    pub policy_digest: Digest,
    pub endorsements: Vec<Endorsement>,
}

impl RecoveryCertificate {
    pub fn new(holder: NodeId, new_key: PublicKey, effective_round: u64, policy: &RecoveryPolicy) -> Self {
        RecoveryCertificate {
            holder,
            new_key,
            effective_round,
            policy_digest: policy.digest(),
            endorsements: Vec::new(),
        }
    }

    fn message(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(ENDORSEMENT_CONTEXT)
            .put(&self.holder)
            .put(&self.new_key)
            .u64(self.effective_round)
            .digest(&self.policy_digest);
        w.into_bytes()
    }

    pub fn endorse(&mut self, guardian: NodeId, key: &KeyPair) {
        let signature = key.sign(&self.message());
        self.endorsements.push(Endorsement {
            guardian,
            key: key.public(),
            signature,
        });
    }

    pub fn digest(&self) -> Digest {
        Digest::sha256(&self.to_bytes())
    }
}

impl Encode for RecoveryCertificate {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.holder)
            .put(&self.new_key)
            .u64(self.effective_round)
            .digest(&self.policy_digest)
            .len(self.endorsements.len());
        for e in &self.endorsements {
            w.put(&e.guardian).put(&e.key).put(&e.signature);
        }
    }
}

impl Decode for RecoveryCertificate {
    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let holder = r.get()?;
        let new_key = r.get()?;
        let effective_round = r.u64()?;
        let policy_digest = r.digest()?;
        let n = r.count(32 + 32 + 64)?;
        let mut endorsements = Vec::with_capacity(n);
        for _ in 0..n {
            endorsements.push(Endorsement {
                guardian: r.get()?,
                key: r.get()?,
                signature: r.get()?,
            });
        }
        Ok(RecoveryCertificate {
            holder,
            new_key,
            effective_round,
            policy_digest,
            endorsements,
        })
    }
}

/// What the holder presents alongside a certificate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryEvidence {
    /// The holder commitment of the round the policy was committed in.
    pub policy_commitment: Commitment,
    pub policy_proof: InclusionProof,
    /// Hub over a window containing the policy round.
    pub hub: HubProof,
}

impl RecoveryEvidence {
    pub fn build(
        policy: &RecoveryPolicy,
        committed_in: &SealedRound,
        hub: HubProof,
    ) -> Result<Self, IdentityError> {
        let index = committed_in
            .state
            .record_index(&policy.record())
            .ok_or_else(|| IdentityError::InvalidPolicy("policy not in the given round".into()))?;
        Ok(RecoveryEvidence {
            policy_commitment: committed_in.commitment,
            policy_proof: committed_in.prove(index),
            hub,
        })
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RecoveryFault {
    #[error("{valid} valid endorsements, policy needs {threshold}")]
    InsufficientEndorsements { valid: usize, threshold: u32 },
    #[error("endorsement by {guardian} does not verify")]
    BadEndorsement { guardian: NodeId },
    #[error("policy is not committed in the holder's history")]
    PolicyNotCommitted,
    #[error("{guardian} is not a hub member at the policy round")]
    GuardianNotInHub { guardian: NodeId },
    #[error("hub evidence fails: {0}")]
    HubInvalid(HubFault),
}

/// Checks a recovery certificate and, when it holds, binds the new key in
/// `directory` from the certificate's effective round.
pub fn recover_key(
    cert: &RecoveryCertificate,
    policy: &RecoveryPolicy,
    evidence: &RecoveryEvidence,
    trust: &TrustStore,
    directory: &mut KeyDirectory,
) -> Result<(), RecoveryFault> {
    let pc = &evidence.policy_commitment;
    let policy_committed = cert.holder == policy.holder
        && cert.policy_digest == policy.digest()
        && pc.node_id == policy.holder
        && pc.round == policy.committed_round
        && pc.verify(&trust.keys)
        && evidence.policy_proof.tree_size == pc.leaf_count
        && verify_inclusion(&policy.record().leaf(), &evidence.policy_proof, &pc.root);
    if !policy_committed {
        return Err(RecoveryFault::PolicyNotCommitted);
    }

    let hub = &evidence.hub;
    verify_hub(hub, trust).map_err(RecoveryFault::HubInvalid)?;
    let hub_commitment = hub
        .links
        .first()
        .and_then(|l| l.holder_commitment(policy.committed_round));
    if hub.holder != policy.holder || hub_commitment != Some(pc) {
        return Err(RecoveryFault::PolicyNotCommitted);
    }
    if let Some(g) = policy.guardians.iter().find(|g| !hub.manifest.contains(g)) {
        return Err(RecoveryFault::GuardianNotInHub { guardian: *g });
    }

    let message = cert.message();
    let mut endorsed = BTreeSet::new();
    for e in &cert.endorsements {
        if !policy.guardians.contains(&e.guardian) {
            return Err(RecoveryFault::GuardianNotInHub { guardian: e.guardian });
        }
        if !trust.keys.accepts(&e.guardian, cert.effective_round, &e.key)
            || !e.key.verify(&message, &e.signature)
        {
            return Err(RecoveryFault::BadEndorsement { guardian: e.guardian });
        }
        endorsed.insert(e.guardian);
    }
    if !policy.satisfied_by(&endorsed) {
        return Err(RecoveryFault::InsufficientEndorsements {
            valid: endorsed.len(),
            threshold: policy.threshold,
        });
    }
    directory.bind(cert.holder, cert.effective_round, cert.new_key);
    Ok(())
}

/// Switches the holder's machine to the recovered key and commits the
/// certificate digest in its next round.
pub fn apply_recovery(machine: &mut NodeMachine, new_key: KeyPair, cert: &RecoveryCertificate) {
    machine.rotate_key(new_key, cert.digest());
}

#[cfg(test)]
mod tests {
    use super::*;

    fn machine(seed: u8) -> NodeMachine {
        NodeMachine::new(KeyPair::from_seed([seed; 32]))
    }

    fn claims() -> Expr {
        sexpr::parse("(member-of lab)").unwrap()
    }

    #[test]
    fn issuance_round_trip() {
        let mut issuer = machine(1);
        let mut reg = CredentialIssuer::new();
        let cred = reg.issue(&mut issuer, machine(2).id(), claims(), Mode::IssuerControlled);
        let sealed = issuer.seal().unwrap().clone();
        let issued = CredentialIssuer::certify(&cred, &sealed).unwrap();
        assert!(issued.verify(&KeyDirectory::new()));
    }

    #[test]
    fn subject_distinguishes_digests() {
        let issuer = machine(1).id();
        let a = Credential {
            issuer,
            subject: machine(2).id(),
            claims: claims(),
            issued_round: 0,
            mode: Mode::IssuerControlled,
        };
        let b = Credential {
            subject: machine(3).id(),
            ..a.clone()
        };
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn holder_controlled_leaves_no_status() {
        let mut issuer = machine(1);
        let mut reg = CredentialIssuer::new();
        let cred = reg.issue(&mut issuer, machine(2).id(), claims(), Mode::HolderControlled);
        issuer.seal().unwrap();
        assert_eq!(reg.stored_bytes(), 0);
        assert_eq!(reg.check_status(&issuer, &cred, 0), Err(IdentityError::NotCheckable));
        assert_eq!(reg.observed_queries(), 0);
        assert_eq!(reg.revoke(&mut issuer, &cred), Err(IdentityError::WrongMode));
    }

    #[test]
    fn revocation_visible_from_its_round() {
        let mut issuer = machine(1);
        let mut reg = CredentialIssuer::new();
        let trust = TrustStore::new();
        let cred = reg.issue(&mut issuer, machine(2).id(), claims(), Mode::IssuerControlled);
        issuer.seal().unwrap();
        for _ in 0..2 {
            reg.commit_status(&mut issuer);
            issuer.seal().unwrap();
        }
        let before = reg.check_status(&issuer, &cred, 2).unwrap();
        assert_eq!(before.verify(&trust), Ok(false));

        let round = reg.revoke(&mut issuer, &cred).unwrap();
        assert_eq!(round, 3);
        issuer.seal().unwrap();
        let after = reg.check_status(&issuer, &cred, 3).unwrap();
        assert_eq!(after.verify(&trust), Ok(true));
        assert_eq!(reg.check_status(&issuer, &cred, 2).unwrap().verify(&trust), Ok(false));
        assert_eq!(reg.observed_queries(), 3);

        // Idempotent, and the list persists.
        reg.commit_status(&mut issuer);
        assert_eq!(reg.revoke(&mut issuer, &cred), Ok(3));
        issuer.seal().unwrap();
        assert_eq!(reg.check_status(&issuer, &cred, 4).unwrap().verify(&trust), Ok(true));

        let mut lying = reg.check_status(&issuer, &cred, 4).unwrap();
        lying.revoked = false;
        assert_eq!(lying.verify(&trust), Err(StatusFault::Inconsistent));
    }

    #[test]
    fn unknown_credential_rejected() {
        let mut issuer = machine(1);
        let mut reg = CredentialIssuer::new();
        let stranger = Credential {
            issuer: issuer.id(),
            subject: machine(2).id(),
            claims: claims(),
            issued_round: 0,
            mode: Mode::IssuerControlled,
        };
        assert_eq!(reg.revoke(&mut issuer, &stranger), Err(IdentityError::UnknownCredential));
    }

    #[test]
    fn policy_threshold_evaluation() {
        let guardians: Vec<NodeId> = (10..15).map(|s| machine(s).id()).collect();
        let policy = RecoveryPolicy::new(machine(1).id(), guardians.clone(), 3, 0).unwrap();
        for mask in 0u32..32 {
            let subset: BTreeSet<NodeId> = guardians
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, g)| *g)
                .collect();
            assert_eq!(policy.satisfied_by(&subset), mask.count_ones() >= 3, "mask {mask:05b}");
        }
        assert!(RecoveryPolicy::new(machine(1).id(), guardians.clone(), 0, 0).is_err());
        assert!(RecoveryPolicy::new(machine(1).id(), guardians, 6, 0).is_err());
    }

    #[test]
    fn certificate_wire_round_trip() {
        let policy = RecoveryPolicy::new(machine(1).id(), [machine(2).id()], 1, 0).unwrap();
        let mut cert = RecoveryCertificate::new(machine(1).id(), machine(9).key().public(), 4, &policy);
        cert.endorse(machine(2).id(), machine(2).key());
        let decoded = RecoveryCertificate::from_bytes(&cert.to_bytes()).unwrap();
        assert_eq!(decoded, cert);
        assert_eq!(decoded.digest(), cert.digest());
    }
}
