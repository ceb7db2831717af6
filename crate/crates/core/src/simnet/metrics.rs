//! Per-node counters and the event log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verifications {
    pub ok: u64,
    pub failed: u64,
    pub reasons: BTreeMap<String, u64>,
}

impl Verifications {
    pub fn record(&mut self, outcome: Result<(), String>) {
        match outcome {
            Ok(()) => self.ok += 1,
            Err(reason) => {
                self.failed += 1;
                *self.reasons.entry(reason).or_default() += 1;
            }
        }
    }
}

/// Cumulative counters for one node.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub bytes_stored: u64,
    pub bytes_sent: u64,
    pub messages_sent: u64,
    pub proof_bytes_generated: u64,
    pub verifications: Verifications,
    pub issuer_observed_status_queries: u64,
}

/// One line of the metrics stream: a node's counters at the end of a round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub round: u64,
    pub node: String,
    #[serde(flatten)]
    pub counters: Counters,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    RoundSealed { node: String, root: String, leaves: u64 },
    SubmissionRejected { issuer: String, holder: String, reason: String },
    ReceiptRejected { holder: String, issuer: String, reason: String },
    ReceiptMissing { holder: String, issuer: String, holder_round: u64 },
    EquivocationInjected { node: String, victims: Vec<String> },
    EquivocationDetected { detector: String, culprit: String, issuer_round: u64 },
    ReceiptWithheld { issuer: String, holder: String, holder_round: u64 },
    ForkInjected { node: String, rewritten_round: u64 },
    ForkDetected { detector: String, culprit: String, holder_round: u64 },
    Verification { node: String, kind: String, target: String, holder_round: u64, ok: bool, reason: Option<String> },
    CredentialIssued { label: String, issuer: String, subject: String, mode: String, digest: String },
    CredentialRevoked { label: String, effective_round: u64 },
    StatusChecked { label: String, verifier: String, status_round: u64, outcome: String },
    PolicyCommitted { holder: String, guardians: Vec<String>, threshold: u32, digest: String },
    KeyRecovered { holder: String, new_key: String, certificate: String },
    RecoveryFailed { holder: String, reason: String },
    IdentityOpFailed { op: String, reason: String },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::RoundSealed { .. } => "round_sealed",
            EventKind::SubmissionRejected { .. } => "submission_rejected",
            EventKind::ReceiptRejected { .. } => "receipt_rejected",
            EventKind::ReceiptMissing { .. } => "receipt_missing",
            EventKind::EquivocationInjected { .. } => "equivocation_injected",
            EventKind::EquivocationDetected { .. } => "equivocation_detected",
            EventKind::ReceiptWithheld { .. } => "receipt_withheld",
            EventKind::ForkInjected { .. } => "fork_injected",
            EventKind::ForkDetected { .. } => "fork_detected",
            EventKind::Verification { .. } => "verification",
            EventKind::CredentialIssued { .. } => "credential_issued",
            EventKind::CredentialRevoked { .. } => "credential_revoked",
            EventKind::StatusChecked { .. } => "status_checked",
            EventKind::PolicyCommitted { .. } => "policy_committed",
            EventKind::KeyRecovered { .. } => "key_recovered",
            EventKind::RecoveryFailed { .. } => "recovery_failed",
            EventKind::IdentityOpFailed { .. } => "identity_op_failed",
        }
    }
}

/// Event-log entry; `(round, seq)` is strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub round: u64,
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// One JSON object per line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("plain data serializes"));
        out.push('\n');
    }
    out
}
