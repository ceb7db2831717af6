use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;
use serde::Serialize;

use super::config::{ConfigError, FaultConfig, IdentityOp, ScenarioConfig};
use super::metrics::{Counters, Event, EventKind, MetricsRecord};
use super::topology::{Role, Topology};
use crate::crypto::{KeyDirectory, KeyPair, NodeId};
use crate::entangle::{
    accept_submission, build_chain_proof, build_hub_proof, issue_receipt, verify_chain, ChainProofFault,
    EntangleError, LinkFault, ReceiptMessage, Submission, TrustStore, Window,
};
use crate::identity::{
    apply_recovery, recover_key, Credential, CredentialIssuer, IdentityError, RecoveryCertificate,
    RecoveryEvidence, RecoveryFault, RecoveryPolicy,
};
use crate::node::{continues, Commitment, NodeMachine, SealedRound, COMMITMENT_LEN};
use crate::sexpr::{self, Expr};
use crate::wire::Encode;

const DIGEST_BYTES: u64 = 32;
const STATUS_QUERY_BYTES: u64 = 32 + 8;

#[derive(Debug, Clone)]
enum Message {
    Submit(Submission),
    Receipt(ReceiptMessage),
    Gossip(Commitment),
}

impl Message {
    fn size(&self) -> u64 {
        (match self {
            Message::Submit(s) => s.to_bytes().len(),
            Message::Receipt(r) => r.to_bytes().len(),
            Message::Gossip(c) => c.to_bytes().len(),
        }) as u64
    }
}

#[derive(Debug, Clone)]
struct Envelope {
    from: usize,
    to: usize,
    message: Message,
}

/// A node plus everything the simulator tracks for it.
#[derive(Debug, Clone)]
struct SimNode {
    machine: NodeMachine,
    out: Vec<usize>,
    neighbors: Vec<usize>,
    anchor: bool,
    accepted: Vec<Submission>,
    /// Latest commitment seen from each peer, via submissions or receipts.
    seen: BTreeMap<NodeId, Commitment>,
    /// Receipts that arrived this round, by issuer index.
    receipts_from: BTreeSet<usize>,
    view: BTreeMap<NodeId, BTreeMap<u64, Commitment>>,
    forward: Vec<(Commitment, usize)>,
    learned: u64,
    variant: Option<(usize, SealedRound)>,
    registry: CredentialIssuer,
    registry_bytes: u64,
    counters: Counters,
}

impl SimNode {
    fn keeps_state(&self) -> bool {
        !self.out.is_empty()
    }

    fn trust(&self, keys: &KeyDirectory) -> TrustStore {
        let mut trust = TrustStore::with_keys(keys.clone());
        for c in self.view.values().flat_map(|rounds| rounds.values()) {
            trust.trust(c);
        }
        trust
    }
}

/// A deterministic run of one scenario.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: ScenarioConfig,
    topology: Topology,
    nodes: Vec<SimNode>,
    index: BTreeMap<NodeId, usize>,
    keys: KeyDirectory,
    rng: ChaCha20Rng,
    round: u64,
    inbox: Vec<Envelope>,
    events: Vec<Event>,
    metrics: Vec<MetricsRecord>,
    credentials: BTreeMap<String, Credential>,
    policies: BTreeMap<usize, RecoveryPolicy>,
    seq: u64,
}

fn snake<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(serde_json::Value::Object(map)) => map
            .get("reason")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .or_else(|| map.keys().next().cloned())
            .unwrap_or_default(),
        _ => String::new(),
    }
}

fn to_snake(name: &str) -> String {
    let mut out = String::new();
    for (i, ch) in name.chars().enumerate() {
        if ch.is_ascii_uppercase() {
            if i > 0 {
                out.push('_');
            }
            out.push(ch.to_ascii_lowercase());
        } else {
            out.push(ch);
        }
    }
    out
}

fn variant_name<T: std::fmt::Debug>(value: &T) -> String {
    let debug = format!("{value:?}");
    let end = debug.find(|c: char| !c.is_alphanumeric()).unwrap_or(debug.len());
    to_snake(&debug[..end])
}

pub(crate) fn link_fault_reason(fault: &LinkFault) -> String {
    match fault {
        LinkFault::HolderChain(inner) => format!("holder_chain_{}", variant_name(inner)),
        other => variant_name(other),
    }
}

pub(crate) fn chain_fault_reason(fault: &ChainProofFault) -> String {
    match fault {
        ChainProofFault::BrokenHop { fault: Some(inner), .. } => link_fault_reason(inner),
        other => snake(other),
    }
}

fn entangle_error_reason(err: &EntangleError) -> String {
    variant_name(err)
}

fn recovery_fault_reason(fault: &RecoveryFault) -> String {
    snake(fault)
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let topology = Topology::build(&config.topology, config.seed)?;
        validate_references(&config, &topology)?;
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let mut nodes = Vec::with_capacity(topology.len());
        let mut index = BTreeMap::new();
        let mut keys = KeyDirectory::new();
        for i in 0..topology.len() {
            let key = KeyPair::generate(&mut rng);
            keys.bind(key.node_id(), 0, key.public());
            let mut machine = NodeMachine::new(key);
            index.insert(machine.id(), i);
            let out = topology.out_links(i);
            nodes.push(SimNode {
                machine: {
                    machine.set_payload(Expr::Int(0));
                    machine
                },
                out,
                neighbors: topology.neighbors(i),
                anchor: topology.is_anchor(i),
                accepted: Vec::new(),
                seen: BTreeMap::new(),
                receipts_from: BTreeSet::new(),
                view: BTreeMap::new(),
                forward: Vec::new(),
                learned: 0,
                variant: None,
                registry: CredentialIssuer::new(),
                registry_bytes: 0,
                counters: Counters::default(),
            });
        }
        for i in 0..nodes.len() {
            let links: Vec<NodeId> = nodes[i].out.iter().map(|&j| nodes[j].machine.id()).collect();
            for id in links {
                nodes[i].machine.link_to(id);
            }
        }
        Ok(Simulation {
            config,
            topology,
            nodes,
            index,
            keys,
            rng,
            round: 0,
            inbox: Vec::new(),
            events: Vec::new(),
            metrics: Vec::new(),
            credentials: BTreeMap::new(),
            policies: BTreeMap::new(),
            seq: 0,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn metrics(&self) -> &[MetricsRecord] {
        &self.metrics
    }

    pub fn keys(&self) -> &KeyDirectory {
        &self.keys
    }

    /// Rounds completed so far.
    pub fn rounds_run(&self) -> u64 {
        self.round
    }

    pub fn machine(&self, i: usize) -> &NodeMachine {
        &self.nodes[i].machine
    }

    pub fn node_id(&self, i: usize) -> NodeId {
        self.nodes[i].machine.id()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.topology.index_of(label)
    }

    pub fn index_of_id(&self, id: &NodeId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn history(&self, i: usize) -> &[SealedRound] {
        self.nodes[i].machine.history()
    }

    /// Whether the node persists full round states (it has outgoing links).
    pub fn keeps_state(&self, i: usize) -> bool {
        self.nodes[i].keeps_state()
    }

    /// Anchor commitments node `i` has received through gossip, plus its
    /// own when it is an anchor.
    pub fn gossip_view(&self, i: usize) -> &BTreeMap<NodeId, BTreeMap<u64, Commitment>> {
        &self.nodes[i].view
    }

    pub fn credential(&self, label: &str) -> Option<&Credential> {
        self.credentials.get(label)
    }

    pub fn registry(&self, i: usize) -> &CredentialIssuer {
        &self.nodes[i].registry
    }

    /// What a verifier trusting every anchor's published commitments sees.
    pub fn trusted(&self) -> TrustStore {
        let mut trust = TrustStore::with_keys(self.keys.clone());
        for a in self.topology.anchors() {
            for sealed in self.history(a) {
                trust.trust(&sealed.commitment);
            }
        }
        trust
    }

    pub fn histories(&self) -> BTreeMap<NodeId, &[SealedRound]> {
        (0..self.nodes.len()).map(|i| (self.node_id(i), self.history(i))).collect()
    }

    pub fn run_to_end(&mut self) {
        while self.round < self.config.rounds {
            self.step();
        }
    }

    fn emit(&mut self, round: u64, kind: EventKind) {
        self.events.push(Event {
            round,
            seq: self.seq,
            kind,
        });
        self.seq += 1;
    }

    fn label(&self, i: usize) -> String {
        self.topology.label(i).to_string()
    }

    fn send(&mut self, from: usize, to: usize, message: Message) {
        let counters = &mut self.nodes[from].counters;
        counters.bytes_sent += message.size();
        counters.messages_sent += 1;
        self.inbox.push(Envelope { from, to, message });
    }

    /// Runs one round.
    pub fn step(&mut self) {
        let t = self.round;
        for node in &mut self.nodes {
            node.receipts_from.clear();
            node.learned = 0;
        }
        for envelope in std::mem::take(&mut self.inbox) {
            self.deliver(t, envelope);
        }
        if t >= 2 {
            self.note_missing_receipts(t);
        }
        let ops: Vec<IdentityOp> = self.config.identity.iter().filter(|op| op.round() == t).cloned().collect();
        let mut issued = Vec::new();
        for op in &ops {
            self.apply_pre_seal(t, op, &mut issued);
        }
        for node in &mut self.nodes {
            node.registry.commit_status(&mut node.machine);
        }
        let faults: Vec<FaultConfig> = self.config.faults.iter().filter(|f| f.round() == t).cloned().collect();
        for fault in &faults {
            self.inject(t, fault);
        }
        self.seal_all(t);
        for label in issued {
            self.certify(t, &label);
        }
        for op in &ops {
            if let IdentityOp::Check { credential, verifier, .. } = op {
                self.check_status(t, credential, verifier);
            }
        }
        self.send_receipts(t, &faults);
        self.send_submissions();
        self.gossip();
        self.verify_chains(t);
        self.account_storage();
        for i in 0..self.nodes.len() {
            let node = &mut self.nodes[i];
            node.counters.issuer_observed_status_queries = node.registry.observed_queries();
            self.metrics.push(MetricsRecord {
                round: t,
                node: self.topology.label(i).to_string(),
                counters: node.counters.clone(),
            });
        }
        self.round += 1;
    }

    fn deliver(&mut self, t: u64, env: Envelope) {
        let Envelope { from, to, message } = env;
        match message {
            Message::Submit(sub) => self.on_submission(t, from, to, sub),
            Message::Receipt(msg) => self.on_receipt(t, from, to, msg),
            Message::Gossip(c) => self.on_gossip(from, to, c),
        }
    }

    fn on_submission(&mut self, t: u64, from: usize, to: usize, sub: Submission) {
        let holder_id = sub.holder_id();
        let forked = match self.nodes[to].seen.get(&holder_id) {
            Some(prev) if prev.round + 1 == sub.holder_round() => !sub
                .continuity
                .as_ref()
                .is_some_and(|p| continues(prev, &sub.commitment, p)),
            Some(prev) => prev.round == sub.holder_round() && *prev != sub.commitment,
            None => false,
        };
        if forked {
            self.nodes[to].counters.verifications.record(Err("fork".into()));
            let (detector, culprit) = (self.label(to), self.label(from));
            self.emit(
                t,
                EventKind::ForkDetected {
                    detector,
                    culprit,
                    holder_round: sub.holder_round(),
                },
            );
            return;
        }
        let max_lag = self.config.max_lag;
        let node = &mut self.nodes[to];
        match accept_submission(&mut node.machine, &sub, &self.keys, max_lag) {
            Ok(()) => {
                node.counters.verifications.record(Ok(()));
                node.seen.insert(holder_id, sub.commitment);
                node.accepted.push(sub);
            }
            Err(err) => {
                let reason = entangle_error_reason(&err);
                node.counters.verifications.record(Err(reason.clone()));
                let (issuer, holder) = (self.label(to), self.label(from));
                self.emit(t, EventKind::SubmissionRejected { issuer, holder, reason });
            }
        }
    }

    fn on_receipt(&mut self, t: u64, from: usize, to: usize, msg: ReceiptMessage) {
        let receipt = &msg.receipt;
        let c = receipt.issuer_commitment;
        let holder_commitment = receipt
            .issuer_round
            .checked_sub(1)
            .and_then(|r| self.nodes[to].machine.sealed(r))
            .map(|s| s.commitment);
        let covered = holder_commitment.is_some_and(|hc| receipt.covers(&hc, &self.keys));
        if !covered || c.node_id != self.node_id(from) {
            self.nodes[to].counters.verifications.record(Err("not_entangled".into()));
            let (holder, issuer) = (self.label(to), self.label(from));
            self.emit(
                t,
                EventKind::ReceiptRejected {
                    holder,
                    issuer,
                    reason: "not_entangled".into(),
                },
            );
            return;
        }
        let equivocated = match self.nodes[to].seen.get(&c.node_id) {
            Some(prev) if prev.round + 1 == c.round => !msg
                .continuity
                .as_ref()
                .is_some_and(|p| continues(prev, &c, p)),
            Some(prev) => prev.round == c.round && *prev != c,
            None => false,
        };
        let node = &mut self.nodes[to];
        node.counters.verifications.record(if equivocated {
            Err("equivocation".into())
        } else {
            Ok(())
        });
        node.seen.insert(c.node_id, c);
        node.receipts_from.insert(from);
        node.machine.retain(msg.receipt);
        if equivocated {
            let (detector, culprit) = (self.label(to), self.label(from));
            self.emit(
                t,
                EventKind::EquivocationDetected {
                    detector,
                    culprit,
                    issuer_round: c.round,
                },
            );
        }
    }

    fn on_gossip(&mut self, from: usize, to: usize, c: Commitment) {
        let Some(origin) = self.index_of_id(&c.node_id) else {
            return;
        };
        if !self.nodes[origin].anchor || !c.verify(&self.keys) {
            return;
        }
        let node = &mut self.nodes[to];
        let rounds = node.view.entry(c.node_id).or_default();
        if rounds.contains_key(&c.round) {
            return;
        }
        rounds.insert(c.round, c);
        node.learned += 1;
        node.forward.push((c, from));
    }

    fn note_missing_receipts(&mut self, t: u64) {
        let mut missing = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            for &j in &node.out {
                if !node.receipts_from.contains(&j) {
                    missing.push((i, j));
                }
            }
        }
        for (i, j) in missing {
            let (holder, issuer) = (self.label(i), self.label(j));
            self.emit(
                t,
                EventKind::ReceiptMissing {
                    holder,
                    issuer,
                    holder_round: t - 2,
                },
            );
        }
    }

    fn idx(&self, label: &str) -> usize {
        self.topology.index_of(label).expect("labels validated at construction")
    }

    fn apply_pre_seal(&mut self, t: u64, op: &IdentityOp, issued: &mut Vec<String>) {
        match op {
            IdentityOp::Issue {
                label,
                issuer,
                subject,
                claims,
                mode,
                ..
            } => {
                let (i, s) = (self.idx(issuer), self.idx(subject));
                let subject_id = self.node_id(s);
                let claims = sexpr::parse(claims).expect("claims validated at construction");
                let node = &mut self.nodes[i];
                let credential = node.registry.issue(&mut node.machine, subject_id, claims, *mode);
                self.credentials.insert(label.clone(), credential);
                issued.push(label.clone());
            }
            IdentityOp::Revoke { credential, .. } => {
                let Some(cred) = self.credentials.get(credential).cloned() else {
                    return self.identity_failed(t, "revoke", "unknown credential");
                };
                let i = self.index_of_id(&cred.issuer).expect("issuer is a node");
                let node = &mut self.nodes[i];
                match node.registry.revoke(&mut node.machine, &cred) {
                    Ok(effective_round) => self.emit(
                        t,
                        EventKind::CredentialRevoked {
                            label: credential.clone(),
                            effective_round,
                        },
                    ),
                    Err(e) => self.identity_failed(t, "revoke", &e.to_string()),
                }
            }
            IdentityOp::Policy {
                holder,
                guardians,
                threshold,
                ..
            } => {
                let h = self.idx(holder);
                let ids: Vec<NodeId> = guardians.iter().map(|g| self.node_id(self.idx(g))).collect();
                match RecoveryPolicy::new(self.node_id(h), ids, *threshold, t) {
                    Ok(policy) => {
                        self.nodes[h].machine.attach(policy.record());
                        let digest = policy.digest().to_hex();
                        self.policies.insert(h, policy);
                        self.emit(
                            t,
                            EventKind::PolicyCommitted {
                                holder: holder.clone(),
                                guardians: guardians.clone(),
                                threshold: *threshold,
                                digest,
                            },
                        );
                    }
                    Err(e) => self.identity_failed(t, "policy", &e.to_string()),
                }
            }
            IdentityOp::Recover { holder, endorsers, .. } => self.recover(t, holder, endorsers),
            IdentityOp::Check { .. } => {}
        }
    }

    fn identity_failed(&mut self, t: u64, op: &str, reason: &str) {
        self.emit(
            t,
            EventKind::IdentityOpFailed {
                op: op.into(),
                reason: reason.into(),
            },
        );
    }

    fn recover(&mut self, t: u64, holder: &str, endorsers: &[String]) {
        let h = self.idx(holder);
        let fail = |reason: String| EventKind::RecoveryFailed {
            holder: holder.to_string(),
            reason,
        };
        let Some(policy) = self.policies.get(&h).cloned() else {
            return self.emit(t, fail("no_policy".into()));
        };
        let history = self.history(h);
        let hub = match build_hub_proof(history, Window::single(policy.committed_round)) {
            Ok(hub) => hub,
            Err(e) => return self.emit(t, fail(entangle_error_reason(&e))),
        };
        let committed_in = self
            .nodes[h]
            .machine
            .sealed(policy.committed_round)
            .expect("hub proof covers the policy round");
        let evidence = match RecoveryEvidence::build(&policy, committed_in, hub) {
            Ok(ev) => ev,
            Err(_) => return self.emit(t, fail("policy_not_committed".into())),
        };
        let new_key = KeyPair::generate(&mut self.rng);
        let mut cert = RecoveryCertificate::new(self.node_id(h), new_key.public(), t, &policy);
        for e in endorsers {
            let g = self.idx(e);
            cert.endorse(self.node_id(g), self.nodes[g].machine.key());
        }
        let trust = self.trusted();
        let proof_bytes = (evidence.hub.to_bytes().len() + cert.to_bytes().len()) as u64;
        self.nodes[h].counters.proof_bytes_generated += proof_bytes;
        match recover_key(&cert, &policy, &evidence, &trust, &mut self.keys) {
            Ok(()) => {
                self.nodes[h].counters.verifications.record(Ok(()));
                apply_recovery(&mut self.nodes[h].machine, new_key, &cert);
                self.emit(
                    t,
                    EventKind::KeyRecovered {
                        holder: holder.to_string(),
                        new_key: hex::encode(cert.new_key.0),
                        certificate: cert.digest().to_hex(),
                    },
                );
            }
            Err(fault) => {
                let reason = recovery_fault_reason(&fault);
                self.nodes[h].counters.verifications.record(Err(reason.clone()));
                self.emit(t, fail(reason));
            }
        }
    }

    fn inject(&mut self, t: u64, fault: &FaultConfig) {
        match fault {
            FaultConfig::ForkHistory { node, .. } => {
                let i = self.idx(node);
                let payload = Expr::list([Expr::symbol("fork").expect("symbol"), Expr::Int(t as i64 - 1)]);
                if self.nodes[i].machine.rewrite_last(payload).is_ok() {
                    self.emit(
                        t,
                        EventKind::ForkInjected {
                            node: node.clone(),
                            rewritten_round: t - 1,
                        },
                    );
                }
            }
            FaultConfig::Equivocate { node, victims, .. } => {
                let i = self.idx(node);
                let victims = self.victims(i, victims);
                let payload = Expr::list([Expr::symbol("equivocate").expect("symbol"), Expr::Int(t as i64)]);
                let machine = &self.nodes[i].machine;
                let variant = machine
                    .build_variant(|s| s.payload = payload.clone())
                    .expect("variant of a valid pending round is valid");
                self.nodes[i].variant = Some((victims[1], variant));
                let labels = victims.iter().map(|&v| self.label(v)).collect();
                self.emit(
                    t,
                    EventKind::EquivocationInjected {
                        node: node.clone(),
                        victims: labels,
                    },
                );
            }
            FaultConfig::WithholdReceipt { .. } => {}
        }
    }

    fn victims(&self, i: usize, named: &[String]) -> Vec<usize> {
        if named.is_empty() {
            self.topology.in_links(i).into_iter().take(2).collect()
        } else {
            named.iter().map(|v| self.idx(v)).collect()
        }
    }

    fn seal_all(&mut self, t: u64) {
        let payload = Expr::list([Expr::symbol("tick").expect("symbol"), Expr::Int(t as i64)]);
        let mut sealed = Vec::with_capacity(self.nodes.len());
        for node in &mut self.nodes {
            node.machine.set_payload(payload.clone());
            let s = node.machine.seal().expect("simulator builds valid rounds");
            sealed.push((s.commitment.root.to_hex(), s.commitment.leaf_count));
        }
        for (i, (root, leaves)) in sealed.into_iter().enumerate() {
            let node = self.label(i);
            self.emit(t, EventKind::RoundSealed { node, root, leaves });
        }
    }

    fn certify(&mut self, t: u64, label: &str) {
        let cred = self.credentials[label].clone();
        let i = self.index_of_id(&cred.issuer).expect("issuer is a node");
        let sealed = self.nodes[i].machine.last().expect("just sealed");
        match CredentialIssuer::certify(&cred, sealed) {
            Ok(issued) => {
                let bytes = (issued.inclusion.to_bytes().len() + COMMITMENT_LEN) as u64;
                let s = self.index_of_id(&cred.subject).expect("subject is a node");
                self.nodes[i].counters.proof_bytes_generated += bytes;
                self.nodes[i].counters.bytes_sent += bytes;
                self.nodes[i].counters.messages_sent += 1;
                self.nodes[s].counters.verifications.record(if issued.verify(&self.keys) {
                    Ok(())
                } else {
                    Err("bad_issuance".into())
                });
                self.emit(
                    t,
                    EventKind::CredentialIssued {
                        label: label.to_string(),
                        issuer: self.label(i),
                        subject: self.label(s),
                        mode: cred.mode.to_string(),
                        digest: cred.digest().to_hex(),
                    },
                );
            }
            Err(e) => self.identity_failed(t, "issue", &e.to_string()),
        }
    }

    fn check_status(&mut self, t: u64, label: &str, verifier: &str) {
        let Some(cred) = self.credentials.get(label).cloned() else {
            return self.identity_failed(t, "check", "unknown credential");
        };
        let v = self.idx(verifier);
        let i = self.index_of_id(&cred.issuer).expect("issuer is a node");
        let node = &mut self.nodes[i];
        let outcome = match node.registry.check_status(&node.machine, &cred, t) {
            Ok(status) => {
                let size = status.to_bytes().len() as u64;
                node.counters.bytes_sent += size;
                node.counters.messages_sent += 1;
                node.counters.proof_bytes_generated += size;
                let trust = self.nodes[v].trust(&self.keys);
                let verifier_node = &mut self.nodes[v];
                verifier_node.counters.bytes_sent += STATUS_QUERY_BYTES;
                verifier_node.counters.messages_sent += 1;
                match status.verify(&trust) {
                    Ok(revoked) => {
                        verifier_node.counters.verifications.record(Ok(()));
                        if revoked { "revoked" } else { "valid" }.to_string()
                    }
                    Err(fault) => {
                        let reason = snake(&fault);
                        verifier_node.counters.verifications.record(Err(reason.clone()));
                        format!("unverified_{reason}")
                    }
                }
            }
            Err(IdentityError::NotCheckable) => "not_checkable".to_string(),
            Err(e) => return self.identity_failed(t, "check", &e.to_string()),
        };
        self.emit(
            t,
            EventKind::StatusChecked {
                label: label.to_string(),
                verifier: verifier.to_string(),
                status_round: t,
                outcome,
            },
        );
    }

    fn send_receipts(&mut self, t: u64, faults: &[FaultConfig]) {
        let max_lag = self.config.max_lag;
        for i in 0..self.nodes.len() {
            let accepted = std::mem::take(&mut self.nodes[i].accepted);
            let variant = self.nodes[i].variant.take();
            for sub in accepted {
                let h = self.index_of_id(&sub.holder_id()).expect("submitter is a node");
                let withheld = faults.iter().any(|f| {
                    matches!(f, FaultConfig::WithholdReceipt { issuer, holder, round }
                        if self.idx(issuer) == i && self.idx(holder) == h && *round + 1 == t)
                }) || self.config.faults.iter().any(|f| {
                    matches!(f, FaultConfig::WithholdReceipt { issuer, holder, round }
                        if self.idx(issuer) == i && self.idx(holder) == h && *round == sub.holder_round())
                });
                if withheld {
                    let (issuer, holder) = (self.label(i), self.label(h));
                    self.emit(
                        t,
                        EventKind::ReceiptWithheld {
                            issuer,
                            holder,
                            holder_round: sub.holder_round(),
                        },
                    );
                    continue;
                }
                let tree = match &variant {
                    Some((victim, v)) if *victim == h => v,
                    _ => self.nodes[i].machine.last().expect("sealed this round"),
                };
                match issue_receipt(tree, &sub, &self.keys, max_lag) {
                    Ok(receipt) => {
                        let continuity = (tree.round() > 0).then(|| tree.continuity_proof());
                        self.send(i, h, Message::Receipt(ReceiptMessage { receipt, continuity }));
                    }
                    Err(e) => {
                        let (issuer, holder) = (self.label(i), self.label(h));
                        self.emit(
                            t,
                            EventKind::SubmissionRejected {
                                issuer,
                                holder,
                                reason: entangle_error_reason(&e),
                            },
                        );
                    }
                }
            }
        }
    }

    fn send_submissions(&mut self) {
        for i in 0..self.nodes.len() {
            let sub = Submission::from_sealed(self.nodes[i].machine.last().expect("sealed this round"));
            for j in self.nodes[i].out.clone() {
                self.send(i, j, Message::Submit(sub.clone()));
            }
        }
    }

    fn gossip(&mut self) {
        for i in 0..self.nodes.len() {
            let mut outgoing: Vec<(Commitment, Option<usize>)> = self.nodes[i]
                .forward
                .drain(..)
                .map(|(c, src)| (c, Some(src)))
                .collect();
            if self.nodes[i].anchor {
                let c = self.nodes[i].machine.last().expect("sealed this round").commitment;
                self.nodes[i].view.entry(c.node_id).or_default().insert(c.round, c);
                outgoing.push((c, None));
            }
            for (c, src) in outgoing {
                for n in self.nodes[i].neighbors.clone() {
                    if Some(n) != src {
                        self.send(i, n, Message::Gossip(c));
                    }
                }
            }
        }
    }

    /// Every node with links checks, each round, the newest of its states
    /// that its gossip view can already anchor.
    fn verify_chains(&mut self, t: u64) {
        for i in 0..self.nodes.len() {
            if self.nodes[i].out.is_empty() {
                continue;
            }
            let trust = self.nodes[i].trust(&self.keys);
            for j in self.nodes[i].out.clone() {
                let Some(path) = self.topology.path_to_anchor_via(i, j) else {
                    continue;
                };
                let hops = path.len() as u64 - 1;
                let Some(r) = t.checked_sub(2 * hops) else {
                    continue;
                };
                let histories: Vec<&[SealedRound]> = path[..path.len() - 1].iter().map(|&n| self.history(n)).collect();
                let anchor = *path.last().expect("non-empty path");
                let outcome = match build_chain_proof(&histories, self.node_id(anchor), Window::single(r)) {
                    Ok(proof) => {
                        self.nodes[i].counters.proof_bytes_generated += proof.to_bytes().len() as u64;
                        verify_chain(&proof, &trust).map_err(|f| chain_fault_reason(&f))
                    }
                    Err(e) => Err(entangle_error_reason(&e)),
                };
                self.nodes[i].counters.verifications.record(outcome.clone());
                let kind = if hops == 1 { "link" } else { "chain" };
                let (node, target) = (self.label(i), self.label(anchor));
                self.emit(
                    t,
                    EventKind::Verification {
                        node,
                        kind: kind.into(),
                        target,
                        holder_round: r,
                        ok: outcome.is_ok(),
                        reason: outcome.err(),
                    },
                );
            }
        }
    }

    fn account_storage(&mut self) {
        for node in &mut self.nodes {
            let sealed = node.machine.last().expect("sealed this round");
            let mut bytes = DIGEST_BYTES + COMMITMENT_LEN as u64;
            if node.keeps_state() {
                bytes += sealed.state.to_bytes().len() as u64;
            } else {
                bytes += sealed.state.records.iter().map(|r| r.leaf().len() as u64).sum::<u64>();
            }
            bytes += node.learned * COMMITMENT_LEN as u64;
            let registry_bytes = node.registry.stored_bytes();
            bytes += registry_bytes.saturating_sub(node.registry_bytes);
            node.registry_bytes = registry_bytes;
            node.counters.bytes_stored += bytes;
        }
    }
}

fn validate_references(config: &ScenarioConfig, topology: &Topology) -> Result<(), ConfigError> {
    let node = |path: String, label: &str| {
        topology
            .index_of(label)
            .ok_or_else(|| ConfigError::at(path, format!("no node labelled `{label}`")))
    };
    for (i, fault) in config.faults.iter().enumerate() {
        let p = |field: &str| format!("faults[{i}].{field}");
        match fault {
            FaultConfig::Equivocate { node: n, victims, .. } => {
                let idx = node(p("node"), n)?;
                let holders = topology.in_links(idx);
                let chosen: Vec<usize> = if victims.is_empty() {
                    holders.iter().copied().take(2).collect()
                } else {
                    victims
                        .iter()
                        .enumerate()
                        .map(|(k, v)| node(format!("faults[{i}].victims[{k}]"), v))
                        .collect::<Result<_, _>>()?
                };
                if chosen.len() != 2 || chosen[0] == chosen[1] || !chosen.iter().all(|v| holders.contains(v)) {
                    return Err(ConfigError::at(
                        p("victims"),
                        "need two distinct nodes that link to the equivocating node",
                    ));
                }
            }
            FaultConfig::WithholdReceipt { issuer, holder, .. } => {
                let (a, b) = (node(p("issuer"), issuer)?, node(p("holder"), holder)?);
                if !topology.out_links(b).contains(&a) {
                    return Err(ConfigError::at(p("holder"), "holder does not link to issuer"));
                }
            }
            FaultConfig::ForkHistory { node: n, .. } => {
                node(p("node"), n)?;
            }
        }
    }
    let mut issued: BTreeMap<&str, u64> = BTreeMap::new();
    let mut rounds: Vec<&IdentityOp> = config.identity.iter().collect();
    rounds.sort_by_key(|op| op.round());
    for (i, op) in config.identity.iter().enumerate() {
        let p = |field: &str| format!("identity[{i}].{field}");
        match op {
            IdentityOp::Issue {
                label,
                issuer,
                subject,
                round,
                ..
            } => {
                node(p("issuer"), issuer)?;
                node(p("subject"), subject)?;
                if issued.insert(label, *round).is_some() {
                    return Err(ConfigError::at(p("label"), "duplicate credential label"));
                }
            }
            IdentityOp::Revoke { .. } | IdentityOp::Check { .. } => {}
            IdentityOp::Policy { holder, guardians, .. } => {
                let h = node(p("holder"), holder)?;
                for (k, g) in guardians.iter().enumerate() {
                    let gi = node(format!("identity[{i}].guardians[{k}]"), g)?;
                    if !topology.out_links(h).contains(&gi) {
                        return Err(ConfigError::at(
                            format!("identity[{i}].guardians[{k}]"),
                            "guardian must be one of the holder's links",
                        ));
                    }
                }
            }
            IdentityOp::Recover { holder, endorsers, .. } => {
                node(p("holder"), holder)?;
                for (k, e) in endorsers.iter().enumerate() {
                    node(format!("identity[{i}].endorsers[{k}]"), e)?;
                }
            }
        }
    }
    for (i, op) in config.identity.iter().enumerate() {
        let p = |field: &str| format!("identity[{i}].{field}");
        match op {
            IdentityOp::Revoke { credential, round } | IdentityOp::Check { credential, round, .. } => {
                match issued.get(credential.as_str()) {
                    Some(at) if at <= round => {}
                    _ => return Err(ConfigError::at(p("credential"), "not issued by this round")),
                }
                if let IdentityOp::Check { verifier, .. } = op {
                    node(p("verifier"), verifier)?;
                }
            }
            _ => {}
        }
    }
    let _ = Role::Holder;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(text: &str) -> Simulation {
        let config = ScenarioConfig::from_toml(text).unwrap();
        let mut sim = Simulation::new(config).unwrap();
        sim.run_to_end();
        sim
    }

    fn count(sim: &Simulation, name: &str) -> usize {
        sim.events().iter().filter(|e| e.kind.name() == name).count()
    }

    #[test]
    fn honest_centralized_run_verifies() {
        let s = sim("name = \"c\"\nrounds = 6\n[topology]\nkind = \"centralized\"\nholders = 3\n");
        let verifications: Vec<_> = s
            .events()
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Verification { ok, reason, .. } => Some((*ok, reason.clone())),
                _ => None,
            })
            .collect();
        assert_eq!(verifications.len(), 3 * 4);
        assert!(verifications.iter().all(|(ok, _)| *ok), "{verifications:?}");
        assert_eq!(count(&s, "receipt_missing"), 0);
        assert_eq!(count(&s, "equivocation_detected"), 0);
        assert_eq!(s.metrics().len(), 6 * 4);
    }

    #[test]
    fn federated_chains_verify() {
        let s = sim("name = \"f\"\nrounds = 12\n[topology]\nkind = \"federated\"\nlevels = 3\narity = 1\nholders = 1\n");
        let oks = s
            .events()
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Verification { ok: true, .. }))
            .count();
        let fails = s
            .events()
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Verification { ok: false, .. }))
            .count();
        assert!(oks > 0);
        assert_eq!(fails, 0);
    }

    #[test]
    fn equivocation_is_detected_by_second_victim() {
        let s = sim(
            "name = \"e\"\nrounds = 8\n[topology]\nkind = \"federated\"\nlevels = 2\narity = 3\nholders = 9\n\
             [[faults]]\nkind = \"equivocate\"\nnode = \"int-1-0\"\nround = 3\n",
        );
        let detected: Vec<_> = s
            .events()
            .iter()
            .filter(|e| matches!(e.kind, EventKind::EquivocationDetected { .. }))
            .collect();
        assert_eq!(detected.len(), 1, "{detected:?}");
        assert!(detected[0].round <= 3 + 2);
    }

    #[test]
    fn fork_and_withholding_are_reported() {
        let s = sim(
            "name = \"w\"\nrounds = 6\n[topology]\nkind = \"centralized\"\nholders = 2\n\
             [[faults]]\nkind = \"fork-history\"\nnode = \"holder-0\"\nround = 3\n\
             [[faults]]\nkind = \"withhold-receipt\"\nissuer = \"anchor\"\nholder = \"holder-1\"\nround = 2\n",
        );
        assert_eq!(count(&s, "fork_injected"), 1);
        assert_eq!(count(&s, "fork_detected"), 1);
        assert_eq!(count(&s, "receipt_withheld"), 1);
        // holder-1 round 2 is withheld; holder-0 loses the receipt for the
        // rewritten round 2 and the rejected round 3.
        assert_eq!(count(&s, "receipt_rejected"), 1);
        assert_eq!(count(&s, "receipt_missing"), 3);
    }

    #[test]
    fn runs_are_deterministic() {
        let text = "name = \"d\"\nrounds = 5\nseed = 9\n[topology]\nkind = \"decentralized\"\npeers = 5\nshape = \"random\"\nchords = 2\n";
        let (a, b) = (sim(text), sim(text));
        assert_eq!(a.events(), b.events());
        assert_eq!(a.metrics(), b.metrics());
    }
}
