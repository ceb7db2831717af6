use synweb::entangle::{build_hub_proof, verify_hub, HubFault, LinkFault};
use synweb::identity::{recover_key, RecoveryCertificate, RecoveryEvidence, RecoveryFault, RecoveryPolicy};
use synweb::node::SealedRound;
use synweb::{KeyPair, NodeId, ScenarioConfig, Simulation, Window};

fn hub_sim(rounds: u64, policy: bool) -> Simulation {
    let mut text = format!("name = \"hub\"\nrounds = {rounds}\n[topology]\nkind = \"interoperated\"\nanchors = 5\nholders = 1\n");
    if policy {
        text.push_str(
            "[[identity]]\nop = \"policy\"\nround = 1\nholder = \"holder-0\"\n\
             guardians = [\"anchor-0\", \"anchor-1\", \"anchor-2\", \"anchor-3\", \"anchor-4\"]\nthreshold = 3\n",
        );
    }
    let mut sim = Simulation::new(ScenarioConfig::from_toml(&text).unwrap()).unwrap();
    sim.run_to_end();
    sim
}

#[test]
fn hiding_an_issuer_from_the_manifest_breaks_every_link() {
    let sim = hub_sim(6, false);
    let holder = sim.index_of("holder-0").unwrap();
    let key = sim.machine(holder).key().clone();
    let hidden = sim.history(holder)[0].state.manifest[4];

    // Rebuild the holder's history as if the fifth issuer had never been linked.
    let mut forged: Vec<SealedRound> = Vec::new();
    for sealed in sim.history(holder) {
        let mut state = sealed.state.clone();
        state.manifest.retain(|id| *id != hidden);
        state.evidence.retain(|r| r.issuer_id != hidden);
        if let Some(prev) = forged.last() {
            state.prev_commitment_digest = prev.commitment.digest();
        }
        forged.push(SealedRound::from_state(state, &key).unwrap());
    }
    assert_ne!(forged[0].commitment.root, sim.history(holder)[0].commitment.root);

    let proof = build_hub_proof(&forged, Window::new(0, 3).unwrap()).unwrap();
    assert_eq!(proof.links.len(), 4);
    match verify_hub(&proof, &sim.trusted()) {
        Err(HubFault::LinkFailed { fault, .. }) => {
            assert!(matches!(fault, LinkFault::NotEntangled(_) | LinkFault::IssuerMismatch(_)), "{fault:?}")
        }
        other => panic!("forged hub accepted or misreported: {other:?}"),
    }
}

struct Recovery {
    sim: Simulation,
    policy: RecoveryPolicy,
    evidence: RecoveryEvidence,
    guardians: Vec<usize>,
    holder: NodeId,
}

fn recovery() -> Recovery {
    let sim = hub_sim(5, true);
    let h = sim.index_of("holder-0").unwrap();
    let guardians: Vec<usize> = (0..5).map(|g| sim.index_of(&format!("anchor-{g}")).unwrap()).collect();
    let policy =
        RecoveryPolicy::new(sim.node_id(h), guardians.iter().map(|&g| sim.node_id(g)).collect::<Vec<_>>(), 3, 1).unwrap();
    let hub = build_hub_proof(sim.history(h), Window::single(1)).unwrap();
    let evidence = RecoveryEvidence::build(&policy, &sim.history(h)[1], hub).unwrap();
    Recovery {
        holder: sim.node_id(h),
        sim,
        policy,
        evidence,
        guardians,
    }
}

impl Recovery {
    fn cert(&self, endorsers: &[usize]) -> RecoveryCertificate {
        let mut cert = RecoveryCertificate::new(self.holder, KeyPair::from_seed([9; 32]).public(), 5, &self.policy);
        for &g in endorsers {
            let i = self.guardians[g];
            cert.endorse(self.sim.node_id(i), self.sim.machine(i).key());
        }
        cert
    }

    fn check(&self, cert: &RecoveryCertificate, evidence: &RecoveryEvidence) -> Result<(), RecoveryFault> {
        recover_key(cert, &self.policy, evidence, &self.sim.trusted(), &mut self.sim.keys().clone())
    }
}

#[test]
fn three_of_five_recover_and_two_do_not() {
    let r = recovery();
    assert_eq!(r.check(&r.cert(&[0, 2, 4]), &r.evidence), Ok(()));
    assert_eq!(
        r.check(&r.cert(&[1, 3]), &r.evidence),
        Err(RecoveryFault::InsufficientEndorsements { valid: 2, threshold: 3 })
    );
}

#[test]
fn endorsement_with_the_wrong_key_is_rejected() {
    let r = recovery();
    let mut cert = r.cert(&[0, 1]);
    let impostor = KeyPair::from_seed([77; 32]);
    cert.endorse(r.sim.node_id(r.guardians[2]), &impostor);
    assert_eq!(
        r.check(&cert, &r.evidence),
        Err(RecoveryFault::BadEndorsement {
            guardian: r.sim.node_id(r.guardians[2])
        })
    );
}

#[test]
fn outsiders_cannot_endorse() {
    let r = recovery();
    let mut cert = r.cert(&[0, 1]);
    let outsider = KeyPair::from_seed([5; 32]);
    cert.endorse(outsider.node_id(), &outsider);
    assert!(matches!(
        r.check(&cert, &r.evidence),
        Err(RecoveryFault::GuardianNotInHub { .. })
    ));
}

#[test]
fn evidence_for_another_policy_is_rejected() {
    let r = recovery();
    let cert = r.cert(&[0, 1, 2]);
    let mut evidence = r.evidence.clone();
    evidence.policy_proof = r.sim.history(r.sim.index_of("holder-0").unwrap())[1].prove(0);
    assert_eq!(r.check(&cert, &evidence), Err(RecoveryFault::PolicyNotCommitted));
}

#[test]
fn hub_that_drops_a_guardian_is_rejected() {
    let r = recovery();
    let cert = r.cert(&[0, 1, 2]);
    let mut evidence = r.evidence.clone();
    evidence.hub.links.pop();
    evidence.hub.manifest.pop();
    assert_eq!(
        r.check(&cert, &evidence),
        Err(RecoveryFault::HubInvalid(HubFault::ManifestMismatch))
    );
}
