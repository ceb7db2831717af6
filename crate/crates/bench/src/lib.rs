//! Fixtures shared by the benchmarks in `benches/`.

use synweb::entangle::{build_chain_proof, build_hub_proof, build_link_proof};
use synweb::{ChainProof, HubProof, LinkProof, ScenarioConfig, SealedRound, Simulation, TrustStore, Window};

pub fn simulate(text: &str) -> Simulation {
    let mut sim = Simulation::new(ScenarioConfig::from_toml(text).expect("valid scenario")).expect("valid topology");
    sim.run_to_end();
    sim
}

pub fn centralized(holders: usize, rounds: u64) -> String {
    format!("name = \"bench\"\nrounds = {rounds}\n[topology]\nkind = \"centralized\"\nholders = {holders}\n")
}

/// A four-round link proof from a single holder and issuer.
pub fn link_fixture() -> (LinkProof, TrustStore) {
    let sim = simulate(&centralized(1, 6));
    let holder = sim.index_of("holder-0").expect("holder");
    let issuer = sim.node_id(sim.index_of("anchor").expect("anchor"));
    let proof = build_link_proof(sim.history(holder), issuer, Window::new(0, 3).expect("window")).expect("link");
    (proof, sim.trusted())
}

/// A four-round hub over five issuers.
pub fn hub_fixture() -> (HubProof, TrustStore) {
    let sim = simulate("name = \"bench\"\nrounds = 6\n[topology]\nkind = \"interoperated\"\nanchors = 5\nholders = 1\n");
    let holder = sim.index_of("holder-0").expect("holder");
    let proof = build_hub_proof(sim.history(holder), Window::new(0, 3).expect("window")).expect("hub");
    (proof, sim.trusted())
}

/// A chain of `hops` links over a two-round window.
pub fn chain_fixture(hops: u32) -> (ChainProof, TrustStore) {
    let sim = simulate(&format!(
        "name = \"bench\"\nrounds = {}\n[topology]\nkind = \"federated\"\nlevels = {hops}\narity = 1\nholders = 1\n",
        hops + 4
    ));
    let mut route = vec![sim.index_of("holder-0").expect("holder")];
    route.extend((1..hops).rev().map(|l| sim.index_of(&format!("int-{l}-0")).expect("intermediary")));
    let owned: Vec<Vec<SealedRound>> = route.iter().map(|&i| sim.history(i).to_vec()).collect();
    let slices: Vec<&[SealedRound]> = owned.iter().map(Vec::as_slice).collect();
    let anchor = sim.node_id(sim.index_of("authority").expect("authority"));
    let proof = build_chain_proof(&slices, anchor, Window::new(0, 1).expect("window")).expect("chain");
    (proof, sim.trusted())
}
