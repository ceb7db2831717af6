use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use synweb::entangle::{
    build_chain_proof, build_hub_proof, build_link_proof, find_digest_path, verify_chain, verify_digest_path,
    verify_hub, verify_link,
};
use synweb::simnet::{write_outputs, EventKind, NodeInfo, ScenarioConfig, Simulation, NODES_FILE, TRUSTED_FILE};
use synweb::store::{Ledger, ProofFile, LEDGER_MAGIC, PROOF_MAGIC};
use synweb::{Digest, NodeId, SealedRound, TrustStore, Window};

use crate::error::CliError;
use crate::{Format, ProofKind};

fn emit<T: Serialize>(format: Format, value: &T, text: impl FnOnce() -> String) {
    match format {
        Format::Json => println!("{}", serde_json::to_string(value).expect("plain data serializes")),
        Format::Text => println!("{}", text()),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(CliError::io(path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_slice(&read(path)?).map_err(|e| CliError::Unreadable {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn simulate(config: &Path, out: &Path, seed: Option<u64>, format: Format) -> Result<(), CliError> {
    let text = fs::read_to_string(config).map_err(CliError::io(config))?;
    let mut scenario = ScenarioConfig::from_toml(&text)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let mut sim = Simulation::new(scenario)?;
    sim.run_to_end();
    write_outputs(&sim, out)?;
    let (mut ok, mut failed) = (0u64, 0u64);
    for e in sim.events() {
        if let EventKind::Verification { ok: passed, .. } = e.kind {
            if passed {
                ok += 1;
            } else {
                failed += 1;
            }
        }
    }
    let summary = json!({
        "scenario": sim.config().name,
        "rounds": sim.rounds_run(),
        "nodes": sim.topology().len(),
        "events": sim.events().len(),
        "verifications_ok": ok,
        "verifications_failed": failed,
        "out": out,
    });
    emit(format, &summary, || {
        format!(
            "{}: {} rounds, {} nodes, {} events, verifications {} ok / {} failed, written to {}",
            sim.config().name,
            sim.rounds_run(),
            sim.topology().len(),
            sim.events().len(),
            ok,
            failed,
            out.display()
        )
    });
    Ok(())
}

pub struct ProveArgs {
    pub run: PathBuf,
    pub kind: ProofKind,
    pub holder: String,
    pub issuer: Option<String>,
    pub anchor: Option<String>,
    pub window: String,
    pub out: PathBuf,
}

fn parse_window(text: &str) -> Result<Window, CliError> {
    let bad = || CliError::Usage(format!("window `{text}` is not `start:end` or a round"));
    let (a, b) = text.split_once(':').unwrap_or((text, text));
    let (a, b) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    Window::new(a, b).map_err(|_| bad())
}

/// The node table and ledgers of a finished run.
struct Run {
    dir: PathBuf,
    nodes: Vec<NodeInfo>,
}

impl Run {
    fn open(dir: &Path) -> Result<Self, CliError> {
        Ok(Run {
            dir: dir.to_path_buf(),
            nodes: read_json(&dir.join(NODES_FILE))?,
        })
    }

    fn index(&self, label: &str) -> Result<usize, CliError> {
        self.nodes
            .iter()
            .position(|n| n.label == label)
            .ok_or_else(|| CliError::Usage(format!("no node labelled `{label}`")))
    }

    fn id(&self, label: &str) -> Result<NodeId, CliError> {
        Ok(self.nodes[self.index(label)?].id)
    }

    fn history(&self, i: usize) -> Result<Vec<SealedRound>, CliError> {
        let node = &self.nodes[i];
        let ledger = Ledger::read(&self.dir.join(&node.ledger))?;
        ledger.history().ok_or_else(|| {
            CliError::Usage(format!("`{}` keeps commitments only; its trees are not available", node.label))
        })
    }

    /// Shortest route along links from `from` to `to`.
    fn route(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        let mut parent: Vec<Option<usize>> = vec![None; self.nodes.len()];
        let mut queue = VecDeque::from([from]);
        let mut seen = vec![false; self.nodes.len()];
        seen[from] = true;
        while let Some(at) = queue.pop_front() {
            if at == to {
                let mut path = vec![to];
                while let Some(p) = parent[*path.last().expect("non-empty")] {
                    path.push(p);
                }
                path.reverse();
                return Some(path);
            }
            for link in &self.nodes[at].links {
                let next = self.nodes.iter().position(|n| &n.label == link)?;
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some(at);
                    queue.push_back(next);
                }
            }
        }
        None
    }
}

fn required<'a>(value: &'a Option<String>, flag: &str) -> Result<&'a str, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("--{flag} is required for this proof kind")))
}

fn build_failed(err: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("cannot build proof: {err}"))
}

pub fn prove(args: &ProveArgs, format: Format) -> Result<(), CliError> {
    let run = Run::open(&args.run)?;
    let window = parse_window(&args.window)?;
    let holder = run.index(&args.holder)?;
    let proof = match args.kind {
        ProofKind::Link => {
            let issuer = run.id(required(&args.issuer, "issuer")?)?;
            ProofFile::Link(build_link_proof(&run.history(holder)?, issuer, window).map_err(build_failed)?)
        }
        ProofKind::Hub => ProofFile::Hub(build_hub_proof(&run.history(holder)?, window).map_err(build_failed)?),
        ProofKind::Chain => {
            let anchor = run.index(required(&args.anchor, "anchor")?)?;
            let route = run
                .route(holder, anchor)
                .ok_or_else(|| CliError::Usage("no route of links to that anchor".into()))?;
            let histories = route[..route.len() - 1]
                .iter()
                .map(|&i| run.history(i))
                .collect::<Result<Vec<_>, _>>()?;
            let slices: Vec<&[SealedRound]> = histories.iter().map(Vec::as_slice).collect();
            ProofFile::Chain(build_chain_proof(&slices, run.nodes[anchor].id, window).map_err(build_failed)?)
        }
        ProofKind::Path => {
            let target = run.index(required(&args.anchor, "anchor")?)?;
            let mut owned = BTreeMap::new();
            for (i, node) in run.nodes.iter().enumerate() {
                if node.full_ledger {
                    owned.insert(node.id, run.history(i)?);
                }
            }
            let histories: BTreeMap<NodeId, &[SealedRound]> =
                owned.iter().map(|(id, h)| (*id, h.as_slice())).collect();
            let (from, to) = (run.nodes[holder].id, run.nodes[target].id);
            let last = histories
                .get(&to)
                .ok_or_else(|| CliError::Usage(format!("`{}` keeps commitments only", run.nodes[target].label)))?
                .len() as u64;
            let path = (window.start..last)
                .find_map(|round| find_digest_path(&histories, (from, window.start), (to, round)))
                .ok_or_else(|| CliError::Usage("no digest path to that node".into()))?;
            ProofFile::Path(path)
        }
    };
    let bytes = proof.to_bytes();
    fs::write(&args.out, &bytes).map_err(CliError::io(&args.out))?;
    let sha256 = Digest::sha256(&bytes).to_hex();
    let summary = json!({ "kind": proof.kind(), "bytes": bytes.len(), "sha256": sha256, "out": args.out });
    emit(format, &summary, || format!("{} proof, {} bytes, sha256 {}", proof.kind(), bytes.len(), sha256));
    Ok(())
}

fn check(proof: &ProofFile, trust: &TrustStore) -> Result<(), String> {
    match proof {
        ProofFile::Link(p) => verify_link(p, trust).map_err(|f| f.to_string()),
        ProofFile::Hub(p) => verify_hub(p, trust).map_err(|f| f.to_string()),
        ProofFile::Chain(p) => verify_chain(p, trust).map_err(|f| f.to_string()),
        ProofFile::Path(p) => {
            let end = verify_digest_path(p, &trust.keys).map_err(|f| f.to_string())?;
            match trust.root(&end.node_id, end.round) {
                Some(root) if root == end.root => Ok(()),
                _ => Err("path ends at an untrusted commitment".into()),
            }
        }
    }
}

pub fn verify(proof_path: &Path, trusted: &Path, format: Format) -> Result<(), CliError> {
    let trust: TrustStore = read_json(trusted)?;
    let bytes = read(proof_path)?;
    let outcome = ProofFile::from_bytes(&bytes)
        .map_err(|e| format!("malformed proof: {e}"))
        .and_then(|proof| check(&proof, &trust).map(|()| proof.kind()));
    let summary = json!({
        "ok": outcome.is_ok(),
        "kind": outcome.as_ref().ok(),
        "reason": outcome.as_ref().err(),
    });
    match outcome {
        Ok(kind) => {
            emit(format, &summary, || format!("OK {kind} proof verified"));
            Ok(())
        }
        Err(reason) => {
            emit(format, &summary, || format!("FAIL {reason}"));
            Err(CliError::Verify(reason))
        }
    }
}

pub fn inspect(file: &Path, trusted: Option<&Path>, format: Format) -> Result<(), CliError> {
    let bytes = read(file)?;
    if bytes.starts_with(LEDGER_MAGIC) {
        let ledger = Ledger::read(file)?;
        let checked = match trusted {
            Some(t) => {
                let trust: TrustStore = read_json(t)?;
                Some(ledger.verify(&trust.keys).map_err(|f| f.to_string()))
            }
            None => None,
        };
        let last = ledger.entries.last().map(|e| *e.commitment());
        let summary = json!({
            "type": "ledger",
            "node": ledger.node_id,
            "rounds": ledger.entries.len(),
            "full": ledger.is_full(),
            "last_root": last.map(|c| c.root),
            "chain_ok": checked.as_ref().map(Result::is_ok),
            "reason": checked.as_ref().and_then(|c| c.as_ref().err()),
        });
        emit(format, &summary, || {
            let mut line = format!(
                "ledger of {}: {} rounds ({}), last root {}",
                ledger.node_id,
                ledger.entries.len(),
                if ledger.is_full() { "full" } else { "commitments only" },
                last.map(|c| c.root.to_hex()).unwrap_or_else(|| "-".into()),
            );
            match &checked {
                Some(Ok(())) => line.push_str(", chain verified"),
                Some(Err(reason)) => line.push_str(&format!(", chain broken: {reason}")),
                None => {}
            }
            line
        });
        return match checked {
            Some(Err(reason)) => Err(CliError::Verify(reason)),
            _ => Ok(()),
        };
    }
    if bytes.starts_with(PROOF_MAGIC) {
        let proof = ProofFile::from_bytes(&bytes).map_err(|e| CliError::Verify(format!("malformed proof: {e}")))?;
        let (holder, rounds) = match &proof {
            ProofFile::Link(p) => (p.holder, p.window.len()),
            ProofFile::Hub(p) => (p.holder, p.window.len()),
            ProofFile::Chain(p) => (
                p.holder().unwrap_or_default(),
                p.window().map(|w| w.len()).unwrap_or(0),
            ),
            ProofFile::Path(p) => (p.origin.node_id, p.steps.len() as u64),
        };
        let summary = json!({
            "type": "proof",
            "kind": proof.kind(),
            "holder": holder,
            "rounds": rounds,
            "bytes": bytes.len(),
            "sha256": Digest::sha256(&bytes),
        });
        emit(format, &summary, || {
            format!("{} proof for {}, {} rounds, {} bytes", proof.kind(), holder, rounds, bytes.len())
        });
        return Ok(());
    }
    if file.file_name().is_some_and(|n| n == TRUSTED_FILE) {
        let trust: TrustStore = read_json(file)?;
        let summary = json!({ "type": "trusted", "anchors": trust.nodes().count() });
        emit(format, &summary, || format!("trusted roots for {} anchors", trust.nodes().count()));
        return Ok(());
    }
    Err(CliError::Unreadable {
        path: file.to_path_buf(),
        message: "not a ledger, proof or trust file".into(),
    })
}
