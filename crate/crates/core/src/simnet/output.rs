use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::engine::Simulation;
use super::metrics::to_jsonl;
use super::topology::Role;
use crate::crypto::NodeId;
use crate::store::{Ledger, StoreError};

pub const NODES_FILE: &str = "nodes.json";
pub const TRUSTED_FILE: &str = "trusted.json";

/// One row of `nodes.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub label: String,
    pub id: NodeId,
    pub role: Role,
    pub links: Vec<String>,
    pub full_ledger: bool,
    /// Ledger file, relative to the output directory.
    pub ledger: PathBuf,
}

pub fn node_table(sim: &Simulation) -> Vec<NodeInfo> {
    let topo = sim.topology();
    (0..topo.len())
        .map(|i| NodeInfo {
            label: topo.label(i).to_string(),
            id: sim.node_id(i),
            role: topo.nodes[i].role,
            links: topo.out_links(i).into_iter().map(|j| topo.label(j).to_string()).collect(),
            full_ledger: sim.keeps_state(i),
            ledger: ledger_path(Path::new(&sim.config().output.ledgers), topo.label(i)),
        })
        .collect()
}

pub fn ledger_path(dir: &Path, label: &str) -> PathBuf {
    dir.join(format!("{label}.ledger"))
}

/// Writes metrics, events, per-node ledgers, the node table and the
/// anchors' published commitments under `out`.
pub fn write_outputs(sim: &Simulation, out: &Path) -> Result<(), StoreError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| StoreError::Io { path, source }
    };
    let paths = &sim.config().output;
    let ledgers = out.join(&paths.ledgers);
    fs::create_dir_all(&ledgers).map_err(io(&ledgers))?;
    let write = |name: &str, text: String| {
        let path = out.join(name);
        fs::write(&path, text).map_err(io(&path))
    };
    write(&paths.metrics, to_jsonl(sim.metrics()))?;
    write(&paths.events, to_jsonl(sim.events()))?;
    write(NODES_FILE, pretty(&node_table(sim)))?;
    write(TRUSTED_FILE, pretty(&sim.trusted()))?;
    for i in 0..sim.topology().len() {
        let ledger = Ledger::from_history(sim.node_id(i), sim.history(i), sim.keeps_state(i));
        ledger.write(&ledger_path(&ledgers, sim.topology().label(i)))?;
    }
    Ok(())
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}
