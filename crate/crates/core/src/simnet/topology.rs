//! The four canonical network shapes.

use std::collections::{BTreeSet, VecDeque};

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use super::config::{ConfigError, Shape, TopologyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Anchor,
    Intermediary,
    Holder,
    Peer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Centralized,
    Federated,
    Interoperated,
    Decentralized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub label: String,
    pub role: Role,
}

/// Nodes plus directed links (holder to issuer).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub kind: TopologyKind,
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<(usize, usize)>,
}

impl Topology {
    pub fn build(config: &TopologyConfig, seed: u64) -> Result<Self, ConfigError> {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let mut add = |label: String, role| {
            nodes.push(NodeSpec { label, role });
            nodes.len() - 1
        };
        let kind = match config {
            TopologyConfig::Centralized { holders } => {
                let anchor = add("anchor".into(), Role::Anchor);
                for i in 0..*holders {
                    let h = add(format!("holder-{i}"), Role::Holder);
                    edges.push((h, anchor));
                }
                TopologyKind::Centralized
            }
            TopologyConfig::Federated { levels, arity, holders } => {
                let authority = add("authority".into(), Role::Anchor);
                let mut tier = vec![authority];
                for level in 1..*levels {
                    let width = arity
                        .checked_pow(level)
                        .filter(|w| *w <= 1 << 16)
                        .ok_or_else(|| ConfigError::at("topology.levels", "tree too large"))?;
                    let mut next = Vec::with_capacity(width);
                    for j in 0..width {
                        let n = add(format!("int-{level}-{j}"), Role::Intermediary);
                        edges.push((n, tier[j / arity]));
                        next.push(n);
                    }
                    tier = next;
                }
                for i in 0..*holders {
                    let h = add(format!("holder-{i}"), Role::Holder);
                    edges.push((h, tier[i % tier.len()]));
                }
                TopologyKind::Federated
            }
            TopologyConfig::Interoperated { anchors, holders } => {
                let a: Vec<usize> = (0..*anchors).map(|j| add(format!("anchor-{j}"), Role::Anchor)).collect();
                for i in 0..*holders {
                    let h = add(format!("holder-{i}"), Role::Holder);
                    edges.extend(a.iter().map(|&anchor| (h, anchor)));
                }
                TopologyKind::Interoperated
            }
            TopologyConfig::Decentralized { peers, shape, chords, edges: explicit } => {
                let n = *peers;
                for i in 0..n {
                    add(format!("peer-{i}"), Role::Peer);
                }
                let mut undirected = BTreeSet::new();
                fn join(set: &mut BTreeSet<(usize, usize)>, a: usize, b: usize) {
                    if a != b {
                        set.insert((a.min(b), a.max(b)));
                    }
                }
                match shape {
                    Shape::Ring => (0..n).for_each(|i| join(&mut undirected, i, (i + 1) % n)),
                    Shape::Mesh => (0..n).for_each(|i| (i + 1..n).for_each(|j| join(&mut undirected, i, j))),
                    Shape::Random => {
                        (0..n).for_each(|i| join(&mut undirected, i, (i + 1) % n));
                        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x746f_706f);
                        let possible = n * (n - 1) / 2;
                        let target = (n.min(possible) + chords).min(possible);
                        while undirected.len() < target {
                            let a = (rng.next_u64() % n as u64) as usize;
                            let b = (rng.next_u64() % n as u64) as usize;
                            join(&mut undirected, a, b);
                        }
                    }
                    Shape::Explicit => {
                        for (i, [a, b]) in explicit.iter().enumerate() {
                            if *a >= n || *b >= n || a == b {
                                return Err(ConfigError::at(
                                    format!("topology.edges[{i}]"),
                                    "endpoints must be distinct peers",
                                ));
                            }
                            join(&mut undirected, *a, *b);
                        }
                    }
                }
                for (a, b) in undirected {
                    edges.push((a, b));
                    edges.push((b, a));
                }
                TopologyKind::Decentralized
            }
        };
        let topology = Topology { kind, nodes, edges };
        if !topology.is_connected() {
            let path = match config {
                TopologyConfig::Decentralized { shape: Shape::Explicit, .. } => "topology.edges",
                _ => "topology",
            };
            return Err(ConfigError::at(path, "graph is not connected"));
        }
        Ok(topology)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.label == label)
    }

    pub fn label(&self, i: usize) -> &str {
        &self.nodes[i].label
    }

    pub fn is_anchor(&self, i: usize) -> bool {
        matches!(self.nodes[i].role, Role::Anchor | Role::Peer)
    }

    pub fn anchors(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_anchor(i)).collect()
    }

    pub fn out_links(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|(a, _)| *a == i).map(|(_, b)| *b).collect()
    }

    pub fn in_links(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|(_, b)| *b == i).map(|(a, _)| *a).collect()
    }

    /// Neighbours ignoring direction, ascending.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| match (a == i, b == i) {
                (true, false) => Some(b),
                (false, true) => Some(a),
                _ => None,
            })
            .collect();
        set.into_iter().collect()
    }

    /// Undirected hop distances from `from`.
    pub fn distances(&self, from: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.len()];
        dist[from] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(at) = queue.pop_front() {
            let d = dist[at].expect("queued nodes have distances");
            for n in self.neighbors(at) {
                if dist[n].is_none() {
                    dist[n] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.is_empty() || self.distances(0).iter().all(Option::is_some)
    }

    pub fn diameter(&self) -> usize {
        (0..self.len())
            .filter_map(|i| self.distances(i).into_iter().flatten().max())
            .max()
            .unwrap_or(0)
    }

    /// Shortest path along directed links from `from` to `to`, both ends
    /// included. Ties resolve toward lower node indices.
    pub fn link_path(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        let mut parent = vec![None; self.len()];
        let mut seen = vec![false; self.len()];
        seen[from] = true;
        let mut queue = VecDeque::from([from]);
        while let Some(at) = queue.pop_front() {
            if at == to {
                let mut path = vec![to];
                let mut cur = to;
                while let Some(p) = parent[cur] {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            for n in self.out_links(at) {
                if !seen[n] {
                    seen[n] = true;
                    parent[n] = Some(at);
                    queue.push_back(n);
                }
            }
        }
        None
    }

    /// Path from `from` through `first` to the nearest anchor.
    pub fn path_to_anchor_via(&self, from: usize, first: usize) -> Option<Vec<usize>> {
        let tail = self
            .anchors()
            .into_iter()
            .filter_map(|a| self.link_path(first, a))
            .min_by_key(|p| p.len())?;
        let mut path = vec![from];
        path.extend(tail);
        Some(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decentralized(peers: usize, shape: Shape, edges: Vec<[usize; 2]>) -> TopologyConfig {
        TopologyConfig::Decentralized { peers, shape, chords: 3, edges }
    }

    #[test]
    fn centralized_star() {
        let t = Topology::build(&TopologyConfig::Centralized { holders: 10 }, 0).unwrap();
        assert_eq!(t.edges.len(), 10);
        assert!(t.edges.iter().all(|&(_, b)| b == 0));
        assert_eq!(t.anchors(), vec![0]);
    }

    #[test]
    fn federated_tree_counts() {
        let t = Topology::build(&TopologyConfig::Federated { levels: 2, arity: 3, holders: 9 }, 0).unwrap();
        let intermediaries = t.nodes.iter().filter(|n| n.role == Role::Intermediary).count();
        assert_eq!(intermediaries, 3);
        assert_eq!(t.len(), 13);
        // 3 intermediary uplinks plus 9 holder links.
        assert_eq!(t.edges.len(), 12);
        for j in 0..3 {
            let i = t.index_of(&format!("int-1-{j}")).unwrap();
            assert_eq!(t.in_links(i).len(), 3);
        }
    }

    #[test]
    fn federated_line_for_chains() {
        let t = Topology::build(&TopologyConfig::Federated { levels: 4, arity: 1, holders: 1 }, 0).unwrap();
        let h = t.index_of("holder-0").unwrap();
        let path = t.link_path(h, 0).unwrap();
        assert_eq!(path.len(), 5);
    }

    #[test]
    fn interoperated_out_degree() {
        let t = Topology::build(&TopologyConfig::Interoperated { anchors: 2, holders: 4 }, 0).unwrap();
        for i in 0..t.len() {
            if t.nodes[i].role == Role::Holder {
                assert!(t.out_links(i).len() >= 2);
            }
        }
    }

    #[test]
    fn ring_diameter_and_partition() {
        let t = Topology::build(&decentralized(6, Shape::Ring, vec![]), 0).unwrap();
        assert_eq!(t.diameter(), 3);
        assert_eq!(t.edges.len(), 12);
        let err = Topology::build(&decentralized(4, Shape::Explicit, vec![[0, 1], [2, 3]]), 0).unwrap_err();
        assert_eq!(err.path(), "topology.edges");
    }

    #[test]
    fn random_shape_is_seeded() {
        let a = Topology::build(&decentralized(8, Shape::Random, vec![]), 5).unwrap();
        let b = Topology::build(&decentralized(8, Shape::Random, vec![]), 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.edges.len(), 2 * (8 + 3));
    }
}
