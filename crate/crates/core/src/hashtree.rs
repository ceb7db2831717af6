//! Canonical binary Merkle trees over byte-string leaves.
//!
//! Hash inputs are domain separated:
//!
//! ```text
//! leaf:     H(0x00 || leaf)
//! interior: H(0x01 || left || right)
//! ```
//!
//! A list of `n > 1` leaves is split at the largest power of two strictly
//! less than `n`. Unpaired subtrees are promoted, never duplicated, so two
//! distinct leaf lists cannot share a root through padding.

use std::collections::HashMap;
use std::fmt;
use std::marker::PhantomData;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::Digest as _;
use thiserror::Error;

/// Size of every digest in bytes.
pub const DIGEST_LEN: usize = 32;

/// Prefix byte for leaf hashes.
pub const LEAF_PREFIX: u8 = 0x00;

/// Prefix byte for interior node hashes.
pub const NODE_PREFIX: u8 = 0x01;

/// A 32-byte hash value, ordered bytewise.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest([u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub const fn from_bytes(bytes: [u8; DIGEST_LEN]) -> Self {
        Digest(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, DigestParseError> {
        let mut out = [0u8; DIGEST_LEN];
        hex::decode_to_slice(s, &mut out).map_err(|_| DigestParseError(s.to_string()))?;
        Ok(Digest(out))
    }

    /// Plain SHA-256 of `data`, without any tree prefix.
    pub fn sha256(data: &[u8]) -> Self {
        Digest(sha2::Sha256::digest(data).into())
    }
}

impl From<[u8; DIGEST_LEN]> for Digest {
    fn from(bytes: [u8; DIGEST_LEN]) -> Self {
        Digest(bytes)
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}..)", &self.to_hex()[..12])
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid digest hex: {0:?}")]
pub struct DigestParseError(pub String);

impl FromStr for Digest {
    type Err = DigestParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Digest::from_hex(s)
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// A collision-resistant hash used to build trees.
pub trait HashFunction {
    fn hash(parts: &[&[u8]]) -> Digest;
}

/// SHA-256, the default tree hash.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sha256;

impl HashFunction for Sha256 {
    fn hash(parts: &[&[u8]]) -> Digest {
        let mut hasher = sha2::Sha256::new();
        for part in parts {
            hasher.update(part);
        }
        Digest(hasher.finalize().into())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("a tree needs at least one leaf")]
    EmptyTree,
    #[error("leaf index {index} out of range for tree of {size} leaves")]
    IndexOutOfRange { index: usize, size: usize },
}

pub fn leaf_hash(leaf: &[u8]) -> Digest {
    leaf_hash_with::<Sha256>(leaf)
}

pub fn leaf_hash_with<H: HashFunction>(leaf: &[u8]) -> Digest {
    H::hash(&[&[LEAF_PREFIX], leaf])
}

pub fn node_hash(left: &Digest, right: &Digest) -> Digest {
    node_hash_with::<Sha256>(left, right)
}

pub fn node_hash_with<H: HashFunction>(left: &Digest, right: &Digest) -> Digest {
    H::hash(&[&[NODE_PREFIX], left.as_bytes(), right.as_bytes()])
}

/// Largest power of two strictly less than `n` (`n >= 2`).
fn split_point(n: usize) -> usize {
    debug_assert!(n >= 2);
    let mut k = 1;
    while k * 2 < n {
        k *= 2;
    }
    k
}

/// Root of the tree over `leaves` under SHA-256.
pub fn root<L: AsRef<[u8]>>(leaves: &[L]) -> Result<Digest, TreeError> {
    root_with::<Sha256, L>(leaves)
}

pub fn root_with<H: HashFunction, L: AsRef<[u8]>>(leaves: &[L]) -> Result<Digest, TreeError> {
    if leaves.is_empty() {
        return Err(TreeError::EmptyTree);
    }
    let hashes: Vec<Digest> = leaves
        .iter()
        .map(|l| leaf_hash_with::<H>(l.as_ref()))
        .collect();
    Ok(subtree_root::<H>(&hashes, 0, &mut None))
}

type NodeCache = Option<HashMap<(usize, usize), Digest>>;

fn subtree_root<H: HashFunction>(hashes: &[Digest], offset: usize, cache: &mut NodeCache) -> Digest {
    if hashes.len() == 1 {
        return hashes[0];
    }
    let k = split_point(hashes.len());
    let left = subtree_root::<H>(&hashes[..k], offset, cache);
    let right = subtree_root::<H>(&hashes[k..], offset + k, cache);
    let node = node_hash_with::<H>(&left, &right);
    if let Some(map) = cache {
        map.insert((offset, hashes.len()), node);
    }
    node
}

/// Which side of the running hash a sibling digest sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Audit path from one leaf up to the root, ordered leaf-first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionProof {
    pub leaf_index: u64,
    pub tree_size: u64,
    pub audit_path: Vec<(Side, Digest)>,
}

/// Sibling sides the audit path for `index` in a tree of `size` leaves must have.
fn path_shape(index: u64, size: u64) -> Vec<Side> {
    let mut sides = Vec::new();
    let (mut index, mut size) = (index, size);
    // Walk root to leaf, then reverse into leaf-first order.
    while size > 1 {
        let k = split_point(size as usize) as u64;
        if index < k {
            sides.push(Side::Right);
            size = k;
        } else {
            sides.push(Side::Left);
            index -= k;
            size -= k;
        }
    }
    sides.reverse();
    sides
}

/// A Merkle tree with its leaves and every interior node cached.
#[derive(Clone)]
pub struct MerkleTree<H = Sha256> {
    leaves: Vec<Vec<u8>>,
    leaf_hashes: Vec<Digest>,
    nodes: HashMap<(usize, usize), Digest>,
    root: Digest,
    _hash: PhantomData<fn() -> H>,
}

impl MerkleTree<Sha256> {
    pub fn new(leaves: Vec<Vec<u8>>) -> Result<Self, TreeError> {
        Self::with_hash(leaves)
    }
}

impl<H: HashFunction> MerkleTree<H> {
    pub fn with_hash(leaves: Vec<Vec<u8>>) -> Result<Self, TreeError> {
        if leaves.is_empty() {
            return Err(TreeError::EmptyTree);
        }
        let leaf_hashes: Vec<Digest> = leaves.iter().map(|l| leaf_hash_with::<H>(l)).collect();
        let mut cache = Some(HashMap::with_capacity(leaves.len()));
        let root = subtree_root::<H>(&leaf_hashes, 0, &mut cache);
        Ok(MerkleTree {
            leaves,
            leaf_hashes,
            nodes: cache.unwrap_or_default(),
            root,
            _hash: PhantomData,
        })
    }

    pub fn root(&self) -> Digest {
        self.root
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn leaves(&self) -> &[Vec<u8>] {
        &self.leaves
    }

    pub fn leaf(&self, index: usize) -> Option<&[u8]> {
        self.leaves.get(index).map(Vec::as_slice)
    }

    /// Index of the first leaf equal to `bytes`.
    pub fn position(&self, bytes: &[u8]) -> Option<usize> {
        self.leaves.iter().position(|l| l == bytes)
    }

    fn node(&self, offset: usize, len: usize) -> Digest {
        if len == 1 {
            self.leaf_hashes[offset]
        } else {
            self.nodes[&(offset, len)]
        }
    }

    pub fn prove(&self, index: usize) -> Result<InclusionProof, TreeError> {
        let size = self.leaves.len();
        if index >= size {
            return Err(TreeError::IndexOutOfRange { index, size });
        }
        let mut path = Vec::new();
        let (mut offset, mut len, mut idx) = (0usize, size, index);
        while len > 1 {
            let k = split_point(len);
            if idx < k {
                path.push((Side::Right, self.node(offset + k, len - k)));
                len = k;
            } else {
                path.push((Side::Left, self.node(offset, k)));
                offset += k;
                idx -= k;
                len -= k;
            }
        }
        path.reverse();
        Ok(InclusionProof {
            leaf_index: index as u64,
            tree_size: size as u64,
            audit_path: path,
        })
    }
}

impl<H> fmt::Debug for MerkleTree<H> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MerkleTree")
            .field("leaves", &self.leaves.len())
            .field("root", &self.root)
            .finish()
    }
}

pub fn prove_inclusion<H: HashFunction>(
    tree: &MerkleTree<H>,
    index: usize,
) -> Result<InclusionProof, TreeError> {
    tree.prove(index)
}

/// Checks `leaf` against `expected_root` under SHA-256. Malformed proofs
/// (index past the end, path whose shape disagrees with the index) are
/// rejected rather than folded.
pub fn verify_inclusion(leaf: &[u8], proof: &InclusionProof, expected_root: &Digest) -> bool {
    verify_inclusion_with::<Sha256>(leaf, proof, expected_root)
}

pub fn verify_inclusion_with<H: HashFunction>(
    leaf: &[u8],
    proof: &InclusionProof,
    expected_root: &Digest,
) -> bool {
    if proof.tree_size == 0 || proof.leaf_index >= proof.tree_size {
        return false;
    }
    let shape = path_shape(proof.leaf_index, proof.tree_size);
    if shape.len() != proof.audit_path.len() {
        return false;
    }
    let mut acc = leaf_hash_with::<H>(leaf);
    for (expected_side, (side, sibling)) in shape.iter().zip(&proof.audit_path) {
        if side != expected_side {
            return false;
        }
        acc = match side {
            Side::Left => node_hash_with::<H>(sibling, &acc),
            Side::Right => node_hash_with::<H>(&acc, sibling),
        };
    }
    &acc == expected_root
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaves(xs: &[&str]) -> Vec<Vec<u8>> {
        xs.iter().map(|s| s.as_bytes().to_vec()).collect()
    }

    // Golden values computed once with Python's hashlib.
    const LEAF_EMPTY: &str = "6e340b9cffb37a989ca544e6bb780a2c78901d3fb33738768511a30617afa01d";
    const ROOT_ABC: &str = "36642e73c2540ab121e3a6bf9545b0a24982cd830eb13d3cd19de3ce6c021ec1";
    const ROOT_ABCDE: &str = "fe14a5426fbd70c0fa73f52342afed0da0bd23c4838662ccf6b88a3070ead97b";

    #[test]
    fn leaf_hash_golden() {
        assert_eq!(leaf_hash(b"").to_hex(), LEAF_EMPTY);
        assert_ne!(leaf_hash(b"a"), leaf_hash(b"b"));
        assert_eq!(leaf_hash(b"x").as_bytes().len(), 32);
    }

    #[test]
    fn small_roots() {
        assert_eq!(root(&leaves(&["x"])).unwrap(), leaf_hash(b"x"));
        assert_eq!(
            root(&leaves(&["a", "b"])).unwrap(),
            node_hash(&leaf_hash(b"a"), &leaf_hash(b"b"))
        );
        let abc = root(&leaves(&["a", "b", "c"])).unwrap();
        assert_eq!(abc, node_hash(&root(&leaves(&["a", "b"])).unwrap(), &leaf_hash(b"c")));
        assert_eq!(abc.to_hex(), ROOT_ABC);
        assert_eq!(root(&leaves(&["a", "b", "c", "d", "e"])).unwrap().to_hex(), ROOT_ABCDE);
    }

    #[test]
    fn empty_tree_rejected() {
        assert_eq!(root::<Vec<u8>>(&[]), Err(TreeError::EmptyTree));
        assert_eq!(MerkleTree::new(vec![]).unwrap_err(), TreeError::EmptyTree);
    }

    #[test]
    fn proof_shapes() {
        let single = MerkleTree::new(leaves(&["a"])).unwrap();
        assert!(single.prove(0).unwrap().audit_path.is_empty());

        let two = MerkleTree::new(leaves(&["a", "b"])).unwrap();
        assert_eq!(two.prove(0).unwrap().audit_path, vec![(Side::Right, leaf_hash(b"b"))]);

        assert_eq!(
            two.prove(2).unwrap_err(),
            TreeError::IndexOutOfRange { index: 2, size: 2 }
        );
    }

    #[test]
    fn eleven_leaf_round_trip() {
        let ls: Vec<Vec<u8>> = (0..11).map(|i| format!("leaf-{i}").into_bytes()).collect();
        let tree = MerkleTree::new(ls.clone()).unwrap();
        for (i, leaf) in ls.iter().enumerate() {
            let proof = tree.prove(i).unwrap();
            assert!(verify_inclusion(leaf, &proof, &tree.root()), "index {i}");
            assert!(!verify_inclusion(b"other", &proof, &tree.root()));
        }
    }

    #[test]
    fn bit_flips_in_path_rejected() {
        let ls = leaves(&["a", "b", "c", "d", "e", "f"]);
        let tree = MerkleTree::new(ls.clone()).unwrap();
        for i in 0..ls.len() {
            let proof = tree.prove(i).unwrap();
            for step in 0..proof.audit_path.len() {
                for bit in 0..256 {
                    let mut bad = proof.clone();
                    let mut bytes = *bad.audit_path[step].1.as_bytes();
                    bytes[bit / 8] ^= 1 << (bit % 8);
                    bad.audit_path[step].1 = Digest::from(bytes);
                    assert!(!verify_inclusion(&ls[i], &bad, &tree.root()));
                }
            }
        }
    }

    #[test]
    fn malformed_proofs_return_false() {
        let ls = leaves(&["a", "b", "c"]);
        let tree = MerkleTree::new(ls.clone()).unwrap();
        let good = tree.prove(1).unwrap();

        let mut wrong_side = good.clone();
        wrong_side.audit_path[0].0 = Side::Right;
        assert!(!verify_inclusion(b"b", &wrong_side, &tree.root()));

        let mut past_end = good.clone();
        past_end.leaf_index = 3;
        assert!(!verify_inclusion(b"b", &past_end, &tree.root()));

        let mut zero = good.clone();
        zero.tree_size = 0;
        assert!(!verify_inclusion(b"b", &zero, &tree.root()));

        let mut short = good.clone();
        short.audit_path.pop();
        assert!(!verify_inclusion(b"b", &short, &tree.root()));

        assert!(!verify_inclusion(b"b", &good, &Digest::ZERO));
    }

    #[test]
    fn injected_hash_changes_roots() {
        struct Sha512Trunc;
        impl HashFunction for Sha512Trunc {
            fn hash(parts: &[&[u8]]) -> Digest {
                let mut h = sha2::Sha512_256::new();
                for p in parts {
                    h.update(p);
                }
                Digest::from(<[u8; 32]>::from(h.finalize()))
            }
        }
        let ls = leaves(&["a", "b", "c"]);
        let alt = MerkleTree::<Sha512Trunc>::with_hash(ls.clone()).unwrap();
        assert_ne!(alt.root(), root(&ls).unwrap());
        let proof = alt.prove(2).unwrap();
        assert!(verify_inclusion_with::<Sha512Trunc>(b"c", &proof, &alt.root()));
        assert!(!verify_inclusion(b"c", &proof, &alt.root()));
    }

    #[test]
    fn digest_hex_round_trip() {
        let d = leaf_hash(b"z");
        assert_eq!(d.to_string().parse::<Digest>().unwrap(), d);
        assert!("zz".parse::<Digest>().is_err());
        assert_eq!(serde_json::to_string(&d).unwrap(), format!("\"{d}\""));
    }
}
