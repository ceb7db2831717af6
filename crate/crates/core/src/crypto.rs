//! Node keys, identifiers, and the verifier's view of which key controls
//! which identifier.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use rand_core::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::hashtree::{Digest, DigestParseError};
use crate::wire::{Decode, Encode, Reader, WireError, Writer};

pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

/// Identifier of a node: the SHA-256 fingerprint of its original
/// verification key. It survives key recovery; the key behind it may change.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub Digest);

impl NodeId {
    pub fn fingerprint(key: &PublicKey) -> Self {
        NodeId(Digest::sha256(&key.0))
    }

    pub fn digest(&self) -> &Digest {
        &self.0
    }

    /// First eight hex characters, for logs.
    pub fn short(&self) -> String {
        self.0.to_hex()[..8].to_string()
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({})", self.short())
    }
}

impl FromStr for NodeId {
    type Err = DigestParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(NodeId(s.parse()?))
    }
}

impl Encode for NodeId {
    fn encode(&self, w: &mut Writer) {
        w.digest(&self.0);
    }
}

impl Decode for NodeId {
    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(NodeId(r.digest()?))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    /// Strict Ed25519 verification; malformed keys never verify.
    pub fn verify(&self, message: &[u8], signature: &Signature) -> bool {
        let Ok(key) = VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
        key.verify_strict(message, &sig).is_ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({}..)", &hex::encode(self.0)[..12])
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", &hex::encode(self.0)[..12])
    }
}

macro_rules! hex_bytes_serde {
    ($ty:ident, $len:expr) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&hex::encode(self.0))
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                let mut out = [0u8; $len];
                hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
                Ok($ty(out))
            }
        }

        impl Encode for $ty {
            fn encode(&self, w: &mut Writer) {
                w.raw(&self.0);
            }
        }

        impl Decode for $ty {
            fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
                Ok($ty(r.array()?))
            }
        }
    };
}

hex_bytes_serde!(PublicKey, PUBLIC_KEY_LEN);
hex_bytes_serde!(Signature, SIGNATURE_LEN);

/// An Ed25519 signing key.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        KeyPair {
            signing: SigningKey::from_bytes(&seed),
        }
    }

    pub fn generate<R: RngCore>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn public(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn node_id(&self) -> NodeId {
        NodeId::fingerprint(&self.public())
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.signing.sign(message).to_bytes())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public()).finish()
    }
}

/// Which verification key a verifier accepts for a node at a given round.
///
/// Without an explicit binding a key is accepted iff its fingerprint is the
/// node id. A binding (installed after a successful recovery) replaces that
/// rule from its starting round onward.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyDirectory {
    bindings: BTreeMap<NodeId, Vec<KeyBinding>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyBinding {
    pub from_round: u64,
    pub key: PublicKey,
}

impl KeyDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, node: NodeId, from_round: u64, key: PublicKey) {
        let list = self.bindings.entry(node).or_default();
        list.retain(|b| b.from_round < from_round);
        list.push(KeyBinding { from_round, key });
    }

    pub fn expected_key(&self, node: &NodeId, round: u64) -> Option<PublicKey> {
        self.bindings
            .get(node)?
            .iter()
            .rev()
            .find(|b| b.from_round <= round)
            .map(|b| b.key)
    }

    pub fn accepts(&self, node: &NodeId, round: u64, key: &PublicKey) -> bool {
        match self.expected_key(node, round) {
            Some(bound) => &bound == key,
            None => NodeId::fingerprint(key) == *node,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_verify_round_trip() {
        let kp = KeyPair::from_seed([7u8; 32]);
        let sig = kp.sign(b"root");
        assert!(kp.public().verify(b"root", &sig));
        assert!(!kp.public().verify(b"roof", &sig));
        let other = KeyPair::from_seed([8u8; 32]);
        assert!(!other.public().verify(b"root", &sig));
    }

    #[test]
    fn malformed_key_never_verifies() {
        let kp = KeyPair::from_seed([1u8; 32]);
        let sig = kp.sign(b"m");
        let mut bad = kp.public();
        bad.0[31] ^= 0x80;
        assert!(!bad.verify(b"m", &sig));
    }

    #[test]
    fn directory_rebinding() {
        let old = KeyPair::from_seed([1u8; 32]);
        let new = KeyPair::from_seed([2u8; 32]);
        let id = old.node_id();
        let mut dir = KeyDirectory::new();
        assert!(dir.accepts(&id, 5, &old.public()));
        assert!(!dir.accepts(&id, 5, &new.public()));
        dir.bind(id, 6, new.public());
        assert!(dir.accepts(&id, 5, &old.public()));
        assert!(!dir.accepts(&id, 6, &old.public()));
        assert!(dir.accepts(&id, 9, &new.public()));
    }
}
