//! Append-only ledger files and self-describing proof files.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::crypto::{KeyDirectory, NodeId};
use crate::entangle::{ChainProof, DigestPath, HubProof, LinkProof};
use crate::hashtree::Digest;
use crate::node::{ChainFault, Commitment, NodeError, RoundState, SealedRound, COMMITMENT_LEN};
use crate::wire::{Decode, Encode, Reader, WireError, Writer};

pub const LEDGER_MAGIC: &[u8; 4] = b"SWLG";
pub const PROOF_MAGIC: &[u8; 4] = b"SWPF";
pub const FORMAT_VERSION: u8 = 1;

const KIND_FULL: u8 = 0;
const KIND_COMMITMENT: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 32;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: corrupt at byte {offset}: {reason}")]
    Corrupt {
        path: PathBuf,
        offset: usize,
        reason: String,
    },
    #[error("{path}: round {round} does not reproduce its commitment: {source}")]
    Inconsistent {
        path: PathBuf,
        round: u64,
        #[source]
        source: NodeError,
    },
}

impl StoreError {
    fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn corrupt(path: &Path, offset: usize, reason: impl ToString) -> Self {
        StoreError::Corrupt {
            path: path.to_path_buf(),
            offset,
            reason: reason.to_string(),
        }
    }
}

/// One persisted round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LedgerEntry {
    Full(SealedRound),
    CommitmentOnly(Commitment),
}

impl LedgerEntry {
    pub fn commitment(&self) -> &Commitment {
        match self {
            LedgerEntry::Full(s) => &s.commitment,
            LedgerEntry::CommitmentOnly(c) => c,
        }
    }

    pub fn round(&self) -> u64 {
        self.commitment().round
    }

    fn body(&self) -> (u8, Vec<u8>) {
        match self {
            LedgerEntry::Full(s) => {
                let mut w = Writer::new();
                w.put(&s.commitment).put(&s.state);
                (KIND_FULL, w.into_bytes())
            }
            LedgerEntry::CommitmentOnly(c) => (KIND_COMMITMENT, c.to_bytes()),
        }
    }
}

/// A node's persisted rounds, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ledger {
    pub node_id: NodeId,
    pub entries: Vec<LedgerEntry>,
}

impl Ledger {
    pub fn from_history(node_id: NodeId, history: &[SealedRound], full: bool) -> Self {
        let entries = history
            .iter()
            .map(|s| match full {
                true => LedgerEntry::Full(s.clone()),
                false => LedgerEntry::CommitmentOnly(s.commitment),
            })
            .collect();
        Ledger { node_id, entries }
    }

    pub fn commitments(&self) -> Vec<Commitment> {
        self.entries.iter().map(|e| *e.commitment()).collect()
    }

    /// The full rounds, or `None` if any round was stored without its state.
    pub fn history(&self) -> Option<Vec<SealedRound>> {
        self.entries
            .iter()
            .map(|e| match e {
                LedgerEntry::Full(s) => Some(s.clone()),
                LedgerEntry::CommitmentOnly(_) => None,
            })
            .collect()
    }

    pub fn is_full(&self) -> bool {
        self.entries.iter().all(|e| matches!(e, LedgerEntry::Full(_)))
    }

    /// Signatures, contiguity from round 0, and hash chaining wherever a
    /// round's state is present.
    pub fn verify(&self, keys: &KeyDirectory) -> Result<(), ChainFault> {
        let mut prev: Option<&Commitment> = None;
        for (i, entry) in self.entries.iter().enumerate() {
            let c = entry.commitment();
            if !c.verify(keys) {
                return Err(ChainFault::BadSignature(c.round));
            }
            if c.node_id != self.node_id {
                return Err(ChainFault::ChainBreak(c.round));
            }
            if c.round != i as u64 {
                return Err(ChainFault::RoundGap(c.round));
            }
            if let LedgerEntry::Full(s) = entry {
                let expected = prev.map(Commitment::digest).unwrap_or(Digest::ZERO);
                if s.state.prev_commitment_digest != expected {
                    return Err(ChainFault::ChainBreak(c.round));
                }
            }
            prev = Some(c);
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), StoreError> {
        let mut writer = LedgerWriter::create(path, self.node_id)?;
        for entry in &self.entries {
            writer.append(entry)?;
        }
        writer.flush()
    }

    pub fn read(path: &Path) -> Result<Self, StoreError> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| StoreError::io(path, e))?;
        Self::parse(path, &bytes)
    }

    fn parse(path: &Path, bytes: &[u8]) -> Result<Self, StoreError> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != LEDGER_MAGIC {
            return Err(StoreError::corrupt(path, 0, "not a ledger file"));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(StoreError::corrupt(path, 4, format!("unsupported version {}", bytes[4])));
        }
        let node_id = NodeId::from_bytes(&bytes[5..HEADER_LEN]).map_err(|e| StoreError::corrupt(path, 5, e))?;
        let mut entries = Vec::new();
        let mut offset = HEADER_LEN;
        while offset < bytes.len() {
            let mut r = Reader::new(&bytes[offset..]);
            let (kind, body) = match (r.u8(), r.bytes()) {
                (Ok(kind), Ok(body)) => (kind, body),
                _ => return Err(StoreError::corrupt(path, offset, "truncated record")),
            };
            let body_at = offset + 5;
            let entry = match kind {
                KIND_FULL => {
                    let mut br = Reader::new(body);
                    let parsed = (|| -> Result<(Commitment, RoundState), WireError> {
                        let c = br.get()?;
                        let s = br.get()?;
                        Ok((c, s))
                    })();
                    let (commitment, state) = parsed.map_err(|e| StoreError::corrupt(path, body_at, e))?;
                    if br.remaining() != 0 {
                        return Err(StoreError::corrupt(path, body_at, "trailing bytes in record"));
                    }
                    let round = commitment.round;
                    LedgerEntry::Full(SealedRound::restore(state, commitment).map_err(|source| {
                        StoreError::Inconsistent {
                            path: path.to_path_buf(),
                            round,
                            source,
                        }
                    })?)
                }
                KIND_COMMITMENT => LedgerEntry::CommitmentOnly(
                    Commitment::from_bytes(body).map_err(|e| StoreError::corrupt(path, body_at, e))?,
                ),
                other => return Err(StoreError::corrupt(path, offset, format!("unknown record kind {other}"))),
            };
            entries.push(entry);
            offset += r.position();
        }
        Ok(Ledger { node_id, entries })
    }
}

/// Appends records to a ledger file as rounds are sealed.
pub struct LedgerWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LedgerWriter {
    pub fn create(path: &Path, node_id: NodeId) -> Result<Self, StoreError> {
        let file = File::create(path).map_err(|e| StoreError::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(LEDGER_MAGIC);
        header.push(FORMAT_VERSION);
        header.extend_from_slice(node_id.0.as_bytes());
        out.write_all(&header).map_err(|e| StoreError::io(path, e))?;
        Ok(LedgerWriter {
            path: path.to_path_buf(),
            out,
        })
    }

    /// Reopens an existing ledger for appending after checking it parses.
    pub fn open(path: &Path) -> Result<(Self, Ledger), StoreError> {
        let ledger = Ledger::read(path)?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| StoreError::io(path, e))?;
        Ok((
            LedgerWriter {
                path: path.to_path_buf(),
                out: BufWriter::new(file),
            },
            ledger,
        ))
    }

    pub fn append(&mut self, entry: &LedgerEntry) -> Result<(), StoreError> {
        let (kind, body) = entry.body();
        let mut w = Writer::new();
        w.u8(kind).bytes(&body);
        self.out
            .write_all(&w.into_bytes())
            .map_err(|e| StoreError::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        self.out.flush().map_err(|e| StoreError::io(&self.path, e))
    }
}

/// Any proof the command line can produce or check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProofFile {
    Link(LinkProof),
    Hub(HubProof),
    Chain(ChainProof),
    Path(DigestPath),
}

impl ProofFile {
    pub fn kind(&self) -> &'static str {
        match self {
            ProofFile::Link(_) => "link",
            ProofFile::Hub(_) => "hub",
            ProofFile::Chain(_) => "chain",
            ProofFile::Path(_) => "path",
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(PROOF_MAGIC).u8(FORMAT_VERSION);
        match self {
            ProofFile::Link(p) => w.u8(1).put(p),
            ProofFile::Hub(p) => w.u8(2).put(p),
            ProofFile::Chain(p) => w.u8(3).put(p),
            ProofFile::Path(p) => w.u8(4).put(p),
        };
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        if r.raw(4)? != PROOF_MAGIC {
            return Err(WireError::Invalid {
                what: "proof magic",
                offset: 0,
            });
        }
        if r.u8()? != FORMAT_VERSION {
            return Err(WireError::Invalid {
                what: "proof version",
                offset: 4,
            });
        }
        let proof = match r.u8()? {
            1 => ProofFile::Link(r.get()?),
            2 => ProofFile::Hub(r.get()?),
            3 => ProofFile::Chain(r.get()?),
            4 => ProofFile::Path(r.get()?),
            _ => return Err(r.invalid("proof kind")),
        };
        r.finish()?;
        Ok(proof)
    }
}

const _: () = assert!(COMMITMENT_LEN == 176);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use crate::node::NodeMachine;

    fn machine(rounds: u64) -> (NodeMachine, KeyDirectory) {
        let key = KeyPair::from_seed([3; 32]);
        let mut keys = KeyDirectory::new();
        keys.bind(key.node_id(), 0, key.public());
        let mut m = NodeMachine::new(key);
        for _ in 0..rounds {
            m.seal().unwrap();
        }
        (m, keys)
    }

    #[test]
    fn round_trips_and_verifies() {
        let dir = tempfile::tempdir().unwrap();
        let (m, keys) = machine(4);
        for full in [true, false] {
            let path = dir.path().join(format!("{full}.ledger"));
            let ledger = Ledger::from_history(m.id(), m.history(), full);
            ledger.write(&path).unwrap();
            let back = Ledger::read(&path).unwrap();
            assert_eq!(back, ledger);
            assert_eq!(back.is_full(), full);
            back.verify(&keys).unwrap();
        }
    }

    #[test]
    fn appending_extends_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ledger");
        let (m, _) = machine(3);
        let mut w = LedgerWriter::create(&path, m.id()).unwrap();
        w.append(&LedgerEntry::Full(m.history()[0].clone())).unwrap();
        w.flush().unwrap();
        drop(w);
        let (mut w, so_far) = LedgerWriter::open(&path).unwrap();
        assert_eq!(so_far.entries.len(), 1);
        w.append(&LedgerEntry::Full(m.history()[1].clone())).unwrap();
        w.flush().unwrap();
        assert_eq!(Ledger::read(&path).unwrap().entries.len(), 2);
    }

    #[test]
    fn truncation_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ledger");
        let (m, _) = machine(2);
        Ledger::from_history(m.id(), m.history(), true).write(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        match Ledger::read(&path) {
            Err(StoreError::Corrupt { offset, .. }) => assert!(offset >= HEADER_LEN),
            other => panic!("expected corruption, got {other:?}"),
        }
    }

    #[test]
    fn edited_state_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.ledger");
        let (m, _) = machine(1);
        let mut sealed = m.history()[0].clone();
        sealed.state.payload = crate::sexpr::Expr::Int(99);
        let mut w = LedgerWriter::create(&path, m.id()).unwrap();
        w.append(&LedgerEntry::Full(sealed)).unwrap();
        w.flush().unwrap();
        assert!(matches!(Ledger::read(&path), Err(StoreError::Inconsistent { round: 0, .. })));
    }

    #[test]
    fn chain_break_is_found() {
        let (m, keys) = machine(3);
        let mut ledger = Ledger::from_history(m.id(), m.history(), true);
        ledger.entries.remove(1);
        assert_eq!(ledger.verify(&keys), Err(ChainFault::RoundGap(2)));
    }
}
