use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{sha256, Digest, PublicKey};
use crate::node_id::NodeId;

use super::transaction::Transaction;

/// Upper bound on transactions per block.
pub const MAX_BLOCK_TXS: usize = 1024;

const KIND_REGULAR: u8 = 0x00;
const KIND_GENESIS: u8 = 0x01;
const KIND_ADD_PEER: u8 = 0x02;

/// What a block carries besides its transactions. Membership changes travel
/// through the log as dedicated blocks with no transactions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockKind {
    Regular,
    Genesis { admin: PublicKey, members: Vec<NodeId> },
    AddPeer(NodeId),
}

impl BlockKind {
    fn encode(&self, w: &mut Writer) {
        match self {
            BlockKind::Regular => {
                w.u8(KIND_REGULAR);
            }
            BlockKind::Genesis { admin, members } => {
                w.u8(KIND_GENESIS).key(admin).u32(members.len() as u32);
                for m in members {
                    w.str(&m.render());
                }
            }
            BlockKind::AddPeer(node) => {
                w.u8(KIND_ADD_PEER).str(&node.render());
            }
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let node = |r: &mut Reader<'_>| -> Result<NodeId, DecodeError> {
            r.string()?.parse().map_err(|e| DecodeError::Invalid(format!("node id: {e}")))
        };
        Ok(match r.u8()? {
            KIND_REGULAR => BlockKind::Regular,
            KIND_GENESIS => {
                let admin = r.key()?;
                let n = r.u32()?;
                let members = (0..n).map(|_| node(r)).collect::<Result<_, _>>()?;
                BlockKind::Genesis { admin, members }
            }
            KIND_ADD_PEER => BlockKind::AddPeer(node(r)?),
            tag => return Err(DecodeError::UnknownTag { what: "block kind", tag }),
        })
    }
}

/// A hash-linked batch of transactions. `term` is the consensus term of the
/// leader that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub term: u64,
    pub prev_hash: Digest,
    pub timestamp: u64,
    pub proposer: PublicKey,
    pub kind: BlockKind,
    pub transactions: Vec<Transaction>,
    pub block_hash: Digest,
}

impl Block {
    pub fn genesis(admin: PublicKey, members: Vec<NodeId>, timestamp: u64) -> Block {
        let mut b = Block {
            height: 0,
            term: 0,
            prev_hash: Digest::ZERO,
            timestamp,
            proposer: PublicKey::default(),
            kind: BlockKind::Genesis { admin, members },
            transactions: Vec::new(),
            block_hash: Digest::ZERO,
        };
        b.block_hash = b.compute_hash();
        b
    }

    /// Builds the successor of `prev`. The timestamp is clamped so it never
    /// goes backwards.
    pub fn next(
        prev: &Block,
        term: u64,
        timestamp: u64,
        proposer: PublicKey,
        kind: BlockKind,
        transactions: Vec<Transaction>,
    ) -> Block {
        let mut b = Block {
            height: prev.height + 1,
            term,
            prev_hash: prev.block_hash,
            timestamp: timestamp.max(prev.timestamp),
            proposer,
            kind,
            transactions,
            block_hash: Digest::ZERO,
        };
        b.block_hash = b.compute_hash();
        b
    }

    pub fn is_genesis(&self) -> bool {
        matches!(self.kind, BlockKind::Genesis { .. })
    }

    fn encode_prefix(&self, w: &mut Writer) {
        w.u64(self.height).digest(&self.prev_hash).u64(self.timestamp).key(&self.proposer).u64(self.term);
        self.kind.encode(w);
    }

    /// Bytes covered by `block_hash`: header fields followed by the ordered
    /// transaction ids.
    pub fn header_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_prefix(&mut w);
        w.u32(self.transactions.len() as u32);
        for tx in &self.transactions {
            w.digest(&tx.tx_id);
        }
        w.finish()
    }

    pub fn compute_hash(&self) -> Digest {
        sha256(&self.header_bytes())
    }

    /// Full canonical encoding: header fields, length-prefixed transactions,
    /// then the stored `block_hash`.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_prefix(&mut w);
        w.u32(self.transactions.len() as u32);
        for tx in &self.transactions {
            w.bytes(&tx.canonical_bytes());
        }
        w.digest(&self.block_hash);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Block, DecodeError> {
        let mut r = Reader::new(bytes);
        let height = r.u64()?;
        let prev_hash = r.digest()?;
        let timestamp = r.u64()?;
        let proposer = r.key()?;
        let term = r.u64()?;
        let kind = BlockKind::decode(&mut r)?;
        let n = r.u32()? as usize;
        if n > MAX_BLOCK_TXS {
            return Err(DecodeError::Invalid(format!("{n} transactions exceeds limit")));
        }
        let mut transactions = Vec::with_capacity(n);
        for _ in 0..n {
            transactions.push(Transaction::from_bytes(r.bytes()?)?);
        }
        let block_hash = r.digest()?;
        r.finish()?;
        Ok(Block { height, term, prev_hash, timestamp, proposer, kind, transactions, block_hash })
    }
}
