use serde::Serialize;
use thiserror::Error;

use super::block::{Block, BlockKind, MAX_BLOCK_TXS};
use super::transaction::{apply_transaction, SigCheck, TxRejection};
use crate::contract::{ContractState, Effect};
use crate::crypto::{Digest, PublicKey};
use crate::node_id::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum BlockRejection {
    #[error("height {got}, expected {expected}")]
    BadHeight { expected: u64, got: u64 },
    #[error("prev_hash does not match the current tip")]
    BadPrevHash,
    #[error("stored block_hash does not match block contents")]
    BadBlockHash,
    #[error("timestamp earlier than previous block")]
    BadTimestamp,
    #[error("term earlier than previous block")]
    BadTerm,
    #[error("{0} transactions exceeds the per-block limit")]
    TooManyTransactions(usize),
    #[error("invalid membership block: {0}")]
    BadConfig(String),
    #[error("invalid genesis block: {0}")]
    BadGenesis(String),
    #[error("transaction {index} rejected: {reason}")]
    BadTransaction { index: usize, reason: TxRejection },
}

/// State derived by replaying a chain: the contract plus cluster membership.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainState {
    pub contract: ContractState,
    pub members: Vec<NodeId>,
}

impl ChainState {
    pub fn from_genesis(genesis: &Block) -> Result<ChainState, BlockRejection> {
        let BlockKind::Genesis { admin, members } = &genesis.kind else {
            return Err(BlockRejection::BadGenesis("first block is not a genesis block".into()));
        };
        if genesis.height != 0 {
            return Err(BlockRejection::BadHeight { expected: 0, got: genesis.height });
        }
        if genesis.prev_hash != Digest::ZERO {
            return Err(BlockRejection::BadPrevHash);
        }
        if genesis.compute_hash() != genesis.block_hash {
            return Err(BlockRejection::BadBlockHash);
        }
        if !genesis.transactions.is_empty() {
            return Err(BlockRejection::BadGenesis("genesis carries transactions".into()));
        }
        if members.is_empty() {
            return Err(BlockRejection::BadGenesis("no members".into()));
        }
        for (i, m) in members.iter().enumerate() {
            if members[..i].iter().any(|o| o.pubkey == m.pubkey) {
                return Err(BlockRejection::BadGenesis(format!("duplicate member {}", m.pubkey)));
            }
        }
        Ok(ChainState { contract: ContractState::genesis_state(*admin), members: members.clone() })
    }

    pub fn is_member(&self, key: &PublicKey) -> bool {
        self.members.iter().any(|m| &m.pubkey == key)
    }

    /// Validates `block` as the successor of `prev` and applies it. Atomic:
    /// on error `self` is unchanged.
    pub fn apply_block(&mut self, prev: &Block, block: &Block, sigs: SigCheck) -> Result<Vec<Effect>, BlockRejection> {
        check_link(prev, block)?;
        let mut contract = self.contract.clone();
        let mut effects = Vec::with_capacity(block.transactions.len());
        for (index, tx) in block.transactions.iter().enumerate() {
            let effect = apply_transaction(&mut contract, tx, block.height, sigs)
                .map_err(|reason| BlockRejection::BadTransaction { index, reason })?;
            effects.push(effect);
        }
        match &block.kind {
            BlockKind::Regular => {}
            BlockKind::Genesis { .. } => {
                return Err(BlockRejection::BadConfig("genesis block past height 0".into()));
            }
            BlockKind::AddPeer(node) => {
                if !block.transactions.is_empty() {
                    return Err(BlockRejection::BadConfig("membership block carries transactions".into()));
                }
                if self.is_member(&node.pubkey) {
                    return Err(BlockRejection::BadConfig(format!("{} is already a member", node.pubkey)));
                }
                self.members.push(node.clone());
            }
        }
        contract.set_applied_height(block.height);
        self.contract = contract;
        Ok(effects)
    }
}

fn check_link(prev: &Block, block: &Block) -> Result<(), BlockRejection> {
    if block.height != prev.height + 1 {
        return Err(BlockRejection::BadHeight { expected: prev.height + 1, got: block.height });
    }
    if block.prev_hash != prev.block_hash {
        return Err(BlockRejection::BadPrevHash);
    }
    if block.compute_hash() != block.block_hash {
        return Err(BlockRejection::BadBlockHash);
    }
    if block.timestamp < prev.timestamp {
        return Err(BlockRejection::BadTimestamp);
    }
    if block.term < prev.term {
        return Err(BlockRejection::BadTerm);
    }
    if block.transactions.len() > MAX_BLOCK_TXS {
        return Err(BlockRejection::TooManyTransactions(block.transactions.len()));
    }
    Ok(())
}

/// First failing height reported by [`validate_chain`].
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("violation at height {height}: {reason}")]
pub struct Violation {
    pub height: u64,
    pub reason: BlockRejection,
}

/// Replays `blocks` from genesis, checking every link, hash and transaction.
/// Returns the state at the tip.
pub fn validate_chain(blocks: &[Block]) -> Result<ChainState, Violation> {
    let genesis =
        blocks.first().ok_or(Violation { height: 0, reason: BlockRejection::BadGenesis("empty chain".into()) })?;
    let mut state = ChainState::from_genesis(genesis).map_err(|reason| Violation { height: 0, reason })?;
    for pair in blocks.windows(2) {
        // Report the position in the list, which is what a tampered height field would misstate.
        let height = pair[0].height + 1;
        state.apply_block(&pair[0], &pair[1], SigCheck::Verify).map_err(|reason| Violation { height, reason })?;
    }
    Ok(state)
}

/// An append-only, validated chain together with its derived state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<Block>,
    state: ChainState,
}

impl Chain {
    pub fn new(genesis: Block) -> Result<Chain, BlockRejection> {
        let state = ChainState::from_genesis(&genesis)?;
        Ok(Chain { blocks: vec![genesis], state })
    }

    pub fn from_blocks(blocks: Vec<Block>) -> Result<Chain, Violation> {
        let state = validate_chain(&blocks)?;
        Ok(Chain { blocks, state })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn tip_hash(&self) -> Digest {
        self.tip().block_hash
    }

    pub fn height(&self) -> u64 {
        self.tip().height
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    /// Returns the extended chain, leaving `self` untouched.
    pub fn append_block(&self, block: Block) -> Result<Chain, BlockRejection> {
        let mut next = self.clone();
        next.push_block(block)?;
        Ok(next)
    }

    /// In-place append; on rejection the chain is unchanged.
    pub fn push_block(&mut self, block: Block) -> Result<Vec<Effect>, BlockRejection> {
        let tip = self.blocks.last().expect("chain always holds genesis");
        let effects = self.state.apply_block(tip, &block, SigCheck::Verify)?;
        self.blocks.push(block);
        Ok(effects)
    }
}
