//! Blocks, transactions, canonical encoding and chain validation.

mod block;
mod chain;
mod transaction;

pub use block::{Block, BlockKind, MAX_BLOCK_TXS};
pub use chain::{validate_chain, BlockRejection, Chain, ChainState, Violation};
pub use transaction::{
    apply_transaction, body_bytes, verify_transaction, Payload, SigCheck, Transaction, TxRejection, TAG_APPROVE_NEED,
    TAG_APPROVE_SUPPORT, TAG_CREATE_NEED, TAG_CREATE_SUPPORT, TAG_SET_USER,
};
