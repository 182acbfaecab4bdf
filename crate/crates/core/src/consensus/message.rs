use crate::crypto::{Digest, PublicKey};
use crate::ledger::{Block, Transaction};
use crate::node_id::NodeId;

/// Messages exchanged between consensus cores. The sender's identity travels
/// in the transport envelope, which is also where signatures are applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    VoteRequest {
        term: u64,
        candidate: PublicKey,
        last_log_height: u64,
        last_log_term: u64,
        last_log_hash: Digest,
    },
    VoteResponse {
        term: u64,
        granted: bool,
    },
    AppendEntries {
        term: u64,
        leader: PublicKey,
        prev_height: u64,
        prev_hash: Digest,
        blocks: Vec<Block>,
        leader_commit: u64,
    },
    /// On failure `match_height` carries the follower's last height as a
    /// backtracking hint.
    AppendResponse {
        term: u64,
        success: bool,
        match_height: u64,
    },
    /// Client transactions relayed towards the leader.
    Forward {
        term: u64,
        txs: Vec<Transaction>,
    },
    /// Membership request relayed towards the leader.
    AddPeer {
        term: u64,
        node: NodeId,
    },
}

impl Message {
    pub fn term(&self) -> u64 {
        match self {
            Message::VoteRequest { term, .. }
            | Message::VoteResponse { term, .. }
            | Message::AppendEntries { term, .. }
            | Message::AppendResponse { term, .. }
            | Message::Forward { term, .. }
            | Message::AddPeer { term, .. } => *term,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::VoteRequest { .. } => "VoteRequest",
            Message::VoteResponse { .. } => "VoteResponse",
            Message::AppendEntries { .. } => "AppendEntries",
            Message::AppendResponse { .. } => "AppendResponse",
            Message::Forward { .. } => "Forward",
            Message::AddPeer { .. } => "AddPeer",
        }
    }
}

/// An outbound message addressed to a peer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub to: PublicKey,
    pub msg: Message,
}
