//! Consensus frames on the TCP transport.
//!
//! A frame is a big-endian `u32` length followed by a JSON envelope
//! `{"from": <pubkey>, "body": <json string>, "sig": <hex>}`. The signature
//! covers the body bytes exactly as sent. Blocks and transactions inside the
//! body travel as base64 of their canonical encoding.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rmsd_core::consensus::Message;
use rmsd_core::crypto::{Digest, Keypair, PublicKey, Signature};
use rmsd_core::ledger::{Block, Transaction};
use rmsd_core::node_id::NodeId;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Frames above this size are refused before allocation.
pub const MAX_FRAME: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("bad frame signature")]
    BadSignature,
}

#[derive(Serialize, Deserialize)]
struct Frame {
    from: PublicKey,
    body: String,
    sig: Signature,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Body {
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
        blocks: Vec<String>,
        leader_commit: u64,
    },
    AppendResponse {
        term: u64,
        success: bool,
        match_height: u64,
    },
    Forward {
        term: u64,
        txs: Vec<String>,
    },
    AddPeer {
        term: u64,
        node: NodeId,
    },
}

impl From<&Message> for Body {
    fn from(m: &Message) -> Self {
        match m.clone() {
            Message::VoteRequest { term, candidate, last_log_height, last_log_term, last_log_hash } => {
                Body::VoteRequest { term, candidate, last_log_height, last_log_term, last_log_hash }
            }
            Message::VoteResponse { term, granted } => Body::VoteResponse { term, granted },
            Message::AppendEntries { term, leader, prev_height, prev_hash, blocks, leader_commit } => {
                Body::AppendEntries {
                    term,
                    leader,
                    prev_height,
                    prev_hash,
                    blocks: blocks.iter().map(|b| B64.encode(b.canonical_bytes())).collect(),
                    leader_commit,
                }
            }
            Message::AppendResponse { term, success, match_height } => {
                Body::AppendResponse { term, success, match_height }
            }
            Message::Forward { term, txs } => {
                Body::Forward { term, txs: txs.iter().map(|t| B64.encode(t.canonical_bytes())).collect() }
            }
            Message::AddPeer { term, node } => Body::AddPeer { term, node },
        }
    }
}

fn malformed(e: impl std::fmt::Display) -> WireError {
    WireError::Malformed(e.to_string())
}

impl TryFrom<Body> for Message {
    type Error = WireError;
    fn try_from(b: Body) -> Result<Self, WireError> {
        Ok(match b {
            Body::VoteRequest { term, candidate, last_log_height, last_log_term, last_log_hash } => {
                Message::VoteRequest { term, candidate, last_log_height, last_log_term, last_log_hash }
            }
            Body::VoteResponse { term, granted } => Message::VoteResponse { term, granted },
            Body::AppendEntries { term, leader, prev_height, prev_hash, blocks, leader_commit } => {
                let blocks = blocks
                    .iter()
                    .map(|s| Block::from_bytes(&B64.decode(s).map_err(malformed)?).map_err(malformed))
                    .collect::<Result<_, _>>()?;
                Message::AppendEntries { term, leader, prev_height, prev_hash, blocks, leader_commit }
            }
            Body::AppendResponse { term, success, match_height } => {
                Message::AppendResponse { term, success, match_height }
            }
            Body::Forward { term, txs } => {
                let txs = txs
                    .iter()
                    .map(|s| Transaction::from_bytes(&B64.decode(s).map_err(malformed)?).map_err(malformed))
                    .collect::<Result<_, _>>()?;
                Message::Forward { term, txs }
            }
            Body::AddPeer { term, node } => Message::AddPeer { term, node },
        })
    }
}

/// Encodes and signs `msg`, length prefix included.
pub fn encode_frame(key: &Keypair, msg: &Message) -> Vec<u8> {
    let body = serde_json::to_string(&Body::from(msg)).expect("wire bodies always serialize");
    let frame = Frame { from: key.public(), sig: key.sign(body.as_bytes()), body };
    let json = serde_json::to_vec(&frame).expect("frames always serialize");
    let mut out = Vec::with_capacity(4 + json.len());
    out.extend_from_slice(&(json.len() as u32).to_be_bytes());
    out.extend_from_slice(&json);
    out
}

/// Decodes one frame payload (without the length prefix) and checks its
/// signature against the claimed sender.
pub fn decode_frame(payload: &[u8]) -> Result<(PublicKey, Message), WireError> {
    if payload.len() > MAX_FRAME {
        return Err(WireError::TooLarge(payload.len()));
    }
    let frame: Frame = serde_json::from_slice(payload).map_err(malformed)?;
    if !frame.from.verify(frame.body.as_bytes(), &frame.sig) {
        return Err(WireError::BadSignature);
    }
    let body: Body = serde_json::from_str(&frame.body).map_err(malformed)?;
    Ok((frame.from, body.try_into()?))
}
