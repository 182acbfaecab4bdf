use serde::{Deserialize, Serialize};

use crate::crypto::Digest;

/// One trace line. Node fields are indices into the simulated cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum Event {
    Start {
        seed: u64,
        nodes: usize,
        members: usize,
        genesis: Digest,
    },
    Send {
        t: u64,
        from: usize,
        to: usize,
        kind: String,
        term: u64,
    },
    Deliver {
        t: u64,
        from: usize,
        to: usize,
        kind: String,
        term: u64,
    },
    Drop {
        t: u64,
        from: usize,
        to: usize,
        kind: String,
        reason: String,
    },
    Timeout {
        t: u64,
        node: usize,
        term: u64,
    },
    BecameLeader {
        t: u64,
        node: usize,
        term: u64,
        log: Vec<Digest>,
    },
    Commit {
        t: u64,
        node: usize,
        height: u64,
        hash: Digest,
        term: u64,
        state: Digest,
    },
    /// Canonical bytes of a committed block, emitted the first time any
    /// node commits it.
    BlockBytes {
        height: u64,
        hash: Digest,
        hex: String,
    },
    Fault {
        t: u64,
        fault: String,
    },
    Submit {
        t: u64,
        node: usize,
        op: usize,
        tx_id: Option<Digest>,
    },
    /// Sentinel personal data handed to a node's private store.
    Personal {
        t: u64,
        node: usize,
        op: usize,
        fields: Vec<String>,
    },
    OpDone {
        t: u64,
        op: usize,
        outcome: String,
    },
    End {
        t: u64,
        time_cap_exceeded: bool,
        healed_at: u64,
        leader_at: Option<u64>,
        last_op_at: u64,
        workload_done_at: Option<u64>,
        logs: Vec<Vec<Digest>>,
        commit: Vec<u64>,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<Event>,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(s: &str) -> Result<Trace, serde_json::Error> {
        let events = s.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<_, _>>()?;
        Ok(Trace { events })
    }

    pub fn end(&self) -> Option<&Event> {
        self.events.iter().rev().find(|e| matches!(e, Event::End { .. }))
    }

    /// Committed blocks decoded from `BlockBytes` events, in height order.
    pub fn committed_blocks(&self) -> Vec<crate::ledger::Block> {
        let mut blocks: Vec<_> = self
            .events
            .iter()
            .filter_map(|e| match e {
                Event::BlockBytes { hex, .. } => {
                    let bytes = hex::decode(hex).ok()?;
                    crate::ledger::Block::from_bytes(&bytes).ok()
                }
                _ => None,
            })
            .collect();
        blocks.sort_by_key(|b| b.height);
        blocks
    }
}
