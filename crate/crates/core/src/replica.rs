//! A consensus core wrapped with the pieces a serving node needs: a mempool,
//! transaction receipts, forwarding to the leader and queued peer additions.
//!
//! Like [`RaftNode`], a `Replica` performs no I/O. Every method that can
//! produce traffic leaves it in an outbox drained by [`Replica::drain_outbox`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::consensus::{AddPeerError, Envelope, Message, RaftNode, RaftRole};
use crate::crypto::{Digest, PublicKey};
use crate::ledger::{
    apply_transaction, Block, BlockKind, ChainState, SigCheck, Transaction, TxRejection, MAX_BLOCK_TXS,
};
use crate::node_id::NodeId;

/// How often unresolved requests are resent to the leader.
pub const FORWARD_RETRY_MS: u64 = 200;
/// How long a transaction with a future nonce may wait for its predecessors.
pub const FUTURE_NONCE_TTL_MS: u64 = 30_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ReceiptStatus {
    Pending,
    Committed { height: u64 },
    Rejected { code: String, message: String },
}

impl ReceiptStatus {
    fn rejected(r: &TxRejection) -> Self {
        ReceiptStatus::Rejected { code: r.code().to_string(), message: r.to_string() }
    }

    pub fn is_final(&self) -> bool {
        !matches!(self, ReceiptStatus::Pending)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub tx_id: Digest,
    #[serde(flatten)]
    pub status: ReceiptStatus,
}

#[derive(Debug, Clone)]
struct Origin {
    tx: Transaction,
    submitted_at: u64,
    next_forward: u64,
    status: ReceiptStatus,
}

#[derive(Debug, Clone)]
struct Pooled {
    tx: Transaction,
    added_at: u64,
}

#[derive(Debug, Clone)]
struct PeerRequest {
    node: NodeId,
    next_forward: u64,
}

#[derive(Debug, Clone)]
pub struct Replica {
    raft: RaftNode,
    /// Leader-side queue of transactions not yet in a block.
    mempool: Vec<Pooled>,
    pooled: BTreeSet<Digest>,
    /// Transactions submitted through this replica, with their receipts.
    origin: BTreeMap<Digest, Origin>,
    /// Every transaction in the local log: tx_id to height.
    log_index: BTreeMap<Digest, u64>,
    peer_requests: Vec<PeerRequest>,
    led_term: Option<u64>,
    outbox: Vec<Envelope>,
    committed: Vec<Block>,
    dirty_from: Option<u64>,
}

impl Replica {
    pub fn new(raft: RaftNode) -> Self {
        let mut r = Replica {
            raft,
            mempool: Vec::new(),
            pooled: BTreeSet::new(),
            origin: BTreeMap::new(),
            log_index: BTreeMap::new(),
            peer_requests: Vec::new(),
            led_term: None,
            outbox: Vec::new(),
            committed: Vec::new(),
            dirty_from: None,
        };
        r.reindex(0);
        r
    }

    pub fn raft(&self) -> &RaftNode {
        &self.raft
    }

    pub fn id(&self) -> &NodeId {
        self.raft.id()
    }

    pub fn committed_state(&self) -> &ChainState {
        self.raft.committed_state()
    }

    pub fn committed_blocks(&self) -> &[Block] {
        &self.raft.log()[..=self.raft.commit_index() as usize]
    }

    /// Whether a write submitted now can be expected to commit: a leader
    /// needs recent contact with a majority, a follower needs a known leader.
    pub fn has_quorum(&self, now: u64) -> bool {
        match self.raft.role() {
            RaftRole::Leader => self.raft.has_quorum_contact(now),
            RaftRole::Follower => self.raft.leader_hint_key().is_some(),
            RaftRole::Candidate => false,
        }
    }

    pub fn drain_outbox(&mut self) -> Vec<Envelope> {
        std::mem::take(&mut self.outbox)
    }

    /// Blocks committed since the last call, in order.
    pub fn take_committed(&mut self) -> Vec<Block> {
        std::mem::take(&mut self.committed)
    }

    /// Lowest log height changed since the last call.
    pub fn take_dirty_from(&mut self) -> Option<u64> {
        self.dirty_from.take()
    }

    /// The nonce a new transaction from `sender` should carry, counting
    /// transactions still waiting in this replica.
    pub fn next_nonce(&self, sender: &PublicKey) -> u64 {
        let base = self.raft.tip_state().contract.expected_nonce(sender);
        self.origin
            .values()
            .filter(|o| &o.tx.sender == sender && o.status == ReceiptStatus::Pending)
            .map(|o| o.tx.nonce + 1)
            .chain(self.mempool.iter().filter(|p| &p.tx.sender == sender).map(|p| p.tx.nonce + 1))
            .fold(base, u64::max)
    }

    pub fn receipt(&self, tx_id: &Digest) -> Option<Receipt> {
        if let Some(o) = self.origin.get(tx_id) {
            return Some(Receipt { tx_id: *tx_id, status: o.status.clone() });
        }
        let h = *self.log_index.get(tx_id)?;
        let status =
            if h <= self.raft.commit_index() { ReceiptStatus::Committed { height: h } } else { ReceiptStatus::Pending };
        Some(Receipt { tx_id: *tx_id, status })
    }

    /// Accepts a client transaction. Transactions that cannot succeed
    /// against the current tip are rejected at once; the rest are queued
    /// (leader) or forwarded (follower) and reported as pending.
    pub fn submit(&mut self, now: u64, tx: Transaction) -> Receipt {
        if let Some(r) = self.receipt(&tx.tx_id) {
            if !matches!(r.status, ReceiptStatus::Rejected { .. }) {
                return r;
            }
        }
        let status = match self.precheck(&tx) {
            Err(e) if !e.is_future_nonce() => ReceiptStatus::rejected(&e),
            _ => ReceiptStatus::Pending,
        };
        let receipt = Receipt { tx_id: tx.tx_id, status: status.clone() };
        let pending = status == ReceiptStatus::Pending;
        self.origin.insert(tx.tx_id, Origin { tx: tx.clone(), submitted_at: now, next_forward: now, status });
        // Followers forward on the next tick so that transactions submitted
        // together travel together.
        if pending && self.raft.is_leader() {
            self.pool(now, tx);
        }
        receipt
    }

    /// Queues a membership request. Completion is observable through
    /// [`Replica::committed_state`].
    pub fn request_add_peer(&mut self, now: u64, node: NodeId) -> Result<(), AddPeerError> {
        if self.raft.tip_state().is_member(&node.pubkey) || self.raft.committed_state().is_member(&node.pubkey) {
            return Err(AddPeerError::DuplicatePeer);
        }
        if !self.peer_requests.iter().any(|p| p.node.pubkey == node.pubkey) {
            self.peer_requests.push(PeerRequest { node, next_forward: now });
        }
        self.drive_peers(now);
        Ok(())
    }

    pub fn tick(&mut self, now: u64) {
        let out = self.raft.tick(now);
        self.outbox.extend(out);
        self.after_raft(now);
        if self.raft.is_leader() {
            self.propose(now);
        } else {
            self.forward_origin(now);
        }
        self.drive_peers(now);
        self.expire(now);
        self.after_raft(now);
    }

    pub fn step(&mut self, now: u64, from: PublicKey, msg: Message) {
        match msg {
            Message::Forward { txs, .. } => self.on_forward(now, from, txs),
            Message::AddPeer { node, .. } => self.on_add_peer(now, from, node),
            msg => {
                let out = self.raft.step(now, from, msg);
                self.outbox.extend(out);
                self.after_raft(now);
            }
        }
    }

    // ---- internals ----

    fn precheck(&self, tx: &Transaction) -> Result<(), TxRejection> {
        let mut scratch = self.raft.tip_state().contract.clone();
        apply_transaction(&mut scratch, tx, self.raft.last_height() + 1, SigCheck::Verify).map(|_| ())
    }

    fn pool(&mut self, now: u64, tx: Transaction) {
        if self.log_index.contains_key(&tx.tx_id) || !self.pooled.insert(tx.tx_id) {
            return;
        }
        self.mempool.push(Pooled { tx, added_at: now });
    }

    fn on_forward(&mut self, now: u64, from: PublicKey, txs: Vec<Transaction>) {
        if self.raft.is_leader() {
            for tx in txs {
                if tx.verify_signature().is_ok() {
                    self.pool(now, tx);
                }
            }
            self.propose(now);
            self.after_raft(now);
        } else if let Some(leader) = self.raft.leader_hint_key() {
            if leader != from && leader != self.raft.id().pubkey {
                let term = self.raft.current_term();
                self.outbox.push(Envelope { to: leader, msg: Message::Forward { term, txs } });
            }
        }
    }

    fn on_add_peer(&mut self, now: u64, from: PublicKey, node: NodeId) {
        if self.raft.is_leader() {
            let _ = self.request_add_peer(now, node);
            self.after_raft(now);
        } else if let Some(leader) = self.raft.leader_hint_key() {
            if leader != from && leader != self.raft.id().pubkey {
                let term = self.raft.current_term();
                self.outbox.push(Envelope { to: leader, msg: Message::AddPeer { term, node } });
            }
        }
    }

    /// Builds at most one block from the mempool, applying candidates to a
    /// scratch state so that only transactions valid in sequence are kept.
    fn propose(&mut self, now: u64) {
        if self.mempool.is_empty() {
            return;
        }
        let height = self.raft.last_height() + 1;
        let mut scratch = self.raft.tip_state().contract.clone();
        let mut chosen = Vec::new();
        let mut remaining = std::mem::take(&mut self.mempool);
        loop {
            let before = chosen.len();
            let mut keep = Vec::with_capacity(remaining.len());
            for p in remaining {
                if chosen.len() >= MAX_BLOCK_TXS {
                    keep.push(p);
                    continue;
                }
                match apply_transaction(&mut scratch, &p.tx, height, SigCheck::Skip) {
                    Ok(_) => chosen.push(p.tx),
                    Err(e) if e.is_future_nonce() => keep.push(p),
                    Err(_) => {
                        self.pooled.remove(&p.tx.tx_id);
                    }
                }
            }
            remaining = keep;
            if chosen.len() == before || remaining.is_empty() || chosen.len() >= MAX_BLOCK_TXS {
                break;
            }
        }
        self.mempool = remaining;
        if chosen.is_empty() {
            return;
        }
        for tx in &chosen {
            self.pooled.remove(&tx.tx_id);
        }
        match self.raft.propose_block(now, chosen) {
            Ok(out) => self.outbox.extend(out),
            Err(e) => debug_assert!(false, "proposal from leader failed: {e}"),
        }
    }

    fn forward_origin(&mut self, now: u64) {
        let Some(leader) = self.raft.leader_hint_key() else { return };
        if leader == self.raft.id().pubkey {
            return;
        }
        let mut txs = Vec::new();
        for o in self.origin.values_mut() {
            if o.status == ReceiptStatus::Pending && !self.log_index.contains_key(&o.tx.tx_id) && o.next_forward <= now
            {
                o.next_forward = now + FORWARD_RETRY_MS;
                txs.push(o.tx.clone());
            }
        }
        for chunk in txs.chunks(MAX_BLOCK_TXS) {
            let term = self.raft.current_term();
            self.outbox.push(Envelope { to: leader, msg: Message::Forward { term, txs: chunk.to_vec() } });
        }
    }

    fn drive_peers(&mut self, now: u64) {
        let committed = self.raft.committed_state();
        self.peer_requests.retain(|p| !committed.is_member(&p.node.pubkey));
        if self.peer_requests.is_empty() {
            return;
        }
        if self.raft.is_leader() {
            for i in 0..self.peer_requests.len() {
                let node = self.peer_requests[i].node.clone();
                if self.raft.tip_state().is_member(&node.pubkey) {
                    continue;
                }
                match self.raft.add_peer(now, node) {
                    Ok(out) => self.outbox.extend(out),
                    Err(AddPeerError::DuplicatePeer) => {}
                    Err(_) => break,
                }
            }
            return;
        }
        let Some(leader) = self.raft.leader_hint_key() else { return };
        let term = self.raft.current_term();
        for p in &mut self.peer_requests {
            if p.next_forward <= now {
                p.next_forward = now + FORWARD_RETRY_MS;
                self.outbox.push(Envelope { to: leader, msg: Message::AddPeer { term, node: p.node.clone() } });
            }
        }
    }

    fn expire(&mut self, now: u64) {
        let pooled = &mut self.pooled;
        self.mempool.retain(|p| {
            let keep = now < p.added_at + FUTURE_NONCE_TTL_MS;
            if !keep {
                pooled.remove(&p.tx.tx_id);
            }
            keep
        });
    }

    /// Folds the core's commits and log changes into the indexes and
    /// receipts. Idempotent.
    fn after_raft(&mut self, now: u64) {
        if let Some(h) = self.raft.take_dirty_from() {
            self.reindex(h);
            self.dirty_from = Some(self.dirty_from.map_or(h, |d| d.min(h)));
        }
        let committed = self.raft.take_committed();
        let any_commit = !committed.is_empty();
        for block in &committed {
            for tx in &block.transactions {
                if let Some(o) = self.origin.get_mut(&tx.tx_id) {
                    o.status = ReceiptStatus::Committed { height: block.height };
                }
            }
        }
        self.committed.extend(committed);

        let term = self.raft.current_term();
        if self.raft.is_leader() && self.led_term != Some(term) {
            self.led_term = Some(term);
            let pending: Vec<Transaction> =
                self.origin.values().filter(|o| o.status == ReceiptStatus::Pending).map(|o| o.tx.clone()).collect();
            for tx in pending {
                self.pool(now, tx);
            }
        }
        if any_commit {
            self.resolve_origin(now);
        }
    }

    /// Settles pending receipts once the log is fully committed: a
    /// transaction that is not in the log and cannot apply to the committed
    /// state is rejected, except for a future nonce within its grace period.
    fn resolve_origin(&mut self, now: u64) {
        if self.raft.commit_index() != self.raft.last_height() {
            return;
        }
        let state = &self.raft.committed_state().contract;
        let height = self.raft.last_height() + 1;
        for o in self.origin.values_mut() {
            if o.status != ReceiptStatus::Pending || self.log_index.contains_key(&o.tx.tx_id) {
                continue;
            }
            let mut scratch = state.clone();
            match apply_transaction(&mut scratch, &o.tx, height, SigCheck::Skip) {
                Ok(_) => {}
                Err(e) if e.is_future_nonce() && now < o.submitted_at + FUTURE_NONCE_TTL_MS => {}
                Err(e) => o.status = ReceiptStatus::rejected(&e),
            }
        }
    }

    fn reindex(&mut self, from: u64) {
        self.log_index.retain(|_, h| *h < from);
        for block in self.raft.log().iter().skip(from as usize) {
            if matches!(block.kind, BlockKind::Regular) {
                for tx in &block.transactions {
                    self.log_index.insert(tx.tx_id, block.height);
                }
            }
        }
    }
}
