//! Single-threaded RAFT core. One log entry is one [`Block`]; the log is the
//! chain. The core does no I/O and reads no clock: every input carries the
//! caller's notion of `now` in milliseconds and every output is returned.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::message::{Envelope, Message};
use crate::crypto::{Digest, PublicKey};
use crate::ledger::{Block, BlockKind, BlockRejection, ChainState, SigCheck, Transaction, Violation};
use crate::node_id::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RaftRole {
    Follower,
    Candidate,
    Leader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RaftConfig {
    pub election_timeout_min: u64,
    pub election_timeout_max: u64,
    pub heartbeat_interval: u64,
    pub max_blocks_per_append: usize,
}

impl Default for RaftConfig {
    fn default() -> Self {
        RaftConfig {
            election_timeout_min: 150,
            election_timeout_max: 300,
            heartbeat_interval: 50,
            max_blocks_per_append: 64,
        }
    }
}

/// The part of the core that must survive a restart.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HardState {
    pub current_term: u64,
    pub voted_for: Option<PublicKey>,
    pub commit_index: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProposeError {
    #[error("not the leader")]
    NotLeader { leader_hint: Option<NodeId> },
    #[error("block rejected: {0}")]
    Invalid(BlockRejection),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddPeerError {
    #[error("not the leader")]
    NotLeader { leader_hint: Option<NodeId> },
    #[error("node is already a member")]
    DuplicatePeer,
    #[error("another membership change is not yet committed")]
    ConfigInProgress,
    #[error("leader has not committed a block in its term yet")]
    NotReady,
}

#[derive(Debug, Clone)]
pub struct RaftNode {
    me: NodeId,
    cfg: RaftConfig,
    rng: ChaCha8Rng,

    current_term: u64,
    voted_for: Option<PublicKey>,
    log: Vec<Block>,

    role: RaftRole,
    commit_index: u64,
    leader_hint: Option<PublicKey>,
    election_deadline: u64,
    heartbeat_due: u64,
    votes: BTreeSet<PublicKey>,
    next_height: BTreeMap<PublicKey, u64>,
    match_height: BTreeMap<PublicKey, u64>,
    last_ack: BTreeMap<PublicKey, u64>,

    committed: ChainState,
    tip: ChainState,
    newly_committed: Vec<Block>,
    dirty_from: Option<u64>,
}

impl RaftNode {
    pub fn new(me: NodeId, genesis: Block, cfg: RaftConfig, seed: u64, now: u64) -> Result<Self, BlockRejection> {
        let state = ChainState::from_genesis(&genesis)?;
        let mut node = RaftNode {
            me,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            current_term: 0,
            voted_for: None,
            log: vec![genesis],
            role: RaftRole::Follower,
            commit_index: 0,
            leader_hint: None,
            election_deadline: 0,
            heartbeat_due: 0,
            votes: BTreeSet::new(),
            next_height: BTreeMap::new(),
            match_height: BTreeMap::new(),
            last_ack: BTreeMap::new(),
            committed: state.clone(),
            tip: state,
            newly_committed: Vec::new(),
            dirty_from: Some(0),
        };
        node.reset_election_timer(now);
        Ok(node)
    }

    /// Rebuilds a core from persisted state. Every block is re-verified.
    pub fn restore(
        me: NodeId,
        cfg: RaftConfig,
        seed: u64,
        now: u64,
        hard: HardState,
        log: Vec<Block>,
    ) -> Result<Self, Violation> {
        let genesis =
            log.first().ok_or(Violation { height: 0, reason: BlockRejection::BadGenesis("empty log".into()) })?;
        let mut state = ChainState::from_genesis(genesis).map_err(|reason| Violation { height: 0, reason })?;
        let commit_index = hard.commit_index.min(log.len() as u64 - 1);
        let mut committed = state.clone();
        for h in 1..log.len() {
            state
                .apply_block(&log[h - 1], &log[h], SigCheck::Verify)
                .map_err(|reason| Violation { height: h as u64, reason })?;
            if h as u64 == commit_index {
                committed = state.clone();
            }
        }
        let mut node = RaftNode {
            me,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            current_term: hard.current_term,
            voted_for: hard.voted_for,
            log,
            role: RaftRole::Follower,
            commit_index,
            leader_hint: None,
            election_deadline: 0,
            heartbeat_due: 0,
            votes: BTreeSet::new(),
            next_height: BTreeMap::new(),
            match_height: BTreeMap::new(),
            last_ack: BTreeMap::new(),
            committed,
            tip: state,
            newly_committed: Vec::new(),
            dirty_from: None,
        };
        node.reset_election_timer(now);
        Ok(node)
    }

    // ---- accessors ----

    pub fn id(&self) -> &NodeId {
        &self.me
    }

    pub fn config(&self) -> &RaftConfig {
        &self.cfg
    }

    pub fn role(&self) -> RaftRole {
        self.role
    }

    pub fn is_leader(&self) -> bool {
        self.role == RaftRole::Leader
    }

    pub fn current_term(&self) -> u64 {
        self.current_term
    }

    pub fn voted_for(&self) -> Option<PublicKey> {
        self.voted_for
    }

    pub fn commit_index(&self) -> u64 {
        self.commit_index
    }

    pub fn log(&self) -> &[Block] {
        &self.log
    }

    pub fn last_block(&self) -> &Block {
        self.log.last().expect("log always holds genesis")
    }

    pub fn last_height(&self) -> u64 {
        self.last_block().height
    }

    pub fn hard_state(&self) -> HardState {
        HardState { current_term: self.current_term, voted_for: self.voted_for, commit_index: self.commit_index }
    }

    /// State after applying every committed block.
    pub fn committed_state(&self) -> &ChainState {
        &self.committed
    }

    /// State after applying every block in the log, committed or not.
    pub fn tip_state(&self) -> &ChainState {
        &self.tip
    }

    /// Effective membership: includes uncommitted membership blocks.
    pub fn members(&self) -> &[NodeId] {
        &self.tip.members
    }

    pub fn peers(&self) -> impl Iterator<Item = &NodeId> {
        self.tip.members.iter().filter(move |m| m.pubkey != self.me.pubkey)
    }

    pub fn is_member(&self) -> bool {
        self.tip.is_member(&self.me.pubkey)
    }

    pub fn quorum_size(&self) -> usize {
        self.tip.members.len() / 2 + 1
    }

    pub fn leader_hint(&self) -> Option<&NodeId> {
        let key = self.leader_hint?;
        self.tip.members.iter().find(|m| m.pubkey == key)
    }

    pub fn leader_hint_key(&self) -> Option<PublicKey> {
        self.leader_hint
    }

    pub fn election_deadline(&self) -> u64 {
        self.election_deadline
    }

    /// Blocks committed since the last call, in height order, each exactly once.
    pub fn take_committed(&mut self) -> Vec<Block> {
        std::mem::take(&mut self.newly_committed)
    }

    /// Lowest log height changed since the last call, for persistence.
    pub fn take_dirty_from(&mut self) -> Option<u64> {
        self.dirty_from.take()
    }

    /// For a leader: whether a majority has acknowledged it within the
    /// maximum election timeout. Other roles never have quorum contact.
    pub fn has_quorum_contact(&self, now: u64) -> bool {
        if self.role != RaftRole::Leader {
            return false;
        }
        let horizon = now.saturating_sub(self.cfg.election_timeout_max);
        let fresh = self.peers().filter(|p| self.last_ack.get(&p.pubkey).is_some_and(|t| *t >= horizon)).count();
        fresh + 1 >= self.quorum_size()
    }

    // ---- inputs ----

    /// Advances timers. Leaders heartbeat, others may start an election.
    pub fn tick(&mut self, now: u64) -> Vec<Envelope> {
        match self.role {
            RaftRole::Leader => {
                if now >= self.heartbeat_due {
                    self.heartbeat_due = now + self.cfg.heartbeat_interval;
                    self.broadcast_append()
                } else {
                    Vec::new()
                }
            }
            _ if now >= self.election_deadline => self.handle_timeout(now),
            _ => Vec::new(),
        }
    }

    /// Dispatches one consensus message. `Forward` and `AddPeer` are relay
    /// traffic for the layer above and are ignored here.
    pub fn step(&mut self, now: u64, from: PublicKey, msg: Message) -> Vec<Envelope> {
        match msg {
            Message::VoteRequest { term, candidate, last_log_height, last_log_term, last_log_hash } => {
                let resp =
                    self.handle_vote_request(now, from, term, candidate, last_log_height, last_log_term, last_log_hash);
                vec![Envelope { to: from, msg: resp }]
            }
            Message::VoteResponse { term, granted } => self.handle_vote_response(now, from, term, granted),
            Message::AppendEntries { term, leader, prev_height, prev_hash, blocks, leader_commit } => {
                let resp =
                    self.handle_append_entries(now, from, term, leader, prev_height, prev_hash, blocks, leader_commit);
                vec![Envelope { to: from, msg: resp }]
            }
            Message::AppendResponse { term, success, match_height } => {
                self.handle_append_response(now, from, term, success, match_height)
            }
            Message::Forward { .. } | Message::AddPeer { .. } => Vec::new(),
        }
    }

    /// Election timer expiry: start a new term as candidate.
    pub fn handle_timeout(&mut self, now: u64) -> Vec<Envelope> {
        self.reset_election_timer(now);
        if self.role == RaftRole::Leader || !self.is_member() {
            return Vec::new();
        }
        self.current_term += 1;
        self.voted_for = Some(self.me.pubkey);
        self.role = RaftRole::Candidate;
        self.leader_hint = None;
        self.votes = BTreeSet::from([self.me.pubkey]);
        if self.votes.len() >= self.quorum_size() {
            return self.become_leader(now);
        }
        let last = self.last_block();
        let req = Message::VoteRequest {
            term: self.current_term,
            candidate: self.me.pubkey,
            last_log_height: last.height,
            last_log_term: last.term,
            last_log_hash: last.block_hash,
        };
        self.peers().map(|p| Envelope { to: p.pubkey, msg: req.clone() }).collect()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn handle_vote_request(
        &mut self,
        now: u64,
        from: PublicKey,
        term: u64,
        candidate: PublicKey,
        last_log_height: u64,
        last_log_term: u64,
        _last_log_hash: Digest,
    ) -> Message {
        if term > self.current_term {
            self.become_follower(term);
        }
        let last = self.last_block();
        let up_to_date = (last_log_term, last_log_height) >= (last.term, last.height);
        let granted = term == self.current_term
            && candidate == from
            && self.voted_for.is_none_or(|v| v == candidate)
            && up_to_date;
        if granted {
            self.voted_for = Some(candidate);
            self.reset_election_timer(now);
        }
        Message::VoteResponse { term: self.current_term, granted }
    }

    fn handle_vote_response(&mut self, now: u64, from: PublicKey, term: u64, granted: bool) -> Vec<Envelope> {
        if term > self.current_term {
            self.become_follower(term);
            return Vec::new();
        }
        if self.role != RaftRole::Candidate || term != self.current_term || !granted {
            return Vec::new();
        }
        if self.tip.is_member(&from) {
            self.votes.insert(from);
            self.last_ack.insert(from, now);
        }
        if self.votes.len() >= self.quorum_size() {
            self.become_leader(now)
        } else {
            Vec::new()
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn handle_append_entries(
        &mut self,
        now: u64,
        _from: PublicKey,
        term: u64,
        leader: PublicKey,
        prev_height: u64,
        prev_hash: Digest,
        blocks: Vec<Block>,
        leader_commit: u64,
    ) -> Message {
        let reject = |node: &Self, hint: u64| Message::AppendResponse {
            term: node.current_term,
            success: false,
            match_height: hint,
        };
        if term < self.current_term {
            return reject(self, self.last_height());
        }
        if term > self.current_term || self.role != RaftRole::Follower {
            self.become_follower(term);
        }
        self.leader_hint = Some(leader);
        self.reset_election_timer(now);

        let last = self.last_height();
        if prev_height > last {
            return reject(self, last);
        }
        if self.log[prev_height as usize].block_hash != prev_hash {
            return reject(self, prev_height.saturating_sub(1));
        }

        let mut matched = prev_height;
        for block in blocks {
            let h = matched + 1;
            if block.height != h {
                break;
            }
            if h <= self.last_height() {
                if self.log[h as usize].block_hash == block.block_hash {
                    matched = h;
                    continue;
                }
                assert!(h > self.commit_index, "leader asked to overwrite committed height {h}");
                self.truncate_to(h - 1);
            }
            let prev = &self.log[(h - 1) as usize];
            if self.tip.apply_block(prev, &block, SigCheck::Verify).is_err() {
                return reject(self, matched);
            }
            self.log.push(block);
            self.mark_dirty(h);
            matched = h;
        }

        if leader_commit > self.commit_index {
            self.commit_through(leader_commit.min(matched));
        }
        Message::AppendResponse { term: self.current_term, success: true, match_height: matched }
    }

    fn handle_append_response(
        &mut self,
        now: u64,
        from: PublicKey,
        term: u64,
        success: bool,
        match_height: u64,
    ) -> Vec<Envelope> {
        if term > self.current_term {
            self.become_follower(term);
            return Vec::new();
        }
        if self.role != RaftRole::Leader || term < self.current_term || !self.tip.is_member(&from) {
            return Vec::new();
        }
        self.last_ack.insert(from, now);
        let last = self.last_height();
        let mut out = Vec::new();
        if success {
            let m = self.match_height.entry(from).or_insert(0);
            *m = (*m).max(match_height.min(last));
            let m = *m;
            let next = self.next_height.entry(from).or_insert(last + 1);
            *next = (*next).max(m + 1);
            let behind = *next <= last;
            out.extend(self.advance_commit());
            if behind {
                out.push(self.append_for(from));
            }
        } else {
            let next = self.next_height.entry(from).or_insert(last + 1);
            *next = (*next - 1).min(match_height + 1).max(1);
            out.push(self.append_for(from));
        }
        out
    }

    /// Leader only: appends a block of `txs` and replicates it. An empty
    /// list produces no block.
    pub fn propose_block(&mut self, now: u64, txs: Vec<Transaction>) -> Result<Vec<Envelope>, ProposeError> {
        if self.role != RaftRole::Leader {
            return Err(ProposeError::NotLeader { leader_hint: self.leader_hint().cloned() });
        }
        if txs.is_empty() {
            return Ok(Vec::new());
        }
        self.append_local(now, BlockKind::Regular, txs).map_err(ProposeError::Invalid)
    }

    /// Leader only: appends a membership block admitting `node` as a follower.
    pub fn add_peer(&mut self, now: u64, node: NodeId) -> Result<Vec<Envelope>, AddPeerError> {
        if self.role != RaftRole::Leader {
            return Err(AddPeerError::NotLeader { leader_hint: self.leader_hint().cloned() });
        }
        if self.tip.is_member(&node.pubkey) {
            return Err(AddPeerError::DuplicatePeer);
        }
        let uncommitted = &self.log[(self.commit_index + 1) as usize..];
        if uncommitted.iter().any(|b| matches!(b.kind, BlockKind::AddPeer(_))) {
            return Err(AddPeerError::ConfigInProgress);
        }
        if self.log[self.commit_index as usize].term != self.current_term {
            if self.last_block().term != self.current_term {
                // Replicated by the next heartbeat.
                self.append_local(now, BlockKind::Regular, Vec::new()).expect("empty block is valid");
            }
            return Err(AddPeerError::NotReady);
        }
        let last = self.last_height();
        self.next_height.insert(node.pubkey, last + 1);
        self.match_height.insert(node.pubkey, 0);
        self.append_local(now, BlockKind::AddPeer(node), Vec::new()).map_err(|_| AddPeerError::DuplicatePeer)
    }

    /// Leader only: moves `commit_index` to the highest current-term height
    /// held by a majority. Returns commit notifications for followers.
    pub fn advance_commit(&mut self) -> Vec<Envelope> {
        if self.role != RaftRole::Leader {
            return Vec::new();
        }
        let quorum = self.quorum_size();
        let mut target = None;
        for h in (self.commit_index + 1..=self.last_height()).rev() {
            if self.log[h as usize].term != self.current_term {
                break;
            }
            let acks = 1 + self.peers().filter(|p| self.match_height.get(&p.pubkey).is_some_and(|m| *m >= h)).count();
            if acks >= quorum {
                target = Some(h);
                break;
            }
        }
        match target {
            Some(h) => {
                self.commit_through(h);
                self.broadcast_append()
            }
            None => Vec::new(),
        }
    }

    // ---- internals ----

    fn reset_election_timer(&mut self, now: u64) {
        let span = self.rng.gen_range(self.cfg.election_timeout_min..=self.cfg.election_timeout_max);
        self.election_deadline = now + span;
    }

    fn become_follower(&mut self, term: u64) {
        if term > self.current_term {
            self.current_term = term;
            self.voted_for = None;
            self.leader_hint = None;
        }
        self.role = RaftRole::Follower;
        self.votes.clear();
    }

    fn become_leader(&mut self, now: u64) -> Vec<Envelope> {
        self.role = RaftRole::Leader;
        self.leader_hint = Some(self.me.pubkey);
        let next = self.last_height() + 1;
        let peers: Vec<PublicKey> = self.peers().map(|p| p.pubkey).collect();
        self.next_height = peers.iter().map(|p| (*p, next)).collect();
        self.match_height = peers.iter().map(|p| (*p, 0)).collect();
        self.heartbeat_due = now + self.cfg.heartbeat_interval;
        // Earlier-term blocks only commit behind a block of the current term.
        if self.last_height() > self.commit_index {
            return self.append_local(now, BlockKind::Regular, Vec::new()).expect("empty block is valid");
        }
        let mut out = self.broadcast_append();
        out.extend(self.advance_commit());
        out
    }

    fn append_local(
        &mut self,
        now: u64,
        kind: BlockKind,
        txs: Vec<Transaction>,
    ) -> Result<Vec<Envelope>, BlockRejection> {
        let prev = self.last_block();
        let block = Block::next(prev, self.current_term, now, self.me.pubkey, kind, txs);
        let prev = self.last_block().clone();
        self.tip.apply_block(&prev, &block, SigCheck::Verify)?;
        let h = block.height;
        self.log.push(block);
        self.mark_dirty(h);
        let mut out = self.broadcast_append();
        out.extend(self.advance_commit());
        Ok(out)
    }

    fn broadcast_append(&mut self) -> Vec<Envelope> {
        let peers: Vec<PublicKey> = self.peers().map(|p| p.pubkey).collect();
        peers.into_iter().map(|p| self.append_for(p)).collect()
    }

    fn append_for(&mut self, peer: PublicKey) -> Envelope {
        let last = self.last_height();
        let next = self.next_height.entry(peer).or_insert(last + 1);
        *next = (*next).clamp(1, last + 1);
        let next = *next;
        let end = last.min(next + self.cfg.max_blocks_per_append as u64 - 1);
        let prev = &self.log[(next - 1) as usize];
        let blocks = if next <= end { self.log[next as usize..=end as usize].to_vec() } else { Vec::new() };
        Envelope {
            to: peer,
            msg: Message::AppendEntries {
                term: self.current_term,
                leader: self.me.pubkey,
                prev_height: prev.height,
                prev_hash: prev.block_hash,
                blocks,
                leader_commit: self.commit_index,
            },
        }
    }

    fn truncate_to(&mut self, height: u64) {
        debug_assert!(height >= self.commit_index);
        self.log.truncate(height as usize + 1);
        let mut state = self.committed.clone();
        for h in (self.commit_index + 1)..=height {
            state
                .apply_block(&self.log[(h - 1) as usize], &self.log[h as usize], SigCheck::Skip)
                .expect("replaying verified blocks");
        }
        self.tip = state;
        self.mark_dirty(height + 1);
    }

    fn commit_through(&mut self, height: u64) {
        let height = height.min(self.last_height());
        while self.commit_index < height {
            let h = (self.commit_index + 1) as usize;
            self.committed
                .apply_block(&self.log[h - 1], &self.log[h], SigCheck::Skip)
                .expect("committed blocks were verified on append");
            self.newly_committed.push(self.log[h].clone());
            self.commit_index += 1;
        }
    }

    fn mark_dirty(&mut self, h: u64) {
        self.dirty_from = Some(self.dirty_from.map_or(h, |d| d.min(h)));
    }
}
