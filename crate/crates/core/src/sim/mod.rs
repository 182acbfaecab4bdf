//! Deterministic discrete-event simulation of a cluster of replicas.
//!
//! Time is virtual and measured in milliseconds. Every random choice (message
//! latency, drop decisions, client routing, election timers) comes from RNGs
//! seeded by [`SimConfig::seed`], so equal configurations produce identical
//! traces.

mod check;
mod trace;
mod workload;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::distributions::Alphanumeric;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use check::{check_liveness, check_trace, contains, Liveness, Property, TraceViolation};
pub use trace::{Event, Trace};
pub use workload::sweep_config;

use crate::consensus::{Envelope, HardState, Message, RaftConfig, RaftNode};
use crate::contract::Role;
use crate::crypto::{sha256, sha256_parts, Keypair, PublicKey};
use crate::ledger::{Block, ChainState, Payload, SigCheck, Transaction};
use crate::node_id::NodeId;
use crate::privacy::{PersonalRecord, PersonalStore};
use crate::replica::{ReceiptStatus, Replica};

/// Interval between timer ticks delivered to every live node.
pub const TICK_MS: u64 = 5;
/// Interval between client wake-ups.
pub const CLIENT_MS: u64 = 10;
/// Name of the genesis admin account in workloads.
pub const ADMIN: &str = "admin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Fault {
    /// Messages between the two sides are lost until `Heal`.
    Partition {
        a: Vec<usize>,
        b: Vec<usize>,
    },
    /// Ends partitions and message loss.
    Heal,
    Crash {
        node: usize,
    },
    /// Crashes whichever node currently leads, if any.
    CrashLeader,
    /// Restarts a crashed node from its persisted term, vote and log.
    Restart {
        node: usize,
    },
    Drop {
        probability: f64,
        duration: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledFault {
    pub at: u64,
    pub fault: Fault,
}

/// A client operation. Accounts are names; keys derive from the seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientOp {
    GrantRole {
        by: String,
        target: String,
        role: Role,
    },
    CreateNeed {
        by: String,
        kind: String,
        amount: u64,
        unit: String,
    },
    CreateSupport {
        by: String,
        kind: String,
        amount: u64,
        unit: String,
        shipping: String,
    },
    ApproveNeed {
        by: String,
        need_id: u64,
    },
    ApproveSupport {
        by: String,
        support_id: u64,
    },
    /// Admits simulated node `node`, which must be one of the spare nodes.
    AddPeer {
        node: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledOp {
    pub at: u64,
    pub op: ClientOp,
}

fn default_latency_min() -> u64 {
    1
}
fn default_latency_max() -> u64 {
    20
}
fn default_time_cap() -> u64 {
    60_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub node_count: usize,
    /// Nodes started outside the membership, to be admitted by `AddPeer`.
    #[serde(default)]
    pub spare_nodes: usize,
    pub seed: u64,
    #[serde(default = "default_latency_min")]
    pub latency_min: u64,
    #[serde(default = "default_latency_max")]
    pub latency_max: u64,
    #[serde(default)]
    pub faults: Vec<ScheduledFault>,
    #[serde(default)]
    pub workload: Vec<ScheduledOp>,
    #[serde(default = "default_time_cap")]
    pub time_cap: u64,
}

impl SimConfig {
    pub fn new(node_count: usize, seed: u64) -> Self {
        SimConfig {
            node_count,
            spare_nodes: 0,
            seed,
            latency_min: default_latency_min(),
            latency_max: default_latency_max(),
            faults: Vec::new(),
            workload: Vec::new(),
            time_cap: default_time_cap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("node_count must be at least 1")]
    NoNodes,
    #[error("fault or op references node {0}, which does not exist")]
    UnknownNode(usize),
    #[error("latency_min exceeds latency_max")]
    Latency,
}

/// Deterministic key for a named workload account.
pub fn account_key(seed: u64, name: &str) -> Keypair {
    Keypair::from_seed(sha256_parts(&[b"rmsd-sim-account", &seed.to_be_bytes(), name.as_bytes()]).0)
}

pub fn node_ids(seed: u64, n: usize) -> Vec<NodeId> {
    (0..n)
        .map(|i| {
            let k =
                Keypair::from_seed(sha256_parts(&[b"rmsd-sim-node", &seed.to_be_bytes(), &(i as u64).to_be_bytes()]).0);
            NodeId::new(k.public(), "sim", 10_000 + i as u16, 20_000 + i as u16)
        })
        .collect()
}

pub fn genesis_for(cfg: &SimConfig) -> Block {
    let ids = node_ids(cfg.seed, cfg.node_count);
    Block::genesis(account_key(cfg.seed, ADMIN).public(), ids, 0)
}

#[derive(Debug)]
pub struct SimOutcome {
    pub trace: Trace,
    pub time_cap_exceeded: bool,
    /// Final committed chains per node, crashed nodes included.
    pub chains: Vec<Vec<Block>>,
    /// Private stores, per node, as they stood at the end.
    pub stores: Vec<PersonalStore>,
}

pub fn run_sim(cfg: &SimConfig) -> Result<SimOutcome, SimError> {
    Sim::new(cfg.clone())?.run()
}

// ---- event queue ----

enum Item {
    Tick { node: usize, incarnation: u32 },
    Deliver { from: usize, to: usize, msg: Message },
    Fault(usize),
    Client,
}

struct Queued {
    at: u64,
    tie: u64,
    seq: u64,
    item: Item,
}

impl PartialEq for Queued {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Queued {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, o: &Self) -> Ordering {
        (o.at, o.tie, o.seq).cmp(&(self.at, self.tie, self.seq))
    }
}

// ---- simulated nodes and client ----

struct SimNode {
    replica: Option<Replica>,
    persisted: (HardState, Vec<Block>),
    store: PersonalStore,
    incarnation: u32,
    led_term: u64,
    /// Committed chain and the state replayed from it, kept by the harness
    /// independently of the replica.
    chain: Vec<Block>,
    applied: ChainState,
}

enum OpState {
    Scheduled,
    Active { next_try: u64 },
    Done,
}

struct OpSlot {
    at: u64,
    op: ClientOp,
    tx: Option<Transaction>,
    personal: Option<([u8; 32], PersonalRecord, Vec<String>)>,
    stored_at: BTreeSet<usize>,
    state: OpState,
}

struct Sim {
    cfg: SimConfig,
    raft_cfg: RaftConfig,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Queued>,
    net_rng: ChaCha8Rng,
    client_rng: ChaCha8Rng,
    ids: Vec<NodeId>,
    index: BTreeMap<PublicKey, usize>,
    genesis: Block,
    nodes: Vec<SimNode>,
    partition: Option<(BTreeSet<usize>, BTreeSet<usize>)>,
    drop: Option<(f64, u64)>,
    ops: Vec<OpSlot>,
    nonces: BTreeMap<PublicKey, u64>,
    seen_blocks: BTreeSet<u64>,
    events: Vec<Event>,
    faults_applied: usize,
    healed_at: u64,
    leader_at: Option<u64>,
    workload_done_at: Option<u64>,
}

impl Sim {
    fn new(cfg: SimConfig) -> Result<Self, SimError> {
        if cfg.node_count == 0 {
            return Err(SimError::NoNodes);
        }
        if cfg.latency_min > cfg.latency_max {
            return Err(SimError::Latency);
        }
        let total = cfg.node_count + cfg.spare_nodes;
        for f in &cfg.faults {
            match &f.fault {
                Fault::Partition { a, b } => {
                    if let Some(n) = a.iter().chain(b).find(|n| **n >= total) {
                        return Err(SimError::UnknownNode(*n));
                    }
                }
                Fault::Crash { node } | Fault::Restart { node } if *node >= total => {
                    return Err(SimError::UnknownNode(*node));
                }
                _ => {}
            }
        }
        for o in &cfg.workload {
            if let ClientOp::AddPeer { node } = o.op {
                if node >= total || node < cfg.node_count {
                    return Err(SimError::UnknownNode(node));
                }
            }
        }

        let ids = node_ids(cfg.seed, total);
        let genesis = genesis_for(&cfg);
        let raft_cfg = RaftConfig::default();
        let nodes = ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let raft = RaftNode::new(id.clone(), genesis.clone(), raft_cfg, node_seed(cfg.seed, i, 0), 0)
                    .expect("simulated genesis is valid");
                SimNode {
                    replica: Some(Replica::new(raft)),
                    persisted: (HardState::default(), vec![genesis.clone()]),
                    store: PersonalStore::in_memory(),
                    incarnation: 0,
                    led_term: 0,
                    chain: vec![genesis.clone()],
                    applied: ChainState::from_genesis(&genesis).expect("simulated genesis is valid"),
                }
            })
            .collect();
        let ops: Vec<OpSlot> = cfg
            .workload
            .iter()
            .map(|o| OpSlot {
                at: o.at,
                op: o.op.clone(),
                tx: None,
                personal: None,
                stored_at: BTreeSet::new(),
                state: OpState::Scheduled,
            })
            .collect();
        let index = ids.iter().enumerate().map(|(i, id)| (id.pubkey, i)).collect();
        Ok(Sim {
            net_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6e65_7477_6f72_6b00),
            client_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x636c_6965_6e74_0000),
            raft_cfg,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            ids,
            index,
            genesis,
            nodes,
            partition: None,
            drop: None,
            ops,
            nonces: BTreeMap::new(),
            seen_blocks: BTreeSet::new(),
            events: Vec::new(),
            faults_applied: 0,
            healed_at: 0,
            leader_at: None,
            workload_done_at: None,
            cfg,
        })
    }

    fn push(&mut self, at: u64, item: Item) {
        let tie = self.net_rng.next_u64();
        self.seq += 1;
        self.queue.push(Queued { at, tie, seq: self.seq, item });
    }

    fn run(mut self) -> Result<SimOutcome, SimError> {
        self.events.push(Event::Start {
            seed: self.cfg.seed,
            nodes: self.ids.len(),
            members: self.cfg.node_count,
            genesis: self.genesis.block_hash,
        });
        self.events.push(Event::BlockBytes {
            height: 0,
            hash: self.genesis.block_hash,
            hex: hex::encode(self.genesis.canonical_bytes()),
        });
        self.seen_blocks.insert(0);
        for i in 0..self.nodes.len() {
            self.push(TICK_MS, Item::Tick { node: i, incarnation: 0 });
        }
        for i in 0..self.cfg.faults.len() {
            let at = self.cfg.faults[i].at;
            self.push(at, Item::Fault(i));
        }
        self.healed_at = self.cfg.faults.iter().map(|f| f.at).max().unwrap_or(0);
        self.push(0, Item::Client);

        let mut capped = false;
        while let Some(q) = self.queue.pop() {
            if q.at > self.cfg.time_cap {
                capped = true;
                self.now = self.cfg.time_cap;
                break;
            }
            self.now = q.at;
            match q.item {
                Item::Tick { node, incarnation } => self.on_tick(node, incarnation),
                Item::Deliver { from, to, msg } => self.on_deliver(from, to, msg),
                Item::Fault(i) => self.on_fault(i),
                Item::Client => {
                    self.on_client();
                    if self.quiescent() {
                        // Quiescence implies a leader the whole cluster follows.
                        self.leader_at.get_or_insert(self.now);
                        break;
                    }
                    self.push(self.now + CLIENT_MS, Item::Client);
                }
            }
        }
        Ok(self.finish(capped))
    }

    fn on_tick(&mut self, node: usize, incarnation: u32) {
        let n = &mut self.nodes[node];
        if n.incarnation != incarnation {
            return;
        }
        let Some(r) = n.replica.as_mut() else { return };
        let before = r.raft().current_term();
        r.tick(self.now);
        let after = r.raft().current_term();
        if after > before && r.raft().voted_for() == Some(r.id().pubkey) {
            self.events.push(Event::Timeout { t: self.now, node, term: after });
        }
        self.flush(node);
        self.push(self.now + TICK_MS, Item::Tick { node, incarnation });
    }

    fn on_deliver(&mut self, from: usize, to: usize, msg: Message) {
        let kind = msg.kind().to_string();
        if self.nodes[to].replica.is_none() {
            self.events.push(Event::Drop { t: self.now, from, to, kind, reason: "crashed".into() });
            return;
        }
        if self.cut(from, to) {
            self.events.push(Event::Drop { t: self.now, from, to, kind, reason: "partition".into() });
            return;
        }
        self.events.push(Event::Deliver { t: self.now, from, to, kind, term: msg.term() });
        let key = self.ids[from].pubkey;
        let r = self.nodes[to].replica.as_mut().expect("checked above");
        r.step(self.now, key, msg);
        self.flush(to);
    }

    fn cut(&self, a: usize, b: usize) -> bool {
        match &self.partition {
            Some((x, y)) => (x.contains(&a) && y.contains(&b)) || (y.contains(&a) && x.contains(&b)),
            None => false,
        }
    }

    fn on_fault(&mut self, i: usize) {
        let fault = self.cfg.faults[i].fault.clone();
        self.faults_applied += 1;
        let desc = serde_json::to_string(&fault).expect("faults serialize");
        self.events.push(Event::Fault { t: self.now, fault: desc });
        match fault {
            Fault::Partition { a, b } => {
                self.partition = Some((a.into_iter().collect(), b.into_iter().collect()));
            }
            Fault::Heal => {
                self.partition = None;
                self.drop = None;
            }
            Fault::Crash { node } => self.crash(node),
            Fault::CrashLeader => {
                let leader = self.nodes.iter().position(|n| n.replica.as_ref().is_some_and(|r| r.raft().is_leader()));
                if let Some(node) = leader {
                    self.crash(node);
                }
            }
            Fault::Restart { node } => self.restart(node),
            Fault::Drop { probability, duration } => {
                self.drop = Some((probability.clamp(0.0, 1.0), self.now + duration));
            }
        }
    }

    fn crash(&mut self, node: usize) {
        let n = &mut self.nodes[node];
        if let Some(r) = n.replica.take() {
            n.persisted = (r.raft().hard_state(), r.raft().log().to_vec());
            n.incarnation += 1;
        }
    }

    fn restart(&mut self, node: usize) {
        if self.nodes[node].replica.is_some() {
            return;
        }
        let n = &mut self.nodes[node];
        let (hard, log) = n.persisted.clone();
        let seed = node_seed(self.cfg.seed, node, n.incarnation);
        let raft = RaftNode::restore(self.ids[node].clone(), self.raft_cfg, seed, self.now, hard, log)
            .expect("persisted log was valid when written");
        n.replica = Some(Replica::new(raft));
        n.led_term = 0;
        let incarnation = n.incarnation;
        self.push(self.now + TICK_MS, Item::Tick { node, incarnation });
    }

    /// Moves a node's outputs into the network and the trace.
    fn flush(&mut self, node: usize) {
        let (out, committed, leader) = {
            let led_term = self.nodes[node].led_term;
            let r = self.nodes[node].replica.as_mut().expect("flush on live node");
            let leader = if r.raft().is_leader() && r.raft().current_term() != led_term {
                Some((r.raft().current_term(), r.raft().log().iter().map(|b| b.block_hash).collect::<Vec<_>>()))
            } else {
                None
            };
            (r.drain_outbox(), r.take_committed(), leader)
        };
        if let Some((term, log)) = leader {
            self.nodes[node].led_term = term;
            self.events.push(Event::BecameLeader { t: self.now, node, term, log });
        }
        for b in committed {
            let n = &mut self.nodes[node];
            let prev = n.chain.last().expect("chain holds genesis");
            n.applied.apply_block(prev, &b, SigCheck::Skip).expect("committed blocks replay");
            self.events.push(Event::Commit {
                t: self.now,
                node,
                height: b.height,
                hash: b.block_hash,
                term: b.term,
                state: n.applied.contract.digest(),
            });
            if self.seen_blocks.insert(b.height) {
                self.events.push(Event::BlockBytes {
                    height: b.height,
                    hash: b.block_hash,
                    hex: hex::encode(b.canonical_bytes()),
                });
            }
            n.chain.push(b);
        }
        for Envelope { to, msg } in out {
            let Some(&dst) = self.index.get(&to) else { continue };
            let kind = msg.kind().to_string();
            let term = msg.term();
            if let Some((p, until)) = self.drop {
                if self.now >= until {
                    self.drop = None;
                } else if self.net_rng.gen_bool(p) {
                    self.events.push(Event::Drop { t: self.now, from: node, to: dst, kind, reason: "loss".into() });
                    continue;
                }
            }
            self.events.push(Event::Send { t: self.now, from: node, to: dst, kind, term });
            let delay = self.net_rng.gen_range(self.cfg.latency_min..=self.cfg.latency_max);
            self.push(self.now + delay, Item::Deliver { from: node, to: dst, msg });
        }
    }

    fn live_members(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| {
                self.nodes[i].replica.as_ref().is_some_and(|r| r.committed_state().is_member(&self.ids[i].pubkey))
            })
            .collect()
    }

    fn on_client(&mut self) {
        if self.leader_at.is_none() && self.faults_applied == self.cfg.faults.len() {
            let led =
                self.nodes.iter().any(|n| n.replica.as_ref().is_some_and(|r| r.raft().has_quorum_contact(self.now)));
            if led {
                self.leader_at = Some(self.now);
            }
        }
        // Operations due in the same wake go to the same node, the way one
        // client session would submit them.
        let live = self.live_members();
        let target = (!live.is_empty()).then(|| live[self.client_rng.gen_range(0..live.len())]);
        for i in 0..self.ops.len() {
            let due = match self.ops[i].state {
                OpState::Scheduled => self.ops[i].at <= self.now,
                OpState::Active { next_try } => next_try <= self.now,
                OpState::Done => false,
            };
            if !due {
                continue;
            }
            let Some(node) = target else {
                self.ops[i].state = OpState::Active { next_try: self.now + 100 };
                continue;
            };
            let done = self.attempt(i, node);
            self.ops[i].state = if done {
                OpState::Done
            } else {
                OpState::Active { next_try: self.now + self.client_rng.gen_range(100..=250) }
            };
        }
        if let Some(node) = target {
            self.flush(node);
        }
        if self.workload_done_at.is_none() && self.ops.iter().all(|o| matches!(o.state, OpState::Done)) {
            self.workload_done_at = Some(self.now);
        }
    }

    /// One client attempt at `node`. Returns whether the op is finished.
    fn attempt(&mut self, i: usize, node: usize) -> bool {
        let seed = self.cfg.seed;
        let op = self.ops[i].op.clone();
        if let ClientOp::AddPeer { node: new } = op {
            let id = self.ids[new].clone();
            let r = self.nodes[node].replica.as_mut().expect("live");
            if r.committed_state().is_member(&id.pubkey) {
                self.done(i, "committed".into());
                return true;
            }
            let _ = r.request_add_peer(self.now, id);
            self.events.push(Event::Submit { t: self.now, node, op: i, tx_id: None });
            return false;
        }

        if let Some(tx) = &self.ops[i].tx {
            let r = self.nodes[node].replica.as_ref().expect("live");
            if let Some(rc) = r.receipt(&tx.tx_id) {
                if let ReceiptStatus::Committed { .. } = rc.status {
                    self.done(i, "committed".into());
                    return true;
                }
            }
        } else {
            let state = &self.nodes[node].replica.as_ref().expect("live").committed_state().contract;
            let ready = match &op {
                ClientOp::ApproveNeed { by, need_id } => {
                    (state.show_needs().len() as u64) > *need_id
                        && state.get_user_auth(&account_key(seed, by).public()) == Role::Checker
                }
                ClientOp::ApproveSupport { by, support_id } => {
                    (state.show_supports().len() as u64) > *support_id
                        && state.get_user_auth(&account_key(seed, by).public()) == Role::Checker
                }
                _ => true,
            };
            if !ready {
                return false;
            }
            self.build_tx(i);
        }

        if let Some((secret, record, fields)) = self.ops[i].personal.clone() {
            if self.ops[i].stored_at.insert(node) {
                let mut record = record;
                record.collected_at = self.now;
                self.nodes[node].store.put_with_secret(&secret, record).expect("sentinel record is valid");
                self.events.push(Event::Personal { t: self.now, node, op: i, fields });
            }
        }
        let tx = self.ops[i].tx.clone().expect("built above");
        self.events.push(Event::Submit { t: self.now, node, op: i, tx_id: Some(tx.tx_id) });
        let r = self.nodes[node].replica.as_mut().expect("live");
        match r.submit(self.now, tx).status {
            ReceiptStatus::Committed { .. } => {
                self.done(i, "committed".into());
                true
            }
            ReceiptStatus::Rejected { code, .. } => {
                self.done(i, format!("rejected:{code}"));
                true
            }
            ReceiptStatus::Pending => false,
        }
    }

    fn build_tx(&mut self, i: usize) {
        let seed = self.cfg.seed;
        let key = |name: &str| account_key(seed, name);
        let personal = |rng: &mut ChaCha8Rng, by: &Keypair| {
            let mut secret = [0u8; 32];
            rng.fill_bytes(&mut secret);
            let fields: Vec<String> =
                (0..3).map(|_| (0..32).map(|_| char::from(rng.sample(Alphanumeric))).collect()).collect();
            let record = PersonalRecord {
                name: fields[0].clone(),
                phone: fields[1].clone(),
                address: fields[2].clone(),
                notes: String::new(),
                collected_at: 0,
                collected_by: by.public(),
            };
            (secret, record, fields)
        };
        let (signer, payload, p) = match &self.ops[i].op {
            ClientOp::GrantRole { by, target, role } => {
                (key(by), Payload::SetUser { target: key(target).public(), role: *role }, None)
            }
            ClientOp::CreateNeed { by, kind, amount, unit } => {
                let k = key(by);
                let p = personal(&mut self.client_rng, &k);
                let payload = Payload::CreateNeed {
                    kind: kind.clone(),
                    amount: *amount,
                    unit: unit.clone(),
                    personal_ref: sha256(&p.0),
                };
                (k, payload, Some(p))
            }
            ClientOp::CreateSupport { by, kind, amount, unit, shipping } => {
                let k = key(by);
                let p = personal(&mut self.client_rng, &k);
                let payload = Payload::CreateSupport {
                    kind: kind.clone(),
                    amount: *amount,
                    unit: unit.clone(),
                    shipping: shipping.clone(),
                    personal_ref: sha256(&p.0),
                };
                (k, payload, Some(p))
            }
            ClientOp::ApproveNeed { by, need_id } => (key(by), Payload::ApproveNeed { need_id: *need_id }, None),
            ClientOp::ApproveSupport { by, support_id } => {
                (key(by), Payload::ApproveSupport { support_id: *support_id }, None)
            }
            ClientOp::AddPeer { .. } => unreachable!("membership ops carry no transaction"),
        };
        let nonce = self.nonces.entry(signer.public()).or_insert(0);
        let tx = Transaction::sign(&signer, *nonce, payload);
        *nonce += 1;
        self.ops[i].tx = Some(tx);
        self.ops[i].personal = p;
    }

    fn done(&mut self, op: usize, outcome: String) {
        self.events.push(Event::OpDone { t: self.now, op, outcome });
    }

    /// All work finished, no faults pending, and every live node has
    /// committed the leader's whole log.
    fn quiescent(&self) -> bool {
        if !self.ops.iter().all(|o| matches!(o.state, OpState::Done)) || self.faults_applied < self.cfg.faults.len() {
            return false;
        }
        let live: Vec<&Replica> = self.nodes.iter().filter_map(|n| n.replica.as_ref()).collect();
        let Some(leader) = live.iter().find(|r| r.raft().is_leader()) else { return false };
        let top = leader.raft().last_height();
        leader.raft().commit_index() == top
            && live
                .iter()
                .filter(|r| leader.raft().members().iter().any(|m| m.pubkey == r.id().pubkey))
                .all(|r| r.raft().commit_index() == top && r.raft().last_height() == top)
    }

    fn finish(mut self, capped: bool) -> SimOutcome {
        let logs: Vec<Vec<_>> = self
            .nodes
            .iter()
            .map(|n| match &n.replica {
                Some(r) => r.raft().log().iter().map(|b| b.block_hash).collect(),
                None => n.persisted.1.iter().map(|b| b.block_hash).collect(),
            })
            .collect();
        let commit = self
            .nodes
            .iter()
            .map(|n| match &n.replica {
                Some(r) => r.raft().commit_index(),
                None => n.persisted.0.commit_index,
            })
            .collect();
        self.events.push(Event::End {
            t: self.now,
            time_cap_exceeded: capped,
            healed_at: self.healed_at,
            leader_at: self.leader_at,
            last_op_at: self.ops.iter().map(|o| o.at).max().unwrap_or(0),
            workload_done_at: self.workload_done_at,
            logs,
            commit,
        });
        let chains = self.nodes.iter().map(|n| n.chain.clone()).collect();
        let stores = self.nodes.into_iter().map(|n| n.store).collect();
        SimOutcome { trace: Trace { events: self.events }, time_cap_exceeded: capped, chains, stores }
    }
}

fn node_seed(seed: u64, node: usize, incarnation: u32) -> u64 {
    let d = sha256_parts(&[
        b"rmsd-sim-timer",
        &seed.to_be_bytes(),
        &(node as u64).to_be_bytes(),
        &incarnation.to_be_bytes(),
    ]);
    u64::from_be_bytes(d.0[..8].try_into().expect("8 bytes"))
}
