//! A running node: storage, consensus transport, the replica driver loop and
//! the HTTP server, all inside one tokio runtime.

use std::collections::BTreeMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};
use rmsd_core::consensus::{RaftConfig, RaftNode, StaticNodes};
use rmsd_core::crypto::{Digest, Keypair, PublicKey};
use rmsd_core::ledger::{Block, BlockKind, BlockRejection, Violation};
use rmsd_core::node_id::NodeId;
use rmsd_core::privacy::{PersonalStore, PrivacyError};
use rmsd_core::replica::{ReceiptStatus, Replica};
use thiserror::Error;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;

use crate::storage::{write_atomic, Storage, StorageError};
use crate::transport::Transport;

pub const STATIC_NODES_FILE: &str = "static-nodes.json";

const DRIVER_TICK: Duration = Duration::from_millis(5);
const INBOUND_QUEUE: usize = 4096;
/// Inbound messages handled per lock acquisition.
const INBOUND_BATCH: usize = 64;
const POLL: Duration = Duration::from_millis(10);

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub data_dir: PathBuf,
    /// Trusted peers and, with `genesis_admin`, the source of a new genesis.
    /// Re-rendered from committed membership after every change. Defaults
    /// to `static-nodes.json` in the data directory.
    pub static_nodes: Option<PathBuf>,
    pub listen: SocketAddr,
    pub raft_listen: SocketAddr,
    /// Host written into this node's identity when it is not already known
    /// from the static-nodes file or the chain.
    pub advertise_host: Option<String>,
    pub genesis_admin: Option<PublicKey>,
    /// Seeds key generation and election jitter.
    pub seed: Option<u64>,
    /// Refuse applications that are not signed by the applicant.
    pub require_signed_applications: bool,
    pub raft: RaftConfig,
    /// How long a write waits for a usable leader before answering NoQuorum.
    pub quorum_wait: Duration,
    /// How long a membership change may take to commit.
    pub commit_wait: Duration,
}

impl NodeConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        let local = SocketAddr::new(IpAddr::V4(Ipv4Addr::LOCALHOST), 0);
        NodeConfig {
            data_dir: data_dir.into(),
            static_nodes: None,
            listen: local,
            raft_listen: local,
            advertise_host: None,
            genesis_admin: None,
            seed: None,
            require_signed_applications: false,
            raft: RaftConfig::default(),
            quorum_wait: Duration::from_secs(3),
            commit_wait: Duration::from_secs(20),
        }
    }

    pub fn static_nodes_path(&self) -> PathBuf {
        self.static_nodes.clone().unwrap_or_else(|| self.data_dir.join(STATIC_NODES_FILE))
    }
}

#[derive(Debug, Error)]
pub enum NodeError {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("privacy store: {0}")]
    Privacy(#[from] PrivacyError),
    #[error("static nodes: {0}")]
    StaticNodes(String),
    #[error("no genesis.bin in the data directory; pass --static-nodes and --genesis-admin to create one")]
    NoGenesis,
    #[error("genesis: {0}")]
    Genesis(#[from] BlockRejection),
    #[error("stored chain does not start with genesis.bin")]
    GenesisMismatch,
    #[error("stored chain is invalid: {0}")]
    Chain(#[from] Violation),
    #[error("bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
}

/// Mutable node state. Every field is touched only under the core mutex.
pub struct Core {
    pub replica: Replica,
    pub store: PersonalStore,
    pub rng: StdRng,
    storage: Storage,
    transport: Option<Transport>,
    static_path: PathBuf,
    trusted: BTreeMap<PublicKey, NodeId>,
    rendered: Vec<NodeId>,
    /// Application tx id to the personal reference written for it.
    applications: BTreeMap<Digest, Digest>,
    last_hard: rmsd_core::consensus::HardState,
}

impl Core {
    fn accepts(&self, from: &PublicKey) -> bool {
        self.trusted.contains_key(from)
            || self.replica.raft().tip_state().is_member(from)
            || self.replica.committed_state().is_member(from)
    }

    fn raft_addr(&self, key: &PublicKey) -> Option<String> {
        let raft = self.replica.raft();
        raft.tip_state()
            .members
            .iter()
            .chain(&raft.committed_state().members)
            .chain(self.trusted.values())
            .find(|n| &n.pubkey == key)
            .map(NodeId::raft_addr)
    }

    /// Tracks the personal record written for a pending application so it
    /// can be rolled back if the transaction is rejected.
    pub fn track_application(&mut self, tx_id: Digest, personal_ref: Digest) {
        self.applications.insert(tx_id, personal_ref);
    }

    /// Persists, sends and reconciles after the replica has consumed input.
    fn settle(&mut self, now: u64) {
        if let Some(from) = self.replica.take_dirty_from() {
            if let Err(e) = self.storage.write_log_from(self.replica.raft().log(), from) {
                tracing::error!(error = %e, "failed to persist log");
            }
        }
        let hard = self.replica.raft().hard_state();
        if hard != self.last_hard {
            if let Err(e) = self.storage.save_hard_state(&hard) {
                tracing::error!(error = %e, "failed to persist raft state");
            }
            self.last_hard = hard;
        }
        let outbox = self.replica.drain_outbox();
        if let Some(t) = &self.transport {
            for env in outbox {
                match self.raft_addr(&env.to) {
                    Some(addr) => t.send(env.to, &addr, &env.msg),
                    None => tracing::debug!(to = %env.to, "no address for peer"),
                }
            }
        }
        let committed = self.replica.take_committed();
        if committed.iter().any(|b| matches!(b.kind, BlockKind::AddPeer(_))) {
            self.render_static_nodes();
        }
        if !self.applications.is_empty() {
            self.reconcile_applications(now);
        }
    }

    fn render_static_nodes(&mut self) {
        let members = self.replica.committed_state().members.clone();
        if members == self.rendered {
            return;
        }
        for m in &members {
            self.trusted.insert(m.pubkey, m.clone());
        }
        let text = match StaticNodes::new(members.clone()) {
            Ok(s) => s.render(),
            Err(e) => {
                tracing::error!(error = %e, "committed membership cannot be rendered");
                return;
            }
        };
        match write_atomic(&self.static_path, text.as_bytes()) {
            Ok(()) => {
                tracing::info!(members = members.len(), path = %self.static_path.display(), "static nodes updated");
                self.rendered = members;
            }
            Err(e) => tracing::error!(error = %e, "failed to write static nodes"),
        }
    }

    fn reconcile_applications(&mut self, now: u64) {
        let mut done = Vec::new();
        for (tx_id, personal_ref) in &self.applications {
            match self.replica.receipt(tx_id).map(|r| r.status) {
                Some(ReceiptStatus::Committed { .. }) => done.push(*tx_id),
                Some(ReceiptStatus::Rejected { .. }) | None => {
                    if let Err(e) = self.store.rollback(now, personal_ref) {
                        tracing::error!(error = %e, "personal data rollback failed");
                    }
                    done.push(*tx_id);
                }
                Some(ReceiptStatus::Pending) => {}
            }
        }
        for tx_id in done {
            self.applications.remove(&tx_id);
        }
    }
}

/// State shared by the driver loop and the HTTP handlers.
pub struct Shared {
    core: Mutex<Core>,
    key: Keypair,
    id: NodeId,
    stopped: AtomicBool,
    pub require_signed_applications: bool,
    pub quorum_wait: Duration,
    pub commit_wait: Duration,
}

impl Shared {
    pub fn key(&self) -> &Keypair {
        &self.key
    }

    pub fn id(&self) -> &NodeId {
        &self.id
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped.load(Ordering::SeqCst)
    }

    pub fn lock(&self) -> MutexGuard<'_, Core> {
        self.core.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Runs `f` on the core, then persists and flushes whatever it caused.
    pub fn with_core<R>(&self, f: impl FnOnce(&mut Core, u64) -> R) -> R {
        let now = now_ms();
        let mut core = self.lock();
        let r = f(&mut core, now);
        core.settle(now);
        r
    }

    /// Waits until a write submitted here can be expected to commit.
    pub async fn wait_quorum(&self) -> bool {
        let deadline = tokio::time::Instant::now() + self.quorum_wait;
        loop {
            if self.lock().replica.has_quorum(now_ms()) {
                return true;
            }
            if tokio::time::Instant::now() >= deadline || self.is_stopped() {
                return false;
            }
            tokio::time::sleep(POLL).await;
        }
    }

    /// Waits until `key` is a member of the committed membership.
    pub async fn wait_member(&self, key: &PublicKey) -> bool {
        let deadline = tokio::time::Instant::now() + self.commit_wait;
        loop {
            if self.lock().replica.committed_state().is_member(key) {
                return true;
            }
            if tokio::time::Instant::now() >= deadline || self.is_stopped() {
                return false;
            }
            tokio::time::sleep(POLL).await;
        }
    }
}

/// Handle to a running node. Dropping it stops the background tasks.
pub struct Node {
    shared: Arc<Shared>,
    api_addr: SocketAddr,
    raft_addr: SocketAddr,
    driver: JoinHandle<()>,
    server: JoinHandle<()>,
    stop_server: Option<oneshot::Sender<()>>,
}

fn read_static_nodes(cfg: &NodeConfig) -> Result<Option<StaticNodes>, NodeError> {
    let path = cfg.static_nodes_path();
    match std::fs::read_to_string(&path) {
        Ok(text) => {
            StaticNodes::parse(&text).map(Some).map_err(|e| NodeError::StaticNodes(format!("{}: {e}", path.display())))
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(NodeError::StaticNodes(format!("{}: {e}", path.display()))),
    }
}

/// Finds this node's identity: the chain is authoritative, then the
/// static-nodes file, then the configured addresses.
fn resolve_identity(
    key: &PublicKey,
    log: &[Block],
    trusted: &BTreeMap<PublicKey, NodeId>,
    cfg: &NodeConfig,
    api: SocketAddr,
    raft: SocketAddr,
) -> NodeId {
    let from_chain = log.iter().rev().find_map(|b| match &b.kind {
        BlockKind::Genesis { members, .. } => members.iter().find(|m| &m.pubkey == key).cloned(),
        BlockKind::AddPeer(n) if &n.pubkey == key => Some(n.clone()),
        _ => None,
    });
    from_chain.or_else(|| trusted.get(key).cloned()).unwrap_or_else(|| {
        let host = cfg.advertise_host.clone().unwrap_or_else(|| {
            let ip = api.ip();
            if ip.is_unspecified() {
                Ipv4Addr::LOCALHOST.to_string()
            } else {
                ip.to_string()
            }
        });
        NodeId::new(*key, host, api.port(), raft.port())
    })
}

impl Node {
    pub async fn start(cfg: NodeConfig) -> Result<Node, NodeError> {
        let mut storage = Storage::open(&cfg.data_dir)?;
        let mut rng = match cfg.seed {
            Some(s) => StdRng::seed_from_u64(s),
            None => StdRng::from_entropy(),
        };
        let key = storage.load_or_create_key(&mut rng)?;
        let static_nodes = read_static_nodes(&cfg)?;
        let genesis = match storage.load_genesis()? {
            Some(g) => g,
            None => {
                let (Some(admin), Some(nodes)) = (cfg.genesis_admin, &static_nodes) else {
                    return Err(NodeError::NoGenesis);
                };
                let g = Block::genesis(admin, nodes.nodes().to_vec(), 0);
                storage.save_genesis(&g)?;
                g
            }
        };
        let trusted: BTreeMap<PublicKey, NodeId> =
            static_nodes.iter().flat_map(|s| s.nodes()).map(|n| (n.pubkey, n.clone())).collect();

        let api_listener = tokio::net::TcpListener::bind(cfg.listen)
            .await
            .map_err(|source| NodeError::Bind { addr: cfg.listen, source })?;
        let api_addr = api_listener.local_addr().map_err(|source| NodeError::Bind { addr: cfg.listen, source })?;
        let (inbound_tx, inbound_rx) = mpsc::channel(INBOUND_QUEUE);
        let transport = Transport::bind(cfg.raft_listen, key.clone(), inbound_tx)
            .await
            .map_err(|source| NodeError::Bind { addr: cfg.raft_listen, source })?;
        let raft_addr = transport.local_addr();

        let log = storage.load_log()?;
        let me = resolve_identity(&key.public(), &log, &trusted, &cfg, api_addr, raft_addr);
        let now = now_ms();
        let raft_seed = rng.next_u64();
        let raft = if log.is_empty() {
            let raft = RaftNode::new(me.clone(), genesis, cfg.raft, raft_seed, now)?;
            storage.write_log_from(raft.log(), 0)?;
            raft
        } else {
            if log[0] != genesis {
                return Err(NodeError::GenesisMismatch);
            }
            let hard = storage.load_hard_state()?;
            RaftNode::restore(me.clone(), cfg.raft, raft_seed, now, hard, log)?
        };
        let last_hard = raft.hard_state();
        let store = PersonalStore::open(&cfg.data_dir)?;
        let rendered = static_nodes.map(StaticNodes::into_nodes).unwrap_or_default();
        let core = Core {
            replica: Replica::new(raft),
            store,
            rng,
            storage,
            transport: Some(transport),
            static_path: cfg.static_nodes_path(),
            trusted,
            rendered,
            applications: BTreeMap::new(),
            last_hard,
        };
        tracing::info!(node = %me, api = %api_addr, raft = %raft_addr, "node started");

        let shared = Arc::new(Shared {
            core: Mutex::new(core),
            key,
            id: me,
            stopped: AtomicBool::new(false),
            require_signed_applications: cfg.require_signed_applications,
            quorum_wait: cfg.quorum_wait,
            commit_wait: cfg.commit_wait,
        });
        let driver = tokio::spawn(drive(shared.clone(), inbound_rx));
        let (stop_tx, stop_rx) = oneshot::channel();
        let app = crate::api::router(shared.clone());
        let server = tokio::spawn(async move {
            let serve = axum::serve(api_listener, app).with_graceful_shutdown(async {
                let _ = stop_rx.await;
            });
            if let Err(e) = serve.await {
                tracing::error!(error = %e, "http server failed");
            }
        });
        Ok(Node { shared, api_addr, raft_addr, driver, server, stop_server: Some(stop_tx) })
    }

    pub fn id(&self) -> &NodeId {
        &self.shared.id
    }

    pub fn public_key(&self) -> PublicKey {
        self.shared.key.public()
    }

    pub fn api_addr(&self) -> SocketAddr {
        self.api_addr
    }

    pub fn raft_addr(&self) -> SocketAddr {
        self.raft_addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.api_addr)
    }

    pub fn shared(&self) -> &Arc<Shared> {
        &self.shared
    }

    /// Stops serving and releases both listening ports. Data on disk stays,
    /// so a node started on the same directory resumes where this one was.
    pub async fn shutdown(mut self) {
        self.shared.stopped.store(true, Ordering::SeqCst);
        self.driver.abort();
        let transport = self.shared.lock().transport.take();
        if let Some(t) = transport {
            t.shutdown().await;
        }
        if let Some(stop) = self.stop_server.take() {
            let _ = stop.send(());
        }
        let _ = tokio::time::timeout(Duration::from_secs(2), &mut self.server).await;
        self.server.abort();
        let _ = (&mut self.driver).await;
    }

    fn halt(&self) {
        self.shared.stopped.store(true, Ordering::SeqCst);
        self.driver.abort();
        self.shared.lock().transport = None;
    }
}

impl Drop for Node {
    fn drop(&mut self) {
        self.halt();
        self.server.abort();
    }
}

async fn drive(shared: Arc<Shared>, mut inbound: mpsc::Receiver<(PublicKey, rmsd_core::consensus::Message)>) {
    let mut ticker = tokio::time::interval(DRIVER_TICK);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            _ = ticker.tick() => {
                shared.with_core(|c, now| c.replica.tick(now));
            }
            first = inbound.recv() => {
                let Some(first) = first else { return };
                let mut batch = vec![first];
                while batch.len() < INBOUND_BATCH {
                    match inbound.try_recv() {
                        Ok(m) => batch.push(m),
                        Err(_) => break,
                    }
                }
                shared.with_core(|c, now| {
                    for (from, msg) in batch {
                        if c.accepts(&from) {
                            c.replica.step(now, from, msg);
                        } else {
                            tracing::debug!(%from, "message from unknown node dropped");
                        }
                    }
                });
            }
        }
    }
}
