//! Several nodes in one process on loopback ports, for tests and demos.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU16, Ordering};
use std::time::Duration;

use rmsd_core::consensus::StaticNodes;
use rmsd_core::crypto::{Keypair, PublicKey};
use rmsd_core::ledger::Block;
use rmsd_core::node_id::NodeId;

use crate::client::{Client, ClientError};
use crate::service::{Node, NodeConfig, NodeError, STATIC_NODES_FILE};
use crate::storage::{write_atomic, Storage, KEY_FILE};
use crate::types::ChainInfo;

static NEXT_PORT: AtomicU16 = AtomicU16::new(0);

/// A loopback port that was free a moment ago. Ports come from below the
/// kernel's ephemeral range so outbound connections cannot take them.
pub fn free_port() -> u16 {
    const LOW: u16 = 20_000;
    const SPAN: u16 = 12_000;
    let _ = NEXT_PORT.compare_exchange(
        0,
        LOW + (std::process::id() % SPAN as u32) as u16,
        Ordering::SeqCst,
        Ordering::SeqCst,
    );
    loop {
        let p = NEXT_PORT.fetch_add(1, Ordering::SeqCst);
        let port = LOW + (p - LOW) % SPAN;
        if std::net::TcpListener::bind(("127.0.0.1", port)).is_ok() {
            return port;
        }
    }
}

/// Writes a node key and returns the identity the node will run under.
pub fn prepare_node_dir(dir: &Path, key: &Keypair) -> Result<NodeId, NodeError> {
    let storage = Storage::open(dir)?;
    write_atomic(&storage.dir().join(KEY_FILE), format!("{}\n", key.seed_hex()).as_bytes())?;
    Ok(NodeId::new(key.public(), "127.0.0.1", free_port(), free_port()))
}

pub fn node_config(dir: &Path, id: &NodeId) -> NodeConfig {
    let mut cfg = NodeConfig::new(dir);
    cfg.listen = id.api_addr().parse().expect("loopback address");
    cfg.raft_listen = id.raft_addr().parse().expect("loopback address");
    cfg
}

pub struct LocalCluster {
    root: PathBuf,
    pub admin: Keypair,
    ids: Vec<NodeId>,
    nodes: Vec<Option<Node>>,
}

impl LocalCluster {
    /// Starts `n` genesis members under `root`, with `admin` as first Admin.
    pub async fn start(root: &Path, n: usize, admin: Keypair, seed: u64) -> Result<LocalCluster, NodeError> {
        let mut ids = Vec::new();
        for i in 0..n {
            let key = Keypair::from_seed(rmsd_core::crypto::sha256(format!("cluster-{seed}-{i}").as_bytes()).0);
            ids.push(prepare_node_dir(&root.join(format!("node{i}")), &key)?);
        }
        let statics = StaticNodes::new(ids.clone()).map_err(|e| NodeError::StaticNodes(e.to_string()))?;
        let genesis = Block::genesis(admin.public(), ids.clone(), 0);
        for i in 0..n {
            let dir = root.join(format!("node{i}"));
            write_atomic(&dir.join(STATIC_NODES_FILE), statics.render().as_bytes())?;
            Storage::open(&dir)?.save_genesis(&genesis)?;
        }
        let mut c = LocalCluster { root: root.to_path_buf(), admin, ids, nodes: Vec::new() };
        for i in 0..n {
            let node = Node::start(c.config(i)).await?;
            c.nodes.push(Some(node));
        }
        Ok(c)
    }

    pub fn dir(&self, i: usize) -> PathBuf {
        self.root.join(format!("node{i}"))
    }

    /// Config used to (re)start node `i`. Tests may adjust it before
    /// calling [`LocalCluster::restart_with`].
    pub fn config(&self, i: usize) -> NodeConfig {
        let mut cfg = node_config(&self.dir(i), &self.ids[i]);
        cfg.seed = Some(i as u64);
        cfg
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, i: usize) -> &NodeId {
        &self.ids[i]
    }

    pub fn node(&self, i: usize) -> Option<&Node> {
        self.nodes[i].as_ref()
    }

    pub fn client(&self, i: usize) -> Client {
        Client::new(&format!("http://{}", self.ids[i].api_addr()))
    }

    pub fn running(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_some()).collect()
    }

    pub async fn stop(&mut self, i: usize) {
        if let Some(n) = self.nodes[i].take() {
            n.shutdown().await;
        }
    }

    pub async fn restart(&mut self, i: usize) -> Result<(), NodeError> {
        let cfg = self.config(i);
        self.restart_with(i, cfg).await
    }

    pub async fn restart_with(&mut self, i: usize, cfg: NodeConfig) -> Result<(), NodeError> {
        self.stop(i).await;
        self.nodes[i] = Some(Node::start(cfg).await?);
        Ok(())
    }

    /// Prepares a directory for a node that is not yet a member: its key,
    /// the cluster genesis and the current static-nodes file.
    pub async fn prepare_joiner(&mut self, key: &Keypair) -> Result<usize, NodeError> {
        let i = self.ids.len();
        let dir = self.dir(i);
        let id = prepare_node_dir(&dir, key)?;
        let src = self.dir(0);
        let genesis = Storage::open(&src)?.load_genesis()?.ok_or(NodeError::NoGenesis)?;
        Storage::open(&dir)?.save_genesis(&genesis)?;
        if let Ok(text) = std::fs::read(src.join(STATIC_NODES_FILE)) {
            write_atomic(&dir.join(STATIC_NODES_FILE), &text)?;
        }
        self.ids.push(id);
        self.nodes.push(None);
        Ok(i)
    }

    pub async fn infos(&self) -> Vec<Result<ChainInfo, ClientError>> {
        let mut out = Vec::new();
        for i in self.running() {
            out.push(self.client(i).chain().await);
        }
        out
    }

    /// Waits until every running node reports the same committed tip at
    /// height at least `min_height`.
    pub async fn wait_converged(&self, min_height: u64, timeout: Duration) -> Result<ChainInfo, String> {
        let deadline = tokio::time::Instant::now() + timeout;
        let mut last = String::new();
        loop {
            let infos = self.infos().await;
            let ok: Vec<&ChainInfo> = infos.iter().filter_map(|r| r.as_ref().ok()).collect();
            if ok.len() == infos.len() && !ok.is_empty() {
                let first = ok[0];
                let same = ok.iter().all(|i| i.tip_hash == first.tip_hash && i.state_digest == first.state_digest);
                let members = ok.iter().all(|i| i.members.len() == first.members.len());
                if same && members && first.height >= min_height {
                    return Ok(first.clone());
                }
                last = ok
                    .iter()
                    .map(|i| format!("{}@{}", i.height, &i.tip_hash.to_hex()[..8]))
                    .collect::<Vec<_>>()
                    .join(" ");
            }
            if tokio::time::Instant::now() >= deadline {
                return Err(format!("nodes did not converge: {last}"));
            }
            tokio::time::sleep(Duration::from_millis(25)).await;
        }
    }

    /// Waits for a running node to see a leader in its committed view.
    pub async fn wait_leader(&self, timeout: Duration) -> Result<PublicKey, String> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            for i in self.running() {
                let n = self.nodes[i].as_ref().expect("running");
                let c = n.shared().lock();
                if c.replica.raft().is_leader() {
                    return Ok(n.public_key());
                }
            }
            if tokio::time::Instant::now() >= deadline {
                return Err("no leader elected".into());
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    pub async fn shutdown(mut self) {
        for i in 0..self.nodes.len() {
            self.stop(i).await;
        }
    }
}
