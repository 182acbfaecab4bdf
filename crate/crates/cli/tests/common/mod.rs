#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Parser;
use rmsd_cli::{run, Cli};
use rmsd_core::node_id::NodeId;
use rmsd_node::cluster::{free_port, node_config};
use rmsd_node::types::ChainInfo;
use rmsd_node::{Client, Node};
use serde_json::Value;

/// Runs one `rmsd` invocation in-process and returns its exit code and stdout.
pub async fn rmsd(args: &[&str]) -> (i32, String) {
    let cli = Cli::try_parse_from(std::iter::once("rmsd").chain(args.iter().copied())).expect("arguments parse");
    let mut out = Vec::new();
    let code = match run(cli, &mut out).await {
        Ok(()) => 0,
        Err(e) => e.exit_code(),
    };
    (code, String::from_utf8(out).expect("utf-8 output"))
}

pub async fn rmsd_json(args: &[&str]) -> (i32, Value) {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    let (code, out) = rmsd(&full).await;
    let v = if out.trim().is_empty() { Value::Null } else { serde_json::from_str(&out).expect("json output") };
    (code, v)
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Keys generated with `rmsd keygen`, returning `(key file, public key hex)`.
pub async fn keygen(dir: &Path, name: &str) -> (PathBuf, String) {
    let prefix = dir.join(name);
    let (code, v) = rmsd_json(&["keygen", "--out", p(&prefix)]).await;
    assert_eq!(code, 0);
    (prefix.with_extension("key"), v["public_key"].as_str().expect("public key").to_string())
}

/// A network bootstrapped through `rmsd init-network` and run in-process.
pub struct Net {
    pub root: PathBuf,
    pub admin_key: PathBuf,
    pub admin_pub: String,
    pub dirs: Vec<PathBuf>,
    pub ids: Vec<NodeId>,
    pub nodes: Vec<Option<Node>>,
}

impl Net {
    pub async fn init(root: &Path, n: usize) -> Net {
        let (admin_key, admin_pub) = keygen(root, "admin").await;
        let nodes: Vec<Value> = (0..n)
            .map(|i| {
                serde_json::json!({
                    "name": format!("ngo{i}"),
                    "host": "127.0.0.1",
                    "port": free_port(),
                    "raftport": free_port(),
                })
            })
            .collect();
        let cfg = root.join("network.json");
        std::fs::write(&cfg, serde_json::json!({ "admin": "admin.pub", "nodes": nodes }).to_string()).unwrap();
        let out = root.join("net");
        let (code, v) = rmsd_json(&["init-network", "--config", p(&cfg), "--out", p(&out)]).await;
        assert_eq!(code, 0, "init-network failed");
        let entries = v["nodes"].as_array().expect("nodes");
        let dirs = entries.iter().map(|e| PathBuf::from(e["data_dir"].as_str().unwrap())).collect();
        let ids = entries.iter().map(|e| e["node_id"].as_str().unwrap().parse().unwrap()).collect();
        Net { root: root.to_path_buf(), admin_key, admin_pub, dirs, ids, nodes: (0..n).map(|_| None).collect() }
    }

    pub async fn start(root: &Path, n: usize) -> Net {
        let mut net = Net::init(root, n).await;
        for i in 0..n {
            net.start_node(i).await;
        }
        net
    }

    pub async fn start_node(&mut self, i: usize) {
        let node = Node::start(node_config(&self.dirs[i], &self.ids[i])).await.expect("node starts");
        self.nodes[i] = Some(node);
    }

    pub async fn stop_node(&mut self, i: usize) {
        if let Some(n) = self.nodes[i].take() {
            n.shutdown().await;
        }
    }

    /// Registers a node that was joined through `rmsd join`.
    pub fn add(&mut self, dir: PathBuf, id: NodeId) -> usize {
        self.dirs.push(dir);
        self.ids.push(id);
        self.nodes.push(None);
        self.dirs.len() - 1
    }

    pub fn url(&self, i: usize) -> String {
        format!("http://{}", self.ids[i].api_addr())
    }

    pub fn client(&self, i: usize) -> Client {
        Client::new(&self.url(i))
    }

    pub fn running(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_some()).collect()
    }

    /// Waits until every running node reports the same tip and state at
    /// height at least `min_height`, returning each node's view.
    pub async fn converged(&self, min_height: u64, timeout: Duration) -> Result<Vec<ChainInfo>, String> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let mut infos = Vec::new();
            for i in self.running() {
                if let Ok(info) = self.client(i).chain().await {
                    infos.push(info);
                }
            }
            let all = infos.len() == self.running().len() && !infos.is_empty();
            if all
                && infos[0].height >= min_height
                && infos.iter().all(|i| {
                    i.tip_hash == infos[0].tip_hash
                        && i.state_digest == infos[0].state_digest
                        && i.members.len() == infos[0].members.len()
                })
            {
                return Ok(infos);
            }
            if tokio::time::Instant::now() >= deadline {
                let seen: Vec<String> = infos.iter().map(|i| format!("{}@{}", i.height, i.tip_hash)).collect();
                return Err(format!("no convergence: {}", seen.join(" ")));
            }
            tokio::time::sleep(Duration::from_millis(25)).await;
        }
    }

    pub async fn shutdown(mut self) {
        for i in 0..self.nodes.len() {
            self.stop_node(i).await;
        }
    }
}
