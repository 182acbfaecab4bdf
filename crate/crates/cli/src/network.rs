//! Bootstrapping: writing a new network's files and joining a running one.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use rand::rngs::OsRng;
use rmsd_core::consensus::StaticNodes;
use rmsd_core::crypto::{Digest, Keypair, PublicKey};
use rmsd_core::ledger::{Block, BlockKind};
use rmsd_core::node_id::NodeId;
use rmsd_node::service::STATIC_NODES_FILE;
use rmsd_node::storage::{write_atomic, Storage, GENESIS_FILE, KEY_FILE};
use rmsd_node::Client;
use serde::{Deserialize, Serialize};

use crate::{emit, io_error, parse_account, read_key, CliError};

#[derive(Args, Debug)]
pub struct InitArgs {
    /// Network description, JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory that receives one subdirectory per node.
    #[arg(long)]
    pub out: PathBuf,
    /// Genesis timestamp in Unix milliseconds. Defaults to now.
    #[arg(long)]
    pub timestamp: Option<u64>,
}

/// `admin` is the first Admin's public key in hex, or a path to a `.pub`
/// file relative to the config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub admin: String,
    pub nodes: Vec<NodeSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub host: String,
    pub port: u16,
    pub raftport: u16,
    /// Existing `.key` file. A fresh key is generated when absent.
    #[serde(default)]
    pub key: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct InitOutput {
    pub genesis_hash: Digest,
    pub admin: PublicKey,
    pub nodes: Vec<InitNode>,
}

#[derive(Debug, Serialize)]
pub struct InitNode {
    pub name: String,
    pub data_dir: PathBuf,
    pub node_id: NodeId,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

fn storage_err(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

fn resolve_admin(value: &str, base: &Path) -> Result<PublicKey, CliError> {
    if let Ok(pk) = PublicKey::from_hex(value.trim()) {
        return Ok(pk);
    }
    let path = base.join(value);
    let text = std::fs::read_to_string(&path)
        .map_err(|_| invalid(format!("admin {value:?} is neither a public key nor a readable file")))?;
    parse_account(&text)
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Writes `<out>/<name>/{node.key, genesis.bin, static-nodes.json}` for each
/// node, plus shared copies of genesis and static-nodes in `<out>`.
pub fn init_network(args: &InitArgs, out: &mut dyn Write, json: bool) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| io_error(&args.config, e))?;
    let cfg: NetworkConfig =
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", args.config.display())))?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let admin = resolve_admin(&cfg.admin, base)?;
    if cfg.nodes.is_empty() {
        return Err(invalid("network needs at least one node"));
    }

    let mut names = BTreeSet::new();
    let mut keys = Vec::new();
    for n in &cfg.nodes {
        if !valid_name(&n.name) {
            return Err(invalid(format!("invalid node name {:?}", n.name)));
        }
        if !names.insert(n.name.as_str()) {
            return Err(invalid(format!("duplicate node name {:?}", n.name)));
        }
        if n.host.is_empty() || n.port == 0 || n.raftport == 0 {
            return Err(invalid(format!("node {:?} needs a host, port and raftport", n.name)));
        }
        if args.out.join(&n.name).join(GENESIS_FILE).exists() {
            return Err(invalid(format!("{} already holds a genesis block", args.out.join(&n.name).display())));
        }
        let key = match &n.key {
            Some(p) => read_key(&base.join(p))?,
            None => Keypair::generate(&mut OsRng),
        };
        keys.push(key);
    }
    let ids: Vec<NodeId> =
        cfg.nodes.iter().zip(&keys).map(|(n, k)| NodeId::new(k.public(), n.host.clone(), n.port, n.raftport)).collect();
    let statics = StaticNodes::new(ids.clone()).map_err(|e| invalid(e.to_string()))?;
    let timestamp = args.timestamp.unwrap_or_else(rmsd_node::service::now_ms);
    let genesis = Block::genesis(admin, ids.clone(), timestamp);

    let mut nodes = Vec::new();
    for ((n, key), id) in cfg.nodes.iter().zip(&keys).zip(ids) {
        let dir = args.out.join(&n.name);
        let storage = Storage::open(&dir).map_err(storage_err)?;
        write_atomic(&dir.join(KEY_FILE), format!("{}\n", key.seed_hex()).as_bytes()).map_err(storage_err)?;
        storage.save_genesis(&genesis).map_err(storage_err)?;
        write_atomic(&dir.join(STATIC_NODES_FILE), statics.render().as_bytes()).map_err(storage_err)?;
        nodes.push(InitNode { name: n.name.clone(), data_dir: dir, node_id: id });
    }
    write_atomic(&args.out.join(GENESIS_FILE), &genesis.canonical_bytes()).map_err(storage_err)?;
    write_atomic(&args.out.join(STATIC_NODES_FILE), statics.render().as_bytes()).map_err(storage_err)?;

    let view = InitOutput { genesis_hash: genesis.block_hash, admin, nodes };
    emit(out, json, &view, |o| {
        writeln!(o, "genesis {}", view.genesis_hash)?;
        for n in &view.nodes {
            writeln!(o, "{:<12} {}  {}", n.name, n.data_dir.display(), n.node_id)?;
        }
        Ok(())
    })
}

#[derive(Args, Debug)]
pub struct JoinArgs {
    /// Data directory of the new node. Its key is created if missing.
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub host: String,
    /// API port of the new node.
    #[arg(long)]
    pub port: u16,
    #[arg(long)]
    pub raftport: u16,
    /// Key of an account holding the Admin role.
    #[arg(long)]
    pub admin_key: PathBuf,
    /// Extra path to write the updated static-nodes file to.
    #[arg(long)]
    pub static_nodes: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct JoinOutput {
    pub node_id: NodeId,
    pub genesis_hash: Digest,
    pub data_dir: PathBuf,
    pub static_nodes: Vec<NodeId>,
}

/// Fetches genesis from the running network, has the admin add the new
/// node, then stores the resulting static-nodes list.
pub async fn join(client: &Client, args: &JoinArgs, out: &mut dyn Write, json: bool) -> Result<(), CliError> {
    let admin = read_key(&args.admin_key)?;
    let view = client.genesis().await?;
    let bytes = hex::decode(&view.canonical).map_err(|e| CliError::Io(format!("genesis from node: {e}")))?;
    let genesis = Block::from_bytes(&bytes).map_err(|e| CliError::Io(format!("genesis from node: {e}")))?;
    if genesis.block_hash != view.block_hash || !matches!(genesis.kind, BlockKind::Genesis { .. }) {
        return Err(CliError::Io("node served an inconsistent genesis block".into()));
    }
    let key_existed = args.data_dir.join(KEY_FILE).exists();
    let storage = Storage::open(&args.data_dir).map_err(storage_err)?;
    let key = storage.load_or_create_key(&mut OsRng).map_err(storage_err)?;
    let genesis_existed = match storage.load_genesis().map_err(storage_err)? {
        Some(existing) if existing.block_hash != genesis.block_hash => {
            return Err(invalid(format!("{} belongs to a different network", args.data_dir.display())));
        }
        Some(_) => true,
        None => {
            storage.save_genesis(&genesis).map_err(storage_err)?;
            false
        }
    };

    let id = NodeId::new(key.public(), args.host.clone(), args.port, args.raftport);
    let members = match client.add_peer(&admin, &id).await {
        Ok(m) => m,
        Err(e) => {
            // Leave the directory as it was so the join can simply be retried.
            if !genesis_existed {
                let _ = std::fs::remove_file(args.data_dir.join(GENESIS_FILE));
            }
            if !key_existed {
                let _ = std::fs::remove_file(args.data_dir.join(KEY_FILE));
            }
            return Err(e.into());
        }
    };
    let rendered = StaticNodes::new(members.nodes.clone()).map_err(|e| CliError::Io(e.to_string()))?.render();
    write_atomic(&args.data_dir.join(STATIC_NODES_FILE), rendered.as_bytes()).map_err(storage_err)?;
    if let Some(extra) = &args.static_nodes {
        write_atomic(extra, rendered.as_bytes()).map_err(storage_err)?;
    }

    let view = JoinOutput {
        node_id: id,
        genesis_hash: genesis.block_hash,
        data_dir: args.data_dir.clone(),
        static_nodes: members.nodes,
    };
    emit(out, json, &view, |o| {
        writeln!(o, "joined as {}", view.node_id)?;
        writeln!(o, "members {}", view.static_nodes.len())?;
        writeln!(
            o,
            "start it with: rmsd-node --data-dir {} --listen {} --raft-listen {}",
            view.data_dir.display(),
            view.node_id.api_addr(),
            view.node_id.raft_addr()
        )
    })
}
