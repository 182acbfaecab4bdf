use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rmsd_core::crypto::PublicKey;
use rmsd_node::{Node, NodeConfig};
use tracing_subscriber::EnvFilter;

/// Runs one ledger node.
#[derive(Parser, Debug)]
#[command(name = "rmsd-node", version)]
struct Args {
    /// Directory for the key, chain, raft state and personal data.
    #[arg(long)]
    data_dir: PathBuf,
    /// Static-nodes file; defaults to static-nodes.json in the data directory.
    #[arg(long)]
    static_nodes: Option<PathBuf>,
    /// HTTP API address.
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    /// Consensus transport address.
    #[arg(long, default_value = "127.0.0.1:9080")]
    raft_listen: SocketAddr,
    /// Host to advertise when this node is not yet in the static-nodes file.
    #[arg(long)]
    advertise_host: Option<String>,
    /// First admin account, used only when creating a new genesis.
    #[arg(long, value_parser = parse_key)]
    genesis_admin: Option<PublicKey>,
    /// Seed for key generation and election timing.
    #[arg(long)]
    seed: Option<u64>,
    /// Only accept applications signed by the applicant's own key.
    #[arg(long)]
    require_signed_applications: bool,
}

fn parse_key(s: &str) -> Result<PublicKey, String> {
    PublicKey::from_hex(s).map_err(|e| e.to_string())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let mut cfg = NodeConfig::new(args.data_dir);
    cfg.static_nodes = args.static_nodes;
    cfg.listen = args.listen;
    cfg.raft_listen = args.raft_listen;
    cfg.advertise_host = args.advertise_host;
    cfg.genesis_admin = args.genesis_admin;
    cfg.seed = args.seed;
    cfg.require_signed_applications = args.require_signed_applications;

    let node = match Node::start(cfg).await {
        Ok(n) => n,
        Err(e) => {
            eprintln!("rmsd-node: {e}");
            return ExitCode::FAILURE;
        }
    };
    println!("{}", node.id());
    if let Err(e) = tokio::signal::ctrl_c().await {
        eprintln!("rmsd-node: cannot wait for shutdown signal: {e}");
    }
    node.shutdown().await;
    ExitCode::SUCCESS
}
