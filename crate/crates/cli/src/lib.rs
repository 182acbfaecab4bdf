//! The `rmsd` operator tool and the `rmsd-sim` simulator front end.
//!
//! Both binaries are thin: argument parsing lives here so tests can drive
//! the exact code paths in-process.

pub mod network;
pub mod sim;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::rngs::OsRng;
use rand::RngCore;
use rmsd_core::contract::Role;
use rmsd_core::crypto::{Digest, Keypair, PublicKey};
use rmsd_core::node_id::NodeId;
use rmsd_core::replica::ReceiptStatus;
use rmsd_node::types::*;
use rmsd_node::{Client, ClientError};
use serde::Serialize;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_UNAUTHORIZED: i32 = 3;
pub const EXIT_UNAVAILABLE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("transaction {tx_id} rejected: {code}: {message}")]
    Rejected { tx_id: Digest, code: String, message: String },
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_VALIDATION,
            CliError::Client(ClientError::Api { code, .. }) | CliError::Rejected { code, .. } => match code.as_str() {
                "Unauthorized" | "BadSignature" => EXIT_UNAUTHORIZED,
                "NoQuorum" | "Unavailable" => EXIT_UNAVAILABLE,
                "Internal" => EXIT_FAILURE,
                _ => EXIT_VALIDATION,
            },
            CliError::Client(ClientError::Transport(_) | ClientError::Timeout) => EXIT_UNAVAILABLE,
            CliError::Client(ClientError::Decode(_)) | CliError::Io(_) => EXIT_FAILURE,
        }
    }
}

impl CliError {
    /// Stable error code, as used by the node API where one applies.
    pub fn code(&self) -> &str {
        match self {
            CliError::Invalid(_) => "ValidationError",
            CliError::Client(ClientError::Api { code, .. }) | CliError::Rejected { code, .. } => code,
            CliError::Client(ClientError::Transport(_) | ClientError::Timeout) => "Unavailable",
            CliError::Client(ClientError::Decode(_)) => "Internal",
            CliError::Io(_) => "IOError",
        }
    }
}

pub fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "rmsd", version, about = "Operate a disaster-resource ledger network")]
pub struct Cli {
    /// Node API endpoint.
    #[arg(long, env = "RMSD_NODE", default_value = "http://127.0.0.1:8080", global = true)]
    pub node: String,
    /// Print machine-readable JSON.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate an Ed25519 key pair as `<out>.key` and `<out>.pub`.
    Keygen(KeygenArgs),
    /// Write genesis, static-nodes.json and a data directory per node.
    InitNetwork(network::InitArgs),
    /// Add a new node to a running network and fetch its files.
    Join(network::JoinArgs),
    /// Submit transactions.
    #[command(subcommand)]
    Tx(TxCommand),
    /// Read committed state.
    #[command(subcommand)]
    Query(QueryCommand),
}

#[derive(Args, Debug)]
pub struct KeygenArgs {
    /// Output path prefix.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value_t = 9080)]
    pub raftport: u16,
}

#[derive(Args, Debug, Clone)]
pub struct WaitArgs {
    /// Return the pending receipt instead of polling for the outcome.
    #[arg(long)]
    pub no_wait: bool,
    /// Seconds to poll before giving up.
    #[arg(long, default_value_t = 30)]
    pub timeout: u64,
}

#[derive(Args, Debug, Clone)]
pub struct PersonalArgs {
    #[arg(long)]
    pub name: String,
    #[arg(long, default_value = "")]
    pub phone: String,
    #[arg(long, default_value = "")]
    pub address: String,
    #[arg(long, default_value = "")]
    pub notes: String,
}

impl From<PersonalArgs> for PersonalFields {
    fn from(p: PersonalArgs) -> Self {
        PersonalFields { name: p.name, phone: p.phone, address: p.address, notes: p.notes }
    }
}

#[derive(Subcommand, Debug)]
pub enum TxCommand {
    CreateNeed {
        #[arg(long)]
        category: String,
        #[arg(long)]
        amount: u64,
        #[arg(long, default_value = "pcs")]
        unit: String,
        #[command(flatten)]
        personal: PersonalArgs,
        /// Sign as the applicant instead of through the node's service key.
        #[arg(long)]
        key: Option<PathBuf>,
        #[command(flatten)]
        wait: WaitArgs,
    },
    CreateSupport {
        #[arg(long)]
        category: String,
        #[arg(long)]
        amount: u64,
        #[arg(long, default_value = "pcs")]
        unit: String,
        #[arg(long)]
        shipping: String,
        #[command(flatten)]
        personal: PersonalArgs,
        #[arg(long)]
        key: Option<PathBuf>,
        #[command(flatten)]
        wait: WaitArgs,
    },
    Approve {
        kind: KindArg,
        id: u64,
        #[arg(long)]
        key: PathBuf,
        #[command(flatten)]
        wait: WaitArgs,
    },
    GrantRole {
        /// Account public key, hex.
        target: String,
        role: Role,
        #[arg(long)]
        key: PathBuf,
        #[command(flatten)]
        wait: WaitArgs,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum KindArg {
    Need,
    Support,
}

impl From<KindArg> for RecordKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Need => RecordKind::Need,
            KindArg::Support => RecordKind::Support,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum QueryCommand {
    Needs,
    Need {
        id: u64,
    },
    Supports {
        #[arg(long)]
        approved: bool,
    },
    Support {
        id: u64,
    },
    /// Approval status; needs a Checker key.
    Status {
        kind: KindArg,
        id: u64,
        #[arg(long)]
        key: Option<PathBuf>,
    },
    Chain,
    Tx {
        tx_id: String,
    },
    Block {
        height: u64,
    },
    Account {
        account: String,
    },
    StaticNodes,
}

pub fn read_key(path: &Path) -> Result<Keypair, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Keypair::from_seed_hex(text.trim()).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

pub fn parse_account(s: &str) -> Result<PublicKey, CliError> {
    PublicKey::from_hex(s.trim()).map_err(|e| CliError::Invalid(format!("invalid account {s:?}: {e}")))
}

fn emit<T: Serialize>(
    out: &mut dyn Write,
    json: bool,
    value: &T,
    human: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let r = if json {
        serde_json::to_writer_pretty(&mut *out, value).map_err(std::io::Error::from).and_then(|_| writeln!(out))
    } else {
        human(out)
    };
    r.map_err(|e| CliError::Io(format!("stdout: {e}")))
}

fn status_text(s: &ReceiptStatus) -> String {
    match s {
        ReceiptStatus::Pending => "pending".into(),
        ReceiptStatus::Committed { height } => format!("committed at height {height}"),
        ReceiptStatus::Rejected { code, message } => format!("rejected: {code}: {message}"),
    }
}

/// Polls a submitted receipt according to `wait` and prints it. A rejected
/// receipt is printed and then reported as an error.
async fn finish(
    client: &Client,
    out: &mut dyn Write,
    json: bool,
    receipt: ReceiptView,
    wait: &WaitArgs,
) -> Result<(), CliError> {
    let personal_ref = receipt.personal_ref;
    let mut r = if wait.no_wait || receipt.status.is_final() {
        receipt
    } else {
        client.wait_receipt(&receipt.tx_id, Duration::from_secs(wait.timeout)).await?
    };
    r.personal_ref = r.personal_ref.or(personal_ref);
    emit(out, json, &r, |o| {
        writeln!(o, "tx {}: {}", r.tx_id, status_text(&r.status))?;
        if let Some(p) = r.personal_ref {
            writeln!(o, "personal ref {p}")?;
        }
        Ok(())
    })?;
    match r.status {
        ReceiptStatus::Rejected { code, message } => Err(CliError::Rejected { tx_id: r.tx_id, code, message }),
        _ => Ok(()),
    }
}

pub fn keygen(args: &KeygenArgs, out: &mut dyn Write, json: bool) -> Result<(), CliError> {
    let key = Keypair::generate(&mut OsRng);
    let key_path = args.out.with_extension("key");
    let pub_path = args.out.with_extension("pub");
    if let Some(dir) = key_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    rmsd_node::storage::write_atomic(&key_path, format!("{}\n", key.seed_hex()).as_bytes())
        .map_err(|e| CliError::Io(e.to_string()))?;
    rmsd_node::storage::write_atomic(&pub_path, format!("{}\n", key.public().to_hex()).as_bytes())
        .map_err(|e| CliError::Io(e.to_string()))?;
    let id = NodeId::new(key.public(), args.host.clone(), args.port, args.raftport);

    #[derive(Serialize)]
    struct KeygenOut {
        public_key: PublicKey,
        key_file: PathBuf,
        pub_file: PathBuf,
        node_id: NodeId,
    }
    let view = KeygenOut { public_key: key.public(), key_file: key_path, pub_file: pub_path, node_id: id };
    emit(out, json, &view, |o| {
        writeln!(o, "public key {}", view.public_key)?;
        writeln!(o, "wrote {} and {}", view.key_file.display(), view.pub_file.display())?;
        writeln!(o, "{}", view.node_id)
    })
}

async fn application(
    client: &Client,
    mut req: ApplicationRequest,
    key: Option<PathBuf>,
) -> Result<ReceiptView, CliError> {
    if let Some(path) = key {
        let key = read_key(&path)?;
        let nonce = client.account(&key.public()).await?.next_nonce;
        let mut secret = [0u8; 32];
        OsRng.fill_bytes(&mut secret);
        req.sign(&key, nonce, secret).map_err(CliError::Invalid)?;
    }
    Ok(client.submit_application(&req).await?)
}

async fn run_tx(client: &Client, out: &mut dyn Write, json: bool, cmd: TxCommand) -> Result<(), CliError> {
    match cmd {
        TxCommand::CreateNeed { category, amount, unit, personal, key, wait } => {
            let req = ApplicationRequest {
                kind: RecordKind::Need,
                category,
                amount: Some(amount),
                unit,
                shipping: None,
                personal: personal.into(),
                signed: None,
            };
            let r = application(client, req, key).await?;
            finish(client, out, json, r, &wait).await
        }
        TxCommand::CreateSupport { category, amount, unit, shipping, personal, key, wait } => {
            let req = ApplicationRequest {
                kind: RecordKind::Support,
                category,
                amount: Some(amount),
                unit,
                shipping: Some(shipping),
                personal: personal.into(),
                signed: None,
            };
            let r = application(client, req, key).await?;
            finish(client, out, json, r, &wait).await
        }
        TxCommand::Approve { kind, id, key, wait } => {
            let key = read_key(&key)?;
            let nonce = client.account(&key.public()).await?.next_nonce;
            let r = client.submit_approval(&ApprovalRequest::sign(&key, nonce, kind.into(), id)).await?;
            finish(client, out, json, r, &wait).await
        }
        TxCommand::GrantRole { target, role, key, wait } => {
            let target = parse_account(&target)?;
            let key = read_key(&key)?;
            let nonce = client.account(&key.public()).await?.next_nonce;
            let r = client.grant_role(&RoleRequest::sign(&key, nonce, target, role)).await?;
            finish(client, out, json, r, &wait).await
        }
    }
}

fn need_line(o: &mut dyn Write, n: &NeedView) -> std::io::Result<()> {
    let r = &n.record;
    writeln!(o, "need {:>4}  {:<16} {:>8} {:<8} {}", r.need_id, r.kind, r.amount, r.unit, n.status_label)
}

fn support_line(o: &mut dyn Write, s: &SupportView) -> std::io::Result<()> {
    let r = &s.record;
    writeln!(
        o,
        "support {:>4}  {:<16} {:>8} {:<8} {:<10} {}",
        r.support_id, r.kind, r.amount, r.unit, r.shipping, s.status_label
    )
}

async fn run_query(client: &Client, out: &mut dyn Write, json: bool, cmd: QueryCommand) -> Result<(), CliError> {
    match cmd {
        QueryCommand::Needs => {
            let v = client.needs().await?;
            emit(out, json, &v, |o| v.iter().try_for_each(|n| need_line(o, n)))
        }
        QueryCommand::Need { id } => {
            let v = client.need(id).await?;
            emit(out, json, &v, |o| need_line(o, &v))
        }
        QueryCommand::Supports { approved } => {
            let v = if approved { client.approved_supports().await? } else { client.supports().await? };
            emit(out, json, &v, |o| v.iter().try_for_each(|s| support_line(o, s)))
        }
        QueryCommand::Support { id } => {
            let v = client.support(id).await?;
            emit(out, json, &v, |o| support_line(o, &v))
        }
        QueryCommand::Status { kind, id, key } => {
            let key = key.as_deref().map(read_key).transpose()?;
            let v = client.status(key.as_ref(), kind.into(), id).await?;
            emit(out, json, &v, |o| writeln!(o, "{}", v.status))
        }
        QueryCommand::Chain => {
            let v = client.chain().await?;
            emit(out, json, &v, |o| {
                writeln!(o, "node        {}", v.node)?;
                writeln!(o, "height      {}", v.height)?;
                writeln!(o, "tip         {}", v.tip_hash)?;
                writeln!(o, "state       {}", v.state_digest)?;
                writeln!(o, "term        {}", v.term)?;
                match &v.leader_hint {
                    Some(l) => writeln!(o, "leader      {l}")?,
                    None => writeln!(o, "leader      unknown")?,
                }
                writeln!(o, "peers       {}", v.peer_count)
            })
        }
        QueryCommand::Tx { tx_id } => {
            let tx_id = Digest::from_hex(tx_id.trim()).map_err(|e| CliError::Invalid(format!("invalid tx id: {e}")))?;
            let v = client.receipt(&tx_id).await?;
            emit(out, json, &v, |o| writeln!(o, "tx {}: {}", v.tx_id, status_text(&v.status)))
        }
        QueryCommand::Block { height } => {
            let v = client.block(height).await?;
            emit(out, json, &v, |o| {
                writeln!(o, "block {} term {} {} ({})", v.height, v.term, v.block_hash, v.kind)?;
                writeln!(o, "prev {}", v.prev_hash)?;
                for t in &v.transactions {
                    writeln!(o, "  tx {} from {} nonce {}", t.tx_id, t.sender, t.nonce)?;
                }
                Ok(())
            })
        }
        QueryCommand::Account { account } => {
            let v = client.account(&parse_account(&account)?).await?;
            emit(out, json, &v, |o| writeln!(o, "{} {} next nonce {}", v.account, v.role, v.next_nonce))
        }
        QueryCommand::StaticNodes => {
            let v = client.static_nodes().await?;
            emit(out, json, &v, |o| v.nodes.iter().try_for_each(|n| writeln!(o, "{n}")))
        }
    }
}

/// Executes one `rmsd` invocation, writing results to `out`. With `--json`
/// a failure also writes `{"code", "message"}` unless a rejected receipt
/// was already printed.
pub async fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let json = cli.json;
    let r = dispatch(cli, out).await;
    if let Err(e) = &r {
        if json && !matches!(e, CliError::Rejected { .. }) {
            let body = ErrorBody { code: e.code().to_string(), message: e.to_string() };
            let _ = serde_json::to_writer_pretty(&mut *out, &body)
                .map_err(std::io::Error::from)
                .and_then(|_| writeln!(out));
        }
    }
    r
}

async fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let json = cli.json;
    match cli.command {
        Command::Keygen(args) => keygen(&args, out, json),
        Command::InitNetwork(args) => network::init_network(&args, out, json),
        Command::Join(args) => network::join(&Client::new(&cli.node), &args, out, json).await,
        Command::Tx(cmd) => run_tx(&Client::new(&cli.node), out, json, cmd).await,
        Command::Query(cmd) => run_query(&Client::new(&cli.node), out, json, cmd).await,
    }
}
