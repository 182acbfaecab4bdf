//! JSON bodies of the HTTP API, shared by the server and the client.

use rmsd_core::contract::{NeedRecord, Role, SupportRecord};
use rmsd_core::crypto::{sha256, Digest, Keypair, PublicKey, Signature};
use rmsd_core::ledger::{Block, BlockKind, Payload, Transaction};
use rmsd_core::node_id::NodeId;
use rmsd_core::replica::{Receipt, ReceiptStatus};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Need,
    Support,
}

impl std::str::FromStr for RecordKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "need" => Ok(RecordKind::Need),
            "support" => Ok(RecordKind::Support),
            _ => Err(format!("unknown kind `{s}`, expected need or support")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonalFields {
    pub name: String,
    #[serde(default)]
    pub phone: String,
    #[serde(default)]
    pub address: String,
    #[serde(default)]
    pub notes: String,
}

/// Transaction fields signed by the client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedFields {
    pub sender: PublicKey,
    pub nonce: u64,
    pub signature: Signature,
}

/// Signature fields for an application signed by the applicant's own key.
/// The client picks `personal_secret`; the on-chain reference is its digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedApplication {
    #[serde(flatten)]
    pub tx: SignedFields,
    pub personal_secret: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplicationRequest {
    pub kind: RecordKind,
    pub category: String,
    pub amount: Option<u64>,
    #[serde(default = "default_unit")]
    pub unit: String,
    #[serde(default)]
    pub shipping: Option<String>,
    pub personal: PersonalFields,
    #[serde(default)]
    pub signed: Option<SignedApplication>,
}

fn default_unit() -> String {
    "pcs".into()
}

impl ApplicationRequest {
    /// The contract payload this application turns into.
    pub fn payload(&self, personal_ref: Digest) -> Result<Payload, String> {
        let amount = self.amount.ok_or("amount is required")?;
        Ok(match self.kind {
            RecordKind::Need => {
                Payload::CreateNeed { kind: self.category.clone(), amount, unit: self.unit.clone(), personal_ref }
            }
            RecordKind::Support => Payload::CreateSupport {
                kind: self.category.clone(),
                amount,
                unit: self.unit.clone(),
                shipping: self.shipping.clone().ok_or("shipping is required for supports")?,
                personal_ref,
            },
        })
    }

    /// Signs the application with `key`, choosing the personal secret.
    pub fn sign(&mut self, key: &Keypair, nonce: u64, secret: [u8; 32]) -> Result<Transaction, String> {
        let tx = Transaction::sign(key, nonce, self.payload(sha256(&secret))?);
        self.signed = Some(SignedApplication {
            tx: SignedFields { sender: tx.sender, nonce, signature: tx.signature },
            personal_secret: hex::encode(secret),
        });
        Ok(tx)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovalRequest {
    pub kind: RecordKind,
    pub id: u64,
    #[serde(flatten)]
    pub signed: SignedFields,
}

impl ApprovalRequest {
    pub fn payload(kind: RecordKind, id: u64) -> Payload {
        match kind {
            RecordKind::Need => Payload::ApproveNeed { need_id: id },
            RecordKind::Support => Payload::ApproveSupport { support_id: id },
        }
    }

    pub fn sign(key: &Keypair, nonce: u64, kind: RecordKind, id: u64) -> Self {
        let tx = Transaction::sign(key, nonce, Self::payload(kind, id));
        ApprovalRequest { kind, id, signed: SignedFields { sender: tx.sender, nonce, signature: tx.signature } }
    }

    pub fn transaction(&self) -> Transaction {
        let s = &self.signed;
        Transaction::from_parts(s.sender, s.nonce, Self::payload(self.kind, self.id), s.signature)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleRequest {
    pub target: PublicKey,
    pub role: Role,
    #[serde(flatten)]
    pub signed: SignedFields,
}

impl RoleRequest {
    pub fn sign(key: &Keypair, nonce: u64, target: PublicKey, role: Role) -> Self {
        let tx = Transaction::sign(key, nonce, Payload::SetUser { target, role });
        RoleRequest { target, role, signed: SignedFields { sender: tx.sender, nonce, signature: tx.signature } }
    }

    pub fn transaction(&self) -> Transaction {
        let s = &self.signed;
        Transaction::from_parts(
            s.sender,
            s.nonce,
            Payload::SetUser { target: self.target, role: self.role },
            s.signature,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerRequest {
    pub node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticNodesView {
    pub nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiptView {
    pub tx_id: Digest,
    #[serde(flatten)]
    pub status: ReceiptStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub personal_ref: Option<Digest>,
}

impl From<Receipt> for ReceiptView {
    fn from(r: Receipt) -> Self {
        ReceiptView { tx_id: r.tx_id, status: r.status, personal_ref: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainInfo {
    pub node: NodeId,
    pub height: u64,
    pub tip_hash: Digest,
    pub state_digest: Digest,
    pub term: u64,
    pub leader_hint: Option<NodeId>,
    pub peer_count: usize,
    pub members: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedView {
    #[serde(flatten)]
    pub record: NeedRecord,
    pub status_label: String,
}

impl From<&NeedRecord> for NeedView {
    fn from(r: &NeedRecord) -> Self {
        NeedView { record: r.clone(), status_label: r.status_label().into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportView {
    #[serde(flatten)]
    pub record: SupportRecord,
    pub status_label: String,
}

impl From<&SupportRecord> for SupportView {
    fn from(r: &SupportRecord) -> Self {
        SupportView { record: r.clone(), status_label: r.status_label().into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusView {
    pub kind: RecordKind,
    pub id: u64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountView {
    pub account: PublicKey,
    pub role: Role,
    pub next_nonce: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PayloadView {
    SetUser { target: PublicKey, role: Role },
    CreateNeed { kind: String, amount: u64, unit: String, personal_ref: Digest },
    CreateSupport { kind: String, amount: u64, unit: String, shipping: String, personal_ref: Digest },
    ApproveNeed { need_id: u64 },
    ApproveSupport { support_id: u64 },
}

impl From<&Payload> for PayloadView {
    fn from(p: &Payload) -> Self {
        match p.clone() {
            Payload::SetUser { target, role } => PayloadView::SetUser { target, role },
            Payload::CreateNeed { kind, amount, unit, personal_ref } => {
                PayloadView::CreateNeed { kind, amount, unit, personal_ref }
            }
            Payload::CreateSupport { kind, amount, unit, shipping, personal_ref } => {
                PayloadView::CreateSupport { kind, amount, unit, shipping, personal_ref }
            }
            Payload::ApproveNeed { need_id } => PayloadView::ApproveNeed { need_id },
            Payload::ApproveSupport { support_id } => PayloadView::ApproveSupport { support_id },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxView {
    pub tx_id: Digest,
    pub sender: PublicKey,
    pub nonce: u64,
    pub payload: PayloadView,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockView {
    pub height: u64,
    pub term: u64,
    pub prev_hash: Digest,
    pub timestamp: u64,
    pub proposer: PublicKey,
    pub block_hash: Digest,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub added_peer: Option<NodeId>,
    pub transactions: Vec<TxView>,
    /// Canonical encoding, hex.
    pub canonical: String,
}

impl From<&Block> for BlockView {
    fn from(b: &Block) -> Self {
        let (kind, added_peer) = match &b.kind {
            BlockKind::Regular => ("regular", None),
            BlockKind::Genesis { .. } => ("genesis", None),
            BlockKind::AddPeer(n) => ("add_peer", Some(n.clone())),
        };
        BlockView {
            height: b.height,
            term: b.term,
            prev_hash: b.prev_hash,
            timestamp: b.timestamp,
            proposer: b.proposer,
            block_hash: b.block_hash,
            kind: kind.into(),
            added_peer,
            transactions: b
                .transactions
                .iter()
                .map(|t| TxView {
                    tx_id: t.tx_id,
                    sender: t.sender,
                    nonce: t.nonce,
                    payload: (&t.payload).into(),
                    signature: t.signature,
                })
                .collect(),
            canonical: hex::encode(b.canonical_bytes()),
        }
    }
}

impl BlockView {
    /// Decodes the canonical bytes carried alongside the JSON view.
    pub fn block(&self) -> Result<Block, String> {
        let bytes = hex::decode(&self.canonical).map_err(|e| e.to_string())?;
        Block::from_bytes(&bytes).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisView {
    /// Canonical genesis block, hex.
    pub canonical: String,
    pub block_hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonalView {
    pub personal_ref: Digest,
    pub name: String,
    pub phone: String,
    pub address: String,
    pub notes: String,
    pub collected_at: u64,
    pub collected_by: PublicKey,
}
