//! HTTP/JSON endpoints. Reads come from the committed snapshot; writes go
//! through the replica and return a receipt to poll.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::RngCore;
use rmsd_core::consensus::AddPeerError;
use rmsd_core::contract::ContractError;
use rmsd_core::crypto::{sha256, Digest, PublicKey};
use rmsd_core::ledger::Transaction;
use rmsd_core::privacy::{PersonalRecord, PrivacyError};
use rmsd_core::replica::ReceiptStatus;
use serde::Serialize;

use crate::auth::{verify_request, KEY_HEADER, SIGNATURE_HEADER, TIMESTAMP_HEADER};
use crate::service::{now_ms, Shared};
use crate::types::*;

pub const VALIDATION: &str = "ValidationError";
pub const UNAUTHORIZED: &str = "Unauthorized";
pub const UNKNOWN_ID: &str = "UnknownId";
pub const DUPLICATE_PEER: &str = "DuplicatePeer";
pub const NO_QUORUM: &str = "NoQuorum";
pub const UNAVAILABLE: &str = "Unavailable";
pub const INTERNAL: &str = "Internal";

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, VALIDATION, message)
    }

    fn unauthenticated(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, UNAUTHORIZED, message)
    }

    fn forbidden(message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, UNAUTHORIZED, message)
    }

    fn unknown(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, UNKNOWN_ID, message)
    }

    fn no_quorum() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, NO_QUORUM, "no leader with a reachable majority")
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, INTERNAL, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { code: self.code.into(), message: self.message })).into_response()
    }
}

impl From<ContractError> for ApiError {
    fn from(e: ContractError) -> Self {
        match e {
            ContractError::Unauthorized | ContractError::SelfDemotionForbidden => ApiError::forbidden(e.to_string()),
            ContractError::UnknownId(_) => ApiError::unknown(e.to_string()),
            ContractError::MalformedPayload(_) | ContractError::AlreadyApproved(_) => {
                ApiError::validation(e.to_string())
            }
        }
    }
}

/// Personal-store errors never carry field values, so their text is safe
/// to return.
impl From<PrivacyError> for ApiError {
    fn from(e: PrivacyError) -> Self {
        match e {
            PrivacyError::Unauthorized => ApiError::forbidden(e.to_string()),
            PrivacyError::NotFound => ApiError::unknown(e.to_string()),
            PrivacyError::Validation(_) | PrivacyError::SecretMismatch => ApiError::validation(e.to_string()),
            PrivacyError::Storage(_) => ApiError::internal(e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn accepted<T: Serialize>(body: T) -> Response {
    (StatusCode::ACCEPTED, Json(body)).into_response()
}

pub fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/v1/applications", post(submit_application))
        .route("/v1/approvals", post(submit_approval))
        .route("/v1/admin/roles", post(grant_role))
        .route("/v1/admin/peers", post(add_peer))
        .route("/v1/needs", get(list_needs))
        .route("/v1/needs/{id}", get(get_need))
        .route("/v1/supports", get(list_supports))
        .route("/v1/supports/approved", get(list_approved_supports))
        .route("/v1/supports/{id}", get(get_support))
        .route("/v1/status/{kind}/{id}", get(get_status))
        .route("/v1/tx/{tx_id}", get(get_receipt))
        .route("/v1/chain", get(chain_info))
        .route("/v1/chain/blocks/{height}", get(get_block))
        .route("/v1/accounts/{account}", get(get_account))
        .route("/v1/genesis", get(get_genesis))
        .route("/v1/static-nodes", get(get_static_nodes))
        .route("/v1/personal/{personal_ref}", get(get_personal).delete(delete_personal))
        .with_state(shared)
}

fn live(s: &Shared) -> ApiResult<()> {
    if s.is_stopped() {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, UNAVAILABLE, "node is shutting down"));
    }
    Ok(())
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::validation(format!("invalid request body: {e}")))
}

/// Like [`parse_json`] but never echoes input values, since an application
/// body carries personal data.
fn parse_json_redacted<T: serde::de::DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| {
        let text = e.to_string();
        if text.starts_with("missing field") {
            ApiError::validation(format!("invalid request body: {text}"))
        } else {
            ApiError::validation(format!("invalid request body at line {} column {}", e.line(), e.column()))
        }
    })
}

fn parse_hex<T>(what: &str, s: &str, f: impl FnOnce(&str) -> Result<T, rmsd_core::crypto::HexError>) -> ApiResult<T> {
    f(s).map_err(|e| ApiError::validation(format!("invalid {what}: {e}")))
}

fn authenticate(s: &Shared, headers: &HeaderMap, method: &Method, uri: &Uri, body: &[u8]) -> ApiResult<PublicKey> {
    let h = |name: &str| headers.get(name).and_then(|v| v.to_str().ok());
    verify_request(h(KEY_HEADER), h(TIMESTAMP_HEADER), h(SIGNATURE_HEADER), method.as_str(), uri.path(), body, now_ms())
        .map_err(|e| {
            tracing::debug!(node = %s.id(), error = %e, "request authentication failed");
            ApiError::unauthenticated(e.to_string())
        })
}

/// Waits for a leader, then hands `tx` to the replica.
async fn submit_signed(s: &Shared, tx: Transaction) -> ApiResult<Response> {
    live(s)?;
    tx.verify_signature().map_err(|e| ApiError::unauthenticated(e.to_string()))?;
    if !s.wait_quorum().await {
        return Err(ApiError::no_quorum());
    }
    let receipt = s.with_core(|c, now| c.replica.submit(now, tx));
    Ok(accepted(ReceiptView::from(receipt)))
}

async fn submit_application(State(s): State<Arc<Shared>>, body: Bytes) -> ApiResult<Response> {
    live(&s)?;
    let req: ApplicationRequest = parse_json_redacted(&body)?;
    let p = &req.personal;
    let record = PersonalRecord {
        name: p.name.clone(),
        phone: p.phone.clone(),
        address: p.address.clone(),
        notes: p.notes.clone(),
        collected_at: now_ms(),
        collected_by: s.key().public(),
    };
    record.validate()?;

    // Resolve who signs and which secret names the personal record.
    let (signer, secret, signed_tx) = match &req.signed {
        Some(sa) => {
            let bytes = hex::decode(&sa.personal_secret)
                .ok()
                .and_then(|b| <[u8; 32]>::try_from(b).ok())
                .ok_or_else(|| ApiError::validation("personal_secret must be 32 bytes of hex"))?;
            let payload = req.payload(sha256(&bytes)).map_err(ApiError::validation)?;
            let tx = Transaction::from_parts(sa.tx.sender, sa.tx.nonce, payload, sa.tx.signature);
            tx.verify_signature().map_err(|e| ApiError::unauthenticated(e.to_string()))?;
            (sa.tx.sender, bytes, Some(tx))
        }
        None if s.require_signed_applications => {
            return Err(ApiError::unauthenticated("this node only accepts applications signed by the applicant"));
        }
        None => {
            let mut secret = [0u8; 32];
            s.with_core(|c, _| c.rng.fill_bytes(&mut secret));
            (s.key().public(), secret, None)
        }
    };
    let payload = req.payload(sha256(&secret)).map_err(ApiError::validation)?;
    // Same field rules the contract applies, checked before anything is stored.
    s.with_core(|c, _| {
        let state = &c.replica.committed_state().contract;
        state.clone().execute(&signer, &payload, state.applied_height() + 1).map(|_| ())
    })?;

    if !s.wait_quorum().await {
        return Err(ApiError::no_quorum());
    }
    let key = s.key().clone();
    let view = s.with_core(|c, now| -> ApiResult<ReceiptView> {
        let personal_ref = c.store.put_with_secret(&secret, record)?;
        let tx = match signed_tx {
            Some(tx) => tx,
            None => Transaction::sign(&key, c.replica.next_nonce(&key.public()), payload),
        };
        let receipt = c.replica.submit(now, tx);
        if matches!(receipt.status, ReceiptStatus::Rejected { .. }) {
            c.store.rollback(now, &personal_ref)?;
        } else {
            c.track_application(receipt.tx_id, personal_ref);
        }
        Ok(ReceiptView { personal_ref: Some(personal_ref), ..receipt.into() })
    })?;
    Ok(accepted(view))
}

async fn submit_approval(State(s): State<Arc<Shared>>, body: Bytes) -> ApiResult<Response> {
    let req: ApprovalRequest = parse_json(&body)?;
    submit_signed(&s, req.transaction()).await
}

async fn grant_role(State(s): State<Arc<Shared>>, body: Bytes) -> ApiResult<Response> {
    let req: RoleRequest = parse_json(&body)?;
    submit_signed(&s, req.transaction()).await
}

async fn add_peer(
    State(s): State<Arc<Shared>>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<StaticNodesView>> {
    live(&s)?;
    let caller = authenticate(&s, &headers, &method, &uri, &body)?;
    let req: PeerRequest = parse_json(&body)?;
    s.with_core(|c, _| c.replica.committed_state().contract.require_role(&caller, rmsd_core::contract::Role::Admin))?;
    if !s.wait_quorum().await {
        return Err(ApiError::no_quorum());
    }
    let node = req.node.clone();
    s.with_core(|c, now| c.replica.request_add_peer(now, node)).map_err(|e| match e {
        AddPeerError::DuplicatePeer => ApiError::new(StatusCode::CONFLICT, DUPLICATE_PEER, e.to_string()),
        other => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, NO_QUORUM, other.to_string()),
    })?;
    if !s.wait_member(&req.node.pubkey).await {
        return Err(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            NO_QUORUM,
            "membership change did not commit in time",
        ));
    }
    Ok(Json(StaticNodesView { nodes: s.lock().replica.committed_state().members.clone() }))
}

async fn list_needs(State(s): State<Arc<Shared>>) -> Json<Vec<NeedView>> {
    let c = s.lock();
    Json(c.replica.committed_state().contract.show_needs().iter().map(NeedView::from).collect())
}

async fn get_need(State(s): State<Arc<Shared>>, Path(id): Path<u64>) -> ApiResult<Json<NeedView>> {
    let c = s.lock();
    Ok(Json(c.replica.committed_state().contract.show_need(id)?.into()))
}

async fn list_supports(State(s): State<Arc<Shared>>) -> Json<Vec<SupportView>> {
    let c = s.lock();
    Json(c.replica.committed_state().contract.show_supports().iter().map(SupportView::from).collect())
}

async fn list_approved_supports(State(s): State<Arc<Shared>>) -> Json<Vec<SupportView>> {
    let c = s.lock();
    Json(c.replica.committed_state().contract.show_all_approved_supports().into_iter().map(SupportView::from).collect())
}

async fn get_support(State(s): State<Arc<Shared>>, Path(id): Path<u64>) -> ApiResult<Json<SupportView>> {
    let c = s.lock();
    Ok(Json(c.replica.committed_state().contract.show_support(id)?.into()))
}

async fn get_status(
    State(s): State<Arc<Shared>>,
    Path((kind, id)): Path<(String, u64)>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
) -> ApiResult<Json<StatusView>> {
    let caller = authenticate(&s, &headers, &method, &uri, b"")?;
    let kind: RecordKind = kind.parse().map_err(ApiError::validation)?;
    let c = s.lock();
    let contract = &c.replica.committed_state().contract;
    let status = match kind {
        RecordKind::Need => contract.show_need_status(&caller, id)?,
        RecordKind::Support => contract.show_support_status(&caller, id)?,
    };
    Ok(Json(StatusView { kind, id, status: status.into() }))
}

async fn get_receipt(State(s): State<Arc<Shared>>, Path(tx_id): Path<String>) -> ApiResult<Json<ReceiptView>> {
    let tx_id = parse_hex("transaction id", &tx_id, Digest::from_hex)?;
    let receipt = s.lock().replica.receipt(&tx_id);
    receipt.map(|r| Json(r.into())).ok_or_else(|| ApiError::unknown("unknown transaction"))
}

async fn chain_info(State(s): State<Arc<Shared>>) -> Json<ChainInfo> {
    let c = s.lock();
    let raft = c.replica.raft();
    let state = c.replica.committed_state();
    let tip = c.replica.committed_blocks().last().expect("genesis is always committed");
    Json(ChainInfo {
        node: s.id().clone(),
        height: tip.height,
        tip_hash: tip.block_hash,
        state_digest: state.contract.digest(),
        term: raft.current_term(),
        leader_hint: raft.leader_hint().cloned(),
        peer_count: state.members.iter().filter(|m| m.pubkey != s.key().public()).count(),
        members: state.members.clone(),
    })
}

async fn get_block(State(s): State<Arc<Shared>>, Path(height): Path<u64>) -> ApiResult<Json<BlockView>> {
    let c = s.lock();
    let block = c
        .replica
        .committed_blocks()
        .get(height as usize)
        .ok_or_else(|| ApiError::unknown(format!("no committed block at height {height}")))?;
    Ok(Json(block.into()))
}

async fn get_account(State(s): State<Arc<Shared>>, Path(account): Path<String>) -> ApiResult<Json<AccountView>> {
    let account = parse_hex("account", &account, PublicKey::from_hex)?;
    let c = s.lock();
    Ok(Json(AccountView {
        account,
        role: c.replica.committed_state().contract.get_user_auth(&account),
        next_nonce: c.replica.next_nonce(&account),
    }))
}

async fn get_genesis(State(s): State<Arc<Shared>>) -> Json<GenesisView> {
    let c = s.lock();
    let g = &c.replica.raft().log()[0];
    Json(GenesisView { canonical: hex::encode(g.canonical_bytes()), block_hash: g.block_hash })
}

async fn get_static_nodes(State(s): State<Arc<Shared>>) -> Json<StaticNodesView> {
    Json(StaticNodesView { nodes: s.lock().replica.committed_state().members.clone() })
}

async fn get_personal(
    State(s): State<Arc<Shared>>,
    Path(personal_ref): Path<String>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
) -> ApiResult<Json<PersonalView>> {
    let caller = authenticate(&s, &headers, &method, &uri, b"")?;
    let personal_ref = parse_hex("personal reference", &personal_ref, Digest::from_hex)?;
    let mut c = s.lock();
    let contract = c.replica.committed_state().contract.clone();
    let r = c.store.get(now_ms(), &caller, &personal_ref, &contract)?;
    Ok(Json(PersonalView {
        personal_ref,
        name: r.name,
        phone: r.phone,
        address: r.address,
        notes: r.notes,
        collected_at: r.collected_at,
        collected_by: r.collected_by,
    }))
}

async fn delete_personal(
    State(s): State<Arc<Shared>>,
    Path(personal_ref): Path<String>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
) -> ApiResult<StatusCode> {
    let caller = authenticate(&s, &headers, &method, &uri, b"")?;
    let personal_ref = parse_hex("personal reference", &personal_ref, Digest::from_hex)?;
    let mut c = s.lock();
    let contract = c.replica.committed_state().contract.clone();
    c.store.delete(now_ms(), &caller, &personal_ref, &contract)?;
    Ok(StatusCode::NO_CONTENT)
}
