//! Typed client for the node HTTP API.

use std::time::Duration;

use reqwest::{Method, StatusCode};
use rmsd_core::crypto::{Digest, Keypair, PublicKey};
use rmsd_core::node_id::NodeId;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::auth::sign_request;
use crate::service::now_ms;
use crate::types::*;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{code}: {message}")]
    Api { status: u16, code: String, message: String },
    #[error("node unreachable: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Decode(String),
    #[error("timed out waiting for the receipt")]
    Timeout,
}

impl ClientError {
    /// The API error code, if the node answered with one.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { code, .. } => Some(code),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is `http://host:port`; a bare `host:port` is accepted too.
    pub fn new(base: &str) -> Client {
        let base = base.trim_end_matches('/');
        let base = if base.contains("://") { base.to_string() } else { format!("http://{base}") };
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .expect("http client builds without TLS configuration");
        Client { base, http }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn send(
        &self,
        method: Method,
        path: &str,
        body: Option<Vec<u8>>,
        key: Option<&Keypair>,
    ) -> Result<(StatusCode, Vec<u8>), ClientError> {
        let mut req = self.http.request(method.clone(), format!("{}{}", self.base, path));
        let bytes = body.unwrap_or_default();
        if let Some(key) = key {
            for (name, value) in sign_request(key, method.as_str(), path, &bytes, now_ms()) {
                req = req.header(name, value);
            }
        }
        if !bytes.is_empty() {
            req = req.header("content-type", "application/json").body(bytes);
        }
        let resp = req.send().await.map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.bytes().await.map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok((status, body.to_vec()))
    }

    async fn call<T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<Vec<u8>>,
        key: Option<&Keypair>,
    ) -> Result<T, ClientError> {
        let (status, bytes) = self.send(method, path, body, key).await?;
        if !status.is_success() {
            return Err(match serde_json::from_slice::<ErrorBody>(&bytes) {
                Ok(e) => ClientError::Api { status: status.as_u16(), code: e.code, message: e.message },
                Err(_) => ClientError::Decode(format!("HTTP {status}: {}", String::from_utf8_lossy(&bytes))),
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        self.call(Method::GET, path, None, None).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
        key: Option<&Keypair>,
    ) -> Result<T, ClientError> {
        let bytes = serde_json::to_vec(body).expect("request bodies always serialize");
        self.call(Method::POST, path, Some(bytes), key).await
    }

    /// Raw GET, for byte-level comparisons between nodes.
    pub async fn get_raw(&self, path: &str) -> Result<(u16, Vec<u8>), ClientError> {
        let (status, body) = self.send(Method::GET, path, None, None).await?;
        Ok((status.as_u16(), body))
    }

    pub async fn submit_application(&self, req: &ApplicationRequest) -> Result<ReceiptView, ClientError> {
        self.post("/v1/applications", req, None).await
    }

    pub async fn submit_approval(&self, req: &ApprovalRequest) -> Result<ReceiptView, ClientError> {
        self.post("/v1/approvals", req, None).await
    }

    pub async fn grant_role(&self, req: &RoleRequest) -> Result<ReceiptView, ClientError> {
        self.post("/v1/admin/roles", req, None).await
    }

    pub async fn add_peer(&self, admin: &Keypair, node: &NodeId) -> Result<StaticNodesView, ClientError> {
        self.post("/v1/admin/peers", &PeerRequest { node: node.clone() }, Some(admin)).await
    }

    pub async fn needs(&self) -> Result<Vec<NeedView>, ClientError> {
        self.get("/v1/needs").await
    }

    pub async fn need(&self, id: u64) -> Result<NeedView, ClientError> {
        self.get(&format!("/v1/needs/{id}")).await
    }

    pub async fn supports(&self) -> Result<Vec<SupportView>, ClientError> {
        self.get("/v1/supports").await
    }

    pub async fn approved_supports(&self) -> Result<Vec<SupportView>, ClientError> {
        self.get("/v1/supports/approved").await
    }

    pub async fn support(&self, id: u64) -> Result<SupportView, ClientError> {
        self.get(&format!("/v1/supports/{id}")).await
    }

    /// Status lookups are signed with `key`; without one the request goes
    /// out unsigned and the node refuses it.
    pub async fn status(&self, key: Option<&Keypair>, kind: RecordKind, id: u64) -> Result<StatusView, ClientError> {
        let kind = match kind {
            RecordKind::Need => "need",
            RecordKind::Support => "support",
        };
        self.call(Method::GET, &format!("/v1/status/{kind}/{id}"), None, key).await
    }

    pub async fn receipt(&self, tx_id: &Digest) -> Result<ReceiptView, ClientError> {
        self.get(&format!("/v1/tx/{}", tx_id.to_hex())).await
    }

    /// Polls until the receipt is committed or rejected.
    pub async fn wait_receipt(&self, tx_id: &Digest, timeout: Duration) -> Result<ReceiptView, ClientError> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            match self.receipt(tx_id).await {
                Ok(r) if r.status.is_final() => return Ok(r),
                Ok(_) => {}
                Err(ClientError::Transport(_)) if tokio::time::Instant::now() < deadline => {}
                Err(e) => return Err(e),
            }
            if tokio::time::Instant::now() >= deadline {
                return Err(ClientError::Timeout);
            }
            tokio::time::sleep(Duration::from_millis(25)).await;
        }
    }

    pub async fn chain(&self) -> Result<ChainInfo, ClientError> {
        self.get("/v1/chain").await
    }

    pub async fn block(&self, height: u64) -> Result<BlockView, ClientError> {
        self.get(&format!("/v1/chain/blocks/{height}")).await
    }

    pub async fn account(&self, account: &PublicKey) -> Result<AccountView, ClientError> {
        self.get(&format!("/v1/accounts/{}", account.to_hex())).await
    }

    pub async fn genesis(&self) -> Result<GenesisView, ClientError> {
        self.get("/v1/genesis").await
    }

    pub async fn static_nodes(&self) -> Result<StaticNodesView, ClientError> {
        self.get("/v1/static-nodes").await
    }

    pub async fn personal(&self, key: &Keypair, personal_ref: &Digest) -> Result<PersonalView, ClientError> {
        self.call(Method::GET, &format!("/v1/personal/{}", personal_ref.to_hex()), None, Some(key)).await
    }

    pub async fn delete_personal(&self, key: &Keypair, personal_ref: &Digest) -> Result<(), ClientError> {
        let path = format!("/v1/personal/{}", personal_ref.to_hex());
        let (status, bytes) = self.send(Method::DELETE, &path, None, Some(key)).await?;
        if status.is_success() {
            return Ok(());
        }
        Err(match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(e) => ClientError::Api { status: status.as_u16(), code: e.code, message: e.message },
            Err(_) => ClientError::Decode(format!("HTTP {status}")),
        })
    }
}
