//! Node identities rendered as `rnode://<pubkey>@<host>:<port>?raftport=<port>`.

use std::fmt;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::crypto::PublicKey;

pub const SCHEME: &str = "rnode://";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NodeIdError {
    #[error("missing `{SCHEME}` prefix")]
    Scheme,
    #[error("public key must be 64 lowercase hex characters")]
    PublicKey,
    #[error("malformed host")]
    Host,
    #[error("malformed {0} port")]
    Port(&'static str),
    #[error("missing `?raftport=` parameter")]
    RaftPort,
}

/// Identity and addresses of one consensus node. `port` is the node's HTTP
/// API port, `raftport` the port consensus traffic uses.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub pubkey: PublicKey,
    pub host: String,
    pub port: u16,
    pub raftport: u16,
}

impl NodeId {
    pub fn new(pubkey: PublicKey, host: impl Into<String>, port: u16, raftport: u16) -> Self {
        NodeId { pubkey, host: host.into(), port, raftport }
    }

    pub fn render(&self) -> String {
        format!("{SCHEME}{}@{}:{}?raftport={}", self.pubkey.to_hex(), self.host, self.port, self.raftport)
    }

    pub fn api_addr(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }

    pub fn raft_addr(&self) -> String {
        format!("{}:{}", self.host, self.raftport)
    }
}

fn parse_port(s: &str, which: &'static str) -> Result<u16, NodeIdError> {
    // Leading zeros or signs would not survive a render round trip.
    let canonical = !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) && (s == "0" || !s.starts_with('0'));
    if !canonical {
        return Err(NodeIdError::Port(which));
    }
    s.parse().map_err(|_| NodeIdError::Port(which))
}

impl FromStr for NodeId {
    type Err = NodeIdError;

    fn from_str(s: &str) -> Result<Self, NodeIdError> {
        let rest = s.strip_prefix(SCHEME).ok_or(NodeIdError::Scheme)?;
        let (key, rest) = rest.split_once('@').ok_or(NodeIdError::PublicKey)?;
        if key.len() != 64 || !key.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(NodeIdError::PublicKey);
        }
        let pubkey = PublicKey::from_hex(key).map_err(|_| NodeIdError::PublicKey)?;
        let (addr, query) = rest.split_once('?').ok_or(NodeIdError::RaftPort)?;
        let (host, port) = addr.rsplit_once(':').ok_or(NodeIdError::Host)?;
        if host.is_empty() || host.contains(['@', '/', '?', ':', '#', ' ']) {
            return Err(NodeIdError::Host);
        }
        let raftport = query.strip_prefix("raftport=").ok_or(NodeIdError::RaftPort)?;
        Ok(NodeId {
            pubkey,
            host: host.to_owned(),
            port: parse_port(port, "api")?,
            raftport: parse_port(raftport, "raft")?,
        })
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({}@{}:{}/{})", &self.pubkey.to_hex()[..8], self.host, self.port, self.raftport)
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}
