//! The ledger node: consensus over TCP, block storage, the privacy store and
//! the HTTP API, plus a typed client for that API.

pub mod api;
pub mod auth;
pub mod client;
pub mod cluster;
pub mod service;
pub mod storage;
pub mod transport;
pub mod types;
pub mod wire;

pub use client::{Client, ClientError};
pub use service::{Node, NodeConfig, NodeError};
