//! RAFT consensus over blocks, plus the static-nodes membership file.

mod message;
mod raft;
mod static_nodes;

pub use crate::node_id::{NodeId, NodeIdError};
pub use message::{Envelope, Message};
pub use raft::{AddPeerError, HardState, ProposeError, RaftConfig, RaftNode, RaftRole};
pub use static_nodes::{StaticNodes, StaticNodesError};
