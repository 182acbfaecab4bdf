use thiserror::Error;

use crate::node_id::{NodeId, NodeIdError};

#[derive(Debug, Error)]
pub enum StaticNodesError {
    #[error("static-nodes file is not a JSON array of strings: {0}")]
    Json(#[from] serde_json::Error),
    #[error("entry {index}: {source}")]
    Entry { index: usize, source: NodeIdError },
    #[error("duplicate public key {0}")]
    DuplicatePubkey(String),
}

/// The shared membership file: a JSON array of rendered node URIs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StaticNodes {
    nodes: Vec<NodeId>,
}

impl StaticNodes {
    pub fn new(nodes: Vec<NodeId>) -> Result<Self, StaticNodesError> {
        for (i, n) in nodes.iter().enumerate() {
            if nodes[..i].iter().any(|o| o.pubkey == n.pubkey) {
                return Err(StaticNodesError::DuplicatePubkey(n.pubkey.to_hex()));
            }
        }
        Ok(StaticNodes { nodes })
    }

    pub fn parse(json: &str) -> Result<Self, StaticNodesError> {
        let raw: Vec<String> = serde_json::from_str(json)?;
        let nodes = raw
            .iter()
            .enumerate()
            .map(|(index, s)| s.parse().map_err(|source| StaticNodesError::Entry { index, source }))
            .collect::<Result<Vec<NodeId>, _>>()?;
        StaticNodes::new(nodes)
    }

    /// Two-space indented array with a trailing newline.
    pub fn render(&self) -> String {
        let raw: Vec<String> = self.nodes.iter().map(NodeId::render).collect();
        let mut out = serde_json::to_string_pretty(&raw).expect("strings always serialize");
        out.push('\n');
        out
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn into_nodes(self) -> Vec<NodeId> {
        self.nodes
    }
}
