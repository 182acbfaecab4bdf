//! Core of a permissioned ledger for coordinating disaster relief between
//! NGOs: the hash-linked ledger, the role-checked contract engine, the RAFT
//! consensus core, the off-chain personal-data store, and a deterministic
//! simulator that exercises them together.

pub mod codec;
pub mod consensus;
pub mod contract;
pub mod crypto;
pub mod ledger;
pub mod node_id;
pub mod privacy;
pub mod replica;
pub mod sim;
