//! Deterministic contract state machine: role management, need and support
//! lifecycles, and the read-side listings.

mod records;
mod role;
mod state;

pub use records::{NeedRecord, Status, SupportRecord};
pub use role::Role;
pub use state::{ContractError, ContractState, Effect, MAX_KIND_LEN, MAX_SHIPPING_LEN, MAX_UNIT_LEN};
