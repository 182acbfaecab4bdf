use serde::{Deserialize, Serialize};

use crate::codec::Writer;
use crate::crypto::{Account, Digest};

/// Lifecycle of needs and supports. The only transition is
/// `WaitingApproval -> Approved`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    WaitingApproval,
    Approved,
}

impl Status {
    pub const ALL: [Status; 2] = [Status::WaitingApproval, Status::Approved];

    pub fn code(self) -> u8 {
        match self {
            Status::WaitingApproval => 0,
            Status::Approved => 1,
        }
    }

    pub fn need_label(self) -> &'static str {
        match self {
            Status::WaitingApproval => "waiting for confirmation",
            Status::Approved => "approved",
        }
    }

    pub fn support_label(self) -> &'static str {
        match self {
            Status::WaitingApproval => "waiting for approval",
            Status::Approved => "approved",
        }
    }

    pub fn from_need_label(s: &str) -> Option<Status> {
        Status::ALL.into_iter().find(|st| st.need_label() == s)
    }

    pub fn from_support_label(s: &str) -> Option<Status> {
        Status::ALL.into_iter().find(|st| st.support_label() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedRecord {
    pub need_id: u64,
    pub kind: String,
    pub amount: u64,
    pub unit: String,
    pub creator: Account,
    pub status: Status,
    pub personal_ref: Digest,
    pub approved_by: Option<Account>,
    pub created_at: u64,
    pub approved_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportRecord {
    pub support_id: u64,
    pub kind: String,
    pub amount: u64,
    pub unit: String,
    pub shipping: String,
    pub creator: Account,
    pub status: Status,
    pub personal_ref: Digest,
    pub approved_by: Option<Account>,
    pub created_at: u64,
    pub approved_at: Option<u64>,
}

fn write_approval(w: &mut Writer, by: &Option<Account>, at: Option<u64>) {
    match (by, at) {
        (Some(by), Some(at)) => {
            w.u8(1).key(by).u64(at);
        }
        _ => {
            w.u8(0);
        }
    }
}

impl NeedRecord {
    pub fn status_label(&self) -> &'static str {
        self.status.need_label()
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.u64(self.need_id)
            .str(&self.kind)
            .u64(self.amount)
            .str(&self.unit)
            .key(&self.creator)
            .u8(self.status.code())
            .digest(&self.personal_ref)
            .u64(self.created_at);
        write_approval(w, &self.approved_by, self.approved_at);
    }
}

impl SupportRecord {
    pub fn status_label(&self) -> &'static str {
        self.status.support_label()
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.u64(self.support_id)
            .str(&self.kind)
            .u64(self.amount)
            .str(&self.unit)
            .str(&self.shipping)
            .key(&self.creator)
            .u8(self.status.code())
            .digest(&self.personal_ref)
            .u64(self.created_at);
        write_approval(w, &self.approved_by, self.approved_at);
    }
}
