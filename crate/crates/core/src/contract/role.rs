use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::crypto::{sha256, Digest};

/// Account roles. Every account has exactly one; accounts never granted a role
/// hold `None`, which still permits need/support creation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    None,
    Admin,
    Checker,
    Creator,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::None, Role::Admin, Role::Checker, Role::Creator];

    pub fn code(self) -> u8 {
        match self {
            Role::None => 0,
            Role::Admin => 1,
            Role::Checker => 2,
            Role::Creator => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Role> {
        Role::ALL.into_iter().find(|r| r.code() == code)
    }

    /// Label hashed by [`Role::digest`].
    pub fn label(self) -> &'static str {
        match self {
            Role::None => "NONE",
            Role::Admin => "ADMIN",
            Role::Checker => "CHECKER",
            Role::Creator => "CREATOR",
        }
    }

    pub fn digest(self) -> Digest {
        sha256(self.label().as_bytes())
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label().to_ascii_lowercase())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Role::ALL.into_iter().find(|r| r.label().eq_ignore_ascii_case(s)).ok_or_else(|| format!("unknown role `{s}`"))
    }
}
