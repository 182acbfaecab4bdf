use serde::Serialize;
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::contract::{ContractError, ContractState, Effect, Role};
use crate::crypto::{sha256, Account, Digest, Keypair, PublicKey, Signature};

pub const TAG_SET_USER: u8 = 0x01;
pub const TAG_CREATE_NEED: u8 = 0x02;
pub const TAG_CREATE_SUPPORT: u8 = 0x03;
pub const TAG_APPROVE_NEED: u8 = 0x04;
pub const TAG_APPROVE_SUPPORT: u8 = 0x05;

/// One contract operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    SetUser { target: Account, role: Role },
    CreateNeed { kind: String, amount: u64, unit: String, personal_ref: Digest },
    CreateSupport { kind: String, amount: u64, unit: String, shipping: String, personal_ref: Digest },
    ApproveNeed { need_id: u64 },
    ApproveSupport { support_id: u64 },
}

impl Payload {
    pub fn tag(&self) -> u8 {
        match self {
            Payload::SetUser { .. } => TAG_SET_USER,
            Payload::CreateNeed { .. } => TAG_CREATE_NEED,
            Payload::CreateSupport { .. } => TAG_CREATE_SUPPORT,
            Payload::ApproveNeed { .. } => TAG_APPROVE_NEED,
            Payload::ApproveSupport { .. } => TAG_APPROVE_SUPPORT,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Payload::SetUser { .. } => "SetUser",
            Payload::CreateNeed { .. } => "CreateNeed",
            Payload::CreateSupport { .. } => "CreateSupport",
            Payload::ApproveNeed { .. } => "ApproveNeed",
            Payload::ApproveSupport { .. } => "ApproveSupport",
        }
    }

    pub fn encode(&self, w: &mut Writer) {
        w.u8(self.tag());
        match self {
            Payload::SetUser { target, role } => {
                w.key(target).u8(role.code());
            }
            Payload::CreateNeed { kind, amount, unit, personal_ref } => {
                w.str(kind).u64(*amount).str(unit).digest(personal_ref);
            }
            Payload::CreateSupport { kind, amount, unit, shipping, personal_ref } => {
                w.str(kind).u64(*amount).str(unit).str(shipping).digest(personal_ref);
            }
            Payload::ApproveNeed { need_id } => {
                w.u64(*need_id);
            }
            Payload::ApproveSupport { support_id } => {
                w.u64(*support_id);
            }
        }
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.u8()? {
            TAG_SET_USER => {
                let target = r.key()?;
                let code = r.u8()?;
                let role = Role::from_code(code).ok_or(DecodeError::UnknownTag { what: "role", tag: code })?;
                Payload::SetUser { target, role }
            }
            TAG_CREATE_NEED => Payload::CreateNeed {
                kind: r.string()?,
                amount: r.u64()?,
                unit: r.string()?,
                personal_ref: r.digest()?,
            },
            TAG_CREATE_SUPPORT => Payload::CreateSupport {
                kind: r.string()?,
                amount: r.u64()?,
                unit: r.string()?,
                shipping: r.string()?,
                personal_ref: r.digest()?,
            },
            TAG_APPROVE_NEED => Payload::ApproveNeed { need_id: r.u64()? },
            TAG_APPROVE_SUPPORT => Payload::ApproveSupport { support_id: r.u64()? },
            tag => return Err(DecodeError::UnknownTag { what: "payload", tag }),
        })
    }
}

/// Why a transaction cannot be applied. Codes are stable strings used in receipts.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum TxRejection {
    #[error("tx_id does not match the transaction body")]
    BadTxId,
    #[error("signature does not verify against sender")]
    BadSignature,
    #[error("nonce {got}, expected {expected}")]
    BadNonce { expected: u64, got: u64 },
    #[error("caller lacks the required role")]
    Unauthorized,
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("unknown id {0}")]
    UnknownId(u64),
    #[error("record {0} already approved")]
    AlreadyApproved(u64),
    #[error("the last admin cannot give up the admin role")]
    SelfDemotionForbidden,
}

impl TxRejection {
    pub fn code(&self) -> &'static str {
        match self {
            TxRejection::BadTxId => "BadTxId",
            TxRejection::BadSignature => "BadSignature",
            TxRejection::BadNonce { .. } => "BadNonce",
            TxRejection::Unauthorized => "Unauthorized",
            TxRejection::MalformedPayload(_) => "MalformedPayload",
            TxRejection::UnknownId(_) => "UnknownId",
            TxRejection::AlreadyApproved(_) => "AlreadyApproved",
            TxRejection::SelfDemotionForbidden => "SelfDemotionForbidden",
        }
    }

    /// A nonce ahead of the sender's counter may become valid once the
    /// missing transactions commit.
    pub fn is_future_nonce(&self) -> bool {
        matches!(self, TxRejection::BadNonce { expected, got } if got > expected)
    }
}

impl From<ContractError> for TxRejection {
    fn from(e: ContractError) -> Self {
        match e {
            ContractError::Unauthorized => TxRejection::Unauthorized,
            ContractError::SelfDemotionForbidden => TxRejection::SelfDemotionForbidden,
            ContractError::MalformedPayload(m) => TxRejection::MalformedPayload(m),
            ContractError::UnknownId(id) => TxRejection::UnknownId(id),
            ContractError::AlreadyApproved(id) => TxRejection::AlreadyApproved(id),
        }
    }
}

/// A signed contract operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub tx_id: Digest,
    pub sender: PublicKey,
    pub nonce: u64,
    pub payload: Payload,
    pub signature: Signature,
}

pub fn body_bytes(sender: &PublicKey, nonce: u64, payload: &Payload) -> Vec<u8> {
    let mut w = Writer::new();
    w.key(sender).u64(nonce);
    payload.encode(&mut w);
    w.finish()
}

impl Transaction {
    pub fn sign(key: &Keypair, nonce: u64, payload: Payload) -> Self {
        let sender = key.public();
        let body = body_bytes(&sender, nonce, &payload);
        Transaction { tx_id: sha256(&body), sender, nonce, signature: key.sign(&body), payload }
    }

    /// Assembles a transaction whose signature was produced elsewhere.
    pub fn from_parts(sender: PublicKey, nonce: u64, payload: Payload, signature: Signature) -> Self {
        let tx_id = sha256(&body_bytes(&sender, nonce, &payload));
        Transaction { tx_id, sender, nonce, payload, signature }
    }

    pub fn body_bytes(&self) -> Vec<u8> {
        body_bytes(&self.sender, self.nonce, &self.payload)
    }

    pub fn compute_id(&self) -> Digest {
        sha256(&self.body_bytes())
    }

    /// `tx_id | sender | nonce | payload | signature`.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.finish()
    }

    pub fn encode(&self, w: &mut Writer) {
        w.digest(&self.tx_id).key(&self.sender).u64(self.nonce);
        self.payload.encode(w);
        w.sig(&self.signature);
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Transaction {
            tx_id: r.digest()?,
            sender: r.key()?,
            nonce: r.u64()?,
            payload: Payload::decode(r)?,
            signature: r.sig()?,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let tx = Transaction::decode(&mut r)?;
        r.finish()?;
        Ok(tx)
    }

    pub fn verify_signature(&self) -> Result<(), TxRejection> {
        let body = self.body_bytes();
        if sha256(&body) != self.tx_id {
            return Err(TxRejection::BadTxId);
        }
        if !self.sender.verify(&body, &self.signature) {
            return Err(TxRejection::BadSignature);
        }
        Ok(())
    }
}

fn check_shape(payload: &Payload) -> Result<(), TxRejection> {
    // Run the creation validators against a scratch state so the shape rules
    // live in exactly one place.
    let mut scratch = ContractState::default();
    let nobody = PublicKey::default();
    match payload {
        Payload::CreateNeed { kind, amount, unit, personal_ref } => {
            scratch.create_need(&nobody, kind, *amount, unit, *personal_ref, 0)?;
        }
        Payload::CreateSupport { kind, amount, unit, shipping, personal_ref } => {
            scratch.create_support(&nobody, kind, *amount, unit, shipping, *personal_ref, 0)?;
        }
        _ => {}
    }
    Ok(())
}

/// Signature, nonce, payload shape and role checks against `state`.
pub fn verify_transaction(tx: &Transaction, state: &ContractState) -> Result<(), TxRejection> {
    tx.verify_signature()?;
    verify_unsigned(tx, state)
}

fn verify_unsigned(tx: &Transaction, state: &ContractState) -> Result<(), TxRejection> {
    let expected = state.expected_nonce(&tx.sender);
    if tx.nonce != expected {
        return Err(TxRejection::BadNonce { expected, got: tx.nonce });
    }
    check_shape(&tx.payload)?;
    state.authorize(&tx.sender, &tx.payload)?;
    Ok(())
}

/// Whether [`apply_transaction`] re-checks signatures. Blocks already
/// verified once may be replayed without them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigCheck {
    Verify,
    Skip,
}

/// Verifies and executes `tx` at block `height`, advancing the sender's
/// nonce. On error `state` is unchanged.
pub fn apply_transaction(
    state: &mut ContractState,
    tx: &Transaction,
    height: u64,
    sigs: SigCheck,
) -> Result<Effect, TxRejection> {
    match sigs {
        SigCheck::Verify => verify_transaction(tx, state)?,
        SigCheck::Skip => verify_unsigned(tx, state)?,
    }
    let effect = state.execute(&tx.sender, &tx.payload, height)?;
    state.bump_nonce(&tx.sender);
    Ok(effect)
}
