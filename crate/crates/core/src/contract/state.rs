use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use super::records::{NeedRecord, Status, SupportRecord};
use super::role::Role;
use crate::codec::Writer;
use crate::crypto::{sha256, Account, Digest};
use crate::ledger::Payload;

pub const MAX_KIND_LEN: usize = 128;
pub const MAX_UNIT_LEN: usize = 32;
pub const MAX_SHIPPING_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "code", content = "detail")]
pub enum ContractError {
    #[error("caller lacks the required role")]
    Unauthorized,
    #[error("the last admin cannot give up the admin role")]
    SelfDemotionForbidden,
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("unknown id {0}")]
    UnknownId(u64),
    #[error("record {0} is already approved")]
    AlreadyApproved(u64),
}

/// What a successfully applied payload did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Effect {
    RoleSet { target: Account, role: Role },
    NeedCreated(u64),
    SupportCreated(u64),
    NeedApproved(u64),
    SupportApproved(u64),
}

/// The replicated application state. Ids are dense: need `i` lives at
/// `needs[i]`, so the next id is always the list length.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContractState {
    roles: BTreeMap<Account, Role>,
    next_nonce: BTreeMap<Account, u64>,
    needs: Vec<NeedRecord>,
    supports: Vec<SupportRecord>,
    applied_height: u64,
}

fn check_text(field: &str, value: &str, max: usize, required: bool) -> Result<(), ContractError> {
    if required && value.trim().is_empty() {
        return Err(ContractError::MalformedPayload(format!("{field} must not be empty")));
    }
    if value.len() > max {
        return Err(ContractError::MalformedPayload(format!("{field} longer than {max} bytes")));
    }
    Ok(())
}

fn check_amount(amount: u64) -> Result<(), ContractError> {
    if amount == 0 {
        return Err(ContractError::MalformedPayload("amount must be positive".into()));
    }
    Ok(())
}

impl ContractState {
    pub fn genesis_state(first_admin: Account) -> Self {
        let mut s = ContractState::default();
        s.roles.insert(first_admin, Role::Admin);
        s
    }

    pub fn applied_height(&self) -> u64 {
        self.applied_height
    }

    pub(crate) fn set_applied_height(&mut self, height: u64) {
        self.applied_height = height;
    }

    pub fn get_user_auth(&self, account: &Account) -> Role {
        self.roles.get(account).copied().unwrap_or(Role::None)
    }

    pub fn roles(&self) -> impl Iterator<Item = (&Account, Role)> {
        self.roles.iter().map(|(a, r)| (a, *r))
    }

    pub fn admin_count(&self) -> usize {
        self.roles.values().filter(|r| **r == Role::Admin).count()
    }

    /// Compares role digests rather than the enum values themselves.
    pub fn require_role(&self, account: &Account, needed: Role) -> Result<(), ContractError> {
        if self.get_user_auth(account).digest() == needed.digest() {
            Ok(())
        } else {
            Err(ContractError::Unauthorized)
        }
    }

    /// Nonce the next transaction from `account` must carry.
    pub fn expected_nonce(&self, account: &Account) -> u64 {
        self.next_nonce.get(account).copied().unwrap_or(0)
    }

    pub(crate) fn bump_nonce(&mut self, account: &Account) {
        let next = self.expected_nonce(account) + 1;
        self.next_nonce.insert(*account, next);
    }

    /// Role check for a payload before any state-dependent validation.
    /// Creation is open to every account.
    pub fn authorize(&self, sender: &Account, payload: &Payload) -> Result<(), ContractError> {
        match payload {
            Payload::SetUser { .. } => self.require_role(sender, Role::Admin),
            Payload::CreateNeed { .. } | Payload::CreateSupport { .. } => Ok(()),
            Payload::ApproveNeed { .. } | Payload::ApproveSupport { .. } => self.require_role(sender, Role::Checker),
        }
    }

    /// Applies one payload at block `height`. On error the state is untouched.
    pub fn execute(&mut self, sender: &Account, payload: &Payload, height: u64) -> Result<Effect, ContractError> {
        match payload {
            Payload::SetUser { target, role } => {
                self.set_user(sender, target, *role)?;
                Ok(Effect::RoleSet { target: *target, role: *role })
            }
            Payload::CreateNeed { kind, amount, unit, personal_ref } => {
                self.create_need(sender, kind, *amount, unit, *personal_ref, height).map(Effect::NeedCreated)
            }
            Payload::CreateSupport { kind, amount, unit, shipping, personal_ref } => self
                .create_support(sender, kind, *amount, unit, shipping, *personal_ref, height)
                .map(Effect::SupportCreated),
            Payload::ApproveNeed { need_id } => {
                self.approve_need(sender, *need_id, height)?;
                Ok(Effect::NeedApproved(*need_id))
            }
            Payload::ApproveSupport { support_id } => {
                self.approve_support(sender, *support_id, height)?;
                Ok(Effect::SupportApproved(*support_id))
            }
        }
    }

    pub fn set_user(&mut self, caller: &Account, target: &Account, role: Role) -> Result<(), ContractError> {
        self.require_role(caller, Role::Admin)?;
        if role != Role::Admin && self.get_user_auth(target) == Role::Admin && self.admin_count() == 1 {
            // Only the sole admin can reach here with itself as target.
            return Err(ContractError::SelfDemotionForbidden);
        }
        match role {
            Role::None => self.roles.remove(target),
            r => self.roles.insert(*target, r),
        };
        Ok(())
    }

    pub fn create_need(
        &mut self,
        caller: &Account,
        kind: &str,
        amount: u64,
        unit: &str,
        personal_ref: Digest,
        height: u64,
    ) -> Result<u64, ContractError> {
        check_text("kind", kind, MAX_KIND_LEN, true)?;
        check_amount(amount)?;
        check_text("unit", unit, MAX_UNIT_LEN, false)?;
        let need_id = self.needs.len() as u64;
        self.needs.push(NeedRecord {
            need_id,
            kind: kind.to_owned(),
            amount,
            unit: unit.to_owned(),
            creator: *caller,
            status: Status::WaitingApproval,
            personal_ref,
            approved_by: None,
            created_at: height,
            approved_at: None,
        });
        Ok(need_id)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn create_support(
        &mut self,
        caller: &Account,
        kind: &str,
        amount: u64,
        unit: &str,
        shipping: &str,
        personal_ref: Digest,
        height: u64,
    ) -> Result<u64, ContractError> {
        check_text("kind", kind, MAX_KIND_LEN, true)?;
        check_amount(amount)?;
        check_text("unit", unit, MAX_UNIT_LEN, false)?;
        check_text("shipping", shipping, MAX_SHIPPING_LEN, true)?;
        let support_id = self.supports.len() as u64;
        self.supports.push(SupportRecord {
            support_id,
            kind: kind.to_owned(),
            amount,
            unit: unit.to_owned(),
            shipping: shipping.to_owned(),
            creator: *caller,
            status: Status::WaitingApproval,
            personal_ref,
            approved_by: None,
            created_at: height,
            approved_at: None,
        });
        Ok(support_id)
    }

    pub fn approve_need(&mut self, caller: &Account, need_id: u64, height: u64) -> Result<(), ContractError> {
        self.require_role(caller, Role::Checker)?;
        let rec = usize::try_from(need_id)
            .ok()
            .and_then(|i| self.needs.get_mut(i))
            .ok_or(ContractError::UnknownId(need_id))?;
        if rec.status == Status::Approved {
            return Err(ContractError::AlreadyApproved(need_id));
        }
        rec.status = Status::Approved;
        rec.approved_by = Some(*caller);
        rec.approved_at = Some(height);
        Ok(())
    }

    pub fn approve_support(&mut self, caller: &Account, support_id: u64, height: u64) -> Result<(), ContractError> {
        self.require_role(caller, Role::Checker)?;
        let rec = usize::try_from(support_id)
            .ok()
            .and_then(|i| self.supports.get_mut(i))
            .ok_or(ContractError::UnknownId(support_id))?;
        if rec.status == Status::Approved {
            return Err(ContractError::AlreadyApproved(support_id));
        }
        rec.status = Status::Approved;
        rec.approved_by = Some(*caller);
        rec.approved_at = Some(height);
        Ok(())
    }

    pub fn show_need(&self, need_id: u64) -> Result<&NeedRecord, ContractError> {
        usize::try_from(need_id).ok().and_then(|i| self.needs.get(i)).ok_or(ContractError::UnknownId(need_id))
    }

    /// All needs in id order.
    pub fn show_needs(&self) -> &[NeedRecord] {
        &self.needs
    }

    pub fn show_support(&self, support_id: u64) -> Result<&SupportRecord, ContractError> {
        usize::try_from(support_id).ok().and_then(|i| self.supports.get(i)).ok_or(ContractError::UnknownId(support_id))
    }

    pub fn show_supports(&self) -> &[SupportRecord] {
        &self.supports
    }

    pub fn show_all_approved_supports(&self) -> Vec<&SupportRecord> {
        self.supports.iter().filter(|s| s.status == Status::Approved).collect()
    }

    pub fn show_need_status(&self, caller: &Account, need_id: u64) -> Result<&'static str, ContractError> {
        self.require_role(caller, Role::Checker)?;
        Ok(self.show_need(need_id)?.status_label())
    }

    pub fn show_support_status(&self, caller: &Account, support_id: u64) -> Result<&'static str, ContractError> {
        self.require_role(caller, Role::Checker)?;
        Ok(self.show_support(support_id)?.status_label())
    }

    /// Deterministic encoding of the whole state, for cross-node comparison.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.applied_height);
        w.u32(self.roles.len() as u32);
        for (acct, role) in &self.roles {
            w.key(acct).u8(role.code());
        }
        w.u32(self.next_nonce.len() as u32);
        for (acct, n) in &self.next_nonce {
            w.key(acct).u64(*n);
        }
        w.u32(self.needs.len() as u32);
        for n in &self.needs {
            n.encode(&mut w);
        }
        w.u32(self.supports.len() as u32);
        for s in &self.supports {
            s.encode(&mut w);
        }
        w.finish()
    }

    pub fn digest(&self) -> Digest {
        sha256(&self.canonical_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::PublicKey;

    fn acct(b: u8) -> Account {
        PublicKey([b; 32])
    }

    const A: u8 = 1;
    const B: u8 = 2;
    const C: u8 = 3;

    #[test]
    fn genesis_grants_only_the_first_admin() {
        let s = ContractState::genesis_state(acct(A));
        assert_eq!(s.get_user_auth(&acct(A)), Role::Admin);
        assert_eq!(s.get_user_auth(&acct(B)), Role::None);
        assert_eq!(s.roles().count(), 1);
        assert!(s.show_needs().is_empty() && s.show_supports().is_empty());
    }

    #[test]
    fn admin_grants_checker_and_checker_cannot_grant() {
        let mut s = ContractState::genesis_state(acct(A));
        s.set_user(&acct(A), &acct(B), Role::Checker).unwrap();
        assert_eq!(s.get_user_auth(&acct(B)), Role::Checker);
        assert_eq!(s.set_user(&acct(B), &acct(C), Role::Checker), Err(ContractError::Unauthorized));
        // admins may hand out admin as well
        s.set_user(&acct(A), &acct(C), Role::Admin).unwrap();
        assert_eq!(s.admin_count(), 2);
    }

    #[test]
    fn sole_admin_cannot_demote_self() {
        let mut s = ContractState::genesis_state(acct(A));
        let before = s.clone();
        assert_eq!(s.set_user(&acct(A), &acct(A), Role::Checker), Err(ContractError::SelfDemotionForbidden));
        assert_eq!(s, before);
    }

    /// Oracle: every assignment of roles to three accounts with at least one
    /// admin, every (caller, target, role) call. The outcome must keep an
    /// admin, and SelfDemotionForbidden must fire exactly for the sole admin
    /// giving up its role.
    #[test]
    fn exhaustive_small_states_keep_an_admin() {
        let accounts = [acct(A), acct(B), acct(C)];
        let mut checked = 0;
        for assignment in 0..64u32 {
            let roles: Vec<Role> = (0..3).map(|i| Role::ALL[((assignment >> (2 * i)) & 3) as usize]).collect();
            if !roles.contains(&Role::Admin) {
                continue;
            }
            let mut base = ContractState::default();
            for (a, r) in accounts.iter().zip(&roles) {
                if *r != Role::None {
                    base.roles.insert(*a, *r);
                }
            }
            for caller in 0..3 {
                for target in 0..3 {
                    for role in Role::ALL {
                        let mut s = base.clone();
                        let res = s.set_user(&accounts[caller], &accounts[target], role);
                        let admins = roles.iter().filter(|r| **r == Role::Admin).count();
                        let expect_forbidden =
                            roles[caller] == Role::Admin && admins == 1 && caller == target && role != Role::Admin;
                        assert_eq!(res == Err(ContractError::SelfDemotionForbidden), expect_forbidden);
                        if roles[caller] != Role::Admin {
                            assert_eq!(res, Err(ContractError::Unauthorized));
                        }
                        match res {
                            Ok(()) => assert_eq!(s.get_user_auth(&accounts[target]), role),
                            Err(_) => assert_eq!(s, base),
                        }
                        assert!(s.admin_count() >= 1);
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn digest_comparison_matches_direct_comparison() {
        for held in Role::ALL {
            for needed in Role::ALL {
                let mut s = ContractState::genesis_state(acct(A));
                if held != Role::None {
                    s.roles.insert(acct(B), held);
                }
                assert_eq!(s.require_role(&acct(B), needed).is_ok(), held == needed, "{held:?} vs {needed:?}");
            }
        }
    }

    #[test]
    fn need_lifecycle() {
        let mut s = ContractState::genesis_state(acct(A));
        s.set_user(&acct(A), &acct(B), Role::Checker).unwrap();
        let id = s.create_need(&acct(C), "blanket", 100, "pcs", Digest::ZERO, 1).unwrap();
        assert_eq!(id, 0);
        assert_eq!(s.show_need(0).unwrap().status, Status::WaitingApproval);
        assert_eq!(s.show_need_status(&acct(B), 0), Ok("waiting for confirmation"));
        assert_eq!(s.show_need_status(&acct(C), 0), Err(ContractError::Unauthorized));
        assert_eq!(s.approve_need(&acct(C), 0, 2), Err(ContractError::Unauthorized));
        s.approve_need(&acct(B), 0, 2).unwrap();
        let rec = s.show_need(0).unwrap();
        assert_eq!((rec.status, rec.approved_by, rec.approved_at), (Status::Approved, Some(acct(B)), Some(2)));
        assert_eq!(s.show_need_status(&acct(B), 0), Ok("approved"));
        assert_eq!(s.approve_need(&acct(B), 0, 3), Err(ContractError::AlreadyApproved(0)));
        assert_eq!(s.approve_need(&acct(B), 9, 3), Err(ContractError::UnknownId(9)));
        assert_eq!(s.show_need_status(&acct(B), 9), Err(ContractError::UnknownId(9)));
    }

    #[test]
    fn creation_validation() {
        let mut s = ContractState::genesis_state(acct(A));
        assert!(matches!(
            s.create_need(&acct(B), "blanket", 0, "", Digest::ZERO, 1),
            Err(ContractError::MalformedPayload(_))
        ));
        assert!(matches!(
            s.create_need(&acct(B), " ", 3, "", Digest::ZERO, 1),
            Err(ContractError::MalformedPayload(_))
        ));
        assert!(matches!(
            s.create_support(&acct(B), "blanket", 150, "pcs", "", Digest::ZERO, 1),
            Err(ContractError::MalformedPayload(_))
        ));
        assert!(s.show_needs().is_empty() && s.show_supports().is_empty());
    }

    #[test]
    fn need_and_support_ids_are_independent() {
        let mut s = ContractState::genesis_state(acct(A));
        assert_eq!(s.create_need(&acct(B), "water", 10, "l", Digest::ZERO, 1), Ok(0));
        assert_eq!(s.create_support(&acct(B), "blanket", 150, "pcs", "cargo", Digest::ZERO, 1), Ok(0));
        assert_eq!(s.create_need(&acct(B), "tent", 2, "", Digest::ZERO, 2), Ok(1));
    }

    #[test]
    fn approved_supports_listing() {
        let mut s = ContractState::genesis_state(acct(A));
        s.set_user(&acct(A), &acct(B), Role::Checker).unwrap();
        for k in ["a", "b", "c"] {
            s.create_support(&acct(C), k, 1, "", "truck", Digest::ZERO, 1).unwrap();
        }
        assert!(s.show_all_approved_supports().is_empty());
        s.approve_support(&acct(B), 0, 2).unwrap();
        s.approve_support(&acct(B), 2, 2).unwrap();
        let ids: Vec<u64> = s.show_all_approved_supports().iter().map(|r| r.support_id).collect();
        assert_eq!(ids, vec![0, 2]);
        assert_eq!(s.show_support_status(&acct(B), 1), Ok("waiting for approval"));
    }

    #[test]
    fn status_labels_are_one_to_one() {
        for st in Status::ALL {
            assert_eq!(Status::from_need_label(st.need_label()), Some(st));
            assert_eq!(Status::from_support_label(st.support_label()), Some(st));
        }
        assert_ne!(Status::WaitingApproval.need_label(), Status::Approved.need_label());
        assert_ne!(Status::WaitingApproval.support_label(), Status::Approved.support_label());
    }

    #[test]
    fn reads_do_not_change_the_encoding() {
        let mut s = ContractState::genesis_state(acct(A));
        s.set_user(&acct(A), &acct(B), Role::Checker).unwrap();
        s.create_need(&acct(C), "x", 1, "", Digest::ZERO, 1).unwrap();
        let before = s.canonical_bytes();
        let _ = s.show_needs();
        let _ = s.show_need(0);
        let _ = s.show_need_status(&acct(B), 0);
        let _ = s.show_all_approved_supports();
        let _ = s.show_support(4);
        assert_eq!(before, s.canonical_bytes());
    }
}
