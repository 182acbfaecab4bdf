//! Node-local store for applicant personal data. Only the opaque reference
//! ever reaches the chain; the record itself lives here and can be deleted.
//!
//! On disk the store is `personal.db`, one JSON object per line. Puts append;
//! deletes rewrite the file without the removed record so nothing of it
//! survives. Every access is appended to `personal-access.log`.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contract::{ContractState, Role};
use crate::crypto::{sha256, Account, Digest};

pub const DB_FILE: &str = "personal.db";
pub const AUDIT_FILE: &str = "personal-access.log";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonalRecord {
    pub name: String,
    pub phone: String,
    pub address: String,
    pub notes: String,
    pub collected_at: u64,
    pub collected_by: Account,
}

impl PersonalRecord {
    /// A name and at least one way to reach the applicant are required.
    pub fn validate(&self) -> Result<(), PrivacyError> {
        if self.name.trim().is_empty() {
            return Err(PrivacyError::Validation("name is required".into()));
        }
        if self.phone.trim().is_empty() && self.address.trim().is_empty() {
            return Err(PrivacyError::Validation("phone or address is required".into()));
        }
        Ok(())
    }

    pub fn fields(&self) -> [&str; 4] {
        [&self.name, &self.phone, &self.address, &self.notes]
    }
}

#[derive(Debug, Error)]
pub enum PrivacyError {
    #[error("caller lacks the required role")]
    Unauthorized,
    #[error("no personal record for this reference")]
    NotFound,
    #[error("invalid personal record: {0}")]
    Validation(String),
    #[error("reference does not match its secret")]
    SecretMismatch,
    #[error("storage failure: {0}")]
    Storage(String),
}

impl From<std::io::Error> for PrivacyError {
    fn from(e: std::io::Error) -> Self {
        PrivacyError::Storage(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub ts: u64,
    pub caller: Account,
    #[serde(rename = "ref")]
    pub personal_ref: Digest,
    pub op: String,
    pub outcome: String,
}

#[derive(Serialize, Deserialize)]
struct Line {
    #[serde(rename = "ref")]
    personal_ref: Digest,
    record: PersonalRecord,
}

/// Fresh reference material: `(secret, sha256(secret))`.
pub fn new_reference<R: RngCore>(rng: &mut R) -> ([u8; 32], Digest) {
    let mut secret = [0u8; 32];
    rng.fill_bytes(&mut secret);
    (secret, sha256(&secret))
}

#[derive(Debug)]
pub struct PersonalStore {
    dir: Option<PathBuf>,
    records: BTreeMap<Digest, PersonalRecord>,
    audit: Vec<AuditEntry>,
}

impl PersonalStore {
    /// A store that never touches disk.
    pub fn in_memory() -> Self {
        PersonalStore { dir: None, records: BTreeMap::new(), audit: Vec::new() }
    }

    /// Opens or creates the store files under `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, PrivacyError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut records = BTreeMap::new();
        let db = dir.join(DB_FILE);
        if db.exists() {
            for (n, line) in BufReader::new(File::open(&db)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let l: Line = serde_json::from_str(&line)
                    .map_err(|e| PrivacyError::Storage(format!("{DB_FILE} line {}: {e}", n + 1)))?;
                records.insert(l.personal_ref, l.record);
            }
        }
        Ok(PersonalStore { dir: Some(dir), records, audit: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, personal_ref: &Digest) -> bool {
        self.records.contains_key(personal_ref)
    }

    /// Audit entries written by this handle since it was opened.
    pub fn audit_entries(&self) -> &[AuditEntry] {
        &self.audit
    }

    /// Stores `record` under a reference derived from fresh randomness.
    pub fn put<R: RngCore>(&mut self, rng: &mut R, record: PersonalRecord) -> Result<Digest, PrivacyError> {
        let (secret, _) = new_reference(rng);
        self.put_with_secret(&secret, record)
    }

    /// Stores `record` under `sha256(secret)`, for callers that chose the
    /// secret themselves so they could sign a transaction naming the ref.
    pub fn put_with_secret(&mut self, secret: &[u8; 32], record: PersonalRecord) -> Result<Digest, PrivacyError> {
        record.validate()?;
        let personal_ref = sha256(secret);
        if self.records.contains_key(&personal_ref) {
            return Err(PrivacyError::Validation("reference already in use".into()));
        }
        if let Some(dir) = &self.dir {
            let line = serde_json::to_string(&Line { personal_ref, record: record.clone() })
                .map_err(|e| PrivacyError::Storage(e.to_string()))?;
            let mut f = OpenOptions::new().create(true).append(true).open(dir.join(DB_FILE))?;
            writeln!(f, "{line}")?;
            f.sync_data()?;
        }
        let who = record.collected_by;
        let at = record.collected_at;
        self.records.insert(personal_ref, record);
        self.log(at, who, personal_ref, "put", "ok")?;
        Ok(personal_ref)
    }

    /// Returns the record to a Checker or Admin of `state`.
    pub fn get(
        &mut self,
        now: u64,
        caller: &Account,
        personal_ref: &Digest,
        state: &ContractState,
    ) -> Result<PersonalRecord, PrivacyError> {
        let allowed =
            state.require_role(caller, Role::Checker).is_ok() || state.require_role(caller, Role::Admin).is_ok();
        if !allowed {
            self.log(now, *caller, *personal_ref, "get", "unauthorized")?;
            return Err(PrivacyError::Unauthorized);
        }
        match self.records.get(personal_ref).cloned() {
            Some(r) => {
                self.log(now, *caller, *personal_ref, "get", "ok")?;
                Ok(r)
            }
            None => {
                self.log(now, *caller, *personal_ref, "get", "not_found")?;
                Err(PrivacyError::NotFound)
            }
        }
    }

    /// Removes the record for good. Admin only.
    pub fn delete(
        &mut self,
        now: u64,
        caller: &Account,
        personal_ref: &Digest,
        state: &ContractState,
    ) -> Result<(), PrivacyError> {
        if state.require_role(caller, Role::Admin).is_err() {
            self.log(now, *caller, *personal_ref, "delete", "unauthorized")?;
            return Err(PrivacyError::Unauthorized);
        }
        if !self.records.contains_key(personal_ref) {
            self.log(now, *caller, *personal_ref, "delete", "not_found")?;
            return Err(PrivacyError::NotFound);
        }
        self.remove(personal_ref)?;
        self.log(now, *caller, *personal_ref, "delete", "ok")
    }

    /// Drops a record whose transaction never made it on chain. No role
    /// check: only the node service calls this, for records it just wrote.
    pub fn rollback(&mut self, now: u64, personal_ref: &Digest) -> Result<(), PrivacyError> {
        let Some(r) = self.records.get(personal_ref) else { return Ok(()) };
        let who = r.collected_by;
        self.remove(personal_ref)?;
        self.log(now, who, *personal_ref, "rollback", "ok")
    }

    fn remove(&mut self, personal_ref: &Digest) -> Result<(), PrivacyError> {
        self.records.remove(personal_ref);
        let Some(dir) = &self.dir else { return Ok(()) };
        let tmp = dir.join(format!("{DB_FILE}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            for (k, v) in &self.records {
                let line = serde_json::to_string(&Line { personal_ref: *k, record: v.clone() })
                    .map_err(|e| PrivacyError::Storage(e.to_string()))?;
                writeln!(f, "{line}")?;
            }
            f.sync_all()?;
        }
        fs::rename(&tmp, dir.join(DB_FILE))?;
        Ok(())
    }

    fn log(
        &mut self,
        ts: u64,
        caller: Account,
        personal_ref: Digest,
        op: &str,
        outcome: &str,
    ) -> Result<(), PrivacyError> {
        let entry = AuditEntry { ts, caller, personal_ref, op: op.into(), outcome: outcome.into() };
        if let Some(dir) = &self.dir {
            let line = serde_json::to_string(&entry).map_err(|e| PrivacyError::Storage(e.to_string()))?;
            let mut f = OpenOptions::new().create(true).append(true).open(dir.join(AUDIT_FILE))?;
            writeln!(f, "{line}")?;
        }
        self.audit.push(entry);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::crypto::{Keypair, PublicKey};

    fn record(name: &str) -> PersonalRecord {
        PersonalRecord {
            name: name.into(),
            phone: "+90 555 000 0000".into(),
            address: "Hatay".into(),
            notes: String::new(),
            collected_at: 1,
            collected_by: PublicKey([5; 32]),
        }
    }

    fn roles() -> (ContractState, Account, Account, Account) {
        let admin = Keypair::from_seed([1; 32]).public();
        let checker = Keypair::from_seed([2; 32]).public();
        let creator = Keypair::from_seed([3; 32]).public();
        let mut s = ContractState::genesis_state(admin);
        s.set_user(&admin, &checker, Role::Checker).unwrap();
        s.set_user(&admin, &creator, Role::Creator).unwrap();
        (s, admin, checker, creator)
    }

    #[test]
    fn refs_are_fresh_for_identical_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = PersonalStore::in_memory();
        let a = store.put(&mut rng, record("Ayse")).unwrap();
        let b = store.put(&mut rng, record("Ayse")).unwrap();
        assert_ne!(a, b);
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn access_is_role_checked() {
        let (state, admin, checker, creator) = roles();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = PersonalStore::in_memory();
        let r = store.put(&mut rng, record("Mehmet")).unwrap();
        assert_eq!(store.get(5, &checker, &r, &state).unwrap().name, "Mehmet");
        assert!(store.get(5, &admin, &r, &state).is_ok());
        assert!(matches!(store.get(5, &creator, &r, &state), Err(PrivacyError::Unauthorized)));
        assert!(matches!(store.delete(6, &checker, &r, &state), Err(PrivacyError::Unauthorized)));
        store.delete(7, &admin, &r, &state).unwrap();
        assert!(matches!(store.get(8, &checker, &r, &state), Err(PrivacyError::NotFound)));
        assert!(matches!(store.delete(9, &admin, &r, &state), Err(PrivacyError::NotFound)));
        let ops: Vec<_> = store.audit_entries().iter().map(|e| (e.op.as_str(), e.outcome.as_str())).collect();
        assert_eq!(
            ops,
            [
                ("put", "ok"),
                ("get", "ok"),
                ("get", "ok"),
                ("get", "unauthorized"),
                ("delete", "unauthorized"),
                ("delete", "ok"),
                ("get", "not_found"),
                ("delete", "not_found"),
            ]
        );
    }

    #[test]
    fn other_stores_do_not_know_the_ref() {
        let (state, _, checker, _) = roles();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = PersonalStore::in_memory();
        let mut b = PersonalStore::in_memory();
        let r = a.put(&mut rng, record("Zeynep")).unwrap();
        assert!(matches!(b.get(1, &checker, &r, &state), Err(PrivacyError::NotFound)));
    }

    #[test]
    fn validation_rejects_missing_fields() {
        let mut store = PersonalStore::in_memory();
        let mut rec = record("");
        assert!(matches!(store.put_with_secret(&[1; 32], rec.clone()), Err(PrivacyError::Validation(_))));
        rec.name = "Ali".into();
        rec.phone.clear();
        rec.address.clear();
        assert!(matches!(store.put_with_secret(&[1; 32], rec), Err(PrivacyError::Validation(_))));
        assert!(store.is_empty());
    }

    #[test]
    fn file_store_survives_reopen_and_forgets_deleted_records() {
        let (state, admin, checker, _) = roles();
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let keep;
        let gone;
        {
            let mut store = PersonalStore::open(dir.path()).unwrap();
            keep = store.put(&mut rng, record("keep-7c1e2a9f")).unwrap();
            gone = store.put(&mut rng, record("gone-d41f0b6e")).unwrap();
            store.delete(3, &admin, &gone, &state).unwrap();
        }
        let raw = fs::read_to_string(dir.path().join(DB_FILE)).unwrap();
        assert!(raw.contains("keep-7c1e2a9f"));
        assert!(!raw.contains("gone-d41f0b6e"));
        assert!(!raw.contains(&gone.to_hex()));

        let mut store = PersonalStore::open(dir.path()).unwrap();
        assert_eq!(store.get(4, &checker, &keep, &state).unwrap().name, "keep-7c1e2a9f");
        assert!(matches!(store.get(4, &checker, &gone, &state), Err(PrivacyError::NotFound)));

        let audit = fs::read_to_string(dir.path().join(AUDIT_FILE)).unwrap();
        let last: AuditEntry = serde_json::from_str(audit.lines().last().unwrap()).unwrap();
        assert_eq!((last.op.as_str(), last.outcome.as_str(), last.caller), ("get", "not_found", checker));
        for line in audit.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            for k in ["ts", "caller", "ref", "op"] {
                assert!(v.get(k).is_some(), "audit line lacks {k}: {line}");
            }
        }
    }

    #[test]
    fn put_with_secret_uses_the_secret_digest() {
        let mut store = PersonalStore::in_memory();
        let r = store.put_with_secret(&[9; 32], record("Can")).unwrap();
        assert_eq!(r, sha256(&[9; 32]));
        assert!(matches!(store.put_with_secret(&[9; 32], record("Can")), Err(PrivacyError::Validation(_))));
    }

    proptest! {
        #[test]
        fn ref_never_embeds_personal_bytes(
            name in "[a-zA-Z][a-zA-Z ]{0,39}",
            phone in "[0-9+ ]{0,20}",
            address in "[^ \t\n\r]{1}.{0,59}",
            notes in ".{0,80}",
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = PersonalStore::in_memory();
            let rec = PersonalRecord { name, phone, address, notes, collected_at: 0, collected_by: PublicKey([1; 32]) };
            let serialized = serde_json::to_vec(&rec).unwrap();
            let r = store.put(&mut rng, rec.clone()).unwrap();
            prop_assert!(!contains(&serialized, r.as_bytes()));
            prop_assert!(!contains(&serialized, r.to_hex().as_bytes()));
            for f in rec.fields() {
                if f.len() >= 4 {
                    prop_assert!(!contains(r.as_bytes(), f.as_bytes()));
                }
            }
        }
    }

    fn contains(hay: &[u8], needle: &[u8]) -> bool {
        !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
    }
}
