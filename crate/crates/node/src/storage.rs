//! On-disk layout of a node's data directory:
//!
//! ```text
//! node.key          hex seed of the node's Ed25519 key
//! genesis.bin       canonical genesis block
//! raft.json         term, vote and commit index
//! blocks/NNN.blk    one canonical block per log height, zero padded
//! personal.db       privacy store (see rmsd_core::privacy)
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::{CryptoRng, RngCore};
use rmsd_core::consensus::HardState;
use rmsd_core::crypto::Keypair;
use rmsd_core::ledger::Block;
use thiserror::Error;

pub const KEY_FILE: &str = "node.key";
pub const GENESIS_FILE: &str = "genesis.bin";
pub const HARD_STATE_FILE: &str = "raft.json";
pub const BLOCKS_DIR: &str = "blocks";

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StorageError + '_ {
    move |source| StorageError::Io { path: path.to_path_buf(), source }
}

fn corrupt(path: &Path, reason: impl ToString) -> StorageError {
    StorageError::Corrupt { path: path.to_path_buf(), reason: reason.to_string() }
}

/// Writes through a temporary file and a rename so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct Storage {
    dir: PathBuf,
    /// Highest block file currently on disk.
    stored_to: Option<u64>,
}

impl Storage {
    pub fn open(dir: impl AsRef<Path>) -> Result<Storage, StorageError> {
        let dir = dir.as_ref().to_path_buf();
        let blocks = dir.join(BLOCKS_DIR);
        fs::create_dir_all(&blocks).map_err(io_err(&blocks))?;
        Ok(Storage { dir, stored_to: None })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn block_path(&self, height: u64) -> PathBuf {
        self.dir.join(BLOCKS_DIR).join(format!("{height:020}.blk"))
    }

    /// Loads the node key, creating one from `rng` on first start.
    pub fn load_or_create_key<R: RngCore + CryptoRng>(&self, rng: &mut R) -> Result<Keypair, StorageError> {
        let path = self.dir.join(KEY_FILE);
        match fs::read_to_string(&path) {
            Ok(s) => Keypair::from_seed_hex(s.trim()).map_err(|e| corrupt(&path, e)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                let key = Keypair::generate(rng);
                write_atomic(&path, format!("{}\n", key.seed_hex()).as_bytes())?;
                Ok(key)
            }
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn load_genesis(&self) -> Result<Option<Block>, StorageError> {
        let path = self.dir.join(GENESIS_FILE);
        match fs::read(&path) {
            Ok(bytes) => Block::from_bytes(&bytes).map(Some).map_err(|e| corrupt(&path, e)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn save_genesis(&self, genesis: &Block) -> Result<(), StorageError> {
        write_atomic(&self.dir.join(GENESIS_FILE), &genesis.canonical_bytes())
    }

    pub fn load_hard_state(&self) -> Result<HardState, StorageError> {
        let path = self.dir.join(HARD_STATE_FILE);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| corrupt(&path, e)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(HardState::default()),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn save_hard_state(&self, hard: &HardState) -> Result<(), StorageError> {
        let json = serde_json::to_vec(hard).expect("hard state always serializes");
        write_atomic(&self.dir.join(HARD_STATE_FILE), &json)
    }

    /// Reads consecutive block files from height 0 up to the first gap.
    pub fn load_log(&mut self) -> Result<Vec<Block>, StorageError> {
        let mut log = Vec::new();
        loop {
            let path = self.block_path(log.len() as u64);
            let bytes = match fs::read(&path) {
                Ok(b) => b,
                Err(e) if e.kind() == io::ErrorKind::NotFound => break,
                Err(e) => return Err(io_err(&path)(e)),
            };
            let block = Block::from_bytes(&bytes).map_err(|e| corrupt(&path, e))?;
            if block.height != log.len() as u64 {
                return Err(corrupt(&path, format!("holds height {}", block.height)));
            }
            log.push(block);
        }
        self.stored_to = log.len().checked_sub(1).map(|h| h as u64);
        Ok(log)
    }

    /// Rewrites the log from height `from` on and removes any stale files
    /// above the new tip.
    pub fn write_log_from(&mut self, log: &[Block], from: u64) -> Result<(), StorageError> {
        for b in log.iter().skip(from as usize) {
            write_atomic(&self.block_path(b.height), &b.canonical_bytes())?;
        }
        let tip = log.len() as u64 - 1;
        if let Some(old) = self.stored_to {
            for h in tip + 1..=old {
                let path = self.block_path(h);
                match fs::remove_file(&path) {
                    Ok(()) => {}
                    Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                    Err(e) => return Err(io_err(&path)(e)),
                }
            }
        }
        self.stored_to = Some(tip);
        Ok(())
    }
}
