//! The pseudonym ledger: a local CSV file mapping pseudonyms to account ids.
//! It never leaves the deployer's machine and never holds tokens.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const HEADER: &str = "pseudonym,account_id,created_at,note";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub pseudonym: String,
    pub account_id: String,
    pub created_at: i64,
    pub note: String,
}

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("ledger {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("ledger {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("ledger {path} has an unexpected header; expected {HEADER}")]
    Header { path: PathBuf },
    #[error("pseudonym {0:?} is already in the ledger")]
    Duplicate(String),
    #[error("pseudonym {0:?} must be non-empty and contain no commas, quotes or line breaks")]
    BadPseudonym(String),
}

/// An open ledger holding an exclusive lock until dropped.
pub struct Ledger {
    path: PathBuf,
    file: File,
    entries: Vec<LedgerEntry>,
}

impl Ledger {
    /// Open (creating if needed) and lock the ledger.
    pub fn open(path: &Path) -> Result<Self, LedgerError> {
        let io = |source| LedgerError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path).map_err(io)?;
        file.lock().map_err(io)?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(io)?;
        if text.is_empty() {
            file.write_all(format!("{HEADER}\n").as_bytes()).map_err(io)?;
            file.sync_data().map_err(io)?;
        } else if text.lines().next() != Some(HEADER) {
            return Err(LedgerError::Header {
                path: path.to_path_buf(),
            });
        }
        let mut entries = Vec::new();
        let mut r = csv::Reader::from_reader(text.as_bytes());
        for rec in r.deserialize() {
            entries.push(rec.map_err(|source| LedgerError::Csv {
                path: path.to_path_buf(),
                source,
            })?);
        }
        file.seek(SeekFrom::End(0)).map_err(io)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            entries,
        })
    }

    pub fn find(&self, pseudonym: &str) -> Option<&LedgerEntry> {
        self.entries.iter().find(|e| e.pseudonym == pseudonym)
    }

    pub fn pseudonym_of(&self, account_id: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.account_id == account_id)
            .map(|e| e.pseudonym.as_str())
    }

    /// Refuse pseudonyms that are taken or would not survive a CSV round trip.
    pub fn check_new(&self, pseudonym: &str) -> Result<(), LedgerError> {
        if pseudonym.trim().is_empty() || pseudonym.contains([',', '"', '\n', '\r']) {
            return Err(LedgerError::BadPseudonym(pseudonym.to_string()));
        }
        if self.find(pseudonym).is_some() {
            return Err(LedgerError::Duplicate(pseudonym.to_string()));
        }
        Ok(())
    }

    pub fn append(&mut self, entry: LedgerEntry) -> Result<(), LedgerError> {
        self.check_new(&entry.pseudonym)?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.serialize(&entry).map_err(|source| LedgerError::Csv {
            path: self.path.clone(),
            source,
        })?;
        let line = w.into_inner().expect("write to memory");
        let io = |source| LedgerError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(&line).map_err(io)?;
        self.file.sync_data().map_err(io)?;
        self.entries.push(entry);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(p: &str, note: &str) -> LedgerEntry {
        LedgerEntry {
            pseudonym: p.into(),
            account_id: format!("acc-{p}"),
            created_at: 1_700_000_000,
            note: note.into(),
        }
    }

    #[test]
    fn append_reopen_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.csv");
        {
            let mut l = Ledger::open(&path).unwrap();
            l.append(entry("hh-001", "Jansen, 2nd floor \"left\"")).unwrap();
            assert!(matches!(l.append(entry("hh-001", "")), Err(LedgerError::Duplicate(_))));
        }
        let l = Ledger::open(&path).unwrap();
        assert_eq!(l.find("hh-001"), Some(&entry("hh-001", "Jansen, 2nd floor \"left\"")));
        assert_eq!(l.pseudonym_of("acc-hh-001"), Some("hh-001"));
        assert!(matches!(l.check_new("a,b"), Err(LedgerError::BadPseudonym(_))));
        assert!(std::fs::read_to_string(&path).unwrap().starts_with(HEADER));
    }

    #[test]
    fn foreign_file_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("other.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(matches!(Ledger::open(&path), Err(LedgerError::Header { .. })));
    }
}
