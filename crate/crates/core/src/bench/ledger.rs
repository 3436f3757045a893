//! Append-only JSONL record of finished trials, keyed by config hash.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::ResultRow;

pub struct TrialLedger {
    path: Option<PathBuf>,
    file: Option<File>,
    done: HashMap<String, ResultRow>,
}

impl TrialLedger {
    /// A ledger that only lives in memory.
    pub fn in_memory() -> Self {
        TrialLedger {
            path: None,
            file: None,
            done: HashMap::new(),
        }
    }

    /// Opens (or creates) `path`, loading every completed trial. A torn
    /// final line from an interrupted run is ignored.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut done = HashMap::new();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            for (i, line) in lines.iter().enumerate() {
                match serde_json::from_str::<ResultRow>(line) {
                    Ok(row) => {
                        done.insert(row.config_hash.clone(), row);
                    }
                    Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => {}
                    Err(e) => {
                        return Err(Error::Parse {
                            path,
                            line: i + 1,
                            msg: e.to_string(),
                        })
                    }
                }
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(TrialLedger {
            path: Some(path),
            file: Some(file),
            done,
        })
    }

    pub fn get(&self, hash: &str) -> Option<&ResultRow> {
        self.done.get(hash)
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }

    pub fn record(&mut self, row: &ResultRow) -> Result<()> {
        if let (Some(file), Some(path)) = (&mut self.file, &self.path) {
            let mut line = serde_json::to_string(row)?;
            line.push('\n');
            file.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
            file.flush().map_err(|e| Error::io(path, e))?;
        }
        self.done.insert(row.config_hash.clone(), row.clone());
        Ok(())
    }
}
