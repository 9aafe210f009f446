use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::EhrError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub timestamp: u64,
    /// Signing key of the caller, hex.
    pub caller: String,
    /// Record id, hex.
    pub record: String,
    pub action: String,
    /// `ok`, `denied`, or `error: <reason>`.
    pub outcome: String,
}

/// Append-only newline-delimited JSON log, or an in-memory list.
pub struct AuditLog {
    path: Option<PathBuf>,
    memory: Mutex<Vec<AuditEntry>>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            memory: Mutex::new(Vec::new()),
        }
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self, EhrError> {
        let path = path.into();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| EhrError::DocumentStore(e.to_string()))?;
        }
        Ok(Self {
            path: Some(path),
            memory: Mutex::new(Vec::new()),
        })
    }

    pub fn append(&self, entry: AuditEntry) -> Result<(), EhrError> {
        let mut memory = self.memory.lock().expect("audit lock");
        match &self.path {
            None => memory.push(entry),
            Some(path) => {
                let mut line = serde_json::to_vec(&entry).expect("audit entry encodes");
                line.push(b'\n');
                let mut f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| EhrError::DocumentStore(e.to_string()))?;
                f.write_all(&line)
                    .and_then(|_| f.sync_data())
                    .map_err(|e| EhrError::DocumentStore(e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> Result<Vec<AuditEntry>, EhrError> {
        let memory = self.memory.lock().expect("audit lock");
        let Some(path) = &self.path else {
            return Ok(memory.clone());
        };
        let file = match std::fs::File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(EhrError::DocumentStore(e.to_string())),
        };
        BufReader::new(file)
            .lines()
            .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
            .map(|l| {
                let l = l.map_err(|e| EhrError::DocumentStore(e.to_string()))?;
                serde_json::from_str(&l).map_err(|e| EhrError::DocumentStore(e.to_string()))
            })
            .collect()
    }
}
