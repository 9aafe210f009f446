use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use super::{ContentId, StoreError};

/// Where blob bytes live. Implementations need not verify content; the
/// store re-hashes on every read.
pub trait BlobBackend: Send + Sync {
    fn read(&self, cid: &ContentId) -> Result<Option<Vec<u8>>, StoreError>;
    fn write(&self, cid: &ContentId, bytes: &[u8]) -> Result<(), StoreError>;
    fn contains(&self, cid: &ContentId) -> bool;
    fn list(&self) -> Result<Vec<ContentId>, StoreError>;
}

pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// One file per blob, named by the lowercase hex digest.
pub struct FsBackend {
    dir: PathBuf,
}

impl FsBackend {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn path(&self, cid: &ContentId) -> PathBuf {
        self.dir.join(cid.to_hex())
    }
}

impl BlobBackend for FsBackend {
    fn read(&self, cid: &ContentId) -> Result<Option<Vec<u8>>, StoreError> {
        match fs::read(self.path(cid)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn write(&self, cid: &ContentId, bytes: &[u8]) -> Result<(), StoreError> {
        atomic_write(&self.path(cid), bytes)?;
        Ok(())
    }

    fn contains(&self, cid: &ContentId) -> bool {
        self.path(cid).is_file()
    }

    fn list(&self) -> Result<Vec<ContentId>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            if let Some(cid) = name.to_str().and_then(|n| n.parse::<ContentId>().ok()) {
                out.push(cid);
            }
        }
        out.sort();
        Ok(out)
    }
}

#[derive(Default)]
pub struct MemoryBackend {
    blobs: RwLock<HashMap<ContentId, Vec<u8>>>,
}

impl BlobBackend for MemoryBackend {
    fn read(&self, cid: &ContentId) -> Result<Option<Vec<u8>>, StoreError> {
        Ok(self.blobs.read().expect("blob lock").get(cid).cloned())
    }

    fn write(&self, cid: &ContentId, bytes: &[u8]) -> Result<(), StoreError> {
        self.blobs
            .write()
            .expect("blob lock")
            .insert(*cid, bytes.to_vec());
        Ok(())
    }

    fn contains(&self, cid: &ContentId) -> bool {
        self.blobs.read().expect("blob lock").contains_key(cid)
    }

    fn list(&self) -> Result<Vec<ContentId>, StoreError> {
        let mut out: Vec<_> = self
            .blobs
            .read()
            .expect("blob lock")
            .keys()
            .copied()
            .collect();
        out.sort();
        Ok(out)
    }
}
