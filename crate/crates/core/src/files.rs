//! Content-addressed file store.
//!
//! Blobs live at `<root>/<first two hex chars>/<sha-256 hex>`. Uploads are
//! streamed into a temporary file under `<root>/tmp` while the digest is
//! computed, then renamed into place. Identical content is stored once.

use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

pub const CHECKSUM_PREFIX: &str = "sha-256:";

pub fn format_checksum(hex_digest: &str) -> String {
    format!("{CHECKSUM_PREFIX}{hex_digest}")
}

/// Returns the hex digest of a `sha-256:<hex>` checksum string.
pub fn parse_checksum(checksum: &str) -> Option<&str> {
    let hex = checksum.strip_prefix(CHECKSUM_PREFIX)?;
    (hex.len() == 64 && hex.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))).then_some(hex)
}

#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("tmp"))?;
        Ok(FileStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn blob_path(&self, digest: &str) -> PathBuf {
        self.root.join(&digest[..2]).join(digest)
    }

    pub fn contains(&self, digest: &str) -> bool {
        self.blob_path(digest).is_file()
    }

    /// Starts a staged upload. Writes past `limit` bytes fail.
    pub fn writer(&self, limit: Option<u64>) -> io::Result<BlobWriter> {
        Ok(BlobWriter {
            temp: NamedTempFile::new_in(self.root.join("tmp"))?,
            hasher: Sha256::new(),
            size: 0,
            limit,
        })
    }

    /// Copies a whole reader into a staged blob.
    pub fn stage(&self, mut content: impl Read, limit: Option<u64>) -> io::Result<StagedBlob> {
        let mut w = self.writer(limit)?;
        io::copy(&mut content, &mut w)?;
        w.finish()
    }

    /// Moves a staged blob into its content address.
    pub fn persist(&self, staged: StagedBlob) -> io::Result<String> {
        let target = self.blob_path(&staged.digest);
        if target.is_file() {
            return Ok(staged.digest);
        }
        fs::create_dir_all(target.parent().expect("blob path has parent"))?;
        staged.temp.persist(&target).map_err(|e| e.error)?;
        Ok(staged.digest)
    }

    pub fn open_blob(&self, digest: &str) -> io::Result<File> {
        File::open(self.blob_path(digest))
    }

    /// Recomputes a blob's digest and size.
    pub fn rehash(&self, digest: &str) -> io::Result<(String, u64)> {
        let mut f = self.open_blob(digest)?;
        let mut hasher = Sha256::new();
        let mut buf = vec![0u8; 64 * 1024];
        let mut size = 0u64;
        loop {
            let n = f.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
            size += n as u64;
        }
        Ok((hex::encode(hasher.finalize()), size))
    }
}

/// Error payload used when a staged write crosses its byte limit.
#[derive(Debug)]
pub struct LimitExceeded;

impl std::fmt::Display for LimitExceeded {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("upload exceeds byte limit")
    }
}

impl std::error::Error for LimitExceeded {}

pub fn is_limit_exceeded(err: &io::Error) -> bool {
    err.get_ref().is_some_and(|e| e.is::<LimitExceeded>())
}

pub struct BlobWriter {
    temp: NamedTempFile,
    hasher: Sha256,
    size: u64,
    limit: Option<u64>,
}

impl BlobWriter {
    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn finish(mut self) -> io::Result<StagedBlob> {
        self.temp.as_file_mut().flush()?;
        Ok(StagedBlob {
            digest: hex::encode(self.hasher.finalize()),
            size: self.size,
            temp: self.temp,
        })
    }
}

impl Write for BlobWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if let Some(limit) = self.limit {
            if self.size + buf.len() as u64 > limit {
                return Err(io::Error::other(LimitExceeded));
            }
        }
        let n = self.temp.as_file_mut().write(buf)?;
        self.hasher.update(&buf[..n]);
        self.size += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.temp.as_file_mut().flush()
    }
}

/// Uploaded bytes with a known digest, not yet addressable. Dropping it
/// deletes the temporary file.
pub struct StagedBlob {
    pub digest: String,
    pub size: u64,
    temp: NamedTempFile,
}

impl std::fmt::Debug for StagedBlob {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StagedBlob")
            .field("digest", &self.digest)
            .field("size", &self.size)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_dedup() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        let a = store.persist(store.stage(&b"hello"[..], None).unwrap()).unwrap();
        assert_eq!(a, "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
        assert!(dir.path().join("2c").join(&a).is_file());
        let b = store.persist(store.stage(&b"hello"[..], None).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(store.rehash(&a).unwrap(), (a.clone(), 5));
        // temp dir is empty once everything is persisted or dropped
        drop(store.stage(&b"discarded"[..], None).unwrap());
        assert_eq!(fs::read_dir(dir.path().join("tmp")).unwrap().count(), 0);
    }

    #[test]
    fn limit_is_enforced_while_streaming() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        let err = store.stage(&[0u8; 100][..], Some(99)).unwrap_err();
        assert!(is_limit_exceeded(&err));
        assert!(store.stage(&[0u8; 100][..], Some(100)).is_ok());
    }

    #[test]
    fn checksum_format() {
        let hex = "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824";
        let c = format_checksum(hex);
        assert_eq!(parse_checksum(&c), Some(hex));
        assert_eq!(parse_checksum("md5:abc"), None);
    }
}
