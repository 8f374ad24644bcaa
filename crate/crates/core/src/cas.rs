//! Content-addressed blob store keyed by SHA-256.
//!
//! Stands in for IPFS: payloads are addressed by the digest of their
//! bytes. The store lives in memory and can optionally mirror every blob
//! to `<dir>/<hex digest>`.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::RwLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::CasError;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cid([u8; 32]);

impl Cid {
    pub fn of(bytes: &[u8]) -> Self {
        Cid(Sha256::digest(bytes).into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cid({})", &self.to_hex()[..12])
    }
}

impl FromStr for Cid {
    type Err = CasError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 64 || s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(CasError::InvalidCid(s.to_string()));
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| CasError::InvalidCid(s.to_string()))?;
        Ok(Cid(out))
    }
}

impl Serialize for Cid {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Cid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Default)]
pub struct ContentStore {
    blobs: RwLock<HashMap<Cid, Vec<u8>>>,
    dir: Option<PathBuf>,
}

impl ContentStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// A store mirrored to `dir`. Blobs already present there are served
    /// on demand.
    pub fn with_dir(dir: impl Into<PathBuf>) -> Result<Self, CasError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            blobs: RwLock::default(),
            dir: Some(dir),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn put(&self, bytes: &[u8]) -> Result<Cid, CasError> {
        if bytes.is_empty() {
            return Err(CasError::EmptyPayload);
        }
        let cid = Cid::of(bytes);
        let mut blobs = self.blobs.write().expect("store lock poisoned");
        if blobs.contains_key(&cid) {
            return Ok(cid);
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(cid.to_hex());
            if !path.exists() {
                std::fs::write(path, bytes)?;
            }
        }
        blobs.insert(cid, bytes.to_vec());
        Ok(cid)
    }

    /// Returns the stored bytes after checking they still hash to `cid`.
    pub fn get(&self, cid: &Cid) -> Result<Vec<u8>, CasError> {
        let cached = self
            .blobs
            .read()
            .expect("store lock poisoned")
            .get(cid)
            .cloned();
        let bytes = match (cached, &self.dir) {
            (Some(b), _) => b,
            (None, Some(dir)) => {
                let path = dir.join(cid.to_hex());
                match std::fs::read(&path) {
                    Ok(b) => b,
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                        return Err(CasError::NotFound(*cid))
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            (None, None) => return Err(CasError::NotFound(*cid)),
        };
        if Cid::of(&bytes) != *cid {
            return Err(CasError::IntegrityFailure(*cid));
        }
        Ok(bytes)
    }

    pub fn contains(&self, cid: &Cid) -> bool {
        self.blobs
            .read()
            .expect("store lock poisoned")
            .contains_key(cid)
            || self
                .dir
                .as_ref()
                .is_some_and(|d| d.join(cid.to_hex()).exists())
    }

    /// Number of blobs held in memory.
    pub fn len(&self) -> usize {
        self.blobs.read().expect("store lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copies every in-memory blob into `dir` using the on-disk layout.
    pub fn persist_to(&self, dir: &Path) -> Result<(), CasError> {
        std::fs::create_dir_all(dir)?;
        for (cid, bytes) in self.blobs.read().expect("store lock poisoned").iter() {
            let path = dir.join(cid.to_hex());
            if !path.exists() {
                std::fs::write(path, bytes)?;
            }
        }
        Ok(())
    }

    /// Replaces the bytes stored under `cid` without re-hashing. Only
    /// useful for exercising integrity checks.
    #[doc(hidden)]
    pub fn corrupt(&self, cid: &Cid, bytes: Vec<u8>) {
        self.blobs
            .write()
            .expect("store lock poisoned")
            .insert(*cid, bytes);
    }
}
