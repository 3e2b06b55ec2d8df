//! Response fingerprints and the store that tracks them per request.

use std::fmt;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use dashmap::mapref::entry::Entry;
use dashmap::DashMap;
use md5::{Digest as _, Md5};

/// MD5 of a response body. Displays as 32 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Digest([u8; 16]);

impl Digest {
    pub fn of(body: &[u8]) -> Self {
        Digest(Md5::digest(body).into())
    }

    pub fn to_hex(self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({self})")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InvalidDigest;

impl fmt::Display for InvalidDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("expected 32 lowercase hex characters")
    }
}

impl std::error::Error for InvalidDigest {}

/// Accepts exactly `^[0-9a-f]{32}$`.
impl FromStr for Digest {
    type Err = InvalidDigest;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ok = s.len() == 32 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if !ok {
            return Err(InvalidDigest);
        }
        let mut out = [0u8; 16];
        hex::decode_to_slice(s, &mut out).map_err(|_| InvalidDigest)?;
        Ok(Digest(out))
    }
}

/// Requests are told apart by exact `(method, path, raw query)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FingerprintKey {
    pub method: String,
    pub path: String,
    pub query: String,
}

impl FingerprintKey {
    pub fn new(method: impl Into<String>, path: impl Into<String>, query: impl Into<String>) -> Self {
        FingerprintKey {
            method: method.into(),
            path: path.into(),
            query: query.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FingerprintEntry {
    pub digest: Digest,
    pub size: u64,
    pub content_type: String,
    pub status: u16,
    /// Unix seconds.
    pub last_seen: u64,
}

impl FingerprintEntry {
    /// Whether two responses count as the same: digest, status and size.
    pub fn same_response(&self, other: &FingerprintEntry) -> bool {
        self.digest == other.digest && self.status == other.status && self.size == other.size
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub fn fingerprint(body: &[u8], status: u16, content_type: &str) -> FingerprintEntry {
    FingerprintEntry {
        digest: Digest::of(body),
        size: body.len() as u64,
        content_type: content_type.to_owned(),
        status,
        last_seen: unix_now(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    New,
    Unchanged,
    Changed,
}

/// In-memory fingerprint database, safe for concurrent use.
#[derive(Debug, Default)]
pub struct FingerprintStore {
    entries: DashMap<FingerprintKey, FingerprintEntry>,
}

impl FingerprintStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Compares `entry` with what is stored for `key` and updates the store
    /// under the same shard lock, so concurrent callers never both see `New`.
    pub fn observe(&self, key: FingerprintKey, entry: FingerprintEntry) -> Verdict {
        match self.entries.entry(key) {
            Entry::Vacant(slot) => {
                slot.insert(entry);
                Verdict::New
            }
            Entry::Occupied(mut slot) => {
                if slot.get().same_response(&entry) {
                    slot.get_mut().last_seen = entry.last_seen;
                    Verdict::Unchanged
                } else {
                    slot.insert(entry);
                    Verdict::Changed
                }
            }
        }
    }

    pub fn get(&self, key: &FingerprintKey) -> Option<FingerprintEntry> {
        self.entries.get(key).map(|e| e.clone())
    }

    pub fn contains_path(&self, path: &str) -> bool {
        self.entries.iter().any(|e| e.key().path == path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
