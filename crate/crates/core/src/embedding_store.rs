//! Binary container for fixed-dimension utterance embeddings.
//!
//! Layout, all little-endian, no padding:
//!
//! ```text
//! "SEREMB01"            8 bytes
//! dim                   u32
//! count                 u64
//! count x {
//!     id_len            u16
//!     id                id_len bytes of UTF-8
//!     vector            dim x f32
//! }
//! ```

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::ingestion::UtteranceRecord;

pub const MAGIC: &[u8; 8] = b"SEREMB01";
pub const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bad magic: expected SEREMB01")]
    BadMagic,
    #[error("file truncated: {0}")]
    TruncatedFile(String),
    #[error("invalid vector for `{id}`: {reason}")]
    InvalidVector { id: String, reason: String },
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("id `{0}` is longer than 65535 bytes")]
    IdTooLong(String),
    #[error("id is not valid UTF-8")]
    InvalidId,
    #[error("{0} trailing bytes after the last entry")]
    TrailingBytes(usize),
    #[error("dimension mismatch: {expected} vs {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered `(id, vector)` entries sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self, StoreError> {
        if dim == 0 {
            return Err(StoreError::ZeroDim);
        }
        Ok(EmbeddingStore {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(&mut self, id: impl Into<String>, vector: &[f32]) -> Result<(), StoreError> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(StoreError::InvalidVector {
                id,
                reason: format!("expected {} components, got {}", self.dim, vector.len()),
            });
        }
        if let Some(bad) = vector.iter().position(|v| !v.is_finite()) {
            return Err(StoreError::InvalidVector {
                id,
                reason: format!("component {bad} is not finite"),
            });
        }
        if id.len() > u16::MAX as usize {
            return Err(StoreError::IdTooLong(id));
        }
        if self.index.contains_key(&id) {
            return Err(StoreError::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.vector(i))
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids.iter().map(String::as_str).zip(self.data.chunks_exact(self.dim))
    }

    /// Exact size of the encoded file.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.ids.iter().map(|id| 2 + id.len() + 4 * self.dim).sum::<usize>()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for (id, vector) in self.iter() {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut cursor = Reader { bytes, pos: 0 };
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(StoreError::BadMagic);
        }
        cursor.pos = MAGIC.len();
        let dim = u32::from_le_bytes(cursor.take(4, "header")?.try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(cursor.take(8, "header")?.try_into().unwrap());
        let mut store = EmbeddingStore::new(dim)?;
        let mut vector = vec![0f32; dim];
        for entry in 0..count {
            let what = format!("entry {entry} of {count}");
            let id_len = u16::from_le_bytes(cursor.take(2, &what)?.try_into().unwrap()) as usize;
            let id = std::str::from_utf8(cursor.take(id_len, &what)?).map_err(|_| StoreError::InvalidId)?;
            let raw = cursor.take(4 * dim, &what)?;
            for (v, chunk) in vector.iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().unwrap());
            }
            store.push(id, &vector)?;
        }
        if cursor.pos != bytes.len() {
            return Err(StoreError::TrailingBytes(bytes.len() - cursor.pos));
        }
        Ok(store)
    }

    /// Appends every entry of `other`, which must share this store's dimension.
    pub fn extend_from(&mut self, other: &EmbeddingStore) -> Result<(), StoreError> {
        if other.dim != self.dim {
            return Err(StoreError::DimMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        for (id, v) in other.iter() {
            self.push(id, v)?;
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], StoreError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let slice = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(StoreError::TruncatedFile(format!(
                "{what}: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }
}

pub fn write_store(store: &EmbeddingStore, path: &Path) -> Result<(), StoreError> {
    std::fs::write(path, store.to_bytes())?;
    Ok(())
}

pub fn read_store(path: &Path) -> Result<EmbeddingStore, StoreError> {
    EmbeddingStore::from_bytes(&std::fs::read(path)?)
}

/// Inner join of a manifest with one or more stores of equal dimension.
#[derive(Debug, Clone)]
pub struct JoinResult {
    pub pairs: Vec<(UtteranceRecord, Vec<f32>)>,
    pub manifest_only: usize,
    pub store_only: usize,
}

/// Pairs each manifest record with its vector, in manifest order.
pub fn join(manifest: &[UtteranceRecord], store: &EmbeddingStore) -> JoinResult {
    let mut pairs = Vec::new();
    let mut matched = 0;
    for record in manifest {
        if let Some(v) = store.get(&record.id) {
            pairs.push((record.clone(), v.to_vec()));
            matched += 1;
        }
    }
    JoinResult {
        manifest_only: manifest.len() - matched,
        store_only: store.len() - matched,
        pairs,
    }
}

/// [`join`] over several stores, e.g. one per corpus.
pub fn join_stores(manifest: &[UtteranceRecord], stores: &[EmbeddingStore]) -> Result<JoinResult, StoreError> {
    let Some(first) = stores.first() else {
        return Ok(JoinResult {
            pairs: Vec::new(),
            manifest_only: manifest.len(),
            store_only: 0,
        });
    };
    let mut merged = EmbeddingStore::new(first.dim())?;
    for store in stores {
        merged.extend_from(store)?;
    }
    Ok(join(manifest, &merged))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str) -> UtteranceRecord {
        UtteranceRecord {
            id: id.into(),
            dataset_id: "D".into(),
            speaker_id: "s".into(),
            native_label: "angry".into(),
            unified_label: None,
            duration_s: 3.0,
            language: "en".into(),
            sample_rate_hz: 16_000,
        }
    }

    fn tiny() -> EmbeddingStore {
        let mut s = EmbeddingStore::new(2).unwrap();
        s.push("a", &[0.0, 0.0]).unwrap();
        s
    }

    #[test]
    fn single_entry_layout() {
        let bytes = tiny().to_bytes();
        assert_eq!(&bytes[..8], b"SEREMB01");
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &1u64.to_le_bytes());
        assert_eq!(&bytes[20..22], &1u16.to_le_bytes());
        assert_eq!(bytes[22], b'a');
        assert_eq!(bytes.len(), HEADER_LEN + 2 + 1 + 8);
        assert_eq!(EmbeddingStore::from_bytes(&bytes).unwrap(), tiny());
        assert_eq!(tiny().to_bytes(), bytes);
    }

    #[test]
    fn non_finite_components_are_rejected() {
        let mut s = EmbeddingStore::new(2).unwrap();
        assert!(matches!(s.push("x", &[f32::NAN, 0.0]), Err(StoreError::InvalidVector { .. })));
        assert!(matches!(s.push("x", &[1.0]), Err(StoreError::InvalidVector { .. })));
        let mut bytes = tiny().to_bytes();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(EmbeddingStore::from_bytes(&bytes), Err(StoreError::InvalidVector { .. })));
    }

    #[test]
    fn header_validation() {
        let mut bytes = tiny().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(EmbeddingStore::from_bytes(&bytes), Err(StoreError::BadMagic)));
        let bytes = tiny().to_bytes();
        assert!(matches!(EmbeddingStore::from_bytes(&bytes[..bytes.len() - 3]), Err(StoreError::TruncatedFile(_))));
        assert!(matches!(EmbeddingStore::from_bytes(&bytes[..10]), Err(StoreError::TruncatedFile(_))));
        let mut zero_dim = bytes.clone();
        zero_dim[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(EmbeddingStore::from_bytes(&zero_dim), Err(StoreError::ZeroDim)));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(EmbeddingStore::from_bytes(&extra), Err(StoreError::TrailingBytes(1))));
        assert!(matches!(EmbeddingStore::new(0), Err(StoreError::ZeroDim)));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let mut s = tiny();
        assert!(matches!(s.push("a", &[1.0, 1.0]), Err(StoreError::DuplicateId(_))));
    }

    #[test]
    fn join_counts() {
        let mut store = EmbeddingStore::new(1).unwrap();
        store.push("D/b", &[2.0]).unwrap();
        store.push("D/a", &[1.0]).unwrap();
        let manifest = vec![record("D/a"), record("D/b"), record("D/c")];
        let j = join(&manifest, &store);
        assert_eq!(j.pairs.len(), 2);
        assert_eq!((j.manifest_only, j.store_only), (1, 0));
        assert_eq!(j.pairs[0].0.id, "D/a");
        assert_eq!(j.pairs[0].1, vec![1.0]);

        let disjoint = join(&[record("E/x")], &store);
        assert!(disjoint.pairs.is_empty());
        assert_eq!((disjoint.manifest_only, disjoint.store_only), (1, 2));

        let same = join(&manifest[..2], &store);
        assert_eq!(same.pairs.iter().map(|p| p.0.id.as_str()).collect::<Vec<_>>(), vec!["D/a", "D/b"]);
    }

    #[test]
    fn mixing_dims_is_an_error() {
        let a = tiny();
        let b = EmbeddingStore::new(3).unwrap();
        assert!(matches!(join_stores(&[], &[a, b]), Err(StoreError::DimMismatch { expected: 2, found: 3 })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        write_store(&tiny(), &path).unwrap();
        assert_eq!(read_store(&path).unwrap(), tiny());
    }
}
