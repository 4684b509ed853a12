//! External memory: row-aligned key and value embeddings plus metadata.
//!
//! Keys are unit-normalized on insertion so that cosine similarity is a plain
//! dot product. Values are stored exactly as given.
//!
//! On disk a store is a `RACM` file (all integers little-endian):
//!
//! ```text
//! "RACM" | u32 version = 1 | u32 key_dim | u32 value_dim | u64 count
//! keys   : count * key_dim   f32, row-major
//! values : count * value_dim f32, row-major
//! meta   : count * (u32 byte length, UTF-8 JSON object)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binio;
use crate::error::{ensure_dim, Error, Result};

pub const STORE_MAGIC: [u8; 4] = *b"RACM";
pub const STORE_VERSION: u32 = 1;

/// Allowed deviation from unit norm for stored keys.
pub const KEY_NORM_TOLERANCE: f64 = 1e-6;

/// Per-row metadata. `class_hint` is diagnostic only and never seen by a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaRecord {
    pub source_tag: String,
    pub class_hint: Option<i64>,
}

impl MetaRecord {
    pub fn new(source_tag: impl Into<String>, class_hint: Option<i64>) -> Self {
        Self {
            source_tag: source_tag.into(),
            class_hint,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore {
    key_dim: usize,
    value_dim: usize,
    keys: Vec<f32>,
    values: Vec<f32>,
    meta: Vec<MetaRecord>,
}

/// Returns `v / |v|` computed in double precision, or an error for zero or
/// non-finite input.
pub fn normalize(v: &[f32]) -> Result<Vec<f32>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("vector"));
    }
    let norm = v
        .iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

impl MemoryStore {
    /// Creates an empty store. Both dimensions must be positive.
    pub fn new(key_dim: usize, value_dim: usize) -> Result<Self> {
        if key_dim == 0 || value_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "store dimensions must be positive, got key_dim={key_dim} value_dim={value_dim}"
            )));
        }
        Ok(Self::empty_unchecked(key_dim, value_dim))
    }

    /// A keys-only store (`value_dim == 0`), used to persist downstream query sets.
    pub fn keys_only(key_dim: usize) -> Result<Self> {
        if key_dim == 0 {
            return Err(Error::InvalidArgument("key_dim must be positive".into()));
        }
        Ok(Self::empty_unchecked(key_dim, 0))
    }

    fn empty_unchecked(key_dim: usize, value_dim: usize) -> Self {
        Self {
            key_dim,
            value_dim,
            keys: Vec::new(),
            values: Vec::new(),
            meta: Vec::new(),
        }
    }

    /// Builds a store from already-normalized rows, validating every invariant.
    pub fn from_parts(
        key_dim: usize,
        value_dim: usize,
        keys: Vec<f32>,
        values: Vec<f32>,
        meta: Vec<MetaRecord>,
    ) -> Result<Self> {
        if key_dim == 0 {
            return Err(Error::InvalidArgument("key_dim must be positive".into()));
        }
        let count = meta.len();
        ensure_dim(count * key_dim, keys.len())?;
        ensure_dim(count * value_dim, values.len())?;
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("values"));
        }
        for row in keys.chunks_exact(key_dim) {
            check_unit(row)?;
        }
        Ok(Self {
            key_dim,
            value_dim,
            keys,
            values,
            meta,
        })
    }

    pub fn key_dim(&self) -> usize {
        self.key_dim
    }

    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn key(&self, id: usize) -> &[f32] {
        &self.keys[id * self.key_dim..(id + 1) * self.key_dim]
    }

    pub fn value(&self, id: usize) -> &[f32] {
        &self.values[id * self.value_dim..(id + 1) * self.value_dim]
    }

    pub fn meta(&self, id: usize) -> &MetaRecord {
        &self.meta[id]
    }

    /// Row-major key matrix (`len() * key_dim()` entries).
    pub fn keys(&self) -> &[f32] {
        &self.keys
    }

    /// Row-major value matrix (`len() * value_dim()` entries).
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn metas(&self) -> &[MetaRecord] {
        &self.meta
    }

    /// Appends one row and returns its id. The key is stored L2-normalized.
    pub fn append(&mut self, key: &[f32], value: &[f32], meta: MetaRecord) -> Result<usize> {
        ensure_dim(self.key_dim, key.len())?;
        ensure_dim(self.value_dim, value.len())?;
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("value"));
        }
        let key = normalize(key)?;
        let id = self.len();
        self.keys.extend_from_slice(&key);
        self.values.extend_from_slice(value);
        self.meta.push(meta);
        Ok(id)
    }

    /// Concatenates two stores; rows of `self` come first.
    pub fn merge(&self, other: &MemoryStore) -> Result<MemoryStore> {
        ensure_dim(self.key_dim, other.key_dim)?;
        ensure_dim(self.value_dim, other.value_dim)?;
        let mut out = self.clone();
        out.keys.extend_from_slice(&other.keys);
        out.values.extend_from_slice(&other.values);
        out.meta.extend(other.meta.iter().cloned());
        Ok(out)
    }

    /// SHA-256 over dimensions and the exact bit patterns of keys and values.
    pub fn content_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(STORE_MAGIC);
        h.update((self.key_dim as u64).to_le_bytes());
        h.update((self.value_dim as u64).to_le_bytes());
        h.update((self.len() as u64).to_le_bytes());
        for &x in &self.keys {
            h.update(x.to_le_bytes());
        }
        for &x in &self.values {
            h.update(x.to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_header(w, &STORE_MAGIC, STORE_VERSION)?;
        w.write_u32::<LittleEndian>(self.key_dim as u32)?;
        w.write_u32::<LittleEndian>(self.value_dim as u32)?;
        w.write_u64::<LittleEndian>(self.len() as u64)?;
        binio::write_f32s(w, &self.keys)?;
        binio::write_f32s(w, &self.values)?;
        for m in &self.meta {
            binio::write_str(w, &serde_json::to_string(m)?)?;
        }
        Ok(())
    }

    /// Reads a store back exactly as written. Keys are not renormalized.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_header(r, &STORE_MAGIC, STORE_VERSION)?;
        let key_dim = r.read_u32::<LittleEndian>()? as usize;
        let value_dim = r.read_u32::<LittleEndian>()? as usize;
        let count = r.read_u64::<LittleEndian>()? as usize;
        if key_dim == 0 {
            return Err(Error::Malformed("key_dim is zero".into()));
        }
        let keys = binio::read_f32s(r, count.checked_mul(key_dim).ok_or(Error::Truncated)?)?;
        let values = binio::read_f32s(r, count.checked_mul(value_dim).ok_or(Error::Truncated)?)?;
        let mut meta = Vec::with_capacity(count);
        for _ in 0..count {
            meta.push(serde_json::from_str(&binio::read_str(r)?)?);
        }
        binio::expect_eof(r)?;
        Ok(Self {
            key_dim,
            value_dim,
            keys,
            values,
            meta,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

fn check_unit(row: &[f32]) -> Result<()> {
    if row.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("key"));
    }
    let norm = row
        .iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt();
    if (norm - 1.0).abs() > KEY_NORM_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "key row is not unit-norm (|k| = {norm})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta(tag: &str) -> MetaRecord {
        MetaRecord::new(tag, None)
    }

    fn sample(rows: usize, key_dim: usize, value_dim: usize, tag: &str) -> MemoryStore {
        let mut s = MemoryStore::new(key_dim, value_dim).unwrap();
        for i in 0..rows {
            let key: Vec<f32> = (0..key_dim).map(|j| ((i * 7 + j * 3) % 11) as f32 - 4.5).collect();
            let value: Vec<f32> = (0..value_dim).map(|j| (i + j) as f32 * 0.25).collect();
            s.append(&key, &value, MetaRecord::new(tag, Some(i as i64 % 3))).unwrap();
        }
        s
    }

    #[test]
    fn create_validates_dims() {
        let s = MemoryStore::new(8, 6).unwrap();
        assert_eq!((s.len(), s.key_dim(), s.value_dim()), (0, 8, 6));
        let s = MemoryStore::new(768, 768).unwrap();
        assert_eq!((s.key_dim(), s.value_dim()), (768, 768));
        assert!(matches!(MemoryStore::new(8, 0), Err(Error::InvalidArgument(_))));
        assert!(MemoryStore::new(0, 4).is_err());
    }

    #[test]
    fn append_normalizes_keys_only() {
        let mut s = MemoryStore::new(8, 3).unwrap();
        let mut key = vec![0.0f32; 8];
        key[0] = 3.0;
        key[1] = 4.0;
        let id = s.append(&key, &[1.0, -2.0, 5.0], meta("a")).unwrap();
        assert_eq!(id, 0);
        assert_eq!(&s.key(0)[..3], &[0.6, 0.8, 0.0]);
        assert_eq!(s.value(0), &[1.0, -2.0, 5.0]);
        assert_eq!(s.append(&key, &[0.0; 3], meta("a")).unwrap(), 1);
    }

    #[test]
    fn append_rejects_bad_rows() {
        let mut s = MemoryStore::new(4, 2).unwrap();
        assert!(matches!(
            s.append(&[1.0, f32::NAN, 0.0, 0.0], &[0.0, 0.0], meta("x")),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            s.append(&[0.0; 4], &[0.0, 0.0], meta("x")),
            Err(Error::ZeroNorm)
        ));
        assert!(matches!(
            s.append(&[1.0; 3], &[0.0, 0.0], meta("x")),
            Err(Error::DimensionMismatch { expected: 4, got: 3 })
        ));
        assert!(s.append(&[1.0; 4], &[f32::INFINITY, 0.0], meta("x")).is_err());
        assert!(s.is_empty());
    }

    #[test]
    fn append_leaves_existing_rows_untouched() {
        let mut s = sample(20, 5, 3, "a");
        let snapshot = s.clone();
        s.append(&[1.0, 2.0, 3.0, 4.0, 5.0], &[9.0, 9.0, 9.0], meta("b")).unwrap();
        assert_eq!(&s.keys()[..snapshot.keys().len()], snapshot.keys());
        assert_eq!(&s.values()[..snapshot.values().len()], snapshot.values());
        assert_eq!(&s.metas()[..20], snapshot.metas());
    }

    #[test]
    fn merge_concatenates_in_order() {
        let a = sample(10, 8, 4, "first");
        let b = sample(5, 8, 4, "second");
        let m = a.merge(&b).unwrap();
        assert_eq!(m.len(), 15);
        assert_eq!(m.key(10), b.key(0));
        assert_eq!(m.value(10), b.value(0));
        assert_eq!(m.meta(10).source_tag, "second");
        assert_eq!(m.meta(9).source_tag, "first");

        let empty = MemoryStore::new(8, 4).unwrap();
        assert_eq!(empty.merge(&b).unwrap(), b);

        let wide = sample(2, 16, 4, "w");
        assert!(matches!(a.merge(&wide), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample(100, 12, 7, "rt");
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let back = MemoryStore::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.content_digest(), s.content_digest());
    }

    #[test]
    fn read_rejects_bad_magic_truncation_and_version() {
        let s = sample(10, 4, 2, "x");
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            MemoryStore::read_from(&mut bad.as_slice()),
            Err(Error::BadMagic { .. })
        ));

        let cut = &buf[..4 + 4 + 4 + 4 + 8 + 4 * 4 * 5];
        assert!(matches!(
            MemoryStore::read_from(&mut &cut[..]),
            Err(Error::Truncated)
        ));

        let mut v2 = buf.clone();
        v2[4] = 2;
        assert!(matches!(
            MemoryStore::read_from(&mut v2.as_slice()),
            Err(Error::VersionMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn keys_only_store_round_trips() {
        let mut s = MemoryStore::keys_only(3).unwrap();
        s.append(&[1.0, 1.0, 0.0], &[], meta("train")).unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        assert_eq!(MemoryStore::read_from(&mut buf.as_slice()).unwrap(), s);
    }

    fn arb_store() -> impl Strategy<Value = MemoryStore> {
        (1usize..6, 0usize..5, 0usize..12).prop_flat_map(|(kd, vd, n)| {
            (
                proptest::collection::vec(
                    (
                        proptest::collection::vec(-1e3f32..1e3, kd),
                        proptest::collection::vec(proptest::num::f32::NORMAL | proptest::num::f32::ZERO, vd),
                        proptest::option::of(-5i64..5),
                    ),
                    n,
                ),
                Just(kd),
                Just(vd),
            )
        })
        .prop_map(|(rows, kd, vd)| {
            let mut s = MemoryStore::empty_unchecked(kd, vd);
            for (mut k, v, hint) in rows {
                if k.iter().all(|&x| x == 0.0) {
                    k[0] = 1.0;
                }
                s.append(&k, &v, MetaRecord::new("p", hint)).unwrap();
            }
            s
        })
    }

    proptest! {
        #[test]
        fn prop_round_trip_exact(s in arb_store()) {
            let mut buf = Vec::new();
            s.write_to(&mut buf).unwrap();
            let back = MemoryStore::read_from(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.keys().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                            s.keys().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                            s.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.metas(), s.metas());
        }

        #[test]
        fn prop_keys_unit_norm(s in arb_store()) {
            for i in 0..s.len() {
                let n: f64 = s.key(i).iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
                prop_assert!((n - 1.0).abs() <= KEY_NORM_TOLERANCE);
            }
        }

        #[test]
        fn prop_merge_associative(a in arb_store(), b in arb_store(), c in arb_store()) {
            // Force a common shape by re-appending rows into stores of a's dims.
            let reshape = |s: &MemoryStore| {
                let mut out = MemoryStore::empty_unchecked(a.key_dim(), a.value_dim());
                for i in 0..s.len() {
                    let mut k = vec![0.0f32; a.key_dim()];
                    k[i % a.key_dim()] = 1.0 + i as f32;
                    let v = vec![i as f32; a.value_dim()];
                    out.append(&k, &v, s.meta(i).clone()).unwrap();
                }
                out
            };
            let (b, c) = (reshape(&b), reshape(&c));
            let left = a.merge(&b).unwrap().merge(&c).unwrap();
            let right = a.merge(&b.merge(&c).unwrap()).unwrap();
            prop_assert_eq!(left, right);
        }
    }
}
