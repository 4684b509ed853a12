//! Precomputed neighbor lists for a fixed query set.
//!
//! File layout (`RACC`, little-endian):
//!
//! ```text
//! "RACC" | u32 version = 1 | u64 n_queries | u32 k | 32-byte digest
//! n_queries * k * (u64 id, f32 score)
//! ```
//!
//! Rows shorter than `k` (small stores, partial probes) are padded with
//! `id = u64::MAX, score = -inf`, which the reader strips.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{Neighbor, Probe, QueryOptions, Retriever};
use crate::binio;
use crate::error::{Error, Result};

pub const CACHE_MAGIC: [u8; 4] = *b"RACC";
pub const CACHE_VERSION: u32 = 1;
const PAD_ID: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct KnnCache {
    pub k: usize,
    pub digest: [u8; 32],
    pub rows: Vec<Vec<Neighbor>>,
}

/// Content hash identifying a cache: the store's contents, the index and probe
/// setting, `k`, self-exclusion, and the exact query matrix.
pub fn knn_digest(
    index: &dyn Retriever,
    queries: &[f32],
    k: usize,
    probe: Probe,
    exclude_self: bool,
) -> [u8; 32] {
    let store = index.store();
    let mut h = Sha256::new();
    h.update(b"racc-digest-v1");
    h.update(store.content_digest());
    h.update(index.descriptor(probe).as_bytes());
    h.update((k as u64).to_le_bytes());
    h.update([exclude_self as u8]);
    h.update((store.key_dim() as u64).to_le_bytes());
    h.update(((queries.len() / store.key_dim().max(1)) as u64).to_le_bytes());
    for &x in queries {
        h.update(x.to_le_bytes());
    }
    h.finalize().into()
}

/// Queries every row of `queries` (row-major, `key_dim` wide). With
/// `exclude_self`, query `i` never returns memory row `i`.
pub fn precompute_knn(
    index: &dyn Retriever,
    queries: &[f32],
    k: usize,
    probe: Probe,
    exclude_self: bool,
) -> Result<KnnCache> {
    let dim = index.store().key_dim();
    if queries.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: queries.len() % dim,
        });
    }
    let rows = queries
        .par_chunks_exact(dim)
        .enumerate()
        .map(|(i, q)| {
            let opts = QueryOptions::new(k)
                .probe(probe)
                .exclude(exclude_self.then_some(i));
            index.query(q, &opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KnnCache {
        k,
        digest: knn_digest(index, queries, k, probe, exclude_self),
        rows,
    })
}

impl KnnCache {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest)
    }

    /// Fails with [`Error::StaleCache`] unless the digest matches.
    pub fn check_digest(&self, expected: &[u8; 32]) -> Result<()> {
        if &self.digest == expected {
            Ok(())
        } else {
            Err(Error::StaleCache {
                expected: hex::encode(expected),
                found: self.digest_hex(),
            })
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_header(w, &CACHE_MAGIC, CACHE_VERSION)?;
        w.write_u64::<LittleEndian>(self.rows.len() as u64)?;
        w.write_u32::<LittleEndian>(self.k as u32)?;
        w.write_all(&self.digest)?;
        let mut buf = Vec::with_capacity(self.k * 12);
        for row in &self.rows {
            if row.len() > self.k {
                return Err(Error::Malformed(format!("row longer than k = {}", self.k)));
            }
            buf.clear();
            for n in row {
                buf.extend_from_slice(&(n.id as u64).to_le_bytes());
                buf.extend_from_slice(&n.score.to_le_bytes());
            }
            for _ in row.len()..self.k {
                buf.extend_from_slice(&PAD_ID.to_le_bytes());
                buf.extend_from_slice(&f32::NEG_INFINITY.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_header(r, &CACHE_MAGIC, CACHE_VERSION)?;
        let n = r.read_u64::<LittleEndian>()? as usize;
        let k = r.read_u32::<LittleEndian>()? as usize;
        let mut digest = [0u8; 32];
        r.read_exact(&mut digest)?;
        let mut rows = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let mut row = Vec::with_capacity(k);
            for _ in 0..k {
                let id = r.read_u64::<LittleEndian>()?;
                let score = r.read_f32::<LittleEndian>()?;
                if id != PAD_ID {
                    row.push(Neighbor {
                        id: id as usize,
                        score,
                    });
                }
            }
            rows.push(row);
        }
        binio::expect_eof(r)?;
        Ok(Self { k, digest, rows })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Reads a cache and rejects it unless it was built for `expected`.
    pub fn read_checked(path: impl AsRef<Path>, expected: &[u8; 32]) -> Result<Self> {
        let cache = Self::read(path)?;
        cache.check_digest(expected)?;
        Ok(cache)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::{ExactIndex, IvfIndex};
    use crate::store::{MemoryStore, MetaRecord};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, d: usize) -> (MemoryStore, Vec<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut s = MemoryStore::new(d, 2).unwrap();
        for _ in 0..n {
            let k: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            s.append(&k, &[1.0, 2.0], MetaRecord::new("m", None)).unwrap();
        }
        let q: Vec<f32> = (0..30 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        (s, q)
    }

    #[test]
    fn cache_rows_match_live_queries() {
        let (s, q) = setup(300, 8);
        let idx = ExactIndex::build(&s).unwrap();
        let cache = precompute_knn(&idx, &q, 10, Probe::Default, false).unwrap();
        assert_eq!(cache.len(), 30);
        for (i, row) in cache.rows.iter().enumerate() {
            let live = idx.query(&q[i * 8..(i + 1) * 8], &QueryOptions::new(10)).unwrap();
            assert_eq!(row, &live);
            assert!(row.windows(2).all(|w| w[0].score >= w[1].score));
        }
    }

    #[test]
    fn round_trip_and_staleness() {
        let (s, q) = setup(50, 4);
        let idx = ExactIndex::build(&s).unwrap();
        let cache = precompute_knn(&idx, &q, 100, Probe::Default, true).unwrap();
        assert!(cache.rows.iter().all(|r| r.len() == 49));
        let mut buf = Vec::new();
        cache.write_to(&mut buf).unwrap();
        let back = KnnCache::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, cache);

        let other_k = knn_digest(&idx, &q, 50, Probe::Default, true);
        assert!(matches!(back.check_digest(&other_k), Err(Error::StaleCache { .. })));
        let same = knn_digest(&idx, &q, 100, Probe::Default, true);
        back.check_digest(&same).unwrap();
    }

    #[test]
    fn digest_tracks_store_and_index() {
        let (s, q) = setup(64, 4);
        let exact = ExactIndex::build(&s).unwrap();
        let ivf = IvfIndex::build(&s, 8, 1, 25).unwrap();
        let a = knn_digest(&exact, &q, 10, Probe::Default, false);
        assert_ne!(a, knn_digest(&ivf, &q, 10, Probe::Default, false));
        assert_ne!(
            knn_digest(&ivf, &q, 10, Probe::All, false),
            knn_digest(&ivf, &q, 10, Probe::Default, false)
        );
        let mut grown = s.clone();
        grown.append(&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0], MetaRecord::new("x", None)).unwrap();
        let grown_idx = ExactIndex::build(&grown).unwrap();
        assert_ne!(a, knn_digest(&grown_idx, &q, 10, Probe::Default, false));
    }

    #[test]
    fn partial_probe_rows_pad_and_strip() {
        let (s, q) = setup(40, 4);
        let ivf = IvfIndex::build(&s, 8, 2, 25).unwrap();
        let cache = precompute_knn(&ivf, &q, 30, Probe::Lists(1), false).unwrap();
        let mut buf = Vec::new();
        cache.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 8 + 4 + 32 + 30 * 30 * 12);
        assert_eq!(KnnCache::read_from(&mut buf.as_slice()).unwrap(), cache);
    }
}
