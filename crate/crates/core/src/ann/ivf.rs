//! Inverted-file index: keys are bucketed by their nearest k-means centroid
//! and a query scans only the buckets whose centroids it is closest to.
//!
//! Persisted layout (`RACI`, little-endian):
//!
//! ```text
//! "RACI" | u32 version = 1 | u32 dim | u32 n_lists | u64 count | u64 seed
//! u32 max_kmeans_iters | 32-byte store content digest
//! centroids : n_lists * dim f32
//! postings  : n_lists * (u64 len, len * u64 id)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::kmeans::spherical_kmeans;
use super::topk::TopK;
use super::{dot, prepare_query, Neighbor, Probe, QueryOptions, Retriever};
use crate::binio;
use crate::error::{Error, Result};
use crate::store::MemoryStore;

pub const IVF_MAGIC: [u8; 4] = *b"RACI";
pub const IVF_VERSION: u32 = 1;
pub const DEFAULT_KMEANS_ITERS: usize = 25;

/// `round(sqrt(count))` clamped to `[1, count]`.
pub fn default_n_lists(count: usize) -> usize {
    ((count as f64).sqrt().round() as usize).clamp(1, count.max(1))
}

/// The trained partition, independent of any borrowed store.
#[derive(Debug, Clone, PartialEq)]
pub struct IvfLayout {
    pub dim: usize,
    pub seed: u64,
    pub max_kmeans_iters: usize,
    pub store_digest: [u8; 32],
    /// `n_lists * dim`, unit rows.
    pub centroids: Vec<f32>,
    pub postings: Vec<Vec<usize>>,
}

impl IvfLayout {
    pub fn n_lists(&self) -> usize {
        self.postings.len()
    }

    pub fn count(&self) -> usize {
        self.postings.iter().map(Vec::len).sum()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_header(w, &IVF_MAGIC, IVF_VERSION)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u32::<LittleEndian>(self.n_lists() as u32)?;
        w.write_u64::<LittleEndian>(self.count() as u64)?;
        w.write_u64::<LittleEndian>(self.seed)?;
        w.write_u32::<LittleEndian>(self.max_kmeans_iters as u32)?;
        w.write_all(&self.store_digest)?;
        binio::write_f32s(w, &self.centroids)?;
        for list in &self.postings {
            w.write_u64::<LittleEndian>(list.len() as u64)?;
            for &id in list {
                w.write_u64::<LittleEndian>(id as u64)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_header(r, &IVF_MAGIC, IVF_VERSION)?;
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let n_lists = r.read_u32::<LittleEndian>()? as usize;
        let count = r.read_u64::<LittleEndian>()? as usize;
        let seed = r.read_u64::<LittleEndian>()?;
        let max_kmeans_iters = r.read_u32::<LittleEndian>()? as usize;
        let mut store_digest = [0u8; 32];
        r.read_exact(&mut store_digest)?;
        let centroids = binio::read_f32s(r, n_lists.checked_mul(dim).ok_or(Error::Truncated)?)?;
        let mut postings = Vec::with_capacity(n_lists);
        for _ in 0..n_lists {
            let len = r.read_u64::<LittleEndian>()? as usize;
            let mut list = Vec::with_capacity(len.min(count));
            for _ in 0..len {
                list.push(r.read_u64::<LittleEndian>()? as usize);
            }
            postings.push(list);
        }
        binio::expect_eof(r)?;
        let layout = Self {
            dim,
            seed,
            max_kmeans_iters,
            store_digest,
            centroids,
            postings,
        };
        if layout.count() != count {
            return Err(Error::Malformed("posting lists do not cover the header count".into()));
        }
        Ok(layout)
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
}

/// IVF index bound to the store it partitions.
#[derive(Debug, Clone)]
pub struct IvfIndex<'a> {
    store: &'a MemoryStore,
    layout: IvfLayout,
}

impl<'a> IvfIndex<'a> {
    /// Trains the coarse quantizer and fills the posting lists.
    pub fn build(
        store: &'a MemoryStore,
        n_lists: usize,
        seed: u64,
        max_kmeans_iters: usize,
    ) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::Empty("memory store"));
        }
        let dim = store.key_dim();
        let km = spherical_kmeans(store.keys(), dim, n_lists, seed, max_kmeans_iters)?;
        let mut postings = vec![Vec::new(); n_lists];
        for (id, &c) in km.assignment.iter().enumerate() {
            postings[c as usize].push(id);
        }
        log::debug!(
            "ivf: {} lists over {} keys after {} k-means iterations",
            n_lists,
            store.len(),
            km.iterations
        );
        Ok(Self {
            store,
            layout: IvfLayout {
                dim,
                seed,
                max_kmeans_iters,
                store_digest: store.content_digest(),
                centroids: km.centroids,
                postings,
            },
        })
    }

    /// Rebinds a persisted layout to its store, checking that it matches.
    pub fn from_layout(store: &'a MemoryStore, layout: IvfLayout) -> Result<Self> {
        if layout.dim != store.key_dim() {
            return Err(Error::DimensionMismatch {
                expected: store.key_dim(),
                got: layout.dim,
            });
        }
        if layout.store_digest != store.content_digest() || layout.count() != store.len() {
            return Err(Error::Malformed("index was built for a different store".into()));
        }
        let mut seen = vec![false; store.len()];
        for &id in layout.postings.iter().flatten() {
            if id >= store.len() || std::mem::replace(&mut seen[id], true) {
                return Err(Error::Malformed(format!("posting id {id} invalid or repeated")));
            }
        }
        Ok(Self { store, layout })
    }

    pub fn layout(&self) -> &IvfLayout {
        &self.layout
    }

    pub fn n_lists(&self) -> usize {
        self.layout.n_lists()
    }

    pub fn centroid(&self, list: usize) -> &[f32] {
        &self.layout.centroids[list * self.layout.dim..(list + 1) * self.layout.dim]
    }

    pub fn postings(&self) -> &[Vec<usize>] {
        &self.layout.postings
    }

    /// Number of lists a query visits under `probe`.
    pub fn resolve_probe(&self, probe: Probe) -> usize {
        let n = self.n_lists();
        match probe {
            Probe::All => n,
            Probe::Default => (n / 16).max(1),
            Probe::Lists(p) => p.clamp(1, n),
        }
    }

    fn probe_lists(&self, q: &[f32], n_probe: usize) -> Vec<usize> {
        if n_probe >= self.n_lists() {
            return (0..self.n_lists()).collect();
        }
        let mut top = TopK::new(n_probe);
        for c in 0..self.n_lists() {
            top.push(c, dot(q, self.centroid(c)));
        }
        top.into_sorted().into_iter().map(|n| n.id).collect()
    }
}

impl Retriever for IvfIndex<'_> {
    fn store(&self) -> &MemoryStore {
        self.store
    }

    fn query(&self, q: &[f32], opts: &QueryOptions) -> Result<Vec<Neighbor>> {
        let q = prepare_query(self.store, q, opts.k)?;
        let mut top = TopK::new(opts.k);
        for list in self.probe_lists(&q, self.resolve_probe(opts.probe)) {
            for &id in &self.layout.postings[list] {
                if Some(id) == opts.exclude_id {
                    continue;
                }
                top.push(id, dot(&q, self.store.key(id)));
            }
        }
        Ok(top.into_sorted())
    }

    fn descriptor(&self, probe: Probe) -> String {
        format!(
            "ivf:n_lists={},seed={},iters={},n_probe={}",
            self.n_lists(),
            self.layout.seed,
            self.layout.max_kmeans_iters,
            self.resolve_probe(probe)
        )
    }
}
