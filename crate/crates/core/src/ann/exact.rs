use super::topk::TopK;
use super::{dot, prepare_query, Neighbor, Probe, QueryOptions, Retriever};
use crate::error::{Error, Result};
use crate::store::MemoryStore;

/// Brute-force cosine search. Borrows the store's keys; builds nothing.
#[derive(Debug, Clone, Copy)]
pub struct ExactIndex<'a> {
    store: &'a MemoryStore,
}

impl<'a> ExactIndex<'a> {
    pub fn build(store: &'a MemoryStore) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::Empty("memory store"));
        }
        Ok(Self { store })
    }
}

impl Retriever for ExactIndex<'_> {
    fn store(&self) -> &MemoryStore {
        self.store
    }

    fn query(&self, q: &[f32], opts: &QueryOptions) -> Result<Vec<Neighbor>> {
        let q = prepare_query(self.store, q, opts.k)?;
        let mut top = TopK::new(opts.k);
        for (id, key) in self.store.keys().chunks_exact(self.store.key_dim()).enumerate() {
            if Some(id) == opts.exclude_id {
                continue;
            }
            top.push(id, dot(&q, key));
        }
        Ok(top.into_sorted())
    }

    fn descriptor(&self, _probe: Probe) -> String {
        "exact".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::MetaRecord;

    fn basis_store(d: usize) -> MemoryStore {
        let mut s = MemoryStore::new(d, 1).unwrap();
        for i in 0..d {
            let mut k = vec![0.0; d];
            k[i] = 1.0;
            s.append(&k, &[i as f32], MetaRecord::new("basis", None)).unwrap();
        }
        s
    }

    #[test]
    fn self_match_scores_one() {
        let s = basis_store(6);
        let idx = ExactIndex::build(&s).unwrap();
        let hits = idx.query(s.key(3), &QueryOptions::new(3)).unwrap();
        assert_eq!(hits[0], Neighbor { id: 3, score: 1.0 });
        // orthogonal rows tie at 0 and fall back to id order
        assert_eq!(hits[1].id, 0);
        assert_eq!(hits[2].id, 1);
    }

    #[test]
    fn singleton_and_clamping() {
        let mut s = MemoryStore::new(4, 1).unwrap();
        s.append(&[1.0, 2.0, 3.0, 4.0], &[0.0], MetaRecord::new("x", None)).unwrap();
        let idx = ExactIndex::build(&s).unwrap();
        let hits = idx.query(&[-1.0, 0.0, 0.0, 0.5], &QueryOptions::new(100)).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].id, 0);

        let s = basis_store(40);
        let idx = ExactIndex::build(&s).unwrap();
        assert_eq!(idx.query(s.key(0), &QueryOptions::new(100)).unwrap().len(), 40);
    }

    #[test]
    fn build_borrows_keys() {
        let s = basis_store(8);
        let idx = ExactIndex::build(&s).unwrap();
        assert!(std::ptr::eq(idx.store().keys().as_ptr(), s.keys().as_ptr()));
    }

    #[test]
    fn errors() {
        let empty = MemoryStore::new(4, 1).unwrap();
        assert!(matches!(ExactIndex::build(&empty), Err(Error::Empty(_))));
        let s = basis_store(4);
        let idx = ExactIndex::build(&s).unwrap();
        assert!(matches!(
            idx.query(&[1.0, 0.0], &QueryOptions::new(1)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(idx.query(&[0.0; 4], &QueryOptions::new(1)), Err(Error::ZeroNorm)));
        assert!(idx.query(&[1.0; 4], &QueryOptions::new(0)).is_err());
    }

    #[test]
    fn exclude_id_skips_row() {
        let s = basis_store(5);
        let idx = ExactIndex::build(&s).unwrap();
        let hits = idx
            .query(s.key(2), &QueryOptions::new(2).exclude(Some(2)))
            .unwrap();
        assert!(hits.iter().all(|h| h.id != 2));
    }
}
