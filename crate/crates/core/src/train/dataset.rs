use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::MemoryStore;

/// Frozen query embeddings with integer labels.
///
/// Embeddings live in a keys-only [`MemoryStore`], so they are unit-norm and
/// share the store's file format.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: String,
    pub num_classes: usize,
    store: MemoryStore,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(split: impl Into<String>, num_classes: usize, store: MemoryStore, labels: Vec<usize>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one class".into()));
        }
        if labels.len() != store.len() {
            return Err(Error::DimensionMismatch {
                expected: store.len(),
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            split: split.into(),
            num_classes,
            store,
            labels,
        })
    }

    /// Reads the embeddings file and takes labels from the sidecar split.
    pub fn load(store_path: impl AsRef<Path>, sidecar: &SplitLabels, split: &str, num_classes: usize) -> Result<Self> {
        let store = MemoryStore::read(store_path)?;
        let ds = Self::new(split, num_classes, store, sidecar.labels.clone())?;
        if ds.class_counts() != sidecar.class_counts {
            return Err(Error::Malformed(format!("class counts of split {split} disagree with labels")));
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.store.key_dim()
    }

    pub fn store(&self) -> &MemoryStore {
        &self.store
    }

    pub fn embedding(&self, i: usize) -> &[f32] {
        self.store.key(i)
    }

    /// Row-major `len x dim`.
    pub fn embeddings(&self) -> &[f32] {
        self.store.keys()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn split_labels(&self) -> SplitLabels {
        SplitLabels {
            labels: self.labels.clone(),
            class_counts: self.class_counts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitLabels {
    pub labels: Vec<usize>,
    pub class_counts: Vec<usize>,
}

/// JSON sidecar written next to the generated `.racm` files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub num_classes: usize,
    pub dim: usize,
    pub train: SplitLabels,
    pub eval: SplitLabels,
    /// Generator settings, echoed for provenance.
    pub spec: serde_json::Value,
}

impl DatasetSidecar {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::MetaRecord;

    fn tiny() -> Dataset {
        let mut s = MemoryStore::keys_only(2).unwrap();
        for (k, y) in [([1.0, 0.0], 0), ([0.0, 1.0], 1), ([1.0, 1.0], 1)] {
            s.append(&k, &[], MetaRecord::new("train", Some(y))).unwrap();
        }
        Dataset::new("train", 3, s, vec![0, 1, 1]).unwrap()
    }

    #[test]
    fn counts_cover_all_classes() {
        assert_eq!(tiny().class_counts(), vec![1, 2, 0]);
    }

    #[test]
    fn rejects_bad_labels() {
        let ds = tiny();
        assert!(Dataset::new("x", 1, ds.store().clone(), vec![0, 1, 0]).is_err());
        assert!(Dataset::new("x", 3, ds.store().clone(), vec![0, 1]).is_err());
    }

    #[test]
    fn load_checks_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        let path = dir.path().join("train.racm");
        ds.store().write(&path).unwrap();
        assert_eq!(Dataset::load(&path, &ds.split_labels(), "train", 3).unwrap(), ds);
        let mut wrong = ds.split_labels();
        wrong.class_counts = vec![3, 0, 0];
        assert!(matches!(Dataset::load(&path, &wrong, "train", 3), Err(Error::Malformed(_))));
    }
}
