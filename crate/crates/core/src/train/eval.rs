use rayon::prelude::*;

use super::{Dataset, Metrics, Model, ShotThresholds};
use crate::ann::{ExactIndex, Neighbor, Probe, QueryOptions, Retriever};
use crate::error::{Error, Result};
use crate::fusion::Retrieved;
use crate::store::MemoryStore;

/// Live top-`k` neighbors of every row of `data`.
pub fn live_neighbors(index: &dyn Retriever, data: &Dataset, k: usize, probe: Probe) -> Result<Vec<Vec<Neighbor>>> {
    let opts = QueryOptions::new(k).probe(probe);
    data.embeddings()
        .par_chunks_exact(data.dim())
        .map(|q| index.query(q, &opts))
        .collect()
}

/// Index of the largest logit; ties go to the smaller class.
pub fn argmax(logits: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in logits.iter().enumerate() {
        if x > logits[best] {
            best = i;
        }
    }
    best
}

/// Predicted class per row. Retrieval modes need `neighbors` (one list per row)
/// and the `store` they index into.
pub fn predict(
    model: &Model<f32>,
    data: &Dataset,
    neighbors: Option<(&MemoryStore, &[Vec<Neighbor>])>,
) -> Result<Vec<usize>> {
    if let Some((_, lists)) = neighbors {
        if lists.len() != data.len() {
            return Err(Error::DimensionMismatch {
                expected: data.len(),
                got: lists.len(),
            });
        }
    }
    let retrieval = model.config().mode.uses_retrieval();
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let nn = match neighbors {
                Some((store, lists)) if retrieval => Some(Retrieved::gather(store, &lists[i])?),
                _ => None,
            };
            Ok(argmax(&model.logits(data.embedding(i), nn.as_ref())?))
        })
        .collect()
}

/// Metrics of `model` on `data` with precomputed neighbor lists.
pub fn evaluate_with_neighbors(
    model: &Model<f32>,
    data: &Dataset,
    neighbors: Option<(&MemoryStore, &[Vec<Neighbor>])>,
    train_counts: &[usize],
    thresholds: ShotThresholds,
) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Empty("eval set"));
    }
    let preds = predict(model, data, neighbors)?;
    Metrics::compute(&preds, data.labels(), train_counts, thresholds)
}

/// Metrics of `model` on `data`, querying `index` live in retrieval modes.
pub fn evaluate(
    model: &Model<f32>,
    data: &Dataset,
    index: Option<&dyn Retriever>,
    k: usize,
    probe: Probe,
    train_counts: &[usize],
    thresholds: ShotThresholds,
) -> Result<Metrics> {
    if !model.config().mode.uses_retrieval() {
        return evaluate_with_neighbors(model, data, None, train_counts, thresholds);
    }
    let index = index.ok_or_else(|| Error::InvalidArgument(format!("{} mode needs a memory index", model.config().mode)))?;
    let lists = live_neighbors(index, data, k, probe)?;
    evaluate_with_neighbors(model, data, Some((index.store(), &lists)), train_counts, thresholds)
}

/// Evaluates against `small`, then against `small` merged with `extra` behind
/// a rebuilt exact index. The model is not touched in between.
pub fn grow_memory_eval(
    model: &Model<f32>,
    data: &Dataset,
    small: &MemoryStore,
    extra: &MemoryStore,
    k: usize,
    train_counts: &[usize],
    thresholds: ShotThresholds,
) -> Result<(Metrics, Metrics)> {
    let merged = small.merge(extra)?;
    let before = evaluate(model, data, Some(&ExactIndex::build(small)?), k, Probe::All, train_counts, thresholds)?;
    let after = evaluate(model, data, Some(&ExactIndex::build(&merged)?), k, Probe::All, train_counts, thresholds)?;
    Ok((before, after))
}
