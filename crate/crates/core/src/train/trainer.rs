use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate_with_neighbors, live_neighbors};
use super::loss::{ce_label_smoothing, lace_offsets};
use super::{Dataset, Mode, Model, ModelConfig, ShotThresholds};
use crate::ann::{knn_digest, KnnCache, Neighbor, Probe, Retriever};
use crate::error::{Error, Result};
use crate::fusion::Retrieved;
use crate::nn::{Adam, AdamConfig, Parameterized, Schedule};

/// Examples per parallel work unit. Fixed so the gradient reduction order
/// does not depend on the thread count.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub num_layers: usize,
    pub k: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// `None` picks `min(512, max(1, N / 10))`.
    pub batch_size: Option<usize>,
    pub warmup_epochs: usize,
    /// Logit adjustment strength; 0 disables it.
    pub tau: f64,
    /// Label smoothing.
    pub epsilon: f64,
    pub seed: u64,
    pub thresholds: ShotThresholds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mam,
            num_layers: 8,
            k: 100,
            epochs: 10,
            lr: 1e-3,
            weight_decay: 0.2,
            batch_size: None,
            warmup_epochs: 1,
            tau: 1.0,
            epsilon: 0.1,
            seed: 0,
            thresholds: ShotThresholds::default(),
        }
    }
}

impl TrainConfig {
    pub fn resolved_batch_size(&self, n: usize) -> usize {
        self.batch_size.unwrap_or_else(|| (n / 10).clamp(1, 512))
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be positive".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        self.thresholds.validate()
    }
}

/// Where training-time neighbors come from: a precomputed cache, checked
/// against the index it was built with.
pub struct TrainMemory<'a> {
    pub index: &'a dyn Retriever,
    pub cache: &'a KnnCache,
    pub probe: Probe,
    /// Query `i` skipped memory row `i` (the memory is the training split).
    pub exclude_self: bool,
}

/// Held-out data scored after every epoch. Retrieval modes query `index` live.
pub struct EvalSet<'a> {
    pub data: &'a Dataset,
    pub index: Option<&'a dyn Retriever>,
    pub probe: Probe,
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub overall: Option<f64>,
    pub many: Option<f64>,
    pub mid: Option<f64>,
    pub low: Option<f64>,
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub history: Vec<EpochRecord>,
}

pub fn write_history<W: Write>(w: &mut W, history: &[EpochRecord]) -> Result<()> {
    for rec in history {
        serde_json::to_writer(&mut *w, rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

struct Batch {
    grads: Vec<Vec<f32>>,
    loss: f64,
}

fn chunk_grads(
    model: &Model<f32>,
    data: &Dataset,
    items: &[usize],
    memory: Option<&TrainMemory>,
    offsets: &[f32],
    epsilon: f64,
) -> Result<Batch> {
    let mut local = model.clone();
    local.zero_grads();
    let mut loss = 0.0f64;
    for &i in items {
        let nn = match memory {
            Some(m) => Some(Retrieved::gather(m.index.store(), &m.cache.rows[i])?),
            None => None,
        };
        let (mut logits, cache) = local.forward(data.embedding(i), nn.as_ref())?;
        for (l, &o) in logits.iter_mut().zip(offsets) {
            if o != 0.0 {
                *l += o;
            }
        }
        let (l, g) = ce_label_smoothing(&logits, data.label(i), epsilon)?;
        local.backward(&cache, &g)?;
        loss += l as f64;
    }
    Ok(Batch {
        grads: local.params().iter().map(|p| p.grad.clone()).collect(),
        loss,
    })
}

/// Trains a fresh model. Fully determined by `config`, the data, and the
/// cache contents; the thread count does not affect the result.
pub fn train(
    config: &TrainConfig,
    data: &Dataset,
    memory: Option<&TrainMemory>,
    eval: Option<&EvalSet>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let retrieval = config.mode.uses_retrieval();
    let value_dim = match (retrieval, memory) {
        (true, None) => {
            return Err(Error::InvalidArgument(format!("{} mode needs a memory and k-NN cache", config.mode)));
        }
        (true, Some(m)) => {
            let expected = knn_digest(m.index, data.embeddings(), config.k, m.probe, m.exclude_self);
            m.cache.check_digest(&expected)?;
            m.index.store().value_dim()
        }
        (false, _) => 0,
    };
    let memory = if retrieval { memory } else { None };

    let counts = data.class_counts();
    let offsets: Vec<f32> = lace_offsets(&counts, config.tau)?.into_iter().map(|o| o as f32).collect();

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::<f32>::new(
        ModelConfig {
            mode: config.mode,
            dim: data.dim(),
            value_dim,
            num_classes: data.num_classes,
            num_layers: config.num_layers,
        },
        &mut init_rng,
    )?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);

    let n = data.len();
    let batch = config.resolved_batch_size(n).min(n);
    let steps_per_epoch = n.div_ceil(batch);
    let total = steps_per_epoch * config.epochs;
    let warmup = (config.warmup_epochs * steps_per_epoch).min(total - 1);
    let schedule = Schedule::new(warmup, total, config.lr)?;
    let mut adam = Adam::<f32>::new(AdamConfig {
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    });

    let eval_lists: Option<Vec<Vec<Neighbor>>> = match eval {
        Some(e) if retrieval => {
            let index = e.index.ok_or_else(|| Error::InvalidArgument("retrieval eval needs an index".into()))?;
            Some(live_neighbors(index, e.data, config.k, e.probe)?)
        }
        _ => None,
    };

    log::info!(
        "training {} on {n} examples: batch {batch}, {total} steps ({warmup} warmup)",
        config.mode
    );
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for items in order.chunks(batch) {
            step += 1;
            let parts = items
                .par_chunks(CHUNK)
                .map(|c| chunk_grads(&model, data, c, memory, &offsets, config.epsilon))
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / items.len() as f32;
            for (pi, p) in model.params_mut().into_iter().enumerate() {
                for (j, g) in p.grad.iter_mut().enumerate() {
                    let mut acc = 0.0f32;
                    for part in &parts {
                        acc += part.grads[pi][j];
                    }
                    *g = acc * scale;
                }
            }
            epoch_loss += parts.iter().map(|p| p.loss).sum::<f64>();
            adam.step(&mut model.params_mut(), schedule.lr_at(step)?);
        }
        let loss = epoch_loss / n as f64;
        let mut rec = EpochRecord {
            epoch,
            loss,
            overall: None,
            many: None,
            mid: None,
            low: None,
        };
        if let Some(e) = eval {
            let neighbors = match (&eval_lists, e.index) {
                (Some(lists), Some(index)) => Some((index.store(), lists.as_slice())),
                _ => None,
            };
            let m = evaluate_with_neighbors(&model, e.data, neighbors, &counts, config.thresholds)?;
            rec.overall = Some(m.overall);
            rec.many = m.many;
            rec.mid = m.mid;
            rec.low = m.low;
        }
        log::info!("epoch {epoch}: loss {loss:.5} overall {:?}", rec.overall);
        history.push(rec);
    }
    Ok(TrainOutcome { model, history })
}
