//! Synthetic long-tailed benchmarks and key/value memories.
//!
//! Every class draws from its own ChaCha stream, so class `c`'s examples do
//! not depend on how many examples other classes get.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{MemoryStore, MetaRecord};
use crate::train::Dataset;

// stream layout: 0 prototypes, 1.. train classes, then eval classes, then values
const EVAL_STREAM_BASE: u64 = 1 << 20;
const VALUE_PROTO_STREAM: u64 = 1 << 30;
const ECHO_PROJ_STREAM: u64 = (1 << 30) + 1;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(v: &[f64]) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / norm) as f32).collect()
}

fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    loop {
        let v = gaussian(rng, dim);
        if v.iter().any(|&x| x != 0.0) {
            return unit(&v);
        }
    }
}

/// `normalize(center + sigma * N(0, I))`
fn around(rng: &mut impl Rng, center: &[f32], sigma: f64) -> Vec<f32> {
    let noise = gaussian(rng, center.len());
    let v: Vec<f64> = center.iter().zip(&noise).map(|(&c, n)| c as f64 + sigma * n).collect();
    if v.iter().all(|&x| x == 0.0) {
        center.to_vec()
    } else {
        unit(&v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailSpec {
    pub classes: usize,
    /// Training examples of class 0.
    pub head: usize,
    /// Training examples of the last class.
    pub tail: usize,
    pub dim: usize,
    /// Per-coordinate noise around the class prototype.
    pub sigma: f64,
    pub eval_per_class: usize,
    pub seed: u64,
}

impl Default for LongTailSpec {
    fn default() -> Self {
        Self {
            classes: 20,
            head: 100,
            tail: 5,
            dim: 64,
            sigma: 0.3,
            eval_per_class: 50,
            seed: 0,
        }
    }
}

impl LongTailSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.dim < 2 {
            return Err(Error::InvalidArgument(format!("need dim >= 2, got {}", self.dim)));
        }
        if self.tail < 1 || self.head < self.tail {
            return Err(Error::InvalidArgument(format!(
                "need head >= tail >= 1, got head {} tail {}",
                self.head, self.tail
            )));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("bad sigma {}", self.sigma)));
        }
        Ok(())
    }

    /// `round(head * (tail / head)^(c / (C - 1)))`
    pub fn class_counts(&self) -> Vec<usize> {
        let ratio = self.tail as f64 / self.head as f64;
        let last = (self.classes - 1) as f64;
        (0..self.classes)
            .map(|c| (self.head as f64 * ratio.powf(c as f64 / last)).round() as usize)
            .collect()
    }
}

/// Class centers of a generated benchmark. Value-space prototypes are derived
/// from the same seed, so memories generated later agree on them.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub dim: usize,
    pub seed: u64,
    /// Row-major `classes x dim`, unit rows.
    pub keys: Vec<f32>,
}

impl Prototypes {
    pub fn generate(classes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, 0);
        let keys = (0..classes).flat_map(|_| random_unit(&mut rng, dim)).collect();
        Self { dim, seed, keys }
    }

    pub fn classes(&self) -> usize {
        self.keys.len() / self.dim
    }

    pub fn key(&self, c: usize) -> &[f32] {
        &self.keys[c * self.dim..(c + 1) * self.dim]
    }

    /// One unit vector per class in value space: a stand-in for a text
    /// embedding of the class name.
    pub fn value_prototypes(&self, value_dim: usize) -> Vec<Vec<f32>> {
        let mut rng = rng_for(self.seed, VALUE_PROTO_STREAM);
        (0..self.classes()).map(|_| random_unit(&mut rng, value_dim)).collect()
    }

    /// Fixed `dim x value_dim` projection used by the echo value mode.
    fn echo_projection(&self, value_dim: usize) -> Vec<f64> {
        let mut rng = rng_for(self.seed, ECHO_PROJ_STREAM);
        let scale = 1.0 / (value_dim as f64).sqrt();
        gaussian(&mut rng, self.dim * value_dim).into_iter().map(|x| x * scale).collect()
    }
}

pub struct LongTail {
    pub train: Dataset,
    pub eval: Dataset,
    pub prototypes: Prototypes,
}

fn sample_split(spec: &LongTailSpec, protos: &Prototypes, counts: &[usize], split: &str, base: u64) -> Result<Dataset> {
    let mut store = MemoryStore::keys_only(spec.dim)?;
    let mut labels = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        let mut rng = rng_for(spec.seed, base + c as u64);
        for _ in 0..n {
            let x = around(&mut rng, protos.key(c), spec.sigma);
            store.append(&x, &[], MetaRecord::new(split, Some(c as i64)))?;
            labels.push(c);
        }
    }
    Dataset::new(split, spec.classes, store, labels)
}

/// Long-tailed training split, balanced eval split, and the class prototypes.
pub fn gen_longtail(spec: &LongTailSpec) -> Result<LongTail> {
    spec.validate()?;
    let prototypes = Prototypes::generate(spec.classes, spec.dim, spec.seed);
    let train = sample_split(spec, &prototypes, &spec.class_counts(), "train", 1)?;
    let eval = sample_split(
        spec,
        &prototypes,
        &vec![spec.eval_per_class; spec.classes],
        "eval",
        EVAL_STREAM_BASE,
    )?;
    Ok(LongTail {
        train,
        eval,
        prototypes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueMode {
    /// Noisy fixed linear map of the item's key.
    EchoVisual,
    /// Shared per-class value prototype plus noise.
    TextProxy,
}

impl FromStr for ValueMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "echo_visual" => Ok(Self::EchoVisual),
            "text_proxy" => Ok(Self::TextProxy),
            _ => Err(Error::InvalidArgument(format!("unknown value mode {s:?} (echo_visual, text_proxy)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySpec {
    pub size: usize,
    /// Share of items near a class prototype, split evenly over the relevant classes.
    pub relevant_fraction: f64,
    /// Share of items with uniform keys and random values.
    pub distractor_fraction: f64,
    /// Classes that get relevant items; `None` means all.
    pub relevant_classes: Option<Vec<usize>>,
    pub value_mode: ValueMode,
    pub value_dim: usize,
    /// Per-coordinate key noise of relevant items.
    pub key_sigma: f64,
    /// Per-coordinate value noise.
    pub value_noise: f64,
    pub seed: u64,
}

impl MemorySpec {
    /// Spec with exactly `per_class` relevant items for each listed class
    /// (all classes when `None`) and `distractors` uniform items.
    pub fn with_counts(
        classes: usize,
        per_class: usize,
        relevant_classes: Option<Vec<usize>>,
        distractors: usize,
        value_dim: usize,
        seed: u64,
    ) -> Self {
        let n_rel = relevant_classes.as_ref().map_or(classes, |v| v.len()) * per_class;
        let size = n_rel + distractors;
        let frac = |n: usize| if size == 0 { 0.0 } else { n as f64 / size as f64 };
        Self {
            size,
            relevant_fraction: frac(n_rel),
            distractor_fraction: frac(distractors),
            relevant_classes,
            value_mode: ValueMode::TextProxy,
            value_dim,
            key_sigma: 0.3,
            value_noise: 0.1,
            seed,
        }
    }

    /// Relevant items per class (indexed by class), distractors, and uniform
    /// noise items filling the remainder.
    pub fn counts(&self, classes: usize) -> Result<(Vec<usize>, usize, usize)> {
        if self.size == 0 {
            return Err(Error::InvalidArgument("memory size must be positive".into()));
        }
        if self.value_dim == 0 {
            return Err(Error::InvalidArgument("memory value_dim must be positive".into()));
        }
        let (rf, df) = (self.relevant_fraction, self.distractor_fraction);
        if !(0.0..=1.0).contains(&rf) || !(0.0..=1.0).contains(&df) || rf + df > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "fractions must lie in [0, 1] and sum to at most 1, got {rf} + {df}"
            )));
        }
        let targets: Vec<usize> = self.relevant_classes.clone().unwrap_or_else(|| (0..classes).collect());
        if let Some(&bad) = targets.iter().find(|&&c| c >= classes) {
            return Err(Error::InvalidArgument(format!("relevant class {bad} out of range")));
        }
        let n_rel = (self.size as f64 * rf).round() as usize;
        let n_dis = ((self.size as f64 * df).round() as usize).min(self.size - n_rel.min(self.size));
        if n_rel > self.size {
            return Err(Error::InvalidArgument("relevant items exceed memory size".into()));
        }
        let mut per_class = vec![0; classes];
        if !targets.is_empty() {
            let (q, r) = (n_rel / targets.len(), n_rel % targets.len());
            for (i, &c) in targets.iter().enumerate() {
                per_class[c] += q + usize::from(i < r);
            }
        } else if n_rel > 0 {
            return Err(Error::InvalidArgument("relevant items requested but no relevant classes".into()));
        }
        Ok((per_class, n_dis, self.size - n_rel - n_dis))
    }
}

/// Memory store around the given prototypes. Relevant rows carry their class
/// in `class_hint`; distractor and noise rows carry none.
pub fn gen_memory(prototypes: &Prototypes, spec: &MemorySpec) -> Result<MemoryStore> {
    let classes = prototypes.classes();
    let (per_class, n_dis, n_noise) = spec.counts(classes)?;
    let (d, dv) = (prototypes.dim, spec.value_dim);
    let value_protos = prototypes.value_prototypes(dv);
    let echo = prototypes.echo_projection(dv);
    let mut store = MemoryStore::new(d, dv)?;

    let noisy = |rng: &mut ChaCha8Rng, center: Vec<f64>| -> Vec<f32> {
        center.into_iter().map(|c| (c + spec.value_noise * rng.sample::<f64, _>(StandardNormal)) as f32).collect()
    };

    for (c, &n) in per_class.iter().enumerate() {
        let mut rng = rng_for(spec.seed, 1 + c as u64);
        for _ in 0..n {
            let key = around(&mut rng, prototypes.key(c), spec.key_sigma);
            let center: Vec<f64> = match spec.value_mode {
                ValueMode::TextProxy => value_protos[c].iter().map(|&x| x as f64).collect(),
                ValueMode::EchoVisual => (0..dv)
                    .map(|j| (0..d).map(|i| key[i] as f64 * echo[i * dv + j]).sum())
                    .collect(),
            };
            let value = noisy(&mut rng, center);
            store.append(&key, &value, MetaRecord::new("relevant", Some(c as i64)))?;
        }
    }
    for (tag, n, stream) in [("distractor", n_dis, 1 + classes as u64), ("noise", n_noise, 2 + classes as u64)] {
        let mut rng = rng_for(spec.seed, stream);
        for _ in 0..n {
            let key = random_unit(&mut rng, d);
            let value = random_unit(&mut rng, dv);
            store.append(&key, &value, MetaRecord::new(tag, None))?;
        }
    }
    Ok(store)
}

/// Keys drawn around `clusters` random centers; values are empty.
pub fn gen_clustered(count: usize, dim: usize, clusters: usize, sigma: f64, seed: u64) -> Result<MemoryStore> {
    if clusters == 0 || dim < 2 {
        return Err(Error::InvalidArgument("need clusters >= 1 and dim >= 2".into()));
    }
    let protos = Prototypes::generate(clusters, dim, seed);
    let mut store = MemoryStore::keys_only(dim)?;
    let mut rng = rng_for(seed, 1);
    for i in 0..count {
        let c = i % clusters;
        let key = around(&mut rng, protos.key(c), sigma);
        store.append(&key, &[], MetaRecord::new("cluster", Some(c as i64)))?;
    }
    Ok(store)
}
