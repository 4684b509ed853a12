use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotCategory {
    Many,
    Mid,
    Low,
}

/// `count > many_min` is many-shot, `count < low_max` is low-shot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotThresholds {
    pub many_min: usize,
    pub low_max: usize,
}

impl Default for ShotThresholds {
    fn default() -> Self {
        Self {
            many_min: 100,
            low_max: 20,
        }
    }
}

impl ShotThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.low_max < 1 || self.many_min <= self.low_max {
            return Err(Error::InvalidArgument(format!(
                "shot thresholds need many_min > low_max >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn categorize(&self, count: usize) -> ShotCategory {
        if count > self.many_min {
            ShotCategory::Many
        } else if count < self.low_max {
            ShotCategory::Low
        } else {
            ShotCategory::Mid
        }
    }
}

pub fn shot_categories(class_counts: &[usize], thresholds: ShotThresholds) -> Result<Vec<ShotCategory>> {
    thresholds.validate()?;
    Ok(class_counts.iter().map(|&n| thresholds.categorize(n)).collect())
}

/// Top-1 accuracy, overall and per shot category. A category with no eval
/// examples reports `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub overall: f64,
    pub many: Option<f64>,
    pub mid: Option<f64>,
    pub low: Option<f64>,
    /// `None` for classes absent from the eval set.
    pub per_class: Vec<Option<f64>>,
}

impl Metrics {
    /// `train_counts` decides each class's shot category.
    pub fn compute(
        predictions: &[usize],
        labels: &[usize],
        train_counts: &[usize],
        thresholds: ShotThresholds,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("eval set"));
        }
        if predictions.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                got: predictions.len(),
            });
        }
        let cats = shot_categories(train_counts, thresholds)?;
        let c = train_counts.len();
        let mut hits = vec![0usize; c];
        let mut totals = vec![0usize; c];
        for (&p, &y) in predictions.iter().zip(labels) {
            if y >= c {
                return Err(Error::InvalidArgument(format!("label {y} out of range for {c} classes")));
            }
            totals[y] += 1;
            hits[y] += (p == y) as usize;
        }
        let ratio = |h: usize, t: usize| (t > 0).then(|| h as f64 / t as f64);
        let group = |cat: ShotCategory| {
            let (h, t) = (0..c)
                .filter(|&i| cats[i] == cat)
                .fold((0, 0), |(h, t), i| (h + hits[i], t + totals[i]));
            ratio(h, t)
        };
        Ok(Self {
            overall: hits.iter().sum::<usize>() as f64 / labels.len() as f64,
            many: group(ShotCategory::Many),
            mid: group(ShotCategory::Mid),
            low: group(ShotCategory::Low),
            per_class: (0..c).map(|i| ratio(hits[i], totals[i])).collect(),
        })
    }
}
