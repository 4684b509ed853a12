use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::fusion::{MamCache, MamConfig, MeanCache, MeanFusion, MemoryAttention, Retrieved};
use crate::nn::{Dense, Param, Parameterized, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// `h(z)`
    Linear,
    /// `h2(relu(h1(z)))`
    Mlp,
    /// `h(z + chi(mean(V)))`
    MeanKnn,
    /// `h(mam(z, M, V))`
    Mam,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Linear, Mode::Mlp, Mode::MeanKnn, Mode::Mam];

    pub fn uses_retrieval(self) -> bool {
        matches!(self, Mode::MeanKnn | Mode::Mam)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Linear => "linear",
            Mode::Mlp => "mlp",
            Mode::MeanKnn => "mean_knn",
            Mode::Mam => "mam",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mode {s:?} (linear, mlp, mean_knn, mam)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: Mode,
    pub dim: usize,
    /// Memory value width; ignored by the non-retrieval modes.
    pub value_dim: usize,
    pub num_classes: usize,
    /// Attention layers in `mam` mode.
    pub num_layers: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.num_classes == 0 {
            return Err(Error::InvalidArgument(format!("model needs positive dim and classes, got {self:?}")));
        }
        if self.mode.uses_retrieval() && self.value_dim == 0 {
            return Err(Error::InvalidArgument(format!("{} mode needs a memory with values", self.mode)));
        }
        if self.mode == Mode::Mam && self.num_layers == 0 {
            return Err(Error::InvalidArgument("mam mode needs at least one layer".into()));
        }
        Ok(())
    }
}

/// Classifier head plus whatever fusion the mode needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    pub hidden: Option<Dense<T>>,
    pub mean: Option<MeanFusion<T>>,
    pub mam: Option<MemoryAttention<T>>,
    pub head: Dense<T>,
}

#[derive(Debug, Clone)]
enum FusionCache<T> {
    Linear,
    Mlp { pre: Vec<T> },
    Mean(MeanCache<T>),
    Mam(MamCache<T>),
}

#[derive(Debug, Clone)]
pub struct ModelCache<T> {
    z: Vec<T>,
    head_input: Vec<T>,
    fusion: FusionCache<T>,
}

impl<T: Real> Model<T> {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (d, dp) = (config.dim, config.value_dim);
        let hidden = (config.mode == Mode::Mlp).then(|| Dense::uniform("mlp.hidden", d, d, rng));
        let mean = (config.mode == Mode::MeanKnn).then(|| MeanFusion::new(d, dp));
        let mam = if config.mode == Mode::Mam {
            let cfg = MamConfig {
                d,
                d_prime: dp,
                num_layers: config.num_layers,
            };
            Some(MemoryAttention::new(cfg, rng)?)
        } else {
            None
        };
        let head = Dense::uniform("head", d, config.num_classes, rng);
        Ok(Self {
            config,
            hidden,
            mean,
            mam,
            head,
        })
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    /// Logits for one query. Retrieval modes need `nn`.
    pub fn forward(&self, z: &[T], nn: Option<&Retrieved<T>>) -> Result<(Vec<T>, ModelCache<T>)> {
        ensure_dim(self.config.dim, z.len())?;
        let need_nn = || nn.ok_or_else(|| Error::InvalidArgument(format!("{} mode needs retrieved neighbors", self.config.mode)));
        let (head_input, fusion) = match self.config.mode {
            Mode::Linear => (z.to_vec(), FusionCache::Linear),
            Mode::Mlp => {
                let pre = self.hidden.as_ref().expect("mlp has a hidden layer").forward(z);
                let act = pre.iter().map(|&x| x.max(T::zero())).collect();
                (act, FusionCache::Mlp { pre })
            }
            Mode::MeanKnn => {
                let (out, c) = self.mean.as_ref().expect("mean_knn has fusion").forward(z, need_nn()?)?;
                (out, FusionCache::Mean(c))
            }
            Mode::Mam => {
                let (out, c) = self.mam.as_ref().expect("mam has fusion").forward(z, need_nn()?)?;
                (out, FusionCache::Mam(c))
            }
        };
        let logits = self.head.forward(&head_input);
        Ok((
            logits,
            ModelCache {
                z: z.to_vec(),
                head_input,
                fusion,
            },
        ))
    }

    pub fn logits(&self, z: &[T], nn: Option<&Retrieved<T>>) -> Result<Vec<T>> {
        Ok(self.forward(z, nn)?.0)
    }

    /// Accumulates parameter gradients; returns `dL/dz`.
    pub fn backward(&mut self, cache: &ModelCache<T>, d_logits: &[T]) -> Result<Vec<T>> {
        ensure_dim(self.config.num_classes, d_logits.len())?;
        let d_head_in = self.head.backward(&cache.head_input, d_logits);
        match &cache.fusion {
            FusionCache::Linear => Ok(d_head_in),
            FusionCache::Mlp { pre } => {
                let d_pre: Vec<T> = pre
                    .iter()
                    .zip(&d_head_in)
                    .map(|(&p, &g)| if p > T::zero() { g } else { T::zero() })
                    .collect();
                Ok(self.hidden.as_mut().expect("mlp has a hidden layer").backward(&cache.z, &d_pre))
            }
            FusionCache::Mean(c) => Ok(self.mean.as_mut().expect("mean_knn has fusion").backward(c, &d_head_in)),
            FusionCache::Mam(c) => self.mam.as_mut().expect("mam has fusion").backward(c, &d_head_in),
        }
    }
}

impl<T: Real> Parameterized<T> for Model<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        if let Some(m) = &self.mam {
            out.extend(m.params());
        }
        if let Some(m) = &self.mean {
            out.extend(m.params());
        }
        if let Some(h) = &self.hidden {
            out.extend(h.params());
        }
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        if let Some(m) = &mut self.mam {
            out.extend(m.params_mut());
        }
        if let Some(m) = &mut self.mean {
            out.extend(m.params_mut());
        }
        if let Some(h) = &mut self.hidden {
            out.extend(h.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckOptions};
    use crate::train::loss::ce_label_smoothing;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(mode: Mode) -> ModelConfig {
        ModelConfig {
            mode,
            dim: 6,
            value_dim: 4,
            num_classes: 5,
            num_layers: 2,
        }
    }

    fn nn(rng: &mut ChaCha8Rng, k: usize) -> Retrieved<f64> {
        let keys = (0..k * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let values = (0..k * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        Retrieved::new((0..k).collect(), 6, 4, keys, values).unwrap()
    }

    fn z(rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert_eq!("mean-knn".parse::<Mode>().unwrap(), Mode::MeanKnn);
        assert!("knn".parse::<Mode>().is_err());
    }

    #[test]
    fn zero_init_fusion_matches_linear() {
        for mode in [Mode::Mam, Mode::MeanKnn] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let fused = Model::<f64>::new(cfg(mode), &mut rng).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut linear = Model::<f64>::new(cfg(Mode::Linear), &mut rng).unwrap();
            linear.head = fused.head.clone();
            let (q, n) = (z(&mut rng), nn(&mut rng, 3));
            assert_eq!(fused.logits(&q, Some(&n)).unwrap(), linear.logits(&q, None).unwrap());
        }
    }

    #[test]
    fn identity_head_returns_z() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = ModelConfig { num_classes: 6, ..cfg(Mode::Linear) };
        let mut m = Model::<f64>::new(c, &mut rng).unwrap();
        m.head.w.value = (0..36).map(|i| if i % 7 == 0 { 1.0 } else { 0.0 }).collect();
        let q = z(&mut rng);
        assert_eq!(m.logits(&q, None).unwrap(), q);
    }

    #[test]
    fn mean_knn_matches_hand_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = Model::<f64>::new(cfg(Mode::MeanKnn), &mut rng).unwrap();
        let chi = &mut m.mean.as_mut().unwrap().chi;
        chi.w.value.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        chi.b.value.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        let (q, n) = (z(&mut rng), nn(&mut rng, 3));
        let chi = &m.mean.as_ref().unwrap().chi;
        let mut fused = q.clone();
        for o in 0..6 {
            let mut acc = chi.b.value[o];
            for i in 0..4 {
                let mean = (0..3).map(|j| n.value(j)[i]).sum::<f64>() / 3.0;
                acc += mean * chi.w.value[i * 6 + o];
            }
            fused[o] += acc;
        }
        let expect: Vec<f64> = (0..5)
            .map(|c| m.head.b.value[c] + (0..6).map(|i| fused[i] * m.head.w.value[i * 5 + c]).sum::<f64>())
            .collect();
        for (a, b) in m.logits(&q, Some(&n)).unwrap().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn retrieval_modes_need_neighbors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Model::<f64>::new(cfg(Mode::Mam), &mut rng).unwrap();
        assert!(m.forward(&z(&mut rng), None).is_err());
        assert!(Model::<f64>::new(ModelConfig { value_dim: 0, ..cfg(Mode::Mam) }, &mut rng).is_err());
        assert!(Model::<f64>::new(ModelConfig { value_dim: 0, ..cfg(Mode::Linear) }, &mut rng).is_ok());
    }

    #[test]
    fn every_mode_passes_grad_check() {
        for mode in Mode::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let mut m = Model::<f64>::new(cfg(mode), &mut rng).unwrap();
            for p in m.params_mut() {
                p.value.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            }
            let (q, n) = (z(&mut rng), nn(&mut rng, 3));
            let (logits, cache) = m.forward(&q, Some(&n)).unwrap();
            let (_, g) = ce_label_smoothing(&logits, 2, 0.1).unwrap();
            m.backward(&cache, &g).unwrap();
            let loss = |m: &Model<f64>| ce_label_smoothing(&m.logits(&q, Some(&n)).unwrap(), 2, 0.1).unwrap().0;
            let report = grad_check(&mut m, loss, GradCheckOptions { max_coords_per_param: 0, ..Default::default() }).unwrap();
            assert!(report.max_rel_err < 1e-5, "{mode}: {report:?}");
        }
    }
}
