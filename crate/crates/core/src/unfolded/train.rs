//! Training set container and the Adam training loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

use super::network::{layer_weights, Features, LossWeighting, Trace, UnfoldedEqualizerModel};

/// Supervised samples: lifted `A^T R̃`, lifted Gram matrix and lifted target
/// `Z_cut`, stored contiguously.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSet {
    dim: usize,
    atr: Vec<f64>,
    gram: Vec<f64>,
    target: Vec<f64>,
}

impl TrainingSet {
    pub fn new(dim: usize) -> Self {
        Self { dim, ..Self::default() }
    }

    pub(crate) fn from_parts(dim: usize, atr: Vec<f64>, gram: Vec<f64>, target: Vec<f64>) -> Result<Self> {
        let n = target.len() / dim.max(1);
        if dim == 0 || atr.len() != n * dim || gram.len() != n * dim * dim || target.len() != n * dim {
            return Err(Error::shape("training set arrays disagree on dimensions"));
        }
        Ok(Self { dim, atr, gram, target })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.target.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, f: &Features, target: &[f64]) -> Result<()> {
        let d = self.dim;
        if f.atr.len() != d || f.gram.len() != d * d || target.len() != d {
            return Err(Error::shape(format!("sample does not have dimension {d}")));
        }
        self.atr.extend_from_slice(&f.atr);
        self.gram.extend_from_slice(&f.gram);
        self.target.extend_from_slice(target);
        Ok(())
    }

    pub fn extend(&mut self, other: &TrainingSet) -> Result<()> {
        if other.is_empty() {
            return Ok(());
        }
        if other.dim != self.dim {
            return Err(Error::shape(format!(
                "cannot merge training sets of dimensions {} and {}",
                self.dim, other.dim
            )));
        }
        self.atr.extend_from_slice(&other.atr);
        self.gram.extend_from_slice(&other.gram);
        self.target.extend_from_slice(&other.target);
        Ok(())
    }

    pub fn features(&self, i: usize) -> Features {
        let d = self.dim;
        Features {
            atr: self.atr[i * d..(i + 1) * d].to_vec(),
            gram: self.gram[i * d * d..(i + 1) * d * d].to_vec(),
        }
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.target[i * self.dim..(i + 1) * self.dim]
    }

    pub(crate) fn raw(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.atr, &self.gram, &self.target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub weighting: LossWeighting,
    /// Training aborts when the batch loss exceeds this value.
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 64,
            learning_rate: 1e-4,
            seed: 0,
            adam: AdamConfig::default(),
            weighting: LossWeighting::LogL,
            divergence_threshold: 1e6,
        }
    }
}

/// Bias-corrected Adam state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            lr,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

/// Samples per gradient chunk; chunks are reduced in a fixed order so the
/// result does not depend on the thread count.
const CHUNK: usize = 16;

/// Mean batch loss over `indices` and its gradient.
pub fn batch_gradient(
    model: &UnfoldedEqualizerModel,
    data: &TrainingSet,
    indices: &[usize],
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if data.dim() != model.dim() {
        return Err(Error::shape(format!(
            "training data has dimension {}, model {}",
            data.dim(),
            model.dim()
        )));
    }
    if weights.len() != model.n_layers() {
        return Err(Error::shape("one loss weight per layer is required"));
    }
    let scale = 1.0 / indices.len().max(1) as f64;
    let n_params = model.params().len();
    let chunk_grad = |chunk: &[usize]| {
        let mut g = vec![0.0; n_params];
        let mut tr = Trace::new(model);
        let mut loss = 0.0;
        for &i in chunk {
            loss += model.sample_gradient(&data.features(i), data.target(i), weights, scale, &mut g, &mut tr);
        }
        (loss, g)
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<(f64, Vec<f64>)> = {
        use rayon::prelude::*;
        indices.par_chunks(CHUNK).map(chunk_grad).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<(f64, Vec<f64>)> = indices.chunks(CHUNK).map(chunk_grad).collect();

    let mut grad = vec![0.0; n_params];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss * scale, grad))
}

/// Trains `model` in place and returns the per-step batch loss.
pub fn train(model: &mut UnfoldedEqualizerModel, data: &TrainingSet, cfg: &TrainConfig) -> Result<Vec<f64>> {
    train_with(model, data, cfg, |_, _| {})
}

/// As [`train`], calling `on_step(step, loss)` after every update.
pub fn train_with(
    model: &mut UnfoldedEqualizerModel,
    data: &TrainingSet,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    if !(cfg.learning_rate >= 0.0) || !cfg.learning_rate.is_finite() {
        return Err(Error::config(format!(
            "learning rate {} must be finite and >= 0",
            cfg.learning_rate
        )));
    }
    let weights = layer_weights(model.n_layers(), cfg.weighting);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params().len(), cfg.learning_rate, cfg.adam);
    let mut history = Vec::with_capacity(cfg.steps);
    let mut indices = vec![0usize; cfg.batch_size];
    for step in 0..cfg.steps {
        for idx in indices.iter_mut() {
            *idx = rng.random_range(0..data.len());
        }
        let (loss, grad) = batch_gradient(model, data, &indices, &weights)?;
        if !loss.is_finite() || loss > cfg.divergence_threshold {
            return Err(Error::Diverged { step, loss });
        }
        adam.update(model.params_mut(), &grad);
        history.push(loss);
        on_step(step, loss);
    }
    Ok(history)
}

/// Mean of the last `window` entries over the mean of the first `window`.
pub fn smoothed_ratio(history: &[f64], window: usize) -> Option<f64> {
    if window == 0 || history.len() < window {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some(mean(&history[history.len() - window..]) / mean(&history[..window]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interference::WindowSpec;
    use crate::modem::Constellation;
    use crate::unfolded::network::{FeatureMode, ModelShape};

    fn toy_set(n: usize, seed: u64) -> TrainingSet {
        // Noiseless identity-like systems: A = I scaled, target a QPSK vector.
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let p = 1.0 / 2f64.sqrt();
        let d = 2;
        let mut set = TrainingSet::new(d);
        for _ in 0..n {
            let z: Vec<f64> = (0..d).map(|_| if rng.random_bool(0.5) { p } else { -p }).collect();
            let s: f64 = rng.random_range(0.5..2.0);
            let f = Features {
                atr: z.iter().map(|v| s * s * v).collect(),
                gram: vec![s * s, 0.0, 0.0, s * s],
            };
            set.push(&f, &z).unwrap();
        }
        set
    }

    fn toy_model() -> UnfoldedEqualizerModel {
        let shape = ModelShape {
            window: WindowSpec::new(vec![], vec![0], true).unwrap(),
            n_tx: 1,
            n_layers: 3,
            mode: FeatureMode::GradientProduct,
        };
        UnfoldedEqualizerModel::random(&shape, &Constellation::new(4).unwrap(), 0.3, 7).unwrap()
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut adam = Adam::new(2, 0.1, AdamConfig::default());
        let mut p = vec![1.0, 1.0];
        adam.update(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn training_is_deterministic_and_learns_toy() {
        let data = toy_set(200, 1);
        let cfg = TrainConfig {
            steps: 300,
            batch_size: 32,
            learning_rate: 1e-2,
            seed: 3,
            ..TrainConfig::default()
        };
        let mut a = toy_model();
        let mut b = toy_model();
        let ha = train(&mut a, &data, &cfg).unwrap();
        let hb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        assert!(smoothed_ratio(&ha, 20).unwrap() < 0.5);
        for i in 0..20 {
            let out = a.predict(&data.features(i)).unwrap();
            for (o, t) in out.iter().zip(data.target(i)) {
                assert!((o - t).abs() < 0.1, "{o} vs {t}");
            }
        }
    }

    #[test]
    fn zero_learning_rate_keeps_model() {
        let data = toy_set(10, 2);
        let mut m = toy_model();
        let before = m.clone();
        let cfg = TrainConfig {
            steps: 5,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        train(&mut m, &data, &cfg).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn divergence_is_reported() {
        let data = toy_set(10, 3);
        let mut m = toy_model();
        let cfg = TrainConfig {
            steps: 5,
            divergence_threshold: 1e-12,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&mut m, &data, &cfg),
            Err(Error::Diverged { step: 0, .. })
        ));
        assert!(train(&mut m, &TrainingSet::new(2), &cfg).is_err());
    }

    #[test]
    fn batch_loss_ignores_sample_order() {
        let data = toy_set(8, 4);
        let m = toy_model();
        let w = layer_weights(3, LossWeighting::LogL);
        let fwd: Vec<usize> = (0..8).collect();
        let rev: Vec<usize> = (0..8).rev().collect();
        let (la, _) = batch_gradient(&m, &data, &fwd, &w).unwrap();
        let (lb, _) = batch_gradient(&m, &data, &rev, &w).unwrap();
        assert!((la - lb).abs() < 1e-12 * la.abs().max(1.0));
    }
}
