//! Training driver: dataset (loaded or simulated), model init and Adam.

use crate::error::{Error, Result};
use crate::unfolded::{train_with, TrainConfig, UnfoldedEqualizerModel};

use super::config::ExperimentConfig;
use super::dataset::{generate_dataset, Dataset};

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub model: UnfoldedEqualizerModel,
    pub history: Vec<f64>,
    pub samples: usize,
}

pub fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    let t = &cfg.training;
    TrainConfig {
        steps: t.steps,
        batch_size: t.batch_size,
        learning_rate: t.learning_rate,
        seed: t.seed,
        weighting: t.loss_weights,
        ..TrainConfig::default()
    }
}

/// Uses `training.dataset` when set, otherwise simulates the data in memory.
pub fn load_or_generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.training.dataset {
        Some(path) => {
            if !path.exists() {
                return Err(Error::config(format!("dataset file {} does not exist", path.display())));
            }
            let d = Dataset::load(path)?;
            d.ensure_matches(cfg)?;
            Ok(d)
        }
        None => generate_dataset(cfg),
    }
}

pub fn run_training(cfg: &ExperimentConfig, on_step: impl FnMut(usize, f64)) -> Result<TrainingOutcome> {
    let data = load_or_generate(cfg)?;
    let t = &cfg.training;
    let mut model = UnfoldedEqualizerModel::random(&cfg.model_shape(), &cfg.constellation(), t.init_gain, t.seed)?;
    let history = train_with(&mut model, &data.samples, &train_config(cfg), on_step)?;
    Ok(TrainingOutcome {
        model,
        history,
        samples: data.samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    #[test]
    fn short_run_is_reproducible() {
        let text = "[system]\nn_subcarriers = 8\ncp_len = 2\ntx_per_user = 1\nn_rx = 2\nsymbols_per_frame = 2\n[channel]\nprofiles = [\"tdla-like\"]\n\
                    [training]\nframes = 2\nlayers = 2\nsteps = 5\nbatch_size = 8\n";
        let cfg = ExperimentConfig::from_toml(text, Path::new(".")).unwrap();
        let a = run_training(&cfg, |_, _| {}).unwrap();
        let b = run_training(&cfg, |_, _| {}).unwrap();
        assert_eq!(a.history.len(), 5);
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        assert_eq!(a.samples, 2 * 2 * 8);
    }

    #[test]
    fn missing_dataset_is_config_error() {
        let text = "[training]\ndataset = \"/nonexistent/data.bin\"\n";
        let cfg = ExperimentConfig::from_toml(text, Path::new(".")).unwrap();
        assert!(matches!(run_training(&cfg, |_, _| {}), Err(Error::Config(_))));
    }
}
