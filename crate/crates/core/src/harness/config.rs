//! Experiment configuration (TOML, unknown keys rejected).
//!
//! ```toml
//! [system]            # every key optional; defaults are the desk-scale link
//! n_subcarriers = 64
//! cp_len = 8
//! n_users = 1
//! tx_per_user = 2
//! n_rx = 4
//! qam_order = 4
//! symbols_per_frame = 14
//! sample_rate = 5.27e6          # samples/s; delays in PDP files are in us
//!
//! [channel]
//! profiles = ["measured"]       # one per user, or one for all users;
//!                               # "measured", "tdla-like" or a PDP file path
//!
//! [receiver]
//! equalizer = "dnn"             # mmse | zf | ml | dnn | dnn:<model path>
//! model = "model.txt"           # model file for dnn
//! pre_detector = "zf"           # mmse | zf
//! baselines = ["mmse", "zf"]    # extra equalizers scored on the same frames
//! window_prev = [0]
//! window_cur = [-1, 0, 1]
//! n_iter = 2
//! ml_cap = 8
//!
//! [sweep]
//! snr_db = [10.0, 15.0, 20.0]
//! trials = 200                  # frames per SNR point
//! seed = 1
//! out = "results.csv"
//!
//! [training]
//! frames = 40
//! snr_db_min = 15.0
//! snr_db_max = 25.0
//! layers = 10
//! features = "gradient-product" # or "gram"
//! loss_weights = "log-l"        # or "log-l-plus-one"
//! init_gain = 0.3
//! steps = 8000
//! batch_size = 128
//! learning_rate = 1e-3
//! seed = 7
//! dataset = "train.bin"
//! model_out = "model.txt"
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::channel::{pdp_to_sample_taps, PowerDelayProfile, SampleTaps};
use crate::error::{Error, Result};
use crate::interference::WindowSpec;
use crate::modem::{Constellation, SystemConfig, DESK_SAMPLE_RATE};
use crate::receiver::PreDetector;
use crate::unfolded::{FeatureMode, LossWeighting, ModelShape};

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    system: RawSystem,
    #[serde(default)]
    channel: RawChannel,
    #[serde(default)]
    receiver: RawReceiver,
    #[serde(default)]
    sweep: RawSweep,
    #[serde(default)]
    training: RawTraining,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    n_subcarriers: Option<usize>,
    cp_len: Option<usize>,
    n_users: Option<usize>,
    tx_per_user: Option<usize>,
    n_rx: Option<usize>,
    qam_order: Option<usize>,
    symbols_per_frame: Option<usize>,
    sample_rate: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    profiles: Option<Vec<String>>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawReceiver {
    equalizer: Option<String>,
    model: Option<String>,
    pre_detector: Option<String>,
    baselines: Option<Vec<String>>,
    window_prev: Option<Vec<i64>>,
    window_cur: Option<Vec<i64>>,
    n_iter: Option<usize>,
    ml_cap: Option<usize>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    snr_db: Option<Vec<f64>>,
    trials: Option<usize>,
    seed: Option<u64>,
    out: Option<String>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawTraining {
    frames: Option<usize>,
    snr_db_min: Option<f64>,
    snr_db_max: Option<f64>,
    layers: Option<usize>,
    features: Option<String>,
    loss_weights: Option<String>,
    init_gain: Option<f64>,
    steps: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    seed: Option<u64>,
    dataset: Option<String>,
    model_out: Option<String>,
}

/// Equalizer scored by a sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum EqualizerChoice {
    Mmse,
    Zf,
    /// Iterative receiver with exhaustive reduced ML per window.
    Ml,
    /// Iterative receiver with the unfolded network loaded from this path.
    Dnn(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOptions {
    pub frames: usize,
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    pub layers: usize,
    pub features: FeatureMode,
    pub loss_weights: LossWeighting,
    pub init_gain: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub model_out: Option<PathBuf>,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        Self {
            frames: 40,
            snr_db_min: 15.0,
            snr_db_max: 25.0,
            layers: 10,
            features: FeatureMode::GradientProduct,
            loss_weights: LossWeighting::LogL,
            init_gain: 0.3,
            steps: 8000,
            batch_size: 128,
            learning_rate: 1e-4,
            seed: 0,
            dataset: None,
            model_out: None,
        }
    }
}

/// Fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    /// One profile per user.
    pub profiles: Vec<PowerDelayProfile>,
    pub equalizer: EqualizerChoice,
    pub pre_detector: PreDetector,
    pub baselines: Vec<PreDetector>,
    pub window: WindowSpec,
    pub n_iter: usize,
    pub ml_cap: usize,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub training: TrainingOptions,
    /// SHA-256 of the configuration text.
    pub config_hash: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_toml("", Path::new(".")).expect("defaults are valid")
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn load_profile(name: &str, base: &Path) -> Result<PowerDelayProfile> {
    match name {
        "measured" => Ok(PowerDelayProfile::measured()),
        "tdla-like" => Ok(PowerDelayProfile::tdla_like()),
        path => {
            let p = resolve(base, path);
            if !p.exists() {
                return Err(Error::config(format!("profile file {} does not exist", p.display())));
            }
            PowerDelayProfile::load(&p)
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses configuration text; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string().trim_end().to_string()))?;
        let d = SystemConfig::default();
        let s = raw.system;
        let system = SystemConfig {
            n_subcarriers: s.n_subcarriers.unwrap_or(d.n_subcarriers),
            cp_len: s.cp_len.unwrap_or(d.cp_len),
            n_users: s.n_users.unwrap_or(d.n_users),
            tx_per_user: s.tx_per_user.unwrap_or(d.tx_per_user),
            n_rx: s.n_rx.unwrap_or(d.n_rx),
            qam_order: s.qam_order.unwrap_or(d.qam_order),
            symbols_per_frame: s.symbols_per_frame.unwrap_or(d.symbols_per_frame),
            noise_variance: d.noise_variance,
            sample_rate: s.sample_rate.unwrap_or(DESK_SAMPLE_RATE),
        };
        system.validate()?;

        let names = raw.channel.profiles.unwrap_or_else(|| vec!["measured".into()]);
        let profiles = match names.len() {
            1 => vec![load_profile(&names[0], base)?; system.n_users],
            n if n == system.n_users => names.iter().map(|p| load_profile(p, base)).collect::<Result<_>>()?,
            n => {
                return Err(Error::config(format!(
                    "{n} channel profiles for {} users (give one, or one per user)",
                    system.n_users
                )))
            }
        };

        let r = raw.receiver;
        let model_path = r.model.as_deref().map(|p| resolve(base, p));
        let equalizer = match r.equalizer.as_deref().unwrap_or("mmse") {
            "mmse" => EqualizerChoice::Mmse,
            "zf" => EqualizerChoice::Zf,
            "ml" => EqualizerChoice::Ml,
            "dnn" => {
                EqualizerChoice::Dnn(model_path.ok_or_else(|| Error::config("equalizer 'dnn' needs receiver.model"))?)
            }
            other => match other.strip_prefix("dnn:") {
                Some(p) if !p.is_empty() => EqualizerChoice::Dnn(resolve(base, p)),
                _ => {
                    return Err(Error::config(format!(
                        "unknown equalizer '{other}' (expected mmse, zf, ml, dnn or dnn:<path>)"
                    )))
                }
            },
        };
        let pre_detector: PreDetector = r.pre_detector.as_deref().unwrap_or("zf").parse()?;
        let baselines = r
            .baselines
            .unwrap_or_default()
            .iter()
            .map(|b| b.parse())
            .collect::<Result<Vec<PreDetector>>>()?;
        let window = WindowSpec::new(
            r.window_prev.unwrap_or_else(|| vec![0]),
            r.window_cur.unwrap_or_else(|| vec![-1, 0, 1]),
            true,
        )?;
        window.validate_for(system.n_subcarriers)?;
        let n_iter = r.n_iter.unwrap_or(1);
        if n_iter == 0 {
            return Err(Error::config("receiver.n_iter must be at least 1"));
        }

        let sw = raw.sweep;
        let snr_db = sw.snr_db.unwrap_or_else(|| vec![20.0]);
        if snr_db.is_empty() {
            return Err(Error::config("sweep.snr_db must not be empty"));
        }
        if snr_db.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
            return Err(Error::config(
                "sweep.snr_db entries must be numbers (inf means noiseless)",
            ));
        }
        let trials = sw.trials.unwrap_or(100);
        if trials == 0 {
            return Err(Error::config("sweep.trials must be at least 1"));
        }

        let t = raw.training;
        let td = TrainingOptions::default();
        let training = TrainingOptions {
            frames: t.frames.unwrap_or(td.frames),
            snr_db_min: t.snr_db_min.unwrap_or(td.snr_db_min),
            snr_db_max: t.snr_db_max.unwrap_or(td.snr_db_max),
            layers: t.layers.unwrap_or(td.layers),
            features: t.features.as_deref().map_or(Ok(td.features), str::parse)?,
            loss_weights: t.loss_weights.as_deref().map_or(Ok(td.loss_weights), str::parse)?,
            init_gain: t.init_gain.unwrap_or(td.init_gain),
            steps: t.steps.unwrap_or(td.steps),
            batch_size: t.batch_size.unwrap_or(td.batch_size),
            learning_rate: t.learning_rate.unwrap_or(td.learning_rate),
            seed: t.seed.unwrap_or(td.seed),
            dataset: t.dataset.as_deref().map(|p| resolve(base, p)),
            model_out: t.model_out.as_deref().map(|p| resolve(base, p)),
        };
        if !(training.snr_db_min <= training.snr_db_max) {
            return Err(Error::config("training.snr_db_min must not exceed training.snr_db_max"));
        }
        if training.layers == 0 || training.batch_size == 0 {
            return Err(Error::config(
                "training.layers and training.batch_size must be at least 1",
            ));
        }

        Ok(Self {
            system,
            profiles,
            equalizer,
            pre_detector,
            baselines,
            window,
            n_iter,
            ml_cap: r.ml_cap.unwrap_or(crate::equalizers::DEFAULT_ML_CAP),
            snr_db,
            trials,
            seed: sw.seed.unwrap_or(0),
            out: sw.out.as_deref().map(|p| resolve(base, p)),
            training,
            config_hash: hex(&Sha256::digest(text.as_bytes())),
        })
    }

    pub fn constellation(&self) -> Constellation {
        Constellation::new(self.system.qam_order).expect("validated")
    }

    /// Sample-spaced taps for each transmit antenna (users' antennas share
    /// their user's profile).
    pub fn per_tx_taps(&self) -> Result<Vec<SampleTaps>> {
        let mut out = Vec::with_capacity(self.system.total_tx());
        for p in &self.profiles {
            let taps = pdp_to_sample_taps(p, self.system.sample_rate)?;
            if taps.cir_len() > self.system.n_subcarriers {
                return Err(Error::Unsupported(format!(
                    "profile '{}' spans {} samples, more than {} subcarriers",
                    p.name,
                    taps.cir_len(),
                    self.system.n_subcarriers
                )));
            }
            out.extend(std::iter::repeat_n(taps, self.system.tx_per_user));
        }
        Ok(out)
    }

    pub fn model_shape(&self) -> ModelShape {
        ModelShape {
            window: self.window.clone(),
            n_tx: self.system.total_tx(),
            n_layers: self.training.layers,
            mode: self.training.features,
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// `sigma^2 = 10^(-SNR/10)`: SNR is Es/N0 per transmitted stream with
/// unit-energy symbols. `+inf` gives a noiseless link.
pub fn noise_variance_for_snr(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}
