//! Monte Carlo SNR sweeps over the time-domain link.
//!
//! Trial `t` draws everything from `ChaCha20Rng::seed_from_u64(seed)` on
//! stream `t` (symbols, then channel, then noise), so every SNR point sees
//! the same frames and channels and only the noise scale changes.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::channel::{generate_cir_with, propagate_time_domain, SampleTaps};
use crate::equalizers::EqualizerContext;
use crate::error::{Error, Result};
use crate::interference::{build_mimo_channel_with, DftMatrix};
use crate::linalg::C64;
use crate::modem::{FrameSymbols, OfdmEngine};
use crate::receiver::{pre_detect_frame, refine_frame, PreDetectionBuffer, PreDetector, WindowDetector};
use crate::unfolded::{load_model_for, UnfoldedEqualizerModel};

use super::config::{noise_variance_for_snr, EqualizerChoice, ExperimentConfig};

/// Integer error counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorCounts {
    pub symbols: u64,
    pub symbol_errors: u64,
    pub bits: u64,
    pub bit_errors: u64,
}

impl ErrorCounts {
    pub fn ser(&self) -> f64 {
        ratio(self.symbol_errors, self.symbols)
    }

    pub fn ber(&self) -> f64 {
        ratio(self.bit_errors, self.bits)
    }

    fn add(&mut self, o: &ErrorCounts) {
        self.symbols += o.symbols;
        self.symbol_errors += o.symbol_errors;
        self.bits += o.bits;
        self.bit_errors += o.bit_errors;
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Counts for one decision stage (a baseline, the pre-detection or one pass).
#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    pub label: String,
    pub total: ErrorCounts,
    pub per_user: Vec<ErrorCounts>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub snr_db: f64,
    /// Trials that completed and were counted.
    pub trials: u64,
    /// Trials dropped after a numerical failure.
    pub failures: u64,
    pub stages: Vec<StageResult>,
    /// Index in `stages` of the configured equalizer's final decisions.
    pub primary: usize,
}

impl SweepPoint {
    pub fn primary(&self) -> &StageResult {
        &self.stages[self.primary]
    }

    pub fn stage(&self, label: &str) -> Option<&StageResult> {
        self.stages.iter().find(|s| s.label == label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub git_describe: String,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub metadata: SweepMetadata,
}

pub const CSV_HEADER: &str = "snr_db,trials,symbols,symbol_errors,ser,bits,bit_errors,ber";

fn csv_row(out: &mut String, snr_db: f64, trials: u64, c: &ErrorCounts) {
    let _ = writeln!(
        out,
        "{snr_db},{trials},{},{},{:.6e},{},{},{:.6e}",
        c.symbols,
        c.symbol_errors,
        c.ser(),
        c.bits,
        c.bit_errors,
        c.ber()
    );
}

impl SweepResult {
    /// Primary equalizer, one row per SNR point.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for p in &self.points {
            csv_row(&mut s, p.snr_db, p.trials, &p.primary().total);
        }
        s
    }

    /// Primary equalizer restricted to one user's antennas.
    pub fn user_csv(&self, user: usize) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for p in &self.points {
            csv_row(&mut s, p.snr_db, p.trials, &p.primary().per_user[user]);
        }
        s
    }

    /// Every stage at every SNR point: `snr_db,stage,user,<counts>`, where
    /// `user` is `all` or a user index (per-user rows only for several users).
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("snr_db,stage,user,trials,symbols,symbol_errors,ser,bits,bit_errors,ber\n");
        for p in &self.points {
            for st in &p.stages {
                let users = if st.per_user.len() > 1 { st.per_user.len() } else { 0 };
                let rows = std::iter::once(("all".to_string(), &st.total))
                    .chain((0..users).map(|u| (u.to_string(), &st.per_user[u])));
                for (user, counts) in rows {
                    let mut row = String::new();
                    csv_row(&mut row, p.snr_db, p.trials, counts);
                    let (snr, rest) = row.split_once(',').expect("row has fields");
                    let _ = write!(s, "{snr},{},{user},{rest}", st.label);
                }
            }
        }
        s
    }

    pub fn metadata_text(&self) -> String {
        let m = &self.metadata;
        let mut s = String::new();
        let _ = writeln!(s, "config_sha256 {}", m.config_hash);
        let _ = writeln!(s, "seed {}", m.seed);
        let _ = writeln!(s, "git_describe {}", m.git_describe);
        let _ = writeln!(s, "wall_time_s {:.3}", m.wall_time_s);
        for p in &self.points {
            let _ = writeln!(s, "snr_db {} trials {} failures {}", p.snr_db, p.trials, p.failures);
        }
        s
    }

    /// Human-readable table of every stage.
    pub fn summary_table(&self) -> String {
        let mut s = format!(
            "{:>8}  {:<16} {:>8} {:>12} {:>12}\n",
            "snr_db", "stage", "trials", "ser", "ber"
        );
        for p in &self.points {
            for (k, st) in p.stages.iter().enumerate() {
                let mark = if k == p.primary { "*" } else { " " };
                let _ = writeln!(
                    s,
                    "{:>8}  {:<16} {:>8} {:>12.4e} {:>12.4e}{mark}",
                    p.snr_db,
                    st.label,
                    p.trials,
                    st.total.ser(),
                    st.total.ber()
                );
            }
        }
        s
    }
}

/// `git describe --always --dirty`, or `unknown`.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// One simulated frame at a given noise level.
pub struct SimulatedFrame {
    pub truth: FrameSymbols,
    pub y: Vec<Vec<C64>>,
    pub channel: crate::interference::MimoFreqChannel,
}

/// Shared, read-only parts of a simulation.
pub struct Simulator {
    cfg: ExperimentConfig,
    taps: Vec<SampleTaps>,
    engine: OfdmEngine,
    dft: DftMatrix,
}

impl Simulator {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            taps: cfg.per_tx_taps()?,
            engine: OfdmEngine::new(&cfg.system),
            dft: DftMatrix::new(cfg.system.n_subcarriers),
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Draws frame, channel and noise from `rng` and runs the time-domain link.
    pub fn frame(&self, noise_variance: f64, rng: &mut ChaCha20Rng) -> Result<SimulatedFrame> {
        let sys = &self.cfg.system;
        let c = self.cfg.constellation();
        let truth = FrameSymbols::random(sys, &c, rng);
        let ch = generate_cir_with(&self.taps, sys.n_rx, rng);
        let tx = self.engine.modulate_frame(&truth)?;
        let rx = propagate_time_domain(&tx, &ch, noise_variance, rng)?;
        let y = self.engine.demodulate_frame(&rx, sys.symbols_per_frame)?;
        let channel = build_mimo_channel_with(&ch, &self.dft, sys.cp_len)?;
        Ok(SimulatedFrame { truth, y, channel })
    }

    /// Random generator of trial `trial`.
    pub fn trial_rng(&self, seed: u64, trial: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(trial);
        rng
    }
}

fn stage_counts(b: &PreDetectionBuffer, truth: &FrameSymbols, cfg: &ExperimentConfig, label: String) -> StageResult {
    let bps = cfg.constellation().bits_per_symbol() as u64;
    let per_symbol = (truth.n_symbols() * truth.n_subcarriers()) as u64;
    let counts = |ants: std::ops::Range<usize>| {
        let n_ant = ants.len() as u64;
        ErrorCounts {
            symbols: per_symbol * n_ant,
            symbol_errors: b.symbol_errors(truth, ants.clone()) as u64,
            bits: per_symbol * n_ant * bps,
            bit_errors: b.bit_errors(truth, ants) as u64,
        }
    };
    let tpu = cfg.system.tx_per_user;
    StageResult {
        label,
        total: counts(0..truth.n_tx()),
        per_user: (0..cfg.system.n_users)
            .map(|u| counts(u * tpu..(u + 1) * tpu))
            .collect(),
    }
}

/// Equalizes one frame with every configured stage; returns the stages and
/// the primary index.
pub fn evaluate_frame(
    frame: &SimulatedFrame,
    cfg: &ExperimentConfig,
    model: Option<&UnfoldedEqualizerModel>,
    noise_variance: f64,
) -> Result<(Vec<StageResult>, usize)> {
    let c = cfg.constellation();
    let ctx = EqualizerContext::new(&frame.channel, &c, noise_variance)?;
    let mut stages = Vec::new();
    let mut cached: Vec<(PreDetector, PreDetectionBuffer)> = Vec::new();
    let baseline = |method: PreDetector, cached: &mut Vec<(PreDetector, PreDetectionBuffer)>| {
        if let Some((_, b)) = cached.iter().find(|(m, _)| *m == method) {
            return Ok(b.clone());
        }
        let b = pre_detect_frame(&frame.y, &ctx, method)?;
        cached.push((method, b.clone()));
        Ok::<_, Error>(b)
    };
    for &b in &cfg.baselines {
        let buf = baseline(b, &mut cached)?;
        stages.push(stage_counts(&buf, &frame.truth, cfg, b.to_string()));
    }
    let (detector, name) = match &cfg.equalizer {
        EqualizerChoice::Mmse | EqualizerChoice::Zf => {
            let method = if cfg.equalizer == EqualizerChoice::Mmse {
                PreDetector::Mmse
            } else {
                PreDetector::Zf
            };
            if let Some(k) = cfg.baselines.iter().position(|&b| b == method) {
                return Ok((stages, k));
            }
            let buf = baseline(method, &mut cached)?;
            stages.push(stage_counts(&buf, &frame.truth, cfg, method.to_string()));
            let k = stages.len() - 1;
            return Ok((stages, k));
        }
        EqualizerChoice::Ml => (WindowDetector::ReducedMl { cap: cfg.ml_cap }, "ml"),
        EqualizerChoice::Dnn(_) => (
            WindowDetector::Dnn(model.ok_or_else(|| Error::config("dnn equalizer selected without a model"))?),
            "dnn",
        ),
    };
    let initial = baseline(cfg.pre_detector, &mut cached)?;
    let bufs = refine_frame(&frame.y, &ctx, detector, &cfg.window, cfg.n_iter, initial)?;
    for (k, b) in bufs.iter().enumerate() {
        let label = if k == 0 {
            format!("pre-{}", cfg.pre_detector)
        } else {
            format!("{name}-iter-{k}")
        };
        stages.push(stage_counts(b, &frame.truth, cfg, label));
    }
    let k = stages.len() - 1;
    Ok((stages, k))
}

/// Loads the model for a `dnn` equalizer and checks it against the config.
pub fn load_configured_model(cfg: &ExperimentConfig) -> Result<Option<UnfoldedEqualizerModel>> {
    match &cfg.equalizer {
        EqualizerChoice::Dnn(path) => {
            if !path.exists() {
                return Err(Error::config(format!("model file {} does not exist", path.display())));
            }
            let m = load_model_for(path, &cfg.window, cfg.system.total_tx(), &cfg.constellation()).map_err(
                |e| match e {
                    Error::Shape(msg) => Error::config(msg),
                    other => other,
                },
            )?;
            Ok(Some(m))
        }
        EqualizerChoice::Ml => {
            let dim = cfg.window.dim(cfg.system.total_tx());
            if dim > cfg.ml_cap {
                return Err(Error::SearchTooLarge {
                    dim,
                    order: cfg.system.qam_order,
                    candidates: (cfg.system.qam_order as f64).powi(dim as i32),
                    cap: cfg.ml_cap,
                });
            }
            Ok(None)
        }
        _ => Ok(None),
    }
}

/// Runs every SNR point; the model (if any) must already be loaded.
pub fn run_sweep_with_model(cfg: &ExperimentConfig, model: Option<&UnfoldedEqualizerModel>) -> Result<SweepResult> {
    if let (EqualizerChoice::Dnn(_), None) = (&cfg.equalizer, model) {
        return Err(Error::config("dnn equalizer selected without a model"));
    }
    if let Some(m) = model {
        m.ensure_matches(&cfg.window, cfg.system.total_tx(), &cfg.constellation())
            .map_err(|e| Error::config(e.to_string()))?;
    }
    let start = Instant::now();
    let sim = Simulator::new(cfg)?;
    let mut points = Vec::with_capacity(cfg.snr_db.len());
    for &snr in &cfg.snr_db {
        let sigma2 = noise_variance_for_snr(snr);
        let trial = |t: u64| -> Result<Option<(Vec<StageResult>, usize)>> {
            let mut rng = sim.trial_rng(cfg.seed, t);
            let frame = sim.frame(sigma2, &mut rng)?;
            match evaluate_frame(&frame, cfg, model, sigma2) {
                Ok(r) => Ok(Some(r)),
                Err(e) if e.is_numerical() => Ok(None),
                Err(e) => Err(e),
            }
        };
        #[cfg(feature = "parallel")]
        let outcomes: Vec<_> = {
            use rayon::prelude::*;
            (0..cfg.trials as u64).into_par_iter().map(trial).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let outcomes: Vec<_> = (0..cfg.trials as u64).map(trial).collect();

        let mut point: Option<SweepPoint> = None;
        let mut failures = 0u64;
        let mut counted = 0u64;
        for o in outcomes {
            match o? {
                None => failures += 1,
                Some((stages, primary)) => {
                    counted += 1;
                    match &mut point {
                        None => {
                            point = Some(SweepPoint {
                                snr_db: snr,
                                trials: 0,
                                failures: 0,
                                stages,
                                primary,
                            })
                        }
                        Some(p) => {
                            for (acc, s) in p.stages.iter_mut().zip(&stages) {
                                acc.total.add(&s.total);
                                for (a, b) in acc.per_user.iter_mut().zip(&s.per_user) {
                                    a.add(b);
                                }
                            }
                        }
                    }
                }
            }
        }
        if failures * 100 > cfg.trials as u64 {
            return Err(Error::Numerical(format!(
                "{failures} of {} trials failed numerically at {snr} dB",
                cfg.trials
            )));
        }
        let mut p = point.ok_or_else(|| Error::Numerical(format!("every trial failed at {snr} dB")))?;
        p.trials = counted;
        p.failures = failures;
        points.push(p);
    }
    Ok(SweepResult {
        points,
        metadata: SweepMetadata {
            config_hash: cfg.config_hash.clone(),
            seed: cfg.seed,
            git_describe: git_describe(),
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    })
}

/// Loads the configured model (if any) and runs the sweep.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let model = load_configured_model(cfg)?;
    run_sweep_with_model(cfg, model.as_ref())
}

/// Two-sided 95% Wilson interval of a binomial proportion.
pub fn wilson_interval(errors: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959963984540054;
    let n = n as f64;
    let p = errors as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    let lo = if errors == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if errors as f64 == n {
        1.0
    } else {
        (center + half).min(1.0)
    };
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn small(extra: &str) -> ExperimentConfig {
        let text = format!(
            "[system]\nn_subcarriers = 16\ncp_len = 8\nn_rx = 2\nsymbols_per_frame = 3\n[channel]\nprofiles = [\"tdla-like\"]\n{extra}"
        );
        ExperimentConfig::from_toml(&text, Path::new(".")).unwrap()
    }

    #[test]
    fn noiseless_sufficient_cp_mmse_is_error_free() {
        let cfg = small("[sweep]\nsnr_db = [inf]\ntrials = 4\n");
        let r = run_sweep(&cfg).unwrap();
        let p = &r.points[0];
        assert_eq!(p.trials, 4);
        assert_eq!(p.primary().total.symbol_errors, 0);
        assert_eq!(p.primary().total.symbols, 4 * 3 * 16 * 2);
        assert!(r.to_csv().starts_with(CSV_HEADER));
    }

    #[test]
    fn same_seed_same_result() {
        let cfg = small("[receiver]\nequalizer = \"zf\"\nbaselines = [\"mmse\"]\n[sweep]\nsnr_db = [5.0, 10.0]\ntrials = 3\nseed = 9\n");
        let a = run_sweep(&cfg).unwrap();
        let b = run_sweep(&cfg).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.points[0].stages.len(), 2);
        assert_eq!(a.points[0].primary().label, "zf");
    }

    #[test]
    fn ml_receiver_runs_and_reports_stages() {
        let text = "[system]\nn_subcarriers = 8\ncp_len = 2\nn_users = 1\ntx_per_user = 1\nn_rx = 2\nsymbols_per_frame = 2\n\
                    [channel]\nprofiles = [\"tdla-like\"]\n[receiver]\nequalizer = \"ml\"\nn_iter = 2\n[sweep]\nsnr_db = [15.0]\ntrials = 2\n";
        let cfg = ExperimentConfig::from_toml(text, Path::new(".")).unwrap();
        let r = run_sweep(&cfg).unwrap();
        let labels: Vec<&str> = r.points[0].stages.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["pre-zf", "ml-iter-1", "ml-iter-2"]);
    }

    #[test]
    fn missing_model_is_config_error() {
        let cfg = small("[receiver]\nequalizer = \"dnn:/nonexistent/model.txt\"\n");
        let err = run_sweep(&cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("/nonexistent/model.txt"));
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(50, 1000);
        assert!(lo < 0.05 && hi > 0.05);
        assert!((lo - 0.0382).abs() < 1e-3 && (hi - 0.0653).abs() < 1e-3);
        assert_eq!(wilson_interval(0, 100).0, 0.0);
    }
}
