use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ofdm_eq::harness::{
    default_cir_lengths, generate_dataset, plot_file, run_sweep, run_training, validate_model, ExperimentConfig,
};
use ofdm_eq::unfolded::{loss_history_csv, save_model};
use ofdm_eq::Error;

#[derive(Parser)]
#[command(
    name = "ofdm-eq",
    version,
    about = "MIMO-OFDM equalization with an insufficient cyclic prefix"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML); built-in defaults when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the sweep and training seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo SER/BER sweep; writes a CSV plus .trace.csv, .userN.csv and .meta sidecars.
    Simulate(Common),
    /// Trains the unfolded equalizer and writes the model and <model>.loss.csv.
    Train(Common),
    /// Simulates training frames and writes a dataset file.
    GenData(Common),
    /// Compares the frequency-domain model against time-domain convolution.
    ValidateModel {
        #[command(flatten)]
        common: Common,
        /// Random frames per channel length.
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Prints a sweep CSV as aligned columns.
    Plot {
        #[command(flatten)]
        common: Common,
        /// CSV to format; defaults to the config's sweep output.
        input: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.training.seed = s;
    }
    Ok(cfg)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn create_parent(path: &Path) -> Result<(), Error> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(io_err(dir)),
        _ => Ok(()),
    }
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    create_parent(path)?;
    std::fs::write(path, text).map_err(io_err(path))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn simulate(c: &Common) -> Result<(), Error> {
    let cfg = load_config(c)?;
    let result = run_sweep(&cfg)?;
    eprint!("{}", result.summary_table());
    match c.out.clone().or(cfg.out.clone()) {
        Some(out) => {
            write(&out, &result.to_csv())?;
            write(&with_suffix(&out, ".trace.csv"), &result.trace_csv())?;
            if cfg.system.n_users > 1 {
                for u in 0..cfg.system.n_users {
                    write(&with_suffix(&out, &format!(".user{u}.csv")), &result.user_csv(u))?;
                }
            }
            write(&with_suffix(&out, ".meta"), &result.metadata_text())?;
            eprintln!("wrote {}", out.display());
        }
        None => print!("{}", result.to_csv()),
    }
    Ok(())
}

fn train(c: &Common) -> Result<(), Error> {
    let cfg = load_config(c)?;
    let out = c
        .out
        .clone()
        .or(cfg.training.model_out.clone())
        .ok_or_else(|| Error::Config("train needs --out or training.model_out".into()))?;
    let every = (cfg.training.steps / 20).max(1);
    let outcome = run_training(&cfg, |step, loss| {
        if step % every == 0 {
            eprintln!("step {step:>7}  loss {loss:.6e}");
        }
    })?;
    create_parent(&out)?;
    save_model(&outcome.model, &out)?;
    write(&with_suffix(&out, ".loss.csv"), &loss_history_csv(&outcome.history))?;
    eprintln!("trained on {} samples; wrote {}", outcome.samples, out.display());
    Ok(())
}

fn gen_data(c: &Common) -> Result<(), Error> {
    let cfg = load_config(c)?;
    let out = c
        .out
        .clone()
        .or(cfg.training.dataset.clone())
        .ok_or_else(|| Error::Config("gen-data needs --out or training.dataset".into()))?;
    let d = generate_dataset(&cfg)?;
    create_parent(&out)?;
    d.save(&out)?;
    eprintln!(
        "wrote {} samples of dimension {} to {}",
        d.samples.len(),
        d.samples.dim(),
        out.display()
    );
    Ok(())
}

fn validate(c: &Common, trials: usize) -> Result<(), Error> {
    let cfg = load_config(c)?;
    let sys = &cfg.system;
    let report = validate_model(
        sys,
        &default_cir_lengths(sys.cp_len, sys.n_subcarriers),
        trials,
        cfg.seed,
    )?;
    let text = report.to_text();
    match &c.out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    if !report.passed(sys.cp_len) {
        return Err(Error::Numerical(format!(
            "model mismatch: max relative error {:.3e}",
            report.max_rel_error()
        )));
    }
    Ok(())
}

fn plot(c: &Common, input: Option<&Path>) -> Result<(), Error> {
    let input = match input {
        Some(p) => p.to_path_buf(),
        None => load_config(c)?
            .out
            .ok_or_else(|| Error::Config("plot needs an input CSV or a config with sweep.out".into()))?,
    };
    let text = plot_file(&input)?;
    match &c.out {
        Some(p) => write(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Train(c) => train(c),
        Command::GenData(c) => gen_data(c),
        Command::ValidateModel { common, trials } => validate(common, *trials),
        Command::Plot { common, input } => plot(common, input.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
