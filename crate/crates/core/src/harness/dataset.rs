//! Training data generation and the on-disk dataset format.
//!
//! A dataset file is a short text header followed by raw little-endian
//! `f64` records `[atr, gram, target]`:
//!
//! ```text
//! ofdm-eq-dataset 1
//! dim 24
//! samples 53760
//! n_tx 2
//! qam_order 4
//! window prev={0} cur={-1,0,1}
//! data
//! <binary>
//! ```

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::equalizers::EqualizerContext;
use crate::error::{Error, Result};
use crate::receiver::{collect_training_samples, pre_detect_frame};
use crate::unfolded::TrainingSet;

use super::config::{noise_variance_for_snr, ExperimentConfig};
use super::sweep::Simulator;

const MAGIC: &str = "ofdm-eq-dataset 1";

/// A training set together with the link it was generated for.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_tx: usize,
    pub qam_order: usize,
    pub window: String,
    pub samples: TrainingSet,
}

/// Simulates `training.frames` frames, each at an SNR drawn uniformly from
/// the training range, and keeps one sample per (symbol, subcarrier).
pub fn generate_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let t = &cfg.training;
    if !(t.snr_db_min <= t.snr_db_max) {
        return Err(Error::config("training snr_db_min exceeds snr_db_max"));
    }
    let sim = Simulator::new(cfg)?;
    let c = cfg.constellation();
    let n_tx = cfg.system.total_tx();
    let frame = |f: u64| -> Result<TrainingSet> {
        let mut rng = sim.trial_rng(t.seed, f);
        let snr = if t.snr_db_min == t.snr_db_max {
            t.snr_db_min
        } else {
            rng.random_range(t.snr_db_min..t.snr_db_max)
        };
        let sigma2 = noise_variance_for_snr(snr);
        let fr = sim.frame(sigma2, &mut rng)?;
        let ctx = EqualizerContext::new(&fr.channel, &c, sigma2)?;
        let buffer = pre_detect_frame(&fr.y, &ctx, cfg.pre_detector)?;
        let mut out = TrainingSet::new(2 * cfg.window.dim(n_tx));
        collect_training_samples(&fr.y, &fr.channel, &cfg.window, &buffer, &fr.truth, &mut out)?;
        Ok(out)
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<_> = {
        use rayon::prelude::*;
        (0..t.frames as u64).into_par_iter().map(frame).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<_> = (0..t.frames as u64).map(frame).collect();

    let mut samples = TrainingSet::new(2 * cfg.window.dim(n_tx));
    for p in parts {
        samples.extend(&p?)?;
    }
    Ok(Dataset {
        n_tx,
        qam_order: cfg.system.qam_order,
        window: cfg.window.to_string(),
        samples,
    })
}

impl Dataset {
    /// Fails unless the dataset was generated for this link and window.
    pub fn ensure_matches(&self, cfg: &ExperimentConfig) -> Result<()> {
        let want = cfg.window.to_string();
        if self.n_tx != cfg.system.total_tx() || self.qam_order != cfg.system.qam_order || self.window != want {
            return Err(Error::config(format!(
                "dataset was generated for n_tx={} qam_order={} window {}, config has n_tx={} qam_order={} window {}",
                self.n_tx,
                self.qam_order,
                self.window,
                cfg.system.total_tx(),
                cfg.system.qam_order,
                want
            )));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = String::new();
        let _ = writeln!(header, "{MAGIC}");
        let _ = writeln!(header, "dim {}", self.samples.dim());
        let _ = writeln!(header, "samples {}", self.samples.len());
        let _ = writeln!(header, "n_tx {}", self.n_tx);
        let _ = writeln!(header, "qam_order {}", self.qam_order);
        let _ = writeln!(header, "window {}", self.window);
        let _ = writeln!(header, "data");
        w.write_all(header.as_bytes())?;
        let (atr, gram, target) = self.samples.raw();
        let d = self.samples.dim();
        let mut buf = Vec::with_capacity(8 * (2 * d + d * d));
        for i in 0..self.samples.len() {
            buf.clear();
            for v in atr[i * d..(i + 1) * d]
                .iter()
                .chain(&gram[i * d * d..(i + 1) * d * d])
                .chain(&target[i * d..(i + 1) * d])
            {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_from<R: Read>(r: R, path: &Path) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line_no = 0;
        let mut next = |r: &mut BufReader<R>| -> Result<String> {
            let mut s = String::new();
            line_no += 1;
            let n = r.read_line(&mut s).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                return Err(parse_err(path, line_no, "unexpected end of header"));
            }
            Ok(s.trim_end_matches(['\n', '\r']).to_string())
        };
        let magic = next(&mut r)?;
        if magic != MAGIC {
            return Err(parse_err(path, 1, format!("expected '{MAGIC}', found '{magic}'")));
        }
        let mut fields = Vec::new();
        for (line, key) in (2..).zip(["dim", "samples", "n_tx", "qam_order", "window"]) {
            let s = next(&mut r)?;
            let value = s
                .strip_prefix(key)
                .and_then(|v| v.strip_prefix(' '))
                .ok_or_else(|| parse_err(path, line, format!("expected '{key} <value>'")))?;
            fields.push((line, value.to_string()));
        }
        if next(&mut r)? != "data" {
            return Err(parse_err(path, 7, "expected 'data'"));
        }
        let num = |k: usize| -> Result<usize> {
            let (line, v) = &fields[k];
            v.parse()
                .map_err(|_| parse_err(path, *line, format!("invalid integer '{v}'")))
        };
        let (dim, n, n_tx, qam_order) = (num(0)?, num(1)?, num(2)?, num(3)?);
        if dim == 0 {
            return Err(parse_err(path, 2, "dimension must be positive"));
        }
        let mut atr = Vec::with_capacity(n * dim);
        let mut gram = Vec::with_capacity(n * dim * dim);
        let mut target = Vec::with_capacity(n * dim);
        let mut rec = vec![0u8; 8 * (2 * dim + dim * dim)];
        for i in 0..n {
            r.read_exact(&mut rec).map_err(|e| {
                if e.kind() == std::io::ErrorKind::UnexpectedEof {
                    Error::Parse {
                        path: path.to_path_buf(),
                        line: 0,
                        msg: format!("data ends after {i} of {n} samples"),
                    }
                } else {
                    Error::io(path, e)
                }
            })?;
            let vals = rec
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
            for (j, v) in vals.enumerate() {
                if j < dim {
                    atr.push(v);
                } else if j < dim + dim * dim {
                    gram.push(v);
                } else {
                    target.push(v);
                }
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: "trailing bytes after the last sample".into(),
            });
        }
        Ok(Self {
            n_tx,
            qam_order,
            window: fields[4].1.clone(),
            samples: TrainingSet::from_parts(dim, atr, gram, target)?,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(f, path)
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(frames: usize) -> ExperimentConfig {
        let text = format!(
            "[system]\nn_subcarriers = 8\ncp_len = 2\ntx_per_user = 1\nn_rx = 2\nsymbols_per_frame = 2\n\
             [channel]\nprofiles = [\"tdla-like\"]\n             [training]\nframes = {frames}\nseed = 4\n"
        );
        ExperimentConfig::from_toml(&text, Path::new(".")).unwrap()
    }

    #[test]
    fn one_sample_per_symbol_and_subcarrier() {
        let d = generate_dataset(&cfg(3)).unwrap();
        assert_eq!(d.samples.len(), 3 * 2 * 8);
        assert_eq!(d.samples.dim(), 2 * 4);
        assert_eq!(generate_dataset(&cfg(3)).unwrap(), d);
    }

    #[test]
    fn round_trip() {
        let d = generate_dataset(&cfg(2)).unwrap();
        let mut bytes = Vec::new();
        d.write_to(&mut bytes).unwrap();
        let back = Dataset::read_from(&bytes[..], Path::new("mem")).unwrap();
        assert_eq!(back, d);
        back.ensure_matches(&cfg(2)).unwrap();
    }

    #[test]
    fn empty_round_trip() {
        let d = generate_dataset(&cfg(0)).unwrap();
        assert!(d.samples.is_empty());
        let mut bytes = Vec::new();
        d.write_to(&mut bytes).unwrap();
        assert_eq!(Dataset::read_from(&bytes[..], Path::new("mem")).unwrap(), d);
    }

    #[test]
    fn truncated_and_bad_header() {
        let d = generate_dataset(&cfg(1)).unwrap();
        let mut bytes = Vec::new();
        d.write_to(&mut bytes).unwrap();
        let err = Dataset::read_from(&bytes[..bytes.len() - 3], Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("samples"), "{err}");
        let text = "ofdm-eq-dataset 1\ndim x\n";
        let err = Dataset::read_from(text.as_bytes(), Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }
}
