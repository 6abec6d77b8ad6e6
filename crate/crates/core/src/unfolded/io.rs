//! Versioned text format for trained models.
//!
//! ```text
//! ofdm-eq-unfolded 1
//! n_tx 2
//! qam_order 4
//! window_prev 0
//! window_cur -1 0 1
//! features gradient-product
//! layers 10
//! dim 16
//! inputs 48
//! layer 0
//! tau <value>
//! b <dim values>
//! w <inputs values>      (one line per row)
//! ...
//! ```
//!
//! Numbers use 17 significant digits, so a save/load round trip is exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::interference::WindowSpec;
use crate::modem::Constellation;

use super::network::{FeatureMode, ModelShape, UnfoldedEqualizerModel};

const MAGIC: &str = "ofdm-eq-unfolded";
const VERSION: u32 = 1;

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn join(vals: &[f64]) -> String {
    vals.iter().map(|&v| num(v)).collect::<Vec<_>>().join(" ")
}

pub fn model_to_string(m: &UnfoldedEqualizerModel) -> String {
    let ints = |v: &[i64]| v.iter().map(i64::to_string).collect::<Vec<_>>().join(" ");
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "n_tx {}", m.n_tx());
    let _ = writeln!(s, "qam_order {}", m.qam_order());
    let _ = writeln!(s, "window_prev {}", ints(m.window().prev_offsets()).trim_end());
    let _ = writeln!(s, "window_cur {}", ints(m.window().cur_offsets()));
    let _ = writeln!(s, "features {}", m.mode());
    let _ = writeln!(s, "layers {}", m.n_layers());
    let _ = writeln!(s, "dim {}", m.dim());
    let _ = writeln!(s, "inputs {}", m.input_dim());
    let n_in = m.input_dim();
    for l in 0..m.n_layers() {
        let _ = writeln!(s, "layer {l}");
        let _ = writeln!(s, "tau {}", num(m.tau(l)));
        let _ = writeln!(s, "b {}", join(m.b(l)));
        for row in m.w(l).chunks(n_in) {
            let _ = writeln!(s, "w {}", join(row));
        }
    }
    s
}

pub fn save_model(m: &UnfoldedEqualizerModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_string(m)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<UnfoldedEqualizerModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text, path)
}

/// Loads a model and checks it against the receiver's window, antenna count
/// and constellation.
pub fn load_model_for(
    path: &Path,
    window: &WindowSpec,
    n_tx: usize,
    c: &Constellation,
) -> Result<UnfoldedEqualizerModel> {
    let m = load_model(path)?;
    m.ensure_matches(window, n_tx, c)?;
    Ok(m)
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a Path,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            msg: msg.into(),
        }
    }

    /// Next line split as (key, rest); checks the key.
    fn field(&mut self, key: &str) -> Result<&'a str> {
        let (idx, line) = self
            .iter
            .next()
            .ok_or_else(|| self.err(format!("unexpected end of file, expected '{key}'")))?;
        self.line = idx + 1;
        let (k, rest) = line.split_once(' ').unwrap_or((line, ""));
        if k != key {
            return Err(self.err(format!("expected '{key}', found '{k}'")));
        }
        Ok(rest.trim())
    }

    fn usize(&mut self, key: &str) -> Result<usize> {
        let v = self.field(key)?;
        v.parse()
            .map_err(|_| self.err(format!("'{v}' is not a non-negative integer")))
    }

    fn ints(&mut self, key: &str) -> Result<Vec<i64>> {
        let v = self.field(key)?;
        v.split_whitespace()
            .map(|t| t.parse().map_err(|_| self.err(format!("'{t}' is not an integer"))))
            .collect()
    }

    fn floats(&mut self, key: &str, count: usize) -> Result<Vec<f64>> {
        let v = self.field(key)?;
        let vals = v
            .split_whitespace()
            .map(|t| match t.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(self.err(format!("'{t}' is not a finite number"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != count {
            return Err(self.err(format!("expected {count} values, found {}", vals.len())));
        }
        Ok(vals)
    }
}

pub fn parse_model(text: &str, path: &Path) -> Result<UnfoldedEqualizerModel> {
    let mut lines = Lines {
        iter: text.lines().enumerate(),
        path,
        line: 0,
    };
    let version = lines.usize(MAGIC)?;
    if version != VERSION as usize {
        return Err(lines.err(format!("unsupported model version {version} (expected {VERSION})")));
    }
    let n_tx = lines.usize("n_tx")?;
    let qam_order = lines.usize("qam_order")?;
    let prev = lines.ints("window_prev")?;
    let cur = lines.ints("window_cur")?;
    let window = WindowSpec::new(prev, cur, true).map_err(|e| lines.err(e.to_string()))?;
    let mode: FeatureMode = lines
        .field("features")?
        .parse()
        .map_err(|e: Error| lines.err(e.to_string()))?;
    let n_layers = lines.usize("layers")?;
    let dim = lines.usize("dim")?;
    let inputs = lines.usize("inputs")?;
    let shape = ModelShape {
        window,
        n_tx,
        n_layers,
        mode,
    };
    let want_dim = 2 * shape.window.dim(n_tx);
    if dim != want_dim || inputs != mode.input_dim(dim) {
        return Err(lines.err(format!(
            "dimensions dim={dim} inputs={inputs} do not match window {} with {n_tx} tx antennas \
             (expected dim={want_dim} inputs={})",
            shape.window,
            mode.input_dim(want_dim)
        )));
    }
    let mut params = Vec::with_capacity(n_layers * (dim * inputs + dim + 1));
    for l in 0..n_layers {
        let idx = lines.usize("layer")?;
        if idx != l {
            return Err(lines.err(format!("expected layer {l}, found {idx}")));
        }
        let tau = lines.floats("tau", 1)?[0];
        let b = lines.floats("b", dim)?;
        for _ in 0..dim {
            params.extend(lines.floats("w", inputs)?);
        }
        params.extend(b);
        params.push(tau);
    }
    if let Some((idx, extra)) = lines.iter.find(|(_, l)| !l.trim().is_empty()) {
        lines.line = idx + 1;
        return Err(lines.err(format!("unexpected trailing content '{extra}'")));
    }
    UnfoldedEqualizerModel::from_parts(&shape, qam_order, params).map_err(|e| lines.err(e.to_string()))
}

/// Loss history as `step,loss` CSV.
pub fn loss_history_csv(history: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (k, l) in history.iter().enumerate() {
        let _ = writeln!(s, "{k},{}", num(*l));
    }
    s
}
