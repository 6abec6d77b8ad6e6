//! Block-fading tapped-delay-line channels and the time-domain propagation
//! path, which serves as ground truth for the frequency-domain model.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{C64, ZERO};
use crate::modem::SystemConfig;

/// Measured power-delay profile (7 taps, delays in microseconds).
pub const MEASURED_PDP: &str = include_str!("../profiles/measured.pdp");
/// Short-delay preset whose longest delay fits inside the desk-scale prefix.
/// Shaped like a TDL profile but not a standards-exact TDL-A.
pub const TDLA_LIKE_PDP: &str = include_str!("../profiles/tdla-like.pdp");

#[derive(Debug, Clone, PartialEq)]
pub struct PowerDelayProfile {
    pub name: String,
    /// Tap delays in microseconds, strictly increasing from 0.
    pub delays_us: Vec<f64>,
    pub gains_db: Vec<f64>,
}

impl PowerDelayProfile {
    pub fn new(name: impl Into<String>, delays_us: Vec<f64>, gains_db: Vec<f64>) -> Result<Self> {
        let pdp = Self {
            name: name.into(),
            delays_us,
            gains_db,
        };
        pdp.validate()?;
        Ok(pdp)
    }

    fn validate(&self) -> Result<()> {
        if self.delays_us.is_empty() || self.delays_us.len() != self.gains_db.len() {
            return Err(Error::config(format!(
                "profile '{}' needs matching, non-empty delay and gain lists",
                self.name
            )));
        }
        if self.delays_us[0] != 0.0 {
            return Err(Error::config(format!("profile '{}' must start at delay 0", self.name)));
        }
        if self.delays_us.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config(format!(
                "profile '{}' delays must be strictly increasing",
                self.name
            )));
        }
        if self.gains_db.iter().any(|g| !g.is_finite()) {
            return Err(Error::config(format!("profile '{}' has a non-finite gain", self.name)));
        }
        Ok(())
    }

    /// Parses `delay_us gain_db` lines; `#` starts a comment.
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut delays = Vec::new();
        let mut gains = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: name.into(),
                line: lineno + 1,
                msg,
            };
            let mut fields = line.split_whitespace();
            let mut next = |what: &str| -> Result<f64> {
                let tok = fields.next().ok_or_else(|| err(format!("missing {what}")))?;
                tok.parse::<f64>().map_err(|e| err(format!("bad {what} '{tok}': {e}")))
            };
            delays.push(next("delay")?);
            gains.push(next("gain")?);
            if let Some(extra) = fields.next() {
                return Err(err(format!("unexpected field '{extra}'")));
            }
        }
        Self::new(name, delays, gains)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path.display().to_string();
        Self::parse(&name, &text)
    }

    pub fn measured() -> Self {
        Self::parse("measured", MEASURED_PDP).expect("bundled profile parses")
    }

    pub fn tdla_like() -> Self {
        Self::parse("tdla-like", TDLA_LIKE_PDP).expect("bundled profile parses")
    }
}

/// Integer-sample taps with linear powers summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTaps {
    pub delays: Vec<usize>,
    pub powers: Vec<f64>,
}

impl SampleTaps {
    /// Impulse-response length implied by the last tap.
    pub fn cir_len(&self) -> usize {
        self.delays.last().map_or(1, |d| d + 1)
    }
}

/// Rounds delays onto the sample grid and normalizes the linear powers.
/// Taps that land on the same sample have their powers added.
pub fn pdp_to_sample_taps(pdp: &PowerDelayProfile, sample_rate: f64) -> Result<SampleTaps> {
    if !(sample_rate > 0.0) {
        return Err(Error::config("sample rate must be positive"));
    }
    let mut delays: Vec<usize> = Vec::new();
    let mut powers: Vec<f64> = Vec::new();
    for (&d, &g) in pdp.delays_us.iter().zip(&pdp.gains_db) {
        let sample = (d * 1e-6 * sample_rate).round() as usize;
        let p = 10f64.powf(g / 10.0);
        match delays.last() {
            Some(&last) if last == sample => *powers.last_mut().unwrap() += p,
            _ => {
                delays.push(sample);
                powers.push(p);
            }
        }
    }
    let total: f64 = powers.iter().sum();
    powers.iter_mut().for_each(|p| *p /= total);
    Ok(SampleTaps { delays, powers })
}

/// Complex impulse responses of every receive/transmit link for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    n_rx: usize,
    n_tx: usize,
    len: usize,
    taps: Vec<C64>,
}

impl ChannelRealization {
    /// `taps[(n * n_tx + m) * len + p]` is tap `p` of the link from transmit
    /// antenna `m` to receive antenna `n`.
    pub fn new(n_rx: usize, n_tx: usize, len: usize, taps: Vec<C64>) -> Result<Self> {
        if len == 0 || taps.len() != n_rx * n_tx * len {
            return Err(Error::shape(format!(
                "{} taps do not fit {n_rx}x{n_tx} links of length {len}",
                taps.len()
            )));
        }
        Ok(Self { n_rx, n_tx, len, taps })
    }

    /// Same impulse response on every link.
    pub fn uniform(n_rx: usize, n_tx: usize, h: &[C64]) -> Result<Self> {
        let taps = (0..n_rx * n_tx).flat_map(|_| h.iter().copied()).collect();
        Self::new(n_rx, n_tx, h.len(), taps)
    }

    pub fn n_rx(&self) -> usize {
        self.n_rx
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    /// Common impulse-response length `L_h`.
    pub fn cir_len(&self) -> usize {
        self.len
    }

    pub fn link(&self, rx: usize, tx: usize) -> &[C64] {
        let start = (rx * self.n_tx + tx) * self.len;
        &self.taps[start..start + self.len]
    }

    /// Highest sample delay carrying a non-zero tap on any link.
    pub fn max_delay(&self) -> usize {
        (0..self.n_rx * self.n_tx)
            .filter_map(|l| {
                self.taps[l * self.len..(l + 1) * self.len]
                    .iter()
                    .rposition(|z| *z != ZERO)
            })
            .max()
            .unwrap_or(0)
    }
}

/// Draws a realization where every link follows `profile`.
pub fn generate_cir(profile: &SampleTaps, cfg: &SystemConfig, seed: u64) -> ChannelRealization {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let per_tx = vec![profile.clone(); cfg.total_tx()];
    generate_cir_with(&per_tx, cfg.n_rx, &mut rng)
}

/// Draws a realization with one profile per transmit antenna (all links from
/// antenna `m` follow `per_tx[m]`). Taps are independent `sqrt(p) * CN(0, 1)`;
/// the common length is set by the longest profile.
pub fn generate_cir_with<R: Rng + ?Sized>(per_tx: &[SampleTaps], n_rx: usize, rng: &mut R) -> ChannelRealization {
    let n_tx = per_tx.len();
    let len = per_tx.iter().map(SampleTaps::cir_len).max().unwrap_or(1);
    let mut taps = vec![ZERO; n_rx * n_tx * len];
    for n in 0..n_rx {
        for (m, profile) in per_tx.iter().enumerate() {
            let base = (n * n_tx + m) * len;
            for (&d, &p) in profile.delays.iter().zip(&profile.powers) {
                taps[base + d] = complex_gaussian(rng) * p.sqrt();
            }
        }
    }
    ChannelRealization { n_rx, n_tx, len, taps }
}

/// One `CN(0, 1)` draw.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Linear convolution of every transmit stream with its link response,
/// summed per receive antenna, truncated to the input length, plus
/// `CN(0, noise_variance)` per sample. Samples before the frame are zero.
pub fn propagate_time_domain<R: Rng + ?Sized>(
    tx: &[Vec<C64>],
    ch: &ChannelRealization,
    noise_variance: f64,
    rng: &mut R,
) -> Result<Vec<Vec<C64>>> {
    if tx.len() != ch.n_tx() {
        return Err(Error::shape(format!(
            "{} transmit streams for a channel with {} transmit antennas",
            tx.len(),
            ch.n_tx()
        )));
    }
    let len = tx.first().map_or(0, Vec::len);
    if tx.iter().any(|s| s.len() != len) {
        return Err(Error::shape("transmit streams differ in length"));
    }
    let sigma = noise_variance.sqrt();
    let mut rx = vec![vec![ZERO; len]; ch.n_rx()];
    for (n, out) in rx.iter_mut().enumerate() {
        for (m, stream) in tx.iter().enumerate() {
            let h = ch.link(n, m);
            for (p, &hp) in h.iter().enumerate() {
                if hp == ZERO {
                    continue;
                }
                for (o, &x) in out[p.min(len)..].iter_mut().zip(stream) {
                    *o += hp * x;
                }
            }
        }
        if noise_variance > 0.0 {
            for o in out.iter_mut() {
                *o += complex_gaussian(rng) * sigma;
            }
        }
    }
    Ok(rx)
}
