//! Checks the frequency-domain interference model against time-domain
//! convolution of random frames.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::channel::{complex_gaussian, propagate_time_domain, ChannelRealization};
use crate::error::{Error, Result};
use crate::interference::{build_mimo_channel_with, predict_freq_rx, DftMatrix};
use crate::linalg::{relative_error, C64, ZERO};
use crate::modem::{FrameSymbols, OfdmEngine, SystemConfig};

/// Largest relative error accepted by `validate-model`.
pub const MODEL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationCase {
    pub cir_len: usize,
    pub trials: usize,
    pub max_rel_error: f64,
    /// Whether the interference term vanished in every trial.
    pub phi_zero: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub cases: Vec<ValidationCase>,
}

impl ValidationReport {
    pub fn max_rel_error(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    /// Every case within tolerance and, for `L_h <= cp_len`, no interference.
    pub fn passed(&self, cp_len: usize) -> bool {
        self.cases
            .iter()
            .all(|c| c.max_rel_error < MODEL_TOLERANCE && (c.cir_len > cp_len || c.phi_zero))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:>6} {:>7} {:>14} {:>9}\n", "L_h", "trials", "max_rel_err", "phi_zero");
        for c in &self.cases {
            let _ = writeln!(
                s,
                "{:>6} {:>7} {:>14.3e} {:>9}",
                c.cir_len, c.trials, c.max_rel_error, c.phi_zero
            );
        }
        s
    }
}

/// Channel lengths exercised for a given prefix: `cp`, `1.5 cp`, `2 cp`,
/// `3 cp`, clipped to `[1, n]` and deduplicated.
pub fn default_cir_lengths(cp_len: usize, n: usize) -> Vec<usize> {
    let mut v: Vec<usize> = [cp_len, cp_len + cp_len / 2, 2 * cp_len, 3 * cp_len]
        .into_iter()
        .map(|l| l.clamp(1, n))
        .collect();
    v.dedup();
    v
}

/// Runs `trials` random frames per channel length; trial `t` uses stream `t`.
pub fn validate_model(sys: &SystemConfig, cir_lengths: &[usize], trials: usize, seed: u64) -> Result<ValidationReport> {
    sys.validate()?;
    let n = sys.n_subcarriers;
    let n_tx = sys.total_tx();
    let c = crate::modem::Constellation::new(sys.qam_order)?;
    let engine = OfdmEngine::new(sys);
    let dft = DftMatrix::new(n);
    let mut cases = Vec::with_capacity(cir_lengths.len());
    for &lh in cir_lengths {
        let mut max_err = 0.0f64;
        let mut phi_zero = true;
        for t in 0..trials {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(((lh as u64) << 32) | t as u64);
            let truth = FrameSymbols::random(sys, &c, &mut rng);
            let taps: Vec<C64> = (0..sys.n_rx * n_tx * lh).map(|_| complex_gaussian(&mut rng)).collect();
            let ch = ChannelRealization::new(sys.n_rx, n_tx, lh, taps)?;
            let rx = propagate_time_domain(&engine.modulate_frame(&truth)?, &ch, 0.0, &mut rng)?;
            let y = engine.demodulate_frame(&rx, sys.symbols_per_frame)?;
            let mf = build_mimo_channel_with(&ch, &dft, sys.cp_len)?;
            phi_zero &= !mf.has_interference();
            let zero = vec![ZERO; n * n_tx];
            for (k, yk) in y.iter().enumerate() {
                let prev = if k == 0 { &zero[..] } else { truth.symbol(k - 1) };
                let pred = predict_freq_rx(truth.symbol(k), prev, &mf)?;
                let err = relative_error(pred.as_slice(), yk);
                if !err.is_finite() {
                    return Err(Error::Numerical(format!("non-finite model error at L_h={lh}")));
                }
                max_err = max_err.max(err);
            }
        }
        cases.push(ValidationCase {
            cir_len: lh,
            trials,
            max_rel_error: max_err,
            phi_zero,
        });
    }
    Ok(ValidationReport { cases })
}
