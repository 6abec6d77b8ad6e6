//! Browser bindings for three small interactive views of the toolkit: the
//! interference matrix of one channel, MMSE vs ZF constellations and a quick
//! SER-vs-SNR sweep.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use wasm_bindgen::prelude::*;

use ofdm_eq::channel::complex_gaussian;
use ofdm_eq::equalizers::{EqualizerContext, MmseEqualizer, ZfEqualizer};
use ofdm_eq::harness::{evaluate_frame, noise_variance_for_snr, ExperimentConfig, Simulator};
use ofdm_eq::interference::build_siso_channel;
use ofdm_eq::Result;

/// `|Phi|` of a SISO channel with `cir_len` taps of exponentially decaying
/// power, row-major `n x n`.
pub fn phi_magnitude(n: usize, cp_len: usize, cir_len: usize, seed: u32) -> Result<Vec<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed.into());
    let h: Vec<_> = (0..cir_len)
        .map(|d| complex_gaussian(&mut rng) * (-(d as f64) / 8.0).exp())
        .collect();
    let ch = build_siso_channel(&h, n, cp_len)?;
    Ok((0..n * n).map(|k| ch.phi[(k / n, k % n)].norm()).collect())
}

/// Desk-scale 4x2 link with the measured long-delay profile.
pub fn demo_config(cp_len: usize, equalizer: &str) -> Result<ExperimentConfig> {
    let text = format!(
        "[system]\ncp_len = {cp_len}\nn_rx = 4\nsymbols_per_frame = 4\n\
         [receiver]\nequalizer = \"{equalizer}\"\nbaselines = [\"mmse\"]\n"
    );
    ExperimentConfig::from_toml(&text, Path::new("."))
}

/// Soft outputs of both linear equalizers for the last symbol of one frame:
/// `[mmse re, im, re, im, ..., zf re, im, ...]`.
pub fn equalized_constellation(snr_db: f64, cp_len: usize, seed: u32) -> Result<Vec<f64>> {
    let cfg = demo_config(cp_len, "zf")?;
    let sim = Simulator::new(&cfg)?;
    let sigma2 = noise_variance_for_snr(snr_db);
    let frame = sim.frame(sigma2, &mut sim.trial_rng(seed.into(), 0))?;
    let c = cfg.constellation();
    let ctx = EqualizerContext::new(&frame.channel, &c, sigma2)?;
    let y = frame.y.last().expect("frame has symbols");
    let mut out = Vec::new();
    for x in [MmseEqualizer::new(&ctx)?.apply(y)?, ZfEqualizer::new(&ctx)?.apply(y)?] {
        out.extend(x.iter().flat_map(|v| [v.re, v.im]));
    }
    Ok(out)
}

/// `[mmse ser, zf ser]` per SNR point over `trials` frames.
pub fn ser_curve(snr_db: &[f64], trials: u32, cp_len: usize, seed: u32) -> Result<Vec<f64>> {
    let cfg = demo_config(cp_len, "zf")?;
    let sim = Simulator::new(&cfg)?;
    let mut out = Vec::with_capacity(2 * snr_db.len());
    for &snr in snr_db {
        let sigma2 = noise_variance_for_snr(snr);
        let mut errors = [0u64; 2];
        let mut symbols = 0u64;
        for t in 0..trials {
            let frame = sim.frame(sigma2, &mut sim.trial_rng(seed.into(), t.into()))?;
            let (stages, _) = evaluate_frame(&frame, &cfg, None, sigma2)?;
            errors[0] += stages[0].total.symbol_errors;
            errors[1] += stages[1].total.symbol_errors;
            symbols += stages[0].total.symbols;
        }
        out.extend(errors.iter().map(|&e| e as f64 / symbols.max(1) as f64));
    }
    Ok(out)
}

fn js(e: ofdm_eq::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = phiMagnitude)]
pub fn phi_magnitude_js(n: usize, cp_len: usize, cir_len: usize, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
    phi_magnitude(n, cp_len, cir_len, seed).map_err(js)
}

#[wasm_bindgen(js_name = equalizedConstellation)]
pub fn equalized_constellation_js(snr_db: f64, cp_len: usize, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
    equalized_constellation(snr_db, cp_len, seed).map_err(js)
}

#[wasm_bindgen(js_name = serCurve)]
pub fn ser_curve_js(snr_db: Vec<f64>, trials: u32, cp_len: usize, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
    ser_curve(&snr_db, trials, cp_len, seed).map_err(js)
}
