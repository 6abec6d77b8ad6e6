//! Iterative receiver: frame pre-detection, windowed re-detection of every
//! (symbol, subcarrier) with hard-decision feedback, repeated `n_iter` times.
//!
//! The channel is block fading, so the stacked matrix `A` is built once per
//! frame. For symbol `k` the receiver forms `R_k` (with `Phi X̄_{k-2}`
//! removed), the full-cancellation residual `E_k = R_k - A Z̄_k` and
//! `A^H E_k`; each window then only needs
//! `A_cut^H R̃ = (A^H E_k)_cut + A_cut^H A_cut Z̄_cut`.
//! The symbol before the frame is an idle guard (`X_{-1} = 0`, `Y_{-1} = 0`).

use std::fmt;

use crate::equalizers::{ml_exhaustive, EqualizerContext, MmseEqualizer, ZfEqualizer};
use crate::error::{Error, Result};
use crate::interference::{stacked_matrix, MimoFreqChannel, WindowSpec};
use crate::linalg::{CMatrix, CVector, C64, ZERO};
use crate::modem::{Constellation, FrameSymbols};
use crate::unfolded::{lift_vector, Features, TrainingSet, UnfoldedEqualizerModel};

/// Frame-level baseline used before the first windowed pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreDetector {
    Mmse,
    Zf,
}

impl fmt::Display for PreDetector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PreDetector::Mmse => "mmse",
            PreDetector::Zf => "zf",
        })
    }
}

impl std::str::FromStr for PreDetector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mmse" => Ok(PreDetector::Mmse),
            "zf" => Ok(PreDetector::Zf),
            other => Err(Error::config(format!(
                "unknown pre-detector '{other}' (expected mmse or zf)"
            ))),
        }
    }
}

/// Where the decisions in a buffer came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferSource {
    Mmse,
    Zf,
    /// Output of the given windowed pass (1-based).
    Dnn(usize),
    ReducedMl(usize),
}

impl fmt::Display for BufferSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BufferSource::Mmse => f.write_str("mmse"),
            BufferSource::Zf => f.write_str("zf"),
            BufferSource::Dnn(n) => write!(f, "dnn-iteration-{n}"),
            BufferSource::ReducedMl(n) => write!(f, "ml-iteration-{n}"),
        }
    }
}

/// Hard decisions for a whole frame; every entry is a constellation point.
#[derive(Debug, Clone, PartialEq)]
pub struct PreDetectionBuffer {
    symbols: FrameSymbols,
    source: BufferSource,
}

impl PreDetectionBuffer {
    /// Hard-decides soft estimates laid out like [`FrameSymbols`].
    pub fn from_soft(
        soft: &[C64],
        n: usize,
        n_tx: usize,
        n_symbols: usize,
        c: &Constellation,
        source: BufferSource,
    ) -> Result<Self> {
        if soft.len() != n * n_tx * n_symbols {
            return Err(Error::shape(format!(
                "{} soft estimates for a frame of {n_symbols} x {n_tx} x {n}",
                soft.len()
            )));
        }
        let indices = soft.iter().map(|&v| c.nearest(v)).collect();
        Ok(Self {
            symbols: FrameSymbols::from_indices(n, n_tx, n_symbols, indices, c),
            source,
        })
    }

    pub fn from_symbols(symbols: FrameSymbols, source: BufferSource) -> Self {
        Self { symbols, source }
    }

    pub fn source(&self) -> BufferSource {
        self.source
    }

    pub fn symbols(&self) -> &FrameSymbols {
        &self.symbols
    }

    /// Stacked `X̄_k`; the zero guard symbol for `k < 0`.
    fn symbol_or_guard(&self, k: isize) -> Option<&[C64]> {
        (k >= 0).then(|| self.symbols.symbol(k as usize))
    }

    /// Symbol errors against the truth over transmit antennas `antennas`.
    pub fn symbol_errors(&self, truth: &FrameSymbols, antennas: std::ops::Range<usize>) -> usize {
        self.count(truth, antennas, |a, b| usize::from(a != b))
    }

    /// Bit errors (Gray labels) over transmit antennas `antennas`.
    pub fn bit_errors(&self, truth: &FrameSymbols, antennas: std::ops::Range<usize>) -> usize {
        self.count(truth, antennas, |a, b| (a ^ b).count_ones() as usize)
    }

    fn count(
        &self,
        truth: &FrameSymbols,
        antennas: std::ops::Range<usize>,
        f: impl Fn(usize, usize) -> usize,
    ) -> usize {
        let s = &self.symbols;
        let n = s.n_subcarriers();
        let mut total = 0;
        for k in 0..s.n_symbols() {
            for m in antennas.clone() {
                let base = (k * s.n_tx() + m) * n;
                for j in base..base + n {
                    total += f(s.indices()[j], truth.indices()[j]);
                }
            }
        }
        total
    }
}

fn check_frame(y: &[Vec<C64>], ch: &MimoFreqChannel) -> Result<()> {
    if y.is_empty() {
        return Err(Error::shape("frame has no symbols"));
    }
    let want = ch.n_rx() * ch.n_subcarriers();
    if let Some(bad) = y.iter().find(|v| v.len() != want) {
        return Err(Error::shape(format!(
            "received symbol has length {}, expected {want}",
            bad.len()
        )));
    }
    Ok(())
}

/// Applies the chosen baseline to every symbol and hard-decides.
pub fn pre_detect_frame(y: &[Vec<C64>], ctx: &EqualizerContext<'_>, method: PreDetector) -> Result<PreDetectionBuffer> {
    check_frame(y, ctx.channel)?;
    let soft = soft_baseline(y, ctx, method)?;
    let ch = ctx.channel;
    let source = match method {
        PreDetector::Mmse => BufferSource::Mmse,
        PreDetector::Zf => BufferSource::Zf,
    };
    PreDetectionBuffer::from_soft(&soft, ch.n_subcarriers(), ch.n_tx(), y.len(), ctx.constellation, source)
}

fn soft_baseline(y: &[Vec<C64>], ctx: &EqualizerContext<'_>, method: PreDetector) -> Result<Vec<C64>> {
    let mut soft = Vec::with_capacity(y.len() * ctx.channel.n_tx() * ctx.channel.n_subcarriers());
    match method {
        PreDetector::Mmse => {
            let eq = MmseEqualizer::new(ctx)?;
            for yk in y {
                soft.extend(eq.apply(yk)?);
            }
        }
        PreDetector::Zf => {
            let eq = ZfEqualizer::new(ctx)?;
            for yk in y {
                soft.extend(eq.apply(yk)?);
            }
        }
    }
    Ok(soft)
}

/// Per-frame window geometry: the stacked `A`, and for every centre
/// subcarrier its retained columns and `A_cut^H A_cut`.
pub struct FrameWindows<'a> {
    y: &'a [Vec<C64>],
    ch: &'a MimoFreqChannel,
    window: WindowSpec,
    a: CMatrix,
    cols: Vec<Vec<usize>>,
    grams: Vec<CMatrix>,
}

/// Inputs of one window after partial cancellation.
pub struct WindowInputs<'w> {
    pub k: usize,
    pub center: usize,
    pub columns: &'w [usize],
    /// `A_cut^H R̃`.
    pub ahr: Vec<C64>,
    pub gram: &'w CMatrix,
    /// `E_k = R_k - A Z̄_k`; `R̃ = E_k + A_cut Z̄_cut`.
    residual: &'w [C64],
    z_bar: &'w [C64],
    a: &'w CMatrix,
}

impl WindowInputs<'_> {
    /// `R̃` and `A_cut` in explicit form.
    pub fn system(&self) -> (Vec<C64>, CMatrix) {
        let a_cut = CMatrix::from_fn(self.a.nrows(), self.columns.len(), |r, c| self.a[(r, self.columns[c])]);
        let mut r = self.residual.to_vec();
        for (c, &col) in self.columns.iter().enumerate() {
            let x = self.z_bar[col];
            if x != ZERO {
                for (ri, &aij) in r.iter_mut().zip(a_cut.column(c).iter()) {
                    *ri += aij * x;
                }
            }
        }
        (r, a_cut)
    }

    pub fn features(&self) -> Features {
        Features::from_complex(&self.ahr, self.gram)
    }
}

impl<'a> FrameWindows<'a> {
    pub fn new(y: &'a [Vec<C64>], ch: &'a MimoFreqChannel, window: &WindowSpec) -> Result<Self> {
        check_frame(y, ch)?;
        let n = ch.n_subcarriers();
        let n_tx = ch.n_tx();
        window.validate_for(n)?;
        let a = stacked_matrix(ch, ch)?;
        let mut cols = Vec::with_capacity(n);
        let mut grams = Vec::with_capacity(n);
        for i in 0..n {
            let c = window.columns(i, n, n_tx);
            let a_cut = CMatrix::from_fn(a.nrows(), c.len(), |r, j| a[(r, c[j])]);
            grams.push(a_cut.adjoint() * &a_cut);
            cols.push(c);
        }
        Ok(Self {
            y,
            ch,
            window: window.clone(),
            a,
            cols,
            grams,
        })
    }

    pub fn window(&self) -> &WindowSpec {
        &self.window
    }

    pub fn stacked(&self) -> &CMatrix {
        &self.a
    }

    fn n_symbols(&self) -> usize {
        self.y.len()
    }

    /// `Z̄_k = [X̄_{k-1}; X̄_k]`, `E_k` and `A^H E_k` for symbol `k`.
    fn symbol_state(&self, k: usize, buffer: &PreDetectionBuffer) -> (Vec<C64>, Vec<C64>, Vec<C64>) {
        let n = self.ch.n_subcarriers();
        let rows = n * self.ch.n_rx();
        let cols = n * self.ch.n_tx();
        let mut r = vec![ZERO; 2 * rows];
        if k >= 1 {
            r[..rows].copy_from_slice(&self.y[k - 1]);
            if let Some(x2) = buffer.symbol_or_guard(k as isize - 2) {
                let isi = self.ch.phi() * CVector::from_column_slice(x2);
                for (ri, v) in r[..rows].iter_mut().zip(isi.iter()) {
                    *ri -= v;
                }
            }
        }
        r[rows..].copy_from_slice(&self.y[k]);

        let mut z_bar = vec![ZERO; 2 * cols];
        if let Some(x1) = buffer.symbol_or_guard(k as isize - 1) {
            z_bar[..cols].copy_from_slice(x1);
        }
        z_bar[cols..].copy_from_slice(buffer.symbols.symbol(k));

        let az = &self.a * CVector::from_column_slice(&z_bar);
        let e: Vec<C64> = r.iter().zip(az.iter()).map(|(a, b)| a - b).collect();
        let ahe = self.a.ad_mul(&CVector::from_column_slice(&e));
        (z_bar, e, ahe.data.into())
    }

    /// Calls `f` for every window of symbol `k`, reading only `buffer`.
    pub fn for_each_window(
        &self,
        k: usize,
        buffer: &PreDetectionBuffer,
        mut f: impl FnMut(&WindowInputs<'_>) -> Result<()>,
    ) -> Result<()> {
        let (z_bar, e, ahe) = self.symbol_state(k, buffer);
        for (i, (cols, gram)) in self.cols.iter().zip(&self.grams).enumerate() {
            let zc: Vec<C64> = cols.iter().map(|&c| z_bar[c]).collect();
            let gz = gram * CVector::from_vec(zc);
            let ahr = cols.iter().zip(gz.iter()).map(|(&c, g)| ahe[c] + g).collect();
            f(&WindowInputs {
                k,
                center: i,
                columns: cols,
                ahr,
                gram,
                residual: &e,
                z_bar: &z_bar,
                a: &self.a,
            })?;
        }
        Ok(())
    }

    /// True `Z_cut` of a window (zeros for the guard symbol).
    pub fn true_window(&self, k: usize, columns: &[usize], truth: &FrameSymbols) -> Vec<C64> {
        let cols = self.ch.n_tx() * self.ch.n_subcarriers();
        columns
            .iter()
            .map(|&c| {
                if c < cols {
                    if k == 0 {
                        ZERO
                    } else {
                        truth.symbol(k - 1)[c]
                    }
                } else {
                    truth.symbol(k)[c - cols]
                }
            })
            .collect()
    }
}

/// Detector run on every window.
#[derive(Debug, Clone, Copy)]
pub enum WindowDetector<'m> {
    Dnn(&'m UnfoldedEqualizerModel),
    /// Exhaustive search over the window, refused above `cap` unknowns.
    ReducedMl {
        cap: usize,
    },
}

/// Result of one windowed pass.
#[derive(Debug, Clone)]
pub struct PassOutput {
    pub buffer: PreDetectionBuffer,
    /// Soft estimate of every committed entry, laid out like the buffer.
    pub soft: Vec<C64>,
}

fn run_pass(
    frame: &FrameWindows<'_>,
    detector: WindowDetector<'_>,
    c: &Constellation,
    buffer: &PreDetectionBuffer,
    pass: usize,
) -> Result<PassOutput> {
    let n = frame.ch.n_subcarriers();
    let n_tx = frame.ch.n_tx();
    let k_total = frame.n_symbols();
    let mut soft = vec![ZERO; k_total * n_tx * n];
    let window = &frame.window;
    for k in 0..k_total {
        frame.for_each_window(k, buffer, |w| {
            match detector {
                WindowDetector::Dnn(model) => {
                    let out = model.predict(&w.features())?;
                    let d = out.len() / 2;
                    for m in 0..n_tx {
                        let pos = window.center_position(n_tx, m);
                        soft[(k * n_tx + m) * n + w.center] = C64::new(out[pos], out[d + pos]);
                    }
                }
                WindowDetector::ReducedMl { cap } => {
                    let (r, a_cut) = w.system();
                    let sol = ml_exhaustive(&r, &a_cut, c, cap)?;
                    for m in 0..n_tx {
                        let target = (n_tx + m) * n + w.center;
                        let pos = w
                            .columns
                            .iter()
                            .position(|&col| col == target)
                            .expect("window keeps its centre");
                        soft[(k * n_tx + m) * n + w.center] = sol.symbols[pos];
                    }
                }
            }
            Ok(())
        })?;
    }
    let source = match detector {
        WindowDetector::Dnn(_) => BufferSource::Dnn(pass),
        WindowDetector::ReducedMl { .. } => BufferSource::ReducedMl(pass),
    };
    let buffer = PreDetectionBuffer::from_soft(&soft, n, n_tx, k_total, c, source)?;
    Ok(PassOutput { buffer, soft })
}

fn check_model(model: &UnfoldedEqualizerModel, ctx: &EqualizerContext<'_>) -> Result<()> {
    model
        .ensure_matches(model.window(), ctx.channel.n_tx(), ctx.constellation)
        .map_err(|e| Error::config(e.to_string()))
}

/// One Jacobi pass of the unfolded equalizer over the frame. Only the
/// symbol-`k` centre coordinates of each window are committed.
pub fn dnn_equalize_frame(
    y: &[Vec<C64>],
    ctx: &EqualizerContext<'_>,
    model: &UnfoldedEqualizerModel,
    buffer: &PreDetectionBuffer,
) -> Result<PassOutput> {
    check_model(model, ctx)?;
    let frame = FrameWindows::new(y, ctx.channel, model.window())?;
    check_buffer(buffer, &frame)?;
    run_pass(&frame, WindowDetector::Dnn(model), ctx.constellation, buffer, 1)
}

fn check_buffer(buffer: &PreDetectionBuffer, frame: &FrameWindows<'_>) -> Result<()> {
    let s = buffer.symbols();
    if (s.n_subcarriers(), s.n_tx(), s.n_symbols()) != (frame.ch.n_subcarriers(), frame.ch.n_tx(), frame.n_symbols()) {
        return Err(Error::shape("pre-detection buffer does not match the frame"));
    }
    Ok(())
}

/// Decisions after every stage: `stages[0]` is the pre-detection,
/// `stages[j]` the output of pass `j`.
#[derive(Debug, Clone)]
pub struct ReceiveOutcome {
    pub stages: Vec<PreDetectionBuffer>,
    /// Symbol error rate per stage, when the truth was supplied.
    pub ser_trace: Option<Vec<f64>>,
}

impl ReceiveOutcome {
    pub fn decisions(&self) -> &PreDetectionBuffer {
        self.stages.last().expect("at least the pre-detection stage")
    }
}

/// Pre-detection followed by `n_iter` windowed passes with the unfolded
/// equalizer.
pub fn iterative_receive(
    y: &[Vec<C64>],
    ctx: &EqualizerContext<'_>,
    model: &UnfoldedEqualizerModel,
    n_iter: usize,
    pre: PreDetector,
    truth: Option<&FrameSymbols>,
) -> Result<ReceiveOutcome> {
    check_model(model, ctx)?;
    iterative_receive_with(y, ctx, WindowDetector::Dnn(model), model.window(), n_iter, pre, truth)
}

/// As [`iterative_receive`] with any window detector.
pub fn iterative_receive_with(
    y: &[Vec<C64>],
    ctx: &EqualizerContext<'_>,
    detector: WindowDetector<'_>,
    window: &WindowSpec,
    n_iter: usize,
    pre: PreDetector,
    truth: Option<&FrameSymbols>,
) -> Result<ReceiveOutcome> {
    if n_iter == 0 {
        return Err(Error::config("the iterative receiver needs at least one iteration"));
    }
    if let WindowDetector::Dnn(model) = detector {
        if model.window() != window {
            return Err(Error::config(format!(
                "model window {} differs from receiver window {window}",
                model.window()
            )));
        }
    }
    let initial = pre_detect_frame(y, ctx, pre)?;
    let stages = refine_frame(y, ctx, detector, window, n_iter, initial)?;
    let ser_trace = truth.map(|t| {
        let total = (t.n_symbols() * t.n_tx() * t.n_subcarriers()) as f64;
        stages
            .iter()
            .map(|b| b.symbol_errors(t, 0..t.n_tx()) as f64 / total)
            .collect()
    });
    Ok(ReceiveOutcome { stages, ser_trace })
}

/// Runs `n_iter` windowed passes starting from `initial`; returns every
/// stage, `initial` first.
pub fn refine_frame(
    y: &[Vec<C64>],
    ctx: &EqualizerContext<'_>,
    detector: WindowDetector<'_>,
    window: &WindowSpec,
    n_iter: usize,
    initial: PreDetectionBuffer,
) -> Result<Vec<PreDetectionBuffer>> {
    if n_iter == 0 {
        return Err(Error::config("the iterative receiver needs at least one iteration"));
    }
    let frame = FrameWindows::new(y, ctx.channel, window)?;
    check_buffer(&initial, &frame)?;
    let mut stages = vec![initial];
    for pass in 1..=n_iter {
        let out = run_pass(&frame, detector, ctx.constellation, stages.last().unwrap(), pass)?;
        stages.push(out.buffer);
    }
    Ok(stages)
}

/// Appends one supervised sample per (symbol, subcarrier) of the frame,
/// using `buffer` for the cancellation and the truth as the label.
pub fn collect_training_samples(
    y: &[Vec<C64>],
    ch: &MimoFreqChannel,
    window: &WindowSpec,
    buffer: &PreDetectionBuffer,
    truth: &FrameSymbols,
    out: &mut TrainingSet,
) -> Result<()> {
    if !window.wraps() {
        return Err(Error::config("training needs a wrapping window"));
    }
    let frame = FrameWindows::new(y, ch, window)?;
    check_buffer(buffer, &frame)?;
    for k in 0..frame.n_symbols() {
        frame.for_each_window(k, buffer, |w| {
            let target = lift_vector(&frame.true_window(k, w.columns, truth));
            out.push(&w.features(), target.as_slice())
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{complex_gaussian, ChannelRealization};
    use crate::interference::{build_mimo_channel, partial_cancel, predict_freq_rx, stack_two_symbol_system};
    use crate::linalg::ONE;
    use crate::modem::SystemConfig;
    use crate::unfolded::{FeatureMode, ModelShape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct Setup {
        ch: MimoFreqChannel,
        c: Constellation,
        truth: FrameSymbols,
        y: Vec<Vec<C64>>,
    }

    fn setup(n: usize, cp: usize, lh: usize, n_tx: usize, n_rx: usize, k: usize, seed: u64) -> Setup {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let taps: Vec<C64> = (0..n_rx * n_tx * lh).map(|_| complex_gaussian(&mut rng)).collect();
        let ch = build_mimo_channel(&ChannelRealization::new(n_rx, n_tx, lh, taps).unwrap(), n, cp).unwrap();
        let c = Constellation::new(4).unwrap();
        let cfg = SystemConfig {
            n_subcarriers: n,
            cp_len: cp,
            n_users: 1,
            tx_per_user: n_tx,
            n_rx,
            symbols_per_frame: k,
            ..SystemConfig::default()
        };
        let truth = FrameSymbols::random(&cfg, &c, &mut rng);
        let zero = vec![ZERO; n * n_tx];
        let y = (0..k)
            .map(|s| {
                let prev = if s == 0 { &zero[..] } else { truth.symbol(s - 1) };
                predict_freq_rx(truth.symbol(s), prev, &ch).unwrap().data.into()
            })
            .collect();
        Setup { ch, c, truth, y }
    }

    #[test]
    fn sufficient_cp_mmse_is_exact() {
        let s = setup(16, 4, 4, 2, 2, 3, 1);
        let ctx = EqualizerContext::new(&s.ch, &s.c, 0.0).unwrap();
        let buf = pre_detect_frame(&s.y, &ctx, PreDetector::Mmse).unwrap();
        assert_eq!(buf.symbols(), &s.truth);
        assert_eq!(buf.source(), BufferSource::Mmse);
        assert_eq!(pre_detect_frame(&s.y, &ctx, PreDetector::Mmse).unwrap(), buf);
    }

    #[test]
    fn fast_window_path_matches_direct_cancellation() {
        let s = setup(16, 2, 9, 2, 2, 3, 2);
        let ctx = EqualizerContext::new(&s.ch, &s.c, 0.0).unwrap();
        // A noisy buffer so that cancellation is imperfect.
        let buf = pre_detect_frame(&s.y, &ctx, PreDetector::Mmse).unwrap();
        let window = WindowSpec::default();
        let frame = FrameWindows::new(&s.y, &s.ch, &window).unwrap();
        let cols = 2 * 16;
        for k in 0..3 {
            let zero = vec![ZERO; cols];
            let y_prev: Vec<C64> = if k == 0 { vec![ZERO; 32] } else { s.y[k - 1].clone() };
            let x2: &[C64] = if k >= 2 { buf.symbols().symbol(k - 2) } else { &zero };
            let sys = stack_two_symbol_system(&y_prev, &s.y[k], &s.ch, &s.ch, x2).unwrap();
            let x1: &[C64] = if k >= 1 { buf.symbols().symbol(k - 1) } else { &zero };
            let xb: Vec<C64> = x1.iter().chain(buf.symbols().symbol(k)).copied().collect();
            frame
                .for_each_window(k, &buf, |w| {
                    let direct = partial_cancel(&sys, &window, w.center, &xb).unwrap();
                    let (r, a_cut) = w.system();
                    assert_eq!(direct.columns, w.columns);
                    assert!((CVector::from_vec(r) - &direct.r_tilde).norm() < 1e-10);
                    assert_eq!(a_cut, direct.a_cut);
                    let fd = Features::from_system(&direct.a_cut, direct.r_tilde.as_slice()).unwrap();
                    let ff = w.features();
                    for (a, b) in fd.atr.iter().zip(&ff.atr).chain(fd.gram.iter().zip(&ff.gram)) {
                        assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
                    }
                    Ok(())
                })
                .unwrap();
        }
    }

    fn zero_model(n_tx: usize) -> UnfoldedEqualizerModel {
        let shape = ModelShape {
            window: WindowSpec::default(),
            n_tx,
            n_layers: 2,
            mode: FeatureMode::GradientProduct,
        };
        UnfoldedEqualizerModel::zeros(&shape, &Constellation::new(4).unwrap()).unwrap()
    }

    #[test]
    fn zero_model_outputs_tie_break_point() {
        let s = setup(8, 2, 5, 1, 2, 2, 3);
        let ctx = EqualizerContext::new(&s.ch, &s.c, 0.0).unwrap();
        let buf = pre_detect_frame(&s.y, &ctx, PreDetector::Zf).unwrap();
        let out = dnn_equalize_frame(&s.y, &ctx, &zero_model(1), &buf).unwrap();
        assert!(out.soft.iter().all(|&z| z == ZERO));
        assert!(out.buffer.symbols().indices().iter().all(|&i| i == 0));
        let again = dnn_equalize_frame(&s.y, &ctx, &zero_model(1), &buf).unwrap();
        assert_eq!(again.buffer, out.buffer);
        assert_eq!(out.buffer.source(), BufferSource::Dnn(1));
    }

    #[test]
    fn model_mismatch_is_a_config_error() {
        let s = setup(8, 2, 5, 1, 2, 2, 4);
        let ctx = EqualizerContext::new(&s.ch, &s.c, 0.0).unwrap();
        let buf = pre_detect_frame(&s.y, &ctx, PreDetector::Zf).unwrap();
        let err = dnn_equalize_frame(&s.y, &ctx, &zero_model(2), &buf).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let err = iterative_receive(&s.y, &ctx, &zero_model(1), 0, PreDetector::Zf, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn one_iteration_equals_single_pass() {
        let s = setup(8, 2, 6, 1, 2, 3, 5);
        let ctx = EqualizerContext::new(&s.ch, &s.c, 0.0).unwrap();
        let shape = ModelShape {
            window: WindowSpec::default(),
            n_tx: 1,
            n_layers: 3,
            mode: FeatureMode::GradientProduct,
        };
        let model = UnfoldedEqualizerModel::random(&shape, &s.c, 0.5, 1).unwrap();
        let out = iterative_receive(&s.y, &ctx, &model, 1, PreDetector::Zf, Some(&s.truth)).unwrap();
        let pre = pre_detect_frame(&s.y, &ctx, PreDetector::Zf).unwrap();
        let single = dnn_equalize_frame(&s.y, &ctx, &model, &pre).unwrap();
        assert_eq!(out.stages.len(), 2);
        assert_eq!(out.decisions(), &single.buffer);
        assert_eq!(out.ser_trace.unwrap().len(), 2);
    }

    #[test]
    fn reduced_ml_with_perfect_feedback_is_exact() {
        let s = setup(8, 2, 6, 1, 2, 3, 6);
        let ctx = EqualizerContext::new(&s.ch, &s.c, 0.0).unwrap();
        let frame = FrameWindows::new(&s.y, &s.ch, &WindowSpec::default()).unwrap();
        let perfect = PreDetectionBuffer::from_symbols(s.truth.clone(), BufferSource::Zf);
        let out = run_pass(&frame, WindowDetector::ReducedMl { cap: 8 }, &s.c, &perfect, 1).unwrap();
        assert_eq!(out.buffer.symbols(), &s.truth);
        assert_eq!(out.buffer.source(), BufferSource::ReducedMl(1));
        let _ = ctx;
    }

    #[test]
    fn training_samples_have_zero_residual_with_perfect_feedback() {
        let s = setup(8, 2, 6, 1, 1, 2, 7);
        let window = WindowSpec::default();
        let perfect = PreDetectionBuffer::from_symbols(s.truth.clone(), BufferSource::Zf);
        let mut set = TrainingSet::new(2 * window.dim(1));
        collect_training_samples(&s.y, &s.ch, &window, &perfect, &s.truth, &mut set).unwrap();
        assert_eq!(set.len(), 2 * 8);
        // A^T R̃ = A^T A Z exactly when cancellation is perfect.
        for idx in 0..set.len() {
            let f = set.features(idx);
            let z = set.target(idx);
            let d = f.atr.len();
            for r in 0..d {
                let gz: f64 = (0..d).map(|c| f.gram[r * d + c] * z[c]).sum();
                assert!((gz - f.atr[r]).abs() < 1e-9, "sample {idx}");
            }
        }
    }

    #[test]
    fn error_counts() {
        let c = Constellation::new(4).unwrap();
        let truth = FrameSymbols::from_indices(2, 2, 1, vec![0, 1, 2, 3], &c);
        let dec = PreDetectionBuffer::from_symbols(
            FrameSymbols::from_indices(2, 2, 1, vec![0, 2, 2, 0], &c),
            BufferSource::Mmse,
        );
        assert_eq!(dec.symbol_errors(&truth, 0..2), 2);
        assert_eq!(dec.symbol_errors(&truth, 0..1), 1);
        assert_eq!(dec.bit_errors(&truth, 0..2), 4);
        assert_eq!(dec.bit_errors(&truth, 1..2), 2);
        assert!(PreDetectionBuffer::from_soft(&[ONE], 2, 2, 1, &c, BufferSource::Zf).is_err());
    }
}
