//! Frequency-domain model of CP-OFDM over channels longer than the prefix.
//!
//! For one symbol the receiver sees
//!
//! ```text
//! Y_k = H X_k - Phi B X_k + Phi X_{k-1} + N_k
//! ```
//!
//! with `H` block-diagonal-per-link (`diag(FFT(h))`, unnormalized FFT),
//! `Phi = F T F^H` (unitary `F`) where `T` holds the taps whose delay exceeds
//! the prefix in its top-right corner, and `B = I_{N_T} (x) G`,
//! `G = diag(W^{n L_CP})`. Taps with delay `<= L_CP` never reach `T`.
//!
//! Stacking symbols `k-1` and `k` gives `R_k = A_k Z_k` with
//! `A_k = [[H - Phi B, 0], [Phi, H - Phi B]]`; column `j` of `A_k` is the
//! contribution `beta_j` of one (symbol, antenna, subcarrier) unknown.

use std::fmt;

use nalgebra::DMatrix;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::linalg::{fft_unnormalized, twiddles, CMatrix, CVector, C64, ZERO};

/// Unitary DFT matrix, `[F]_{n,m} = W^{nm} / sqrt(N)`.
#[derive(Debug, Clone)]
pub struct DftMatrix {
    f: CMatrix,
}

impl DftMatrix {
    pub fn new(n: usize) -> Self {
        let tw = twiddles(n);
        let s = 1.0 / (n as f64).sqrt();
        Self {
            f: DMatrix::from_fn(n, n, |r, c| tw[(r * c) % n] * s),
        }
    }

    pub fn n(&self) -> usize {
        self.f.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.f
    }
}

/// Diagonal of `G`: entry `n` is `W^{n L_CP}`.
pub fn build_g(n: usize, cp_len: usize) -> Vec<C64> {
    let tw = twiddles(n);
    (0..n).map(|k| tw[(k * cp_len) % n]).collect()
}

/// The `N x N` time-domain matrix `T`: tap `h[d]` (0-based delay `d > L_CP`)
/// sits on the diagonal `c - r = N + L_CP - d`, so the longest tap is at the
/// leftmost column of the corner block and `h[L_CP + 1]` at `(0, N-1)`.
pub fn embedded_triangle(h: &[C64], n: usize, cp_len: usize) -> Result<CMatrix> {
    check_cir(h, n)?;
    let mut t = CMatrix::zeros(n, n);
    for (d, &hd) in h.iter().enumerate().skip(cp_len + 1) {
        let excess = d - cp_len;
        for r in 0..excess {
            t[(r, n - excess + r)] = hd;
        }
    }
    Ok(t)
}

fn check_cir(h: &[C64], n: usize) -> Result<()> {
    if h.is_empty() {
        return Err(Error::shape("empty impulse response"));
    }
    if h.len() > n {
        return Err(Error::Unsupported(format!(
            "impulse response of {} taps is longer than {n} subcarriers",
            h.len()
        )));
    }
    Ok(())
}

/// One link in the frequency domain.
#[derive(Debug, Clone)]
pub struct SisoFreqChannel {
    /// Diagonal of `H`.
    pub h: Vec<C64>,
    pub phi: CMatrix,
}

impl SisoFreqChannel {
    pub fn phi_is_zero(&self) -> bool {
        self.phi.iter().all(|z| *z == ZERO)
    }

    pub fn h_matrix(&self) -> CMatrix {
        CMatrix::from_diagonal(&CVector::from_column_slice(&self.h))
    }
}

pub fn build_siso_channel(h: &[C64], n: usize, cp_len: usize) -> Result<SisoFreqChannel> {
    build_siso_channel_with(h, &DftMatrix::new(n), cp_len)
}

pub fn build_siso_channel_with(h: &[C64], dft: &DftMatrix, cp_len: usize) -> Result<SisoFreqChannel> {
    let n = dft.n();
    check_cir(h, n)?;
    Ok(SisoFreqChannel {
        h: fft_unnormalized(h, n),
        phi: interference_matrix(h, dft, cp_len),
    })
}

/// `F T F^H`, using that only the first `L_h - 1 - L_CP` rows of `T` are
/// non-zero.
fn interference_matrix(h: &[C64], dft: &DftMatrix, cp_len: usize) -> CMatrix {
    let n = dft.n();
    let f = dft.matrix();
    let rows = h.len().saturating_sub(cp_len + 1);
    let mut phi = CMatrix::zeros(n, n);
    if rows == 0 {
        return phi;
    }
    // M = T F^H restricted to its non-zero rows.
    let mut m = CMatrix::zeros(rows, n);
    for r in 0..rows {
        for c in (n - rows + r)..n {
            let hd = h[n + cp_len + r - c];
            if hd == ZERO {
                continue;
            }
            for col in 0..n {
                // F^H[c, col] = conj(F[col, c])
                m[(r, col)] += hd * f[(col, c)].conj();
            }
        }
    }
    for col in 0..n {
        for r in 0..rows {
            let v = m[(r, col)];
            if v == ZERO {
                continue;
            }
            for row in 0..n {
                phi[(row, col)] += f[(row, r)] * v;
            }
        }
    }
    phi
}

/// MIMO frequency-domain channel for one (block-fading) frame.
///
/// Rows are receive-antenna-major (`n * N + i`), columns transmit-antenna-major
/// (`m * N + i`), matching the stacking of `Y_k` and `X_k`.
#[derive(Debug, Clone)]
pub struct MimoFreqChannel {
    n: usize,
    n_tx: usize,
    n_rx: usize,
    /// `H^{(n,m)}` diagonal entries at `(n * n_tx + m) * N + i`.
    h_diag: Vec<C64>,
    phi: CMatrix,
    g: Vec<C64>,
}

pub fn build_mimo_channel(ch: &ChannelRealization, n: usize, cp_len: usize) -> Result<MimoFreqChannel> {
    build_mimo_channel_with(ch, &DftMatrix::new(n), cp_len)
}

pub fn build_mimo_channel_with(ch: &ChannelRealization, dft: &DftMatrix, cp_len: usize) -> Result<MimoFreqChannel> {
    let n = dft.n();
    let (n_rx, n_tx) = (ch.n_rx(), ch.n_tx());
    let mut h_diag = Vec::with_capacity(n_rx * n_tx * n);
    let mut phi = CMatrix::zeros(n_rx * n, n_tx * n);
    for r in 0..n_rx {
        for m in 0..n_tx {
            let siso = build_siso_channel_with(ch.link(r, m), dft, cp_len)?;
            h_diag.extend_from_slice(&siso.h);
            if !siso.phi_is_zero() {
                phi.view_mut((r * n, m * n), (n, n)).copy_from(&siso.phi);
            }
        }
    }
    Ok(MimoFreqChannel {
        n,
        n_tx,
        n_rx,
        h_diag,
        phi,
        g: build_g(n, cp_len),
    })
}

impl MimoFreqChannel {
    pub fn n_subcarriers(&self) -> usize {
        self.n
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn n_rx(&self) -> usize {
        self.n_rx
    }

    pub fn h_entry(&self, rx: usize, tx: usize, i: usize) -> C64 {
        self.h_diag[(rx * self.n_tx + tx) * self.n + i]
    }

    /// Diagonal of `G`.
    pub fn g(&self) -> &[C64] {
        &self.g
    }

    pub fn phi(&self) -> &CMatrix {
        &self.phi
    }

    pub fn has_interference(&self) -> bool {
        self.phi.iter().any(|z| *z != ZERO)
    }

    /// Dense `H` (each block diagonal).
    pub fn h_matrix(&self) -> CMatrix {
        let n = self.n;
        let mut h = CMatrix::zeros(self.n_rx * n, self.n_tx * n);
        for r in 0..self.n_rx {
            for m in 0..self.n_tx {
                for i in 0..n {
                    h[(r * n + i, m * n + i)] = self.h_entry(r, m, i);
                }
            }
        }
        h
    }

    /// `B = I_{N_T} (x) G`.
    pub fn b_matrix(&self) -> CMatrix {
        let diag: Vec<C64> = (0..self.n_tx).flat_map(|_| self.g.iter().copied()).collect();
        CMatrix::from_diagonal(&CVector::from_vec(diag))
    }

    /// Effective current-symbol matrix `D = H - Phi B`.
    pub fn d_matrix(&self) -> CMatrix {
        let mut d = self.h_matrix();
        for m in 0..self.n_tx {
            for i in 0..self.n {
                let col = m * self.n + i;
                let gi = self.g[i];
                for row in 0..d.nrows() {
                    d[(row, col)] -= self.phi[(row, col)] * gi;
                }
            }
        }
        d
    }

    /// `N_R x N_T` matrix of the `H` entries at subcarrier `i`.
    pub fn subcarrier_matrix(&self, i: usize) -> CMatrix {
        CMatrix::from_fn(self.n_rx, self.n_tx, |r, m| self.h_entry(r, m, i))
    }

    /// The `(rx, tx)` link as a SISO channel.
    pub fn siso(&self, rx: usize, tx: usize) -> SisoFreqChannel {
        let n = self.n;
        SisoFreqChannel {
            h: self.h_diag[(rx * self.n_tx + tx) * n..][..n].to_vec(),
            phi: self.phi.view((rx * n, tx * n), (n, n)).into_owned(),
        }
    }
}

fn check_len(v: &[C64], want: usize, what: &str) -> Result<()> {
    if v.len() != want {
        return Err(Error::shape(format!("{what} has length {}, expected {want}", v.len())));
    }
    Ok(())
}

/// Noiseless received symbol `D X_k + Phi X_{k-1}`.
pub fn predict_freq_rx(x_k: &[C64], x_prev: &[C64], mf: &MimoFreqChannel) -> Result<CVector> {
    let cols = mf.n_tx * mf.n;
    check_len(x_k, cols, "X_k")?;
    check_len(x_prev, cols, "X_{k-1}")?;
    let d = mf.d_matrix();
    Ok(&d * CVector::from_column_slice(x_k) + mf.phi() * CVector::from_column_slice(x_prev))
}

/// `R_k = A_k Z_k` for the symbol pair `(k-1, k)`.
#[derive(Debug, Clone)]
pub struct StackedLinearModel {
    pub r: CVector,
    pub a: CMatrix,
    pub z_true: Option<CVector>,
    n: usize,
    n_tx: usize,
}

impl StackedLinearModel {
    pub fn n_subcarriers(&self) -> usize {
        self.n
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    /// Column of `A` for `symbol` (0 = previous, 1 = current), antenna `m`,
    /// subcarrier `i`.
    pub fn column_index(&self, symbol: usize, m: usize, i: usize) -> usize {
        symbol * self.n_tx * self.n + m * self.n + i
    }

    pub fn beta(&self, symbol: usize, m: usize, i: usize) -> CVector {
        self.a.column(self.column_index(symbol, m, i)).into_owned()
    }
}

/// `A_k = [[D_{k-1}, 0], [Phi_{k-1}, D_k]]`.
pub fn stacked_matrix(prev: &MimoFreqChannel, cur: &MimoFreqChannel) -> Result<CMatrix> {
    let (n, n_tx, n_rx) = (cur.n, cur.n_tx, cur.n_rx);
    if (prev.n, prev.n_tx, prev.n_rx) != (n, n_tx, n_rx) {
        return Err(Error::shape("channels of symbols k-1 and k differ in dimensions"));
    }
    let rows = n * n_rx;
    let cols = n * n_tx;
    let mut a = CMatrix::zeros(2 * rows, 2 * cols);
    a.view_mut((0, 0), (rows, cols)).copy_from(&prev.d_matrix());
    a.view_mut((rows, 0), (rows, cols)).copy_from(prev.phi());
    a.view_mut((rows, cols), (rows, cols)).copy_from(&cur.d_matrix());
    Ok(a)
}

/// Builds `(R_k, A_k)` from the received pair and the pre-detected symbol
/// `k-2` (zeros when it does not exist). `prev` describes symbol `k-1`
/// (its `Phi` also stands in for `Phi_{k-2}`), `cur` symbol `k`.
pub fn stack_two_symbol_system(
    y_prev: &[C64],
    y_k: &[C64],
    prev: &MimoFreqChannel,
    cur: &MimoFreqChannel,
    x_bar_km2: &[C64],
) -> Result<StackedLinearModel> {
    let (n, n_tx, n_rx) = (cur.n, cur.n_tx, cur.n_rx);
    if (prev.n, prev.n_tx, prev.n_rx) != (n, n_tx, n_rx) {
        return Err(Error::shape("channels of symbols k-1 and k differ in dimensions"));
    }
    let rows = n * n_rx;
    let cols = n * n_tx;
    check_len(y_prev, rows, "Y_{k-1}")?;
    check_len(y_k, rows, "Y_k")?;
    check_len(x_bar_km2, cols, "pre-detected X_{k-2}")?;

    let a = stacked_matrix(prev, cur)?;

    let isi = prev.phi() * CVector::from_column_slice(x_bar_km2);
    let mut r = CVector::zeros(2 * rows);
    for k in 0..rows {
        r[k] = y_prev[k] - isi[k];
        r[rows + k] = y_k[k];
    }
    Ok(StackedLinearModel {
        r,
        a,
        z_true: None,
        n,
        n_tx,
    })
}

/// Interference window around a detected subcarrier: which subcarrier
/// offsets of the previous (`prev`) and current (`cur`) symbol stay unknowns.
/// Everything else is cancelled with pre-detections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSpec {
    prev: Vec<i64>,
    cur: Vec<i64>,
    wrap: bool,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            prev: vec![0],
            cur: vec![-1, 0, 1],
            wrap: true,
        }
    }
}

impl fmt::Display for WindowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[i64]| v.iter().map(i64::to_string).collect::<Vec<_>>().join(",");
        write!(f, "prev={{{}}} cur={{{}}}", join(&self.prev), join(&self.cur))?;
        if !self.wrap {
            write!(f, " nowrap")?;
        }
        Ok(())
    }
}

impl WindowSpec {
    /// Offsets are sorted and deduplicated; the current set must contain 0.
    pub fn new(mut prev: Vec<i64>, mut cur: Vec<i64>, wrap: bool) -> Result<Self> {
        prev.sort_unstable();
        prev.dedup();
        cur.sort_unstable();
        cur.dedup();
        if !cur.contains(&0) {
            return Err(Error::config("the current-symbol window must contain offset 0"));
        }
        Ok(Self { prev, cur, wrap })
    }

    /// Every subcarrier of both symbols, centred so that the window at
    /// subcarrier 0 lists columns in the natural order.
    pub fn full(n: usize) -> Self {
        let all: Vec<i64> = (0..n as i64).collect();
        Self {
            prev: all.clone(),
            cur: all,
            wrap: true,
        }
    }

    pub fn prev_offsets(&self) -> &[i64] {
        &self.prev
    }

    pub fn cur_offsets(&self) -> &[i64] {
        &self.cur
    }

    pub fn wraps(&self) -> bool {
        self.wrap
    }

    /// Complex unknowns per window, `N_T (|S_p| + |S_c|)`.
    pub fn dim(&self, n_tx: usize) -> usize {
        n_tx * (self.prev.len() + self.cur.len())
    }

    pub fn validate_for(&self, n: usize) -> Result<()> {
        for (name, set) in [("previous", &self.prev), ("current", &self.cur)] {
            if set.len() > n {
                return Err(Error::config(format!(
                    "{name}-symbol window has {} offsets but only {n} subcarriers",
                    set.len()
                )));
            }
            if self.wrap {
                let mut wrapped: Vec<i64> = set.iter().map(|o| o.rem_euclid(n as i64)).collect();
                wrapped.sort_unstable();
                wrapped.dedup();
                if wrapped.len() != set.len() {
                    return Err(Error::config(format!(
                        "{name}-symbol window {self} overlaps itself modulo {n}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn resolve(&self, center: usize, offset: i64, n: usize) -> Option<usize> {
        let s = center as i64 + offset;
        if self.wrap {
            Some(s.rem_euclid(n as i64) as usize)
        } else {
            (0..n as i64).contains(&s).then_some(s as usize)
        }
    }

    /// Columns of `A` kept around `center`: previous symbol first, then the
    /// current one; within a symbol by ascending offset, antennas innermost.
    /// Without wrap-around, offsets that leave the band are dropped.
    pub fn columns(&self, center: usize, n: usize, n_tx: usize) -> Vec<usize> {
        let mut cols = Vec::with_capacity(self.dim(n_tx));
        for (symbol, set) in [(0usize, &self.prev), (1, &self.cur)] {
            for &o in set {
                if let Some(sc) = self.resolve(center, o, n) {
                    cols.extend((0..n_tx).map(|m| symbol * n_tx * n + m * n + sc));
                }
            }
        }
        cols
    }

    /// Position in `Z_cut` of (current symbol, centre subcarrier, antenna `m`)
    /// for a wrapping window.
    pub fn center_position(&self, n_tx: usize, m: usize) -> usize {
        let zero = self.cur.iter().position(|&o| o == 0).expect("0 is in the window");
        (self.prev.len() + zero) * n_tx + m
    }
}

/// Output of [`partial_cancel`].
#[derive(Debug, Clone)]
pub struct WindowedSystem {
    pub r_tilde: CVector,
    pub a_cut: CMatrix,
    /// Columns of `A` retained, in `Z_cut` order.
    pub columns: Vec<usize>,
}

/// Subtracts the pre-detected contribution of every column outside the
/// window and keeps the window columns as `A_cut`. `x_bar` is `[X̄_{k-1}; X̄_k]`.
pub fn partial_cancel(
    sys: &StackedLinearModel,
    window: &WindowSpec,
    center: usize,
    x_bar: &[C64],
) -> Result<WindowedSystem> {
    let (n, n_tx) = (sys.n, sys.n_tx);
    window.validate_for(n)?;
    check_len(x_bar, 2 * n * n_tx, "pre-detections [X_{k-1}; X_k]")?;
    if center >= n {
        return Err(Error::shape(format!("centre subcarrier {center} outside 0..{n}")));
    }
    let columns = window.columns(center, n, n_tx);
    let mut keep = vec![false; 2 * n * n_tx];
    for &c in &columns {
        keep[c] = true;
    }
    let mut r_tilde = sys.r.clone();
    for (j, &xj) in x_bar.iter().enumerate() {
        if keep[j] || xj == ZERO {
            continue;
        }
        for (r, &a) in r_tilde.iter_mut().zip(sys.a.column(j).iter()) {
            *r -= a * xj;
        }
    }
    let a_cut = CMatrix::from_fn(sys.a.nrows(), columns.len(), |r, c| sys.a[(r, columns[c])]);
    Ok(WindowedSystem {
        r_tilde,
        a_cut,
        columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::complex_gaussian;
    use crate::linalg::norm_sqr;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn random_cir(len: usize, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..len).map(|_| complex_gaussian(&mut rng)).collect()
    }

    fn random_vec(len: usize, rng: &mut ChaCha20Rng) -> Vec<C64> {
        (0..len).map(|_| complex_gaussian(rng)).collect()
    }

    #[test]
    fn dft_is_unitary() {
        let f = DftMatrix::new(12);
        let p = f.matrix() * f.matrix().adjoint();
        assert!((p - CMatrix::identity(12, 12)).norm() < 1e-10);
    }

    #[test]
    fn g_special_cases() {
        assert!(build_g(8, 0).iter().all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-15));
        assert!(build_g(8, 8).iter().all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-14));
        let g = build_g(2, 1);
        assert!((g[0] - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((g[1] - C64::new(-1.0, 0.0)).norm() < 1e-15);
        assert!(build_g(16, 5).iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
    }

    #[test]
    fn short_channels_have_no_interference() {
        for len in 1..=5 {
            let s = build_siso_channel(&random_cir(len, len as u64), 16, 4).unwrap();
            assert!(s.phi_is_zero(), "L_h = {len}");
        }
    }

    #[test]
    fn single_excess_tap_lands_top_right() {
        let (n, cp) = (16, 4);
        let h = random_cir(cp + 2, 3);
        let t = embedded_triangle(&h, n, cp).unwrap();
        for r in 0..n {
            for c in 0..n {
                let want = if (r, c) == (0, n - 1) { h[cp + 1] } else { ZERO };
                assert_eq!(t[(r, c)], want);
            }
        }
    }

    #[test]
    fn triangle_layout() {
        // Three excess taps: rows [h5 h4 h3; 0 h5 h4; 0 0 h5] in the top-right corner.
        let (n, cp) = (8, 2);
        let h: Vec<C64> = (0..6).map(|k| C64::new(k as f64, 0.0)).collect();
        let t = embedded_triangle(&h, n, cp).unwrap();
        let corner = t.view((0, 5), (3, 3));
        let want = [[5.0, 4.0, 3.0], [0.0, 5.0, 4.0], [0.0, 0.0, 5.0]];
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(corner[(r, c)].re, want[r][c]);
            }
        }
        assert_eq!(t.iter().filter(|z| **z != ZERO).count(), 6);
    }

    #[test]
    fn frobenius_identity() {
        let (n, cp) = (32, 6);
        for seed in 0..5 {
            let h = random_cir(cp + 4, seed);
            let s = build_siso_channel(&h, n, cp).unwrap();
            let lhs = s.phi.norm_squared();
            let rhs: f64 = h
                .iter()
                .enumerate()
                .skip(cp + 1)
                .map(|(d, z)| (d - cp) as f64 * z.norm_sqr())
                .sum();
            assert!((lhs - rhs).abs() < 1e-10 * rhs.max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn phi_matches_dense_sandwich() {
        let (n, cp) = (12, 3);
        let h = random_cir(9, 4);
        let f = DftMatrix::new(n);
        let dense = f.matrix() * embedded_triangle(&h, n, cp).unwrap() * f.matrix().adjoint();
        let s = build_siso_channel_with(&h, &f, cp).unwrap();
        assert!((dense - &s.phi).norm() < 1e-12);
    }

    #[test]
    fn rejects_cir_longer_than_symbol() {
        let err = build_siso_channel(&random_cir(9, 0), 8, 2).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn mimo_blocks_match_siso_builds() {
        let (n, cp) = (16, 3);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let taps = random_vec(2 * 2 * 7, &mut rng);
        let ch = ChannelRealization::new(2, 2, 7, taps).unwrap();
        let mf = build_mimo_channel(&ch, n, cp).unwrap();
        for r in 0..2 {
            for m in 0..2 {
                let direct = build_siso_channel(ch.link(r, m), n, cp).unwrap();
                let block = mf.siso(r, m);
                assert_eq!(block.h, direct.h);
                assert!((block.phi - direct.phi).norm() < 1e-13);
            }
        }
        let h = mf.h_matrix();
        // Blocks are diagonal.
        for row in 0..2 * n {
            for col in 0..2 * n {
                if row % n != col % n {
                    assert_eq!(h[(row, col)], ZERO);
                }
            }
        }
    }

    #[test]
    fn mimo_reduces_to_siso() {
        let h = random_cir(10, 2);
        let ch = ChannelRealization::uniform(1, 1, &h).unwrap();
        let mf = build_mimo_channel(&ch, 16, 4).unwrap();
        let s = build_siso_channel(&h, 16, 4).unwrap();
        assert_eq!(mf.siso(0, 0).h, s.h);
        assert!((mf.phi() - &s.phi).norm() == 0.0);
        assert_eq!(mf.b_matrix().diagonal().as_slice(), build_g(16, 4).as_slice());
    }

    #[test]
    fn identical_links_give_identical_blocks() {
        let h = random_cir(10, 3);
        let ch = ChannelRealization::uniform(2, 3, &h).unwrap();
        let mf = build_mimo_channel(&ch, 16, 4).unwrap();
        let first = mf.siso(0, 0);
        for r in 0..2 {
            for m in 0..3 {
                let b = mf.siso(r, m);
                assert_eq!(b.h, first.h);
                assert_eq!(b.phi, first.phi);
            }
        }
    }

    #[test]
    fn prediction_without_interference_is_diagonal() {
        let (n, cp) = (16, 4);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let ch = ChannelRealization::new(2, 2, 3, random_vec(12, &mut rng)).unwrap();
        let mf = build_mimo_channel(&ch, n, cp).unwrap();
        let x = random_vec(2 * n, &mut rng);
        let xp = random_vec(2 * n, &mut rng);
        let y = predict_freq_rx(&x, &xp, &mf).unwrap();
        for r in 0..2 {
            for i in 0..n {
                let want = mf.h_entry(r, 0, i) * x[i] + mf.h_entry(r, 1, i) * x[n + i];
                assert!((y[r * n + i] - want).norm() < 1e-12);
            }
        }
        let zero = vec![ZERO; 2 * n];
        assert!(predict_freq_rx(&zero, &zero, &mf).unwrap().iter().all(|z| *z == ZERO));
        assert!(predict_freq_rx(&zero[1..], &zero, &mf).is_err());
    }

    fn random_model(n: usize, cp: usize, lh: usize, n_tx: usize, n_rx: usize, seed: u64) -> MimoFreqChannel {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ch = ChannelRealization::new(n_rx, n_tx, lh, random_vec(n_rx * n_tx * lh, &mut rng)).unwrap();
        build_mimo_channel(&ch, n, cp).unwrap()
    }

    #[test]
    fn stacked_system_identity() {
        let (n, cp) = (16, 2);
        let mf = random_model(n, cp, 9, 2, 2, 5);
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let x: Vec<Vec<C64>> = (0..3).map(|_| random_vec(2 * n, &mut rng)).collect();
        let y1 = predict_freq_rx(&x[1], &x[0], &mf).unwrap();
        let y2 = predict_freq_rx(&x[2], &x[1], &mf).unwrap();
        let sys = stack_two_symbol_system(y1.as_slice(), y2.as_slice(), &mf, &mf, &x[0]).unwrap();
        let z = CVector::from_iterator(4 * n, x[1].iter().chain(&x[2]).copied());
        let resid = &sys.r - &sys.a * &z;
        assert!(resid.norm() < 1e-12 * sys.r.norm());
        assert_eq!(sys.beta(1, 1, 3), sys.a.column(3 * n + 3).into_owned());
    }

    #[test]
    fn stacked_system_degenerate_cases() {
        let (n, cp) = (8, 4);
        let mf = random_model(n, cp, 3, 1, 1, 7);
        let y: Vec<C64> = (0..n).map(|k| C64::new(k as f64, 1.0)).collect();
        let zero = vec![ZERO; n];
        let sys = stack_two_symbol_system(&y, &y, &mf, &mf, &zero).unwrap();
        let h = mf.h_matrix();
        assert_eq!(sys.a.view((0, 0), (n, n)).into_owned(), h);
        assert_eq!(sys.a.view((n, n), (n, n)).into_owned(), h);
        assert!(sys.a.view((0, n), (n, n)).iter().all(|z| *z == ZERO));
        assert!(sys.a.view((n, 0), (n, n)).iter().all(|z| *z == ZERO));

        let zero_ch = ChannelRealization::uniform(1, 1, &[ZERO; 6]).unwrap();
        let zf = build_mimo_channel(&zero_ch, n, 2).unwrap();
        let sys = stack_two_symbol_system(&y, &y, &zf, &zf, &y).unwrap();
        assert!(sys.a.iter().all(|z| *z == ZERO));
        assert_eq!(sys.r.as_slice(), [y.clone(), y].concat().as_slice());
    }

    #[test]
    fn column_partition_reproduces_product() {
        let n = 8;
        let mf = random_model(n, 2, 6, 2, 3, 8);
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let zero_y = vec![ZERO; 3 * n];
        let sys = stack_two_symbol_system(&zero_y, &zero_y, &mf, &mf, &vec![ZERO; 2 * n]).unwrap();
        let z = random_vec(4 * n, &mut rng);
        let mut acc = CVector::zeros(6 * n);
        for (j, &zj) in z.iter().enumerate() {
            acc += sys.a.column(j) * zj;
        }
        let direct = &sys.a * CVector::from_column_slice(&z);
        assert!((acc - &direct).norm() < 1e-12 * direct.norm());
    }

    #[test]
    fn window_columns_wrap() {
        let w = WindowSpec::default();
        let n = 8;
        // Single antenna: current-symbol columns start at n.
        assert_eq!(w.columns(0, n, 1), vec![0, n + 7, n, n + 1]);
        assert_eq!(w.columns(7, n, 1), vec![7, n + 6, n + 7, n]);
        assert_eq!(
            w.columns(3, n, 2),
            vec![
                3,
                n + 3,
                2 * n + 2,
                3 * n + 2,
                2 * n + 3,
                3 * n + 3,
                2 * n + 4,
                3 * n + 4
            ]
        );
        assert_eq!(w.center_position(2, 0), 4);
        assert_eq!(w.center_position(2, 1), 5);

        let nowrap = WindowSpec::new(vec![0], vec![-1, 0, 1], false).unwrap();
        assert_eq!(nowrap.columns(0, n, 1), vec![0, n, n + 1]);
    }

    #[test]
    fn window_validation() {
        assert!(WindowSpec::new(vec![0], vec![-1, 1], true).is_err());
        let w = WindowSpec::new(vec![0], vec![-2, -1, 0, 1, 2], true).unwrap();
        assert!(w.validate_for(5).is_ok());
        assert!(w.validate_for(4).is_err());
        let w = WindowSpec::new(vec![0], vec![0, 4], true).unwrap();
        assert!(w.validate_for(4).is_err());
        assert_eq!(WindowSpec::default().to_string(), "prev={0} cur={-1,0,1}");
    }

    #[test]
    fn full_window_cancels_nothing() {
        let n = 8;
        let mf = random_model(n, 2, 6, 1, 1, 10);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let y1 = random_vec(n, &mut rng);
        let y2 = random_vec(n, &mut rng);
        let sys = stack_two_symbol_system(&y1, &y2, &mf, &mf, &vec![ZERO; n]).unwrap();
        let xb = random_vec(2 * n, &mut rng);
        let out = partial_cancel(&sys, &WindowSpec::full(n), 0, &xb).unwrap();
        assert_eq!(out.r_tilde, sys.r);
        assert_eq!(out.a_cut, sys.a);

        let out = partial_cancel(&sys, &WindowSpec::default(), 5, &vec![ZERO; 2 * n]).unwrap();
        assert_eq!(out.r_tilde, sys.r);
        assert_eq!(out.a_cut.ncols(), 4);
    }

    #[test]
    fn perfect_cancellation_is_exact() {
        let n = 16;
        let mf = random_model(n, 3, 10, 2, 2, 12);
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let x: Vec<Vec<C64>> = (0..3).map(|_| random_vec(2 * n, &mut rng)).collect();
        let y1 = predict_freq_rx(&x[1], &x[0], &mf).unwrap();
        let y2 = predict_freq_rx(&x[2], &x[1], &mf).unwrap();
        let sys = stack_two_symbol_system(y1.as_slice(), y2.as_slice(), &mf, &mf, &x[0]).unwrap();
        let z: Vec<C64> = x[1].iter().chain(&x[2]).copied().collect();
        for center in [0, 7, 15] {
            let w = partial_cancel(&sys, &WindowSpec::default(), center, &z).unwrap();
            let z_cut = CVector::from_iterator(w.columns.len(), w.columns.iter().map(|&c| z[c]));
            let resid = &w.r_tilde - &w.a_cut * z_cut;
            assert!(resid.norm() < 1e-12 * norm_sqr(sys.r.as_slice()).sqrt());
        }
        assert!(partial_cancel(&sys, &WindowSpec::default(), 0, &z[1..]).is_err());
    }
}
