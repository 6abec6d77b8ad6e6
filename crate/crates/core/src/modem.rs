//! Gray-mapped square QAM and CP-OFDM framing.
//!
//! Indexing: documentation counts subcarriers, samples and symbols from 1,
//! storage counts from 0 (subcarrier `i` in the docs is slot `i - 1`).
//! Frequency-domain vectors of one OFDM symbol are stacked antenna-major,
//! subcarrier-minor: entry `m * N + i` is antenna `m`, subcarrier `i`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{dft_with, twiddles, C64};

/// Dimensional and numerological parameters of one link.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub n_subcarriers: usize,
    pub cp_len: usize,
    pub n_users: usize,
    pub tx_per_user: usize,
    pub n_rx: usize,
    pub qam_order: usize,
    pub symbols_per_frame: usize,
    /// Per-sample complex noise variance; with the unitary DFT this is also
    /// the per-subcarrier noise variance.
    pub noise_variance: f64,
    /// Samples per second, used to turn delays in microseconds into samples.
    pub sample_rate: f64,
}

impl Default for SystemConfig {
    /// Desk-scale defaults: 64 subcarriers, CP of 8, one user with two
    /// antennas into four receive antennas, QPSK, 14 symbols per frame. The
    /// sample rate maps the 4.553 us tail of the measured profile onto sample 24.
    fn default() -> Self {
        Self {
            n_subcarriers: 64,
            cp_len: 8,
            n_users: 1,
            tx_per_user: 2,
            n_rx: 4,
            qam_order: 4,
            symbols_per_frame: 14,
            noise_variance: 0.01,
            sample_rate: DESK_SAMPLE_RATE,
        }
    }
}

/// 24 samples per 4.553 us.
pub const DESK_SAMPLE_RATE: f64 = 24.0 / 4.553e-6;

impl SystemConfig {
    pub fn total_tx(&self) -> usize {
        self.n_users * self.tx_per_user
    }

    /// Samples per OFDM symbol including the prefix.
    pub fn symbol_len(&self) -> usize {
        self.n_subcarriers + self.cp_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers < 2 {
            return Err(Error::config("n_subcarriers must be at least 2"));
        }
        if self.total_tx() < 1 {
            return Err(Error::config("need at least one transmit antenna"));
        }
        if self.n_rx < self.total_tx() {
            return Err(Error::config(format!(
                "n_rx ({}) must be at least the number of transmit antennas ({})",
                self.n_rx,
                self.total_tx()
            )));
        }
        if !is_power_of_four(self.qam_order) {
            return Err(Error::config(format!(
                "qam_order {} is not a power of 4",
                self.qam_order
            )));
        }
        if self.symbols_per_frame < 2 {
            return Err(Error::config("symbols_per_frame must be at least 2"));
        }
        if !(self.noise_variance >= 0.0) {
            return Err(Error::config("noise_variance must be non-negative"));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::config("sample_rate must be positive"));
        }
        Ok(())
    }
}

fn is_power_of_four(m: usize) -> bool {
    m >= 4 && m.is_power_of_two() && m.trailing_zeros().is_multiple_of(2)
}

/// Square M-QAM with unit average power and per-axis Gray labels.
///
/// `points[label]` is the point whose Gray label, read MSB first, is `label`;
/// the upper half of the bits picks the in-phase level, the lower half the
/// quadrature level. Levels ascend from the most negative coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    order: usize,
    bits_per_symbol: usize,
    points: Vec<C64>,
    p_max: f64,
}

impl Constellation {
    pub fn new(order: usize) -> Result<Self> {
        if !is_power_of_four(order) {
            return Err(Error::config(format!("qam order {order} is not a power of 4")));
        }
        let bits = order.trailing_zeros() as usize;
        let half = bits / 2;
        let side = 1usize << half;
        let scale = 1.0 / (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
        let level = |gray: usize| {
            let idx = gray_decode(gray);
            (2.0 * idx as f64 - (side as f64 - 1.0)) * scale
        };
        let points = (0..order)
            .map(|label| {
                let i_bits = label >> half;
                let q_bits = label & (side - 1);
                C64::new(level(i_bits), level(q_bits))
            })
            .collect();
        Ok(Self {
            order,
            bits_per_symbol: bits,
            points,
            p_max: (side as f64 - 1.0) * scale,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn points(&self) -> &[C64] {
        &self.points
    }

    /// Largest absolute per-axis coordinate.
    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    pub fn point(&self, label: usize) -> C64 {
        self.points[label]
    }

    /// Gray label of point `index`, MSB first.
    pub fn label_bits(&self, index: usize) -> impl Iterator<Item = bool> + '_ {
        (0..self.bits_per_symbol).rev().map(move |b| (index >> b) & 1 == 1)
    }

    /// Index of the Euclidean-nearest point; ties go to the lower index.
    pub fn nearest(&self, y: C64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, p) in self.points.iter().enumerate() {
            let d = (y - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// Number of differing label bits between two points.
    pub fn bit_distance(&self, a: usize, b: usize) -> u32 {
        (a ^ b).count_ones()
    }
}

fn gray_decode(mut g: usize) -> usize {
    let mut b = 0;
    while g != 0 {
        b ^= g;
        g >>= 1;
    }
    b
}

/// Maps bits (MSB first per symbol) to constellation points.
pub fn qam_map(bits: &[bool], c: &Constellation) -> Result<Vec<C64>> {
    let k = c.bits_per_symbol();
    if !bits.len().is_multiple_of(k) {
        return Err(Error::shape(format!(
            "{} bits is not a multiple of {k} bits per symbol",
            bits.len()
        )));
    }
    Ok(bits
        .chunks(k)
        .map(|chunk| {
            let label = chunk.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
            c.point(label)
        })
        .collect())
}

/// Hard decision: nearest points and their Gray labels.
pub fn qam_demap_hard(y: &[C64], c: &Constellation) -> (Vec<C64>, Vec<bool>) {
    let mut points = Vec::with_capacity(y.len());
    let mut bits = Vec::with_capacity(y.len() * c.bits_per_symbol());
    for &v in y {
        let idx = c.nearest(v);
        points.push(c.point(idx));
        bits.extend(c.label_bits(idx));
    }
    (points, bits)
}

/// Unitary IDFT of one symbol followed by cyclic-prefix insertion.
pub fn ofdm_modulate(x_freq: &[C64], cfg: &SystemConfig) -> Result<Vec<C64>> {
    OfdmEngine::new(cfg).modulate(x_freq)
}

/// Cyclic-prefix removal followed by the unitary DFT.
pub fn ofdm_demodulate(y_time: &[C64], cfg: &SystemConfig) -> Result<Vec<C64>> {
    OfdmEngine::new(cfg).demodulate(y_time)
}

/// OFDM modulator/demodulator with a cached twiddle table.
#[derive(Debug, Clone)]
pub struct OfdmEngine {
    n: usize,
    cp: usize,
    tw: Vec<C64>,
}

impl OfdmEngine {
    pub fn new(cfg: &SystemConfig) -> Self {
        Self {
            n: cfg.n_subcarriers,
            cp: cfg.cp_len,
            tw: twiddles(cfg.n_subcarriers),
        }
    }

    pub fn modulate(&self, x_freq: &[C64]) -> Result<Vec<C64>> {
        if x_freq.len() != self.n {
            return Err(Error::shape(format!(
                "ofdm_modulate expects {} subcarriers, got {}",
                self.n,
                x_freq.len()
            )));
        }
        let s = dft_with(x_freq, &self.tw, true);
        let mut out = Vec::with_capacity(self.n + self.cp);
        // A prefix longer than the symbol keeps wrapping cyclically.
        for k in 0..self.cp {
            let idx = (self.n - (self.cp - k) % self.n) % self.n;
            out.push(s[idx]);
        }
        out.extend_from_slice(&s);
        Ok(out)
    }

    pub fn demodulate(&self, y_time: &[C64]) -> Result<Vec<C64>> {
        if y_time.len() != self.n + self.cp {
            return Err(Error::shape(format!(
                "ofdm_demodulate expects {} samples, got {}",
                self.n + self.cp,
                y_time.len()
            )));
        }
        Ok(dft_with(&y_time[self.cp..], &self.tw, false))
    }

    /// Modulates a whole frame into one concatenated sample stream per
    /// transmit antenna.
    pub fn modulate_frame(&self, frame: &FrameSymbols) -> Result<Vec<Vec<C64>>> {
        let mut streams = vec![Vec::with_capacity(frame.n_symbols * (self.n + self.cp)); frame.n_tx];
        for k in 0..frame.n_symbols {
            for (m, stream) in streams.iter_mut().enumerate() {
                stream.extend(self.modulate(frame.antenna_symbol(m, k))?);
            }
        }
        Ok(streams)
    }

    /// Splits per-antenna received streams into symbols and demodulates them.
    /// Returns one stacked vector `Y_k` (receive-antenna-major) per symbol.
    pub fn demodulate_frame(&self, rx: &[Vec<C64>], n_symbols: usize) -> Result<Vec<Vec<C64>>> {
        let len = self.n + self.cp;
        let mut out = vec![Vec::with_capacity(rx.len() * self.n); n_symbols];
        for stream in rx {
            if stream.len() < n_symbols * len {
                return Err(Error::shape(format!(
                    "stream of {} samples is shorter than {n_symbols} symbols of {len}",
                    stream.len()
                )));
            }
            for (k, y) in out.iter_mut().enumerate() {
                y.extend(self.demodulate(&stream[k * len..(k + 1) * len])?);
            }
        }
        Ok(out)
    }
}

/// Transmitted constellation grid of one frame.
///
/// Layout: `(symbol k, antenna m, subcarrier i)` at `(k * n_tx + m) * N + i`,
/// so `symbol(k)` is the stacked vector `X_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSymbols {
    n_subcarriers: usize,
    n_tx: usize,
    n_symbols: usize,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl FrameSymbols {
    pub fn random<R: Rng + ?Sized>(cfg: &SystemConfig, c: &Constellation, rng: &mut R) -> Self {
        let n = cfg.n_subcarriers * cfg.total_tx() * cfg.symbols_per_frame;
        let indices: Vec<usize> = (0..n).map(|_| rng.random_range(0..c.order())).collect();
        Self::from_indices(cfg.n_subcarriers, cfg.total_tx(), cfg.symbols_per_frame, indices, c)
    }

    pub fn from_indices(
        n_subcarriers: usize,
        n_tx: usize,
        n_symbols: usize,
        indices: Vec<usize>,
        c: &Constellation,
    ) -> Self {
        assert_eq!(indices.len(), n_subcarriers * n_tx * n_symbols);
        let values = indices.iter().map(|&k| c.point(k)).collect();
        Self {
            n_subcarriers,
            n_tx,
            n_symbols,
            indices,
            values,
        }
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    /// Stacked `X_k` (length `n_tx * N`).
    pub fn symbol(&self, k: usize) -> &[C64] {
        let len = self.n_tx * self.n_subcarriers;
        &self.values[k * len..(k + 1) * len]
    }

    pub fn symbol_indices(&self, k: usize) -> &[usize] {
        let len = self.n_tx * self.n_subcarriers;
        &self.indices[k * len..(k + 1) * len]
    }

    pub fn antenna_symbol(&self, m: usize, k: usize) -> &[C64] {
        let start = (k * self.n_tx + m) * self.n_subcarriers;
        &self.values[start..start + self.n_subcarriers]
    }

    pub fn get(&self, m: usize, k: usize, i: usize) -> C64 {
        self.values[(k * self.n_tx + m) * self.n_subcarriers + i]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm_sqr, relative_error};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn cfg(n: usize, cp: usize) -> SystemConfig {
        SystemConfig {
            n_subcarriers: n,
            cp_len: cp,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn qpsk_points_are_distinct_corners() {
        let c = Constellation::new(4).unwrap();
        let bits = [false, false, false, true, true, true, true, false];
        let pts = qam_map(&bits, &c).unwrap();
        for p in &pts {
            assert!((p.re.abs() - FRAC_1_SQRT_2).abs() < 1e-15);
            assert!((p.im.abs() - FRAC_1_SQRT_2).abs() < 1e-15);
        }
        for a in 0..4 {
            for b in a + 1..4 {
                assert!((pts[a] - pts[b]).norm() > 1.0);
            }
        }
    }

    #[test]
    fn sixteen_qam_levels_and_power() {
        // Independent check: the {+-1, +-3} grid has mean energy 10.
        let grid: Vec<f64> = [-3.0, -1.0, 1.0, 3.0].to_vec();
        let e: f64 = grid
            .iter()
            .flat_map(|a| grid.iter().map(move |b| a * a + b * b))
            .sum::<f64>()
            / 16.0;
        assert_eq!(e, 10.0);

        let c = Constellation::new(16).unwrap();
        let s = 10f64.sqrt();
        for p in c.points() {
            for coord in [p.re, p.im] {
                let lvl = coord * s;
                assert!([-3.0, -1.0, 1.0, 3.0].iter().any(|l| (l - lvl).abs() < 1e-12));
            }
        }
        assert!((c.p_max() - 3.0 / s).abs() < 1e-15);
    }

    #[test]
    fn unit_power_for_all_orders() {
        for m in [4, 16, 64, 256] {
            let c = Constellation::new(m).unwrap();
            let p = norm_sqr(c.points()) / m as f64;
            assert!((p - 1.0).abs() < 1e-12, "M={m}: {p}");
            let max_re = c.points().iter().map(|z| z.re.abs()).fold(0.0, f64::max);
            assert_eq!(max_re, c.p_max());
        }
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        for m in [4, 16, 64, 256] {
            let c = Constellation::new(m).unwrap();
            let step = 2.0 / (2.0 * (m as f64 - 1.0) / 3.0).sqrt();
            for a in 0..m {
                for b in 0..m {
                    let d = c.point(a) - c.point(b);
                    let axis_neighbour = (d.re.abs() - step).abs() < 1e-9 && d.im.abs() < 1e-9
                        || (d.im.abs() - step).abs() < 1e-9 && d.re.abs() < 1e-9;
                    if axis_neighbour {
                        assert_eq!(c.bit_distance(a, b), 1, "M={m} {a} {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_orders_and_lengths() {
        assert!(Constellation::new(8).is_err());
        assert!(Constellation::new(2).is_err());
        let c = Constellation::new(16).unwrap();
        assert!(matches!(qam_map(&[true; 6], &c), Err(Error::Shape(_))));
        assert!(qam_map(&[], &c).unwrap().is_empty());
    }

    #[test]
    fn hard_decisions() {
        let c = Constellation::new(4).unwrap();
        for &p in c.points() {
            assert_eq!(qam_demap_hard(&[p], &c).0[0], p);
        }
        let (pts, _) = qam_demap_hard(&[C64::new(0.9, 0.1)], &c);
        assert!((pts[0] - C64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2)).norm() < 1e-15);
        // All four corners are equidistant from the origin.
        assert_eq!(c.nearest(C64::new(0.0, 0.0)), 0);
        assert_eq!(qam_demap_hard(&[C64::new(0.0, 0.0)], &c).0[0], c.point(0));
    }

    #[test]
    fn gray_roundtrip_exhaustive() {
        for m in [4, 16, 64] {
            let c = Constellation::new(m).unwrap();
            let bits: Vec<bool> = (0..m).flat_map(|l| c.label_bits(l).collect::<Vec<_>>()).collect();
            let pts = qam_map(&bits, &c).unwrap();
            assert_eq!(qam_demap_hard(&pts, &c).1, bits);
        }
    }

    proptest! {
        #[test]
        fn gray_roundtrip_random(bits in proptest::collection::vec(any::<bool>(), 0..64).prop_map(|mut v| { v.truncate(v.len() / 8 * 8); v })) {
            for m in [4, 16, 256] {
                let c = Constellation::new(m).unwrap();
                let pts = qam_map(&bits, &c).unwrap();
                prop_assert_eq!(&qam_demap_hard(&pts, &c).1, &bits);
            }
        }

        #[test]
        fn ofdm_roundtrip_is_unitary(re in proptest::collection::vec(-2.0f64..2.0, 16), im in proptest::collection::vec(-2.0f64..2.0, 16), cp in 0usize..20) {
            let x: Vec<C64> = re.iter().zip(&im).map(|(&a, &b)| C64::new(a, b)).collect();
            let c = cfg(16, cp);
            let t = ofdm_modulate(&x, &c).unwrap();
            prop_assert_eq!(t.len(), 16 + cp);
            let back = ofdm_demodulate(&t, &c).unwrap();
            prop_assert!(relative_error(&back, &x) <= 1e-12);
            prop_assert!((norm_sqr(&t[cp..]) - norm_sqr(&x)).abs() <= 1e-10 * (1.0 + norm_sqr(&x)));
        }
    }

    #[test]
    fn first_subcarrier_gives_flat_symbol() {
        let n = 32;
        let mut x = vec![C64::new(0.0, 0.0); n];
        x[0] = C64::new(1.0, 0.0);
        let s = ofdm_modulate(&x, &cfg(n, 0)).unwrap();
        assert_eq!(s.len(), n);
        for v in s {
            assert!((v.norm() - 1.0 / (n as f64).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn prefix_copies_the_tail() {
        let x: Vec<C64> = (0..8).map(|k| C64::new(k as f64, 0.5)).collect();
        let t = ofdm_modulate(&x, &cfg(8, 3)).unwrap();
        assert_eq!(&t[..3], &t[8..11]);
    }

    #[test]
    fn demodulate_edge_cases() {
        let c = cfg(16, 4);
        let z = ofdm_demodulate(&vec![C64::new(0.0, 0.0); 20], &c).unwrap();
        assert!(z.iter().all(|v| *v == C64::new(0.0, 0.0)));

        let y = ofdm_demodulate(&vec![C64::new(1.0, 0.0); 20], &c).unwrap();
        assert!((y[0] - C64::new(4.0, 0.0)).norm() < 1e-12);
        assert!(y[1..].iter().all(|v| v.norm() < 1e-12));

        assert!(matches!(
            ofdm_demodulate(&[C64::new(0.0, 0.0); 3], &c),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            ofdm_modulate(&[C64::new(0.0, 0.0); 3], &c),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(SystemConfig::default().validate().is_ok());
        let bad = SystemConfig {
            n_rx: 1,
            ..SystemConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SystemConfig {
            qam_order: 8,
            ..SystemConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SystemConfig {
            symbols_per_frame: 1,
            ..SystemConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
