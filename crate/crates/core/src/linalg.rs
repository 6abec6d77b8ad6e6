//! Small dense complex helpers shared by the model builders and the equalizers.
//!
//! Matrices are `nalgebra` column-major `DMatrix<C64>`. The DFT here is the
//! unitary one (`1/sqrt(N)` in both directions), evaluated directly from a
//! twiddle table; every module in the crate uses this convention.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// `W^k = exp(-j 2 pi k / N)` for `k = 0..N`.
pub fn twiddles(n: usize) -> Vec<C64> {
    (0..n)
        .map(|k| C64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
        .collect()
}

/// Unitary forward DFT: `X[i] = N^{-1/2} sum_n x[n] W^{i n}`.
pub fn unitary_dft(x: &[C64]) -> Vec<C64> {
    dft_with(x, &twiddles(x.len()), false)
}

/// Unitary inverse DFT: `x[n] = N^{-1/2} sum_i X[i] W^{-i n}`.
pub fn unitary_idft(x: &[C64]) -> Vec<C64> {
    dft_with(x, &twiddles(x.len()), true)
}

pub(crate) fn dft_with(x: &[C64], tw: &[C64], inverse: bool) -> Vec<C64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let scale = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|i| {
            let mut acc = ZERO;
            for (m, &v) in x.iter().enumerate() {
                let w = tw[(i * m) % n];
                acc += v * if inverse { w.conj() } else { w };
            }
            acc * scale
        })
        .collect()
}

/// Unnormalized DFT of `h` zero-padded to length `n` (`sum_p h[p] W^{i p}`).
pub fn fft_unnormalized(h: &[C64], n: usize) -> Vec<C64> {
    let tw = twiddles(n);
    (0..n)
        .map(|i| {
            h.iter()
                .enumerate()
                .fold(ZERO, |acc, (p, &v)| acc + v * tw[(i * p) % n])
        })
        .collect()
}

pub fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `||a - b|| / ||b||`, with the convention that two zero vectors differ by 0.
pub fn relative_error(a: &[C64], b: &[C64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let base = norm_sqr(b).sqrt();
    if base == 0.0 {
        diff
    } else {
        diff / base
    }
}
