//! Detection baselines and exhaustive ML oracles.
//!
//! All equalizers return soft complex estimates; hard decisions are taken by
//! the receiver.

use crate::error::{Error, Result};
use crate::interference::MimoFreqChannel;
use crate::linalg::{CMatrix, CVector, C64, ZERO};
use crate::modem::Constellation;

/// Inputs shared by the frame equalizers. The noise variance is assumed known.
#[derive(Debug, Clone, Copy)]
pub struct EqualizerContext<'a> {
    pub channel: &'a MimoFreqChannel,
    pub constellation: &'a Constellation,
    pub noise_variance: f64,
}

impl<'a> EqualizerContext<'a> {
    pub fn new(channel: &'a MimoFreqChannel, constellation: &'a Constellation, noise_variance: f64) -> Result<Self> {
        if !(noise_variance >= 0.0) || !noise_variance.is_finite() {
            return Err(Error::Domain(format!(
                "noise variance {noise_variance} must be finite and >= 0"
            )));
        }
        Ok(Self {
            channel,
            constellation,
            noise_variance,
        })
    }

    fn check_rx(&self, y: &[C64]) -> Result<()> {
        let want = self.channel.n_rx() * self.channel.n_subcarriers();
        if y.len() != want {
            return Err(Error::shape(format!(
                "received symbol has length {}, expected {want}",
                y.len()
            )));
        }
        Ok(())
    }
}

/// Inverse with a conditioning guard: fails on singular LU, non-finite
/// entries, or a Frobenius condition number above `max_cond`.
fn checked_inverse(m: &CMatrix, max_cond: f64) -> Option<CMatrix> {
    let inv = m.clone().lu().try_inverse()?;
    let cond = m.norm() * inv.norm();
    (cond.is_finite() && cond <= max_cond).then_some(inv)
}

/// Per-subcarrier linear MMSE filters `(H_i^H H_i + sigma^2 I)^{-1} H_i^H`.
/// Ignores `Phi`.
#[derive(Debug, Clone)]
pub struct MmseEqualizer {
    n: usize,
    n_tx: usize,
    n_rx: usize,
    filters: Vec<CMatrix>,
}

impl MmseEqualizer {
    pub fn new(ctx: &EqualizerContext<'_>) -> Result<Self> {
        let ch = ctx.channel;
        let n_tx = ch.n_tx();
        let mut filters = Vec::with_capacity(ch.n_subcarriers());
        for i in 0..ch.n_subcarriers() {
            let h = ch.subcarrier_matrix(i);
            let hh = h.adjoint();
            let mut m = &hh * &h;
            for d in 0..n_tx {
                m[(d, d)] += C64::new(ctx.noise_variance, 0.0);
            }
            let inv = checked_inverse(&m, 1e14)
                .ok_or_else(|| Error::Numerical(format!("MMSE matrix is singular at subcarrier {i}")))?;
            filters.push(inv * hh);
        }
        Ok(Self {
            n: ch.n_subcarriers(),
            n_tx,
            n_rx: ch.n_rx(),
            filters,
        })
    }

    pub fn apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        let n = self.n;
        if y.len() != n * self.n_rx {
            return Err(Error::shape(format!(
                "received symbol has length {}, expected {}",
                y.len(),
                n * self.n_rx
            )));
        }
        let mut x = vec![ZERO; n * self.n_tx];
        for (i, w) in self.filters.iter().enumerate() {
            for m in 0..self.n_tx {
                x[m * n + i] = (0..self.n_rx).map(|r| w[(m, r)] * y[r * n + i]).sum();
            }
        }
        Ok(x)
    }
}

pub fn mmse_per_subcarrier(y: &[C64], ctx: &EqualizerContext<'_>) -> Result<Vec<C64>> {
    ctx.check_rx(y)?;
    MmseEqualizer::new(ctx)?.apply(y)
}

/// Joint zero forcing against `D = H - Phi B`: the right inverse
/// `D^H (D D^H)^{-1}` when `D` is square or wide, the left inverse
/// `(D^H D)^{-1} D^H` when it is tall. A ridge of `1e-12 trace/dim` is added
/// before inversion and its bias removed by one step of iterative refinement.
#[derive(Debug, Clone)]
pub struct ZfEqualizer {
    v: CMatrix,
}

impl ZfEqualizer {
    pub fn new(ctx: &EqualizerContext<'_>) -> Result<Self> {
        Self::from_d(&ctx.channel.d_matrix())
    }

    pub fn from_d(d: &CMatrix) -> Result<Self> {
        let dh = d.adjoint();
        let tall = d.nrows() > d.ncols();
        let mut gram = if tall { &dh * d } else { d * &dh };
        let dim = gram.nrows();
        let ridge = 1e-12 * gram.trace().re / dim as f64;
        for k in 0..dim {
            gram[(k, k)] += C64::new(ridge, 0.0);
        }
        let inv = checked_inverse(&gram, 1e17)
            .ok_or_else(|| Error::Numerical("D D^H is singular beyond the ridge tolerance".into()))?;
        let v = if tall { inv * dh } else { dh * inv };
        // V <- V + V (I - D V) (wide) or V + (I - V D) V (tall).
        let v = if tall {
            let mut e = -(&v * d);
            for k in 0..e.nrows() {
                e[(k, k)] += C64::new(1.0, 0.0);
            }
            &v + e * &v
        } else {
            let mut e = -(d * &v);
            for k in 0..e.nrows() {
                e[(k, k)] += C64::new(1.0, 0.0);
            }
            &v + &v * e
        };
        if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numerical("zero-forcing matrix is not finite".into()));
        }
        Ok(Self { v })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.v
    }

    pub fn apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        if y.len() != self.v.ncols() {
            return Err(Error::shape(format!(
                "received symbol has length {}, expected {}",
                y.len(),
                self.v.ncols()
            )));
        }
        Ok((&self.v * CVector::from_column_slice(y)).data.into())
    }
}

pub fn modified_zf(y: &[C64], ctx: &EqualizerContext<'_>) -> Result<Vec<C64>> {
    ctx.check_rx(y)?;
    ZfEqualizer::new(ctx)?.apply(y)
}

/// Default cap on the number of complex unknowns for exhaustive search.
pub const DEFAULT_ML_CAP: usize = 8;

/// Exhaustive ML result.
#[derive(Debug, Clone, PartialEq)]
pub struct MlSolution {
    /// Constellation index of each unknown.
    pub indices: Vec<usize>,
    pub symbols: Vec<C64>,
    /// `||R - A Z||^2` at the minimizer.
    pub residual: f64,
}

/// `argmin_Z ||R - A Z||^2` over every constellation vector.
///
/// Candidates are visited in lexicographic order of their index vectors (the
/// last unknown varies fastest) and only a strictly smaller residual replaces
/// the incumbent, so ties go to the first candidate in that order.
pub fn ml_exhaustive(r: &[C64], a: &CMatrix, c: &Constellation, cap: usize) -> Result<MlSolution> {
    let dim = a.ncols();
    let rows = a.nrows();
    if r.len() != rows {
        return Err(Error::shape(format!("R has length {}, A has {rows} rows", r.len())));
    }
    if dim > cap {
        return Err(Error::SearchTooLarge {
            dim,
            order: c.order(),
            candidates: (c.order() as f64).powi(dim as i32),
            cap,
        });
    }
    let points = c.points();
    let order = points.len();
    let mut digits = vec![0usize; dim];
    // resid = R - A Z for the current candidate (all indices 0).
    let mut resid: Vec<C64> = r.to_vec();
    for j in 0..dim {
        let p = points[0];
        for (ri, &aij) in resid.iter_mut().zip(a.column(j).iter()) {
            *ri -= aij * p;
        }
    }
    let energy = |v: &[C64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let mut best = digits.clone();
    let mut best_res = energy(&resid);
    if dim == 0 {
        return Ok(MlSolution {
            indices: vec![],
            symbols: vec![],
            residual: best_res,
        });
    }
    loop {
        // Advance the odometer, updating the residual per changed digit.
        let mut j = dim;
        loop {
            if j == 0 {
                // The running residual drifts over many updates; report the
                // winner's residual recomputed from scratch.
                let symbols: Vec<C64> = best.iter().map(|&k| points[k]).collect();
                let mut resid = r.to_vec();
                for (j, &s) in symbols.iter().enumerate() {
                    for (ri, &aij) in resid.iter_mut().zip(a.column(j).iter()) {
                        *ri -= aij * s;
                    }
                }
                return Ok(MlSolution {
                    symbols,
                    indices: best,
                    residual: energy(&resid),
                });
            }
            j -= 1;
            let old = digits[j];
            let new = if old + 1 == order { 0 } else { old + 1 };
            digits[j] = new;
            let delta = points[new] - points[old];
            for (ri, &aij) in resid.iter_mut().zip(a.column(j).iter()) {
                *ri -= aij * delta;
            }
            if new != 0 {
                break;
            }
        }
        let e = energy(&resid);
        if e < best_res {
            best_res = e;
            best.copy_from_slice(&digits);
        }
    }
}

/// Exhaustive ML over the windowed system `(R̃, A_cut)`.
pub fn reduced_ml(r_tilde: &[C64], a_cut: &CMatrix, c: &Constellation, cap: usize) -> Result<MlSolution> {
    ml_exhaustive(r_tilde, a_cut, c, cap)
}
