//! Layers, forward pass, loss and reverse-mode gradients.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::interference::WindowSpec;
use crate::linalg::{CMatrix, C64};
use crate::modem::Constellation;

use super::lift::{lift_matrix, lift_vector};

/// Third input block of every layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    /// `vec(A^T A)`, column-major.
    Gram,
    /// `A^T A z^{(l)}`, the product a gradient step on `||R - A z||^2` uses.
    GradientProduct,
}

impl FeatureMode {
    /// Layer input length for a lifted window of dimension `dim`.
    pub fn input_dim(self, dim: usize) -> usize {
        match self {
            FeatureMode::Gram => 2 * dim + dim * dim,
            FeatureMode::GradientProduct => 3 * dim,
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::Gram => "gram",
            FeatureMode::GradientProduct => "gradient-product",
        })
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gram" => Ok(FeatureMode::Gram),
            "gradient-product" => Ok(FeatureMode::GradientProduct),
            other => Err(Error::config(format!(
                "unknown feature mode '{other}' (expected gram or gradient-product)"
            ))),
        }
    }
}

/// Per-layer loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossWeighting {
    /// `log(l)`: the first layer's output gets weight 0.
    #[default]
    LogL,
    /// `log(l + 1)`.
    LogLPlusOne,
}

impl FromStr for LossWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log-l" => Ok(LossWeighting::LogL),
            "log-l-plus-one" => Ok(LossWeighting::LogLPlusOne),
            other => Err(Error::config(format!(
                "unknown loss weighting '{other}' (expected log-l or log-l-plus-one)"
            ))),
        }
    }
}

pub fn layer_weights(n_layers: usize, weighting: LossWeighting) -> Vec<f64> {
    (1..=n_layers)
        .map(|l| match weighting {
            LossWeighting::LogL => (l as f64).ln(),
            LossWeighting::LogLPlusOne => (l as f64 + 1.0).ln(),
        })
        .collect()
}

/// `P [-1 + relu(x + t)/|t| - relu(x - t)/|t|]`.
pub fn psi(x: f64, t: f64, p: f64) -> Result<f64> {
    if t == 0.0 {
        return Err(Error::Domain("activation threshold t must be non-zero".into()));
    }
    Ok(psi_unchecked(x, t.abs(), p))
}

/// Equal to the ramp form for `t > 0`; the clamp keeps saturated outputs
/// exactly at `+-P`.
#[inline]
fn psi_unchecked(x: f64, t: f64, p: f64) -> f64 {
    p * (x / t).clamp(-1.0, 1.0)
}

/// The linear region of `psi`, with kinks assigned their left limit.
#[inline]
fn psi_active(x: f64, t: f64) -> bool {
    x > -t && x <= t
}

/// Lifted inputs of one window: `A^T R̃` and the row-major Gram matrix `A^T A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub atr: Vec<f64>,
    pub gram: Vec<f64>,
}

impl Features {
    /// From the complex windowed system; uses `lift(A)^T lift(r) = lift(A^H r)`.
    pub fn from_system(a_cut: &CMatrix, r_tilde: &[C64]) -> Result<Self> {
        if a_cut.nrows() != r_tilde.len() {
            return Err(Error::shape(format!(
                "A_cut has {} rows but R̃ has length {}",
                a_cut.nrows(),
                r_tilde.len()
            )));
        }
        let ah = a_cut.adjoint();
        let atr = &ah * crate::linalg::CVector::from_column_slice(r_tilde);
        let gram = &ah * a_cut;
        Ok(Self::from_complex(atr.as_slice(), &gram))
    }

    /// From `A^H R̃` and `A^H A` computed in complex arithmetic.
    pub fn from_complex(ahr: &[C64], ah_a: &CMatrix) -> Self {
        let g = lift_matrix(ah_a);
        let dim = g.nrows();
        let mut gram = vec![0.0; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                gram[r * dim + c] = g[(r, c)];
            }
        }
        Self {
            atr: lift_vector(ahr).data.into(),
            gram,
        }
    }

    /// From an already lifted system.
    pub fn from_lifted(a: &nalgebra::DMatrix<f64>, r: &nalgebra::DVector<f64>) -> Result<Self> {
        if a.nrows() != r.len() {
            return Err(Error::shape(format!(
                "lifted A has {} rows, R has {}",
                a.nrows(),
                r.len()
            )));
        }
        let atr = a.transpose() * r;
        let g = a.transpose() * a;
        let dim = g.nrows();
        let gram = (0..dim * dim).map(|k| g[(k / dim, k % dim)]).collect();
        Ok(Self {
            atr: atr.data.into(),
            gram,
        })
    }

    pub fn dim(&self) -> usize {
        self.atr.len()
    }
}

/// The unfolded equalizer: `L` layers
/// `z^{(l+1)} = psi_{t_l}(W_l [A^T R̃; z^{(l)}; f_l] + b_l)` with `z^{(1)} = 0`,
/// `t_l = exp(tau_l)`.
///
/// Parameters live in one flat vector; layer `l` holds `W_l` (row-major),
/// then `b_l`, then `tau_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldedEqualizerModel {
    window: WindowSpec,
    n_tx: usize,
    qam_order: usize,
    p: f64,
    mode: FeatureMode,
    n_layers: usize,
    dim: usize,
    params: Vec<f64>,
}

/// Shape of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelShape {
    pub window: WindowSpec,
    pub n_tx: usize,
    pub n_layers: usize,
    pub mode: FeatureMode,
}

impl UnfoldedEqualizerModel {
    /// All weights zero, `t_l = 0.5 P`.
    pub fn zeros(shape: &ModelShape, c: &Constellation) -> Result<Self> {
        if shape.n_layers == 0 {
            return Err(Error::config("the network needs at least one layer"));
        }
        if shape.n_tx == 0 {
            return Err(Error::config("the network needs at least one transmit antenna"));
        }
        if !shape.window.wraps() {
            return Err(Error::config(
                "the unfolded equalizer needs a wrapping window (fixed input size)",
            ));
        }
        let dim = 2 * shape.window.dim(shape.n_tx);
        let mut model = Self {
            window: shape.window.clone(),
            n_tx: shape.n_tx,
            qam_order: c.order(),
            p: c.p_max(),
            mode: shape.mode,
            n_layers: shape.n_layers,
            dim,
            params: vec![],
        };
        model.params = vec![0.0; model.layer_stride() * shape.n_layers];
        let tau = (0.5 * model.p).ln();
        for l in 0..shape.n_layers {
            let off = model.tau_offset(l);
            model.params[off] = tau;
        }
        Ok(model)
    }

    /// Gaussian `W_l`, `b_l` with standard deviation `init_gain / sqrt(fan_in)`.
    pub fn random(shape: &ModelShape, c: &Constellation, init_gain: f64, seed: u64) -> Result<Self> {
        if !(init_gain >= 0.0) || !init_gain.is_finite() {
            return Err(Error::config(format!("init gain {init_gain} must be finite and >= 0")));
        }
        let mut model = Self::zeros(shape, c)?;
        let std = init_gain / (model.input_dim() as f64).sqrt();
        let normal = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for l in 0..model.n_layers {
            let start = l * model.layer_stride();
            let end = model.tau_offset(l);
            for v in &mut model.params[start..end] {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(model)
    }

    pub(crate) fn from_parts(shape: &ModelShape, qam_order: usize, params: Vec<f64>) -> Result<Self> {
        let c = Constellation::new(qam_order)?;
        let mut model = Self::zeros(shape, &c)?;
        if params.len() != model.params.len() {
            return Err(Error::shape(format!(
                "model has {} parameters, expected {}",
                params.len(),
                model.params.len()
            )));
        }
        model.params = params;
        Ok(model)
    }

    pub fn window(&self) -> &WindowSpec {
        &self.window
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn qam_order(&self) -> usize {
        self.qam_order
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    /// Lifted window dimension `2 d_z`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input_dim(&self) -> usize {
        self.mode.input_dim(self.dim)
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            window: self.window.clone(),
            n_tx: self.n_tx,
            n_layers: self.n_layers,
            mode: self.mode,
        }
    }

    pub fn layer_stride(&self) -> usize {
        self.dim * self.input_dim() + self.dim + 1
    }

    fn tau_offset(&self, l: usize) -> usize {
        (l + 1) * self.layer_stride() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn w(&self, l: usize) -> &[f64] {
        let s = l * self.layer_stride();
        &self.params[s..s + self.dim * self.input_dim()]
    }

    pub fn b(&self, l: usize) -> &[f64] {
        let s = l * self.layer_stride() + self.dim * self.input_dim();
        &self.params[s..s + self.dim]
    }

    pub fn tau(&self, l: usize) -> f64 {
        self.params[self.tau_offset(l)]
    }

    pub fn t(&self, l: usize) -> f64 {
        self.tau(l).exp()
    }

    /// Errors unless the model was built for this window, antenna count and
    /// constellation.
    pub fn ensure_matches(&self, window: &WindowSpec, n_tx: usize, c: &Constellation) -> Result<()> {
        if &self.window != window || self.n_tx != n_tx {
            return Err(Error::shape(format!(
                "model expects window {} with {} tx antennas, receiver uses window {} with {} tx antennas",
                self.window, self.n_tx, window, n_tx
            )));
        }
        if self.qam_order != c.order() {
            return Err(Error::shape(format!(
                "model was trained for {}-QAM, receiver uses {}-QAM",
                self.qam_order,
                c.order()
            )));
        }
        Ok(())
    }

    fn check_features(&self, f: &Features) -> Result<()> {
        if f.atr.len() != self.dim || f.gram.len() != self.dim * self.dim {
            return Err(Error::shape(format!(
                "features of dimension {} (gram {}) do not fit a model of dimension {}",
                f.atr.len(),
                f.gram.len(),
                self.dim
            )));
        }
        Ok(())
    }

    fn fill_input(&self, f: &Features, z: &[f64], x: &mut [f64]) {
        let d = self.dim;
        x[..d].copy_from_slice(&f.atr);
        x[d..2 * d].copy_from_slice(z);
        match self.mode {
            FeatureMode::GradientProduct => {
                for r in 0..d {
                    let row = &f.gram[r * d..(r + 1) * d];
                    x[2 * d + r] = row.iter().zip(z).map(|(g, v)| g * v).sum();
                }
            }
            FeatureMode::Gram => {
                for c in 0..d {
                    for r in 0..d {
                        x[2 * d + c * d + r] = f.gram[r * d + c];
                    }
                }
            }
        }
    }

    fn affine(&self, l: usize, x: &[f64], u: &mut [f64]) {
        let n_in = self.input_dim();
        let w = self.w(l);
        for (r, (ur, br)) in u.iter_mut().zip(self.b(l)).enumerate() {
            let row = &w[r * n_in..(r + 1) * n_in];
            *ur = br + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// One layer: `z^{(l+1)}` from `z^{(l)}`.
    pub fn layer_forward(&self, l: usize, z: &[f64], f: &Features) -> Result<Vec<f64>> {
        self.check_features(f)?;
        if z.len() != self.dim || l >= self.n_layers {
            return Err(Error::shape(format!(
                "layer {l} of {} with state length {} (expected {})",
                self.n_layers,
                z.len(),
                self.dim
            )));
        }
        let mut x = vec![0.0; self.input_dim()];
        let mut u = vec![0.0; self.dim];
        self.fill_input(f, z, &mut x);
        self.affine(l, &x, &mut u);
        let t = self.t(l);
        Ok(u.iter().map(|&v| psi_unchecked(v, t, self.p)).collect())
    }

    /// Outputs `z^{(2)} .. z^{(L+1)}` starting from `z^{(1)} = 0`.
    pub fn forward(&self, f: &Features) -> Result<Vec<Vec<f64>>> {
        self.check_features(f)?;
        let mut trace = Trace::new(self);
        self.forward_into(f, &mut trace);
        Ok(trace.outputs)
    }

    /// Final-layer output only.
    pub fn predict(&self, f: &Features) -> Result<Vec<f64>> {
        Ok(self.forward(f)?.pop().expect("at least one layer"))
    }

    fn forward_into(&self, f: &Features, tr: &mut Trace) {
        let zero = vec![0.0; self.dim];
        for l in 0..self.n_layers {
            let (before, after) = tr.outputs.split_at_mut(l);
            let z_in = if l == 0 { &zero } else { &before[l - 1] };
            self.fill_input(f, z_in, &mut tr.inputs[l]);
            self.affine(l, &tr.inputs[l], &mut tr.pre[l]);
            let t = self.t(l);
            for (o, &u) in after[0].iter_mut().zip(&tr.pre[l]) {
                *o = psi_unchecked(u, t, self.p);
            }
        }
    }

    /// Loss of one sample and its gradient, accumulated into `grad`
    /// (scaled by `scale`). Returns the unscaled loss.
    pub fn accumulate_gradient(
        &self,
        f: &Features,
        target: &[f64],
        weights: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_features(f)?;
        if target.len() != self.dim || weights.len() != self.n_layers || grad.len() != self.params.len() {
            return Err(Error::shape("target, weights or gradient buffer has the wrong length"));
        }
        let mut tr = Trace::new(self);
        Ok(self.backward_into(f, target, weights, scale, grad, &mut tr))
    }

    fn backward_into(
        &self,
        f: &Features,
        target: &[f64],
        weights: &[f64],
        scale: f64,
        grad: &mut [f64],
        tr: &mut Trace,
    ) -> f64 {
        self.forward_into(f, tr);
        let d = self.dim;
        let n_in = self.input_dim();
        let stride = self.layer_stride();
        let loss = loss(&tr.outputs, target, weights);

        // g_z = dL/dz^{(l+1)}, propagated from the last layer down.
        let mut g_z = vec![0.0; d];
        let mut g_u = vec![0.0; d];
        for l in (0..self.n_layers).rev() {
            let out = &tr.outputs[l];
            for k in 0..d {
                g_z[k] += 2.0 * weights[l] * (out[k] - target[k]);
            }
            let t = self.t(l);
            let mut g_t = 0.0;
            for k in 0..d {
                let u = tr.pre[l][k];
                if psi_active(u, t) {
                    g_u[k] = g_z[k] * self.p / t;
                    g_t -= g_z[k] * self.p * u / (t * t);
                } else {
                    g_u[k] = 0.0;
                }
            }
            let base = l * stride;
            let x = &tr.inputs[l];
            for r in 0..d {
                let gr = g_u[r] * scale;
                if gr != 0.0 {
                    let row = &mut grad[base + r * n_in..base + (r + 1) * n_in];
                    for (gw, &xv) in row.iter_mut().zip(x) {
                        *gw += gr * xv;
                    }
                }
                grad[base + d * n_in + r] += gr;
            }
            grad[base + stride - 1] += scale * g_t * t;

            if l == 0 {
                break;
            }
            // dL/dz^{(l)} through the z block and, if present, the G z block.
            let w = self.w(l);
            g_z.fill(0.0);
            for r in 0..d {
                let gr = g_u[r];
                if gr == 0.0 {
                    continue;
                }
                let row = &w[r * n_in..(r + 1) * n_in];
                for k in 0..d {
                    g_z[k] += gr * row[d + k];
                }
            }
            if self.mode == FeatureMode::GradientProduct {
                // g_{Gz} = W[:, 2d..3d]^T g_u, then g_z += G^T g_{Gz}.
                let mut g_gz = vec![0.0; d];
                for r in 0..d {
                    let gr = g_u[r];
                    if gr == 0.0 {
                        continue;
                    }
                    let row = &w[r * n_in..(r + 1) * n_in];
                    for k in 0..d {
                        g_gz[k] += gr * row[2 * d + k];
                    }
                }
                for (r, &gg) in g_gz.iter().enumerate() {
                    if gg == 0.0 {
                        continue;
                    }
                    let grow = &f.gram[r * d..(r + 1) * d];
                    for k in 0..d {
                        g_z[k] += gg * grow[k];
                    }
                }
            }
        }
        loss
    }
}

/// Weighted layer loss `sum_l w_l ||Z - z^{(l+1)}||^2`.
pub fn loss(outputs: &[Vec<f64>], target: &[f64], weights: &[f64]) -> f64 {
    outputs
        .iter()
        .zip(weights)
        .map(|(o, w)| w * o.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum()
}

/// Forward-pass storage reused across samples.
pub(crate) struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl Trace {
    pub(crate) fn new(m: &UnfoldedEqualizerModel) -> Self {
        Self {
            inputs: vec![vec![0.0; m.input_dim()]; m.n_layers],
            pre: vec![vec![0.0; m.dim]; m.n_layers],
            outputs: vec![vec![0.0; m.dim]; m.n_layers],
        }
    }
}

impl UnfoldedEqualizerModel {
    pub(crate) fn sample_gradient(
        &self,
        f: &Features,
        target: &[f64],
        weights: &[f64],
        scale: f64,
        grad: &mut [f64],
        tr: &mut Trace,
    ) -> f64 {
        self.backward_into(f, target, weights, scale, grad, tr)
    }
}
