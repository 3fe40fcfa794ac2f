//! From-scratch gated recurrent unit for next-frame forecasting.
//!
//! The cell keeps a hidden state `h_t` updated from each incoming
//! feature vector `q_t` through a reset gate `r`, an update gate `z`
//! and a candidate state:
//!
//! ```text
//! r_t = σ(q_t W_r + h_{t−1} U_r)
//! z_t = σ(q_t W_z + h_{t−1} U_z)
//! g_t = tanh(q_t W_g + (r_t ⊙ h_{t−1}) U_g)
//! h_t = z_t ⊙ h_{t−1} + (1 − z_t) ⊙ g_t
//! ```
//!
//! A bias-free linear readout `h_t W_o` predicts the next feature
//! vector. Training is plain full-batch gradient descent on the summed
//! half-squared next-step error, with exact gradients obtained by
//! reverse-mode accumulation through the unrolled recurrence and a
//! global L2 clip as the only safeguard.
//!
//! Inputs are min-max normalized per feature over the training window;
//! a degenerate feature (max = min) maps to the constant ½ and restores
//! to its original value.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// The seven weight matrices of the recurrent cell.
///
/// Input-side matrices are stored `input_dim × hidden_dim`, recurrent
/// matrices `hidden_dim × hidden_dim`, and the readout
/// `hidden_dim × input_dim`; vectors multiply from the left.
#[derive(Debug, Clone, PartialEq)]
pub struct GruModel {
    pub w_reset: Array2<f64>,
    pub u_reset: Array2<f64>,
    pub w_update: Array2<f64>,
    pub u_update: Array2<f64>,
    pub w_cand: Array2<f64>,
    pub u_cand: Array2<f64>,
    pub w_out: Array2<f64>,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
}

/// Everything the forward sweep produced, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Hidden states `h_1 .. h_T`.
    pub hidden: Vec<Array1<f64>>,
    /// Per-step predictions; entry `t` estimates the input at `t+1`.
    pub predictions: Vec<Array1<f64>>,
    pub reset: Vec<Array1<f64>>,
    pub update: Vec<Array1<f64>>,
    pub candidate: Vec<Array1<f64>>,
}

/// Gradients of the loss with respect to every weight matrix.
#[derive(Debug, Clone)]
pub struct GruGradients {
    pub w_reset: Array2<f64>,
    pub u_reset: Array2<f64>,
    pub w_update: Array2<f64>,
    pub u_update: Array2<f64>,
    pub w_cand: Array2<f64>,
    pub u_cand: Array2<f64>,
    pub w_out: Array2<f64>,
}

impl GruGradients {
    fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w_reset: Array2::zeros((input_dim, hidden_dim)),
            u_reset: Array2::zeros((hidden_dim, hidden_dim)),
            w_update: Array2::zeros((input_dim, hidden_dim)),
            u_update: Array2::zeros((hidden_dim, hidden_dim)),
            w_cand: Array2::zeros((input_dim, hidden_dim)),
            u_cand: Array2::zeros((hidden_dim, hidden_dim)),
            w_out: Array2::zeros((hidden_dim, input_dim)),
        }
    }

    fn for_each(&self, mut f: impl FnMut(&Array2<f64>)) {
        f(&self.w_reset);
        f(&self.u_reset);
        f(&self.w_update);
        f(&self.u_update);
        f(&self.w_cand);
        f(&self.u_cand);
        f(&self.w_out);
    }

    /// Global L2 norm over all seven matrices.
    pub fn l2_norm(&self) -> f64 {
        let mut sq = 0.0;
        self.for_each(|m| sq += m.iter().map(|v| v * v).sum::<f64>());
        sq.sqrt()
    }

    fn scale(&mut self, factor: f64) {
        for m in [
            &mut self.w_reset,
            &mut self.u_reset,
            &mut self.w_update,
            &mut self.u_update,
            &mut self.w_cand,
            &mut self.u_cand,
            &mut self.w_out,
        ] {
            m.mapv_inplace(|v| v * factor);
        }
    }
}

/// Gradient-descent settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Step size of the weight update.
    pub learning_rate: f64,
    /// Number of full-batch epochs.
    pub epochs: usize,
    /// Global L2 clip applied to the stacked gradient before each update.
    pub gradient_clip: f64,
    /// Seeds the weight initialisation of models built for this run.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, epochs: 100, gradient_clip: 5.0, seed: 0 }
    }
}

/// Per-feature min/max scaling computed over a training window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    /// `(min, max)` per feature.
    pub bounds: Vec<(f64, f64)>,
}

impl NormalizationSpec {
    /// Bounds from the rows of `series` (rows are time steps).
    pub fn fit(series: ArrayView2<f64>) -> Self {
        let bounds = (0..series.ncols())
            .map(|j| {
                let col = series.column(j);
                let min = col.iter().copied().fold(f64::INFINITY, f64::min);
                let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (min, max)
            })
            .collect();
        Self { bounds }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    /// Map a raw series into [0, 1] per feature; degenerate features
    /// become the constant ½.
    pub fn apply(&self, series: ArrayView2<f64>) -> Array2<f64> {
        let mut out = series.to_owned();
        for (j, &(min, max)) in self.bounds.iter().enumerate() {
            let mut col = out.column_mut(j);
            if max > min {
                col.mapv_inplace(|v| (v - min) / (max - min));
            } else {
                col.fill(0.5);
            }
        }
        out
    }

    /// Map a normalized vector back to raw scale; degenerate features
    /// restore to their constant.
    pub fn restore(&self, v: ArrayView1<f64>) -> Array1<f64> {
        Array1::from_iter(self.bounds.iter().zip(v.iter()).map(|(&(min, max), &x)| {
            if max > min {
                min + x * (max - min)
            } else {
                min
            }
        }))
    }
}

/// Summed half-squared error between aligned predictions and targets.
pub fn loss(predictions: &[Array1<f64>], targets: &[Array1<f64>]) -> f64 {
    assert_eq!(predictions.len(), targets.len());
    predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let d = p - t;
            0.5 * d.dot(&d)
        })
        .sum()
}

fn series_loss(pass: &ForwardPass, series: ArrayView2<f64>) -> f64 {
    let steps = series.nrows();
    (0..steps - 1)
        .map(|t| {
            let d = &pass.predictions[t] - &series.row(t + 1);
            0.5 * d.dot(&d)
        })
        .sum()
}

/// `dst += column ⊗ row`.
fn add_outer(dst: &mut Array2<f64>, column: &Array1<f64>, row: &Array1<f64>) {
    for (i, &c) in column.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let mut dst_row = dst.row_mut(i);
        for (j, &r) in row.iter().enumerate() {
            dst_row[j] += c * r;
        }
    }
}

impl GruModel {
    /// Fresh model with every entry drawn i.i.d. uniform on
    /// `[−1/√hidden_dim, 1/√hidden_dim)` from a seeded generator; the
    /// same seed always yields bit-identical weights.
    pub fn init(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        assert!(input_dim >= 1 && hidden_dim >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let mut draw = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
        };
        Self {
            w_reset: draw(input_dim, hidden_dim),
            u_reset: draw(hidden_dim, hidden_dim),
            w_update: draw(input_dim, hidden_dim),
            u_update: draw(hidden_dim, hidden_dim),
            w_cand: draw(input_dim, hidden_dim),
            u_cand: draw(hidden_dim, hidden_dim),
            w_out: draw(hidden_dim, input_dim),
            input_dim,
            hidden_dim,
            seed,
        }
    }

    /// One cell update: returns the new hidden state and the prediction
    /// of the next feature vector.
    pub fn step(&self, input: ArrayView1<f64>, h_prev: ArrayView1<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        if input.len() != self.input_dim {
            return Err(Error::ShapeMismatch { expected: self.input_dim, got: input.len() });
        }
        if h_prev.len() != self.hidden_dim {
            return Err(Error::ShapeMismatch { expected: self.hidden_dim, got: h_prev.len() });
        }
        let (h, _, _, _) = self.step_parts(input, h_prev);
        let pred = h.dot(&self.w_out);
        Ok((h, pred))
    }

    /// Cell update returning the gates as well (for backpropagation).
    fn step_parts(
        &self,
        input: ArrayView1<f64>,
        h_prev: ArrayView1<f64>,
    ) -> (Array1<f64>, Array1<f64>, Array1<f64>, Array1<f64>) {
        let reset = (input.dot(&self.w_reset) + h_prev.dot(&self.u_reset)).mapv(sigmoid);
        let update = (input.dot(&self.w_update) + h_prev.dot(&self.u_update)).mapv(sigmoid);
        let gated: Array1<f64> = &reset * &h_prev;
        let cand = (input.dot(&self.w_cand) + gated.dot(&self.u_cand)).mapv(f64::tanh);
        let h = Array1::from_shape_fn(self.hidden_dim, |j| {
            update[j] * h_prev[j] + (1.0 - update[j]) * cand[j]
        });
        (h, reset, update, cand)
    }

    /// Run the cell over a series (rows are time steps, `h_0 = 0`),
    /// collecting every state, gate and per-step prediction.
    pub fn forward(&self, series: ArrayView2<f64>) -> Result<ForwardPass> {
        let steps = series.nrows();
        if steps < 2 {
            return Err(Error::SeriesTooShort { len: steps });
        }
        if series.ncols() != self.input_dim {
            return Err(Error::ShapeMismatch { expected: self.input_dim, got: series.ncols() });
        }
        let mut pass = ForwardPass {
            hidden: Vec::with_capacity(steps),
            predictions: Vec::with_capacity(steps),
            reset: Vec::with_capacity(steps),
            update: Vec::with_capacity(steps),
            candidate: Vec::with_capacity(steps),
        };
        let mut h = Array1::zeros(self.hidden_dim);
        for t in 0..steps {
            let (h_new, reset, update, cand) = self.step_parts(series.row(t), h.view());
            pass.predictions.push(h_new.dot(&self.w_out));
            pass.reset.push(reset);
            pass.update.push(update);
            pass.candidate.push(cand);
            pass.hidden.push(h_new.clone());
            h = h_new;
        }
        Ok(pass)
    }

    /// Exact gradients of the summed next-step loss with respect to all
    /// seven matrices, by reverse-mode accumulation through the full
    /// unrolled recurrence (including the reset-gate coupling of the
    /// previous state into the candidate).
    pub fn backward(&self, series: ArrayView2<f64>, pass: &ForwardPass) -> GruGradients {
        let steps = series.nrows();
        let mut g = GruGradients::zeros(self.input_dim, self.hidden_dim);
        let zero_h = Array1::zeros(self.hidden_dim);
        // dE/dh_t flowing back from step t+1
        let mut dh_carry: Array1<f64> = Array1::zeros(self.hidden_dim);
        for t in (0..steps).rev() {
            let h_prev = if t > 0 { &pass.hidden[t - 1] } else { &zero_h };
            let input = series.row(t);
            // the last step's prediction has no target
            let mut dh = dh_carry;
            if t + 1 < steps {
                let err = &pass.predictions[t] - &series.row(t + 1);
                add_outer(&mut g.w_out, &pass.hidden[t], &err);
                dh = dh + self.w_out.dot(&err);
            }
            let update = &pass.update[t];
            let cand = &pass.candidate[t];
            let reset = &pass.reset[t];

            let d_cand: Array1<f64> =
                Array1::from_shape_fn(self.hidden_dim, |j| dh[j] * (1.0 - update[j]));
            let da_cand: Array1<f64> =
                Array1::from_shape_fn(self.hidden_dim, |j| d_cand[j] * (1.0 - cand[j] * cand[j]));
            let da_update: Array1<f64> = Array1::from_shape_fn(self.hidden_dim, |j| {
                dh[j] * (h_prev[j] - cand[j]) * update[j] * (1.0 - update[j])
            });
            // gradient reaching r_t ⊙ h_{t−1}
            let d_gated = self.u_cand.dot(&da_cand);
            let da_reset: Array1<f64> = Array1::from_shape_fn(self.hidden_dim, |j| {
                d_gated[j] * h_prev[j] * reset[j] * (1.0 - reset[j])
            });

            let input_owned = input.to_owned();
            add_outer(&mut g.w_cand, &input_owned, &da_cand);
            let gated: Array1<f64> = reset * h_prev;
            add_outer(&mut g.u_cand, &gated, &da_cand);
            add_outer(&mut g.w_update, &input_owned, &da_update);
            add_outer(&mut g.u_update, h_prev, &da_update);
            add_outer(&mut g.w_reset, &input_owned, &da_reset);
            add_outer(&mut g.u_reset, h_prev, &da_reset);

            // carry into h_{t−1}
            dh_carry = Array1::from_shape_fn(self.hidden_dim, |j| {
                dh[j] * update[j] + d_gated[j] * reset[j]
            });
            dh_carry = dh_carry + self.u_update.dot(&da_update) + self.u_reset.dot(&da_reset);
        }
        g
    }

    /// Full-batch gradient descent for `config.epochs` epochs over an
    /// already-normalized series. Returns the loss recorded at the
    /// start of every epoch; fails with `Diverged` if the loss ever
    /// stops being finite.
    pub fn train(&mut self, series: ArrayView2<f64>, config: &TrainConfig) -> Result<Vec<f64>> {
        assert!(config.learning_rate > 0.0 && config.epochs >= 1);
        let mut history = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            let pass = self.forward(series)?;
            let l = series_loss(&pass, series);
            if !l.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            history.push(l);
            let mut grads = self.backward(series, &pass);
            let norm = grads.l2_norm();
            if norm > config.gradient_clip {
                grads.scale(config.gradient_clip / norm);
            }
            let a = config.learning_rate;
            self.w_reset.scaled_add(-a, &grads.w_reset);
            self.u_reset.scaled_add(-a, &grads.u_reset);
            self.w_update.scaled_add(-a, &grads.w_update);
            self.u_update.scaled_add(-a, &grads.u_update);
            self.w_cand.scaled_add(-a, &grads.w_cand);
            self.u_cand.scaled_add(-a, &grads.u_cand);
            self.w_out.scaled_add(-a, &grads.w_out);
        }
        Ok(history)
    }

    /// Forecast the feature vector one step past the end of a raw
    /// (unnormalized) series: normalize, run the cell, take the final
    /// prediction and map it back to raw scale.
    pub fn predict_next(
        &self,
        raw_series: ArrayView2<f64>,
        norm: &NormalizationSpec,
    ) -> Result<Array1<f64>> {
        let normalized = norm.apply(raw_series);
        let pass = self.forward(normalized.view())?;
        let last = pass.predictions.last().expect("forward guarantees steps >= 2");
        Ok(norm.restore(last.view()))
    }
}

// ---------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"GRUF";
const CHECKPOINT_VERSION: u32 = 1;

/// Write model and normalization to a self-describing binary file:
/// magic, version, dims, seed, the per-feature bounds and the seven
/// matrices row-major as little-endian 64-bit floats. The round trip
/// is bit-exact.
pub fn save_checkpoint(model: &GruModel, norm: &NormalizationSpec, path: &Path) -> Result<()> {
    assert_eq!(norm.dim(), model.input_dim);
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.input_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(model.hidden_dim as u32).to_le_bytes());
    buf.extend_from_slice(&model.seed.to_le_bytes());
    for &(min, max) in &norm.bounds {
        buf.extend_from_slice(&min.to_le_bytes());
        buf.extend_from_slice(&max.to_le_bytes());
    }
    for m in [
        &model.w_reset,
        &model.u_reset,
        &model.w_update,
        &model.u_update,
        &model.w_cand,
        &model.u_cand,
        &model.w_out,
    ] {
        for v in m.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    off: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.off + n > self.bytes.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Format(format!("bad matrix shape: {e}")))
    }
}

/// Read a checkpoint produced by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(GruModel, NormalizationSpec)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, off: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a model checkpoint".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let input_dim = cur.u32()? as usize;
    let hidden_dim = cur.u32()? as usize;
    let seed = cur.u64()?;
    let mut bounds = Vec::with_capacity(input_dim);
    for _ in 0..input_dim {
        let min = cur.f64()?;
        let max = cur.f64()?;
        bounds.push((min, max));
    }
    let model = GruModel {
        w_reset: cur.matrix(input_dim, hidden_dim)?,
        u_reset: cur.matrix(hidden_dim, hidden_dim)?,
        w_update: cur.matrix(input_dim, hidden_dim)?,
        u_update: cur.matrix(hidden_dim, hidden_dim)?,
        w_cand: cur.matrix(input_dim, hidden_dim)?,
        u_cand: cur.matrix(hidden_dim, hidden_dim)?,
        w_out: cur.matrix(hidden_dim, input_dim)?,
        input_dim,
        hidden_dim,
        seed,
    };
    if cur.off != bytes.len() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    Ok((model, NormalizationSpec { bounds }))
}
