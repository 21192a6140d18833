//! Recurrent detectors: the reversing autoencoder (trained and untrained),
//! the state-pooling autoencoder, and the multistep forecaster.

use super::train::*;
use super::{DetectorSpec, FittedDetector, PoolKind};
use crate::dataio::{make_windows, SeriesMatrix, Window, WindowSpec};
use crate::numkit::{
    bind_linear, bind_lstm_cell, init_linear, init_lstm_cell, linear, lstm_sequence,
    lstm_sequence_from, Graph, LinearRefs, LossKind, LstmCellRefs, NodeRef, Optimizer, ParamStore,
};
use crate::scoring::nll;
use crate::{Error, Result};

pub(super) fn init_stack(
    store: &mut ParamStore,
    prefix: &str,
    layers: usize,
    d_in: usize,
    hidden: usize,
) -> Result<()> {
    for l in 0..layers {
        let input = if l == 0 { d_in } else { hidden };
        init_lstm_cell(store, &format!("{prefix}.{l}"), input, hidden)?;
    }
    Ok(())
}

pub(super) fn bind_stack(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    layers: usize,
    hidden: usize,
) -> Result<Vec<LstmCellRefs>> {
    (0..layers)
        .map(|l| bind_lstm_cell(g, store, &format!("{prefix}.{l}"), hidden))
        .collect()
}

/// The window values in reverse time order: the training target of the
/// reversing autoencoder.
pub fn reversed_target(window: &Window) -> Vec<f64> {
    let mut out = Vec::with_capacity(window.values.len());
    for t in (0..window.width).rev() {
        out.extend_from_slice(window.row(t));
    }
    out
}

fn reversed_target_constant(g: &mut Graph, batch: &[&Window]) -> Result<NodeRef> {
    let width = batch[0].width;
    let dims = batch[0].dims;
    let mut data = Vec::with_capacity(batch.len() * width * dims);
    for w in batch {
        data.extend_from_slice(&reversed_target(w));
    }
    g.constant_from(vec![batch.len(), width * dims], data)
}

// ── LSTM-AE / Untrained-LSTM-AE ─────────────────────────────────────

fn init_lstm_ae(store: &mut ParamStore, spec: &DetectorSpec, dims: usize) -> Result<()> {
    init_lstm_cell(store, "enc.0", dims, spec.hidden_size)?;
    init_lstm_cell(store, "dec.0", dims, spec.hidden_size)?;
    init_linear(store, "head", spec.hidden_size, dims)
}

struct LstmAeRefs {
    enc: LstmCellRefs,
    dec: LstmCellRefs,
    head: LinearRefs,
}

fn bind_lstm_ae(g: &mut Graph, store: &ParamStore, hidden: usize) -> Result<LstmAeRefs> {
    Ok(LstmAeRefs {
        enc: bind_lstm_cell(g, store, "enc.0", hidden)?,
        dec: bind_lstm_cell(g, store, "dec.0", hidden)?,
        head: bind_linear(g, store, "head")?,
    })
}

/// The encoder's final state seeds the decoder, which reconstructs the
/// input in reverse order. Teacher forcing during training, own predictions
/// at test time.
pub(super) fn train_lstm_ae(
    spec: &DetectorSpec,
    dims: usize,
    series: &[SeriesMatrix],
    untrained: bool,
) -> Result<(ParamStore, Vec<f64>)> {
    let mut store = ParamStore::new(spec.seed);
    init_lstm_ae(&mut store, spec, dims)?;
    if untrained {
        // the baseline keeps its random initialization: zero optimizer steps
        return Ok((store, Vec::new()));
    }
    let w = spec.window.width;
    let mut trainer = Trainer::new(spec, series, w)?;
    let mut opt = Optimizer::adam(spec.learning_rate);
    let losses = trainer.run(spec.epochs, |_, batch| {
        let b = batch.len();
        let mut g = Graph::new();
        let refs = bind_lstm_ae(&mut g, &store, spec.hidden_size)?;
        let steps = time_major_steps(&mut g, batch, w)?;
        let enc = lstm_sequence(&mut g, &steps, &[refs.enc], b)?;

        // teacher forcing: decoder input j is the previous reversed target
        let mut dec_inputs = Vec::with_capacity(w);
        dec_inputs.push(g.zeros(vec![b, dims]));
        for j in 0..w - 1 {
            dec_inputs.push(steps[w - 1 - j]);
        }
        let dec = lstm_sequence_from(&mut g, &dec_inputs, &[refs.dec], b, Some(&enc.last_state))?;
        let preds: Vec<NodeRef> = dec
            .hidden_steps
            .iter()
            .map(|&h| linear(&mut g, h, &refs.head))
            .collect::<Result<_>>()?;
        let pred_flat = g.concat_cols(&preds)?;
        let target = reversed_target_constant(&mut g, batch)?;
        let loss = g.loss(pred_flat, target, LossKind::Mse)?;
        let value = g.scalar(loss);
        step_with_clip(&mut g, loss, &mut store, &mut opt)?;
        Ok(value)
    })?;
    Ok((store, losses))
}

/// Autoregressive reconstruction error per window.
pub(super) fn score_lstm_ae(
    model: &FittedDetector,
    series: &SeriesMatrix,
) -> Result<Vec<(usize, f64)>> {
    let spec = &model.spec;
    let w = spec.window.width;
    let dims = series.dims();
    let windows = make_windows(series, &WindowSpec { width: w, stride: 1 })?;
    let mut out = Vec::with_capacity(windows.len());
    for batch in score_batches(&windows) {
        let b = batch.len();
        let mut g = Graph::new();
        let refs = bind_lstm_ae(&mut g, &model.params, spec.hidden_size)?;
        let steps = time_major_steps(&mut g, &batch, w)?;
        let enc = lstm_sequence(&mut g, &steps, &[refs.enc], b)?;
        let (mut h, mut c) = enc.last_state[0];
        let mut input = g.zeros(vec![b, dims]);
        let mut sq_err = vec![0.0; b];
        for j in 0..w {
            let (h2, c2) = crate::numkit::lstm_cell_step(&mut g, input, h, c, &refs.dec)?;
            h = h2;
            c = c2;
            let pred = linear(&mut g, h, &refs.head)?;
            let pred_data = g.data(pred);
            for (bi, acc) in sq_err.iter_mut().enumerate() {
                let target = batch[bi].row(w - 1 - j);
                for (p, t) in pred_data[bi * dims..(bi + 1) * dims].iter().zip(target) {
                    let d = p - t;
                    *acc += d * d;
                }
            }
            input = pred;
        }
        for (wdw, acc) in batch.iter().zip(sq_err) {
            out.push((wdw.end(), acc / (w * dims) as f64));
        }
    }
    Ok(out)
}

// ── LSTM-Max-AE ─────────────────────────────────────────────────────

struct LstmMaxRefs {
    enc: LstmCellRefs,
    dec: LstmCellRefs,
    head: LinearRefs,
}

fn bind_lstm_max(g: &mut Graph, store: &ParamStore, hidden: usize) -> Result<LstmMaxRefs> {
    Ok(LstmMaxRefs {
        enc: bind_lstm_cell(g, store, "enc.0", hidden)?,
        dec: bind_lstm_cell(g, store, "dec.0", hidden)?,
        head: bind_linear(g, store, "head")?,
    })
}

/// Pools the encoder's hidden states (max by default, mean via flag) into a
/// latent that feeds the decoder at every step; same-order reconstruction.
fn lstm_max_forward(
    g: &mut Graph,
    refs: &LstmMaxRefs,
    steps: &[NodeRef],
    pool: PoolKind,
    batch: usize,
) -> Result<NodeRef> {
    let w = steps.len();
    let enc = lstm_sequence(g, steps, &[refs.enc], batch)?;
    let latent = match pool {
        PoolKind::Max => {
            let mut acc = enc.hidden_steps[0];
            for &h in &enc.hidden_steps[1..] {
                acc = g.elem_max(acc, h)?;
            }
            acc
        }
        PoolKind::Mean => {
            let mut acc = enc.hidden_steps[0];
            for &h in &enc.hidden_steps[1..] {
                acc = g.add(acc, h)?;
            }
            g.affine(acc, 1.0 / w as f64, 0.0)
        }
    };
    let dec_inputs = vec![latent; w];
    let dec = lstm_sequence(g, &dec_inputs, &[refs.dec], batch)?;
    let preds: Vec<NodeRef> = dec
        .hidden_steps
        .iter()
        .map(|&h| linear(g, h, &refs.head))
        .collect::<Result<_>>()?;
    g.concat_cols(&preds)
}

pub(super) fn train_lstm_max_ae(
    spec: &DetectorSpec,
    dims: usize,
    series: &[SeriesMatrix],
) -> Result<(ParamStore, Vec<f64>)> {
    let mut store = ParamStore::new(spec.seed);
    init_lstm_cell(&mut store, "enc.0", dims, spec.hidden_size)?;
    init_lstm_cell(&mut store, "dec.0", spec.hidden_size, spec.hidden_size)?;
    init_linear(&mut store, "head", spec.hidden_size, dims)?;
    let w = spec.window.width;
    let mut trainer = Trainer::new(spec, series, w)?;
    let mut opt = Optimizer::adam(spec.learning_rate);
    let losses = trainer.run(spec.epochs, |_, batch| {
        let mut g = Graph::new();
        let refs = bind_lstm_max(&mut g, &store, spec.hidden_size)?;
        let steps = time_major_steps(&mut g, batch, w)?;
        let pred = lstm_max_forward(&mut g, &refs, &steps, spec.latent_pool, batch.len())?;
        let target = flat_windows(&mut g, batch)?;
        let loss = g.loss(pred, target, LossKind::Mse)?;
        let value = g.scalar(loss);
        step_with_clip(&mut g, loss, &mut store, &mut opt)?;
        Ok(value)
    })?;
    Ok((store, losses))
}

pub(super) fn score_lstm_max_ae(
    model: &FittedDetector,
    series: &SeriesMatrix,
) -> Result<Vec<(usize, f64)>> {
    let spec = &model.spec;
    let w = spec.window.width;
    let windows = make_windows(series, &WindowSpec { width: w, stride: 1 })?;
    let mut out = Vec::with_capacity(windows.len());
    for batch in score_batches(&windows) {
        let mut g = Graph::new();
        let refs = bind_lstm_max(&mut g, &model.params, spec.hidden_size)?;
        let steps = time_major_steps(&mut g, &batch, w)?;
        let pred = lstm_max_forward(&mut g, &refs, &steps, spec.latent_pool, batch.len())?;
        let target = flat_windows(&mut g, &batch)?;
        let errs = per_window_mse(g.data(pred), g.data(target), batch.len());
        for (wdw, e) in batch.iter().zip(errs) {
            out.push((wdw.end(), e));
        }
    }
    Ok(out)
}

// ── LSTM-P ──────────────────────────────────────────────────────────

/// Multilayer recurrent feature extractor with a fully-connected head
/// predicting the next k steps.
fn lstm_p_forward(
    g: &mut Graph,
    store: &ParamStore,
    spec: &DetectorSpec,
    batch: &[&Window],
) -> Result<NodeRef> {
    let w = spec.window.width;
    let cells = bind_stack(g, store, "lstm", spec.layers, spec.hidden_size)?;
    let head = bind_linear(g, store, "head")?;
    let steps = time_major_steps(g, batch, w)?;
    let seq = lstm_sequence(g, &steps, &cells, batch.len())?;
    let last = *seq.hidden_steps.last().expect("w >= 1");
    linear(g, last, &head)
}

fn forecast_targets(g: &mut Graph, batch: &[&Window], w: usize, k: usize) -> Result<NodeRef> {
    let dims = batch[0].dims;
    let mut data = Vec::with_capacity(batch.len() * k * dims);
    for win in batch {
        for t in w..w + k {
            data.extend_from_slice(win.row(t));
        }
    }
    g.constant_from(vec![batch.len(), k * dims], data)
}

pub(super) fn train_lstm_p(
    spec: &DetectorSpec,
    dims: usize,
    series: &[SeriesMatrix],
) -> Result<(ParamStore, Vec<f64>)> {
    let w = spec.window.width;
    let k = spec.horizon;
    let mut store = ParamStore::new(spec.seed);
    init_stack(&mut store, "lstm", spec.layers, dims, spec.hidden_size)?;
    init_linear(&mut store, "head", spec.hidden_size, k * dims)?;
    // pool windows wide enough to hold both the input and the horizon
    let mut trainer = Trainer::new(spec, series, w + k)?;
    let mut opt = Optimizer::adam(spec.learning_rate);
    let losses = trainer.run(spec.epochs, |_, batch| {
        let mut g = Graph::new();
        let pred = lstm_p_forward(&mut g, &store, spec, batch)?;
        let target = forecast_targets(&mut g, batch, w, k)?;
        let loss = g.loss(pred, target, LossKind::Mse)?;
        let value = g.scalar(loss);
        step_with_clip(&mut g, loss, &mut store, &mut opt)?;
        Ok(value)
    })?;
    Ok((store, losses))
}

/// Flattened k·D prediction-error vectors, one per window, assigned to the
/// last predicted step.
pub(super) fn lstm_p_errors(
    spec: &DetectorSpec,
    store: &ParamStore,
    series: &SeriesMatrix,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let w = spec.window.width;
    let k = spec.horizon;
    let dims = series.dims();
    let windows = make_windows(series, &WindowSpec { width: w + k, stride: 1 })?;
    let mut out = Vec::with_capacity(windows.len());
    for batch in score_batches(&windows) {
        let mut g = Graph::new();
        let pred = lstm_p_forward(&mut g, store, spec, &batch)?;
        let target = forecast_targets(&mut g, &batch, w, k)?;
        let p = g.data(pred);
        let t = g.data(target);
        let span = k * dims;
        for (bi, win) in batch.iter().enumerate() {
            let err: Vec<f64> = (0..span)
                .map(|j| p[bi * span + j] - t[bi * span + j])
                .collect();
            out.push((win.start + w + k - 1, err));
        }
    }
    Ok(out)
}

/// Negative log-likelihood of the error vector under the validation-fitted
/// Gaussian.
pub(super) fn score_lstm_p(
    model: &FittedDetector,
    series: &SeriesMatrix,
) -> Result<Vec<(usize, f64)>> {
    let gaussian = model
        .calibration
        .as_ref()
        .ok_or_else(|| Error::contract("lstm_p model is missing its Gaussian calibration"))?;
    lstm_p_errors(&model.spec, &model.params, series)?
        .into_iter()
        .map(|(t, e)| Ok((t, nll(gaussian, &e)?)))
        .collect()
}
