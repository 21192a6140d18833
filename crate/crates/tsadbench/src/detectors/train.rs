//! Shared training-loop machinery: window pools, batch sampling, epoch
//! accounting, divergence detection, gradient clipping.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::DetectorSpec;
use crate::dataio::{make_windows, SeriesMatrix, Window, WindowSpec};
use crate::numkit::{stream, Graph, NodeRef, Optimizer, ParamStore};
use crate::{Error, Result};

pub const GRAD_CLIP_NORM: f64 = 5.0;
pub const LOGVAR_CLAMP: f64 = 8.0;
pub const SCORE_BATCH: usize = 64;

/// Training window pool over all runs, with seeded batch sampling.
pub struct Trainer {
    pool: Vec<Window>,
    batch_size: usize,
    steps_per_epoch: usize,
    rng: ChaCha8Rng,
}

impl Trainer {
    /// Pools windows of `width` from all runs at the spec's training stride.
    pub fn new(spec: &DetectorSpec, series: &[SeriesMatrix], width: usize) -> Result<Self> {
        let mut pool = Vec::new();
        for s in series {
            if width > s.len() {
                return Err(Error::contract(format!(
                    "training run of length {} is shorter than the window span {width}",
                    s.len()
                )));
            }
            pool.extend(make_windows(
                s,
                &WindowSpec {
                    width,
                    stride: spec.window.stride,
                },
            )?);
        }
        let batch_size = spec.batch_size.min(pool.len());
        let steps_per_epoch = (pool.len() / batch_size).clamp(1, 16);
        Ok(Trainer {
            pool,
            batch_size,
            steps_per_epoch,
            rng: stream(spec.seed, "train.batches"),
        })
    }

    /// Runs `epochs` epochs of `step` over sampled batches; returns the mean
    /// step loss per epoch. A non-finite step loss aborts with a training
    /// error naming the epoch.
    pub fn run(
        &mut self,
        epochs: usize,
        mut step: impl FnMut(usize, &[&Window]) -> Result<f64>,
    ) -> Result<Vec<f64>> {
        let mut epoch_losses = Vec::with_capacity(epochs);
        let mut indices: Vec<usize> = (0..self.pool.len()).collect();
        for epoch in 0..epochs {
            for i in (1..indices.len()).rev() {
                let j = self.rng.gen_range(0..=i);
                indices.swap(i, j);
            }
            let mut total = 0.0;
            for s in 0..self.steps_per_epoch {
                let from = (s * self.batch_size) % self.pool.len();
                let batch: Vec<&Window> = (0..self.batch_size)
                    .map(|i| &self.pool[indices[(from + i) % self.pool.len()]])
                    .collect();
                let loss = step(epoch, &batch)?;
                if !loss.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        msg: format!("loss diverged to {loss}"),
                    });
                }
                total += loss;
            }
            epoch_losses.push(total / self.steps_per_epoch as f64);
        }
        Ok(epoch_losses)
    }
}

/// backward + global-norm clip + optimizer step.
pub fn step_with_clip(
    g: &mut Graph,
    loss: NodeRef,
    store: &mut ParamStore,
    opt: &mut Optimizer,
) -> Result<()> {
    g.backward(loss, store)?;
    store.clip_grad_norm(GRAD_CLIP_NORM);
    opt.step(store)
}

/// Window-major constant: blocks of `width` rows per window, [B·width, D].
pub fn window_major(g: &mut Graph, batch: &[&Window]) -> Result<NodeRef> {
    let width = batch[0].width;
    let dims = batch[0].dims;
    let mut data = Vec::with_capacity(batch.len() * width * dims);
    for w in batch {
        data.extend_from_slice(&w.values);
    }
    g.constant_from(vec![batch.len() * width, dims], data)
}

/// Flattened windows, [B, width·D].
pub fn flat_windows(g: &mut Graph, batch: &[&Window]) -> Result<NodeRef> {
    let width = batch[0].width;
    let dims = batch[0].dims;
    let mut data = Vec::with_capacity(batch.len() * width * dims);
    for w in batch {
        data.extend_from_slice(&w.values);
    }
    g.constant_from(vec![batch.len(), width * dims], data)
}

/// Time-major step constants: `take` nodes of [B, D], step t holding row t of
/// every window.
pub fn time_major_steps(g: &mut Graph, batch: &[&Window], take: usize) -> Result<Vec<NodeRef>> {
    let dims = batch[0].dims;
    let mut steps = Vec::with_capacity(take);
    for t in 0..take {
        let mut data = Vec::with_capacity(batch.len() * dims);
        for w in batch {
            data.extend_from_slice(w.row(t));
        }
        steps.push(g.constant_from(vec![batch.len(), dims], data)?);
    }
    Ok(steps)
}

/// Mean squared error per window block between two [B·w, D] buffers.
pub fn per_window_mse(a: &[f64], b: &[f64], blocks: usize) -> Vec<f64> {
    let per = a.len() / blocks;
    (0..blocks)
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..per {
                let d = a[i * per + j] - b[i * per + j];
                acc += d * d;
            }
            acc / per as f64
        })
        .collect()
}

/// Splits `windows` into scoring batches of at most SCORE_BATCH.
pub fn score_batches(windows: &[Window]) -> impl Iterator<Item = Vec<&Window>> {
    windows.chunks(SCORE_BATCH).map(|c| c.iter().collect())
}
