//! Convolutional detectors: the seq2seq autoencoder, the pooling forecaster,
//! the seq2seq forecaster, and the adversarial reconstructor.

use super::train::*;
use super::{DetectorSpec, FittedDetector};
use crate::dataio::{make_windows, SeriesMatrix, Window, WindowSpec};
use crate::numkit::{
    bind_linear, init_linear, linear, Graph, LinearRefs, LossKind, NodeRef, Optimizer, ParamStore,
};
use crate::scoring::nll;
use crate::{Error, Result};

const KERNEL_WIDTH: usize = 3;

#[derive(Clone, Copy)]
struct ConvRefs {
    kernel: NodeRef,
    bias: NodeRef,
}

fn init_conv(store: &mut ParamStore, prefix: &str, width: usize, cin: usize, cout: usize) -> Result<()> {
    store.insert_uniform(&format!("{prefix}.k"), vec![width, cin, cout], width * cin)?;
    store.insert_const(&format!("{prefix}.b"), vec![cout], 0.0)
}

fn bind_conv(g: &mut Graph, store: &ParamStore, prefix: &str) -> Result<ConvRefs> {
    Ok(ConvRefs {
        kernel: g.param(store, &format!("{prefix}.k"))?,
        bias: g.param(store, &format!("{prefix}.b"))?,
    })
}

fn conv_block(
    g: &mut Graph,
    x: NodeRef,
    refs: ConvRefs,
    dilation: usize,
    batch: usize,
    relu: bool,
) -> Result<NodeRef> {
    let y = g.causal_conv1d(x, refs.kernel, dilation, batch)?;
    let y = g.add_bias(y, refs.bias)?;
    Ok(if relu { g.relu(y) } else { y })
}

/// Anticausal block for the transposed decoder: reverse, convolve, reverse.
fn conv_block_anticausal(
    g: &mut Graph,
    x: NodeRef,
    refs: ConvRefs,
    dilation: usize,
    batch: usize,
) -> Result<NodeRef> {
    let rev = g.reverse_time(x, batch)?;
    let y = conv_block(g, rev, refs, dilation, batch, true)?;
    g.reverse_time(y, batch)
}

// ── TCN-S2S-AE (and the BeatGAN generator) ──────────────────────────

struct TcnAeRefs {
    enc: Vec<ConvRefs>,
    bottleneck: ConvRefs,
    dec: Vec<ConvRefs>,
    head: ConvRefs,
}

fn bottleneck_channels(spec: &DetectorSpec, dims: usize) -> usize {
    spec.latent_dim.min((dims - 1).max(1))
}

fn init_tcn_ae(store: &mut ParamStore, prefix: &str, spec: &DetectorSpec, dims: usize) -> Result<()> {
    let c = spec.hidden_size;
    let cb = bottleneck_channels(spec, dims);
    for l in 0..spec.layers {
        let cin = if l == 0 { dims } else { c };
        init_conv(store, &format!("{prefix}.enc{l}"), KERNEL_WIDTH, cin, c)?;
    }
    init_conv(store, &format!("{prefix}.code"), 1, c, cb)?;
    for l in 0..spec.layers {
        let cin = if l == 0 { cb } else { c };
        init_conv(store, &format!("{prefix}.dec{l}"), KERNEL_WIDTH, cin, c)?;
    }
    init_conv(store, &format!("{prefix}.head"), 1, c, dims)
}

fn bind_tcn_ae(g: &mut Graph, store: &ParamStore, prefix: &str, layers: usize) -> Result<TcnAeRefs> {
    Ok(TcnAeRefs {
        enc: (0..layers)
            .map(|l| bind_conv(g, store, &format!("{prefix}.enc{l}")))
            .collect::<Result<_>>()?,
        bottleneck: bind_conv(g, store, &format!("{prefix}.code"))?,
        dec: (0..layers)
            .map(|l| bind_conv(g, store, &format!("{prefix}.dec{l}")))
            .collect::<Result<_>>()?,
        head: bind_conv(g, store, &format!("{prefix}.head"))?,
    })
}

/// Dilated causal encoder, channel bottleneck, anticausal (transposed)
/// decoder, linear projection back to the input width.
fn tcn_ae_forward(g: &mut Graph, x: NodeRef, refs: &TcnAeRefs, batch: usize) -> Result<NodeRef> {
    let layers = refs.enc.len();
    let mut h = x;
    for (l, r) in refs.enc.iter().enumerate() {
        h = conv_block(g, h, *r, 1 << l, batch, true)?;
    }
    h = conv_block(g, h, refs.bottleneck, 1, batch, false)?;
    for (l, r) in refs.dec.iter().enumerate() {
        h = conv_block_anticausal(g, h, *r, 1 << (layers - 1 - l), batch)?;
    }
    conv_block(g, h, refs.head, 1, batch, false)
}

pub(super) fn train_tcn_s2s_ae(
    spec: &DetectorSpec,
    dims: usize,
    series: &[SeriesMatrix],
) -> Result<(ParamStore, Vec<f64>)> {
    let mut store = ParamStore::new(spec.seed);
    init_tcn_ae(&mut store, "ae", spec, dims)?;
    let mut trainer = Trainer::new(spec, series, spec.window.width)?;
    let mut opt = Optimizer::adam(spec.learning_rate);
    let losses = trainer.run(spec.epochs, |_, batch| {
        let mut g = Graph::new();
        let x = window_major(&mut g, batch)?;
        let refs = bind_tcn_ae(&mut g, &store, "ae", spec.layers)?;
        let recon = tcn_ae_forward(&mut g, x, &refs, batch.len())?;
        let loss = g.loss(recon, x, LossKind::LogCosh)?;
        let value = g.scalar(loss);
        step_with_clip(&mut g, loss, &mut store, &mut opt)?;
        Ok(value)
    })?;
    Ok((store, losses))
}

/// Reconstruction-error vector of the window's last row, one per window.
pub(super) fn tcn_s2s_ae_errors(
    spec: &DetectorSpec,
    store: &ParamStore,
    series: &SeriesMatrix,
) -> Result<Vec<Vec<f64>>> {
    let w = spec.window.width;
    let dims = series.dims();
    let windows = make_windows(series, &WindowSpec { width: w, stride: 1 })?;
    let mut out = Vec::with_capacity(windows.len());
    for batch in score_batches(&windows) {
        let mut g = Graph::new();
        let x = window_major(&mut g, &batch)?;
        let refs = bind_tcn_ae(&mut g, store, "ae", spec.layers)?;
        let recon = tcn_ae_forward(&mut g, x, &refs, batch.len())?;
        let r = g.data(recon);
        let xd = g.data(x);
        for bi in 0..batch.len() {
            let last = (bi * w + w - 1) * dims;
            let err: Vec<f64> = (0..dims)
                .map(|d| xd[last + d] - r[last + d])
                .collect();
            out.push(err);
        }
    }
    Ok(out)
}

pub(super) fn score_tcn_s2s_ae(
    model: &FittedDetector,
    series: &SeriesMatrix,
) -> Result<Vec<(usize, f64)>> {
    let gaussian = model
        .calibration
        .as_ref()
        .ok_or_else(|| Error::contract("tcn_s2s_ae model is missing its Gaussian calibration"))?;
    let w = model.spec.window.width;
    let errors = tcn_s2s_ae_errors(&model.spec, &model.params, series)?;
    errors
        .into_iter()
        .enumerate()
        .map(|(i, e)| Ok((i + w - 1, nll(gaussian, &e)?)))
        .collect()
}

// ── TCN-P (pooling forecaster) ──────────────────────────────────────

struct TcnPRefs {
    c1: ConvRefs,
    c2: ConvRefs,
    h1: LinearRefs,
    h2: LinearRefs,
}

fn bind_tcn_p(g: &mut Graph, store: &ParamStore) -> Result<TcnPRefs> {
    Ok(TcnPRefs {
        c1: bind_conv(g, store, "c1")?,
        c2: bind_conv(g, store, "c2")?,
        h1: bind_linear(g, store, "h1")?,
        h2: bind_linear(g, store, "h2")?,
    })
}

/// Two conv + max-pool stages, then a fully-connected head predicting the
/// next k steps from the input window.
fn tcn_p_forward(
    g: &mut Graph,
    store: &ParamStore,
    spec: &DetectorSpec,
    batch: &[&Window],
    dims: usize,
) -> Result<NodeRef> {
    let w = spec.window.width;
    let b = batch.len();
    let refs = bind_tcn_p(g, store)?;
    let input: Vec<&Window> = batch.to_vec();
    let mut data = Vec::with_capacity(b * w * dims);
    for win in &input {
        data.extend_from_slice(&win.values[..w * dims]);
    }
    let x = g.constant_from(vec![b * w, dims], data)?;
    let mut h = conv_block(g, x, refs.c1, 1, b, true)?;
    h = g.max_pool1d(h, 2, b)?;
    h = conv_block(g, h, refs.c2, 1, b, true)?;
    h = g.max_pool1d(h, 2, b)?;
    let flat = g.reshape(h, vec![b, (w / 4) * spec.hidden_size])?;
    let h1 = linear(g, flat, &refs.h1)?;
    let h1 = g.relu(h1);
    linear(g, h1, &refs.h2)
}

pub(super) fn train_tcn_p(
    spec: &DetectorSpec,
    dims: usize,
    series: &[SeriesMatrix],
) -> Result<(ParamStore, Vec<f64>)> {
    let w = spec.window.width;
    let k = spec.horizon;
    let c = spec.hidden_size;
    let mut store = ParamStore::new(spec.seed);
    init_conv(&mut store, "c1", KERNEL_WIDTH, dims, c)?;
    init_conv(&mut store, "c2", KERNEL_WIDTH, c, c)?;
    init_linear(&mut store, "h1", (w / 4) * c, spec.hidden_size)?;
    init_linear(&mut store, "h2", spec.hidden_size, k * dims)?;
    let mut trainer = Trainer::new(spec, series, w + k)?;
    let mut opt = Optimizer::adam(spec.learning_rate);
    let losses = trainer.run(spec.epochs, |_, batch| {
        let mut g = Graph::new();
        let pred = tcn_p_forward(&mut g, &store, spec, batch, dims)?;
        let mut target_data = Vec::with_capacity(batch.len() * k * dims);
        for win in batch {
            for t in w..w + k {
                target_data.extend_from_slice(win.row(t));
            }
        }
        let target = g.constant_from(vec![batch.len(), k * dims], target_data)?;
        // trained with the absolute error; squared error is used for scoring
        let loss = g.loss(pred, target, LossKind::Mae)?;
        let value = g.scalar(loss);
        step_with_clip(&mut g, loss, &mut store, &mut opt)?;
        Ok(value)
    })?;
    Ok((store, losses))
}

/// One squared-error score per predicted step; overlapping predictions for
/// the same step are averaged downstream.
pub(super) fn score_tcn_p(
    model: &FittedDetector,
    series: &SeriesMatrix,
) -> Result<Vec<(usize, f64)>> {
    let spec = &model.spec;
    let w = spec.window.width;
    let k = spec.horizon;
    let dims = series.dims();
    let windows = make_windows(series, &WindowSpec { width: w + k, stride: 1 })?;
    let mut out = Vec::with_capacity(windows.len() * k);
    for batch in score_batches(&windows) {
        let mut g = Graph::new();
        let pred = tcn_p_forward(&mut g, &model.params, spec, &batch, dims)?;
        let p = g.data(pred);
        for (bi, win) in batch.iter().enumerate() {
            for j in 0..k {
                let actual = win.row(w + j);
                let mut mse = 0.0;
                for d in 0..dims {
                    let diff = p[bi * k * dims + j * dims + d] - actual[d];
                    mse += diff * diff;
                }
                out.push((win.start + w + j, mse / dims as f64));
            }
        }
    }
    Ok(out)
}

// ── TCN-S2S-P (seq2seq forecaster) ──────────────────────────────────

fn bind_s2s_p(g: &mut Graph, store: &ParamStore, layers: usize) -> Result<(Vec<ConvRefs>, ConvRefs)> {
    let blocks = (0..layers)
        .map(|l| bind_conv(g, store, &format!("b{l}")))
        .collect::<Result<Vec<_>>>()?;
    let head = bind_conv(g, store, "head")?;
    Ok((blocks, head))
}

/// Dilated causal stack; the last three layer outputs are concatenated along
/// the feature dimension into a width-1 convolution with D filters. Output
/// row t predicts input row t+1.
fn tcn_s2s_p_forward(
    g: &mut Graph,
    store: &ParamStore,
    spec: &DetectorSpec,
    batch: &[&Window],
    dims: usize,
) -> Result<NodeRef> {
    let w = spec.window.width;
    let b = batch.len();
    let (blocks, head) = bind_s2s_p(g, store, spec.layers)?;
    let mut data = Vec::with_capacity(b * w * dims);
    for win in batch {
        data.extend_from_slice(&win.values[..w * dims]);
    }
    let x = g.constant_from(vec![b * w, dims], data)?;
    let mut h = x;
    let mut outputs = Vec::with_capacity(spec.layers);
    for (l, r) in blocks.iter().enumerate() {
        h = conv_block(g, h, *r, 1 << l, b, true)?;
        outputs.push(h);
    }
    let last3 = &outputs[outputs.len() - 3..];
    let cat = g.concat_cols(last3)?;
    conv_block(g, cat, head, 1, b, false)
}

pub(super) fn train_tcn_s2s_p(
    spec: &DetectorSpec,
    dims: usize,
    series: &[SeriesMatrix],
) -> Result<(ParamStore, Vec<f64>)> {
    let w = spec.window.width;
    let c = spec.hidden_size;
    let mut store = ParamStore::new(spec.seed);
    for l in 0..spec.layers {
        let cin = if l == 0 { dims } else { c };
        init_conv(&mut store, &format!("b{l}"), KERNEL_WIDTH, cin, c)?;
    }
    init_conv(&mut store, "head", 1, 3 * c, dims)?;
    // one step of look-ahead per window for the shifted target
    let mut trainer = Trainer::new(spec, series, w + 1)?;
    let mut opt = Optimizer::adam(spec.learning_rate);
    let losses = trainer.run(spec.epochs, |_, batch| {
        let mut g = Graph::new();
        let pred = tcn_s2s_p_forward(&mut g, &store, spec, batch, dims)?;
        let mut target_data = Vec::with_capacity(batch.len() * w * dims);
        for win in batch {
            target_data.extend_from_slice(&win.values[dims..(w + 1) * dims]);
        }
        let target = g.constant_from(vec![batch.len() * w, dims], target_data)?;
        let loss = g.loss(pred, target, LossKind::Mse)?;
        let value = g.scalar(loss);
        step_with_clip(&mut g, loss, &mut store, &mut opt)?;
        Ok(value)
    })?;
    Ok((store, losses))
}

/// Prediction-error vector of the last point only (the online-usable one),
/// one per window.
pub(super) fn tcn_s2s_p_errors(
    spec: &DetectorSpec,
    store: &ParamStore,
    series: &SeriesMatrix,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let w = spec.window.width;
    let dims = series.dims();
    let windows = make_windows(series, &WindowSpec { width: w + 1, stride: 1 })?;
    let mut out = Vec::with_capacity(windows.len());
    for batch in score_batches(&windows) {
        let mut g = Graph::new();
        let pred = tcn_s2s_p_forward(&mut g, store, spec, &batch, dims)?;
        let p = g.data(pred);
        for (bi, win) in batch.iter().enumerate() {
            let actual = win.row(w);
            let last = (bi * w + w - 1) * dims;
            let err: Vec<f64> = (0..dims).map(|d| actual[d] - p[last + d]).collect();
            out.push((win.start + w, err));
        }
    }
    Ok(out)
}

pub(super) fn score_tcn_s2s_p(
    model: &FittedDetector,
    series: &SeriesMatrix,
) -> Result<Vec<(usize, f64)>> {
    let gaussian = model
        .calibration
        .as_ref()
        .ok_or_else(|| Error::contract("tcn_s2s_p model is missing its Gaussian calibration"))?;
    tcn_s2s_p_errors(&model.spec, &model.params, series)?
        .into_iter()
        .map(|(t, e)| Ok((t, nll(gaussian, &e)?)))
        .collect()
}

// ── BeatGAN ─────────────────────────────────────────────────────────

struct DiscRefs {
    c1: ConvRefs,
    c2: ConvRefs,
    head: LinearRefs,
}

fn bind_disc(g: &mut Graph, store: &ParamStore) -> Result<DiscRefs> {
    Ok(DiscRefs {
        c1: bind_conv(g, store, "disc.c1")?,
        c2: bind_conv(g, store, "disc.c2")?,
        head: bind_linear(g, store, "disc.head")?,
    })
}

/// Feature maps feeding the discriminator head (its second-to-last layer),
/// then the pooled logit.
fn disc_forward(
    g: &mut Graph,
    x: NodeRef,
    refs: &DiscRefs,
    batch: usize,
) -> Result<(NodeRef, NodeRef)> {
    let h = conv_block(g, x, refs.c1, 1, batch, true)?;
    let features = conv_block(g, h, refs.c2, 2, batch, true)?;
    let pooled = g.mean_blocks(features, batch)?;
    let logit = linear(g, pooled, &refs.head)?;
    Ok((features, logit))
}

pub(super) fn train_beatgan(
    spec: &DetectorSpec,
    dims: usize,
    series: &[SeriesMatrix],
) -> Result<(ParamStore, Vec<f64>)> {
    let c = spec.hidden_size;
    let mut store = ParamStore::new(spec.seed);
    init_tcn_ae(&mut store, "gen", spec, dims)?;
    init_conv(&mut store, "disc.c1", KERNEL_WIDTH, dims, c)?;
    init_conv(&mut store, "disc.c2", KERNEL_WIDTH, c, c)?;
    init_linear(&mut store, "disc.head", c, 1)?;

    let mut trainer = Trainer::new(spec, series, spec.window.width)?;
    let mut opt_g = Optimizer::adam(spec.learning_rate).with_prefixes(&["gen."]);
    let mut opt_d = Optimizer::adam(spec.learning_rate).with_prefixes(&["disc."]);

    let losses = trainer.run(spec.epochs, |_, batch| {
        let b = batch.len();

        // discriminator step on real windows vs detached reconstructions
        {
            let mut g = Graph::new();
            let x = window_major(&mut g, batch)?;
            let gen = bind_tcn_ae(&mut g, &store, "gen", spec.layers)?;
            let recon = tcn_ae_forward(&mut g, x, &gen, b)?;
            let recon_const = {
                let frozen = g.value(recon);
                g.constant(&frozen)
            };
            let disc = bind_disc(&mut g, &store)?;
            let (_, real_logit) = disc_forward(&mut g, x, &disc, b)?;
            let (_, fake_logit) = disc_forward(&mut g, recon_const, &disc, b)?;
            let neg_real = g.affine(real_logit, -1.0, 0.0);
            let sp_real = g.softplus(neg_real);
            let sp_fake = g.softplus(fake_logit);
            let l_real = g.mean_all(sp_real);
            let l_fake = g.mean_all(sp_fake);
            let loss = g.add(l_real, l_fake)?;
            step_with_clip(&mut g, loss, &mut store, &mut opt_d)?;
        }

        // generator step: reconstruction plus feature matching through the
        // discriminator's second-to-last layer
        let value;
        {
            let mut g = Graph::new();
            let x = window_major(&mut g, batch)?;
            let gen = bind_tcn_ae(&mut g, &store, "gen", spec.layers)?;
            let recon = tcn_ae_forward(&mut g, x, &gen, b)?;
            let disc = bind_disc(&mut g, &store)?;
            let (f_real, _) = disc_forward(&mut g, x, &disc, b)?;
            let (f_fake, _) = disc_forward(&mut g, recon, &disc, b)?;
            let l_rec = g.loss(recon, x, LossKind::Mse)?;
            let l_feat = g.loss(f_fake, f_real, LossKind::Mse)?;
            let weighted = g.affine(l_feat, spec.gan_lambda, 0.0);
            let loss = g.add(l_rec, weighted)?;
            value = g.scalar(l_rec);
            step_with_clip(&mut g, loss, &mut store, &mut opt_g)?;
        }
        Ok(value)
    })?;
    Ok((store, losses))
}

/// Generator reconstruction MSE per window.
pub(super) fn score_beatgan(
    model: &FittedDetector,
    series: &SeriesMatrix,
) -> Result<Vec<(usize, f64)>> {
    let spec = &model.spec;
    let windows = make_windows(
        series,
        &WindowSpec {
            width: spec.window.width,
            stride: 1,
        },
    )?;
    let mut out = Vec::with_capacity(windows.len());
    for batch in score_batches(&windows) {
        let mut g = Graph::new();
        let x = window_major(&mut g, &batch)?;
        let gen = bind_tcn_ae(&mut g, &model.params, "gen", spec.layers)?;
        let recon = tcn_ae_forward(&mut g, x, &gen, batch.len())?;
        let errs = per_window_mse(g.data(recon), g.data(x), batch.len());
        for (w, e) in batch.iter().zip(errs) {
            out.push((w.end(), e));
        }
    }
    Ok(out)
}
