//! Sequential variational detectors: a recurrent VAE scored by negative
//! ELBO, and its denoising variant with a time-interpolated learnable prior
//! scored by reconstruction probability.

use rand_distr::{Distribution, StandardNormal};

use super::train::*;
use super::{DetectorSpec, FittedDetector, Variant};
use crate::dataio::{make_windows, SeriesMatrix, WindowSpec};
use crate::numkit::{
    bind_linear, bind_lstm_cell, init_linear, init_lstm_cell, linear, lstm_sequence, stream,
    Graph, LinearRefs, LstmCellRefs, NodeRef, Optimizer, ParamStore, LN_2PI,
};
use crate::scoring::kl_diag_gaussians;
use crate::Result;

/// Prior mean interpolated between two endpoint vectors:
/// mu_t = (1 − t/T)·v1 + (t/T)·vT.
pub fn interpolated_prior_mean(t: f64, horizon: f64, v1: &[f64], vt: &[f64]) -> Vec<f64> {
    let tau = if horizon == 0.0 { 0.0 } else { t / horizon };
    v1.iter()
        .zip(vt)
        .map(|(a, b)| (1.0 - tau) * a + tau * b)
        .collect()
}

struct VaeRefs {
    enc: LstmCellRefs,
    enc_mu: LinearRefs,
    enc_lv: LinearRefs,
    dec: LstmCellRefs,
    dec_mu: LinearRefs,
    dec_lv: LinearRefs,
}

fn bind_vae(g: &mut Graph, store: &ParamStore, hidden: usize) -> Result<VaeRefs> {
    Ok(VaeRefs {
        enc: bind_lstm_cell(g, store, "enc.0", hidden)?,
        enc_mu: bind_linear(g, store, "enc.mu")?,
        enc_lv: bind_linear(g, store, "enc.lv")?,
        dec: bind_lstm_cell(g, store, "dec.0", hidden)?,
        dec_mu: bind_linear(g, store, "dec.mu")?,
        dec_lv: bind_linear(g, store, "dec.lv")?,
    })
}

fn clamped_heads(
    g: &mut Graph,
    hs: &[NodeRef],
    mu_head: &LinearRefs,
    lv_head: &LinearRefs,
) -> Result<Vec<(NodeRef, NodeRef)>> {
    let mut out = Vec::with_capacity(hs.len());
    for &h in hs {
        let mu = linear(g, h, mu_head)?;
        let lv = linear(g, h, lv_head)?;
        out.push((mu, g.clamp(lv, -LOGVAR_CLAMP, LOGVAR_CLAMP)));
    }
    Ok(out)
}

fn gaussian_nll_node(g: &mut Graph, x: NodeRef, mu: NodeRef, lv: NodeRef) -> Result<NodeRef> {
    let diff = g.sub(x, mu)?;
    let sq = g.mul(diff, diff)?;
    let neg_lv = g.affine(lv, -1.0, 0.0);
    let inv_var = g.exp(neg_lv);
    let weighted = g.mul(sq, inv_var)?;
    let shifted = g.affine(lv, 1.0, LN_2PI);
    let inner = g.add(weighted, shifted)?;
    let half = g.affine(inner, 0.5, 0.0);
    Ok(g.sum_all(half))
}

pub(super) fn train_lstm_vae(
    spec: &DetectorSpec,
    dims: usize,
    series: &[SeriesMatrix],
    denoising: bool,
) -> Result<(ParamStore, Vec<f64>)> {
    let w = spec.window.width;
    let latent = spec.latent_dim;
    let mut store = ParamStore::new(spec.seed);
    init_lstm_cell(&mut store, "enc.0", dims, spec.hidden_size)?;
    init_linear(&mut store, "enc.mu", spec.hidden_size, latent)?;
    init_linear(&mut store, "enc.lv", spec.hidden_size, latent)?;
    init_lstm_cell(&mut store, "dec.0", latent, spec.hidden_size)?;
    init_linear(&mut store, "dec.mu", spec.hidden_size, dims)?;
    init_linear(&mut store, "dec.lv", spec.hidden_size, dims)?;
    if denoising {
        // prior endpoints start at the standard-normal mean
        store.insert_const("prior.v1", vec![latent], 0.0)?;
        store.insert_const("prior.vt", vec![latent], 0.0)?;
    }

    let mut trainer = Trainer::new(spec, series, w)?;
    let mut opt = Optimizer::adam(spec.learning_rate);
    let mut eps_rng = stream(spec.seed, "vae.eps");
    let mut noise_rng = stream(spec.seed, "vae.input_noise");
    let batch_inv = 1.0 / spec.batch_size.max(1) as f64;

    let losses = trainer.run(spec.epochs, |_, batch| {
        let b = batch.len();
        let mut g = Graph::new();
        let refs = bind_vae(&mut g, &store, spec.hidden_size)?;
        let prior = if denoising {
            Some((g.param(&store, "prior.v1")?, g.param(&store, "prior.vt")?))
        } else {
            None
        };

        let clean_steps = time_major_steps(&mut g, batch, w)?;
        let enc_steps: Vec<NodeRef> = if denoising {
            // zero-mean Gaussian noise on every encoder input
            clean_steps
                .iter()
                .map(|&s| {
                    let data: Vec<f64> = g
                        .data(s)
                        .iter()
                        .map(|v| {
                            let n: f64 = StandardNormal.sample(&mut noise_rng);
                            v + spec.noise_std * n
                        })
                        .collect();
                    g.constant_from(vec![b, dims], data)
                })
                .collect::<Result<_>>()?
        } else {
            clean_steps.clone()
        };

        let enc = lstm_sequence(&mut g, &enc_steps, &[refs.enc], b)?;
        let posteriors = clamped_heads(&mut g, &enc.hidden_steps, &refs.enc_mu, &refs.enc_lv)?;

        let mut z_steps = Vec::with_capacity(w);
        for &(mu, lv) in &posteriors {
            let eps_data: Vec<f64> = (0..b * latent)
                .map(|_| StandardNormal.sample(&mut eps_rng))
                .collect();
            let eps = g.constant_from(vec![b, latent], eps_data)?;
            let half = g.affine(lv, 0.5, 0.0);
            let std = g.exp(half);
            let noise = g.mul(std, eps)?;
            z_steps.push(g.add(mu, noise)?);
        }

        let dec = lstm_sequence(&mut g, &z_steps, &[refs.dec], b)?;
        let likelihoods = clamped_heads(&mut g, &dec.hidden_steps, &refs.dec_mu, &refs.dec_lv)?;

        let mut total: Option<NodeRef> = None;
        for t in 0..w {
            let (mu_x, lv_x) = likelihoods[t];
            let rec = gaussian_nll_node(&mut g, clean_steps[t], mu_x, lv_x)?;
            let (mu_z, lv_z) = posteriors[t];
            // KL(q ‖ N(prior_mu, I)) per cell: 0.5(−lv + e^lv + (mu−mu_p)² − 1)
            let e = g.exp(lv_z);
            let centered = match &prior {
                None => mu_z,
                Some((v1, vt)) => {
                    let tau = if w > 1 { t as f64 / (w - 1) as f64 } else { 0.0 };
                    let a = g.affine(*v1, 1.0 - tau, 0.0);
                    let bb = g.affine(*vt, tau, 0.0);
                    let mu_p = g.add(a, bb)?;
                    let mu_p_rows = g.broadcast_row(mu_p, b)?;
                    g.sub(mu_z, mu_p_rows)?
                }
            };
            let sq = g.mul(centered, centered)?;
            let a = g.affine(lv_z, -1.0, -1.0);
            let s = g.add(a, e)?;
            let inner = g.add(s, sq)?;
            let half = g.affine(inner, 0.5, 0.0);
            let kl = g.sum_all(half);
            let step_total = g.add(rec, kl)?;
            total = Some(match total {
                None => step_total,
                Some(acc) => g.add(acc, step_total)?,
            });
        }
        let loss = g.affine(total.expect("w >= 1"), batch_inv, 0.0);
        let value = g.scalar(loss);
        step_with_clip(&mut g, loss, &mut store, &mut opt)?;
        Ok(value)
    })?;
    Ok((store, losses))
}

struct WindowPosterior {
    /// Per step: posterior mean and variance, each of latent width.
    mu: Vec<Vec<f64>>,
    var: Vec<Vec<f64>>,
}

fn encode_posteriors(
    model: &FittedDetector,
    batch: &[&crate::dataio::Window],
) -> Result<Vec<WindowPosterior>> {
    let spec = &model.spec;
    let w = spec.window.width;
    let latent = spec.latent_dim;
    let b = batch.len();
    let mut g = Graph::new();
    let refs = bind_vae(&mut g, &model.params, spec.hidden_size)?;
    let steps = time_major_steps(&mut g, batch, w)?;
    let enc = lstm_sequence(&mut g, &steps, &[refs.enc], b)?;
    let posteriors = clamped_heads(&mut g, &enc.hidden_steps, &refs.enc_mu, &refs.enc_lv)?;
    let mut out: Vec<WindowPosterior> = (0..b)
        .map(|_| WindowPosterior {
            mu: Vec::with_capacity(w),
            var: Vec::with_capacity(w),
        })
        .collect();
    for &(mu, lv) in &posteriors {
        let mu_d = g.data(mu);
        let lv_d = g.data(lv);
        for (bi, wp) in out.iter_mut().enumerate() {
            wp.mu.push(mu_d[bi * latent..(bi + 1) * latent].to_vec());
            wp.var
                .push(lv_d[bi * latent..(bi + 1) * latent].iter().map(|v| v.exp()).collect());
        }
    }
    Ok(out)
}

/// Monte-Carlo scores for both variational variants. The plain VAE is scored
/// by the negative ELBO; the denoising variant by the negated reconstruction
/// probability.
pub(super) fn score_lstm_vae(
    model: &FittedDetector,
    series: &SeriesMatrix,
) -> Result<Vec<(usize, f64)>> {
    let spec = &model.spec;
    let w = spec.window.width;
    let dims = series.dims();
    let latent = spec.latent_dim;
    let denoising = spec.variant == Variant::LstmDvae;
    let windows = make_windows(series, &WindowSpec { width: w, stride: 1 })?;
    let mut rng = stream(spec.seed, "vae.score");
    let mut out = Vec::with_capacity(windows.len());

    let (v1, vt) = if denoising {
        (
            model.params.get("prior.v1")?.data().to_vec(),
            model.params.get("prior.vt")?.data().to_vec(),
        )
    } else {
        (vec![0.0; latent], vec![0.0; latent])
    };
    let unit_var = vec![1.0; latent];

    for batch in score_batches(&windows) {
        let b = batch.len();
        let posteriors = encode_posteriors(model, &batch)?;

        // closed-form KL against the per-step prior
        let mut kl_totals = vec![0.0; b];
        for (bi, wp) in posteriors.iter().enumerate() {
            for t in 0..w {
                let prior_mu = if denoising {
                    interpolated_prior_mean(t as f64, (w - 1).max(1) as f64, &v1, &vt)
                } else {
                    vec![0.0; latent]
                };
                kl_totals[bi] +=
                    kl_diag_gaussians(&wp.mu[t], &wp.var[t], &prior_mu, &unit_var)?;
            }
        }

        // Monte-Carlo expectation of log p(x|z) over posterior samples
        let mut recon = vec![0.0; b];
        for _ in 0..spec.mc_samples {
            let mut g = Graph::new();
            let refs = bind_vae(&mut g, &model.params, spec.hidden_size)?;
            let mut z_steps = Vec::with_capacity(w);
            for t in 0..w {
                let mut data = Vec::with_capacity(b * latent);
                for wp in &posteriors {
                    for j in 0..latent {
                        let eps: f64 = StandardNormal.sample(&mut rng);
                        data.push(wp.mu[t][j] + wp.var[t][j].sqrt() * eps);
                    }
                }
                z_steps.push(g.constant_from(vec![b, latent], data)?);
            }
            let dec = lstm_sequence(&mut g, &z_steps, &[refs.dec], b)?;
            let heads = clamped_heads(&mut g, &dec.hidden_steps, &refs.dec_mu, &refs.dec_lv)?;
            for (t, &(mu_x, lv_x)) in heads.iter().enumerate() {
                let mu_d = g.data(mu_x);
                let lv_d = g.data(lv_x);
                for (bi, win) in batch.iter().enumerate() {
                    let x = win.row(t);
                    let mut lp = 0.0;
                    for d in 0..dims {
                        let lv = lv_d[bi * dims + d];
                        let diff = x[d] - mu_d[bi * dims + d];
                        lp += -0.5 * (LN_2PI + lv + diff * diff * (-lv).exp());
                    }
                    recon[bi] += lp;
                }
            }
        }

        for (bi, win) in batch.iter().enumerate() {
            let recon_mean = recon[bi] / spec.mc_samples as f64;
            let score = if denoising {
                -recon_mean
            } else {
                // negative ELBO
                kl_totals[bi] - recon_mean
            };
            out.push((win.end(), score));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_mean_endpoints() {
        let v1 = vec![1.0, -2.0];
        let vt = vec![3.0, 5.0];
        assert_eq!(interpolated_prior_mean(0.0, 10.0, &v1, &vt), v1);
        assert_eq!(interpolated_prior_mean(10.0, 10.0, &v1, &vt), vt);
        let mid = interpolated_prior_mean(5.0, 10.0, &v1, &vt);
        assert_eq!(mid, vec![2.0, 1.5]);
    }
}
