//! Central-finite-difference checks for every differentiable building block.
//!
//! The oracle only evaluates forward passes: it perturbs one parameter
//! element at a time and compares (f(p+h) - f(p-h)) / 2h against the
//! gradient produced by the reverse sweep.

use super::graph::{Graph, LossKind, NodeRef};
use super::layers::*;
use super::params::ParamStore;
use crate::Result;

const FD_STEP: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Asserts |analytic - central difference| relative error below `tol` for
/// every element of every parameter in the store.
fn check(mut store: ParamStore, build: impl Fn(&mut Graph, &ParamStore) -> Result<NodeRef>, tol: f64) {
    let mut g = Graph::new();
    let loss = build(&mut g, &store).unwrap();
    g.backward(loss, &mut store).unwrap();

    let names: Vec<String> = store.names().map(String::from).collect();
    for name in names {
        let n = store.get(&name).unwrap().numel();
        for i in 0..n {
            let orig = store.get(&name).unwrap().data()[i];
            store.get_mut(&name).unwrap().data_mut()[i] = orig + FD_STEP;
            let mut gp = Graph::new();
            let np = build(&mut gp, &store).unwrap();
            let lp = gp.scalar(np);
            store.get_mut(&name).unwrap().data_mut()[i] = orig - FD_STEP;
            let mut gm = Graph::new();
            let nm = build(&mut gm, &store).unwrap();
            let lm = gm.scalar(nm);
            store.get_mut(&name).unwrap().data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * FD_STEP);
            let an = store.get(&name).unwrap().grad().unwrap()[i];
            assert!(
                rel_err(an, fd) < tol,
                "{name}[{i}]: analytic={an} fd={fd} rel={}",
                rel_err(an, fd)
            );
        }
    }
}

fn seeded_store(seed: u64) -> ParamStore {
    ParamStore::new(seed)
}

fn seeded_vec(seed: u64, name: &str, n: usize, scale: f64) -> Vec<f64> {
    let rng = super::rng::NamedRng::new(seed, name);
    (0..n).map(|i| rng.uniform(i as u64, -scale, scale)).collect()
}

#[test]
fn linear_mse_matches_fd_tightly() {
    // the one path checked at 1e-6
    for seed in 0..10u64 {
        let mut store = seeded_store(seed);
        init_linear(&mut store, "lin", 3, 2).unwrap();
        let x = seeded_vec(seed, "x", 4 * 3, 1.0);
        let t = seeded_vec(seed, "t", 4 * 2, 1.0);
        check(
            store,
            move |g, s| {
                let xr = g.constant_from(vec![4, 3], x.clone())?;
                let l = bind_linear(g, s, "lin")?;
                let y = linear(g, xr, &l)?;
                let tr = g.constant_from(vec![4, 2], t.clone())?;
                g.loss(y, tr, LossKind::Mse)
            },
            1e-6,
        );
    }
}

#[test]
fn constant_loss_gives_zero_gradient() {
    let mut store = ParamStore::new(0);
    init_linear(&mut store, "lin", 2, 2).unwrap();
    let mut g = Graph::new();
    let a = g.constant_from(vec![2], vec![1.0, 2.0]).unwrap();
    let _ = bind_linear(&mut g, &store, "lin").unwrap();
    let loss = g.sum_all(a);
    g.backward(loss, &mut store).unwrap();
    assert!(store
        .get("lin.w")
        .unwrap()
        .grad()
        .unwrap()
        .iter()
        .all(|v| *v == 0.0));
}

#[test]
fn sum_of_params_gives_unit_gradient() {
    let mut store = ParamStore::new(0);
    store.insert_const("w", vec![2, 3], 0.5).unwrap();
    let mut g = Graph::new();
    let w = g.param(&store, "w").unwrap();
    let loss = g.sum_all(w);
    g.backward(loss, &mut store).unwrap();
    assert_eq!(store.get("w").unwrap().grad().unwrap(), &[1.0; 6]);
}

#[test]
fn lstm_sequence_matches_fd() {
    for seed in 0..10u64 {
        let mut store = seeded_store(seed);
        init_lstm_cell(&mut store, "cell", 3, 4).unwrap();
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|t| seeded_vec(seed, &format!("x{t}"), 2 * 3, 1.0))
            .collect();
        let target = seeded_vec(seed, "t", 2 * 4, 0.5);
        check(
            store,
            move |g, s| {
                let cell = bind_lstm_cell(g, s, "cell", 4)?;
                let steps: Vec<NodeRef> = xs
                    .iter()
                    .map(|x| g.constant_from(vec![2, 3], x.clone()))
                    .collect::<Result<_>>()?;
                let out = lstm_sequence(g, &steps, &[cell], 2)?;
                let last = *out.hidden_steps.last().unwrap();
                let tr = g.constant_from(vec![2, 4], target.clone())?;
                g.loss(last, tr, LossKind::Mse)
            },
            1e-4,
        );
    }
}

#[test]
fn causal_conv_logcosh_matches_fd() {
    for seed in 0..10u64 {
        let mut store = seeded_store(seed);
        store
            .insert_uniform("k", vec![2, 2, 3], 4)
            .unwrap();
        let x = seeded_vec(seed, "x", 6 * 2, 1.0);
        let t = seeded_vec(seed, "t", 6 * 3, 1.0);
        check(
            store,
            move |g, s| {
                let xr = g.constant_from(vec![6, 2], x.clone())?;
                let k = g.param(s, "k")?;
                let y = g.causal_conv1d(xr, k, 2, 1)?;
                let tr = g.constant_from(vec![6, 3], t.clone())?;
                g.loss(y, tr, LossKind::LogCosh)
            },
            1e-4,
        );
    }
}

#[test]
fn all_losses_match_fd() {
    for kind in [LossKind::Mse, LossKind::Mae, LossKind::LogCosh] {
        for seed in 0..10u64 {
            let mut store = seeded_store(seed);
            store.insert_uniform("p", vec![3, 3], 9).unwrap();
            // keep errors away from zero so the MAE subgradient is clean
            let t = seeded_vec(seed, "t", 9, 1.0)
                .into_iter()
                .map(|v| v + 3.0)
                .collect::<Vec<_>>();
            check(
                store,
                move |g, s| {
                    let p = g.param(s, "p")?;
                    let tr = g.constant_from(vec![3, 3], t.clone())?;
                    g.loss(p, tr, kind)
                },
                1e-4,
            );
        }
    }
}

#[test]
fn activation_chain_matches_fd() {
    // sigmoid/tanh/relu/exp/softplus and the broadcast/mask plumbing
    for seed in 0..10u64 {
        let mut store = seeded_store(seed);
        store.insert_uniform("w", vec![4], 4).unwrap();
        let mask = vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0];
        check(
            store,
            move |g, s| {
                let w = g.param(s, "w")?;
                let rows = g.broadcast_row(w, 2)?;
                let a = g.sigmoid(rows);
                let b = g.tanh(a);
                let c = g.softplus(b);
                let d = g.exp(c);
                let e = g.relu(d);
                let f = g.mul_mask(e, &mask)?;
                Ok(g.mean_all(f))
            },
            1e-4,
        );
    }
}

#[test]
fn pooling_and_concat_match_fd() {
    for seed in 0..10u64 {
        let mut store = seeded_store(seed);
        store.insert_uniform("k", vec![2, 2, 2], 4).unwrap();
        let x = seeded_vec(seed, "x", 8 * 2, 1.0);
        check(
            store,
            move |g, s| {
                let xr = g.constant_from(vec![8, 2], x.clone())?;
                let k = g.param(s, "k")?;
                let y = g.causal_conv1d(xr, k, 1, 2)?; // two blocks of 4 steps
                let pooled = g.max_pool1d(y, 2, 2)?;
                let rev = g.reverse_time(pooled, 2)?;
                let both = g.concat_cols(&[pooled, rev])?;
                let sliced = g.slice_cols(both, 1, 2)?;
                let top = g.slice_rows(sliced, 0, 2)?;
                Ok(g.mean_all(top))
            },
            1e-4,
        );
    }
}

#[test]
fn elem_max_and_block_reduce_match_fd() {
    for seed in 0..10u64 {
        let mut store = seeded_store(seed);
        store.insert_uniform("a", vec![2, 3], 3).unwrap();
        store.insert_uniform("b", vec![2, 3], 3).unwrap();
        check(
            store,
            move |g, s| {
                let a = g.param(s, "a")?;
                let b = g.param(s, "b")?;
                let m = g.elem_max(a, b)?;
                let pooled = g.mean_blocks(m, 1)?;
                let mx = g.max_blocks(m, 2)?;
                let mx_top = g.slice_rows(mx, 0, 1)?;
                let joined = g.concat_cols(&[pooled, mx_top])?;
                Ok(g.sum_all(joined))
            },
            1e-4,
        );
    }
}

#[test]
fn gaussian_nll_style_path_matches_fd() {
    // exp(-logvar) * sq + logvar pattern used by the variational decoders
    for seed in 0..10u64 {
        let mut store = seeded_store(seed);
        store.insert_uniform("mu", vec![2, 3], 3).unwrap();
        store.insert_uniform("lv", vec![2, 3], 3).unwrap();
        let x = seeded_vec(seed, "x", 6, 1.0);
        check(
            store,
            move |g, s| {
                let mu = g.param(s, "mu")?;
                let lv = g.param(s, "lv")?;
                let lvc = g.clamp(lv, -8.0, 8.0);
                let xr = g.constant_from(vec![2, 3], x.clone())?;
                let diff = g.sub(xr, mu)?;
                let sq = g.mul(diff, diff)?;
                let neg_lv = g.affine(lvc, -1.0, 0.0);
                let inv_var = g.exp(neg_lv);
                let weighted = g.mul(sq, inv_var)?;
                let inner = g.add(weighted, lvc)?;
                Ok(g.mean_all(inner))
            },
            1e-4,
        );
    }
}

#[test]
fn gradient_accumulates_across_reuse() {
    // loss = mean((w - t1)^2) + mean((w - t2)^2): both branches contribute
    let mut store = ParamStore::new(3);
    store.insert_uniform("w", vec![2, 2], 4).unwrap();
    check(
        store,
        |g, s| {
            let w = g.param(s, "w")?;
            let t1 = g.constant_from(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0])?;
            let t2 = g.constant_from(vec![2, 2], vec![-1.0, 0.5, 0.0, 2.0])?;
            let l1 = g.loss(w, t1, LossKind::Mse)?;
            let l2 = g.loss(w, t2, LossKind::Mse)?;
            g.add(l1, l2)
        },
        1e-6,
    );
}

#[test]
fn backward_rejects_non_scalar() {
    let mut store = ParamStore::new(0);
    store.insert_const("w", vec![2], 1.0).unwrap();
    let mut g = Graph::new();
    let w = g.param(&store, "w").unwrap();
    let y = g.affine(w, 2.0, 0.0);
    assert!(matches!(
        g.backward(y, &mut store),
        Err(crate::Error::Contract(_))
    ));
}
