//! Layer-level building blocks composed from graph primitives.

use super::graph::{Graph, NodeRef};
use super::params::ParamStore;
use crate::{Error, Result};

/// y = xW + b for x: [n, d_in], W: [d_in, d_out], b: [d_out].
pub fn linear_forward(g: &mut Graph, x: NodeRef, w: NodeRef, b: NodeRef) -> Result<NodeRef> {
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

/// Registers W and b for a linear layer; W is uniform in ±1/sqrt(d_in),
/// b starts at zero.
pub fn init_linear(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize) -> Result<()> {
    store.insert_uniform(&format!("{prefix}.w"), vec![d_in, d_out], d_in)?;
    store.insert_const(&format!("{prefix}.b"), vec![d_out], 0.0)
}

/// Graph handles for one registered linear layer.
#[derive(Debug, Clone, Copy)]
pub struct LinearRefs {
    pub w: NodeRef,
    pub b: NodeRef,
}

pub fn bind_linear(g: &mut Graph, store: &ParamStore, prefix: &str) -> Result<LinearRefs> {
    Ok(LinearRefs {
        w: g.param(store, &format!("{prefix}.w"))?,
        b: g.param(store, &format!("{prefix}.b"))?,
    })
}

pub fn linear(g: &mut Graph, x: NodeRef, l: &LinearRefs) -> Result<NodeRef> {
    linear_forward(g, x, l.w, l.b)
}

/// Gate packing for the LSTM cell: input, forget, candidate, output.
/// w_x: [d_in, 4h], w_h: [h, 4h], b: [4h].
#[derive(Debug, Clone, Copy)]
pub struct LstmCellRefs {
    pub w_x: NodeRef,
    pub w_h: NodeRef,
    pub b: NodeRef,
    pub hidden: usize,
}

/// Registers LSTM cell parameters. The forget-gate bias starts at 1.0;
/// everything else follows the uniform fan-in rule with fan-in d_in + h.
pub fn init_lstm_cell(store: &mut ParamStore, prefix: &str, d_in: usize, h: usize) -> Result<()> {
    let fan_in = d_in + h;
    store.insert_uniform(&format!("{prefix}.w_x"), vec![d_in, 4 * h], fan_in)?;
    store.insert_uniform(&format!("{prefix}.w_h"), vec![h, 4 * h], fan_in)?;
    let mut bias = vec![0.0; 4 * h];
    for v in &mut bias[h..2 * h] {
        *v = 1.0;
    }
    store.insert_tensor(
        &format!("{prefix}.b"),
        super::tensor::Tensor::new(vec![4 * h], bias)?,
    )
}

pub fn bind_lstm_cell(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    hidden: usize,
) -> Result<LstmCellRefs> {
    Ok(LstmCellRefs {
        w_x: g.param(store, &format!("{prefix}.w_x"))?,
        w_h: g.param(store, &format!("{prefix}.w_h"))?,
        b: g.param(store, &format!("{prefix}.b"))?,
        hidden,
    })
}

/// One step of the standard gated recurrence for a batch of rows.
/// x: [n, d_in], h, c: [n, hidden]. Returns (h', c').
pub fn lstm_cell_step(
    g: &mut Graph,
    x: NodeRef,
    h: NodeRef,
    c: NodeRef,
    cell: &LstmCellRefs,
) -> Result<(NodeRef, NodeRef)> {
    if g.data(x).iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("lstm_cell_step input"));
    }
    let hd = cell.hidden;
    let zx = g.matmul(x, cell.w_x)?;
    let zh = g.matmul(h, cell.w_h)?;
    let z = g.add(zx, zh)?;
    let z = g.add_bias(z, cell.b)?;
    let i_gate = g.slice_cols(z, 0, hd)?;
    let i_gate = g.sigmoid(i_gate);
    let f_gate = g.slice_cols(z, hd, hd)?;
    let f_gate = g.sigmoid(f_gate);
    let cand = g.slice_cols(z, 2 * hd, hd)?;
    let cand = g.tanh(cand);
    let o_gate = g.slice_cols(z, 3 * hd, hd)?;
    let o_gate = g.sigmoid(o_gate);
    let keep = g.mul(f_gate, c)?;
    let write = g.mul(i_gate, cand)?;
    let c_next = g.add(keep, write)?;
    let c_tanh = g.tanh(c_next);
    let h_next = g.mul(o_gate, c_tanh)?;
    Ok((h_next, c_next))
}

/// Output of running stacked LSTM layers over a step sequence.
pub struct LstmSeqOut {
    /// Top-layer hidden state at every step, each [n, hidden].
    pub hidden_steps: Vec<NodeRef>,
    /// Final (h, c) per layer, bottom first.
    pub last_state: Vec<(NodeRef, NodeRef)>,
}

/// Runs `cells` (stacked layers, bottom first) over `steps` inputs of
/// shape [n, d]. States start at zero.
pub fn lstm_sequence(
    g: &mut Graph,
    steps: &[NodeRef],
    cells: &[LstmCellRefs],
    batch: usize,
) -> Result<LstmSeqOut> {
    lstm_sequence_from(g, steps, cells, batch, None)
}

/// Like [`lstm_sequence`] but with explicit initial (h, c) per layer.
pub fn lstm_sequence_from(
    g: &mut Graph,
    steps: &[NodeRef],
    cells: &[LstmCellRefs],
    batch: usize,
    initial: Option<&[(NodeRef, NodeRef)]>,
) -> Result<LstmSeqOut> {
    if steps.is_empty() || cells.is_empty() {
        return Err(Error::contract("lstm_sequence: empty steps or layers"));
    }
    if let Some(init) = initial {
        if init.len() != cells.len() {
            return Err(Error::contract(
                "lstm_sequence: initial state count must match layer count",
            ));
        }
    }
    let mut states: Vec<(NodeRef, NodeRef)> = match initial {
        Some(init) => init.to_vec(),
        None => cells
            .iter()
            .map(|c| {
                let h = g.zeros(vec![batch, c.hidden]);
                let cc = g.zeros(vec![batch, c.hidden]);
                (h, cc)
            })
            .collect(),
    };
    let mut hidden_steps = Vec::with_capacity(steps.len());
    for &x in steps {
        let mut input = x;
        for (layer, cell) in cells.iter().enumerate() {
            let (h, c) = states[layer];
            let (h2, c2) = lstm_cell_step(g, input, h, c, cell)?;
            states[layer] = (h2, c2);
            input = h2;
        }
        hidden_steps.push(input);
    }
    Ok(LstmSeqOut {
        hidden_steps,
        last_state: states,
    })
}

/// Dilated causal convolution for a single sequence, x: [t, d_in],
/// kernel: [k, d_in, d_out]. Output at time t depends only on inputs ≤ t.
pub fn dilated_causal_conv1d(
    g: &mut Graph,
    x: NodeRef,
    kernel: NodeRef,
    dilation: usize,
) -> Result<NodeRef> {
    g.causal_conv1d(x, kernel, dilation, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::graph::LossKind;
    use crate::numkit::tensor::Tensor;

    fn graph_with(values: &[(&str, Vec<usize>, Vec<f64>)]) -> (Graph, ParamStore) {
        let mut store = ParamStore::new(0);
        for (name, shape, data) in values {
            store
                .insert_tensor(name, Tensor::new(shape.clone(), data.clone()).unwrap())
                .unwrap();
        }
        (Graph::new(), store)
    }

    #[test]
    fn linear_identity_case() {
        let (mut g, store) = graph_with(&[
            ("w", vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]),
            ("b", vec![2], vec![0.0, 0.0]),
        ]);
        let x = g.constant_from(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let w = g.param(&store, "w").unwrap();
        let b = g.param(&store, "b").unwrap();
        let y = linear_forward(&mut g, x, w, b).unwrap();
        assert_eq!(g.data(y), &[1.0, 2.0]);
    }

    #[test]
    fn linear_zero_weights_return_bias() {
        let (mut g, store) = graph_with(&[
            ("w", vec![2, 2], vec![0.0; 4]),
            ("b", vec![2], vec![3.0, 4.0]),
        ]);
        let x = g.constant_from(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let w = g.param(&store, "w").unwrap();
        let b = g.param(&store, "b").unwrap();
        let y = linear_forward(&mut g, x, w, b).unwrap();
        assert_eq!(g.data(y), &[3.0, 4.0]);
    }

    #[test]
    fn linear_hand_multiply() {
        let (mut g, store) = graph_with(&[
            ("w", vec![2, 1], vec![1.0, 1.0]),
            ("b", vec![1], vec![0.5]),
        ]);
        let x = g.constant_from(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let w = g.param(&store, "w").unwrap();
        let b = g.param(&store, "b").unwrap();
        let y = linear_forward(&mut g, x, w, b).unwrap();
        assert_eq!(g.data(y), &[3.5]);
    }

    #[test]
    fn linear_shape_mismatch_named() {
        let (mut g, store) = graph_with(&[
            ("w", vec![3, 2], vec![0.0; 6]),
            ("b", vec![2], vec![0.0; 2]),
        ]);
        let x = g.constant_from(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let w = g.param(&store, "w").unwrap();
        let b = g.param(&store, "b").unwrap();
        let err = linear_forward(&mut g, x, w, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 2]") && msg.contains("[3, 2]"), "{msg}");
    }

    fn zero_cell(g: &mut Graph, store: &mut ParamStore, d: usize, h: usize) -> LstmCellRefs {
        store
            .insert_tensor("z.w_x", Tensor::zeros(vec![d, 4 * h]))
            .unwrap();
        store
            .insert_tensor("z.w_h", Tensor::zeros(vec![h, 4 * h]))
            .unwrap();
        store.insert_tensor("z.b", Tensor::zeros(vec![4 * h])).unwrap();
        bind_lstm_cell(g, store, "z", h).unwrap()
    }

    #[test]
    fn lstm_zero_params_zero_state() {
        let mut store = ParamStore::new(0);
        let mut g = Graph::new();
        let cell = zero_cell(&mut g, &mut store, 3, 2);
        let x = g.constant_from(vec![1, 3], vec![0.3, -1.0, 2.0]).unwrap();
        let h = g.zeros(vec![1, 2]);
        let c = g.zeros(vec![1, 2]);
        let (h2, c2) = lstm_cell_step(&mut g, x, h, c, &cell).unwrap();
        assert_eq!(g.data(h2), &[0.0, 0.0]);
        assert_eq!(g.data(c2), &[0.0, 0.0]);
    }

    #[test]
    fn lstm_zero_params_halves_cell_state() {
        let mut store = ParamStore::new(0);
        let mut g = Graph::new();
        let cell = zero_cell(&mut g, &mut store, 3, 2);
        let x = g.constant_from(vec![1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let h = g.zeros(vec![1, 2]);
        let c = g.constant_from(vec![1, 2], vec![0.8, -0.4]).unwrap();
        let (_, c2) = lstm_cell_step(&mut g, x, h, c, &cell).unwrap();
        assert!((g.data(c2)[0] - 0.4).abs() < 1e-12);
        assert!((g.data(c2)[1] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn lstm_hidden_bounded() {
        let mut store = ParamStore::new(11);
        init_lstm_cell(&mut store, "c", 4, 3).unwrap();
        let mut g = Graph::new();
        let cell = bind_lstm_cell(&mut g, &store, "c", 3).unwrap();
        let x = g
            .constant_from(vec![1, 4], vec![0.9, -2.0, 0.1, 1.4])
            .unwrap();
        let h = g.zeros(vec![1, 3]);
        let c = g.zeros(vec![1, 3]);
        let (h2, _) = lstm_cell_step(&mut g, x, h, c, &cell).unwrap();
        assert!(g.data(h2).iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn lstm_rejects_non_finite_input() {
        let mut store = ParamStore::new(0);
        let mut g = Graph::new();
        let cell = zero_cell(&mut g, &mut store, 2, 2);
        let x = g
            .constant_from(vec![1, 2], vec![f64::NAN, 0.0])
            .unwrap();
        let h = g.zeros(vec![1, 2]);
        let c = g.zeros(vec![1, 2]);
        assert!(matches!(
            lstm_cell_step(&mut g, x, h, c, &cell),
            Err(crate::Error::Numeric(_))
        ));
    }

    #[test]
    fn conv_identity_kernel() {
        let mut g = Graph::new();
        let x = g
            .constant_from(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0])
            .unwrap();
        // width-2 kernel: delta at lag 0 (last tap)
        let k = g.constant_from(vec![2, 1, 1], vec![0.0, 1.0]).unwrap();
        let y = dilated_causal_conv1d(&mut g, x, k, 1).unwrap();
        assert_eq!(g.data(y), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv_zero_input_zero_output() {
        let mut g = Graph::new();
        let x = g.zeros(vec![5, 2]);
        let k = g
            .constant_from(vec![3, 2, 2], vec![0.7; 12])
            .unwrap();
        let y = dilated_causal_conv1d(&mut g, x, k, 2).unwrap();
        assert!(g.data(y).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn conv_hand_example_dilation_two() {
        let mut g = Graph::new();
        let x = g
            .constant_from(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0])
            .unwrap();
        let k = g.constant_from(vec![2, 1, 1], vec![1.0, 1.0]).unwrap();
        let y = dilated_causal_conv1d(&mut g, x, k, 2).unwrap();
        assert_eq!(g.data(y), &[1.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn loss_examples() {
        let mut g = Graph::new();
        let p = g.constant_from(vec![2], vec![0.0, 0.0]).unwrap();
        let t = g.constant_from(vec![2], vec![1.0, 3.0]).unwrap();
        let mse = g.loss(p, t, LossKind::Mse).unwrap();
        assert!((g.scalar(mse) - 5.0).abs() < 1e-12);

        let p2 = g.constant_from(vec![1], vec![1.0]).unwrap();
        let t2 = g.constant_from(vec![1], vec![0.0]).unwrap();
        let lc = g.loss(p2, t2, LossKind::LogCosh).unwrap();
        assert!((g.scalar(lc) - 0.4337808304830271).abs() < 1e-9);

        let same = g.loss(p, p, LossKind::Mae).unwrap();
        assert_eq!(g.scalar(same), 0.0);
        let same2 = g.loss(p, p, LossKind::Mse).unwrap();
        assert_eq!(g.scalar(same2), 0.0);
        let same3 = g.loss(p, p, LossKind::LogCosh).unwrap();
        assert_eq!(g.scalar(same3), 0.0);
    }
}
