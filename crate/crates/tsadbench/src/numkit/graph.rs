//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Forward values are computed eagerly as ops are recorded; `backward` replays
//! the tape in reverse and accumulates vector-Jacobian products. Parameters
//! are snapshotted from a [`ParamStore`] at registration and their gradients
//! are written back by `backward`, with zero gradients for parameters the
//! loss does not reach.

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::{Error, Result};

pub const LN_2PI: f64 = 1.8378770664093453;

/// Handle to a node in the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Mae,
    LogCosh,
}

#[derive(Debug, Clone, Copy)]
enum UnaryKind {
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Softplus,
    Clamp { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy)]
enum ReduceKind {
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    MatMul { a: NodeRef, b: NodeRef, out: NodeRef, n: usize, k: usize, m: usize },
    AddBias { x: NodeRef, bias: NodeRef, out: NodeRef, rows: usize, cols: usize },
    Add { a: NodeRef, b: NodeRef, out: NodeRef },
    Sub { a: NodeRef, b: NodeRef, out: NodeRef },
    Mul { a: NodeRef, b: NodeRef, out: NodeRef },
    ElemMax { a: NodeRef, b: NodeRef, out: NodeRef },
    Affine { x: NodeRef, out: NodeRef, mul: f64 },
    Unary { x: NodeRef, out: NodeRef, kind: UnaryKind },
    CausalConv1d {
        x: NodeRef,
        kernel: NodeRef,
        out: NodeRef,
        batch: usize,
        steps: usize,
        din: usize,
        dout: usize,
        width: usize,
        dilation: usize,
    },
    MaxPool1d { x: NodeRef, out: NodeRef, argmax: Vec<usize> },
    ReverseTime { x: NodeRef, out: NodeRef, batch: usize, steps: usize, cols: usize },
    ConcatCols { xs: Vec<NodeRef>, out: NodeRef, rows: usize, widths: Vec<usize> },
    SliceCols { x: NodeRef, out: NodeRef, start: usize, take: usize, cols: usize },
    SliceRows { x: NodeRef, out: NodeRef, start: usize, take: usize, cols: usize },
    BroadcastRow { x: NodeRef, out: NodeRef, copies: usize, cols: usize },
    ReduceBlocks {
        x: NodeRef,
        out: NodeRef,
        blocks: usize,
        rows_per_block: usize,
        cols: usize,
        kind: ReduceKind,
        argmax: Vec<usize>,
    },
    SumAll { x: NodeRef, out: NodeRef },
    MeanAll { x: NodeRef, out: NodeRef },
    MulMask { x: NodeRef, out: NodeRef, mask: Vec<f64> },
    Loss { pred: NodeRef, target: NodeRef, out: NodeRef, kind: LossKind },
    Reshape { x: NodeRef, out: NodeRef },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    ops: Vec<Op>,
    bindings: Vec<(String, NodeRef)>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(cosh(x)) without overflow for large |x|.
pub fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a - std::f64::consts::LN_2 + (-2.0 * a).exp().ln_1p()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>) -> NodeRef {
        let id = self.nodes.len();
        self.nodes.push(Node { shape, data });
        NodeRef(id)
    }

    pub fn constant(&mut self, t: &Tensor) -> NodeRef {
        self.push(t.shape().to_vec(), t.data().to_vec())
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<NodeRef> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension { op: "constant", lhs: shape, rhs: vec![data.len()] });
        }
        Ok(self.push(shape, data))
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> NodeRef {
        let numel = shape.iter().product();
        self.push(shape, vec![0.0; numel])
    }

    /// Snapshots a named parameter onto the graph; `backward` will write the
    /// accumulated gradient back into the store for it.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeRef> {
        let t = store.get(name)?;
        let r = self.push(t.shape().to_vec(), t.data().to_vec());
        self.bindings.push((name.to_string(), r));
        Ok(r)
    }

    pub fn shape(&self, r: NodeRef) -> &[usize] {
        &self.nodes[r.0].shape
    }

    pub fn data(&self, r: NodeRef) -> &[f64] {
        &self.nodes[r.0].data
    }

    pub fn value(&self, r: NodeRef) -> Tensor {
        Tensor::new(self.shape(r).to_vec(), self.data(r).to_vec()).expect("node is consistent")
    }

    pub fn scalar(&self, r: NodeRef) -> f64 {
        self.nodes[r.0].data[0]
    }

    fn rows_cols(&self, r: NodeRef, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(r) {
            [rows, cols] => Ok((*rows, *cols)),
            other => Err(Error::Dimension { op, lhs: other.to_vec(), rhs: vec![] }),
        }
    }

    // ── binary / elementwise ────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        let (n, ka) = self.rows_cols(a, "matmul")?;
        let (kb, m) = self.rows_cols(b, "matmul")?;
        if ka != kb {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; n * m];
        {
            let ad = &self.nodes[a.0].data;
            let bd = &self.nodes[b.0].data;
            for i in 0..n {
                for k in 0..ka {
                    let aik = ad[i * ka + k];
                    if aik == 0.0 {
                        continue;
                    }
                    let brow = &bd[k * m..(k + 1) * m];
                    let orow = &mut out[i * m..(i + 1) * m];
                    for j in 0..m {
                        orow[j] += aik * brow[j];
                    }
                }
            }
        }
        let r = self.push(vec![n, m], out);
        self.ops.push(Op::MatMul { a, b, out: r, n, k: ka, m });
        Ok(r)
    }

    pub fn add_bias(&mut self, x: NodeRef, bias: NodeRef) -> Result<NodeRef> {
        let (rows, cols) = self.rows_cols(x, "add_bias")?;
        if self.shape(bias) != [cols] {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let mut out = self.nodes[x.0].data.clone();
        {
            let b = &self.nodes[bias.0].data;
            for row in out.chunks_mut(cols) {
                for (v, bv) in row.iter_mut().zip(b) {
                    *v += bv;
                }
            }
        }
        let r = self.push(vec![rows, cols], out);
        self.ops.push(Op::AddBias { x, bias, out: r, rows, cols });
        Ok(r)
    }

    fn binary(&mut self, a: NodeRef, b: NodeRef, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.binary(a, b, "add")?;
        let out: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let r = self.push(self.nodes[a.0].shape.clone(), out);
        self.ops.push(Op::Add { a, b, out: r });
        Ok(r)
    }

    pub fn sub(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.binary(a, b, "sub")?;
        let out: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x - y)
            .collect();
        let r = self.push(self.nodes[a.0].shape.clone(), out);
        self.ops.push(Op::Sub { a, b, out: r });
        Ok(r)
    }

    pub fn mul(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.binary(a, b, "mul")?;
        let out: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let r = self.push(self.nodes[a.0].shape.clone(), out);
        self.ops.push(Op::Mul { a, b, out: r });
        Ok(r)
    }

    pub fn elem_max(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.binary(a, b, "elem_max")?;
        let out: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x.max(*y))
            .collect();
        let r = self.push(self.nodes[a.0].shape.clone(), out);
        self.ops.push(Op::ElemMax { a, b, out: r });
        Ok(r)
    }

    /// y = mul·x + add, with constant coefficients.
    pub fn affine(&mut self, x: NodeRef, mul: f64, add: f64) -> NodeRef {
        let out: Vec<f64> = self.nodes[x.0].data.iter().map(|v| mul * v + add).collect();
        let r = self.push(self.nodes[x.0].shape.clone(), out);
        self.ops.push(Op::Affine { x, out: r, mul });
        r
    }

    fn unary(&mut self, x: NodeRef, kind: UnaryKind) -> NodeRef {
        let out: Vec<f64> = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| match kind {
                UnaryKind::Sigmoid => sigmoid(v),
                UnaryKind::Tanh => v.tanh(),
                UnaryKind::Relu => v.max(0.0),
                UnaryKind::Exp => v.exp(),
                UnaryKind::Softplus => softplus(v),
                UnaryKind::Clamp { lo, hi } => v.clamp(lo, hi),
            })
            .collect();
        let r = self.push(self.nodes[x.0].shape.clone(), out);
        self.ops.push(Op::Unary { x, out: r, kind });
        r
    }

    pub fn sigmoid(&mut self, x: NodeRef) -> NodeRef {
        self.unary(x, UnaryKind::Sigmoid)
    }

    pub fn tanh(&mut self, x: NodeRef) -> NodeRef {
        self.unary(x, UnaryKind::Tanh)
    }

    pub fn relu(&mut self, x: NodeRef) -> NodeRef {
        self.unary(x, UnaryKind::Relu)
    }

    pub fn exp(&mut self, x: NodeRef) -> NodeRef {
        self.unary(x, UnaryKind::Exp)
    }

    pub fn softplus(&mut self, x: NodeRef) -> NodeRef {
        self.unary(x, UnaryKind::Softplus)
    }

    pub fn clamp(&mut self, x: NodeRef, lo: f64, hi: f64) -> NodeRef {
        self.unary(x, UnaryKind::Clamp { lo, hi })
    }

    // ── sequence ops ────────────────────────────────────────────────

    /// Dilated causal convolution over `batch` independent blocks of
    /// `steps` rows each. `x`: [batch·steps, din], `kernel`: [width, din, dout].
    /// Output at step t depends only on inputs at steps ≤ t within its block;
    /// positions before a block start read as zero. No bias.
    pub fn causal_conv1d(
        &mut self,
        x: NodeRef,
        kernel: NodeRef,
        dilation: usize,
        batch: usize,
    ) -> Result<NodeRef> {
        let (rows, din) = self.rows_cols(x, "causal_conv1d")?;
        let kshape = self.shape(kernel).to_vec();
        let (width, kdin, dout) = match kshape.as_slice() {
            [w, i, o] => (*w, *i, *o),
            _ => {
                return Err(Error::Dimension {
                    op: "causal_conv1d",
                    lhs: self.shape(x).to_vec(),
                    rhs: kshape,
                })
            }
        };
        if dilation == 0 {
            return Err(Error::contract("causal_conv1d: dilation must be >= 1"));
        }
        if kdin != din || batch == 0 || rows % batch != 0 {
            return Err(Error::Dimension {
                op: "causal_conv1d",
                lhs: vec![rows, din],
                rhs: kshape,
            });
        }
        let steps = rows / batch;
        if steps == 0 || width == 0 {
            return Err(Error::Dimension {
                op: "causal_conv1d",
                lhs: vec![steps, din],
                rhs: vec![width, din, dout],
            });
        }
        let mut out = vec![0.0; rows * dout];
        {
            let xd = &self.nodes[x.0].data;
            let kd = &self.nodes[kernel.0].data;
            for b in 0..batch {
                let base = b * steps;
                for t in 0..steps {
                    let orow = &mut out[(base + t) * dout..(base + t + 1) * dout];
                    for j in 0..width {
                        let lag = (width - 1 - j) * dilation;
                        if lag > t {
                            continue;
                        }
                        let xrow = &xd[(base + t - lag) * din..(base + t - lag + 1) * din];
                        for i in 0..din {
                            let xv = xrow[i];
                            if xv == 0.0 {
                                continue;
                            }
                            let krow = &kd[(j * din + i) * dout..(j * din + i + 1) * dout];
                            for o in 0..dout {
                                orow[o] += xv * krow[o];
                            }
                        }
                    }
                }
            }
        }
        let r = self.push(vec![rows, dout], out);
        self.ops.push(Op::CausalConv1d {
            x,
            kernel,
            out: r,
            batch,
            steps,
            din,
            dout,
            width,
            dilation,
        });
        Ok(r)
    }

    /// Non-overlapping max pooling over time within each block.
    /// `x`: [batch·steps, cols] with steps divisible by `width`.
    pub fn max_pool1d(&mut self, x: NodeRef, width: usize, batch: usize) -> Result<NodeRef> {
        let (rows, cols) = self.rows_cols(x, "max_pool1d")?;
        if width == 0 || batch == 0 || rows % batch != 0 || (rows / batch) % width != 0 {
            return Err(Error::Dimension {
                op: "max_pool1d",
                lhs: vec![rows, cols],
                rhs: vec![width, batch],
            });
        }
        let steps = rows / batch;
        let out_steps = steps / width;
        let mut out = vec![f64::NEG_INFINITY; batch * out_steps * cols];
        let mut argmax = vec![0usize; batch * out_steps * cols];
        {
            let xd = &self.nodes[x.0].data;
            for b in 0..batch {
                for ot in 0..out_steps {
                    for c in 0..cols {
                        let oidx = (b * out_steps + ot) * cols + c;
                        for w in 0..width {
                            let src = (b * steps + ot * width + w) * cols + c;
                            if xd[src] > out[oidx] {
                                out[oidx] = xd[src];
                                argmax[oidx] = src;
                            }
                        }
                    }
                }
            }
        }
        let r = self.push(vec![batch * out_steps, cols], out);
        self.ops.push(Op::MaxPool1d { x, out: r, argmax });
        Ok(r)
    }

    /// Reverses the row order within each of `batch` equal blocks.
    pub fn reverse_time(&mut self, x: NodeRef, batch: usize) -> Result<NodeRef> {
        let (rows, cols) = self.rows_cols(x, "reverse_time")?;
        if batch == 0 || rows % batch != 0 {
            return Err(Error::Dimension {
                op: "reverse_time",
                lhs: vec![rows, cols],
                rhs: vec![batch],
            });
        }
        let steps = rows / batch;
        let mut out = vec![0.0; rows * cols];
        {
            let xd = &self.nodes[x.0].data;
            for b in 0..batch {
                for t in 0..steps {
                    let src = (b * steps + t) * cols;
                    let dst = (b * steps + steps - 1 - t) * cols;
                    out[dst..dst + cols].copy_from_slice(&xd[src..src + cols]);
                }
            }
        }
        let r = self.push(vec![rows, cols], out);
        self.ops.push(Op::ReverseTime { x, out: r, batch, steps, cols });
        Ok(r)
    }

    pub fn concat_cols(&mut self, xs: &[NodeRef]) -> Result<NodeRef> {
        if xs.is_empty() {
            return Err(Error::contract("concat_cols: empty input list"));
        }
        let (rows, _) = self.rows_cols(xs[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (r, c) = self.rows_cols(x, "concat_cols")?;
            if r != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.shape(xs[0]).to_vec(),
                    rhs: self.shape(x).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&x, &w) in xs.iter().zip(&widths) {
            let xd = &self.nodes[x.0].data;
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&xd[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let r = self.push(vec![rows, total], out);
        self.ops.push(Op::ConcatCols { xs: xs.to_vec(), out: r, rows, widths });
        Ok(r)
    }

    pub fn slice_cols(&mut self, x: NodeRef, start: usize, take: usize) -> Result<NodeRef> {
        let (rows, cols) = self.rows_cols(x, "slice_cols")?;
        if start + take > cols {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: vec![rows, cols],
                rhs: vec![start, take],
            });
        }
        let mut out = vec![0.0; rows * take];
        {
            let xd = &self.nodes[x.0].data;
            for r in 0..rows {
                out[r * take..(r + 1) * take]
                    .copy_from_slice(&xd[r * cols + start..r * cols + start + take]);
            }
        }
        let r = self.push(vec![rows, take], out);
        self.ops.push(Op::SliceCols { x, out: r, start, take, cols });
        Ok(r)
    }

    pub fn slice_rows(&mut self, x: NodeRef, start: usize, take: usize) -> Result<NodeRef> {
        let (rows, cols) = self.rows_cols(x, "slice_rows")?;
        if start + take > rows {
            return Err(Error::Dimension {
                op: "slice_rows",
                lhs: vec![rows, cols],
                rhs: vec![start, take],
            });
        }
        let out = self.nodes[x.0].data[start * cols..(start + take) * cols].to_vec();
        let r = self.push(vec![take, cols], out);
        self.ops.push(Op::SliceRows { x, out: r, start, take, cols });
        Ok(r)
    }

    /// Repeats a length-m vector as `copies` identical rows.
    pub fn broadcast_row(&mut self, x: NodeRef, copies: usize) -> Result<NodeRef> {
        let cols = match self.shape(x) {
            [c] => *c,
            [1, c] => *c,
            other => {
                return Err(Error::Dimension {
                    op: "broadcast_row",
                    lhs: other.to_vec(),
                    rhs: vec![copies],
                })
            }
        };
        let mut out = Vec::with_capacity(copies * cols);
        for _ in 0..copies {
            out.extend_from_slice(&self.nodes[x.0].data);
        }
        let r = self.push(vec![copies, cols], out);
        self.ops.push(Op::BroadcastRow { x, out: r, copies, cols });
        Ok(r)
    }

    fn reduce_blocks(&mut self, x: NodeRef, blocks: usize, kind: ReduceKind) -> Result<NodeRef> {
        let (rows, cols) = self.rows_cols(x, "reduce_blocks")?;
        if blocks == 0 || rows % blocks != 0 {
            return Err(Error::Dimension {
                op: "reduce_blocks",
                lhs: vec![rows, cols],
                rhs: vec![blocks],
            });
        }
        let rpb = rows / blocks;
        let mut out = vec![0.0; blocks * cols];
        let mut argmax = Vec::new();
        {
            let xd = &self.nodes[x.0].data;
            match kind {
                ReduceKind::Mean => {
                    for b in 0..blocks {
                        for t in 0..rpb {
                            for c in 0..cols {
                                out[b * cols + c] += xd[(b * rpb + t) * cols + c];
                            }
                        }
                    }
                    for v in &mut out {
                        *v /= rpb as f64;
                    }
                }
                ReduceKind::Max => {
                    argmax = vec![0usize; blocks * cols];
                    out.fill(f64::NEG_INFINITY);
                    for b in 0..blocks {
                        for t in 0..rpb {
                            for c in 0..cols {
                                let src = (b * rpb + t) * cols + c;
                                if xd[src] > out[b * cols + c] {
                                    out[b * cols + c] = xd[src];
                                    argmax[b * cols + c] = src;
                                }
                            }
                        }
                    }
                }
            }
        }
        let r = self.push(vec![blocks, cols], out);
        self.ops.push(Op::ReduceBlocks {
            x,
            out: r,
            blocks,
            rows_per_block: rpb,
            cols,
            kind,
            argmax,
        });
        Ok(r)
    }

    /// Per-block mean over rows: [blocks·t, c] -> [blocks, c].
    pub fn mean_blocks(&mut self, x: NodeRef, blocks: usize) -> Result<NodeRef> {
        self.reduce_blocks(x, blocks, ReduceKind::Mean)
    }

    /// Per-block max over rows: [blocks·t, c] -> [blocks, c].
    pub fn max_blocks(&mut self, x: NodeRef, blocks: usize) -> Result<NodeRef> {
        self.reduce_blocks(x, blocks, ReduceKind::Max)
    }

    // ── reductions / losses ─────────────────────────────────────────

    pub fn sum_all(&mut self, x: NodeRef) -> NodeRef {
        let s: f64 = self.nodes[x.0].data.iter().sum();
        let r = self.push(vec![1], vec![s]);
        self.ops.push(Op::SumAll { x, out: r });
        r
    }

    pub fn mean_all(&mut self, x: NodeRef) -> NodeRef {
        let n = self.nodes[x.0].data.len().max(1);
        let s: f64 = self.nodes[x.0].data.iter().sum::<f64>() / n as f64;
        let r = self.push(vec![1], vec![s]);
        self.ops.push(Op::MeanAll { x, out: r });
        r
    }

    /// Elementwise product with a constant weight array (e.g. a binary mask).
    pub fn mul_mask(&mut self, x: NodeRef, mask: &[f64]) -> Result<NodeRef> {
        if mask.len() != self.nodes[x.0].data.len() {
            return Err(Error::Dimension {
                op: "mul_mask",
                lhs: self.shape(x).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let out: Vec<f64> = self.nodes[x.0]
            .data
            .iter()
            .zip(mask)
            .map(|(v, m)| v * m)
            .collect();
        let r = self.push(self.nodes[x.0].shape.clone(), out);
        self.ops.push(Op::MulMask { x, out: r, mask: mask.to_vec() });
        Ok(r)
    }

    /// Mean over all elements of the pointwise penalty. Differentiable with
    /// respect to both sides.
    pub fn loss(&mut self, pred: NodeRef, target: NodeRef, kind: LossKind) -> Result<NodeRef> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::Dimension {
                op: "loss",
                lhs: self.shape(pred).to_vec(),
                rhs: self.shape(target).to_vec(),
            });
        }
        let n = self.nodes[pred.0].data.len().max(1) as f64;
        let total: f64 = self.nodes[pred.0]
            .data
            .iter()
            .zip(&self.nodes[target.0].data)
            .map(|(p, t)| {
                let e = p - t;
                match kind {
                    LossKind::Mse => e * e,
                    LossKind::Mae => e.abs(),
                    LossKind::LogCosh => ln_cosh(e),
                }
            })
            .sum();
        let r = self.push(vec![1], vec![total / n]);
        self.ops.push(Op::Loss { pred, target, out: r, kind });
        Ok(r)
    }

    pub fn reshape(&mut self, x: NodeRef, shape: Vec<usize>) -> Result<NodeRef> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x.0].data.len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape,
            });
        }
        let data = self.nodes[x.0].data.clone();
        let r = self.push(shape, data);
        self.ops.push(Op::Reshape { x, out: r });
        Ok(r)
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar loss. Writes gradients into the
    /// bound parameters of `store`; parameters the loss does not reach get
    /// zero gradients.
    pub fn backward(&mut self, loss: NodeRef, store: &mut ParamStore) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for op in self.ops.iter().rev() {
            self.backward_op(op, &mut grads);
        }

        for (name, node) in &self.bindings {
            let t = store.get_mut(name)?;
            let grad = match &grads[node.0] {
                Some(g) => g.clone(),
                None => vec![0.0; t.numel()],
            };
            t.set_grad(grad)?;
        }
        Ok(())
    }

    fn backward_op(&self, op: &Op, grads: &mut [Option<Vec<f64>>]) {
        fn take(grads: &[Option<Vec<f64>>], r: NodeRef) -> Option<Vec<f64>> {
            grads[r.0].clone()
        }
        fn acc(grads: &mut [Option<Vec<f64>>], r: NodeRef, add: &[f64]) {
            match &mut grads[r.0] {
                Some(g) => {
                    for (gv, av) in g.iter_mut().zip(add) {
                        *gv += av;
                    }
                }
                None => grads[r.0] = Some(add.to_vec()),
            }
        }

        match op {
            Op::MatMul { a, b, out, n, k, m } => {
                let Some(d) = take(grads, *out) else { return };
                let ad = &self.nodes[a.0].data;
                let bd = &self.nodes[b.0].data;
                // d_a = d @ b^T
                let mut da = vec![0.0; n * k];
                for i in 0..*n {
                    for j in 0..*m {
                        let dv = d[i * m + j];
                        if dv == 0.0 {
                            continue;
                        }
                        for kk in 0..*k {
                            da[i * k + kk] += dv * bd[kk * m + j];
                        }
                    }
                }
                acc(grads, *a, &da);
                // d_b = a^T @ d
                let mut db = vec![0.0; k * m];
                for i in 0..*n {
                    for kk in 0..*k {
                        let av = ad[i * k + kk];
                        if av == 0.0 {
                            continue;
                        }
                        let drow = &d[i * m..(i + 1) * m];
                        let brow = &mut db[kk * m..(kk + 1) * m];
                        for j in 0..*m {
                            brow[j] += av * drow[j];
                        }
                    }
                }
                acc(grads, *b, &db);
            }
            Op::AddBias { x, bias, out, rows, cols } => {
                let Some(d) = take(grads, *out) else { return };
                acc(grads, *x, &d);
                let mut db = vec![0.0; *cols];
                for r in 0..*rows {
                    for c in 0..*cols {
                        db[c] += d[r * cols + c];
                    }
                }
                acc(grads, *bias, &db);
            }
            Op::Add { a, b, out } => {
                let Some(d) = take(grads, *out) else { return };
                acc(grads, *a, &d);
                acc(grads, *b, &d);
            }
            Op::Sub { a, b, out } => {
                let Some(d) = take(grads, *out) else { return };
                acc(grads, *a, &d);
                let neg: Vec<f64> = d.iter().map(|v| -v).collect();
                acc(grads, *b, &neg);
            }
            Op::Mul { a, b, out } => {
                let Some(d) = take(grads, *out) else { return };
                let da: Vec<f64> = d
                    .iter()
                    .zip(&self.nodes[b.0].data)
                    .map(|(dv, bv)| dv * bv)
                    .collect();
                acc(grads, *a, &da);
                let db: Vec<f64> = d
                    .iter()
                    .zip(&self.nodes[a.0].data)
                    .map(|(dv, av)| dv * av)
                    .collect();
                acc(grads, *b, &db);
            }
            Op::ElemMax { a, b, out } => {
                let Some(d) = take(grads, *out) else { return };
                let ad = &self.nodes[a.0].data;
                let bd = &self.nodes[b.0].data;
                // ties route to the first operand
                let da: Vec<f64> = d
                    .iter()
                    .zip(ad.iter().zip(bd))
                    .map(|(dv, (av, bv))| if av >= bv { *dv } else { 0.0 })
                    .collect();
                acc(grads, *a, &da);
                let db: Vec<f64> = d
                    .iter()
                    .zip(ad.iter().zip(bd))
                    .map(|(dv, (av, bv))| if bv > av { *dv } else { 0.0 })
                    .collect();
                acc(grads, *b, &db);
            }
            Op::Affine { x, out, mul } => {
                let Some(d) = take(grads, *out) else { return };
                let dx: Vec<f64> = d.iter().map(|v| v * mul).collect();
                acc(grads, *x, &dx);
            }
            Op::Unary { x, out, kind } => {
                let Some(d) = take(grads, *out) else { return };
                let xd = &self.nodes[x.0].data;
                let yd = &self.nodes[out.0].data;
                let dx: Vec<f64> = d
                    .iter()
                    .enumerate()
                    .map(|(i, dv)| {
                        dv * match kind {
                            UnaryKind::Sigmoid => yd[i] * (1.0 - yd[i]),
                            UnaryKind::Tanh => 1.0 - yd[i] * yd[i],
                            UnaryKind::Relu => {
                                if xd[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::Exp => yd[i],
                            UnaryKind::Softplus => sigmoid(xd[i]),
                            UnaryKind::Clamp { lo, hi } => {
                                if xd[i] > *lo && xd[i] < *hi {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        }
                    })
                    .collect();
                acc(grads, *x, &dx);
            }
            Op::CausalConv1d {
                x,
                kernel,
                out,
                batch,
                steps,
                din,
                dout,
                width,
                dilation,
            } => {
                let Some(d) = take(grads, *out) else { return };
                let xd = &self.nodes[x.0].data;
                let kd = &self.nodes[kernel.0].data;
                let mut dx = vec![0.0; xd.len()];
                let mut dk = vec![0.0; kd.len()];
                for b in 0..*batch {
                    let base = b * steps;
                    for t in 0..*steps {
                        let drow = &d[(base + t) * dout..(base + t + 1) * dout];
                        for j in 0..*width {
                            let lag = (width - 1 - j) * dilation;
                            if lag > t {
                                continue;
                            }
                            let src = base + t - lag;
                            for i in 0..*din {
                                let kbase = (j * din + i) * dout;
                                let xv = xd[src * din + i];
                                let mut g = 0.0;
                                for o in 0..*dout {
                                    g += kd[kbase + o] * drow[o];
                                    dk[kbase + o] += xv * drow[o];
                                }
                                dx[src * din + i] += g;
                            }
                        }
                    }
                }
                acc(grads, *x, &dx);
                acc(grads, *kernel, &dk);
            }
            Op::MaxPool1d { x, out, argmax } => {
                let Some(d) = take(grads, *out) else { return };
                let mut dx = vec![0.0; self.nodes[x.0].data.len()];
                for (o, &src) in argmax.iter().enumerate() {
                    dx[src] += d[o];
                }
                acc(grads, *x, &dx);
            }
            Op::ReverseTime { x, out, batch, steps, cols } => {
                let Some(d) = take(grads, *out) else { return };
                let mut dx = vec![0.0; d.len()];
                for b in 0..*batch {
                    for t in 0..*steps {
                        let src = (b * steps + steps - 1 - t) * cols;
                        let dst = (b * steps + t) * cols;
                        dx[dst..dst + cols].copy_from_slice(&d[src..src + cols]);
                    }
                }
                acc(grads, *x, &dx);
            }
            Op::ConcatCols { xs, out, rows, widths } => {
                let Some(d) = take(grads, *out) else { return };
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (&xr, &w) in xs.iter().zip(widths) {
                    let mut dx = vec![0.0; rows * w];
                    for r in 0..*rows {
                        dx[r * w..(r + 1) * w]
                            .copy_from_slice(&d[r * total + offset..r * total + offset + w]);
                    }
                    acc(grads, xr, &dx);
                    offset += w;
                }
            }
            Op::SliceCols { x, out, start, take: t, cols } => {
                let Some(d) = take(grads, *out) else { return };
                let rows = self.nodes[x.0].data.len() / cols;
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    dx[r * cols + start..r * cols + start + t]
                        .copy_from_slice(&d[r * t..(r + 1) * t]);
                }
                acc(grads, *x, &dx);
            }
            Op::SliceRows { x, out, start, take: t, cols } => {
                let Some(d) = take(grads, *out) else { return };
                let mut dx = vec![0.0; self.nodes[x.0].data.len()];
                dx[start * cols..(start + t) * cols].copy_from_slice(&d);
                acc(grads, *x, &dx);
            }
            Op::BroadcastRow { x, out, copies, cols } => {
                let Some(d) = take(grads, *out) else { return };
                let mut dx = vec![0.0; *cols];
                for r in 0..*copies {
                    for c in 0..*cols {
                        dx[c] += d[r * cols + c];
                    }
                }
                acc(grads, *x, &dx);
            }
            Op::ReduceBlocks {
                x,
                out,
                blocks,
                rows_per_block,
                cols,
                kind,
                argmax,
            } => {
                let Some(d) = take(grads, *out) else { return };
                let mut dx = vec![0.0; self.nodes[x.0].data.len()];
                match kind {
                    ReduceKind::Mean => {
                        let inv = 1.0 / *rows_per_block as f64;
                        for b in 0..*blocks {
                            for t in 0..*rows_per_block {
                                for c in 0..*cols {
                                    dx[(b * rows_per_block + t) * cols + c] +=
                                        d[b * cols + c] * inv;
                                }
                            }
                        }
                    }
                    ReduceKind::Max => {
                        for (o, &src) in argmax.iter().enumerate() {
                            dx[src] += d[o];
                        }
                    }
                }
                acc(grads, *x, &dx);
            }
            Op::SumAll { x, out } => {
                let Some(d) = take(grads, *out) else { return };
                let dx = vec![d[0]; self.nodes[x.0].data.len()];
                acc(grads, *x, &dx);
            }
            Op::MeanAll { x, out } => {
                let Some(d) = take(grads, *out) else { return };
                let n = self.nodes[x.0].data.len().max(1) as f64;
                let dx = vec![d[0] / n; self.nodes[x.0].data.len()];
                acc(grads, *x, &dx);
            }
            Op::MulMask { x, out, mask } => {
                let Some(d) = take(grads, *out) else { return };
                let dx: Vec<f64> = d.iter().zip(mask).map(|(dv, m)| dv * m).collect();
                acc(grads, *x, &dx);
            }
            Op::Loss { pred, target, out, kind } => {
                let Some(d) = take(grads, *out) else { return };
                let scale = d[0] / self.nodes[pred.0].data.len().max(1) as f64;
                let pd = &self.nodes[pred.0].data;
                let td = &self.nodes[target.0].data;
                let dp: Vec<f64> = pd
                    .iter()
                    .zip(td)
                    .map(|(p, t)| {
                        let e = p - t;
                        scale
                            * match kind {
                                LossKind::Mse => 2.0 * e,
                                LossKind::Mae => {
                                    if e > 0.0 {
                                        1.0
                                    } else if e < 0.0 {
                                        -1.0
                                    } else {
                                        0.0
                                    }
                                }
                                LossKind::LogCosh => e.tanh(),
                            }
                    })
                    .collect();
                let dt: Vec<f64> = dp.iter().map(|v| -v).collect();
                acc(grads, *pred, &dp);
                acc(grads, *target, &dt);
            }
            Op::Reshape { x, out } => {
                let Some(d) = take(grads, *out) else { return };
                acc(grads, *x, &d);
            }
        }
    }
}
