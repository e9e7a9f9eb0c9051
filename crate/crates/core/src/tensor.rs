//! Dense f64 tensors with a tape-based reverse-mode autodiff graph.
//!
//! The graph is rebuilt for every forward pass. Nodes are stored in
//! topological order by construction, so backward is a single reverse
//! sweep over the tape. Gradients accumulate additively at fan-out.

use crate::error::{Error, Result};

/// Sentinel target id for positions that contribute nothing to the loss.
pub const IGNORE_INDEX: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length must equal product of shape"
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Raw 2D matmul: C[m,n] += A[m,k] * B[k,n].
fn matmul_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += av * b_row[j];
            }
        }
    }
}

/// C[m,n] += A[m,k] * B[n,k]^T.
fn matmul_bt_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for p in 0..k {
                s += a_row[p] * b_row[p];
            }
            c_row[j] += s;
        }
    }
}

/// C[k,n] += A[m,k]^T * B[m,n].
fn matmul_at_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += av * b_row[j];
            }
        }
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    /// x[p,d] + bias[d] broadcast over rows.
    AddRow {
        x: NodeId,
        bias: NodeId,
    },
    Scale {
        x: NodeId,
        c: f64,
    },
    Matmul {
        a: NodeId,
        b: NodeId,
    },
    /// a[m,k] * b[n,k]^T
    MatmulBt {
        a: NodeId,
        b: NodeId,
    },
    Relu {
        x: NodeId,
    },
    /// Per-row layer norm with affine gain/bias; caches (mean, rstd) per row.
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        cache: Vec<(f64, f64)>,
    },
    SoftmaxRows {
        x: NodeId,
    },
    Embedding {
        table: NodeId,
        ids: Vec<usize>,
    },
    SliceRows {
        x: NodeId,
        start: usize,
    },
    SliceCols {
        x: NodeId,
        start: usize,
        len: usize,
    },
    ConcatCols {
        xs: Vec<NodeId>,
    },
    /// Mean NLL over non-ignored rows; caches softmax probabilities.
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Vec<f64>,
        count: usize,
    },
    Sum {
        x: NodeId,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

/// Dynamic computation graph, one per forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    fn needs_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id].grad.as_deref()
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> NodeId {
        self.push(Op::Leaf, t, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].value.shape != self.nodes[b].value.shape {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: self.nodes[a].value.shape.clone(),
                right: self.nodes[b].value.shape.clone(),
            });
        }
        let data = self.nodes[a]
            .value
            .data
            .iter()
            .zip(&self.nodes[b].value.data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a].value.shape.clone();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Op::Add { a, b }, Tensor::new(shape, data), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].value.shape != self.nodes[b].value.shape {
            return Err(Error::ShapeMismatch {
                op: "mul",
                left: self.nodes[a].value.shape.clone(),
                right: self.nodes[b].value.shape.clone(),
            });
        }
        let data = self.nodes[a]
            .value
            .data
            .iter()
            .zip(&self.nodes[b].value.data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a].value.shape.clone();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Op::Mul { a, b }, Tensor::new(shape, data), rg))
    }

    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let d = *self.nodes[x].value.shape.last().unwrap();
        if self.nodes[bias].value.shape != [d] {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: self.nodes[x].value.shape.clone(),
                right: self.nodes[bias].value.shape.clone(),
            });
        }
        let bias_data = self.nodes[bias].value.data.clone();
        let mut data = self.nodes[x].value.data.clone();
        for chunk in data.chunks_mut(d) {
            for (v, b) in chunk.iter_mut().zip(&bias_data) {
                *v += b;
            }
        }
        let shape = self.nodes[x].value.shape.clone();
        let rg = self.needs_grad(&[x, bias]);
        Ok(self.push(Op::AddRow { x, bias }, Tensor::new(shape, data), rg))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let data = self.nodes[x].value.data.iter().map(|v| v * c).collect();
        let shape = self.nodes[x].value.shape.clone();
        let rg = self.nodes[x].requires_grad;
        self.push(Op::Scale { x, c }, Tensor::new(shape, data), rg)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (
            self.nodes[a].value.shape.clone(),
            self.nodes[b].value.shape.clone(),
        );
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![0.0; m * n];
        matmul_acc(
            &mut data,
            &self.nodes[a].value.data,
            &self.nodes[b].value.data,
            m,
            k,
            n,
        );
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Op::Matmul { a, b }, Tensor::new(vec![m, n], data), rg))
    }

    /// a[m,k] * b[n,k]^T -> [m,n]
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (
            self.nodes[a].value.shape.clone(),
            self.nodes[b].value.shape.clone(),
        );
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::ShapeMismatch {
                op: "matmul_bt",
                left: sa,
                right: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut data = vec![0.0; m * n];
        matmul_bt_acc(
            &mut data,
            &self.nodes[a].value.data,
            &self.nodes[b].value.data,
            m,
            k,
            n,
        );
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Op::MatmulBt { a, b }, Tensor::new(vec![m, n], data), rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let data = self.nodes[x].value.data.iter().map(|v| v.max(0.0)).collect();
        let shape = self.nodes[x].value.shape.clone();
        let rg = self.nodes[x].requires_grad;
        self.push(Op::Relu { x }, Tensor::new(shape, data), rg)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        assert!(eps > 0.0, "layer_norm eps must be positive");
        let d = *self.nodes[x].value.shape.last().unwrap();
        for affine in [gain, bias] {
            if self.nodes[affine].value.shape != [d] {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    left: self.nodes[x].value.shape.clone(),
                    right: self.nodes[affine].value.shape.clone(),
                });
            }
        }
        let rows = self.nodes[x].value.numel() / d;
        let mut data = vec![0.0; rows * d];
        let mut cache = Vec::with_capacity(rows);
        {
            let xd = &self.nodes[x].value.data;
            let g = &self.nodes[gain].value.data;
            let b = &self.nodes[bias].value.data;
            for r in 0..rows {
                let row = &xd[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let rstd = 1.0 / (var + eps).sqrt();
                cache.push((mean, rstd));
                for j in 0..d {
                    data[r * d + j] = (row[j] - mean) * rstd * g[j] + b[j];
                }
            }
        }
        let shape = self.nodes[x].value.shape.clone();
        let rg = self.needs_grad(&[x, gain, bias]);
        Ok(self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                cache,
            },
            Tensor::new(shape, data),
            rg,
        ))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let d = *self.nodes[x].value.shape.last().unwrap();
        let mut data = self.nodes[x].value.data.clone();
        for row in data.chunks_mut(d) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let shape = self.nodes[x].value.shape.clone();
        let rg = self.nodes[x].requires_grad;
        self.push(Op::SoftmaxRows { x }, Tensor::new(shape, data), rg)
    }

    /// Gather rows of `table` at `ids` -> [ids.len(), d].
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let v = self.nodes[table].value.rows();
        let d = self.nodes[table].value.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::IndexOutOfRange {
                    op: "embedding",
                    index: id,
                    bound: v,
                });
            }
            data.extend_from_slice(&self.nodes[table].value.data[id * d..(id + 1) * d]);
        }
        let rg = self.nodes[table].requires_grad;
        Ok(self.push(
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            Tensor::new(vec![ids.len(), d], data),
            rg,
        ))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let rows = self.nodes[x].value.rows();
        let d = self.nodes[x].value.cols();
        if start + len > rows {
            return Err(Error::IndexOutOfRange {
                op: "slice_rows",
                index: start + len,
                bound: rows,
            });
        }
        let data = self.nodes[x].value.data[start * d..(start + len) * d].to_vec();
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(
            Op::SliceRows { x, start },
            Tensor::new(vec![len, d], data),
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let rows = self.nodes[x].value.rows();
        let d = self.nodes[x].value.cols();
        if start + len > d {
            return Err(Error::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                bound: d,
            });
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&self.nodes[x].value.data[r * d + start..r * d + start + len]);
        }
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(
            Op::SliceCols { x, start, len },
            Tensor::new(vec![rows, len], data),
            rg,
        ))
    }

    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        assert!(!xs.is_empty());
        let rows = self.nodes[xs[0]].value.rows();
        let total: usize = xs.iter().map(|&x| self.nodes[x].value.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &x in xs {
                let d = self.nodes[x].value.cols();
                if self.nodes[x].value.rows() != rows {
                    return Err(Error::ShapeMismatch {
                        op: "concat_cols",
                        left: self.nodes[xs[0]].value.shape.clone(),
                        right: self.nodes[x].value.shape.clone(),
                    });
                }
                data.extend_from_slice(&self.nodes[x].value.data[r * d..(r + 1) * d]);
            }
        }
        let rg = self.needs_grad(xs);
        Ok(self.push(
            Op::ConcatCols { xs: xs.to_vec() },
            Tensor::new(vec![rows, total], data),
            rg,
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-softmax of `logits`.
    /// Rows whose target equals [`IGNORE_INDEX`] contribute nothing.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
    ) -> Result<NodeId> {
        let n = self.nodes[logits].value.rows();
        let v = self.nodes[logits].value.cols();
        if targets.len() != n {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                left: vec![n, v],
                right: vec![targets.len()],
            });
        }
        let mut probs = vec![0.0; n * v];
        let mut loss = 0.0;
        let mut count = 0usize;
        {
            let ld = &self.nodes[logits].value.data;
            for (i, &t) in targets.iter().enumerate() {
                if t == IGNORE_INDEX {
                    continue;
                }
                if t >= v {
                    return Err(Error::IndexOutOfRange {
                        op: "cross_entropy",
                        index: t,
                        bound: v,
                    });
                }
                let row = &ld[i * v..(i + 1) * v];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..v {
                    let e = (row[j] - max).exp();
                    probs[i * v + j] = e;
                    sum += e;
                }
                for j in 0..v {
                    probs[i * v + j] /= sum;
                }
                loss += -(probs[i * v + t].max(f64::MIN_POSITIVE)).ln();
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::AllIgnored);
        }
        loss /= count as f64;
        let rg = self.nodes[logits].requires_grad;
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            Tensor::scalar(loss),
            rg,
        ))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x].value.data.iter().sum();
        let rg = self.nodes[x].requires_grad;
        self.push(Op::Sum { x }, Tensor::scalar(s), rg)
    }

    fn grad_buf(&mut self, id: NodeId) -> &mut Vec<f64> {
        let n = self.nodes[id].value.numel();
        self.nodes[id].grad.get_or_insert_with(|| vec![0.0; n])
    }

    /// Reverse sweep from a scalar `root`. Gradients accumulate; call once
    /// per graph.
    pub fn backward(&mut self, root: NodeId) {
        assert_eq!(self.nodes[root].value.numel(), 1, "backward root must be scalar");
        *self.grad_buf(root) = vec![1.0];
        for id in (0..=root).rev() {
            if !self.nodes[id].requires_grad || self.nodes[id].grad.is_none() {
                continue;
            }
            let grad = self.nodes[id].grad.clone().unwrap();
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add { a, b } => {
                    for (src, _) in [(a, 0), (b, 1)] {
                        if self.nodes[src].requires_grad {
                            let g = self.grad_buf(src);
                            for (gv, dv) in g.iter_mut().zip(&grad) {
                                *gv += dv;
                            }
                        }
                    }
                }
                Op::Mul { a, b } => {
                    if self.nodes[a].requires_grad {
                        let bd = self.nodes[b].value.data.clone();
                        let g = self.grad_buf(a);
                        for i in 0..grad.len() {
                            g[i] += grad[i] * bd[i];
                        }
                    }
                    if self.nodes[b].requires_grad {
                        let ad = self.nodes[a].value.data.clone();
                        let g = self.grad_buf(b);
                        for i in 0..grad.len() {
                            g[i] += grad[i] * ad[i];
                        }
                    }
                }
                Op::AddRow { x, bias } => {
                    let d = self.nodes[bias].value.numel();
                    if self.nodes[x].requires_grad {
                        let g = self.grad_buf(x);
                        for (gv, dv) in g.iter_mut().zip(&grad) {
                            *gv += dv;
                        }
                    }
                    if self.nodes[bias].requires_grad {
                        let g = self.grad_buf(bias);
                        for (i, dv) in grad.iter().enumerate() {
                            g[i % d] += dv;
                        }
                    }
                }
                Op::Scale { x, c } => {
                    if self.nodes[x].requires_grad {
                        let g = self.grad_buf(x);
                        for (gv, dv) in g.iter_mut().zip(&grad) {
                            *gv += dv * c;
                        }
                    }
                }
                Op::Matmul { a, b } => {
                    let (m, k) = (self.nodes[a].value.rows(), self.nodes[a].value.cols());
                    let n = self.nodes[b].value.cols();
                    if self.nodes[a].requires_grad {
                        // dA = dC * B^T
                        let bd = self.nodes[b].value.data.clone();
                        let g = self.grad_buf(a);
                        matmul_bt_acc(g, &grad, &bd, m, n, k);
                    }
                    if self.nodes[b].requires_grad {
                        // dB = A^T * dC
                        let ad = self.nodes[a].value.data.clone();
                        let g = self.grad_buf(b);
                        matmul_at_acc(g, &ad, &grad, m, k, n);
                    }
                }
                Op::MatmulBt { a, b } => {
                    let (m, k) = (self.nodes[a].value.rows(), self.nodes[a].value.cols());
                    let n = self.nodes[b].value.rows();
                    if self.nodes[a].requires_grad {
                        // dA = dC * B
                        let bd = self.nodes[b].value.data.clone();
                        let g = self.grad_buf(a);
                        matmul_acc(g, &grad, &bd, m, n, k);
                    }
                    if self.nodes[b].requires_grad {
                        // dB = dC^T * A
                        let ad = self.nodes[a].value.data.clone();
                        let g = self.grad_buf(b);
                        matmul_at_acc(g, &grad, &ad, m, n, k);
                    }
                }
                Op::Relu { x } => {
                    if self.nodes[x].requires_grad {
                        let xd = self.nodes[x].value.data.clone();
                        let g = self.grad_buf(x);
                        for i in 0..grad.len() {
                            if xd[i] > 0.0 {
                                g[i] += grad[i];
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    cache,
                } => {
                    let d = self.nodes[gain].value.numel();
                    let rows = grad.len() / d;
                    let xd = self.nodes[x].value.data.clone();
                    let gd = self.nodes[gain].value.data.clone();
                    for r in 0..rows {
                        let (mean, rstd) = cache[r];
                        let xrow = &xd[r * d..(r + 1) * d];
                        let drow = &grad[r * d..(r + 1) * d];
                        let xhat: Vec<f64> =
                            xrow.iter().map(|v| (v - mean) * rstd).collect();
                        if self.nodes[gain].requires_grad {
                            let g = self.grad_buf(gain);
                            for j in 0..d {
                                g[j] += drow[j] * xhat[j];
                            }
                        }
                        if self.nodes[bias].requires_grad {
                            let g = self.grad_buf(bias);
                            for j in 0..d {
                                g[j] += drow[j];
                            }
                        }
                        if self.nodes[x].requires_grad {
                            let dyh: Vec<f64> =
                                (0..d).map(|j| drow[j] * gd[j]).collect();
                            let mean_dyh = dyh.iter().sum::<f64>() / d as f64;
                            let mean_dyh_xhat =
                                dyh.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>()
                                    / d as f64;
                            let g = self.grad_buf(x);
                            for j in 0..d {
                                g[r * d + j] +=
                                    rstd * (dyh[j] - mean_dyh - xhat[j] * mean_dyh_xhat);
                            }
                        }
                    }
                }
                Op::SoftmaxRows { x } => {
                    if self.nodes[x].requires_grad {
                        let d = *self.nodes[id].value.shape.last().unwrap();
                        let p = self.nodes[id].value.data.clone();
                        let g = self.grad_buf(x);
                        let rows = grad.len() / d;
                        for r in 0..rows {
                            let prow = &p[r * d..(r + 1) * d];
                            let drow = &grad[r * d..(r + 1) * d];
                            let dot: f64 =
                                prow.iter().zip(drow).map(|(a, b)| a * b).sum();
                            for j in 0..d {
                                g[r * d + j] += prow[j] * (drow[j] - dot);
                            }
                        }
                    }
                }
                Op::Embedding { table, ids } => {
                    if self.nodes[table].requires_grad {
                        let d = self.nodes[table].value.cols();
                        let g = self.grad_buf(table);
                        for (i, &tok) in ids.iter().enumerate() {
                            for j in 0..d {
                                g[tok * d + j] += grad[i * d + j];
                            }
                        }
                    }
                }
                Op::SliceRows { x, start } => {
                    if self.nodes[x].requires_grad {
                        let d = self.nodes[x].value.cols();
                        let g = self.grad_buf(x);
                        for (i, dv) in grad.iter().enumerate() {
                            g[start * d + i] += dv;
                        }
                    }
                }
                Op::SliceCols { x, start, len } => {
                    if self.nodes[x].requires_grad {
                        let d = self.nodes[x].value.cols();
                        let rows = grad.len() / len;
                        let g = self.grad_buf(x);
                        for r in 0..rows {
                            for j in 0..len {
                                g[r * d + start + j] += grad[r * len + j];
                            }
                        }
                    }
                }
                Op::ConcatCols { xs } => {
                    let total = *self.nodes[id].value.shape.last().unwrap();
                    let rows = grad.len() / total;
                    let mut offset = 0;
                    for &x in &xs {
                        let d = self.nodes[x].value.cols();
                        if self.nodes[x].requires_grad {
                            let g = self.grad_buf(x);
                            for r in 0..rows {
                                for j in 0..d {
                                    g[r * d + j] += grad[r * total + offset + j];
                                }
                            }
                        }
                        offset += d;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    if self.nodes[logits].requires_grad {
                        let v = self.nodes[logits].value.cols();
                        let scale = grad[0] / count as f64;
                        let g = self.grad_buf(logits);
                        for (i, &t) in targets.iter().enumerate() {
                            if t == IGNORE_INDEX {
                                continue;
                            }
                            for j in 0..v {
                                let mut d = probs[i * v + j];
                                if j == t {
                                    d -= 1.0;
                                }
                                g[i * v + j] += scale * d;
                            }
                        }
                    }
                }
                Op::Sum { x } => {
                    if self.nodes[x].requires_grad {
                        let g = self.grad_buf(x);
                        for gv in g.iter_mut() {
                            *gv += grad[0];
                        }
                    }
                }
            }
        }
    }
}
