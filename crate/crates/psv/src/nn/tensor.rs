//! Reverse-mode tape over 2-D matrices.
//!
//! Every forward operation records a node; `backward` sweeps the tape in
//! reverse, accumulating gradients into each node and finally into the
//! parameter store. The op set is exactly what the encoder, voting and task
//! heads need, not a general tensor algebra.

use ndarray::{s, Array2, Axis};

use super::params::{ParamId, ParamStore};
use crate::{Error, Result};

pub type Matrix = Array2<f64>;

/// Index of a node on the tape.
pub type NodeId = usize;

enum Op {
    Leaf {
        param: Option<ParamId>,
    },
    Matmul(NodeId, NodeId),
    /// Broadcast-add a 1xF bias row to every row.
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddN(Vec<NodeId>),
    Scale(NodeId, f64),
    AddConst(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
    GatherRows(NodeId, Vec<usize>),
    /// Repeat a 1xF row n times.
    RepeatRow(NodeId),
    SegmentMax {
        x: NodeId,
        argmax: Vec<usize>,
    },
    SegmentMean {
        x: NodeId,
        segments: Vec<(usize, usize)>,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        x_hat: Matrix,
        inv_std: Vec<f64>,
        train: bool,
    },
    Dropout(NodeId, Matrix),
    /// Product-of-Gaussians argmax: per segment the precision-weighted mean.
    PogCombine {
        mu: NodeId,
        var: NodeId,
        segments: Vec<(usize, usize)>,
        precision_sum: Matrix,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Matrix,
    },
    /// Symmetric squared Chamfer loss of predicted rows against a fixed cloud.
    ChamferLoss {
        pred: NodeId,
        target: Matrix,
        pred_to_target: Vec<usize>,
        target_to_pred: Vec<usize>,
    },
    Sum(NodeId),
}

struct Node {
    value: Matrix,
    grad: Matrix,
    op: Op,
}

/// One forward computation and its reverse sweep. A tape is single-use:
/// build the forward pass, call [`Tape::backward`] once, read gradients.
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        let grad = Array2::zeros(value.raw_dim());
        self.nodes.push(Node { value, grad, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: NodeId) -> &Matrix {
        &self.nodes[id].grad
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        assert_eq!(self.nodes[id].value.len(), 1, "node is not a scalar");
        self.nodes[id].value[[0, 0]]
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf { param: None })
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.value(id).clone(), Op::Leaf { param: Some(id) })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.nodes[a].value.dim();
        let (br, bc) = self.nodes[b].value.dim();
        if ac != br {
            return Err(Error::ShapeMismatch(format!(
                "matmul {ar}x{ac} . {br}x{bc}"
            )));
        }
        let value = self.nodes[a].value.dot(&self.nodes[b].value);
        Ok(self.push(value, Op::Matmul(a, b)))
    }

    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (_, xc) = self.nodes[x].value.dim();
        let (br, bc) = self.nodes[bias].value.dim();
        if br != 1 || bc != xc {
            return Err(Error::ShapeMismatch(format!(
                "bias {br}x{bc} against {xc} columns"
            )));
        }
        let value = &self.nodes[x].value + &self.nodes[bias].value;
        Ok(self.push(value, Op::AddRow(x, bias)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.nodes[a].value.dim(), self.nodes[b].value.dim());
        let value = &self.nodes[a].value + &self.nodes[b].value;
        self.push(value, Op::Add(a, b))
    }

    pub fn add_n(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        let mut value = self.nodes[xs[0]].value.clone();
        for &x in &xs[1..] {
            value += &self.nodes[x].value;
        }
        self.push(value, Op::AddN(xs.to_vec()))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = &self.nodes[x].value * c;
        self.push(value, Op::Scale(x, c))
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = &self.nodes[x].value + c;
        self.push(value, Op::AddConst(x))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.mapv(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.mapv(softplus);
        self.push(value, Op::Softplus(x))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.nodes[a].value.dim();
        let (br, bc) = self.nodes[b].value.dim();
        assert_eq!(ar, br, "concat_cols row mismatch");
        let mut value = Array2::zeros((ar, ac + bc));
        value.slice_mut(s![.., ..ac]).assign(&self.nodes[a].value);
        value.slice_mut(s![.., ac..]).assign(&self.nodes[b].value);
        self.push(value, Op::ConcatCols(a, b))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> NodeId {
        let value = self.nodes[x].value.slice(s![.., start..end]).to_owned();
        self.push(value, Op::SliceCols(x, start, end))
    }

    pub fn gather_rows(&mut self, x: NodeId, indices: &[usize]) -> NodeId {
        let src = &self.nodes[x].value;
        let cols = src.ncols();
        let mut value = Array2::zeros((indices.len(), cols));
        for (r, &i) in indices.iter().enumerate() {
            value.row_mut(r).assign(&src.row(i));
        }
        self.push(value, Op::GatherRows(x, indices.to_vec()))
    }

    pub fn repeat_row(&mut self, x: NodeId, n: usize) -> NodeId {
        let src = &self.nodes[x].value;
        assert_eq!(src.nrows(), 1, "repeat_row needs a single row");
        let mut value = Array2::zeros((n, src.ncols()));
        for mut row in value.rows_mut() {
            row.assign(&src.row(0));
        }
        self.push(value, Op::RepeatRow(x))
    }

    /// Column-wise max over each contiguous row segment; ties resolve to the
    /// lowest row index.
    pub fn segment_max(&mut self, x: NodeId, segments: &[(usize, usize)]) -> NodeId {
        let src = &self.nodes[x].value;
        let cols = src.ncols();
        let mut value = Array2::zeros((segments.len(), cols));
        let mut argmax = vec![0usize; segments.len() * cols];
        for (si, &(start, end)) in segments.iter().enumerate() {
            assert!(start < end && end <= src.nrows(), "bad segment {start}..{end}");
            for c in 0..cols {
                let mut best_row = start;
                let mut best = src[[start, c]];
                for r in start + 1..end {
                    if src[[r, c]] > best {
                        best = src[[r, c]];
                        best_row = r;
                    }
                }
                value[[si, c]] = best;
                argmax[si * cols + c] = best_row;
            }
        }
        self.push(value, Op::SegmentMax { x, argmax })
    }

    pub fn segment_mean(&mut self, x: NodeId, segments: &[(usize, usize)]) -> NodeId {
        let src = &self.nodes[x].value;
        let cols = src.ncols();
        let mut value = Array2::zeros((segments.len(), cols));
        for (si, &(start, end)) in segments.iter().enumerate() {
            assert!(start < end && end <= src.nrows(), "bad segment {start}..{end}");
            let len = (end - start) as f64;
            for c in 0..cols {
                let mut acc = 0.0;
                for r in start..end {
                    acc += src[[r, c]];
                }
                value[[si, c]] = acc / len;
            }
        }
        self.push(
            value,
            Op::SegmentMean {
                x,
                segments: segments.to_vec(),
            },
        )
    }

    /// Feature-wise normalization. In train mode batch statistics are used
    /// and `running` (mean row 0, var row 1) is updated in place with
    /// `momentum`; in eval mode `running` statistics normalize directly.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running: &mut Matrix,
        momentum: f64,
        eps: f64,
        train: bool,
    ) -> Result<NodeId> {
        let src = self.nodes[x].value.clone();
        let (rows, cols) = src.dim();
        if train && rows < 2 {
            return Err(Error::InvalidArgument(format!(
                "batchnorm in train mode needs batch >= 2, got {rows}"
            )));
        }
        let (mean, var): (Vec<f64>, Vec<f64>) = if train {
            let mean: Vec<f64> = (0..cols)
                .map(|c| src.column(c).sum() / rows as f64)
                .collect();
            let var: Vec<f64> = (0..cols)
                .map(|c| {
                    src.column(c)
                        .iter()
                        .map(|v| (v - mean[c]).powi(2))
                        .sum::<f64>()
                        / rows as f64
                })
                .collect();
            for c in 0..cols {
                running[[0, c]] = (1.0 - momentum) * running[[0, c]] + momentum * mean[c];
                running[[1, c]] = (1.0 - momentum) * running[[1, c]] + momentum * var[c];
            }
            (mean, var)
        } else {
            (
                running.row(0).to_vec(),
                running.row(1).to_vec(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut x_hat = src;
        for c in 0..cols {
            for r in 0..rows {
                x_hat[[r, c]] = (x_hat[[r, c]] - mean[c]) * inv_std[c];
            }
        }
        let g = &self.nodes[gamma].value;
        let b = &self.nodes[beta].value;
        let mut value = x_hat.clone();
        for c in 0..cols {
            for r in 0..rows {
                value[[r, c]] = value[[r, c]] * g[[0, c]] + b[[0, c]];
            }
        }
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                train,
            },
        ))
    }

    /// Multiply by a precomputed dropout mask (zeros and 1/(1-p) survivors).
    pub fn dropout_mask(&mut self, x: NodeId, mask: Matrix) -> NodeId {
        assert_eq!(self.nodes[x].value.dim(), mask.dim());
        let value = &self.nodes[x].value * &mask;
        self.push(value, Op::Dropout(x, mask))
    }

    /// Per-segment argmax of the product of diagonal Gaussians: the
    /// precision-weighted mean of the segment's votes, per dimension.
    pub fn pog_combine(
        &mut self,
        mu: NodeId,
        var: NodeId,
        segments: &[(usize, usize)],
    ) -> NodeId {
        let mu_v = &self.nodes[mu].value;
        let var_v = &self.nodes[var].value;
        assert_eq!(mu_v.dim(), var_v.dim());
        let cols = mu_v.ncols();
        let mut value = Array2::zeros((segments.len(), cols));
        let mut precision_sum = Array2::zeros((segments.len(), cols));
        for (si, &(start, end)) in segments.iter().enumerate() {
            assert!(start < end && end <= mu_v.nrows(), "bad segment {start}..{end}");
            for c in 0..cols {
                let mut s1 = 0.0;
                let mut s2 = 0.0;
                for r in start..end {
                    let p = 1.0 / var_v[[r, c]];
                    s1 += mu_v[[r, c]] * p;
                    s2 += p;
                }
                value[[si, c]] = s1 / s2;
                precision_sum[[si, c]] = s2;
            }
        }
        self.push(
            value,
            Op::PogCombine {
                mu,
                var,
                segments: segments.to_vec(),
                precision_sum,
            },
        )
    }

    /// Mean over rows of -log softmax(logits)[target].
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let src = &self.nodes[logits].value;
        let (rows, cols) = src.dim();
        if targets.len() != rows {
            return Err(Error::ShapeMismatch(format!(
                "{} targets for {rows} logit rows",
                targets.len()
            )));
        }
        for (r, &t) in targets.iter().enumerate() {
            if t >= cols {
                return Err(Error::InvalidArgument(format!(
                    "target {t} out of range [0,{cols}) at row {r}"
                )));
            }
        }
        let mut probs = Array2::zeros((rows, cols));
        let mut loss = 0.0;
        for r in 0..rows {
            let row = src.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for c in 0..cols {
                let e = (row[c] - max).exp();
                probs[[r, c]] = e;
                denom += e;
            }
            for c in 0..cols {
                probs[[r, c]] /= denom;
            }
            loss -= (src[[r, targets[r]]] - max - denom.ln()) / rows as f64;
        }
        let value = Array2::from_elem((1, 1), loss);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Differentiable symmetric squared Chamfer loss of predicted points
    /// (rows of `pred`, 3 columns) against a fixed target cloud. Nearest
    /// neighbors are fixed at forward time, the standard subgradient.
    pub fn chamfer_loss(&mut self, pred: NodeId, target: Matrix) -> NodeId {
        let pred_v = &self.nodes[pred].value;
        assert_eq!(pred_v.ncols(), 3);
        assert_eq!(target.ncols(), 3);
        let pred_pts: Vec<[f64; 3]> = pred_v
            .rows()
            .into_iter()
            .map(|r| [r[0], r[1], r[2]])
            .collect();
        let target_pts: Vec<[f64; 3]> = target
            .rows()
            .into_iter()
            .map(|r| [r[0], r[1], r[2]])
            .collect();
        let (pred_to_target, target_to_pred) =
            crate::geometry::chamfer_correspondences(&pred_pts, &target_pts);
        let m = pred_pts.len() as f64;
        let t = target_pts.len() as f64;
        let mut loss = 0.0;
        for (i, p) in pred_pts.iter().enumerate() {
            loss += crate::geometry::dist_sq(*p, target_pts[pred_to_target[i]]) / m;
        }
        for (j, q) in target_pts.iter().enumerate() {
            loss += crate::geometry::dist_sq(*q, pred_pts[target_to_pred[j]]) / t;
        }
        let value = Array2::from_elem((1, 1), loss);
        self.push(
            value,
            Op::ChamferLoss {
                pred,
                target,
                pred_to_target,
                target_to_pred,
            },
        )
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = Array2::from_elem((1, 1), self.nodes[x].value.sum());
        self.push(value, Op::Sum(x))
    }

    /// Reverse sweep from a scalar loss node. Errors if called twice on the
    /// same tape.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::InvalidArgument(
                "backward called twice without a new forward pass".into(),
            ));
        }
        if self.nodes[loss].value.len() != 1 {
            return Err(Error::InvalidArgument(
                "backward requires a scalar loss node".into(),
            ));
        }
        self.backward_done = true;
        self.nodes[loss].grad[[0, 0]] = 1.0;
        for id in (0..=loss).rev() {
            // take the node's grad to satisfy the borrow checker while
            // accumulating into input nodes
            let grad = std::mem::replace(
                &mut self.nodes[id].grad,
                Array2::zeros((0, 0)),
            );
            self.propagate(id, &grad);
            self.nodes[id].grad = grad;
        }
        Ok(())
    }

    fn propagate(&mut self, id: NodeId, dy: &Matrix) {
        match &self.nodes[id].op {
            Op::Leaf { .. } => {}
            &Op::Matmul(a, b) => {
                let da = dy.dot(&self.nodes[b].value.t());
                let db = self.nodes[a].value.t().dot(dy);
                self.nodes[a].grad += &da;
                self.nodes[b].grad += &db;
            }
            &Op::AddRow(x, bias) => {
                self.nodes[x].grad += dy;
                let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                self.nodes[bias].grad += &db;
            }
            &Op::Add(a, b) => {
                self.nodes[a].grad += dy;
                self.nodes[b].grad += dy;
            }
            Op::AddN(xs) => {
                for &x in &xs.clone() {
                    self.nodes[x].grad += dy;
                }
            }
            &Op::Scale(x, c) => {
                self.nodes[x].grad.scaled_add(c, dy);
            }
            &Op::AddConst(x) => {
                self.nodes[x].grad += dy;
            }
            &Op::Relu(x) => {
                let mask = self.nodes[x].value.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                self.nodes[x].grad += &(dy * &mask);
            }
            &Op::Softplus(x) => {
                let sig = self.nodes[x].value.mapv(sigmoid);
                self.nodes[x].grad += &(dy * &sig);
            }
            &Op::ConcatCols(a, b) => {
                let ac = self.nodes[a].value.ncols();
                let da = dy.slice(s![.., ..ac]).to_owned();
                let db = dy.slice(s![.., ac..]).to_owned();
                self.nodes[a].grad += &da;
                self.nodes[b].grad += &db;
            }
            &Op::SliceCols(x, start, end) => {
                let mut dx = self.nodes[x].grad.slice_mut(s![.., start..end]);
                dx += dy;
            }
            Op::GatherRows(x, indices) => {
                let (x, indices) = (*x, indices.clone());
                for (r, &i) in indices.iter().enumerate() {
                    let mut row = self.nodes[x].grad.row_mut(i);
                    row += &dy.row(r);
                }
            }
            &Op::RepeatRow(x) => {
                let dx = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                self.nodes[x].grad += &dx;
            }
            Op::SegmentMax { x, argmax } => {
                let x = *x;
                let argmax = argmax.clone();
                let cols = dy.ncols();
                for si in 0..dy.nrows() {
                    for c in 0..cols {
                        self.nodes[x].grad[[argmax[si * cols + c], c]] += dy[[si, c]];
                    }
                }
            }
            Op::SegmentMean { x, segments } => {
                let x = *x;
                let segments = segments.clone();
                for (si, (start, end)) in segments.iter().enumerate() {
                    let w = 1.0 / (end - start) as f64;
                    for r in *start..*end {
                        for c in 0..dy.ncols() {
                            self.nodes[x].grad[[r, c]] += dy[[si, c]] * w;
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                train,
            } => {
                let (x, gamma, beta, train) = (*x, *gamma, *beta, *train);
                let x_hat = x_hat.clone();
                let inv_std = inv_std.clone();
                let (rows, cols) = dy.dim();
                let g = self.nodes[gamma].value.clone();
                // dgamma, dbeta
                for c in 0..cols {
                    let mut dg = 0.0;
                    let mut db = 0.0;
                    for r in 0..rows {
                        dg += dy[[r, c]] * x_hat[[r, c]];
                        db += dy[[r, c]];
                    }
                    self.nodes[gamma].grad[[0, c]] += dg;
                    self.nodes[beta].grad[[0, c]] += db;
                }
                if train {
                    // dx = g*inv_std * (dy - mean(dy) - x_hat * mean(dy*x_hat))
                    for c in 0..cols {
                        let n = rows as f64;
                        let mut mean_dy = 0.0;
                        let mut mean_dy_xhat = 0.0;
                        for r in 0..rows {
                            mean_dy += dy[[r, c]];
                            mean_dy_xhat += dy[[r, c]] * x_hat[[r, c]];
                        }
                        mean_dy /= n;
                        mean_dy_xhat /= n;
                        let scale = g[[0, c]] * inv_std[c];
                        for r in 0..rows {
                            self.nodes[x].grad[[r, c]] += scale
                                * (dy[[r, c]] - mean_dy - x_hat[[r, c]] * mean_dy_xhat);
                        }
                    }
                } else {
                    for c in 0..cols {
                        let scale = g[[0, c]] * inv_std[c];
                        for r in 0..rows {
                            self.nodes[x].grad[[r, c]] += scale * dy[[r, c]];
                        }
                    }
                }
            }
            Op::Dropout(x, mask) => {
                let x = *x;
                let d = dy * mask;
                self.nodes[x].grad += &d;
            }
            Op::PogCombine {
                mu,
                var,
                segments,
                precision_sum,
            } => {
                let (mu, var) = (*mu, *var);
                let segments = segments.clone();
                let s2 = precision_sum.clone();
                let z = self.nodes[id].value.clone();
                let mu_v = self.nodes[mu].value.clone();
                let var_v = self.nodes[var].value.clone();
                for (si, (start, end)) in segments.iter().enumerate() {
                    for c in 0..dy.ncols() {
                        let g = dy[[si, c]];
                        if g == 0.0 {
                            continue;
                        }
                        for r in *start..*end {
                            let v = var_v[[r, c]];
                            self.nodes[mu].grad[[r, c]] += g / (v * s2[[si, c]]);
                            self.nodes[var].grad[[r, c]] +=
                                g * (z[[si, c]] - mu_v[[r, c]]) / (v * v * s2[[si, c]]);
                        }
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let logits = *logits;
                let targets = targets.clone();
                let probs = probs.clone();
                let g = dy[[0, 0]];
                let rows = probs.nrows() as f64;
                for r in 0..probs.nrows() {
                    for c in 0..probs.ncols() {
                        let indicator = if c == targets[r] { 1.0 } else { 0.0 };
                        self.nodes[logits].grad[[r, c]] +=
                            g * (probs[[r, c]] - indicator) / rows;
                    }
                }
            }
            Op::ChamferLoss {
                pred,
                target,
                pred_to_target,
                target_to_pred,
            } => {
                let pred = *pred;
                let target = target.clone();
                let p2t = pred_to_target.clone();
                let t2p = target_to_pred.clone();
                let g = dy[[0, 0]];
                let m = p2t.len() as f64;
                let t = t2p.len() as f64;
                let pred_v = self.nodes[pred].value.clone();
                for (i, &j) in p2t.iter().enumerate() {
                    for c in 0..3 {
                        self.nodes[pred].grad[[i, c]] +=
                            g * 2.0 * (pred_v[[i, c]] - target[[j, c]]) / m;
                    }
                }
                for (j, &i) in t2p.iter().enumerate() {
                    for c in 0..3 {
                        self.nodes[pred].grad[[i, c]] +=
                            g * 2.0 * (pred_v[[i, c]] - target[[j, c]]) / t;
                    }
                }
            }
            &Op::Sum(x) => {
                let g = dy[[0, 0]];
                self.nodes[x].grad += g;
            }
        }
    }

    /// Add every parameter leaf's gradient into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            if let Op::Leaf { param: Some(id) } = node.op {
                *store.grad_mut(id) += &node.grad;
            }
        }
        store.mark_grads_populated();
    }

    /// True when any forward value or gradient is non-finite.
    pub fn has_non_finite(&self) -> bool {
        self.nodes.iter().any(|n| {
            n.value.iter().any(|v| !v.is_finite()) || n.grad.iter().any(|v| !v.is_finite())
        })
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
