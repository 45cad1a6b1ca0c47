//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Operations are recorded on a tape in construction order, which is a
//! topological order by construction (an op can only reference earlier
//! nodes). `backward` walks the tape once in reverse, accumulating
//! gradients, so shared subexpressions sum their contributions.

use crate::error::{Error, Result};
use crate::rng::{uniform, Rng};
use crate::scalar::{real, Real};
use crate::tensor::{matmul_bias, Tensor};

/// Train/eval switch for dropout and batch normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        NodeId(i)
    }
}

/// Running statistics of one batch-normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<R: Real> {
    pub running_mean: Vec<R>,
    pub running_var: Vec<R>,
    pub momentum: R,
    pub epsilon: R,
}

impl<R: Real> BatchNormState<R> {
    pub fn new(features: usize) -> Self {
        BatchNormState {
            running_mean: vec![R::zero(); features],
            running_var: vec![R::one(); features],
            momentum: real(0.1),
            epsilon: real(1e-5),
        }
    }
}

enum Op<R: Real> {
    Leaf,
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<R>,
        inv_std: Vec<R>,
        train: bool,
    },
    Dropout {
        x: NodeId,
        mask: Vec<R>,
    },
    Relu {
        x: NodeId,
    },
    Concat {
        a: NodeId,
        b: NodeId,
        left_cols: usize,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sum {
        x: NodeId,
    },
    /// Mean over rows of the squared Euclidean distance between `a` and `b`.
    SqDistLoss {
        a: NodeId,
        b: NodeId,
    },
    /// Mean over rows of the Euclidean distance between `a` and `b`.
    DistLoss {
        a: NodeId,
        b: NodeId,
        row_norms: Vec<R>,
    },
    /// Mean absolute difference over all entries.
    AbsLoss {
        a: NodeId,
        b: NodeId,
    },
    /// Mean of elementwise BCE between sigmoid(logits) and fixed targets.
    BceWithLogit {
        logits: NodeId,
        targets: Vec<R>,
    },
    /// Weighted sum of scalar nodes.
    WeightedSum {
        terms: Vec<(NodeId, R)>,
    },
}

struct Node<R: Real> {
    value: Tensor<R>,
    op: Op<R>,
}

/// Gradients of one backward pass, indexed by `NodeId`.
pub struct Gradients<R: Real> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    /// Gradient w.r.t. the given node; zeros if the node does not influence
    /// the differentiated scalar.
    pub fn wrt(&self, id: NodeId, tape: &Tape<R>) -> Tensor<R> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(id).shape().to_vec()),
        }
    }

    pub fn get(&self, id: NodeId) -> Option<&Tensor<R>> {
        self.grads[id.0].as_ref()
    }
}

/// The tape: a flat computation graph built during the forward pass.
pub struct Tape<R: Real> {
    nodes: Vec<Node<R>>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<R> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert an input or parameter tensor.
    pub fn leaf(&mut self, value: Tensor<R>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// y = x W + b.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (_, n) = self.value(x).dims2("linear")?;
        let (wn, wm) = self.value(w).dims2("linear")?;
        if n != wn || self.value(b).numel() != wm {
            return Err(Error::shape(
                "linear",
                format!("x [B,{wn}] and b [{wm}] for W [{wn},{wm}]"),
                format!(
                    "x {:?}, W {:?}, b {:?}",
                    self.value(x).shape(),
                    self.value(w).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        let y = matmul_bias(self.value(x), self.value(w), self.value(b));
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    /// Batch normalization over the batch (rows) dimension.
    ///
    /// Train phase normalizes by batch statistics and updates `state`;
    /// eval phase normalizes by the running statistics and leaves `state`
    /// untouched. The backward pass uses the exact batch-statistics
    /// gradient in train phase.
    pub fn batchnorm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        state: &mut BatchNormState<R>,
        phase: Phase,
    ) -> Result<NodeId> {
        let (b, m) = self.value(x).dims2("batchnorm")?;
        if self.value(gamma).numel() != m || self.value(beta).numel() != m {
            return Err(Error::shape(
                "batchnorm",
                format!("gamma/beta of width {m}"),
                format!(
                    "gamma {:?}, beta {:?}",
                    self.value(gamma).shape(),
                    self.value(beta).shape()
                ),
            ));
        }
        if state.running_mean.len() != m {
            return Err(Error::shape(
                "batchnorm",
                format!("state of width {m}"),
                format!("state of width {}", state.running_mean.len()),
            ));
        }
        let train = phase == Phase::Train;
        if train && b < 2 {
            return Err(Error::Config(format!(
                "batchnorm train phase needs batch size >= 2, got {b}"
            )));
        }

        let (mean, var): (Vec<R>, Vec<R>) = if train {
            let inv_b = R::one() / real::<R>(b as f64);
            let mut mean = vec![R::zero(); m];
            for i in 0..b {
                for (j, mj) in mean.iter_mut().enumerate() {
                    *mj = *mj + self.value(x).data()[i * m + j];
                }
            }
            for mj in mean.iter_mut() {
                *mj = *mj * inv_b;
            }
            let mut var = vec![R::zero(); m];
            for i in 0..b {
                for (j, vj) in var.iter_mut().enumerate() {
                    let d = self.value(x).data()[i * m + j] - mean[j];
                    *vj = *vj + d * d;
                }
            }
            for vj in var.iter_mut() {
                *vj = *vj * inv_b;
            }
            (mean, var)
        } else {
            (state.running_mean.clone(), state.running_var.clone())
        };

        let inv_std: Vec<R> = var.iter().map(|&v| R::one() / (v + state.epsilon).sqrt()).collect();
        let xd = self.value(x).data();
        let mut xhat = vec![R::zero(); b * m];
        let mut y = vec![R::zero(); b * m];
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        for i in 0..b {
            for j in 0..m {
                let h = (xd[i * m + j] - mean[j]) * inv_std[j];
                xhat[i * m + j] = h;
                y[i * m + j] = g[j] * h + be[j];
            }
        }

        if train {
            // Running variance uses the unbiased estimator.
            let unbias = real::<R>(b as f64 / (b as f64 - 1.0));
            let keep = R::one() - state.momentum;
            for j in 0..m {
                state.running_mean[j] = keep * state.running_mean[j] + state.momentum * mean[j];
                state.running_var[j] = keep * state.running_var[j] + state.momentum * var[j] * unbias;
            }
        }

        Ok(self.push(
            Tensor::new(vec![b, m], y),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        ))
    }

    /// Inverted dropout: train phase zeroes entries with probability `rate`
    /// and scales survivors by 1/(1-rate); eval phase is the identity.
    pub fn dropout(&mut self, x: NodeId, rate: R, phase: Phase, rng: &mut Rng) -> Result<NodeId> {
        if rate < R::zero() || rate >= R::one() {
            return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        if phase == Phase::Eval {
            return Ok(x);
        }
        let scale = R::one() / (R::one() - rate);
        let mask: Vec<R> = (0..self.value(x).numel())
            .map(|_| if uniform::<R>(rng) < rate { R::zero() } else { scale })
            .collect();
        let y: Vec<R> = self
            .value(x)
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(&v, &mk)| v * mk)
            .collect();
        let shape = self.value(x).shape().to_vec();
        Ok(self.push(Tensor::new(shape, y), Op::Dropout { x, mask }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let y: Vec<R> = self.value(x).data().iter().map(|&v| v.max(R::zero())).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Tensor::new(shape, y), Op::Relu { x })
    }

    /// Concatenate two rank-2 tensors along the last axis.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ba, na) = self.value(a).dims2("concat")?;
        let (bb, nb) = self.value(b).dims2("concat")?;
        if ba != bb {
            return Err(Error::shape(
                "concat",
                "matching batch sizes".to_string(),
                format!("{ba} vs {bb}"),
            ));
        }
        let mut y = Vec::with_capacity(ba * (na + nb));
        for i in 0..ba {
            y.extend_from_slice(self.value(a).row(i));
            y.extend_from_slice(self.value(b).row(i));
        }
        Ok(self.push(
            Tensor::new(vec![ba, na + nb], y),
            Op::Concat { a, b, left_cols: na },
        ))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                "add",
                format!("{:?}", self.value(a).shape()),
                format!("{:?}", self.value(b).shape()),
            ));
        }
        let y: Vec<R> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&u, &v)| u + v)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(shape, y), Op::Add { a, b }))
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self
            .value(x)
            .data()
            .iter()
            .fold(R::zero(), |acc, &v| acc + v);
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    /// Mean over rows of the squared Euclidean distance between `a` and `b`.
    pub fn l2_loss(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (rows, _) = self.same_shape2("l2_loss", a, b)?;
        let mut total = R::zero();
        for i in 0..rows {
            let mut s = R::zero();
            for (&u, &v) in self.value(a).row(i).iter().zip(self.value(b).row(i)) {
                let d = u - v;
                s = s + d * d;
            }
            total = total + s;
        }
        let loss = total / real::<R>(rows as f64);
        Ok(self.push(Tensor::scalar(loss), Op::SqDistLoss { a, b }))
    }

    /// Mean over rows of the Euclidean distance between `a` and `b`.
    pub fn euclid_loss(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (rows, _) = self.same_shape2("euclid_loss", a, b)?;
        let mut row_norms = Vec::with_capacity(rows);
        let mut total = R::zero();
        for i in 0..rows {
            let mut s = R::zero();
            for (&u, &v) in self.value(a).row(i).iter().zip(self.value(b).row(i)) {
                let d = u - v;
                s = s + d * d;
            }
            let norm = s.sqrt();
            row_norms.push(norm);
            total = total + norm;
        }
        let loss = total / real::<R>(rows as f64);
        Ok(self.push(Tensor::scalar(loss), Op::DistLoss { a, b, row_norms }))
    }

    /// Mean absolute difference over all entries.
    pub fn l1_loss(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                "l1_loss",
                format!("{:?}", self.value(a).shape()),
                format!("{:?}", self.value(b).shape()),
            ));
        }
        let n = real::<R>(self.value(a).numel() as f64);
        let total = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .fold(R::zero(), |acc, (&u, &v)| acc + (u - v).abs());
        Ok(self.push(Tensor::scalar(total / n), Op::AbsLoss { a, b }))
    }

    /// Mean binary cross-entropy between sigmoid(logits) and fixed targets,
    /// computed in the numerically stable logit form.
    pub fn bce_with_logit(&mut self, logits: NodeId, targets: &[R]) -> Result<NodeId> {
        if self.value(logits).numel() != targets.len() {
            return Err(Error::shape(
                "bce_with_logit",
                format!("{} targets", self.value(logits).numel()),
                format!("{} targets", targets.len()),
            ));
        }
        let n = real::<R>(targets.len() as f64);
        let mut total = R::zero();
        for (&z, &t) in self.value(logits).data().iter().zip(targets) {
            // max(z,0) - z*t + ln(1 + exp(-|z|))
            let term = z.max(R::zero()) - z * t + (R::one() + (-z.abs()).exp()).ln();
            total = total + term;
        }
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::BceWithLogit {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, R)]) -> Result<NodeId> {
        let mut total = R::zero();
        for &(id, w) in terms {
            if !self.value(id).is_scalar() {
                return Err(Error::shape(
                    "weighted_sum",
                    "scalar terms".to_string(),
                    format!("{:?}", self.value(id).shape()),
                ));
            }
            total = total + w * self.value(id).item();
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
        ))
    }

    fn same_shape2(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(usize, usize)> {
        let (ra, ca) = self.value(a).dims2(op)?;
        let (rb, cb) = self.value(b).dims2(op)?;
        if (ra, ca) != (rb, cb) {
            return Err(Error::shape(op, format!("[{ra},{ca}]"), format!("[{rb},{cb}]")));
        }
        Ok((ra, ca))
    }

    /// Reverse pass from a scalar root. Each node is visited exactly once in
    /// reverse construction order; gradients of shared nodes accumulate.
    pub fn backward(&self, root: NodeId) -> Gradients<R> {
        assert!(
            self.value(root).is_scalar(),
            "backward root must be a scalar node"
        );
        let mut grads: Vec<Option<Vec<R>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![R::one()]);

        for i in (0..=root.0).rev() {
            let gout = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(gout);
                    continue;
                }
                Op::Linear { x, w, b } => {
                    let (rows, n) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                    let m = self.value(*w).shape()[1];
                    let xd = self.value(*x).data();
                    let wd = self.value(*w).data();
                    // dX = dY W^T
                    let gx = self.acc(&mut grads, *x);
                    for r in 0..rows {
                        let gr = &gout[r * m..(r + 1) * m];
                        for k in 0..n {
                            let wrow = &wd[k * m..(k + 1) * m];
                            let mut s = R::zero();
                            for (gv, wv) in gr.iter().zip(wrow) {
                                s = s + *gv * *wv;
                            }
                            gx[r * n + k] = gx[r * n + k] + s;
                        }
                    }
                    // dW = X^T dY
                    let gw = self.acc(&mut grads, *w);
                    for r in 0..rows {
                        let gr = &gout[r * m..(r + 1) * m];
                        for k in 0..n {
                            let xv = xd[r * n + k];
                            let grow = &mut gw[k * m..(k + 1) * m];
                            for (gwv, gv) in grow.iter_mut().zip(gr) {
                                *gwv = *gwv + xv * *gv;
                            }
                        }
                    }
                    // db = column sums of dY
                    let gb = self.acc(&mut grads, *b);
                    for r in 0..rows {
                        for (gbv, gv) in gb.iter_mut().zip(&gout[r * m..(r + 1) * m]) {
                            *gbv = *gbv + *gv;
                        }
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                } => {
                    let (b, m) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                    let g = self.value(*gamma).data();
                    let ggamma = self.acc(&mut grads, *gamma);
                    for r in 0..b {
                        for j in 0..m {
                            ggamma[j] = ggamma[j] + gout[r * m + j] * xhat[r * m + j];
                        }
                    }
                    let gbeta = self.acc(&mut grads, *beta);
                    for r in 0..b {
                        for j in 0..m {
                            gbeta[j] = gbeta[j] + gout[r * m + j];
                        }
                    }
                    let gx = self.acc(&mut grads, *x);
                    if *train {
                        // Exact gradient through the batch statistics.
                        let inv_b = R::one() / real::<R>(b as f64);
                        for j in 0..m {
                            let mut sum_dxhat = R::zero();
                            let mut sum_dxhat_xhat = R::zero();
                            for r in 0..b {
                                let dxh = gout[r * m + j] * g[j];
                                sum_dxhat = sum_dxhat + dxh;
                                sum_dxhat_xhat = sum_dxhat_xhat + dxh * xhat[r * m + j];
                            }
                            for r in 0..b {
                                let dxh = gout[r * m + j] * g[j];
                                let t = dxh - inv_b * sum_dxhat
                                    - inv_b * xhat[r * m + j] * sum_dxhat_xhat;
                                gx[r * m + j] = gx[r * m + j] + t * inv_std[j];
                            }
                        }
                    } else {
                        for r in 0..b {
                            for j in 0..m {
                                gx[r * m + j] =
                                    gx[r * m + j] + gout[r * m + j] * g[j] * inv_std[j];
                            }
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    let gx = self.acc(&mut grads, *x);
                    for ((gxv, &go), &mk) in gx.iter_mut().zip(&gout).zip(mask) {
                        *gxv = *gxv + go * mk;
                    }
                }
                Op::Relu { x } => {
                    let xd = self.value(*x).data();
                    let gx = self.acc(&mut grads, *x);
                    for ((gxv, &go), &xv) in gx.iter_mut().zip(&gout).zip(xd) {
                        if xv > R::zero() {
                            *gxv = *gxv + go;
                        }
                    }
                }
                Op::Concat { a, b, left_cols } => {
                    let rows = self.value(*a).shape()[0];
                    let na = *left_cols;
                    let nb = self.value(*b).shape()[1];
                    let ga = self.acc(&mut grads, *a);
                    for r in 0..rows {
                        for j in 0..na {
                            ga[r * na + j] = ga[r * na + j] + gout[r * (na + nb) + j];
                        }
                    }
                    let gb = self.acc(&mut grads, *b);
                    for r in 0..rows {
                        for j in 0..nb {
                            gb[r * nb + j] = gb[r * nb + j] + gout[r * (na + nb) + na + j];
                        }
                    }
                }
                Op::Add { a, b } => {
                    let ga = self.acc(&mut grads, *a);
                    for (gav, &go) in ga.iter_mut().zip(&gout) {
                        *gav = *gav + go;
                    }
                    let gb = self.acc(&mut grads, *b);
                    for (gbv, &go) in gb.iter_mut().zip(&gout) {
                        *gbv = *gbv + go;
                    }
                }
                Op::Sum { x } => {
                    let go = gout[0];
                    let gx = self.acc(&mut grads, *x);
                    for gxv in gx.iter_mut() {
                        *gxv = *gxv + go;
                    }
                }
                Op::SqDistLoss { a, b } => {
                    let go = gout[0];
                    let rows = self.value(*a).shape()[0];
                    let coef = real::<R>(2.0) / real::<R>(rows as f64) * go;
                    let diff: Vec<R> = self
                        .value(*a)
                        .data()
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(&u, &v)| u - v)
                        .collect();
                    let ga = self.acc(&mut grads, *a);
                    for (gav, &d) in ga.iter_mut().zip(&diff) {
                        *gav = *gav + coef * d;
                    }
                    let gb = self.acc(&mut grads, *b);
                    for (gbv, &d) in gb.iter_mut().zip(&diff) {
                        *gbv = *gbv - coef * d;
                    }
                }
                Op::DistLoss { a, b, row_norms } => {
                    let go = gout[0];
                    let (rows, cols) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                    let inv_rows = R::one() / real::<R>(rows as f64);
                    let ad = self.value(*a).data();
                    let bd = self.value(*b).data();
                    let mut d = vec![R::zero(); rows * cols];
                    for r in 0..rows {
                        if row_norms[r] <= R::zero() {
                            continue; // subgradient 0 at the kink
                        }
                        let c = go * inv_rows / row_norms[r];
                        for j in 0..cols {
                            d[r * cols + j] = c * (ad[r * cols + j] - bd[r * cols + j]);
                        }
                    }
                    let ga = self.acc(&mut grads, *a);
                    for (gav, &dv) in ga.iter_mut().zip(&d) {
                        *gav = *gav + dv;
                    }
                    let gb = self.acc(&mut grads, *b);
                    for (gbv, &dv) in gb.iter_mut().zip(&d) {
                        *gbv = *gbv - dv;
                    }
                }
                Op::AbsLoss { a, b } => {
                    let go = gout[0];
                    let n = R::one() / real::<R>(self.value(*a).numel() as f64);
                    let sgn: Vec<R> = self
                        .value(*a)
                        .data()
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(&u, &v)| {
                            if u > v {
                                R::one()
                            } else if u < v {
                                -R::one()
                            } else {
                                R::zero()
                            }
                        })
                        .collect();
                    let ga = self.acc(&mut grads, *a);
                    for (gav, &s) in ga.iter_mut().zip(&sgn) {
                        *gav = *gav + go * n * s;
                    }
                    let gb = self.acc(&mut grads, *b);
                    for (gbv, &s) in gb.iter_mut().zip(&sgn) {
                        *gbv = *gbv - go * n * s;
                    }
                }
                Op::BceWithLogit { logits, targets } => {
                    let go = gout[0];
                    let n = R::one() / real::<R>(targets.len() as f64);
                    let zd = self.value(*logits).data().to_vec();
                    let gz = self.acc(&mut grads, *logits);
                    for ((gzv, &z), &t) in gz.iter_mut().zip(&zd).zip(targets) {
                        let sig = R::one() / (R::one() + (-z).exp());
                        *gzv = *gzv + go * n * (sig - t);
                    }
                }
                Op::WeightedSum { terms } => {
                    let go = gout[0];
                    for &(id, w) in terms.iter() {
                        let gt = self.acc(&mut grads, id);
                        gt[0] = gt[0] + go * w;
                    }
                }
            }
            grads[i] = Some(gout);
        }

        Gradients {
            grads: grads
                .into_iter()
                .enumerate()
                .map(|(i, g)| g.map(|v| Tensor::new(self.nodes[i].value.shape().to_vec(), v)))
                .collect(),
        }
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<R>>], id: NodeId) -> &'g mut Vec<R> {
        if grads[id.0].is_none() {
            grads[id.0] = Some(vec![R::zero(); self.nodes[id.0].value.numel()]);
        }
        grads[id.0].as_mut().unwrap()
    }
}
