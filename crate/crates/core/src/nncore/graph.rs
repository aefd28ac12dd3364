//! Tape-based reverse-mode differentiation over the op set the detector needs.

use super::kernels::{self, ConvGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Statistics source for [`Graph::batch_norm`]: train mode normalizes with
/// batch statistics and folds them into the running estimates; eval mode
/// reads the running estimates.
pub enum NormStats<'a, T> {
    Train(&'a mut RunningStats<T>),
    Eval(&'a RunningStats<T>),
}

/// Running per-channel statistics of a normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats { mean: vec![T::zero(); channels], var: vec![T::one(); channels] }
    }
}

pub const NORM_MOMENTUM: f64 = 0.1;
pub const NORM_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    Conv1d { x: Var, w: Var, bias: Option<Var>, geom: ConvGeom, cols: Vec<T> },
    Norm { x: Var, scale: Var, shift: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    SoftmaxLast(Var),
    SumLast(Var),
    Mean(Var),
    Reshape(Var),
    /// Scalar function of `input` whose gradient was computed alongside its value.
    Custom { input: Var, local_grad: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recorded computation. Build it with the op methods, then call
/// [`Graph::backward`] once on a scalar node.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), backward_done: false }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass, if the node received one.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Sign pattern (`input > 0`) of every relu in recording order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(self.nodes[x.0].value.data().iter().map(|&v| v > T::zero())),
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// Drop gradients so that `backward` may run again.
    pub fn clear_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// `input: B×Cin×T`, `weight: Cout×Cin×K`, `bias: Cout` → `B×Cout×T'`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 3 || ws.len() != 3 {
            return Err(Error::Dimension(format!("conv1d expects 3-D input and kernel, got {xs:?} and {ws:?}")));
        }
        let geom = ConvGeom {
            batch: xs[0],
            in_channels: xs[1],
            in_len: xs[2],
            out_channels: ws[0],
            kernel: ws[2],
            stride,
            padding,
        };
        if ws[1] != geom.in_channels {
            return Err(Error::Dimension(format!(
                "conv1d kernel expects {} input channels, input has {}",
                ws[1], geom.in_channels
            )));
        }
        if stride == 0 || geom.kernel == 0 || geom.kernel > geom.in_len + 2 * padding {
            return Err(Error::Dimension(format!(
                "conv1d kernel {} with padding {padding} and stride {stride} does not fit length {}",
                geom.kernel, geom.in_len
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [geom.out_channels] {
                return Err(Error::Dimension(format!("conv1d bias shape {:?}", self.shape(b))));
            }
        }
        let bias_data = bias.map(|b| self.value(b).data());
        let (out, cols) = kernels::conv1d_forward(self.value(x).data(), self.value(w).data(), bias_data, &geom);
        let value = Tensor::new(vec![geom.batch, geom.out_channels, geom.out_len()], out)?;
        let rg = self.needs(x) || self.needs(w) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(value, Op::Conv1d { x, w, bias, geom, cols }, rg))
    }

    /// Per-channel normalization of a `B×C×T` input.
    pub fn batch_norm(&mut self, x: Var, scale: Var, shift: Var, stats: NormStats<'_, T>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::Dimension(format!("batch_norm expects B×C×T, got {xs:?}")));
        }
        let (b, c, t) = (xs[0], xs[1], xs[2]);
        let n_stats = match &stats {
            NormStats::Train(s) => s.mean.len(),
            NormStats::Eval(s) => s.mean.len(),
        };
        if self.shape(scale) != [c] || self.shape(shift) != [c] || n_stats != c {
            return Err(Error::Dimension(format!("batch_norm parameters do not match {c} channels")));
        }
        let eps = T::lit(NORM_EPS);
        let train = matches!(stats, NormStats::Train(_));
        let (mean, var) = match stats {
            NormStats::Train(stats) => {
                if b * t < 2 {
                    return Err(Error::Dimension("batch_norm train mode needs B·T > 1".into()));
                }
                let (mean, var) = kernels::channel_moments(self.value(x).data(), b, c, t);
                let m = T::lit(NORM_MOMENTUM);
                for ch in 0..c {
                    stats.mean[ch] = (T::one() - m) * stats.mean[ch] + m * mean[ch];
                    stats.var[ch] = (T::one() - m) * stats.var[ch] + m * var[ch];
                }
                (mean, var)
            }
            NormStats::Eval(stats) => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, s) = (self.value(scale).data(), self.value(shift).data());
        let xd = self.value(x).data();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * t;
                for i in off..off + t {
                    xhat[i] = (xd[i] - mean[ch]) * inv_std[ch];
                    out[i] = g[ch] * xhat[i] + s[ch];
                }
            }
        }
        let rg = self.needs(x) || self.needs(scale) || self.needs(shift);
        let value = Tensor::new(xs, out)?;
        Ok(self.push(value, Op::Norm { x, scale, shift, xhat, inv_std, train }, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(x);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, kernels::sigmoid, Op::Sigmoid(x))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Softmax along the last axis.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let len = *self.shape(x).last().ok_or_else(|| Error::Dimension("softmax of a scalar".into()))?;
        if len == 0 {
            return Err(Error::Dimension("softmax over an empty axis".into()));
        }
        let data = kernels::softmax_rows(self.value(x).data(), len);
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::SoftmaxLast(x), rg))
    }

    /// Sum over the last axis, dropping it.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (&len, rest) = shape.split_last().ok_or_else(|| Error::Dimension("sum of a scalar".into()))?;
        let data = if len == 0 {
            vec![T::zero(); rest.iter().product()]
        } else {
            self.value(x).data().chunks(len).map(|r| r.iter().copied().sum()).collect()
        };
        let value = Tensor::new(rest.to_vec(), data)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::SumLast(x), rg))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.value(x).data();
        let n = T::from_usize(d.len().max(1)).unwrap();
        let value = Tensor::scalar(d.iter().copied().sum::<T>() / n);
        let rg = self.needs(x);
        self.push(value, Op::Mean(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Register a scalar `value = f(input)` with its precomputed gradient
    /// `df/dinput`. Used for loss functions with closed-form derivatives.
    pub fn custom_scalar(&mut self, input: Var, value: T, local_grad: Vec<T>) -> Result<Var> {
        if local_grad.len() != self.value(input).len() {
            return Err(Error::Dimension(format!(
                "custom gradient has {} entries for input of {}",
                local_grad.len(),
                self.value(input).len()
            )));
        }
        let rg = self.needs(input);
        Ok(self.push(Tensor::scalar(value), Op::Custom { input, local_grad }, rg))
    }

    fn accumulate(&mut self, v: Var, contrib: Vec<T>) {
        if !self.needs(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contrib),
        }
    }

    /// Reverse-mode accumulation from a scalar node. Gradients of re-used
    /// nodes are summed. A second call without [`Graph::clear_grads`] fails.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Usage("backward called twice without clearing gradients".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!("backward from non-scalar of shape {:?}", self.shape(loss))));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        let node = &self.nodes[i];
        let contribs: Vec<(Var, Vec<T>)> = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv1d { x, w, bias, geom, cols } => {
                let need_dx = self.needs(*x);
                let grads = kernels::conv1d_backward(g, self.value(*w).data(), cols, geom, need_dx);
                let mut out = vec![(*w, grads.dw)];
                if let Some(dx) = grads.dx {
                    out.push((*x, dx));
                }
                if let Some(b) = bias {
                    out.push((*b, grads.dbias));
                }
                out
            }
            Op::Norm { x, scale, shift, xhat, inv_std, train } => {
                let s = node.value.shape();
                let (b, c, t) = (s[0], s[1], s[2]);
                let gamma = self.value(*scale).data();
                let mut dscale = vec![T::zero(); c];
                let mut dshift = vec![T::zero(); c];
                for bi in 0..b {
                    for ch in 0..c {
                        let off = (bi * c + ch) * t;
                        for k in off..off + t {
                            dscale[ch] += g[k] * xhat[k];
                            dshift[ch] += g[k];
                        }
                    }
                }
                let mut out = vec![(*scale, dscale.clone()), (*shift, dshift.clone())];
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); g.len()];
                    let n = T::from_usize(b * t).unwrap();
                    for bi in 0..b {
                        for ch in 0..c {
                            let off = (bi * c + ch) * t;
                            let k_ = gamma[ch] * inv_std[ch];
                            for k in off..off + t {
                                dx[k] = if *train {
                                    // dscale[ch] = Σ g·x̂, dshift[ch] = Σ g
                                    k_ * (g[k] - dshift[ch] / n - xhat[k] * dscale[ch] / n)
                                } else {
                                    k_ * g[k]
                                };
                            }
                        }
                    }
                    out.push((*x, dx));
                }
                out
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                vec![(*x, g.iter().zip(xv).map(|(&g, &v)| if v > T::zero() { g } else { T::zero() }).collect())]
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                vec![(*x, g.iter().zip(y).map(|(&g, &s)| g * s * (T::one() - s)).collect())]
            }
            Op::Scale(x, c) => vec![(*x, g.iter().map(|&v| v * *c).collect())],
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                vec![
                    (*a, g.iter().zip(bv).map(|(&g, &y)| g * y).collect()),
                    (*b, g.iter().zip(av).map(|(&g, &x)| g * x).collect()),
                ]
            }
            Op::SoftmaxLast(x) => {
                let len = *node.value.shape().last().unwrap();
                let y = node.value.data();
                let mut dx = vec![T::zero(); g.len()];
                for ((gr, yr), dr) in g.chunks(len).zip(y.chunks(len)).zip(dx.chunks_mut(len)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((d, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = yi * (gi - dot);
                    }
                }
                vec![(*x, dx)]
            }
            Op::SumLast(x) => {
                let len = *self.shape(*x).last().unwrap();
                let mut dx = Vec::with_capacity(g.len() * len);
                for &gi in g {
                    dx.extend(std::iter::repeat_n(gi, len));
                }
                vec![(*x, dx)]
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                let v = g[0] / T::from_usize(n.max(1)).unwrap();
                vec![(*x, vec![v; n])]
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Custom { input, local_grad } => {
                vec![(*input, local_grad.iter().map(|&d| d * g[0]).collect())]
            }
        };
        for (v, c) in contribs {
            self.accumulate(v, c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[3], &[1.0, -2.0, 0.5]));
        let s = g.sum_last(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[3], &[1.0, -2.0, 0.5]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum_last(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn second_backward_is_a_usage_error() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let s = g.sum_last(x).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Usage(_))));
        g.clear_grads();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn conv_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let w = g.param(t(&[1, 1, 2], &[1.0, 1.0]));
        let y = g.conv1d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 5.0, 7.0]);

        let x = g.constant(Tensor::from_fn(&[2, 3, 300], |i| i as f64));
        let id = g.param(Tensor::from_fn(&[3, 3, 1], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let y = g.conv1d(x, id, None, 1, 0).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let w1 = g.param(Tensor::full(&[1, 3, 1], 1.0));
        let y = g.conv1d(x, w1, None, 4, 0).unwrap();
        assert_eq!(g.shape(y), &[2, 1, 75]);
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 4]));
        let w = g.param(Tensor::zeros(&[1, 3, 2]));
        assert!(matches!(g.conv1d(x, w, None, 1, 0), Err(Error::Dimension(_))));
        let w = g.param(Tensor::zeros(&[1, 2, 7]));
        assert!(g.conv1d(x, w, None, 1, 1).is_err());
        assert!(g.conv1d(x, w, None, 1, 2).is_ok());
    }

    #[test]
    fn norm_of_constant_input_is_shift() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[2, 2, 5], 3.0));
        let scale = g.param(t(&[2], &[2.0, 0.5]));
        let shift = g.param(t(&[2], &[0.25, -1.0]));
        let mut stats = RunningStats::new(2);
        let y = g.batch_norm(x, scale, shift, NormStats::Train(&mut stats)).unwrap();
        for (i, &v) in g.value(y).data().iter().enumerate() {
            let ch = (i / 5) % 2;
            assert_eq!(v, [0.25, -1.0][ch]);
        }
    }

    #[test]
    fn norm_of_standardized_batch_is_near_identity() {
        // a batch whose per-channel mean is 0 and biased variance is 1
        let data: Vec<f64> = (0..2 * 1 * 4).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2, 1, 4], &data));
        let scale = g.param(t(&[1], &[1.0]));
        let shift = g.param(t(&[1], &[0.0]));
        let mut stats = RunningStats::new(1);
        let y = g.batch_norm(x, scale, shift, NormStats::Train(&mut stats)).unwrap();
        for (a, b) in g.value(y).data().iter().zip(&data) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn eval_converges_to_train_output_by_closed_form() {
        let data: Vec<f64> = (0..3 * 2 * 6).map(|i| ((i * 37 % 17) as f64) * 0.3 - 1.0).collect();
        let x_t = t(&[3, 2, 6], &data);
        let mut stats = RunningStats::new(2);
        let steps = 60;
        let mut train_out = Vec::new();
        for _ in 0..steps {
            let mut g = Graph::<f64>::new();
            let x = g.constant(x_t.clone());
            let s = g.param(t(&[2], &[1.5, 0.7]));
            let b = g.param(t(&[2], &[0.1, -0.2]));
            let y = g.batch_norm(x, s, b, NormStats::Train(&mut stats)).unwrap();
            train_out = g.value(y).data().to_vec();
        }
        let (mean, var) = kernels::channel_moments(&data, 3, 2, 6);
        let decay = 0.9f64.powi(steps);
        for ch in 0..2 {
            // running mean starts at 0, running var at 1
            assert!((stats.mean[ch] - (1.0 - decay) * mean[ch]).abs() < 1e-12);
            assert!((stats.var[ch] - (decay + (1.0 - decay) * var[ch])).abs() < 1e-12);
        }
        let mut g = Graph::<f64>::new();
        let x = g.constant(x_t);
        let s = g.param(t(&[2], &[1.5, 0.7]));
        let b = g.param(t(&[2], &[0.1, -0.2]));
        let y = g.batch_norm(x, s, b, NormStats::Eval(&stats)).unwrap();
        let max_diff = g.value(y).data().iter().zip(&train_out).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        // after 60 updates the running stats are within 0.9^60 ≈ 1.8e-3 of the batch stats
        assert!(max_diff < 1e-2, "{max_diff}");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2, 3], &[1000.0, 0.0, -5.0, 0.1, 0.2, 0.3]));
        let y = g.softmax_last(x).unwrap();
        for row in g.value(y).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
}
