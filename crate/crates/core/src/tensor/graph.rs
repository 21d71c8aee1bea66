use std::sync::Arc;

use super::ops::{self, Conv1dGeom, Conv2dGeom, Deconv1dGeom, Padding, ReduceOp};
use super::Tensor;
use crate::error::{arg_err, shape_err, Result};
use crate::Scalar;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleBy(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Reduce { input: Var, op: ReduceOp, axes: Vec<usize> },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Var, Var),
    Softmax(Var, Vec<usize>),
    Squash(Var, usize),
    Norm(Var, usize),
    Conv1d(Var, Var, Conv1dGeom),
    Conv2d(Var, Var, Conv2dGeom),
    Deconv1d(Var, Var, Deconv1dGeom),
    Linear(Var, Var, Var),
    AddBias(Var, Var),
    CapsuleTransform(Var, Var),
    RoutingSum(Var, Var),
    RoutingAgreement(Var, Var),
    MarginLoss { lengths: Var, class: usize, m_plus: T, m_minus: T, lambda: T },
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run tape. Every operation evaluates eagerly and appends a node,
/// so node order is already topological. Build a fresh graph per forward
/// pass.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to every grad-enabled leaf.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { value: Arc::new(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_leaf(&mut self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that does not take part in differentiation.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(Arc::new(t), false)
    }

    /// Grad-enabled leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(Arc::new(t), true)
    }

    /// Leaf sharing storage with the caller; `requires_grad` selects whether
    /// a gradient is produced for it.
    pub fn shared(&mut self, t: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.push_leaf(t, requires_grad)
    }

    fn v(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let (x, y) = (self.v(a), self.v(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        self.push(out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |p, q| p + q))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |p, q| p - q))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |p, q| p * q))
    }

    /// Multiply by a fixed constant.
    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.v(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    /// Multiply by a single-element tensor that may itself be trainable.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.v(s).numel() != 1 {
            return Err(shape_err!("scale_by needs a single-element factor, got {:?}", self.shape(s)));
        }
        let c = self.v(s).item();
        let out = self.v(a).map(|x| x * c);
        Ok(self.push(out, Op::ScaleBy(a, s), &[a, s]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.v(a).map(|x| x.max(T::zero()));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.v(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn reduce(&mut self, op: ReduceOp, a: Var, axes: &[usize], keep_dims: bool) -> Result<Var> {
        let out = ops::reduce(op, self.v(a), axes, keep_dims)?;
        Ok(self.push(out, Op::Reduce { input: a, op, axes: axes.to_vec() }, &[a]))
    }

    /// Sum of every element, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let axes: Vec<usize> = (0..self.v(a).rank()).collect();
        self.reduce(ReduceOp::Sum, a, &axes, false).expect("all axes are valid")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.v(a).reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    pub fn flatten_leading(&mut self, a: Var, keep_last: usize) -> Result<Var> {
        let shape = ops::flatten_leading_shape(self.shape(a), keep_last)?;
        self.reshape(a, &shape)
    }

    pub fn permute(&mut self, a: Var, order: &[usize]) -> Result<Var> {
        let out = ops::permute(self.v(a), order)?;
        Ok(self.push(out, Op::Permute(a, order.to_vec()), &[a]))
    }

    /// Stack along the leading axis; trailing extents must agree.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.v(a), self.v(b));
        if x.rank() != y.rank() || x.shape()[1..] != y.shape()[1..] {
            return Err(shape_err!("cannot stack {:?} on {:?}", y.shape(), x.shape()));
        }
        let mut shape = x.shape().to_vec();
        shape[0] += y.shape()[0];
        let data = x.data().iter().chain(y.data()).copied().collect();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat(a, b), &[a, b]))
    }

    pub fn softmax(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = ops::softmax(self.v(a), axes)?;
        Ok(self.push(out, Op::Softmax(a, axes.to_vec()), &[a]))
    }

    pub fn squash(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = ops::squash(self.v(a), axis)?;
        Ok(self.push(out, Op::Squash(a, axis), &[a]))
    }

    pub fn norm(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = ops::norm(self.v(a), axis)?;
        Ok(self.push(out, Op::Norm(a, axis), &[a]))
    }

    pub fn conv1d(&mut self, x: Var, k: Var, stride: usize, pad: Padding) -> Result<Var> {
        let geom = Conv1dGeom::new(self.shape(x), self.shape(k), stride, pad)?;
        let out = ops::conv1d_forward(&geom, self.v(x).data(), self.v(k).data());
        Ok(self.push(out, Op::Conv1d(x, k, geom), &[x, k]))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, stride_h: usize, stride_w: usize) -> Result<Var> {
        let geom = Conv2dGeom::new(self.shape(x), self.shape(k), stride_h, stride_w)?;
        let out = ops::conv2d_forward(&geom, self.v(x).data(), self.v(k).data());
        Ok(self.push(out, Op::Conv2d(x, k, geom), &[x, k]))
    }

    pub fn deconv1d(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        let geom = Deconv1dGeom::new(self.shape(x), self.shape(k), stride)?;
        let out = ops::deconv1d_forward(&geom, self.v(x).data(), self.v(k).data());
        Ok(self.push(out, Op::Deconv1d(x, k, geom), &[x, k]))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = ops::linear(self.v(x), self.v(w), self.v(b))?;
        Ok(self.push(out, Op::Linear(x, w, b), &[x, w, b]))
    }

    /// Adds a per-channel bias `b: C` to every row of `x: L×C`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.v(x), self.v(b));
        let [_, c] = *xv.shape() else {
            return Err(shape_err!("add_bias input must be L×C, got {:?}", xv.shape()));
        };
        if bv.shape() != [c] {
            return Err(shape_err!("bias {:?} does not fit {c} channels", bv.shape()));
        }
        let data = xv.data().iter().enumerate().map(|(i, &v)| v + bv.data()[i % c]).collect();
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        Ok(self.push(out, Op::AddBias(x, b), &[x, b]))
    }

    pub fn capsule_transform(&mut self, u: Var, w: Var) -> Result<Var> {
        let out = ops::capsule_transform(self.v(u), self.v(w))?;
        Ok(self.push(out, Op::CapsuleTransform(u, w), &[u, w]))
    }

    pub fn routing_weighted_sum(&mut self, k: Var, v: Var) -> Result<Var> {
        let out = ops::routing_weighted_sum(self.v(k), self.v(v))?;
        Ok(self.push(out, Op::RoutingSum(k, v), &[k, v]))
    }

    pub fn routing_agreement(&mut self, s: Var, v: Var) -> Result<Var> {
        let out = ops::routing_agreement(self.v(s), self.v(v))?;
        Ok(self.push(out, Op::RoutingAgreement(s, v), &[s, v]))
    }

    /// `Σ_k T_k max(0, m⁺ − l_k)² + λ (1 − T_k) max(0, l_k − m⁻)²`.
    pub fn margin_loss(&mut self, lengths: Var, class: usize, m_plus: T, m_minus: T, lambda: T) -> Result<Var> {
        let l = self.v(lengths);
        if l.rank() != 1 {
            return Err(shape_err!("margin loss expects a length vector, got {:?}", l.shape()));
        }
        if class >= l.numel() {
            return Err(arg_err!("class {class} out of range for {} classes", l.numel()));
        }
        let zero = T::zero();
        let loss =
            l.data()
                .iter()
                .enumerate()
                .map(|(k, &len)| {
                    if k == class {
                        (m_plus - len).max(zero).powi(2)
                    } else {
                        lambda * (len - m_minus).max(zero).powi(2)
                    }
                })
                .sum();
        Ok(self.push(Tensor::scalar(loss), Op::MarginLoss { lengths, class, m_plus, m_minus, lambda }, &[lengths]))
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let (x, y) = (self.v(a), self.v(b));
        let n = T::of(x.numel() as f64);
        let s: T = x.data().iter().zip(y.data()).map(|(&p, &q)| (p - q).powi(2)).sum();
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(a, b), &[a, b]))
    }

    /// Reverse sweep from a single-element node.
    ///
    /// Every grad-enabled leaf receives a gradient of its own shape (zeros
    /// when it does not influence `loss`).
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(arg_err!("backward needs a scalar loss, got shape {:?}", root.value.shape()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[id].take() else { continue };
            self.propagate(node, &dy, &mut grads);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match node.op {
                Op::Leaf if node.requires_grad => {
                    let shape = node.value.shape().to_vec();
                    Some(match g {
                        Some(d) => Tensor::from_parts(shape, d),
                        None => Tensor::zeros(shape),
                    })
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut acc = |v: Var, contribution: Vec<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(g) => g.iter_mut().zip(contribution).for_each(|(a, c)| *a += c),
                slot => *slot = Some(contribution),
            }
        };
        let zero = T::zero();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, dy.to_vec());
                acc(*b, dy.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, dy.to_vec());
                acc(*b, dy.iter().map(|&d| -d).collect());
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.v(*a).data(), self.v(*b).data());
                acc(*a, dy.iter().zip(y).map(|(&d, &q)| d * q).collect());
                acc(*b, dy.iter().zip(x).map(|(&d, &p)| d * p).collect());
            }
            Op::Scale(a, c) => acc(*a, dy.iter().map(|&d| d * *c).collect()),
            Op::ScaleBy(a, s) => {
                let c = self.v(*s).item();
                let x = self.v(*a).data();
                acc(*s, vec![dy.iter().zip(x).map(|(&d, &p)| d * p).sum()]);
                acc(*a, dy.iter().map(|&d| d * c).collect());
            }
            Op::Relu(a) => {
                let x = self.v(*a).data();
                acc(*a, dy.iter().zip(x).map(|(&d, &p)| if p > zero { d } else { zero }).collect());
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, dy.iter().zip(y).map(|(&d, &s)| d * s * (T::one() - s)).collect());
            }
            Op::Reduce { input, op, axes } => {
                let x = self.v(*input);
                let (slots, _) = ops::reduction_slots(x.shape(), axes).expect("validated on forward");
                let dx = match op {
                    ReduceOp::Sum => slots.iter().map(|&s| dy[s]).collect(),
                    ReduceOp::Max => {
                        let y = node.value.data();
                        let mut taken = vec![false; y.len()];
                        slots
                            .iter()
                            .zip(x.data())
                            .map(|(&s, &v)| {
                                if !taken[s] && v == y[s] {
                                    taken[s] = true;
                                    dy[s]
                                } else {
                                    zero
                                }
                            })
                            .collect()
                    }
                };
                acc(*input, dx);
            }
            Op::Reshape(a) => acc(*a, dy.to_vec()),
            Op::Permute(a, order) => {
                let g = Tensor::from_parts(node.value.shape().to_vec(), dy.to_vec());
                let back = ops::permute(&g, &ops::inverse_permutation(order)).expect("valid permutation");
                acc(*a, back.into_data());
            }
            Op::Concat(a, b) => {
                let split = self.v(*a).numel();
                acc(*a, dy[..split].to_vec());
                acc(*b, dy[split..].to_vec());
            }
            Op::Softmax(a, axes) => acc(*a, ops::softmax_backward(&node.value, dy, axes)),
            Op::Squash(a, axis) => acc(*a, ops::squash_backward(self.v(*a), dy, *axis)),
            Op::Norm(a, axis) => acc(*a, ops::norm_backward(self.v(*a), node.value.data(), dy, *axis)),
            Op::Conv1d(x, k, geom) => {
                let (dx, dk) = ops::conv1d_backward(geom, self.v(*x).data(), self.v(*k).data(), dy);
                acc(*x, dx);
                acc(*k, dk);
            }
            Op::Conv2d(x, k, geom) => {
                let (dx, dk) = ops::conv2d_backward(geom, self.v(*x).data(), self.v(*k).data(), dy);
                acc(*x, dx);
                acc(*k, dk);
            }
            Op::Deconv1d(x, k, geom) => {
                let (dx, dk) = ops::deconv1d_backward(geom, self.v(*x).data(), self.v(*k).data(), dy);
                acc(*x, dx);
                acc(*k, dk);
            }
            Op::Linear(x, w, b) => {
                let (xd, wd) = (self.v(*x).data(), self.v(*w).data());
                let n_in = xd.len();
                let mut dx = vec![zero; n_in];
                let mut dw = vec![zero; wd.len()];
                for (o, &d) in dy.iter().enumerate() {
                    let row = &wd[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        dx[i] += d * row[i];
                        dw[o * n_in + i] = d * xd[i];
                    }
                }
                acc(*x, dx);
                acc(*w, dw);
                acc(*b, dy.to_vec());
            }
            Op::AddBias(x, b) => {
                let c = self.v(*b).numel();
                let mut db = vec![zero; c];
                for (i, &d) in dy.iter().enumerate() {
                    db[i % c] += d;
                }
                acc(*x, dy.to_vec());
                acc(*b, db);
            }
            Op::CapsuleTransform(u, w) => {
                let (du, dw) = ops::capsule_transform_backward(self.v(*u), self.v(*w), dy);
                acc(*u, du);
                acc(*w, dw);
            }
            Op::RoutingSum(k, v) => {
                let (dk, dv) = ops::routing_weighted_sum_backward(self.v(*k), self.v(*v), dy);
                acc(*k, dk);
                acc(*v, dv);
            }
            Op::RoutingAgreement(s, v) => {
                let (ds, dv) = ops::routing_agreement_backward(self.v(*s), self.v(*v), dy);
                acc(*s, ds);
                acc(*v, dv);
            }
            Op::MarginLoss { lengths, class, m_plus, m_minus, lambda } => {
                let two = T::of(2.0);
                let g = dy[0];
                let dl = self
                    .v(*lengths)
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(k, &len)| {
                        if k == *class {
                            -two * (*m_plus - len).max(zero) * g
                        } else {
                            two * *lambda * (len - *m_minus).max(zero) * g
                        }
                    })
                    .collect();
                acc(*lengths, dl);
            }
            Op::Mse(a, b) => {
                let (x, y) = (self.v(*a).data(), self.v(*b).data());
                let c = T::of(2.0) * dy[0] / T::of(x.len() as f64);
                let da: Vec<T> = x.iter().zip(y).map(|(&p, &q)| c * (p - q)).collect();
                acc(*b, da.iter().map(|&d| -d).collect());
                acc(*a, da);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_sum_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_f64([2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 6]);
        assert_eq!(grads.get(x).unwrap().shape(), &[2, 3]);
    }

    #[test]
    fn gradient_of_sum_of_squares_is_twice_input() {
        let mut g = Graph::<f64>::new();
        let data = [1.0, -2.0, 3.0, 0.25];
        let x = g.param(Tensor::from_f64([4], &data).unwrap());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        let expect: Vec<f64> = data.iter().map(|v| 2.0 * v).collect();
        assert_eq!(grads.get(x).unwrap().data(), expect.as_slice());
    }

    #[test]
    fn elementwise_values() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_f64([2], &[1.0, 2.0]).unwrap());
        let b = g.constant(Tensor::from_f64([2], &[3.0, 4.0]).unwrap());
        let s = g.add(a, b).unwrap();
        assert_eq!(g.value(s).data(), &[4.0, 6.0]);
        let r = g.constant(Tensor::from_f64([3], &[-1.0, 0.0, 2.0]).unwrap());
        let r = g.relu(r);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = g.constant(Tensor::scalar(0.0));
        let z = g.sigmoid(z);
        assert_eq!(g.value(z).item(), 0.5);
        let c = g.constant(Tensor::zeros([3]));
        assert!(matches!(g.add(a, c), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::zeros([2]));
        assert!(matches!(g.backward(x), Err(crate::Error::Argument(_))));
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::filled([3], 2.0));
        let unused = g.param(Tensor::filled([2, 2], 1.0));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(unused).unwrap(), &Tensor::zeros([2, 2]));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::filled([3], 2.0));
        let s = g.sum(x);
        assert!(g.backward(s).unwrap().get(x).is_none());
    }

    #[test]
    fn margin_and_mse_values() {
        let mut g = Graph::<f64>::new();
        let l = g.constant(Tensor::from_f64([3], &[0.95, 0.05, 0.05]).unwrap());
        let loss = g.margin_loss(l, 0, 0.9, 0.1, 0.5).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
        assert!(g.margin_loss(l, 3, 0.9, 0.1, 0.5).is_err());
        let a = g.constant(Tensor::from_f64([2], &[2.0, 0.0]).unwrap());
        let b = g.constant(Tensor::zeros([2]));
        let m = g.mse(a, b).unwrap();
        assert_eq!(g.value(m).item(), 2.0);
    }
}
