//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its value and enough context to
//! push gradients back to its inputs. [`Graph::backward`] walks the tape in
//! reverse once; gradients of leaves are read back with [`Graph::grad`].

use super::ops::{self, Conv2dShape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside this module.
pub trait CustomBackward: Send + Sync {
    /// Returns one gradient per input (same length as that input's value).
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &[f64]) -> Vec<Vec<f64>>;
}

enum Op {
    Leaf,
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv {
        x: Var,
        k: Var,
        b: Var,
        shape: Conv2dShape,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Tanh {
        x: Var,
    },
    Mask {
        x: Var,
        mask: Vec<f64>,
    },
    Reshape {
        x: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Mse {
        pred: Var,
        target: Var,
    },
    Custom {
        inputs: Vec<Var>,
        rule: Box<dyn CustomBackward>,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Adds an input or parameter.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::affine_forward(self.value(x), self.value(w), self.value(b))?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(y, rg, Op::Affine { x, w, b }))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, dilation: (usize, usize)) -> Result<Var> {
        let shape = Conv2dShape::infer(self.value(x), self.value(k), self.value(b), dilation)?;
        let y = ops::conv2d_forward(self.value(x), self.value(k), self.value(b), dilation)?;
        let rg = self.rg(&[x, k, b]);
        Ok(self.push(y, rg, Op::Conv { x, k, b, shape }))
    }

    pub fn conv1d(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let (x4, k4) = ops::conv1d_as_2d(self.value(x), self.value(k))?;
        let shape = Conv2dShape::infer(&x4, &k4, self.value(b), (1, 1))?;
        let y = ops::conv1d_forward(self.value(x), self.value(k), self.value(b))?;
        let rg = self.rg(&[x, k, b]);
        Ok(self.push(y, rg, Op::Conv { x, k, b, shape }))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let y = ops::leaky_relu(self.value(x), slope);
        let rg = self.rg(&[x]);
        self.push(y, rg, Op::LeakyRelu { x, slope })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = ops::tanh(self.value(x));
        let rg = self.rg(&[x]);
        self.push(y, rg, Op::Tanh { x })
    }

    /// Elementwise product with a constant mask (used for dropout).
    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return Err(Error::domain("mask length does not match tensor"));
        }
        let mut y = self.value(x).clone();
        y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        let rg = self.rg(&[x]);
        Ok(self.push(y, rg, Op::Mask { x, mask }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, rg, Op::Reshape { x }))
    }

    /// Collapses every axis after the first: `[batch, …] → [batch, features]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape();
        let batch = s[0];
        let rest = s[1..].iter().product();
        self.reshape(x, &[batch, rest])
    }

    /// Joins `[batch, fa]` and `[batch, fb]` into `[batch, fa + fb]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[0] != tb.shape()[0] {
            return Err(Error::domain(format!(
                "concat needs two [batch, features] tensors, got {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (batch, fa, fb) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut data = Vec::with_capacity(batch * (fa + fb));
        for r in 0..batch {
            data.extend_from_slice(&ta.data()[r * fa..(r + 1) * fa]);
            data.extend_from_slice(&tb.data()[r * fb..(r + 1) * fb]);
        }
        let y = Tensor::new(vec![batch, fa + fb], data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, rg, Op::Concat { a, b }))
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let l = ops::mse(self.value(pred), self.value(target))?;
        let rg = self.rg(&[pred, target]);
        Ok(self.push(Tensor::scalar(l), rg, Op::Mse { pred, target }))
    }

    /// Appends a node computed outside the graph with its own backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, rule: Box<dyn CustomBackward>) -> Var {
        let rg = self.rg(inputs);
        self.push(
            value,
            rg,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule,
            },
        )
    }

    fn add_grad(&mut self, v: Var, g: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    /// Back-propagates from a scalar `loss`. May run once per graph until
    /// [`Graph::reset_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward called twice without resetting gradients".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract("backward needs a scalar loss".into()));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let pending: Vec<(Var, Vec<f64>)> = {
                let node = &self.nodes[i];
                let val = |v: Var| &self.nodes[v.0].value;
                match &node.op {
                    Op::Leaf => unreachable!(),
                    Op::Affine { x, w, b } => {
                        let (gx, gw, gb) = ops::affine_backward(val(*x), val(*w), &g);
                        vec![(*x, gx), (*w, gw), (*b, gb)]
                    }
                    Op::Conv { x, k, b, shape } => {
                        let (gx, gk, gb) = ops::conv2d_backward(val(*x), val(*k), shape, &g);
                        vec![(*x, gx), (*k, gk), (*b, gb)]
                    }
                    Op::LeakyRelu { x, slope } => {
                        let gx = val(*x)
                            .data()
                            .iter()
                            .zip(&g)
                            .map(|(v, gv)| if *v >= 0.0 { *gv } else { slope * gv })
                            .collect();
                        vec![(*x, gx)]
                    }
                    Op::Tanh { x: xv } => {
                        let gx = node
                            .value
                            .data()
                            .iter()
                            .zip(&g)
                            .map(|(y, gv)| gv * (1.0 - y * y))
                            .collect();
                        vec![(*xv, gx)]
                    }
                    Op::Mask { x, mask } => {
                        vec![(*x, g.iter().zip(mask).map(|(a, m)| a * m).collect())]
                    }
                    Op::Reshape { x } => vec![(*x, g.clone())],
                    Op::Concat { a, b } => {
                        let (batch, fa) = (val(*a).shape()[0], val(*a).shape()[1]);
                        let fb = val(*b).shape()[1];
                        let mut ga = Vec::with_capacity(batch * fa);
                        let mut gb = Vec::with_capacity(batch * fb);
                        for r in 0..batch {
                            let row = &g[r * (fa + fb)..(r + 1) * (fa + fb)];
                            ga.extend_from_slice(&row[..fa]);
                            gb.extend_from_slice(&row[fa..]);
                        }
                        vec![(*a, ga), (*b, gb)]
                    }
                    Op::Mse { pred, target } => {
                        let (p, t) = (val(*pred), val(*target));
                        let scale = 2.0 * g[0] / p.numel().max(1) as f64;
                        let gp: Vec<f64> = p.data().iter().zip(t.data()).map(|(a, b)| scale * (a - b)).collect();
                        let gt = gp.iter().map(|v| -v).collect();
                        vec![(*pred, gp), (*target, gt)]
                    }
                    Op::Custom { inputs, rule } => {
                        let ins: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
                        inputs
                            .iter()
                            .copied()
                            .zip(rule.backward(&ins, &node.value, &g))
                            .collect()
                    }
                }
            };
            for (v, gv) in pending {
                self.add_grad(v, &gv);
            }
        }
        Ok(())
    }

    /// Clears all gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_mse_gradient() {
        let (w0, x0, y0) = (0.7, 1.3, 2.0);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![1, 1], vec![x0]).unwrap(), false);
        let w = g.leaf(Tensor::new(vec![1, 1], vec![w0]).unwrap(), true);
        let b = g.leaf(Tensor::zeros(&[1]), false);
        let y = g.leaf(Tensor::new(vec![1, 1], vec![y0]).unwrap(), false);
        let p = g.affine(x, w, b).unwrap();
        let l = g.mse(p, y).unwrap();
        g.backward(l).unwrap();
        let dw = g.grad(w).unwrap()[0];
        assert!((dw - 2.0 * x0 * (w0 * x0 - y0)).abs() < 1e-14);
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[1]), true);
        let y = g.tanh(x);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0]);
    }

    #[test]
    fn second_backward_is_a_contract_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.3), true);
        let y = g.tanh(x);
        g.backward(y).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
        g.reset_grads();
        g.backward(y).unwrap();
    }

    #[test]
    fn shared_input_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![1, 2], vec![0.4, -0.2]).unwrap(), true);
        let c = g.concat(x, x).unwrap();
        let z = g.leaf(Tensor::zeros(&[1, 4]), false);
        let l = g.mse(c, z).unwrap();
        g.backward(l).unwrap();
        // d/dx of (2/4)·Σx² = x
        let gx = g.grad(x).unwrap();
        assert!((gx[0] - 0.4).abs() < 1e-15 && (gx[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[3]), true);
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }
}
