//! Tape-based reverse-mode differentiation over whole tensors.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the tape is a
//! valid topological order for gradient propagation. Leaves created with
//! [`Graph::constant`] never receive gradients, and neither does any node whose
//! inputs are all constant.

use super::layers::{affine, causal_conv_forward, relu, ConvLayerParams};
use super::tensor::{check_same_shape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv {
        x: Var,
        kernel: Var,
        bias: Var,
        dilation: usize,
    },
    Relu(Var),
    Add(Var, Var),
    LastStep(Var),
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Concat(Var, Var),
    Reshape(Var),
    Mse(Var, Var),
    Scale(Var, f64),
    Sum(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` was unreachable from the loss.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that takes no gradient (inputs, targets, frozen weights).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn conv(&mut self, x: Var, kernel: Var, bias: Var, dilation: usize) -> Result<Var> {
        let p = ConvLayerParams {
            kernel: self.value(kernel).clone(),
            bias: self.value(bias).clone(),
            dilation,
        };
        let y = causal_conv_forward(self.value(x), &p)?;
        let rg = self.rg(&[x, kernel, bias]);
        Ok(self.push(
            y,
            Op::Conv {
                x,
                kernel,
                bias,
                dilation,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = relu(self.value(x));
        let rg = self.rg(&[x]);
        self.push(y, Op::Relu(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, Op::Add(a, b), rg))
    }

    /// `[C × T] -> [C]`, the column at the final timestep.
    pub fn last_step(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let y = Tensor::vector(v.column(v.dim(1) - 1));
        let rg = self.rg(&[x]);
        self.push(y, Op::LastStep(x), rg)
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = affine(self.value(x), self.value(w), self.value(b))?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(y, Op::Affine { x, w, b }, rg))
    }

    /// Concatenation of the flattened contents of `a` and `b`.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let rg = self.rg(&[a, b]);
        self.push(Tensor::vector(data), Op::Concat(a, b), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::Reshape(x), rg))
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let loss = super::layers::mse(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(loss), Op::Mse(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let y = self.value(x).scaled(factor);
        let rg = self.rg(&[x]);
        self.push(y, Op::Scale(x, factor), rg)
    }

    /// Elementwise sum of same-shaped nodes.
    pub fn sum(&mut self, vars: &[Var]) -> Result<Var> {
        let first = *vars
            .first()
            .ok_or_else(|| Error::Usage("sum of zero terms".into()))?;
        let mut y = self.value(first).clone();
        for v in &vars[1..] {
            y.add_assign(self.value(*v))?;
        }
        let rg = self.rg(vars);
        Ok(self.push(y, Op::Sum(vars.to_vec()), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {}", lv.data()[0])));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta)?,
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(
        &self,
        op: &Op,
        out: &Tensor,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Conv {
                x,
                kernel,
                bias,
                dilation,
            } => {
                let xv = self.value(*x);
                let wv = self.value(*kernel);
                let (c_out, c_in, ks) = (wv.dim(0), wv.dim(1), wv.dim(2));
                let steps = xv.dim(1);
                let (gd, xd, wd) = (g.data(), xv.data(), wv.data());
                if self.wants(*bias) {
                    let db = (0..c_out)
                        .map(|c| gd[c * steps..(c + 1) * steps].iter().sum())
                        .collect();
                    self.accumulate(grads, *bias, Tensor::vector(db))?;
                }
                if self.wants(*kernel) {
                    let mut dw = vec![0.0; c_out * c_in * ks];
                    for c in 0..c_out {
                        let grow = &gd[c * steps..(c + 1) * steps];
                        for ci in 0..c_in {
                            let xrow = &xd[ci * steps..(ci + 1) * steps];
                            for k in 0..ks {
                                let shift = k * dilation;
                                if shift >= steps {
                                    continue;
                                }
                                dw[(c * c_in + ci) * ks + k] = (shift..steps)
                                    .map(|t| grow[t] * xrow[t - shift])
                                    .sum();
                            }
                        }
                    }
                    self.accumulate(grads, *kernel, Tensor::new(wv.shape().to_vec(), dw)?)?;
                }
                if self.wants(*x) {
                    let mut dx = vec![0.0; c_in * steps];
                    for c in 0..c_out {
                        let grow = &gd[c * steps..(c + 1) * steps];
                        for ci in 0..c_in {
                            let dxrow = &mut dx[ci * steps..(ci + 1) * steps];
                            for k in 0..ks {
                                let shift = k * dilation;
                                if shift >= steps {
                                    continue;
                                }
                                let w = wd[(c * c_in + ci) * ks + k];
                                for t in shift..steps {
                                    dxrow[t - shift] += w * grow[t];
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?)?;
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(gv, &z)| if z > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), d)?)?;
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::LastStep(x) => {
                let xv = self.value(*x);
                let (rows, cols) = (xv.dim(0), xv.dim(1));
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    d[r * cols + cols - 1] = g.data()[r];
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), d)?)?;
            }
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (rows, cols) = (wv.dim(0), wv.dim(1));
                let gd = g.data();
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.clone().reshape(self.value(*b).shape())?)?;
                }
                if self.wants(*w) {
                    let mut dw = Vec::with_capacity(rows * cols);
                    for &gr in gd.iter().take(rows) {
                        dw.extend(xv.data().iter().map(|xi| gr * xi));
                    }
                    self.accumulate(grads, *w, Tensor::new(wv.shape().to_vec(), dw)?)?;
                }
                if self.wants(*x) {
                    let mut dx = vec![0.0; cols];
                    let wd = wv.data();
                    for (r, &gr) in gd.iter().enumerate().take(rows) {
                        let row = &wd[r * cols..(r + 1) * cols];
                        for (d, w) in dx.iter_mut().zip(row) {
                            *d += w * gr;
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?)?;
                }
            }
            Op::Concat(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let split = av.numel();
                let da = Tensor::new(av.shape().to_vec(), g.data()[..split].to_vec())?;
                let db = Tensor::new(bv.shape().to_vec(), g.data()[split..].to_vec())?;
                self.accumulate(grads, *a, da)?;
                self.accumulate(grads, *b, db)?;
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, g.clone().reshape(&shape)?)?;
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                check_same_shape("mse", av, bv)?;
                let scale = 2.0 * g.data()[0] / av.numel() as f64;
                let diff = av.sub(bv)?.scaled(scale);
                if self.wants(*b) {
                    self.accumulate(grads, *b, diff.scaled(-1.0))?;
                }
                self.accumulate(grads, *a, diff)?;
            }
            Op::Scale(x, f) => {
                self.accumulate(grads, *x, g.scaled(*f))?;
            }
            Op::Sum(vars) => {
                for v in vars {
                    self.accumulate(grads, *v, g.clone())?;
                }
            }
        }
        debug_assert_eq!(out.shape(), g.shape());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let w = g.param(Tensor::scalar(3.0));
        let zero = g.constant(Tensor::scalar(0.0));
        // mse of a single element is w², so d/dw = 2w = 6
        let loss = g.mse(w, zero).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[6.0]);
    }

    #[test]
    fn linear_regression_gradient() {
        // loss = mse(w·x, y) with x = 1, y = 0, w = 2 -> 4
        let mut g = Graph::new();
        let w = g.param(Tensor::new(vec![1, 1], vec![2.0]).unwrap());
        let b = g.constant(Tensor::zeros(&[1]));
        let x = g.constant(Tensor::vector(vec![1.0]));
        let y = g.constant(Tensor::vector(vec![0.0]));
        let pred = g.affine(x, w, b).unwrap();
        let loss = g.mse(pred, y).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[4.0]);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let w = g.param(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(w), Err(Error::Usage(_))));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![0.0, 1.0, -1.0]));
        let r = g.relu(x);
        let t = g.constant(Tensor::vector(vec![-3.0, -3.0, -3.0]));
        let loss = g.mse(r, t).unwrap();
        let grads = g.backward(loss).unwrap();
        let d = grads.get(x).unwrap().data();
        assert_eq!(d[0], 0.0);
        assert!(d[1] > 0.0);
        assert_eq!(d[2], 0.0);
    }
}
