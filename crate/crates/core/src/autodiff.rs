//! Reverse-mode automatic differentiation on a tape.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes only ever reference earlier nodes, so the tape order is a
//! topological order and [`Graph::backward`] visits each node once by walking
//! it in reverse. A node consumed by several operations accumulates the sum of
//! their contributions before its own backward rule runs.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::kernels::{self, BnBatch, Conv2dParams};
use crate::tensor::{Scalar, Shape, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        p: Conv2dParams,
    },
    AvgPool {
        x: Var,
        kernel: usize,
        stride: usize,
    },
    Resize {
        x: Var,
    },
    Concat {
        xs: Vec<Var>,
    },
    Relu {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    BnTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        invstd: Vec<T>,
    },
    BnEval {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        invstd: Vec<T>,
    },
    Sum {
        x: Var,
    },
    /// Scalar function of `x` whose gradient was computed alongside its value.
    Scalar {
        x: Var,
        grad: Tensor<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::AvgPool { .. } => "avg_pool2d",
            Op::Resize { .. } => "bilinear_resize",
            Op::Concat { .. } => "concat_channels",
            Op::Relu { .. } => "relu",
            Op::Add { .. } => "add",
            Op::BnTrain { .. } | Op::BnEval { .. } => "batchnorm2d",
            Op::Sum { .. } => "sum",
            Op::Scalar { .. } => "loss",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    scope: usize,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    scope_names: Vec<String>,
    scope_stack: Vec<usize>,
    /// Fixed ReLU gates and the index of the next ReLU to use.
    frozen: Option<(Vec<Vec<bool>>, usize)>,
    crossings: usize,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            scope_names: vec![String::new()],
            scope_stack: vec![0],
            frozen: None,
            crossings: 0,
        }
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

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Enters a named scope; nodes created until the matching
    /// [`Graph::pop_scope`] are attributed to `outer.name`.
    pub fn push_scope(&mut self, name: &str) {
        let parent = &self.scope_names[*self.scope_stack.last().expect("root scope")];
        let path = if parent.is_empty() {
            name.to_string()
        } else {
            format!("{parent}.{name}")
        };
        let idx = match self.scope_names.iter().position(|s| *s == path) {
            Some(i) => i,
            None => {
                self.scope_names.push(path);
                self.scope_names.len() - 1
            }
        };
        self.scope_stack.push(idx);
    }

    pub fn pop_scope(&mut self) {
        if self.scope_stack.len() > 1 {
            self.scope_stack.pop();
        }
    }

    pub fn scope_of(&self, v: Var) -> &str {
        &self.scope_names[self.nodes[v.0].scope]
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let scope = *self.scope_stack.last().expect("root scope");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            scope,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// The leaf for a stored parameter. Repeated calls return the same node,
    /// so a shared parameter accumulates every consumer's contribution.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.param(id).clone(), Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    /// The parameter leaves registered so far.
    pub fn param_vars(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&p, &v)| (p, v))
    }

    /// A copy of `x` that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.constant(value)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, p: Conv2dParams) -> Result<Var> {
        let bias = b.map(|b| self.nodes[b.0].value.data().to_vec());
        let value = kernels::conv2d(self.value(x), self.value(w), bias.as_deref(), &p)?;
        let mut ins = vec![x, w];
        ins.extend(b);
        let rg = self.requires_grad(&ins);
        Ok(self.push(value, Op::Conv2d { x, w, b, p }, rg))
    }

    pub fn avg_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let value = kernels::avg_pool2d(self.value(x), kernel, stride)?;
        let rg = self.requires_grad(&[x]);
        Ok(self.push(value, Op::AvgPool { x, kernel, stride }, rg))
    }

    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let value = kernels::bilinear_resize(self.value(x), out_h, out_w)?;
        let rg = self.requires_grad(&[x]);
        Ok(self.push(value, Op::Resize { x }, rg))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.len() == 1 {
            return Ok(xs[0]);
        }
        let refs: Vec<&Tensor<T>> = xs.iter().map(|v| self.value(*v)).collect();
        let value = kernels::concat_channels(&refs)?;
        let rg = self.requires_grad(xs);
        Ok(self.push(value, Op::Concat { xs: xs.to_vec() }, rg))
    }

    /// Which outputs of each ReLU, in creation order, are positive.
    pub fn relu_masks(&self) -> Vec<Vec<bool>> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Relu { .. }))
            .map(|n| n.value.data().iter().map(|&v| v > T::zero()).collect())
            .collect()
    }

    /// Makes later ReLUs pass or block each element according to `masks`
    /// instead of its sign, turning the graph into a smooth function of its
    /// inputs near the point the masks came from. Forward only: `backward`
    /// refuses a frozen graph.
    pub fn freeze_relus(&mut self, masks: Vec<Vec<bool>>) {
        self.frozen = Some((masks, 0));
    }

    /// Elements whose sign disagreed with their frozen gate.
    pub fn kink_crossings(&self) -> usize {
        self.crossings
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = match &mut self.frozen {
            Some((masks, next)) => {
                let mask = &masks[*next];
                *next += 1;
                let xv = &self.nodes[x.0].value;
                assert_eq!(mask.len(), xv.len(), "frozen mask does not fit relu {}", *next - 1);
                let data = xv.data();
                self.crossings += data.iter().zip(mask).filter(|(&v, &m)| (v > T::zero()) != m).count();
                Tensor::from_fn(xv.shape(), |i| if mask[i] { data[i] } else { T::zero() })
            }
            None => kernels::relu(self.value(x)),
        };
        let rg = self.requires_grad(&[x]);
        self.push(value, Op::Relu { x }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::add(self.value(a), self.value(b))?;
        let rg = self.requires_grad(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    /// Batch norm with batch statistics. The statistics are returned so the
    /// caller can fold them into its running estimates.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BnBatch<T>)> {
        let (value, xhat, stats) = kernels::batchnorm_train(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        )?;
        let rg = self.requires_grad(&[x, gamma, beta]);
        let op = Op::BnTrain {
            x,
            gamma,
            beta,
            xhat,
            invstd: stats.invstd.clone(),
        };
        Ok((self.push(value, op, rg), stats))
    }

    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let (value, invstd) = kernels::batchnorm_eval(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            running_mean,
            running_var,
            eps,
        )?;
        let rg = self.requires_grad(&[x, gamma, beta]);
        let op = Op::BnEval {
            x,
            gamma,
            beta,
            mean: running_mean.to_vec(),
            invstd,
        };
        Ok(self.push(value, op, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.requires_grad(&[x]);
        self.push(value, Op::Sum { x }, rg)
    }

    /// Records a scalar `value = f(x)` whose gradient `d value / d x` has
    /// already been computed.
    pub fn scalar_fn(&mut self, x: Var, value: T, grad: Tensor<T>) -> Result<Var> {
        crate::tensor::ensure_same_shape("scalar_fn", self.shape(x), grad.shape())?;
        let rg = self.requires_grad(&[x]);
        Ok(self.push(Tensor::scalar(value), Op::Scalar { x, grad }, rg))
    }

    /// Scope of the first node holding a non-finite value. Scans the tape,
    /// so call it only when diagnosing.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes.iter().find(|n| !n.value.is_finite()).map(|n| {
            let scope = &self.scope_names[n.scope];
            if scope.is_empty() {
                n.op.name().to_string()
            } else {
                format!("{scope} ({})", n.op.name())
            }
        })
    }

    /// Gradients of the scalar `loss` with respect to every node it depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.frozen.is_some() {
            return Err(Error::Contract("backward through frozen relus".into()));
        }
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {ls}"
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(ls, T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(
        &self,
        op: &Op<T>,
        out: &Tensor<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, p } => {
                let cg = kernels::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    b.is_some(),
                    p,
                    g,
                    self.wants(*x),
                )?;
                if let Some(gx) = cg.input {
                    accumulate(grads, *x, gx)?;
                }
                accumulate(grads, *w, cg.weight)?;
                if let (Some(b), Some(gb)) = (b, cg.bias) {
                    let n = gb.len();
                    accumulate(grads, *b, Tensor::from_vec(self.shape(*b), gb).map_err(|_| {
                        Error::Contract(format!("bias gradient of length {n}"))
                    })?)?;
                }
            }
            Op::AvgPool { x, kernel, stride } => {
                let gx = kernels::avg_pool2d_backward(self.shape(*x), g, *kernel, *stride)?;
                accumulate(grads, *x, gx)?;
            }
            Op::Resize { x } => {
                let gx = kernels::bilinear_resize_backward(self.shape(*x), g)?;
                accumulate(grads, *x, gx)?;
            }
            Op::Concat { xs } => {
                let mut start = 0;
                for x in xs {
                    let c = self.shape(*x).c;
                    if self.wants(*x) {
                        accumulate(grads, *x, g.slice_channels(start, c)?)?;
                    }
                    start += c;
                }
            }
            Op::Relu { x } => {
                accumulate(grads, *x, kernels::relu_backward(out, g))?;
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone())?;
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.clone())?;
                }
            }
            Op::BnTrain {
                x,
                gamma,
                beta,
                xhat,
                invstd,
            } => {
                let (dx, dg, db) = kernels::batchnorm_train_backward(
                    xhat,
                    invstd,
                    self.value(*gamma).data(),
                    g,
                );
                self.bn_grads(grads, (*x, *gamma, *beta), dx, dg, db)?;
            }
            Op::BnEval {
                x,
                gamma,
                beta,
                mean,
                invstd,
            } => {
                let (dx, dg, db) = kernels::batchnorm_eval_backward(
                    self.value(*x),
                    mean,
                    invstd,
                    self.value(*gamma).data(),
                    g,
                );
                self.bn_grads(grads, (*x, *gamma, *beta), dx, dg, db)?;
            }
            Op::Sum { x } => {
                let up = g.data()[0];
                accumulate(grads, *x, Tensor::full(self.shape(*x), up))?;
            }
            Op::Scalar { x, grad } => {
                let up = g.data()[0];
                accumulate(grads, *x, grad.map(|v| v * up))?;
            }
        }
        Ok(())
    }

    fn bn_grads(
        &self,
        grads: &mut [Option<Tensor<T>>],
        (x, gamma, beta): (Var, Var, Var),
        dx: Tensor<T>,
        dg: Vec<T>,
        db: Vec<T>,
    ) -> Result<()> {
        if self.wants(x) {
            accumulate(grads, x, dx)?;
        }
        accumulate(grads, gamma, Tensor::from_vec(self.shape(gamma), dg)?)?;
        accumulate(grads, beta, Tensor::from_vec(self.shape(beta), db)?)?;
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Result of [`Graph::backward`]. Nodes the loss does not depend on have no
/// gradient.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a stored parameter, if it was used and reached.
    pub fn param(&self, graph: &Graph<T>, id: ParamId) -> Option<&Tensor<T>> {
        graph.params.get(&id).and_then(|v| self.get(*v))
    }

    /// Every reached parameter gradient, ordered by parameter id.
    pub fn params(&self, graph: &Graph<T>) -> Vec<(ParamId, &Tensor<T>)> {
        let mut out: Vec<_> = graph
            .param_vars()
            .filter_map(|(p, v)| self.get(v).map(|g| (p, g)))
            .collect();
        out.sort_by_key(|(p, _)| *p);
        out
    }
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every entry.
pub fn finite_diff_grad<T: Scalar>(
    mut f: impl FnMut(&Tensor<T>) -> T,
    x: &Tensor<T>,
    h: f64,
) -> Tensor<T> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + T::of(h);
        let up = f(&probe);
        probe.data_mut()[i] = orig - T::of(h);
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / T::of(2.0 * h);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn relu_sum_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![-1.0, 2.0]).unwrap());
        let r = g.relu(x);
        let l = g.sum(r);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn frozen_relu_follows_mask() {
        let t = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0, 2.0, 0.5]).unwrap();
        let mut g = Graph::<f64>::new();
        let x = g.input(t.clone());
        g.relu(x);
        let masks = g.relu_masks();
        assert_eq!(masks, vec![vec![false, true, true]]);

        let mut f = Graph::<f64>::new();
        f.freeze_relus(vec![vec![true, false, true]]);
        let x = f.input(t);
        let r = f.relu(x);
        assert_eq!(f.value(r).data(), &[-1.0, 0.0, 0.5]);
        assert_eq!(f.kink_crossings(), 2);
        let l = f.sum(r);
        assert!(matches!(f.backward(l), Err(Error::Contract(_))));
    }

    #[test]
    fn product_rule_on_scalar_conv() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::scalar(3.0));
        let w = g.input(Tensor::scalar(-2.0));
        let y = g.conv2d(x, w, None, Conv2dParams::default()).unwrap();
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[3.0]);
        assert_eq!(grads.get(x).unwrap().data(), &[-2.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros(Shape::new(1, 2, 1, 1)));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_nodes_have_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::scalar(1.0));
        let unused = g.input(Tensor::scalar(5.0));
        let c = g.constant(Tensor::scalar(2.0));
        let y = g.add(x, c).unwrap();
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(unused).is_none());
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn add_passes_gradient_to_both_sides_and_fanout_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full(Shape::new(1, 1, 2, 2), 1.0));
        let y = g.input(Tensor::full(Shape::new(1, 1, 2, 2), 2.0));
        let s = g.add(x, y).unwrap();
        let r = g.relu(s);
        let l = g.sum(r);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap(), grads.get(y).unwrap());
        assert_eq!(grads.get(x).unwrap(), grads.get(s).unwrap());

        // x used three times: x + x + x.
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::scalar(1.5));
        let a = g.add(x, x).unwrap();
        let b = g.add(a, x).unwrap();
        let l = g.sum(b);
        assert_eq!(g.backward(l).unwrap().get(x).unwrap().data(), &[3.0]);
    }

    #[test]
    fn finite_difference_basics() {
        let x = Tensor::scalar(3.0f64);
        let g = finite_diff_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-5);
        assert!((g.data()[0] - 6.0).abs() < 1e-8);
        let g = finite_diff_grad(|_| 4.0, &x, 1e-5);
        assert_eq!(g.data()[0], 0.0);
    }

    #[test]
    fn resize_gradient_matches_finite_difference() {
        let x = Tensor::from_fn(Shape::new(1, 2, 3, 4), |i| ((i * 37 % 11) as f64) / 7.0 - 0.5);
        let weights = Tensor::from_fn(Shape::new(1, 2, 6, 8), |i| ((i * 13 % 17) as f64) / 9.0);
        let objective = |t: &Tensor<f64>| {
            let y = kernels::bilinear_resize(t, 6, 8).unwrap();
            y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let numeric = finite_diff_grad(objective, &x, 1e-5);

        let mut g = Graph::<f64>::new();
        let xv = g.input(x.clone());
        let y = g.bilinear_resize(xv, 6, 8).unwrap();
        let value: f64 = g.value(y).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        let l = g.scalar_fn(y, value, weights.clone()).unwrap();
        let grads = g.backward(l).unwrap();
        for (a, n) in grads.get(xv).unwrap().data().iter().zip(numeric.data()) {
            assert!((a - n).abs() < 1e-6, "{a} vs {n}");
        }

        // Plain sum of an upsampled tensor.
        let numeric = finite_diff_grad(
            |t: &Tensor<f64>| kernels::bilinear_resize(t, 6, 8).unwrap().sum(),
            &x,
            1e-5,
        );
        let mut g = Graph::<f64>::new();
        let xv = g.input(x);
        let y = g.bilinear_resize(xv, 6, 8).unwrap();
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        for (a, n) in grads.get(xv).unwrap().data().iter().zip(numeric.data()) {
            assert!(rel_err(*a, *n) < 1e-6);
        }
    }

    #[test]
    fn scopes_locate_first_non_finite_node() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::scalar(1.0));
        g.push_scope("stage1");
        g.push_scope("conv");
        let bad = g.constant(Tensor::scalar(f32::NAN));
        let _ = g.add(x, bad).unwrap();
        g.pop_scope();
        g.pop_scope();
        assert_eq!(g.scope_of(bad), "stage1.conv");
        assert_eq!(g.first_non_finite().unwrap(), "stage1.conv (leaf)");
    }
}
