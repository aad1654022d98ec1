//! Reverse-mode tape over a fixed operation set.
//!
//! A [`Graph`] is an append-only list of nodes; every op reads existing
//! nodes and pushes its result, so node order is already a topological
//! order. [`Graph::backward`] walks it in reverse.

use std::cell::RefCell;
use std::rc::Rc;

use super::{conv2d, conv2d_grad_input, conv2d_grad_weight, sigmoid, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Square(Var),
    Sqrt(Var),
    Abs(Var),
    Clamp01(Var),
    Sum(Var),
    Mean(Var),
    SumLeading(Var),
    SumPerChannel(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        pad: usize,
    },
    DiffX(Var),
    DiffY(Var),
    Reshape(Var),
}

impl<T> Op<T> {
    fn inputs(&self) -> [Option<Var>; 3] {
        use Op::*;
        match *self {
            Leaf => [None; 3],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => [Some(a), Some(b), None],
            AddScalar(a) | MulScalar(a, _) | Sigmoid(a) | Tanh(a) | Square(a) | Sqrt(a)
            | Abs(a) | Clamp01(a) | Sum(a) | Mean(a) | SumLeading(a) | SumPerChannel(a)
            | DiffX(a) | DiffY(a) | Reshape(a) => [Some(a), None, None],
            Conv2d {
                input,
                weight,
                bias,
                ..
            } => [Some(input), Some(weight), bias],
        }
    }
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// A single-threaded recording of one forward pass.
pub struct Graph<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// A leaf that receives no gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    /// A trainable leaf; its gradient is available after [`Graph::backward`].
    pub fn param(&self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    pub fn scalar(&self, value: T) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.nodes.borrow()[v.0].grad.clone()
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    fn push_leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(nodes.len() - 1)
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op
            .inputs()
            .iter()
            .flatten()
            .any(|v| nodes[v.0].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
            grad: None,
        });
        Var(nodes.len() - 1)
    }

    fn unary(&self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(a).map(f);
        self.push(out, op)
    }

    fn binary(&self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let out = self.value(a).zip_map(&self.value(b), f)?;
        Ok(self.push(out, op))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise quotient. Fails if any divisor element is exactly zero;
    /// callers offset denominators themselves.
    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().iter().any(|v| v.is_zero()) {
            return Err(Error::DivisionByZero("Graph::div"));
        }
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn add_scalar(&self, a: Var, s: T) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn mul_scalar(&self, a: Var, s: T) -> Var {
        self.unary(a, |x| x * s, Op::MulScalar(a, s))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.mul_scalar(a, -T::one())
    }

    /// `s - a`.
    pub fn rsub_scalar(&self, s: T, a: Var) -> Var {
        let n = self.neg(a);
        self.add_scalar(n, s)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, |x| x.sqrt(), Op::Sqrt(a))
    }

    pub fn abs(&self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    /// Clamp to `[0, 1]`; gradient passes where the input lies in `[0, 1]`.
    pub fn clamp01(&self, a: Var) -> Var {
        self.unary(a, |x| x.max(T::zero()).min(T::one()), Op::Clamp01(a))
    }

    pub fn sum(&self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).mean());
        self.push(out, Op::Mean(a))
    }

    /// `[C, rest..] -> [rest..]`.
    pub fn sum_leading(&self, a: Var) -> Result<Var> {
        let out = self.value(a).sum_leading()?;
        Ok(self.push(out, Op::SumLeading(a)))
    }

    /// `[C, rest..] -> [C]`.
    pub fn sum_per_channel(&self, a: Var) -> Result<Var> {
        let out = self.value(a).sum_per_channel()?;
        Ok(self.push(out, Op::SumPerChannel(a)))
    }

    pub fn conv2d(&self, input: Var, weight: Var, bias: Option<Var>, pad: usize) -> Result<Var> {
        let out = {
            let b = bias.map(|b| self.value(b));
            conv2d(&self.value(input), &self.value(weight), b.as_deref(), pad)?
        };
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                pad,
            },
        ))
    }

    /// Forward differences `(d/dx, d/dy)` over the two trailing axes.
    pub fn spatial_gradient(&self, a: Var) -> Result<(Var, Var)> {
        let v = self.value(a);
        let dx = v.diff_x()?;
        let dy = v.diff_y()?;
        Ok((self.push(dx, Op::DiffX(a)), self.push(dy, Op::DiffY(a))))
    }

    pub fn reshape(&self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Back-propagates from a scalar `loss`, adding into the gradients of
    /// every trainable leaf it depends on. Calling it again accumulates.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let leaf_grads = {
            let nodes = self.nodes.borrow();
            let root = &nodes[loss.0];
            if root.value.len() != 1 {
                return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
            }
            let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
            grads[loss.0] = Some(Tensor::full(root.value.shape().to_vec(), T::one()));
            let mut leaf_grads = Vec::new();

            for i in (0..=loss.0).rev() {
                let node = &nodes[i];
                if !node.requires_grad {
                    continue;
                }
                let Some(g) = grads[i].take() else { continue };
                if let Op::Leaf = node.op {
                    leaf_grads.push((i, g));
                    continue;
                }
                for (parent, pg) in local_grads(&nodes, node, &g)? {
                    if !nodes[parent.0].requires_grad {
                        continue;
                    }
                    match &mut grads[parent.0] {
                        Some(acc) => acc.add_assign(&pg)?,
                        slot => *slot = Some(pg),
                    }
                }
            }
            leaf_grads
        };

        let mut nodes = self.nodes.borrow_mut();
        for (i, g) in leaf_grads {
            match &mut nodes[i].grad {
                Some(acc) => acc.add_assign(&g)?,
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to<T: Real>(g: Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    if g.len() == n {
        return g.reshape(shape.to_vec());
    }
    let mut out = vec![T::zero(); n];
    for (i, &v) in g.data().iter().enumerate() {
        out[i % n] = out[i % n] + v;
    }
    Tensor::new(shape.to_vec(), out)
}

/// Broadcasts `t` up to the element count of `like` (suffix semantics).
fn expand<T: Real>(t: &Tensor<T>, like: &Tensor<T>) -> Result<Tensor<T>> {
    if t.len() == like.len() {
        return Ok(t.clone());
    }
    let n = t.len();
    Tensor::new(
        like.shape().to_vec(),
        (0..like.len()).map(|i| t.data()[i % n]).collect(),
    )
}

fn local_grads<T: Real>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &Tensor<T>,
) -> Result<Vec<(Var, Tensor<T>)>> {
    let val = |v: Var| &*nodes[v.0].value;
    let y = &*node.value;
    let elementwise = |x: &Tensor<T>, f: &dyn Fn(T, T, T) -> T| -> Result<Tensor<T>> {
        // f(grad, input, output)
        Tensor::new(
            x.shape().to_vec(),
            g.data()
                .iter()
                .zip(x.data())
                .zip(y.data())
                .map(|((&g, &x), &y)| f(g, x, y))
                .collect(),
        )
    };

    Ok(match node.op {
        Op::Leaf => Vec::new(),
        Op::Add(a, b) => vec![
            (a, reduce_to(g.clone(), val(a).shape())?),
            (b, reduce_to(g.clone(), val(b).shape())?),
        ],
        Op::Sub(a, b) => vec![
            (a, reduce_to(g.clone(), val(a).shape())?),
            (b, reduce_to(g.map(|v| -v), val(b).shape())?),
        ],
        Op::Mul(a, b) => {
            let (va, vb) = (expand(val(a), g)?, expand(val(b), g)?);
            vec![
                (a, reduce_to(g.zip_map(&vb, |g, b| g * b)?, val(a).shape())?),
                (b, reduce_to(g.zip_map(&va, |g, a| g * a)?, val(b).shape())?),
            ]
        }
        Op::Div(a, b) => {
            let vb = expand(val(b), g)?;
            let ga = g.zip_map(&vb, |g, b| g / b)?;
            // d(a/b)/db = -(a/b)/b
            let gb = Tensor::new(
                g.shape().to_vec(),
                g.data()
                    .iter()
                    .zip(y.data())
                    .zip(vb.data())
                    .map(|((&g, &q), &b)| -g * q / b)
                    .collect(),
            )?;
            vec![
                (a, reduce_to(ga, val(a).shape())?),
                (b, reduce_to(gb, val(b).shape())?),
            ]
        }
        Op::AddScalar(a) => vec![(a, g.clone())],
        Op::MulScalar(a, s) => vec![(a, g.map(|v| v * s))],
        Op::Sigmoid(a) => vec![(a, elementwise(val(a), &|g, _, y| g * y * (T::one() - y))?)],
        Op::Tanh(a) => vec![(a, elementwise(val(a), &|g, _, y| g * (T::one() - y * y))?)],
        Op::Square(a) => vec![(a, elementwise(val(a), &|g, x, _| g * (x + x))?)],
        Op::Sqrt(a) => vec![(a, elementwise(val(a), &|g, _, y| g / (y + y))?)],
        Op::Abs(a) => vec![(
            a,
            elementwise(val(a), &|g, x, _| {
                if x > T::zero() {
                    g
                } else if x < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            })?,
        )],
        Op::Clamp01(a) => vec![(
            a,
            elementwise(val(a), &|g, x, _| {
                if x >= T::zero() && x <= T::one() {
                    g
                } else {
                    T::zero()
                }
            })?,
        )],
        Op::Sum(a) => vec![(a, Tensor::full(val(a).shape().to_vec(), g.data()[0]))],
        Op::Mean(a) => {
            let n = T::lit(val(a).len() as f64);
            vec![(a, Tensor::full(val(a).shape().to_vec(), g.data()[0] / n))]
        }
        Op::SumLeading(a) => {
            let x = val(a);
            vec![(a, Tensor::from_fn(x.shape().to_vec(), |i| g.data()[i % g.len()]))]
        }
        Op::SumPerChannel(a) => {
            let x = val(a);
            let plane = x.len() / g.len();
            vec![(a, Tensor::from_fn(x.shape().to_vec(), |i| g.data()[i / plane]))]
        }
        Op::Conv2d {
            input,
            weight,
            bias,
            pad,
        } => {
            let mut out = Vec::with_capacity(3);
            if nodes[input.0].requires_grad {
                out.push((
                    input,
                    conv2d_grad_input(g, val(weight), val(input).shape(), pad)?,
                ));
            }
            let wants_weight = nodes[weight.0].requires_grad;
            let wants_bias = bias.is_some_and(|b| nodes[b.0].requires_grad);
            if wants_weight || wants_bias {
                let (gw, gb) = conv2d_grad_weight(g, val(input), val(weight).shape(), pad)?;
                out.push((weight, gw));
                if let Some(b) = bias {
                    out.push((b, gb));
                }
            }
            out
        }
        Op::DiffX(a) => {
            let shape = val(a).shape().to_vec();
            let w = shape[shape.len() - 1];
            let mut gin = vec![T::zero(); g.len()];
            for (src, dst) in g.data().chunks(w).zip(gin.chunks_mut(w)) {
                for j in 0..w - 1 {
                    dst[j + 1] = dst[j + 1] + src[j];
                    dst[j] = dst[j] - src[j];
                }
            }
            vec![(a, Tensor::new(shape, gin)?)]
        }
        Op::DiffY(a) => {
            let shape = val(a).shape().to_vec();
            let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
            let mut gin = vec![T::zero(); g.len()];
            for (src, dst) in g.data().chunks(h * w).zip(gin.chunks_mut(h * w)) {
                for i in 0..h - 1 {
                    for j in 0..w {
                        let gv = src[i * w + j];
                        dst[(i + 1) * w + j] = dst[(i + 1) * w + j] + gv;
                        dst[i * w + j] = dst[i * w + j] - gv;
                    }
                }
            }
            vec![(a, Tensor::new(shape, gin)?)]
        }
        Op::Reshape(a) => vec![(a, g.reshape(val(a).shape().to_vec())?)],
    })
}
