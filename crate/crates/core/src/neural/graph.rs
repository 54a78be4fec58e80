//! Reverse-mode automatic differentiation over flat vectors.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward sweep simply walks it in reverse.
//! Weight matrices are read in place from the borrowed [`ParamStore`];
//! their gradients accumulate into a [`Grads`] buffer aligned with it.
//!
//! Primitive ops panic on shape mismatches. Those are programming errors in
//! model code; the layer types validate user-facing inputs before building.

use super::params::{Grads, ParamId, ParamStore};
use super::{sigmoid, softplus, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatVec { w: ParamId, x: NodeId, rows: usize, cols: usize },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Offset(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Square(NodeId),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize),
    Sum(NodeId),
    Clamp(NodeId, T, T),
    Min(NodeId, NodeId),
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Vec<T>,
}

pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph { params, nodes: Vec::with_capacity(64) }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn value(&self, n: NodeId) -> &[T] {
        &self.nodes[n.0].value
    }

    pub fn scalar(&self, n: NodeId) -> T {
        let v = self.value(n);
        assert_eq!(v.len(), 1, "node is not a scalar");
        v[0]
    }

    pub fn len(&self, n: NodeId) -> usize {
        self.nodes[n.0].value.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, op: Op<T>, value: Vec<T>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(T) -> T, op: Op<T>) -> NodeId {
        let value = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        self.push(op, value)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, f: impl Fn(T, T) -> T, op: Op<T>) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.len(), vb.len(), "elementwise op on mismatched lengths");
        let value = va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect();
        self.push(op, value)
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, values: Vec<T>) -> NodeId {
        self.push(Op::Input, values)
    }

    pub fn input_f64(&mut self, values: &[f64]) -> NodeId {
        self.input(super::to_real(values))
    }

    /// A parameter tensor used directly as a vector (biases, log-stds).
    pub fn param(&mut self, id: ParamId) -> NodeId {
        let value = self.params.get(id).data.clone();
        self.push(Op::Param(id), value)
    }

    /// `W x` with `W` a `[rows, cols]` row-major parameter.
    pub fn matvec(&mut self, w: ParamId, x: NodeId) -> NodeId {
        let t = self.params.get(w);
        assert_eq!(t.shape.len(), 2, "matvec needs a matrix parameter");
        let (rows, cols) = (t.shape[0], t.shape[1]);
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.len(), cols, "matvec input length mismatch for '{}'", t.name);
        let mut y = vec![T::zero(); rows];
        for (r, out) in y.iter_mut().enumerate() {
            let row = &t.data[r * cols..(r + 1) * cols];
            let mut acc = T::zero();
            for (wv, xv) in row.iter().zip(xv) {
                acc += *wv * *xv;
            }
            *out = acc;
        }
        self.push(Op::MatVec { w, x, rows, cols }, y)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, |x, y| if x <= y { x } else { y }, Op::Min(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn offset(&mut self, a: NodeId, c: T) -> NodeId {
        self.unary(a, |x| x + c, Op::Offset(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.ln(), Op::Ln(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Elementwise clamp; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: NodeId, lo: T, hi: T) -> NodeId {
        self.unary(a, |x| x.max(lo).min(hi), Op::Clamp(a, lo, hi))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut value = Vec::new();
        for p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(Op::Concat(parts.to_vec()), value)
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let value = self.nodes[a.0].value[start..start + len].to_vec();
        self.push(Op::Slice(a, start), value)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a.0].value.iter().copied().sum();
        self.push(Op::Sum(a), vec![s])
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let n = self.scale(a, -T::one());
        self.offset(n, T::one())
    }

    /// Sum of a list of scalars.
    pub fn sum_scalars(&mut self, xs: &[NodeId]) -> NodeId {
        let c = self.concat(xs);
        self.sum(c)
    }

    /// Accumulate `d loss / d param` into `grads`.
    pub fn backward_into(&self, loss: NodeId, grads: &mut Grads<T>) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::invalid("backward requires a scalar loss"));
        }
        if !lv[0].is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut adj: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![T::one()]);

        fn acc<T: Real>(adj: &mut [Option<Vec<T>>], id: NodeId, len: usize) -> &mut Vec<T> {
            adj[id.0].get_or_insert_with(|| vec![T::zero(); len])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    for (d, v) in grads.get_mut(*id).iter_mut().zip(&g) {
                        *d += *v;
                    }
                }
                Op::MatVec { w, x, rows, cols } => {
                    let wdata = &self.params.get(*w).data;
                    let xv = &self.nodes[x.0].value;
                    let gw = grads.get_mut(*w);
                    for r in 0..*rows {
                        let gr = g[r];
                        if gr == T::zero() {
                            continue;
                        }
                        let row = &mut gw[r * cols..(r + 1) * cols];
                        for (d, xv) in row.iter_mut().zip(xv) {
                            *d += gr * *xv;
                        }
                    }
                    let gx = acc(&mut adj, *x, *cols);
                    for r in 0..*rows {
                        let gr = g[r];
                        let row = &wdata[r * cols..(r + 1) * cols];
                        for (d, wv) in gx.iter_mut().zip(row) {
                            *d += gr * *wv;
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut adj, *a, g.len()), &g, |v, _| v, &[]);
                    add_into(acc(&mut adj, *b, g.len()), &g, |v, _| v, &[]);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut adj, *a, g.len()), &g, |v, _| v, &[]);
                    add_into(acc(&mut adj, *b, g.len()), &g, |v, _| -v, &[]);
                }
                Op::Mul(a, b) => {
                    let va = &self.nodes[a.0].value;
                    let vb = &self.nodes[b.0].value;
                    add_into(acc(&mut adj, *a, g.len()), &g, |v, y| v * y, vb);
                    add_into(acc(&mut adj, *b, g.len()), &g, |v, x| v * x, va);
                }
                Op::Min(a, b) => {
                    let va = &self.nodes[a.0].value;
                    let vb = &self.nodes[b.0].value;
                    let ga = acc(&mut adj, *a, g.len());
                    for k in 0..g.len() {
                        if va[k] <= vb[k] {
                            ga[k] += g[k];
                        }
                    }
                    let gb = acc(&mut adj, *b, g.len());
                    for k in 0..g.len() {
                        if va[k] > vb[k] {
                            gb[k] += g[k];
                        }
                    }
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    add_into(acc(&mut adj, *a, g.len()), &g, |v, _| v * s, &[]);
                }
                Op::Offset(a) => add_into(acc(&mut adj, *a, g.len()), &g, |v, _| v, &[]),
                Op::Tanh(a) => add_into(acc(&mut adj, *a, g.len()), &g, |v, y| v * (T::one() - y * y), &node.value),
                Op::Sigmoid(a) => add_into(acc(&mut adj, *a, g.len()), &g, |v, y| v * y * (T::one() - y), &node.value),
                Op::Softplus(a) => {
                    let xa = &self.nodes[a.0].value;
                    add_into(acc(&mut adj, *a, g.len()), &g, |v, x| v * sigmoid(x), xa);
                }
                Op::Exp(a) => add_into(acc(&mut adj, *a, g.len()), &g, |v, y| v * y, &node.value),
                Op::Ln(a) => {
                    let xa = &self.nodes[a.0].value;
                    add_into(acc(&mut adj, *a, g.len()), &g, |v, x| v / x, xa);
                }
                Op::Square(a) => {
                    let xa = &self.nodes[a.0].value;
                    add_into(acc(&mut adj, *a, g.len()), &g, |v, x| v * (x + x), xa);
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let xa = &self.nodes[a.0].value;
                    add_into(acc(&mut adj, *a, g.len()), &g, |v, x| if x < lo || x > hi { T::zero() } else { v }, xa);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        let gp = acc(&mut adj, *p, n);
                        for k in 0..n {
                            gp[k] += g[off + k];
                        }
                        off += n;
                    }
                }
                Op::Slice(a, start) => {
                    let n = self.nodes[a.0].value.len();
                    let ga = acc(&mut adj, *a, n);
                    for (k, v) in g.iter().enumerate() {
                        ga[start + k] += *v;
                    }
                }
                Op::Sum(a) => {
                    let n = self.nodes[a.0].value.len();
                    let ga = acc(&mut adj, *a, n);
                    for d in ga.iter_mut() {
                        *d += g[0];
                    }
                }
            }
        }
        Ok(())
    }

    pub fn backward(&self, loss: NodeId) -> Result<Grads<T>> {
        let mut grads = self.params.zero_grads();
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }
}

/// `dst[k] += f(g[k], aux[k])`; `aux` may be empty when `f` ignores it.
#[inline]
fn add_into<T: Real>(dst: &mut [T], g: &[T], f: impl Fn(T, T) -> T, aux: &[T]) {
    if aux.is_empty() {
        for (d, v) in dst.iter_mut().zip(g) {
            *d += f(*v, T::zero());
        }
    } else {
        for ((d, v), a) in dst.iter_mut().zip(g).zip(aux) {
            *d += f(*v, *a);
        }
    }
}
