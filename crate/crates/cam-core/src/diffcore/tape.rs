//! Reverse-mode tape.
//!
//! Forward calls record nodes into an arena and cache their values; a single
//! backward sweep visits nodes in reverse record order and accumulates
//! parameter gradients into the store. Shapes are checked when a node is
//! recorded, never during backward. One tape per minibatch, single-threaded.

use std::collections::HashMap;

use crate::diffcore::params::{ParamId, ParamStore};
use crate::error::{CamError, Result};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(u32);

impl NodeId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug)]
enum Op {
    /// Constant leaf. No gradient flows out.
    Input,
    /// Parameter leaf. Backward accumulates into `ParamTensor::grad`.
    Param(ParamId),
    /// w (rows x cols) times x (cols). Row accumulation runs left to right
    /// over columns; the inference fast path replays the same order.
    MatVec { w: NodeId, x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Relu { x: NodeId },
    Scale { x: NodeId, k: f64 },
    AddConst { x: NodeId },
    Concat { a: NodeId, b: NodeId },
    /// Elementwise max over same-shape vectors. Gradient is routed one-hot
    /// to the first input attaining the max in each component.
    MaxOver { xs: Vec<NodeId> },
    /// Elementwise min, routed like MaxOver but to the first minimizer.
    MinOver { xs: Vec<NodeId> },
    /// Mean of scalar nodes.
    MeanOver { xs: Vec<NodeId> },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, n: NodeId) -> &[f64] {
        &self.nodes[n.idx()].value
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, n: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[n.idx()].value.len(), 1);
        self.nodes[n.idx()].value[0]
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { op, rows, cols, value });
        id
    }

    fn vec_len(&self, n: NodeId) -> Result<usize> {
        let node = &self.nodes[n.idx()];
        if node.cols != 1 {
            return Err(CamError::Shape(format!(
                "expected a vector node, got {}x{}",
                node.rows, node.cols
            )));
        }
        Ok(node.rows)
    }

    pub fn input(&mut self, value: &[f64]) -> NodeId {
        self.push(Op::Input, value.len(), 1, value.to_vec())
    }

    /// Constant matrix leaf, row-major. No gradient flows out.
    pub fn matrix_input(&mut self, rows: usize, cols: usize, value: &[f64]) -> NodeId {
        assert_eq!(value.len(), rows * cols);
        self.push(Op::Input, rows, cols, value.to_vec())
    }

    /// Record a parameter leaf. Repeated calls for the same parameter return
    /// the node recorded first; values are snapshotted at that moment, so the
    /// store must not change while the tape is alive.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let p = store.get(id);
        let n = self.push(Op::Param(id), p.rows, p.cols, p.values.clone());
        self.param_nodes.insert(id, n);
        n
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = {
            let wn = &self.nodes[w.idx()];
            (wn.rows, wn.cols)
        };
        let xl = self.vec_len(x)?;
        if cols != xl {
            return Err(CamError::Shape(format!(
                "matvec: {rows}x{cols} times vector of length {xl}"
            )));
        }
        let mut out = vec![0.0; rows];
        {
            let wv = &self.nodes[w.idx()].value;
            let xv = &self.nodes[x.idx()].value;
            for (i, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for j in 0..cols {
                    acc += wv[i * cols + j] * xv[j];
                }
                *o = acc;
            }
        }
        Ok(self.push(Op::MatVec { w, x }, rows, 1, out))
    }

    fn binary_same_shape(&mut self, a: NodeId, b: NodeId, sub: bool) -> Result<NodeId> {
        let la = self.vec_len(a)?;
        let lb = self.vec_len(b)?;
        if la != lb {
            return Err(CamError::Shape(format!(
                "elementwise op on lengths {la} and {lb}"
            )));
        }
        let value: Vec<f64> = self.nodes[a.idx()]
            .value
            .iter()
            .zip(&self.nodes[b.idx()].value)
            .map(|(x, y)| if sub { x - y } else { x + y })
            .collect();
        let op = if sub { Op::Sub { a, b } } else { Op::Add { a, b } };
        Ok(self.push(op, la, 1, value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, false)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, true)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value: Vec<f64> = self.nodes[x.idx()].value.iter().map(|v| v.max(0.0)).collect();
        let rows = value.len();
        self.push(Op::Relu { x }, rows, 1, value)
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let value: Vec<f64> = self.nodes[x.idx()].value.iter().map(|v| k * v).collect();
        let rows = value.len();
        self.push(Op::Scale { x, k }, rows, 1, value)
    }

    pub fn add_const(&mut self, x: NodeId, k: f64) -> NodeId {
        let value: Vec<f64> = self.nodes[x.idx()].value.iter().map(|v| v + k).collect();
        let rows = value.len();
        self.push(Op::AddConst { x }, rows, 1, value)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let la = self.vec_len(a)?;
        let lb = self.vec_len(b)?;
        let mut value = Vec::with_capacity(la + lb);
        value.extend_from_slice(&self.nodes[a.idx()].value);
        value.extend_from_slice(&self.nodes[b.idx()].value);
        Ok(self.push(Op::Concat { a, b }, la + lb, 1, value))
    }

    fn reduce(&mut self, xs: &[NodeId], is_max: bool) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(CamError::Contract("reduce over zero nodes".into()));
        }
        let len = self.vec_len(xs[0])?;
        for &x in &xs[1..] {
            if self.vec_len(x)? != len {
                return Err(CamError::Shape("reduce over mixed lengths".into()));
            }
        }
        let mut value = self.nodes[xs[0].idx()].value.clone();
        for &x in &xs[1..] {
            for (o, v) in value.iter_mut().zip(&self.nodes[x.idx()].value) {
                if (is_max && *v > *o) || (!is_max && *v < *o) {
                    *o = *v;
                }
            }
        }
        let op = if is_max {
            Op::MaxOver { xs: xs.to_vec() }
        } else {
            Op::MinOver { xs: xs.to_vec() }
        };
        Ok(self.push(op, len, 1, value))
    }

    pub fn max_over(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        self.reduce(xs, true)
    }

    pub fn min_over(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        self.reduce(xs, false)
    }

    pub fn mean_over(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(CamError::Contract("mean over zero nodes".into()));
        }
        let mut acc = 0.0;
        for &x in xs {
            if self.vec_len(x)? != 1 {
                return Err(CamError::Shape("mean over non-scalar nodes".into()));
            }
            acc += self.nodes[x.idx()].value[0];
        }
        let k = xs.len() as f64;
        Ok(self.push(Op::MeanOver { xs: xs.to_vec() }, 1, 1, vec![acc / k]))
    }

    /// Reverse sweep from a scalar loss node. Parameter gradients accumulate
    /// into the store (callers zero them between minibatches). Every node at
    /// or before the loss is visited exactly once.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        let root = &self.nodes[loss.idx()];
        if root.value.len() != 1 {
            return Err(CamError::Shape(format!(
                "backward root must be scalar, got length {}",
                root.value.len()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.idx()] = Some(vec![1.0]);

        for i in (0..=loss.idx()).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(pid) => {
                    let grad = &mut store.get_mut(*pid).grad;
                    for (dst, src) in grad.iter_mut().zip(&g) {
                        *dst += src;
                    }
                }
                Op::MatVec { w, x } => {
                    let cols = self.nodes[w.idx()].cols;
                    let wv = &self.nodes[w.idx()].value;
                    let xv = &self.nodes[x.idx()].value;
                    {
                        let gw = grads[w.idx()].get_or_insert_with(|| vec![0.0; wv.len()]);
                        for (ii, gi) in g.iter().enumerate() {
                            for (jj, xj) in xv.iter().enumerate() {
                                gw[ii * cols + jj] += gi * xj;
                            }
                        }
                    }
                    let gx = grads[x.idx()].get_or_insert_with(|| vec![0.0; xv.len()]);
                    for (ii, gi) in g.iter().enumerate() {
                        for (jj, gxj) in gx.iter_mut().enumerate() {
                            *gxj += wv[ii * cols + jj] * gi;
                        }
                    }
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, &g, 1.0);
                    accumulate(&mut grads, *b, &g, 1.0);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut grads, *a, &g, 1.0);
                    accumulate(&mut grads, *b, &g, -1.0);
                }
                Op::Relu { x } => {
                    let xv = &self.nodes[x.idx()].value;
                    let gx = grads[x.idx()].get_or_insert_with(|| vec![0.0; xv.len()]);
                    for (j, gj) in g.iter().enumerate() {
                        if xv[j] > 0.0 {
                            gx[j] += gj;
                        }
                    }
                }
                Op::Scale { x, k } => {
                    accumulate(&mut grads, *x, &g, *k);
                }
                Op::AddConst { x } => {
                    accumulate(&mut grads, *x, &g, 1.0);
                }
                Op::Concat { a, b } => {
                    let la = self.nodes[a.idx()].value.len();
                    {
                        let ga = grads[a.idx()].get_or_insert_with(|| vec![0.0; la]);
                        for (dst, src) in ga.iter_mut().zip(&g[..la]) {
                            *dst += src;
                        }
                    }
                    let lb = self.nodes[b.idx()].value.len();
                    let gb = grads[b.idx()].get_or_insert_with(|| vec![0.0; lb]);
                    for (dst, src) in gb.iter_mut().zip(&g[la..]) {
                        *dst += src;
                    }
                }
                Op::MaxOver { xs } | Op::MinOver { xs } => {
                    let is_max = matches!(self.nodes[i].op, Op::MaxOver { .. });
                    let len = g.len();
                    // Route each component to the first input attaining the
                    // extremum; the routed contributions sum to the incoming
                    // gradient exactly.
                    for j in 0..len {
                        let mut best = 0usize;
                        let mut best_v = self.nodes[xs[0].idx()].value[j];
                        for (k, &x) in xs.iter().enumerate().skip(1) {
                            let v = self.nodes[x.idx()].value[j];
                            if (is_max && v > best_v) || (!is_max && v < best_v) {
                                best = k;
                                best_v = v;
                            }
                        }
                        let gx = grads[xs[best].idx()].get_or_insert_with(|| vec![0.0; len]);
                        gx[j] += g[j];
                    }
                }
                Op::MeanOver { xs } => {
                    let share = g[0] / xs.len() as f64;
                    for &x in xs {
                        let gx = grads[x.idx()].get_or_insert_with(|| vec![0.0; 1]);
                        gx[0] += share;
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], target: NodeId, g: &[f64], scale: f64) {
    let slot = grads[target.idx()].get_or_insert_with(|| vec![0.0; g.len()]);
    for (dst, src) in slot.iter_mut().zip(g) {
        *dst += scale * src;
    }
}
