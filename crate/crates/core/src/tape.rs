//! Reverse-mode differentiation over a recorded list of primitive operations.
//!
//! A [`Tape`] is built once symbolically (leaves are referenced by name) and
//! then evaluated any number of times against fresh leaf bindings. Each
//! evaluation caches every intermediate value so that [`Tape::backward`] can
//! sweep the list in reverse. Input-derivative operators of the coordinate
//! networks are assembled from these same primitives, so penalties on
//! `|∂f/∂x|` are differentiable with respect to the network parameters.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use crate::array::{gemm, DenseArray};
use crate::error::{Error, Result};

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradients keyed by trainable leaf name.
pub type Gradients = BTreeMap<String, DenseArray>;

/// Named arrays bound to the leaves of a tape at evaluation time.
pub trait Bindings {
    fn lookup(&self, name: &str) -> Option<&DenseArray>;
}

impl Bindings for BTreeMap<String, DenseArray> {
    fn lookup(&self, name: &str) -> Option<&DenseArray> {
        self.get(name)
    }
}

impl Bindings for HashMap<String, DenseArray> {
    fn lookup(&self, name: &str) -> Option<&DenseArray> {
        self.get(name)
    }
}

impl Bindings for [(&str, DenseArray)] {
    fn lookup(&self, name: &str) -> Option<&DenseArray> {
        self.iter().find(|(n, _)| *n == name).map(|(_, a)| a)
    }
}

impl<const K: usize> Bindings for [(&str, DenseArray); K] {
    fn lookup(&self, name: &str) -> Option<&DenseArray> {
        self.as_slice().lookup(name)
    }
}

/// Two binding sources searched in order.
pub struct Chain<'a, A: ?Sized, B: ?Sized>(pub &'a A, pub &'a B);

impl<A: Bindings + ?Sized, B: Bindings + ?Sized> Bindings for Chain<'_, A, B> {
    fn lookup(&self, name: &str) -> Option<&DenseArray> {
        self.0.lookup(name).or_else(|| self.1.lookup(name))
    }
}

#[derive(Clone)]
pub enum Op {
    Leaf(String),
    Const(DenseArray),
    MatMul(NodeId, NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Abs(NodeId),
    Relu(NodeId),
    /// Heaviside step `[x > 0]`; carries no gradient.
    Step(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise (Hadamard) product.
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    Mean(NodeId),
    Reshape(NodeId, Vec<usize>),
    /// Selects entries of a flattened input.
    Gather(NodeId, Arc<[usize]>),
    /// Mode-`mode` product of a tensor with a factor stored `rank × extent`:
    /// `out[.., u, ..] = Σ_i factor[i, u] · tensor[.., i, ..]`.
    ModeProduct {
        tensor: NodeId,
        factor: NodeId,
        mode: usize,
    },
    /// Per-point Tucker contraction `Σ core[i₁..i_N] Π_d factor_d[i_d, index_d[p]]`,
    /// producing a `1 × P` row.
    TuckerPoints {
        core: NodeId,
        factors: Vec<NodeId>,
        index: Vec<Arc<[usize]>>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf(_) | Op::Const(_) => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Sin(a)
            | Op::Cos(a)
            | Op::Abs(a)
            | Op::Relu(a)
            | Op::Step(a)
            | Op::Scale(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a, _)
            | Op::Gather(a, _) => vec![*a],
            Op::ModeProduct { tensor, factor, .. } => vec![*tensor, *factor],
            Op::TuckerPoints { core, factors, .. } => {
                let mut v = vec![*core];
                v.extend(factors);
                v
            }
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::Const(_) => "const",
            Op::MatMul(..) => "matmul",
            Op::Sin(_) => "sin",
            Op::Cos(_) => "cos",
            Op::Abs(_) => "abs",
            Op::Relu(_) => "relu",
            Op::Step(_) => "step",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Reshape(..) => "reshape",
            Op::Gather(..) => "gather",
            Op::ModeProduct { .. } => "mode-product",
            Op::TuckerPoints { .. } => "tucker-points",
        }
    }
}

struct Node {
    op: Op,
    requires_grad: bool,
}

/// Recorded computation with cached forward values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaves: HashMap<String, NodeId>,
    trainable: BTreeSet<String>,
    values: Vec<Option<DenseArray>>,
    evaluated: bool,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .field("trainable", &self.trainable)
            .field("evaluated", &self.evaluated)
            .finish()
    }
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

    pub fn trainable(&self) -> impl Iterator<Item = &str> {
        self.trainable.iter().map(String::as_str)
    }

    fn push(&mut self, op: Op) -> NodeId {
        let requires_grad = match &op {
            Op::Leaf(name) => self.trainable.contains(name),
            Op::Step(_) => false,
            other => other
                .inputs()
                .iter()
                .any(|id| self.nodes[id.0].requires_grad),
        };
        self.nodes.push(Node { op, requires_grad });
        self.values.push(None);
        self.evaluated = false;
        NodeId(self.nodes.len() - 1)
    }

    fn named_leaf(&mut self, name: &str, trainable: bool) -> NodeId {
        if let Some(&id) = self.leaves.get(name) {
            return id;
        }
        if trainable {
            self.trainable.insert(name.to_owned());
        }
        let id = self.push(Op::Leaf(name.to_owned()));
        self.leaves.insert(name.to_owned(), id);
        id
    }

    /// A leaf bound at evaluation time, not differentiated.
    pub fn input(&mut self, name: &str) -> NodeId {
        self.named_leaf(name, false)
    }

    /// A trainable leaf; gradients are reported for it by [`Tape::backward`].
    pub fn param(&mut self, name: &str) -> NodeId {
        self.named_leaf(name, true)
    }

    pub fn constant(&mut self, value: DenseArray) -> NodeId {
        self.push(Op::Const(value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sin(a))
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Cos(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Abs(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    pub fn step(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Step(a))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(a, factor))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> NodeId {
        self.push(Op::Reshape(a, shape))
    }

    pub fn gather(&mut self, a: NodeId, index: Arc<[usize]>) -> NodeId {
        self.push(Op::Gather(a, index))
    }

    pub fn mode_product(&mut self, tensor: NodeId, factor: NodeId, mode: usize) -> NodeId {
        self.push(Op::ModeProduct {
            tensor,
            factor,
            mode,
        })
    }

    pub fn tucker_points(
        &mut self,
        core: NodeId,
        factors: Vec<NodeId>,
        index: Vec<Arc<[usize]>>,
    ) -> NodeId {
        self.push(Op::TuckerPoints {
            core,
            factors,
            index,
        })
    }

    /// Sum of several nodes, or `None` when the list is empty.
    pub fn add_all(&mut self, terms: &[NodeId]) -> Option<NodeId> {
        let (&first, rest) = terms.split_first()?;
        Some(rest.iter().fold(first, |acc, &t| self.add(acc, t)))
    }

    /// Cached value of a node from the last evaluation.
    pub fn value(&self, id: NodeId) -> Option<&DenseArray> {
        self.values.get(id.0).and_then(Option::as_ref)
    }

    /// Evaluates every node and returns the value of the final one.
    pub fn eval(&mut self, leaves: &(impl Bindings + ?Sized)) -> Result<&DenseArray> {
        self.evaluated = false;
        for i in 0..self.nodes.len() {
            let v = self.eval_node(i, leaves)?;
            self.values[i] = Some(v);
        }
        self.evaluated = true;
        self.values
            .last()
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::Malformed("empty tape".into()))
    }

    fn val(&self, id: NodeId) -> &DenseArray {
        self.values[id.0]
            .as_ref()
            .expect("inputs precede their consumers")
    }

    fn eval_node(&self, i: usize, leaves: &(impl Bindings + ?Sized)) -> Result<DenseArray> {
        let mismatch = |expected: &[usize], actual: &[usize]| Error::ShapeMismatch {
            node: i,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        };
        Ok(match &self.nodes[i].op {
            Op::Leaf(name) => leaves
                .lookup(name)
                .cloned()
                .ok_or_else(|| Error::UnboundLeaf(name.clone()))?,
            Op::Const(v) => v.clone(),
            Op::MatMul(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                match (a.dims2(), b.dims2()) {
                    (Some((_, k)), Some((k2, _))) if k == k2 => a.matmul(b)?,
                    (Some((_, k)), Some((_, n))) => return Err(mismatch(&[k, n], b.shape())),
                    (None, _) => return Err(mismatch(&[a.len(), 1], a.shape())),
                    (_, None) => return Err(mismatch(&[b.len(), 1], b.shape())),
                }
            }
            Op::Sin(a) => self.val(*a).map(f64::sin),
            Op::Cos(a) => self.val(*a).map(f64::cos),
            Op::Abs(a) => self.val(*a).map(f64::abs),
            Op::Relu(a) => self.val(*a).map(|v| v.max(0.0)),
            Op::Step(a) => self.val(*a).map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (x, y) = (self.val(*a), self.val(*b));
                if x.shape() != y.shape() {
                    return Err(mismatch(x.shape(), y.shape()));
                }
                match &self.nodes[i].op {
                    Op::Add(..) => x.zip_map(y, |p, q| p + q),
                    Op::Sub(..) => x.zip_map(y, |p, q| p - q),
                    _ => x.zip_map(y, |p, q| p * q),
                }
            }
            Op::Scale(a, c) => self.val(*a).scale(*c),
            Op::Sum(a) => DenseArray::scalar(self.val(*a).sum()),
            Op::Mean(a) => DenseArray::scalar(self.val(*a).mean()),
            Op::Reshape(a, shape) => {
                let x = self.val(*a);
                let n: usize = shape.iter().product();
                if n != x.len() {
                    return Err(mismatch(shape, x.shape()));
                }
                x.clone().reshape(shape.clone())?
            }
            Op::Gather(a, index) => {
                let x = self.val(*a).data();
                let mut out = Vec::with_capacity(index.len());
                for &k in index.iter() {
                    out.push(*x.get(k).ok_or_else(|| mismatch(&[k + 1], &[x.len()]))?);
                }
                DenseArray::row(out)
            }
            Op::ModeProduct {
                tensor,
                factor,
                mode,
            } => {
                let (t, f) = (self.val(*tensor), self.val(*factor));
                let (rank, extent) = f.dims2().ok_or_else(|| mismatch(&[0, 0], f.shape()))?;
                if *mode >= t.shape().len() || t.shape()[*mode] != rank {
                    return Err(mismatch(&[rank, extent], t.shape()));
                }
                mode_product(t, f, *mode)
            }
            Op::TuckerPoints {
                core,
                factors,
                index,
            } => {
                let core = self.val(*core);
                let fs: Vec<&DenseArray> = factors.iter().map(|f| self.val(*f)).collect();
                check_tucker_points(core, &fs, index).map_err(|(e, a)| mismatch(&e, &a))?;
                tucker_points_forward(core, &fs, index)
            }
        })
    }

    /// Reverse sweep from a scalar node. Every trainable leaf receives a
    /// gradient (zeros when the output does not depend on it).
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        if !self.evaluated {
            return Err(Error::NotEvaluated);
        }
        let out_val = self.values[output.0].as_ref().ok_or(Error::NotEvaluated)?;
        if !out_val.is_scalar() {
            return Err(Error::NonScalarOutput {
                node: output.0,
                shape: out_val.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<DenseArray>> = vec![None; output.0 + 1];
        grads[output.0] = Some(DenseArray::filled(out_val.shape(), 1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf(_) = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }

        let mut out = Gradients::new();
        for name in &self.trainable {
            let id = self.leaves[name];
            let g = grads
                .get(id.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| DenseArray::zeros(self.val(id).shape()));
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn propagate(&self, i: usize, g: &DenseArray, grads: &mut [Option<DenseArray>]) {
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        let acc = |grads: &mut [Option<DenseArray>], id: NodeId, delta: DenseArray| {
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf(_) | Op::Const(_) | Op::Step(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (m, k) = av.dims2().unwrap();
                let n = bv.dims2().unwrap().1;
                if wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, bv.data(), true, &mut da, 0.0);
                    acc(grads, *a, DenseArray::matrix(m, k, da).unwrap());
                }
                if wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, g.data(), false, &mut db, 0.0);
                    acc(grads, *b, DenseArray::matrix(k, n, db).unwrap());
                }
            }
            Op::Sin(a) if wants(*a) => {
                acc(grads, *a, g.zip_map(self.val(*a), |g, x| g * x.cos()));
            }
            Op::Cos(a) if wants(*a) => {
                acc(grads, *a, g.zip_map(self.val(*a), |g, x| -g * x.sin()));
            }
            Op::Abs(a) if wants(*a) => {
                acc(grads, *a, g.zip_map(self.val(*a), |g, x| g * sign(x)));
            }
            Op::Relu(a) if wants(*a) => {
                acc(
                    grads,
                    *a,
                    g.zip_map(self.val(*a), |g, x| if x > 0.0 { g } else { 0.0 }),
                );
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    acc(grads, *a, g.clone());
                }
                if wants(*b) {
                    acc(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    acc(grads, *a, g.clone());
                }
                if wants(*b) {
                    acc(grads, *b, g.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    acc(grads, *a, g.zip_map(self.val(*b), |g, y| g * y));
                }
                if wants(*b) {
                    acc(grads, *b, g.zip_map(self.val(*a), |g, x| g * x));
                }
            }
            Op::Scale(a, c) if wants(*a) => acc(grads, *a, g.scale(*c)),
            Op::Sum(a) if wants(*a) => {
                acc(grads, *a, DenseArray::filled(self.val(*a).shape(), g.data()[0]));
            }
            Op::Mean(a) if wants(*a) => {
                let x = self.val(*a);
                let v = g.data()[0] / x.len() as f64;
                acc(grads, *a, DenseArray::filled(x.shape(), v));
            }
            Op::Reshape(a, _) if wants(*a) => {
                let shape = self.val(*a).shape().to_vec();
                acc(grads, *a, g.clone().reshape(shape).unwrap());
            }
            Op::Gather(a, index) if wants(*a) => {
                let x = self.val(*a);
                let mut d = DenseArray::zeros(x.shape());
                let buf = d.data_mut();
                for (&k, gv) in index.iter().zip(g.data()) {
                    buf[k] += gv;
                }
                acc(grads, *a, d);
            }
            Op::ModeProduct {
                tensor,
                factor,
                mode,
            } => {
                let (t, f) = (self.val(*tensor), self.val(*factor));
                let (dt, df) = mode_product_backward(t, f, *mode, g, wants(*tensor), wants(*factor));
                if let Some(dt) = dt {
                    acc(grads, *tensor, dt);
                }
                if let Some(df) = df {
                    acc(grads, *factor, df);
                }
            }
            Op::TuckerPoints {
                core,
                factors,
                index,
            } => {
                let c = self.val(*core);
                let fs: Vec<&DenseArray> = factors.iter().map(|f| self.val(*f)).collect();
                let want_f: Vec<bool> = factors.iter().map(|f| wants(*f)).collect();
                let (dc, dfs) = tucker_points_backward(c, &fs, index, g, wants(*core), &want_f);
                if let Some(dc) = dc {
                    acc(grads, *core, dc);
                }
                for (f, df) in factors.iter().zip(dfs) {
                    if let Some(df) = df {
                        acc(grads, *f, df);
                    }
                }
            }
            _ => {}
        }
    }

    /// Short description of every node, for diagnostics.
    pub fn describe(&self) -> Vec<String> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let ins: Vec<String> = n.op.inputs().iter().map(|x| x.0.to_string()).collect();
                format!("{i}: {}({})", n.op.name(), ins.join(", "))
            })
            .collect()
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn mode_product(t: &DenseArray, f: &DenseArray, mode: usize) -> DenseArray {
    let (rank, extent) = f.dims2().unwrap();
    let shape = t.shape();
    let prefix: usize = shape[..mode].iter().product();
    let suffix: usize = shape[mode + 1..].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape[mode] = extent;
    let mut out = vec![0.0; prefix * extent * suffix];
    let (tin, block_in, block_out) = (t.data(), rank * suffix, extent * suffix);
    for a in 0..prefix {
        gemm(
            extent,
            rank,
            suffix,
            f.data(),
            true,
            &tin[a * block_in..(a + 1) * block_in],
            false,
            &mut out[a * block_out..(a + 1) * block_out],
            0.0,
        );
    }
    DenseArray::new(out_shape, out).unwrap()
}

fn mode_product_backward(
    t: &DenseArray,
    f: &DenseArray,
    mode: usize,
    g: &DenseArray,
    want_t: bool,
    want_f: bool,
) -> (Option<DenseArray>, Option<DenseArray>) {
    let (rank, extent) = f.dims2().unwrap();
    let shape = t.shape();
    let prefix: usize = shape[..mode].iter().product();
    let suffix: usize = shape[mode + 1..].iter().product();
    let (block_in, block_out) = (rank * suffix, extent * suffix);
    let mut dt = want_t.then(|| vec![0.0; t.len()]);
    let mut df = want_f.then(|| vec![0.0; f.len()]);
    for a in 0..prefix {
        let gb = &g.data()[a * block_out..(a + 1) * block_out];
        if let Some(dt) = dt.as_mut() {
            gemm(
                rank,
                extent,
                suffix,
                f.data(),
                false,
                gb,
                false,
                &mut dt[a * block_in..(a + 1) * block_in],
                0.0,
            );
        }
        if let Some(df) = df.as_mut() {
            let tb = &t.data()[a * block_in..(a + 1) * block_in];
            gemm(rank, suffix, extent, tb, false, gb, true, df, 1.0);
        }
    }
    (
        dt.map(|d| DenseArray::new(shape.to_vec(), d).unwrap()),
        df.map(|d| DenseArray::matrix(rank, extent, d).unwrap()),
    )
}

type ShapePair = (Vec<usize>, Vec<usize>);

fn check_tucker_points(
    core: &DenseArray,
    factors: &[&DenseArray],
    index: &[Arc<[usize]>],
) -> std::result::Result<(), ShapePair> {
    let ranks = core.shape();
    if ranks.len() != factors.len() || index.len() != factors.len() {
        return Err((vec![factors.len()], ranks.to_vec()));
    }
    let points = index.first().map_or(0, |ix| ix.len());
    for (d, (f, ix)) in factors.iter().zip(index).enumerate() {
        let (r, u) = f.dims2().ok_or_else(|| (vec![ranks[d], 0], f.shape().to_vec()))?;
        if r != ranks[d] {
            return Err((vec![ranks[d], u], f.shape().to_vec()));
        }
        if ix.len() != points {
            return Err((vec![points], vec![ix.len()]));
        }
        if let Some(&bad) = ix.iter().find(|&&k| k >= u) {
            return Err((vec![r, bad + 1], f.shape().to_vec()));
        }
    }
    Ok(())
}

/// Row-major transpose of a `rank × extent` factor, giving contiguous columns.
fn columns(f: &DenseArray) -> Vec<f64> {
    let (r, u) = f.dims2().unwrap();
    let mut out = vec![0.0; r * u];
    for i in 0..r {
        for j in 0..u {
            out[j * r + i] = f.data()[i * u + j];
        }
    }
    out
}

/// Contracts the trailing mode of `t` (last extent `r`) with `v`.
fn contract_last(t: &[f64], v: &[f64], out: &mut Vec<f64>) {
    let r = v.len();
    out.clear();
    out.extend(t.chunks_exact(r).map(|row| {
        row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
    }));
}

fn tucker_points_forward(
    core: &DenseArray,
    factors: &[&DenseArray],
    index: &[Arc<[usize]>],
) -> DenseArray {
    let ranks = core.shape();
    let cols: Vec<Vec<f64>> = factors.iter().map(|f| columns(f)).collect();
    let points = index[0].len();
    let mut out = Vec::with_capacity(points);
    let (mut cur, mut next) = (Vec::new(), Vec::new());
    for p in 0..points {
        cur.clear();
        cur.extend_from_slice(core.data());
        for d in (0..ranks.len()).rev() {
            let r = ranks[d];
            let k = index[d][p];
            contract_last(&cur, &cols[d][k * r..(k + 1) * r], &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        out.push(cur[0]);
    }
    DenseArray::row(out)
}

fn tucker_points_backward(
    core: &DenseArray,
    factors: &[&DenseArray],
    index: &[Arc<[usize]>],
    g: &DenseArray,
    want_core: bool,
    want_factor: &[bool],
) -> (Option<DenseArray>, Vec<Option<DenseArray>>) {
    let ranks = core.shape();
    let n = ranks.len();
    let cols: Vec<Vec<f64>> = factors.iter().map(|f| columns(f)).collect();
    let mut dcore = want_core.then(|| vec![0.0; core.len()]);
    // Gradients accumulated column-major (extent × rank), transposed at the end.
    let mut dcols: Vec<Option<Vec<f64>>> = want_factor
        .iter()
        .zip(&cols)
        .map(|(&w, c)| w.then(|| vec![0.0; c.len()]))
        .collect();

    // right[d]: core with modes d..n contracted away (modes 0..d remain).
    let mut right: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut prefix: Vec<f64> = Vec::new();
    let mut scratch: Vec<f64> = Vec::new();
    for (p, &gp) in g.data().iter().enumerate() {
        if gp == 0.0 {
            continue;
        }
        let col = |d: usize| {
            let k = index[d][p];
            &cols[d][k * ranks[d]..(k + 1) * ranks[d]]
        };
        right[n].clear();
        right[n].extend_from_slice(core.data());
        for d in (0..n).rev() {
            let (lo, hi) = right.split_at_mut(d + 1);
            contract_last(&hi[0], col(d), &mut lo[d]);
        }
        // prefix: outer product of factors 0..d, built incrementally.
        prefix.clear();
        prefix.push(gp);
        for d in 0..n {
            let r = ranks[d];
            if let Some(dc) = dcols[d].as_mut() {
                // right[d + 1] has shape (Π_{e≤d} r_e); contract leading modes with prefix.
                let k = index[d][p];
                let slot = &mut dc[k * r..(k + 1) * r];
                for (l, &w) in prefix.iter().enumerate() {
                    let row = &right[d + 1][l * r..(l + 1) * r];
                    for (s, &v) in slot.iter_mut().zip(row) {
                        *s += w * v;
                    }
                }
            }
            scratch.clear();
            let c = col(d);
            for &w in &prefix {
                scratch.extend(c.iter().map(|&v| w * v));
            }
            std::mem::swap(&mut prefix, &mut scratch);
        }
        if let Some(dc) = dcore.as_mut() {
            for (a, b) in dc.iter_mut().zip(&prefix) {
                *a += b;
            }
        }
    }

    let dcore = dcore.map(|d| DenseArray::new(ranks.to_vec(), d).unwrap());
    let dfs = dcols
        .into_iter()
        .zip(factors)
        .map(|(dc, f)| {
            dc.map(|dc| {
                let (r, u) = f.dims2().unwrap();
                let mut out = vec![0.0; r * u];
                for j in 0..u {
                    for i in 0..r {
                        out[i * u + j] = dc[j * r + i];
                    }
                }
                DenseArray::matrix(r, u, out).unwrap()
            })
        })
        .collect();
    (dcore, dfs)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> DenseArray {
        DenseArray::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_tape_returns_leaf() {
        let mut tape = Tape::new();
        tape.input("A");
        let a = m(2, 2, &[1., 2., 3., 4.]);
        let out = tape.eval(&[("A", a.clone())]).unwrap();
        assert_eq!(out, &a);
    }

    #[test]
    fn sine_of_product() {
        let mut tape = Tape::new();
        let w = tape.param("W");
        let x = tape.input("x");
        let z = tape.matmul(w, x);
        tape.sin(z);
        let out = tape
            .eval(&[("W", m(1, 1, &[FRAC_PI_2])), ("x", m(1, 1, &[1.0]))])
            .unwrap();
        assert_eq!(out.data(), &[1.0]);
    }

    #[test]
    fn mean_abs_and_its_gradient() {
        let mut tape = Tape::new();
        let w = tape.param("W");
        let x = tape.input("x");
        let z = tape.matmul(w, x);
        let a = tape.abs(z);
        let out = tape.mean(a);
        let v = tape
            .eval(&[("W", m(2, 1, &[2., -3.])), ("x", m(1, 1, &[1.0]))])
            .unwrap();
        assert_eq!(v.data(), &[2.5]);
        let g = tape.backward(out).unwrap();
        assert_eq!(g["W"].data(), &[0.5, -0.5]);

        // scalar weight 2: d/dw |w·1| = sign(2) = 1
        let v = tape
            .eval(&[("W", m(1, 1, &[2.0])), ("x", m(1, 1, &[1.0]))])
            .unwrap();
        assert_eq!(v.data(), &[2.0]);
        assert_eq!(tape.backward(out).unwrap()["W"].data(), &[1.0]);
    }

    #[test]
    fn abs_subgradient_is_zero_at_zero() {
        let mut tape = Tape::new();
        let w = tape.param("w");
        let a = tape.abs(w);
        let out = tape.sum(a);
        tape.eval(&[("w", DenseArray::row(vec![0.0, 2.0]))]).unwrap();
        assert_eq!(tape.backward(out).unwrap()["w"].data(), &[0.0, 1.0]);
    }

    #[test]
    fn constant_output_gives_zero_gradient() {
        let mut tape = Tape::new();
        let w = tape.param("w");
        let c = tape.constant(DenseArray::scalar(3.0));
        let _unused = tape.sin(w);
        let out = tape.scale(c, 2.0);
        tape.eval(&[("w", m(2, 3, &[1.0; 6]))]).unwrap();
        let g = tape.backward(out).unwrap();
        assert_eq!(g["w"], DenseArray::zeros(&[2, 3]));
    }

    #[test]
    fn errors_are_reported() {
        let mut tape = Tape::new();
        let a = tape.input("a");
        let b = tape.input("b");
        let s = tape.add(a, b);
        assert!(matches!(tape.backward(s), Err(Error::NotEvaluated)));
        let err = tape.eval(&[("a", DenseArray::row(vec![1.0]))]).unwrap_err();
        assert!(matches!(err, Error::UnboundLeaf(ref n) if n == "b"));
        let err = tape
            .eval(&[
                ("a", DenseArray::row(vec![1.0, 2.0])),
                ("b", DenseArray::row(vec![1.0])),
            ])
            .unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { node: 2, .. }));
        tape.eval(&[
            ("a", DenseArray::row(vec![1.0, 2.0])),
            ("b", DenseArray::row(vec![1.0, 1.0])),
        ])
        .unwrap();
        assert!(matches!(
            tape.backward(s),
            Err(Error::NonScalarOutput { node: 2, .. })
        ));
    }

    #[test]
    fn tucker_points_matches_mode_products() {
        // core 2×3, factors 2×4 and 3×5, points pick (u, v) pairs.
        let core = m(2, 3, &[1., -2., 0.5, 3., 0.25, -1.]);
        let f0 = m(2, 4, &[0.1, 0.2, 0.3, 0.4, -0.5, 0.6, -0.7, 0.8]);
        let f1 = m(3, 5, &(0..15).map(|v| (v as f64).sin()).collect::<Vec<_>>());
        let mut tape = Tape::new();
        let c = tape.input("c");
        let a = tape.input("a");
        let b = tape.input("b");
        let t1 = tape.mode_product(c, b, 1);
        let grid = tape.mode_product(t1, a, 0);
        let binds = [("c", core.clone()), ("a", f0.clone()), ("b", f1.clone())];
        tape.eval(&binds).unwrap();
        let grid = tape.value(grid).unwrap().clone();
        assert_eq!(grid.shape(), &[4, 5]);

        let us: Arc<[usize]> = vec![0, 3, 2, 1].into();
        let vs: Arc<[usize]> = vec![4, 0, 2, 2].into();
        let mut tape = Tape::new();
        let c = tape.input("c");
        let a = tape.input("a");
        let b = tape.input("b");
        tape.tucker_points(c, vec![a, b], vec![us.clone(), vs.clone()]);
        let pts = tape.eval(&binds).unwrap();
        for (p, (&u, &v)) in us.iter().zip(vs.iter()).enumerate() {
            assert!((pts.data()[p] - grid.get2(u, v)).abs() < 1e-14);
        }
    }
}
