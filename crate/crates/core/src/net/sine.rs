use std::collections::HashMap;

use crate::array::DenseArray;
use crate::net::NetworkSpec;
use crate::sampling::Points;
use crate::tape::{NodeId, Tape};

/// `N × B` matrix whose columns are the points.
pub(super) fn input_matrix(points: &Points) -> DenseArray {
    let (n, dim) = (points.len(), points.dim());
    let mut data = vec![0.0; n * dim];
    for (j, p) in points.iter().enumerate() {
        for (d, &v) in p.iter().enumerate() {
            data[d * n + j] = v;
        }
    }
    DenseArray::matrix(dim, n, data).unwrap()
}

/// A sine MLP recorded on a tape for an `n_in × B` input.
///
/// Hidden layer `k` computes `z_k = ω0 (W_k a_{k-1} + b_k)`, `a_k = sin z_k`;
/// the last layer is linear. Input derivatives follow
/// `∂z_k = ω0 W_k (cos z_{k-1} ⊙ ∂z_{k-1})` and
/// `∂²a_k = cos z_k ⊙ ∂²z_k − sin z_k ⊙ ∂_d z_k ⊙ ∂_e z_k`.
pub(super) struct SineStack {
    weights: Vec<NodeId>,
    biases: Vec<Option<NodeId>>,
    omega0: f64,
    input_dim: usize,
    batch: usize,
    z: Vec<NodeId>,
    a: Vec<NodeId>,
    cos: Vec<Option<NodeId>>,
    out: Option<NodeId>,
    /// Per input dimension: derivative of every pre-activation.
    dz: HashMap<usize, Vec<NodeId>>,
    dout: HashMap<usize, NodeId>,
    d2out: HashMap<(usize, usize), NodeId>,
}

impl SineStack {
    pub(super) fn new(
        tape: &mut Tape,
        spec: &NetworkSpec,
        prefix: &str,
        input: NodeId,
        batch: usize,
    ) -> Self {
        Self::with_input_dim(tape, spec, prefix, input, batch, spec.input_dim)
    }

    pub(super) fn with_input_dim(
        tape: &mut Tape,
        spec: &NetworkSpec,
        prefix: &str,
        input: NodeId,
        batch: usize,
        input_dim: usize,
    ) -> Self {
        let weights: Vec<NodeId> = (0..spec.depth)
            .map(|k| tape.param(&format!("{prefix}w{k}")))
            .collect();
        let ones = spec
            .bias
            .then(|| tape.constant(DenseArray::filled(&[1, batch], 1.0)));
        let biases: Vec<Option<NodeId>> = (0..spec.depth)
            .map(|k| {
                ones.map(|ones| {
                    let b = tape.param(&format!("{prefix}b{k}"));
                    tape.matmul(b, ones)
                })
            })
            .collect();

        let hidden = spec.depth - 1;
        let (mut z, mut a) = (Vec::with_capacity(hidden), Vec::with_capacity(hidden));
        let mut prev = input;
        for k in 0..hidden {
            let lin = tape.matmul(weights[k], prev);
            let lin = match biases[k] {
                Some(b) => tape.add(lin, b),
                None => lin,
            };
            let zk = tape.scale(lin, spec.omega0);
            let ak = tape.sin(zk);
            z.push(zk);
            a.push(ak);
            prev = ak;
        }
        Self {
            weights,
            biases,
            omega0: spec.omega0,
            input_dim,
            batch,
            z,
            a,
            cos: vec![None; hidden],
            out: None,
            dz: HashMap::new(),
            dout: HashMap::new(),
            d2out: HashMap::new(),
        }
    }

    fn hidden(&self) -> usize {
        self.z.len()
    }

    fn last_weight(&self) -> NodeId {
        *self.weights.last().unwrap()
    }

    fn cos_at(&mut self, tape: &mut Tape, k: usize) -> NodeId {
        *self.cos[k].get_or_insert_with(|| tape.cos(self.z[k]))
    }

    /// `out × B` network output.
    pub(super) fn value(&mut self, tape: &mut Tape) -> NodeId {
        if let Some(out) = self.out {
            return out;
        }
        let w = self.last_weight();
        let lin = tape.matmul(w, *self.a.last().unwrap());
        let out = match *self.biases.last().unwrap() {
            Some(b) => tape.add(lin, b),
            None => lin,
        };
        self.out = Some(out);
        out
    }

    fn dz_chain(&mut self, tape: &mut Tape, d: usize) -> Vec<NodeId> {
        if let Some(v) = self.dz.get(&d) {
            return v.clone();
        }
        let mut basis = DenseArray::zeros(&[self.input_dim, self.batch]);
        basis.data_mut()[d * self.batch..(d + 1) * self.batch].fill(1.0);
        let e = tape.constant(basis);
        let lin = tape.matmul(self.weights[0], e);
        let mut chain = vec![tape.scale(lin, self.omega0)];
        for k in 1..self.hidden() {
            let c = self.cos_at(tape, k - 1);
            let da = tape.mul(c, chain[k - 1]);
            let lin = tape.matmul(self.weights[k], da);
            chain.push(tape.scale(lin, self.omega0));
        }
        self.dz.insert(d, chain.clone());
        chain
    }

    /// `out × B` derivative with respect to input `d`.
    pub(super) fn first(&mut self, tape: &mut Tape, d: usize) -> NodeId {
        if let Some(&n) = self.dout.get(&d) {
            return n;
        }
        let chain = self.dz_chain(tape, d);
        let last = self.hidden() - 1;
        let c = self.cos_at(tape, last);
        let da = tape.mul(c, chain[last]);
        let out = tape.matmul(self.last_weight(), da);
        self.dout.insert(d, out);
        out
    }

    /// `out × B` second derivative; callers pass `d <= e`.
    pub(super) fn second(&mut self, tape: &mut Tape, d: usize, e: usize) -> NodeId {
        if let Some(&n) = self.d2out.get(&(d, e)) {
            return n;
        }
        let cd = self.dz_chain(tape, d);
        let ce = self.dz_chain(tape, e);
        let mut d2z: Option<NodeId> = None;
        let mut d2a = None;
        for k in 0..self.hidden() {
            if k > 0 {
                let lin = tape.matmul(self.weights[k], d2a.unwrap());
                d2z = Some(tape.scale(lin, self.omega0));
            }
            let cross = tape.mul(cd[k], ce[k]);
            let curv = tape.mul(self.a[k], cross);
            d2a = Some(match d2z {
                Some(d2z) => {
                    let c = self.cos_at(tape, k);
                    let lin = tape.mul(c, d2z);
                    tape.sub(lin, curv)
                }
                None => tape.scale(curv, -1.0),
            });
        }
        let out = tape.matmul(self.last_weight(), d2a.unwrap());
        self.d2out.insert((d, e), out);
        out
    }
}
