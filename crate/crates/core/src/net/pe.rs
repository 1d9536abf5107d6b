use std::collections::HashMap;
use std::f64::consts::TAU;

use crate::array::DenseArray;
use crate::net::CoordinateNetwork;
use crate::sampling::Points;
use crate::tape::{NodeId, Tape};

pub(super) const FREQ: &str = "pe.freq";
pub(super) const AMP: &str = "pe.amp";

/// ReLU MLP over fixed Fourier features. The features and their input
/// derivatives are constants of the batch; derivatives through the ReLU
/// layers use the subgradient `[z > 0]`.
pub(super) struct PeGraph {
    features: FourierFeatures,
    weights: Vec<NodeId>,
    biases: Vec<Option<NodeId>>,
    z: Vec<NodeId>,
    h: Vec<NodeId>,
    steps: Vec<Option<NodeId>>,
    out: Option<NodeId>,
    dout: HashMap<usize, NodeId>,
}

struct FourierFeatures {
    /// `m × N` frequency vectors.
    freq: DenseArray,
    amp: Vec<f64>,
    /// Phase `2π b_iᵀ x` per (feature, point).
    phase: Vec<f64>,
    batch: usize,
}

impl FourierFeatures {
    fn new(net: &CoordinateNetwork, points: &Points) -> Self {
        let freq = net.buffers()[FREQ].clone();
        let amp = net.buffers()[AMP].data().to_vec();
        let (m, dim) = freq.dims2().unwrap();
        let batch = points.len();
        let mut phase = vec![0.0; m * batch];
        for i in 0..m {
            let b = &freq.data()[i * dim..(i + 1) * dim];
            for (j, p) in points.iter().enumerate() {
                phase[i * batch + j] = TAU * b.iter().zip(p).map(|(u, v)| u * v).sum::<f64>();
            }
        }
        Self {
            freq,
            amp,
            phase,
            batch,
        }
    }

    /// Rows `2i, 2i+1` hold `a_i cos φ_i`, `a_i sin φ_i`.
    fn values(&self) -> DenseArray {
        let m = self.amp.len();
        let mut out = vec![0.0; 2 * m * self.batch];
        for i in 0..m {
            for j in 0..self.batch {
                let ph = self.phase[i * self.batch + j];
                out[2 * i * self.batch + j] = self.amp[i] * ph.cos();
                out[(2 * i + 1) * self.batch + j] = self.amp[i] * ph.sin();
            }
        }
        DenseArray::matrix(2 * m, self.batch, out).unwrap()
    }

    fn derivative(&self, d: usize) -> DenseArray {
        let (m, dim) = self.freq.dims2().unwrap();
        let mut out = vec![0.0; 2 * m * self.batch];
        for i in 0..m {
            let k = TAU * self.freq.data()[i * dim + d] * self.amp[i];
            for j in 0..self.batch {
                let ph = self.phase[i * self.batch + j];
                out[2 * i * self.batch + j] = -k * ph.sin();
                out[(2 * i + 1) * self.batch + j] = k * ph.cos();
            }
        }
        DenseArray::matrix(2 * m, self.batch, out).unwrap()
    }
}

impl PeGraph {
    pub(super) fn new(tape: &mut Tape, net: &CoordinateNetwork, points: &Points) -> Self {
        let spec = net.spec();
        let features = FourierFeatures::new(net, points);
        let weights: Vec<NodeId> = (0..spec.depth).map(|k| tape.param(&format!("w{k}"))).collect();
        let ones = spec
            .bias
            .then(|| tape.constant(DenseArray::filled(&[1, points.len()], 1.0)));
        let biases: Vec<Option<NodeId>> = (0..spec.depth)
            .map(|k| {
                ones.map(|ones| {
                    let b = tape.param(&format!("b{k}"));
                    tape.matmul(b, ones)
                })
            })
            .collect();
        let mut prev = tape.constant(features.values());
        let (mut z, mut h) = (Vec::new(), Vec::new());
        for k in 0..spec.depth - 1 {
            let lin = tape.matmul(weights[k], prev);
            let zk = match biases[k] {
                Some(b) => tape.add(lin, b),
                None => lin,
            };
            let hk = tape.relu(zk);
            z.push(zk);
            h.push(hk);
            prev = hk;
        }
        let hidden = z.len();
        Self {
            features,
            weights,
            biases,
            z,
            h,
            steps: vec![None; hidden],
            out: None,
            dout: HashMap::new(),
        }
    }

    pub(super) fn value(&mut self, tape: &mut Tape) -> NodeId {
        if let Some(out) = self.out {
            return out;
        }
        let lin = tape.matmul(*self.weights.last().unwrap(), *self.h.last().unwrap());
        let out = match *self.biases.last().unwrap() {
            Some(b) => tape.add(lin, b),
            None => lin,
        };
        self.out = Some(out);
        out
    }

    pub(super) fn first(&mut self, tape: &mut Tape, d: usize) -> NodeId {
        if let Some(&n) = self.dout.get(&d) {
            return n;
        }
        let mut dprev = tape.constant(self.features.derivative(d));
        for k in 0..self.z.len() {
            let dz = tape.matmul(self.weights[k], dprev);
            let z = self.z[k];
            let s = *self.steps[k].get_or_insert_with(|| tape.step(z));
            dprev = tape.mul(s, dz);
        }
        let out = tape.matmul(*self.weights.last().unwrap(), dprev);
        self.dout.insert(d, out);
        out
    }
}
