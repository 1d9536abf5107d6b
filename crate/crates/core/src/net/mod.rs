//! Coordinate networks `f_Θ: ℝ^N → ℝ` and their input-derivative operators.
//!
//! Three architectures are provided:
//!
//! * **sine-mlp**: `W_K sin(ω0·W_{K-1} … sin(ω0·W_1 x))`;
//! * **pe-mlp**: a ReLU MLP on Fourier features
//!   `[a_i cos(2π b_iᵀx), a_i sin(2π b_iᵀx)]`;
//! * **tf-net**: a Tucker core contracted with one sine factor network per
//!   input dimension, `C ×_1 g_1(x_1) ×_2 … ×_N g_N(x_N)`.
//!
//! Input derivatives are not obtained by nested differentiation. Each
//! architecture propagates them explicitly (a Jacobian/Hessian recurrence for
//! sine layers, single-factor differentiation for the Tucker network) and
//! records the result as ordinary tape nodes, so a loss built from them can be
//! differentiated with respect to the parameters by one reverse sweep.

mod checkpoint;
mod pe;
mod sine;
mod tucker;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use checkpoint::{read_checkpoint, write_checkpoint};

use crate::array::DenseArray;
use crate::error::{Error, Result};
use crate::sampling::Points;
use crate::tape::{NodeId, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    SineMlp,
    PeMlp,
    TfNet,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::SineMlp => "sine-mlp",
            Architecture::PeMlp => "pe-mlp",
            Architecture::TfNet => "tf-net",
        }
    }

    /// Whether analytic second input derivatives are available.
    pub fn has_second_derivatives(self) -> bool {
        !matches!(self, Architecture::PeMlp)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine-mlp" | "sine" => Ok(Architecture::SineMlp),
            "pe-mlp" | "pe" => Ok(Architecture::PeMlp),
            "tf-net" | "tf" => Ok(Architecture::TfNet),
            other => Err(Error::InvalidSpec(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Architecture and hyperparameters of a coordinate network.
///
/// For `tf-net`, `width` and `depth` describe each factor network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub width: usize,
    /// Number of weight matrices `K`.
    pub depth: usize,
    /// Frequency multiplier of the sine layers.
    pub omega0: f64,
    pub bias: bool,
    /// Tucker ranks, one per input dimension (tf-net only).
    pub ranks: Vec<usize>,
    /// Number of Fourier frequency pairs `m` (pe-mlp only).
    pub pe_features: usize,
    /// Standard deviation of the Fourier frequencies (pe-mlp only).
    pub pe_scale: f64,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn sine_mlp(input_dim: usize, width: usize, depth: usize) -> Self {
        Self {
            architecture: Architecture::SineMlp,
            input_dim,
            width,
            depth,
            omega0: 30.0,
            bias: false,
            ranks: vec![],
            pe_features: 0,
            pe_scale: 0.0,
            seed: 0,
        }
    }

    pub fn pe_mlp(input_dim: usize, width: usize, depth: usize, features: usize) -> Self {
        Self {
            architecture: Architecture::PeMlp,
            pe_features: features,
            pe_scale: 3.0,
            ..Self::sine_mlp(input_dim, width, depth)
        }
    }

    pub fn tf_net(ranks: Vec<usize>, width: usize, depth: usize) -> Self {
        Self {
            architecture: Architecture::TfNet,
            input_dim: ranks.len(),
            ranks,
            ..Self::sine_mlp(0, width, depth)
        }
    }

    /// Default Tucker ranks `min(extent, 64)` per mode.
    pub fn default_ranks(extents: &[usize]) -> Vec<usize> {
        extents.iter().map(|&e| e.min(64)).collect()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_omega0(mut self, omega0: f64) -> Self {
        self.omega0 = omega0;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.input_dim < 1 {
            return bad("input dimension must be >= 1".into());
        }
        if self.depth < 2 {
            return bad(format!("depth must be >= 2, got {}", self.depth));
        }
        if self.width < 1 {
            return bad("width must be >= 1".into());
        }
        if !(self.omega0.is_finite() && self.omega0 > 0.0) {
            return bad(format!("omega0 must be positive, got {}", self.omega0));
        }
        match self.architecture {
            Architecture::TfNet => {
                if self.ranks.len() != self.input_dim {
                    return bad(format!(
                        "tf-net needs {} ranks, got {}",
                        self.input_dim,
                        self.ranks.len()
                    ));
                }
                if self.ranks.contains(&0) {
                    return bad("ranks must be >= 1".into());
                }
            }
            Architecture::PeMlp => {
                if self.pe_features < 1 {
                    return bad("pe-mlp needs at least one frequency pair".into());
                }
                if !(self.pe_scale.is_finite() && self.pe_scale > 0.0) {
                    return bad("pe frequency scale must be positive".into());
                }
            }
            Architecture::SineMlp => {}
        }
        Ok(())
    }
}

/// A network with its trainable parameters and fixed buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateNetwork {
    spec: NetworkSpec,
    params: BTreeMap<String, DenseArray>,
    buffers: BTreeMap<String, DenseArray>,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, limit: f64) -> DenseArray {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    DenseArray::matrix(rows, cols, data).unwrap()
}

/// Layer shapes `(out, in)` of a `K`-layer MLP.
fn mlp_shapes(input: usize, width: usize, output: usize, depth: usize) -> Vec<(usize, usize)> {
    (0..depth)
        .map(|k| {
            let fan_in = if k == 0 { input } else { width };
            let fan_out = if k + 1 == depth { output } else { width };
            (fan_out, fan_in)
        })
        .collect()
}

/// SIREN-style initialization of a sine stack under prefix `prefix`.
fn init_sine_stack(
    rng: &mut ChaCha8Rng,
    params: &mut BTreeMap<String, DenseArray>,
    prefix: &str,
    shapes: &[(usize, usize)],
    omega0: f64,
    bias: bool,
) {
    for (k, &(rows, cols)) in shapes.iter().enumerate() {
        let limit = if k == 0 {
            1.0 / cols as f64
        } else {
            (6.0 / cols as f64).sqrt() / omega0
        };
        params.insert(format!("{prefix}w{k}"), uniform(rng, rows, cols, limit));
        if bias {
            let limit = 1.0 / (cols as f64).sqrt();
            params.insert(format!("{prefix}b{k}"), uniform(rng, rows, 1, limit));
        }
    }
}

impl CoordinateNetwork {
    /// Deterministic initialization from `spec.seed`.
    pub fn init(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        match spec.architecture {
            Architecture::SineMlp => {
                let shapes = mlp_shapes(spec.input_dim, spec.width, 1, spec.depth);
                init_sine_stack(&mut rng, &mut params, "", &shapes, spec.omega0, spec.bias);
            }
            Architecture::TfNet => {
                let total: usize = spec.ranks.iter().product();
                let limit = (3.0 / total as f64).sqrt();
                let mut core = DenseArray::zeros(&spec.ranks);
                for v in core.data_mut() {
                    *v = rng.random_range(-limit..=limit);
                }
                params.insert("core".to_owned(), core);
                for (d, &r) in spec.ranks.iter().enumerate() {
                    let shapes = mlp_shapes(1, spec.width, r, spec.depth);
                    let prefix = tucker::factor_prefix(d);
                    init_sine_stack(&mut rng, &mut params, &prefix, &shapes, spec.omega0, spec.bias);
                }
            }
            Architecture::PeMlp => {
                let m = spec.pe_features;
                let normal = Normal::new(0.0, spec.pe_scale)
                    .map_err(|e| Error::InvalidSpec(e.to_string()))?;
                let freq = (0..m * spec.input_dim).map(|_| normal.sample(&mut rng)).collect();
                buffers.insert(
                    pe::FREQ.to_owned(),
                    DenseArray::matrix(m, spec.input_dim, freq)?,
                );
                buffers.insert(pe::AMP.to_owned(), DenseArray::filled(&[1, m], 1.0));
                for (k, (rows, cols)) in mlp_shapes(2 * m, spec.width, 1, spec.depth)
                    .into_iter()
                    .enumerate()
                {
                    let limit = (6.0 / cols as f64).sqrt();
                    params.insert(format!("w{k}"), uniform(&mut rng, rows, cols, limit));
                    if spec.bias {
                        let limit = 1.0 / (cols as f64).sqrt();
                        params.insert(format!("b{k}"), uniform(&mut rng, rows, 1, limit));
                    }
                }
            }
        }
        Ok(Self {
            spec,
            params,
            buffers,
        })
    }

    pub(crate) fn from_parts(
        spec: NetworkSpec,
        params: BTreeMap<String, DenseArray>,
        buffers: BTreeMap<String, DenseArray>,
    ) -> Result<Self> {
        spec.validate()?;
        let reference = Self::init(spec.clone())?;
        for (name, arr) in reference.params.iter().chain(&reference.buffers) {
            let got = params.get(name).or_else(|| buffers.get(name)).ok_or_else(|| {
                Error::Checkpoint(format!("missing array `{name}`"))
            })?;
            if got.shape() != arr.shape() {
                return Err(Error::Checkpoint(format!(
                    "array `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    arr.shape()
                )));
            }
        }
        if params.len() != reference.params.len() || buffers.len() != reference.buffers.len() {
            return Err(Error::Checkpoint("unexpected extra arrays".into()));
        }
        Ok(Self {
            spec,
            params,
            buffers,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn params(&self) -> &BTreeMap<String, DenseArray> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, DenseArray> {
        &mut self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, DenseArray> {
        &self.buffers
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(DenseArray::len).sum()
    }

    /// Replaces a parameter array, keeping its shape.
    pub fn set_param(&mut self, name: &str, value: DenseArray) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::invalid("param", format!("no parameter `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                node: 0,
                expected: slot.shape().to_vec(),
                actual: value.shape().to_vec(),
            });
        }
        *slot = value;
        Ok(())
    }

    /// Records the network on `tape` for a fixed batch of canonical points.
    pub fn graph(&self, tape: &mut Tape, points: &Points) -> Result<NetGraph> {
        if points.dim() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                actual: points.dim(),
            });
        }
        if points.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        let inner = match self.spec.architecture {
            Architecture::SineMlp => {
                let x = tape.constant(sine::input_matrix(points));
                GraphInner::Sine(sine::SineStack::new(tape, &self.spec, "", x, points.len()))
            }
            Architecture::PeMlp => GraphInner::Pe(pe::PeGraph::new(tape, self, points)),
            Architecture::TfNet => GraphInner::Tucker(tucker::TuckerGraph::new(tape, &self.spec, points)),
        };
        Ok(NetGraph {
            inner,
            dim: self.spec.input_dim,
            batch: points.len(),
        })
    }

    /// Evaluates `f` at each point (no gradient bookkeeping retained).
    pub fn forward(&self, points: &Points) -> Result<Vec<f64>> {
        self.evaluate(points, |g, t| g.value(t))
    }

    /// `∂f/∂x_d` at each point.
    pub fn partial_x(&self, points: &Points, d: usize) -> Result<Vec<f64>> {
        self.evaluate(points, |g, t| g.partial(t, d))
    }

    /// `∂²f/∂x_{d1}∂x_{d2}` at each point.
    pub fn second_partial_x(&self, points: &Points, d1: usize, d2: usize) -> Result<Vec<f64>> {
        self.evaluate(points, |g, t| g.second(t, d1, d2))
    }

    fn evaluate(
        &self,
        points: &Points,
        build: impl FnOnce(&mut NetGraph, &mut Tape) -> Result<NodeId>,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mut g = self.graph(&mut tape, points)?;
        let out = build(&mut g, &mut tape)?;
        tape.eval(&self.params)?;
        Ok(tape.value(out).expect("evaluated").data().to_vec())
    }
}

enum GraphInner {
    Sine(sine::SineStack),
    Pe(pe::PeGraph),
    Tucker(tucker::TuckerGraph),
}

/// A network recorded on a tape for one batch of points. Derivative nodes are
/// built lazily and memoized, so requesting the same quantity twice returns
/// the same node.
pub struct NetGraph {
    inner: GraphInner,
    dim: usize,
    batch: usize,
}

impl NetGraph {
    pub fn batch(&self) -> usize {
        self.batch
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d >= self.dim {
            return Err(Error::DimensionOutOfRange {
                index: d,
                dim: self.dim,
            });
        }
        Ok(())
    }

    /// `1 × B` node of network outputs.
    pub fn value(&mut self, tape: &mut Tape) -> Result<NodeId> {
        Ok(match &mut self.inner {
            GraphInner::Sine(s) => s.value(tape),
            GraphInner::Pe(p) => p.value(tape),
            GraphInner::Tucker(t) => t.value(tape),
        })
    }

    /// `1 × B` node of `∂f/∂x_d`.
    pub fn partial(&mut self, tape: &mut Tape, d: usize) -> Result<NodeId> {
        self.check_dim(d)?;
        Ok(match &mut self.inner {
            GraphInner::Sine(s) => s.first(tape, d),
            GraphInner::Pe(p) => p.first(tape, d),
            GraphInner::Tucker(t) => t.first(tape, d),
        })
    }

    /// `1 × B` node of `∂²f/∂x_{d1}∂x_{d2}`. The pair is canonicalized so the
    /// construction is symmetric.
    pub fn second(&mut self, tape: &mut Tape, d1: usize, d2: usize) -> Result<NodeId> {
        self.check_dim(d1)?;
        self.check_dim(d2)?;
        let (lo, hi) = (d1.min(d2), d1.max(d2));
        match &mut self.inner {
            GraphInner::Sine(s) => Ok(s.second(tape, lo, hi)),
            GraphInner::Tucker(t) => Ok(t.second(tape, lo, hi)),
            GraphInner::Pe(_) => Err(Error::Unsupported(
                "second input derivatives of the pe-mlp (piecewise-linear activations)".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests;
