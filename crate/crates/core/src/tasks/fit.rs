//! The shared training loop behind every pipeline.

use crate::array::DenseArray;
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::net::CoordinateNetwork;
use crate::optim::{adam_step, soft_threshold, AdamState};
use crate::reg::{
    build_regularizer, direction_from_gradient, scale_from_derivatives, RegKind, ScaleMode,
    SpaceVariantField,
};
use crate::sampling::{Points, SampleSet};
use crate::tape::{Chain, NodeId, Tape};

use super::config::TaskConfig;

const TARGET: &str = "target";

/// Data and sample set of one fit. Coordinates are canonical.
#[derive(Clone, Debug)]
pub struct FitProblem {
    pub points: Points,
    pub targets: Vec<f64>,
    pub gamma: SampleSet,
    /// Estimate a sparse component alongside the network.
    pub sparse: bool,
    /// Clean values at `points`, for the PSNR column of the trace.
    pub reference: Option<Vec<f64>>,
    pub peak: f64,
    /// Per-dimension length of one data sample interval. Field rules read
    /// derivatives in these units (pixels for images).
    pub unit: Vec<f64>,
}

impl FitProblem {
    pub fn new(points: Points, targets: Vec<f64>, gamma: SampleSet) -> Result<Self> {
        if points.len() != targets.len() {
            return Err(Error::LengthMismatch {
                what: "fit targets",
                expected: points.len(),
                actual: targets.len(),
            });
        }
        if points.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        if gamma.dim() != points.dim() {
            return Err(Error::DimensionMismatch {
                expected: points.dim(),
                actual: gamma.dim(),
            });
        }
        let unit = vec![1.0; gamma.dim()];
        Ok(Self {
            points,
            targets,
            gamma,
            sparse: false,
            reference: None,
            peak: 1.0,
            unit,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub fidelity: f64,
    pub regularizer: f64,
    pub psnr: Option<f64>,
}

impl TraceRow {
    pub const CSV_HEADER: &'static str = "iteration,loss,fidelity,regularizer,psnr";

    pub fn csv_line(&self) -> String {
        let p = self.psnr.map_or(String::new(), |p| format!("{p}"));
        format!(
            "{},{},{},{},{}",
            self.iteration, self.loss, self.fidelity, self.regularizer, p
        )
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub network: CoordinateNetwork,
    /// Network values at the problem points after the last update, unclipped.
    pub predictions: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub iterations: usize,
    pub stopped_early: bool,
    /// Field used by the last update, for field-driven kinds.
    pub field: Option<SpaceVariantField>,
    pub sparse: Option<Vec<f64>>,
    /// Loss value at the last recorded iteration.
    pub final_loss: f64,
}

/// `mean((r − s)²) + γ·mean|s|`: the part of the sparse-noise objective that
/// depends on `s`, given `r = O − f`.
pub fn sparse_objective(residual: &[f64], s: &[f64], gamma: f64) -> f64 {
    let n = residual.len() as f64;
    let fit: f64 = residual.iter().zip(s).map(|(r, s)| (r - s) * (r - s)).sum();
    let l1: f64 = s.iter().map(|v| v.abs()).sum();
    (fit + gamma * l1) / n
}

/// Side outputs read after each evaluation to refresh the field.
struct FieldNodes {
    scale: Vec<(NodeId, f64)>,
    direction: Option<(NodeId, NodeId, f64, f64)>,
}

fn values(tape: &Tape, id: NodeId) -> &[f64] {
    tape.value(id).expect("evaluated").data()
}

/// Minimizes `mean((f − target)²) + λ·reg` with Adam. Field-driven kinds see
/// the field computed from the previous iteration's network.
pub fn fit(problem: &FitProblem, config: &TaskConfig) -> Result<FitResult> {
    config.validate()?;
    let dim = problem.points.dim();
    let mut spec = config.network.clone().with_seed(config.seed);
    spec.input_dim = dim;
    let mut net = CoordinateNetwork::init(spec)?;

    let mut tape = Tape::new();
    let mut gd = net.graph(&mut tape, &problem.points)?;
    let pred = gd.value(&mut tape)?;
    let target = tape.input(TARGET);
    let diff = tape.sub(pred, target);
    let sq = tape.mul(diff, diff);
    let fidelity = tape.mean(sq);

    let regularized = config.lambda > 0.0;
    let kind = config.regularizer.kind;
    let mut field_nodes = None;
    let mut reg = None;
    if regularized {
        let shared = problem.gamma.points() == &problem.points;
        let mut own;
        let g = if shared {
            &mut gd
        } else {
            own = net.graph(&mut tape, problem.gamma.points())?;
            &mut own
        };
        reg = Some(build_regularizer(&mut tape, &net, g, &problem.gamma, &config.regularizer)?);
        if kind.uses_field() {
            let dims = config.regularizer.resolve_dims(dim)?;
            let unit = &problem.unit;
            let scale = match config.scale_mode {
                None => vec![],
                Some(ScaleMode::FirstOrder) => dims
                    .iter()
                    .map(|&d| Ok((g.partial(&mut tape, d)?, unit[d])))
                    .collect::<Result<_>>()?,
                Some(ScaleMode::SecondOrder) => dims
                    .iter()
                    .map(|&d| Ok((g.second(&mut tape, d, d)?, unit[d] * unit[d])))
                    .collect::<Result<_>>()?,
            };
            let direction = if config.update_direction && kind == RegKind::SpaceVariant {
                let (d1, d2) = (dims[0], dims[1]);
                Some((g.partial(&mut tape, d1)?, g.partial(&mut tape, d2)?, unit[d1], unit[d2]))
            } else {
                None
            };
            field_nodes = Some(FieldNodes { scale, direction });
        }
    }
    let loss = match reg {
        Some(r) => {
            let weighted = tape.scale(r, config.lambda);
            tape.add(fidelity, weighted)
        }
        None => fidelity,
    };

    let n_gamma = problem.gamma.len();
    let mut field = (regularized && kind.uses_field()).then(|| SpaceVariantField::neutral(n_gamma));
    let mut sparse = problem.sparse.then(|| vec![0.0; problem.targets.len()]);
    let mut adam = AdamState::new(config.adam);
    let mut trace = Vec::new();
    let mut history: Vec<f64> = Vec::with_capacity(config.iterations);
    let mut stopped_early = false;
    let mut last_loss = f64::NAN;
    let mut done = 0;

    for it in 0..config.iterations {
        let shifted: Vec<f64> = match &sparse {
            Some(s) => problem.targets.iter().zip(s).map(|(o, s)| o - s).collect(),
            None => problem.targets.clone(),
        };
        let mut extra = vec![(TARGET, DenseArray::row(shifted))];
        if let Some(f) = &field {
            extra.extend(f.bindings());
        }
        tape.eval(&Chain(net.params(), extra.as_slice()))?;
        let fid = values(&tape, fidelity)[0];
        let reg_value = reg.map_or(0.0, |r| values(&tape, r)[0]);
        let mut total = values(&tape, loss)[0];
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("loss at iteration {it}")));
        }
        let grads = tape.backward(loss)?;

        if let (Some(nodes), Some(f)) = (&field_nodes, field.as_mut()) {
            if it % config.field_stride == 0 {
                if !nodes.scale.is_empty() {
                    let vals: Vec<Vec<f64>> = nodes
                        .scale
                        .iter()
                        .map(|&(id, u)| values(&tape, id).iter().map(|v| v * u).collect())
                        .collect();
                    let refs: Vec<&[f64]> = vals.iter().map(Vec::as_slice).collect();
                    f.alpha = scale_from_derivatives(&refs, config.regularizer.eps);
                }
                if let Some((d1, d2, u1, u2)) = nodes.direction {
                    let g1: Vec<f64> = values(&tape, d1).iter().map(|v| v * u1).collect();
                    let g2: Vec<f64> = values(&tape, d2).iter().map(|v| v * u2).collect();
                    let (theta, a) = direction_from_gradient(&g1, &g2, config.regularizer.a_min);
                    f.theta = theta;
                    f.a = a;
                }
            }
        }
        if let Some(s) = sparse.as_mut() {
            let residual: Vec<f64> = problem
                .targets
                .iter()
                .zip(values(&tape, pred))
                .map(|(o, p)| o - p)
                .collect();
            *s = soft_threshold(&residual, config.gamma / 2.0)?;
            total = sparse_objective(&residual, s, config.gamma) + config.lambda * reg_value;
        }

        if config.trace_stride > 0 && it % config.trace_stride == 0 {
            let psnr = match &problem.reference {
                Some(r) => {
                    let est = clip_to(values(&tape, pred), value_range(&problem.targets), config.clip);
                    Some(psnr(r, &est, problem.peak)?)
                }
                None => None,
            };
            trace.push(TraceRow {
                iteration: it,
                loss: total,
                fidelity: fid,
                regularizer: reg_value,
                psnr,
            });
        }
        last_loss = total;
        history.push(total);

        adam_step(&mut adam, net.params_mut(), &grads)?;
        done = it + 1;
        let w = config.plateau_window;
        if w > 0 && history.len() > w && (history[it - w] - total).abs() < config.plateau_tol {
            stopped_early = true;
            break;
        }
    }

    let predictions = net.forward(&problem.points)?;
    Ok(FitResult {
        network: net,
        predictions,
        trace,
        iterations: done,
        stopped_early,
        field,
        sparse,
        final_loss: last_loss,
    })
}

pub(crate) fn value_range(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

pub(crate) fn clip_to(v: &[f64], (lo, hi): (f64, f64), clip: bool) -> Vec<f64> {
    if clip {
        v.iter().map(|x| x.clamp(lo, hi)).collect()
    } else {
        v.to_vec()
    }
}
