//! Finite-difference checks of parameter gradients and input derivatives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::DenseArray;
use crate::error::Result;
use crate::net::{Architecture, CoordinateNetwork, NetworkSpec};
use crate::reg::{build_regularizer, RegKind, RegularizerSpec, SpaceVariantField};
use crate::sampling::{make_meshgrid, Points};
use crate::tape::{Chain, Tape};

/// Result of one group of comparisons.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub checked: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {} checks, max error {:.3e} (tolerance {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.checked,
            self.max_error,
            self.tolerance
        )
    }
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn random_points(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Points {
    let data = (0..dim * n).map(|_| rng.random_range(-0.9..0.9)).collect();
    Points::new(dim, data).expect("sized")
}

fn random_field(rng: &mut ChaCha8Rng, n: usize) -> SpaceVariantField {
    SpaceVariantField {
        alpha: (0..n).map(|_| rng.random_range(0.5..2.0)).collect(),
        a: (0..n).map(|_| rng.random_range(0.2..1.8)).collect(),
        theta: (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect(),
    }
}

/// Small networks over three inputs, so that every regularizer applies.
fn suite_network(arch: Architecture, seed: u64) -> Result<CoordinateNetwork> {
    let spec = match arch {
        Architecture::TfNet => NetworkSpec::tf_net(vec![3, 3, 2], 8, 3),
        Architecture::SineMlp => NetworkSpec::sine_mlp(3, 16, 3),
        Architecture::PeMlp => NetworkSpec::pe_mlp(3, 16, 3, 8),
    };
    CoordinateNetwork::init(spec.with_bias(true).with_seed(seed).with_omega0(10.0))
}

pub const PARAM_STEP: f64 = 1e-5;
pub const PARAM_FLOOR: f64 = 1e-6;

/// Parameter gradients of `mean((f − y)²) + λ·reg` against central
/// differences at `samples` random parameter entries, for each architecture
/// and regularizer kind.
pub fn parameter_gradient_suite(samples: usize, tolerance: f64, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for arch in [Architecture::SineMlp, Architecture::TfNet] {
        for kind in RegKind::ALL {
            out.push(parameter_gradient_case(arch, kind, samples, tolerance, seed)?);
        }
    }
    Ok(out)
}

pub fn parameter_gradient_case(
    arch: Architecture,
    kind: RegKind,
    samples: usize,
    tolerance: f64,
    seed: u64,
) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64) << 8 ^ (arch as u64) << 16);
    let net = suite_network(arch, seed)?;
    let data = random_points(&mut rng, 3, 30);
    let targets: Vec<f64> = (0..data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let gamma = make_meshgrid(&[4, 4, 3], 1)?;
    let spec = RegularizerSpec::new(kind).with_theta(0.7).with_kappa(0.5);

    let mut tape = Tape::new();
    let mut gd = net.graph(&mut tape, &data)?;
    let pred = gd.value(&mut tape)?;
    let y = tape.constant(DenseArray::row(targets));
    let diff = tape.sub(pred, y);
    let sq = tape.mul(diff, diff);
    let fid = tape.mean(sq);
    let mut gr = net.graph(&mut tape, gamma.points())?;
    let reg = build_regularizer(&mut tape, &net, &mut gr, &gamma, &spec)?;
    let weighted = tape.scale(reg, 0.5);
    let loss = tape.add(fid, weighted);
    let field = random_field(&mut rng, gamma.len()).bindings();

    let mut params = net.params().clone();
    tape.eval(&Chain(&params, field.as_slice()))?;
    let grads = tape.backward(loss)?;

    let names: Vec<String> = params.keys().cloned().collect();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let name = &names[rng.random_range(0..names.len())];
        let idx = rng.random_range(0..params[name].len());
        let w0 = params[name].data()[idx];
        let mut at = |delta: f64| -> Result<f64> {
            params.get_mut(name).expect("known").data_mut()[idx] = w0 + delta;
            Ok(tape.eval(&Chain(&params, field.as_slice()))?.data()[0])
        };
        let h = PARAM_STEP;
        let fd = (-at(2.0 * h)? + 8.0 * at(h)? - 8.0 * at(-h)? + at(-2.0 * h)?) / (12.0 * h);
        params.get_mut(name).expect("known").data_mut()[idx] = w0;
        let an = grads[name].data()[idx];
        worst = worst.max(relative_error(an, fd, PARAM_FLOOR));
    }
    Ok(CheckOutcome {
        name: format!("{arch} {kind}"),
        checked: samples,
        max_error: worst,
        tolerance,
    })
}

fn fd_first(net: &CoordinateNetwork, p: &Points, d: usize, h: f64) -> Result<Vec<f64>> {
    let f = |s: f64| net.forward(&p.shifted(d, s));
    let (p2, p1, m1, m2) = (f(2.0 * h)?, f(h)?, f(-h)?, f(-2.0 * h)?);
    Ok((0..p.len())
        .map(|i| (-p2[i] + 8.0 * p1[i] - 8.0 * m1[i] + m2[i]) / (12.0 * h))
        .collect())
}

fn fd_second(net: &CoordinateNetwork, p: &Points, d: usize, e: usize, h: f64) -> Result<Vec<f64>> {
    let f = |sd: f64, se: f64| net.forward(&p.shifted(d, sd).shifted(e, se));
    Ok(if d == e {
        let (a, b, c) = (f(h, 0.0)?, f(0.0, 0.0)?, f(-h, 0.0)?);
        (0..p.len()).map(|i| (a[i] - 2.0 * b[i] + c[i]) / (h * h)).collect()
    } else {
        let (pp, pm, mp, mm) = (f(h, h)?, f(h, -h)?, f(-h, h)?, f(-h, -h)?);
        (0..p.len())
            .map(|i| (pp[i] - pm[i] - mp[i] + mm[i]) / (4.0 * h * h))
            .collect()
    })
}

pub const FIRST_STEP: f64 = 1e-4;
pub const SECOND_STEP: f64 = 1e-3;

/// `partial_x` against differences at `points` random points (relative
/// error, floor 1e-7) and `second_partial_x` for every pair (error relative
/// to the largest reference magnitude). Piecewise-linear pe-mlp networks are
/// checked for first derivatives only, skipping points whose stencil
/// straddles a kink (two step sizes disagree).
pub fn input_derivative_suite(
    points: usize,
    first_tol: f64,
    second_tol: f64,
    seed: u64,
) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for arch in [Architecture::SineMlp, Architecture::TfNet, Architecture::PeMlp] {
        let net = suite_network(arch, seed)?;
        let n = net.input_dim();
        let p = random_points(&mut rng, n, points);
        let mut first = 0.0f64;
        let mut checked = 0;
        for d in 0..n {
            let got = net.partial_x(&p, d)?;
            let want = fd_first(&net, &p, d, FIRST_STEP)?;
            let alt = if arch == Architecture::PeMlp {
                Some(fd_first(&net, &p, d, FIRST_STEP / 10.0)?)
            } else {
                None
            };
            for i in 0..p.len() {
                if let Some(alt) = &alt {
                    if relative_error(want[i], alt[i], 1e-7) > first_tol {
                        continue;
                    }
                }
                first = first.max(relative_error(got[i], want[i], 1e-7));
                checked += 1;
            }
        }
        out.push(CheckOutcome {
            name: format!("{arch} first partials"),
            checked,
            max_error: first,
            tolerance: first_tol,
        });
        if !arch.has_second_derivatives() {
            continue;
        }
        let mut second = 0.0f64;
        let mut checked = 0;
        for d in 0..n {
            for e in d..n {
                let got = net.second_partial_x(&p, d, e)?;
                let want = fd_second(&net, &p, d, e, SECOND_STEP)?;
                let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-7);
                for (g, w) in got.iter().zip(&want) {
                    second = second.max((g - w).abs() / scale);
                    checked += 1;
                }
            }
        }
        out.push(CheckOutcome {
            name: format!("{arch} second partials"),
            checked,
            max_error: second,
            tolerance: second_tol,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-6), 0.0);
        assert_eq!(relative_error(0.0, 1e-9, 1e-6), 1e-3);
        assert!((relative_error(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_case_passes() {
        let c = parameter_gradient_case(Architecture::SineMlp, RegKind::NeurTv, 10, 1e-4, 3).unwrap();
        assert!(c.passed(), "{}", c.line());
        assert_eq!(c.checked, 10);
    }
}
