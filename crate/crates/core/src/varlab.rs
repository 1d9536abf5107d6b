//! One-dimensional total-variation oracles and quadrature error studies.
//!
//! On `[a, b]` with `n` uniform partitions and nodes `x_i = a + i(b−a)/n`:
//!
//! * derivative mode: `((b−a)/n) Σ_{i=1..n} |f′(x_i)|` (right endpoints);
//! * difference mode: `Σ_{i=1..n} |f(x_i) − f(x_{i−1})|`.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// A closed-form test function on an interval.
#[derive(Clone, Copy, Debug)]
pub struct AnalyticFn {
    pub id: &'static str,
    pub a: f64,
    pub b: f64,
    pub f: fn(f64) -> f64,
    pub df: fn(f64) -> f64,
    pub d2f: fn(f64) -> f64,
    /// Exact total variation on `[a, b]`, when known in closed form.
    pub closed_tv: Option<f64>,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-10.0 * (x - 0.3)).exp())
}

/// The registered suite.
pub fn registry() -> Vec<AnalyticFn> {
    use std::f64::consts::TAU;
    vec![
        AnalyticFn {
            id: "linear",
            a: 0.0,
            b: 1.0,
            f: |x| x,
            df: |_| 1.0,
            d2f: |_| 0.0,
            closed_tv: Some(1.0),
        },
        AnalyticFn {
            id: "quad",
            a: 0.0,
            b: 1.0,
            f: |x| 0.5 * x * x,
            df: |x| x,
            d2f: |_| 1.0,
            closed_tv: Some(0.5),
        },
        AnalyticFn {
            id: "sin",
            a: 0.0,
            b: 1.0,
            f: |x| (TAU * x).sin(),
            df: |x| TAU * (TAU * x).cos(),
            d2f: |x| -TAU * TAU * (TAU * x).sin(),
            closed_tv: Some(4.0),
        },
        AnalyticFn {
            id: "pow32",
            a: 0.1,
            b: 1.1,
            f: |x| 2.0 / 3.0 * x.powf(1.5),
            df: |x| x.sqrt(),
            d2f: |x| 0.5 / x.sqrt(),
            closed_tv: Some(2.0 / 3.0 * (1.1f64.powf(1.5) - 0.1f64.powf(1.5))),
        },
        AnalyticFn {
            id: "logistic",
            a: 0.0,
            b: 1.0,
            f: logistic,
            df: |x| {
                let s = logistic(x);
                10.0 * s * (1.0 - s)
            },
            d2f: |x| {
                let s = logistic(x);
                100.0 * s * (1.0 - s) * (1.0 - 2.0 * s)
            },
            closed_tv: Some(logistic(1.0) - logistic(0.0)),
        },
    ]
}

pub fn lookup(id: &str) -> Result<AnalyticFn> {
    registry()
        .into_iter()
        .find(|f| f.id == id)
        .ok_or_else(|| Error::invalid("fn", format!("unknown function `{id}`")))
}

impl AnalyticFn {
    /// Largest relative disagreement between the stated derivatives and
    /// central differences at `samples` interior points.
    pub fn derivative_consistency(&self, samples: usize) -> f64 {
        let h = 1e-5 * (self.b - self.a);
        let mut worst = 0.0f64;
        for k in 0..samples {
            let x = self.a + (self.b - self.a) * (k as f64 + 0.5) / samples as f64;
            let x = x.clamp(self.a + 2.0 * h, self.b - 2.0 * h);
            for (g, dg) in [(self.f, self.df), (self.df, self.d2f)] {
                let fd = (-g(x + 2.0 * h) + 8.0 * g(x + h) - 8.0 * g(x - h) + g(x - 2.0 * h))
                    / (12.0 * h);
                let want = dg(x);
                worst = worst.max((fd - want).abs() / want.abs().max(1.0));
            }
        }
        worst
    }

    /// Coefficient `c` of the leading error term `c/n` of the derivative-mode
    /// sum, `(b−a)(|f′(b)| − |f′(a)|)/2`. Zero when the error decays faster.
    pub fn first_order_coefficient(&self) -> f64 {
        0.5 * (self.b - self.a) * ((self.df)(self.b).abs() - (self.df)(self.a).abs())
    }

    /// `max |f″|` sampled on a lattice including both endpoints.
    pub fn max_abs_second(&self) -> f64 {
        let m = 100_000;
        (0..=m)
            .map(|k| (self.d2f)(self.a + (self.b - self.a) * k as f64 / m as f64).abs())
            .fold(0.0, f64::max)
    }
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &impl Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let (lm, flm, left) = simpson(f, a, fa, m, fm);
    let (rm, frm, right) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
        + adaptive(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
}

fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    adaptive(f, a, fa, b, fb, m, fm, whole, tol, 48)
}

/// Locates a sign change of `g` in `[lo, hi]` to within `1e-12`.
fn bisect(g: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let positive_lo = g(lo) > 0.0;
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if (g(mid) > 0.0) == positive_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `∫_a^b |f′|` by adaptive Simpson quadrature, split at the sign changes of
/// `f′` found on a 4096-cell scan.
pub fn tv_by_quadrature(df: impl Fn(f64) -> f64, a: f64, b: f64) -> Result<f64> {
    const CELLS: usize = 4096;
    let xs: Vec<f64> = (0..=CELLS)
        .map(|k| a + (b - a) * k as f64 / CELLS as f64)
        .collect();
    let vals: Vec<f64> = xs.iter().map(|&x| df(x)).collect();
    if let Some(k) = vals.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("derivative at x = {}", xs[k])));
    }
    let mut cuts = vec![a];
    for k in 0..CELLS {
        if vals[k] * vals[k + 1] < 0.0 {
            cuts.push(bisect(&df, xs[k], xs[k + 1]));
        }
    }
    cuts.push(b);
    let abs = |x: f64| df(x).abs();
    let tol = 1e-13 / cuts.len() as f64;
    let total = cuts.windows(2).map(|w| integrate(&abs, w[0], w[1], tol)).sum::<f64>();
    if !total.is_finite() {
        return Err(Error::NonFinite("total variation".into()));
    }
    Ok(total)
}

/// Exact total variation: the closed form when known, else quadrature.
pub fn exact_tv_1d(func: &AnalyticFn) -> Result<f64> {
    match func.closed_tv {
        Some(v) => Ok(v),
        None => tv_by_quadrature(func.df, func.a, func.b),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuadMode {
    Derivative,
    Difference,
}

impl QuadMode {
    pub fn as_str(self) -> &'static str {
        match self {
            QuadMode::Derivative => "derivative",
            QuadMode::Difference => "difference",
        }
    }
}

/// Quadrature approximation of the total variation with `n` partitions.
pub fn quadrature_tv(func: &AnalyticFn, n: usize, mode: QuadMode) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n", "partition count must be >= 1"));
    }
    let h = (func.b - func.a) / n as f64;
    let node = |i: usize| func.a + i as f64 * h;
    Ok(match mode {
        QuadMode::Derivative => h * (1..=n).map(|i| (func.df)(node(i)).abs()).sum::<f64>(),
        QuadMode::Difference => (1..=n)
            .map(|i| ((func.f)(node(i)) - (func.f)(node(i - 1))).abs())
            .sum(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorRow {
    pub n: usize,
    pub mode: QuadMode,
    pub value: f64,
    pub exact: f64,
    pub error: f64,
}

/// Results of a truncation-error study over increasing partition counts.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub function: &'static str,
    pub exact: f64,
    pub rows: Vec<ErrorRow>,
    /// Least-squares slope of `log error` against `log n` (derivative mode);
    /// `None` when some error is zero.
    pub slope: Option<f64>,
    /// Partition counts where the derivative-mode bound
    /// `(b−a)²/(2n)·max|f″|` is exceeded.
    pub bound_violations: Vec<usize>,
    /// Pairs `(n, 2n)` where difference-mode values decrease or exceed the
    /// exact value.
    pub refinement_violations: Vec<(usize, usize)>,
}

/// Rounding allowance for comparisons that hold exactly in real arithmetic.
const ROUNDING: f64 = 1e-12;

impl ErrorReport {
    pub fn rows_for(&self, mode: QuadMode) -> impl Iterator<Item = &ErrorRow> {
        self.rows.iter().filter(move |r| r.mode == mode)
    }

    /// Delimited text with columns `n,mode,value,exact,error`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,mode,value,exact,error\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:e},{:e},{:e}",
                r.n,
                r.mode.as_str(),
                r.value,
                r.exact,
                r.error
            );
        }
        out
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn truncation_error_study(func: &AnalyticFn, ns: &[usize]) -> Result<ErrorReport> {
    if ns.is_empty() || ns.windows(2).any(|w| w[1] <= w[0]) || ns[0] == 0 {
        return Err(Error::invalid("n list", "must be nonempty, positive and increasing"));
    }
    let exact = exact_tv_1d(func)?;
    let bound_scale = (func.b - func.a).powi(2) / 2.0 * func.max_abs_second();
    let mut rows = Vec::with_capacity(2 * ns.len());
    let mut bound_violations = vec![];
    for mode in [QuadMode::Derivative, QuadMode::Difference] {
        for &n in ns {
            let value = quadrature_tv(func, n, mode)?;
            let error = (value - exact).abs();
            if mode == QuadMode::Derivative && error > bound_scale / n as f64 + ROUNDING {
                bound_violations.push(n);
            }
            rows.push(ErrorRow {
                n,
                mode,
                value,
                exact,
                error,
            });
        }
    }

    let deriv: Vec<&ErrorRow> = rows.iter().filter(|r| r.mode == QuadMode::Derivative).collect();
    let slope = (deriv.len() >= 2 && deriv.iter().all(|r| r.error > 0.0)).then(|| {
        let xs: Vec<f64> = deriv.iter().map(|r| (r.n as f64).ln()).collect();
        let ys: Vec<f64> = deriv.iter().map(|r| r.error.ln()).collect();
        fit_slope(&xs, &ys)
    });

    let mut refinement_violations = vec![];
    for &n in ns {
        let coarse = quadrature_tv(func, n, QuadMode::Difference)?;
        let fine = quadrature_tv(func, 2 * n, QuadMode::Difference)?;
        if fine + ROUNDING < coarse || fine > exact + ROUNDING {
            refinement_violations.push((n, 2 * n));
        }
    }

    Ok(ErrorReport {
        function: func.id,
        exact,
        rows,
        slope,
        bound_violations,
        refinement_violations,
    })
}

/// Derivative-mode sum `Σ (x_i − x_{i−1}) |f′(x_i)|` on arbitrary breakpoints.
pub fn partition_sum(func: &AnalyticFn, nodes: &[f64]) -> f64 {
    nodes
        .windows(2)
        .map(|w| (w[1] - w[0]) * (func.df)(w[1]).abs())
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftOutcome {
    pub r_uniform: f64,
    pub r_shifted: f64,
}

/// Truncation errors of the uniform partition and of the partition whose
/// breakpoint `x_j` moves left by `δ`.
///
/// Requires `|f′|` nondecreasing on `[a, b]` and `f″` on `[x_{j−1}, x_j]`
/// strictly above `f″` on `(x_j, x_{j+1}]`, both checked on a lattice.
pub fn nonuniform_shift_experiment(
    func: &AnalyticFn,
    n: usize,
    j: usize,
    delta: f64,
) -> Result<ShiftOutcome> {
    if n < 2 || j == 0 || j >= n {
        return Err(Error::Precondition(format!("need 0 < j < n, got j = {j}, n = {n}")));
    }
    let h = (func.b - func.a) / n as f64;
    if !(0.0..h).contains(&delta) {
        return Err(Error::Precondition(format!("shift {delta} must lie in [0, {h})")));
    }
    const LATTICE: usize = 2000;
    let sample = |lo: f64, hi: f64, g: fn(f64) -> f64| -> Vec<f64> {
        (0..=LATTICE)
            .map(|k| g(lo + (hi - lo) * k as f64 / LATTICE as f64))
            .collect()
    };
    let slope = sample(func.a, func.b, func.df);
    if slope.windows(2).any(|w| w[1].abs() < w[0].abs()) {
        return Err(Error::Precondition("|f′| is not nondecreasing".into()));
    }
    let xj = func.a + j as f64 * h;
    let left = sample(xj - h, xj, func.d2f);
    let right = sample(xj, xj + h, func.d2f);
    let left_min = left.iter().copied().fold(f64::INFINITY, f64::min);
    let right_max = right[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(left_min > right_max) {
        return Err(Error::Precondition(format!(
            "curvature does not drop across x_{j}: min left {left_min} vs max right {right_max}"
        )));
    }
    let exact = exact_tv_1d(func)?;
    let mut nodes: Vec<f64> = (0..=n).map(|i| func.a + i as f64 * h).collect();
    let r_uniform = (partition_sum(func, &nodes) - exact).abs();
    nodes[j] -= delta;
    let r_shifted = (partition_sum(func, &nodes) - exact).abs();
    Ok(ShiftOutcome {
        r_uniform,
        r_shifted,
    })
}

/// Largest shift `δ*` such that every `δ ∈ (0, δ*)` reduces the truncation
/// error, located by a scan of `(0, h)` refined by bisection. `None` when no
/// small shift helps.
pub fn critical_shift(func: &AnalyticFn, n: usize, j: usize) -> Result<Option<f64>> {
    let h = (func.b - func.a) / n as f64;
    let gain = |d: f64| -> Result<f64> {
        let o = nonuniform_shift_experiment(func, n, j, d)?;
        Ok(o.r_uniform - o.r_shifted)
    };
    const STEPS: usize = 1000;
    let step = h / STEPS as f64;
    if gain(step * 1e-3)? <= 0.0 {
        return Ok(None);
    }
    let mut lo = step * 1e-3;
    for k in 1..STEPS {
        let d = k as f64 * step;
        if gain(d)? > 0.0 {
            lo = d;
            continue;
        }
        let mut hi = d;
        while hi - lo > 1e-15 {
            let mid = 0.5 * (lo + hi);
            if gain(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return Ok(Some(lo));
    }
    Ok(Some(h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_are_consistent() {
        for f in registry() {
            assert!(f.derivative_consistency(1000) < 1e-6, "{}", f.id);
        }
    }

    #[test]
    fn quadrature_oracle_matches_closed_forms() {
        for f in registry() {
            let q = tv_by_quadrature(f.df, f.a, f.b).unwrap();
            assert!((q - f.closed_tv.unwrap()).abs() < 1e-10, "{}: {q}", f.id);
        }
        assert_eq!(tv_by_quadrature(|_| 0.0, 0.0, 1.0).unwrap(), 0.0);
        assert!(tv_by_quadrature(|x: f64| 1.0 / x, 0.0, 1.0).is_err());
    }

    #[test]
    fn quadrature_hand_values() {
        let q = lookup("quad").unwrap();
        assert!((quadrature_tv(&q, 10, QuadMode::Derivative).unwrap() - 0.55).abs() < 1e-15);
        for n in [1, 7, 64] {
            assert!((quadrature_tv(&q, n, QuadMode::Difference).unwrap() - 0.5).abs() < 1e-15);
        }
        let c = AnalyticFn {
            id: "const",
            f: |_| 2.0,
            df: |_| 0.0,
            d2f: |_| 0.0,
            closed_tv: None,
            ..q
        };
        assert_eq!(exact_tv_1d(&c).unwrap(), 0.0);
        for mode in [QuadMode::Derivative, QuadMode::Difference] {
            assert_eq!(quadrature_tv(&c, 9, mode).unwrap(), 0.0);
        }
    }

    #[test]
    fn quadratic_error_is_one_over_2n() {
        let report = truncation_error_study(&lookup("quad").unwrap(), &[10, 100, 1000]).unwrap();
        for r in report.rows_for(QuadMode::Derivative) {
            assert!((r.error - 0.5 / r.n as f64).abs() < 1e-12);
        }
        assert!(report.bound_violations.is_empty());
    }

    #[test]
    fn shift_experiment_cases() {
        let p = lookup("pow32").unwrap();
        let out = nonuniform_shift_experiment(&p, 8, 4, 0.001).unwrap();
        assert!(out.r_shifted < out.r_uniform);
        // At j = 4 the admissible shift is about 0.0065; 0.01 overshoots.
        let out = nonuniform_shift_experiment(&p, 8, 4, 0.01).unwrap();
        assert!(out.r_shifted > out.r_uniform);
        let crit = critical_shift(&p, 8, 4).unwrap().unwrap();
        assert!(crit > 0.005 && crit < 0.008, "{crit}");
        let near = nonuniform_shift_experiment(&p, 8, 4, 0.99 * crit).unwrap();
        assert!(near.r_shifted < near.r_uniform);
        let same = nonuniform_shift_experiment(&p, 8, 4, 0.0).unwrap();
        assert_eq!(same.r_shifted, same.r_uniform);
        let q = lookup("quad").unwrap();
        assert!(matches!(
            nonuniform_shift_experiment(&q, 8, 4, 0.01),
            Err(Error::Precondition(_))
        ));
        assert!(nonuniform_shift_experiment(&p, 8, 4, 0.2).is_err());
    }

    #[test]
    fn csv_report_has_header_and_rows() {
        let report = truncation_error_study(&lookup("sin").unwrap(), &[4, 8]).unwrap();
        let csv = report.to_csv();
        assert!(csv.starts_with("n,mode,value,exact,error\n"));
        assert_eq!(csv.lines().count(), 5);
    }
}
