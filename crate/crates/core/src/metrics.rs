//! Image and regression quality metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde_json::{Map, Value};

use crate::array::DenseArray;
use crate::error::{Error, Result};

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "metric inputs",
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    Ok(())
}

pub fn mse(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    same_len(reference, estimate)?;
    Ok(reference
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64)
}

/// `10 log10(peak² / MSE)`; `+∞` for identical inputs.
pub fn psnr(reference: &[f64], estimate: &[f64], peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::invalid("peak", "must be > 0"));
    }
    let e = mse(reference, estimate)?;
    Ok(if e == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / e).log10()
    })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable weighted sum over every valid window position.
fn filter_valid(img: &[f64], rows: usize, cols: usize, w: &[f64]) -> Vec<f64> {
    let k = w.len();
    let (or, oc) = (rows - k + 1, cols - k + 1);
    let mut tmp = vec![0.0; rows * oc];
    for r in 0..rows {
        for c in 0..oc {
            tmp[r * oc + c] = (0..k).map(|t| w[t] * img[r * cols + c + t]).sum();
        }
    }
    let mut out = vec![0.0; or * oc];
    for r in 0..or {
        for c in 0..oc {
            out[r * oc + c] = (0..k).map(|t| w[t] * tmp[(r + t) * oc + c]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11×11 Gaussian windows (σ = 1.5) with constants
/// `(0.01·peak)²` and `(0.03·peak)²`.
pub fn ssim(reference: &DenseArray, estimate: &DenseArray, peak: f64) -> Result<f64> {
    let (rows, cols) = reference
        .dims2()
        .ok_or_else(|| Error::invalid("ssim", "inputs must be 2-D"))?;
    if reference.shape() != estimate.shape() {
        return Err(Error::ShapeMismatch {
            node: 0,
            expected: reference.shape().to_vec(),
            actual: estimate.shape().to_vec(),
        });
    }
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!("image {rows}×{cols} is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window"),
        ));
    }
    let w = gaussian_window();
    let (x, y) = (reference.data(), estimate.data());
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = filter_valid(x, rows, cols, &w);
    let my = filter_valid(y, rows, cols, &w);
    let sxx = filter_valid(&prod(x, x), rows, cols, &w);
    let syy = filter_valid(&prod(y, y), rows, cols, &w);
    let sxy = filter_valid(&prod(x, y), rows, cols, &w);
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// `(RMSE / (max − min of reference), 1 − SS_res / SS_tot)`.
pub fn mse_rsquare(reference: &[f64], predicted: &[f64]) -> Result<(f64, f64)> {
    same_len(reference, predicted)?;
    if reference.len() < 2 {
        return Err(Error::invalid("mse_rsquare", "need at least two values"));
    }
    let n = reference.len() as f64;
    let mean = reference.iter().sum::<f64>() / n;
    let ss_tot: f64 = reference.iter().map(|v| (v - mean).powi(2)).sum();
    let (lo, hi) = reference
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if ss_tot == 0.0 || hi == lo {
        return Err(Error::invalid("reference", "constant reference, R² undefined"));
    }
    let ss_res: f64 = reference
        .iter()
        .zip(predicted)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(((ss_res / n).sqrt() / (hi - lo), 1.0 - ss_res / ss_tot))
}

/// Ordered `key → value` metrics with a flat text and a JSON rendering.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    entries: BTreeMap<String, f64>,
}

fn render(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_owned()
    } else {
        format!("{v}")
    }
}

impl MetricsReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: f64) -> &mut Self {
        self.entries.insert(key.into(), value);
        self
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.get(key).copied()
    }

    pub fn entries(&self) -> &BTreeMap<String, f64> {
        &self.entries
    }

    pub fn merge(&mut self, prefix: &str, other: &MetricsReport) {
        for (k, v) in &other.entries {
            self.entries.insert(format!("{prefix}{k}"), *v);
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={}", render(*v));
        }
        out
    }

    /// Non-finite values become strings (`"inf"`), which JSON numbers
    /// cannot express.
    pub fn to_json(&self) -> String {
        let map: Map<String, Value> = self
            .entries
            .iter()
            .map(|(k, &v)| {
                let val = serde_json::Number::from_f64(v)
                    .map(Value::Number)
                    .unwrap_or_else(|| Value::String(render(v)));
                (k.clone(), val)
            })
            .collect();
        serde_json::to_string_pretty(&Value::Object(map)).expect("serializable") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn psnr_cases() {
        let x = random(64, 1);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);
        let y: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&x, &y, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let z = random(64, 2);
        let direct = {
            let m: f64 = x.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 64.0;
            -10.0 * m.log10()
        };
        assert!((psnr(&x, &z, 1.0).unwrap() - direct).abs() < 1e-12);
        assert_eq!(psnr(&x, &z, 1.0).unwrap(), psnr(&z, &x, 1.0).unwrap());
        assert!(psnr(&x, &z[..3], 1.0).is_err());
    }

    /// Direct per-window evaluation with a 2-D Gaussian kernel.
    fn ssim_oracle(x: &[f64], y: &[f64], rows: usize, cols: usize) -> f64 {
        let s = 1.5f64;
        let mut k = [[0.0; 11]; 11];
        let mut tot = 0.0;
        for (i, row) in k.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / (2.0 * s * s)).exp();
                tot += *v;
            }
        }
        let (c1, c2) = (1e-4, 9e-4);
        let mut acc = 0.0;
        let mut count = 0;
        for r in 0..=rows - 11 {
            for c in 0..=cols - 11 {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let w = k[i][j] / tot;
                        mx += w * x[(r + i) * cols + c + j];
                        my += w * y[(r + i) * cols + c + j];
                    }
                }
                let (mut vx, mut vy, mut cv) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let w = k[i][j] / tot;
                        let a = x[(r + i) * cols + c + j] - mx;
                        let b = y[(r + i) * cols + c + j] - my;
                        vx += w * a * a;
                        vy += w * b * b;
                        cv += w * a * b;
                    }
                }
                acc += (2.0 * mx * my + c1) * (2.0 * cv + c2)
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn ssim_cases() {
        let x = DenseArray::new(vec![16, 20], random(320, 3)).unwrap();
        assert_eq!(ssim(&x, &x, 1.0).unwrap(), 1.0);
        let brighter = x.map(|v| (v + 0.5).min(1.0));
        assert!(ssim(&x, &brighter, 1.0).unwrap() < 1.0);
        let y = DenseArray::new(vec![16, 20], random(320, 4)).unwrap();
        let want = ssim_oracle(x.data(), y.data(), 16, 20);
        assert!((ssim(&x, &y, 1.0).unwrap() - want).abs() < 1e-9);
        let small = DenseArray::zeros(&[8, 8]);
        assert!(ssim(&small, &small, 1.0).is_err());
    }

    #[test]
    fn regression_metrics() {
        let r = random(10, 5);
        assert_eq!(mse_rsquare(&r, &r).unwrap(), (0.0, 1.0));
        let m = r.iter().sum::<f64>() / 10.0;
        let (_, r2) = mse_rsquare(&r, &vec![m; 10]).unwrap();
        assert!(r2.abs() < 1e-12);
        let (nrmse, r2) = mse_rsquare(&[0.0, 1.0], &[0.5, 0.5]).unwrap();
        assert!((nrmse - 0.5).abs() < 1e-15 && r2.abs() < 1e-15);
        assert!(mse_rsquare(&[1.0, 1.0], &[0.0, 1.0]).is_err());
        // Affine invariance.
        let p = random(10, 6);
        let scale = |v: &[f64]| v.iter().map(|x| 3.0 * x - 2.0).collect::<Vec<_>>();
        let (a1, b1) = mse_rsquare(&r, &p).unwrap();
        let (a2, b2) = mse_rsquare(&scale(&r), &scale(&p)).unwrap();
        assert!((a1 - a2).abs() < 1e-12 && (b1 - b2).abs() < 1e-12);
    }

    #[test]
    fn report_renderings() {
        let mut rep = MetricsReport::new();
        rep.set("psnr", f64::INFINITY).set("ssim", 0.5);
        assert_eq!(rep.to_text(), "psnr=inf\nssim=0.5\n");
        let json: Value = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(json["psnr"], "inf");
        assert_eq!(json["ssim"], 0.5);
    }
}
