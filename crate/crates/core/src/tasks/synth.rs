//! Seeded synthetic fixtures for tests, examples and calibration runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::array::DenseArray;
use crate::error::{Error, Result};
use crate::sampling::Points;

use super::table::ObservationTable;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Piecewise-smooth `n × n` image in `[0, 1]`: a shaded background, a disc
/// and a rectangle with their own gentle ramps.
pub fn piecewise_smooth_image(n: usize) -> DenseArray {
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (y, x) = (i as f64 / n as f64, j as f64 / n as f64);
            let mut v = 0.2 + 0.25 * x + 0.1 * (3.0 * y).sin();
            if (x - 0.35).powi(2) + (y - 0.4).powi(2) < 0.06 {
                v = 0.8 - 0.2 * y;
            }
            if (0.55..0.85).contains(&x) && (0.6..0.9).contains(&y) {
                v = 0.05 + 0.3 * x * y;
            }
            data.push(v.clamp(0.0, 1.0));
        }
    }
    DenseArray::new(vec![n, n], data).expect("n*n entries")
}

/// Piecewise-constant `n × n` image with three levels.
pub fn piecewise_constant_image(n: usize) -> DenseArray {
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let v = match (i < n / 2, j < n / 2) {
                (true, true) => 0.2,
                (true, false) => 0.7,
                (false, _) if j < n / 4 => 0.7,
                _ => 0.45,
            };
            data.push(v);
        }
    }
    DenseArray::new(vec![n, n], data).expect("n*n entries")
}

/// Smooth two-channel-free test image used by the inpainting examples.
pub fn smooth_image(n: usize) -> DenseArray {
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (y, x) = (i as f64 / n as f64, j as f64 / n as f64);
            data.push(0.5 + 0.3 * (2.0 * x + y).sin() * (1.5 * y).cos());
        }
    }
    DenseArray::new(vec![n, n], data).expect("n*n entries")
}

/// Adds i.i.d. `N(0, σ²)` noise.
pub fn add_gaussian(clean: &DenseArray, sigma: f64, seed: u64) -> Result<DenseArray> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid("sigma", e.to_string()))?;
    let mut r = rng(seed);
    let mut out = clean.clone();
    for v in out.data_mut() {
        *v += normal.sample(&mut r);
    }
    Ok(out)
}

/// Smooth `rows × cols × bands` cube in `[0.2, 0.8]` with low-rank spectra.
pub fn smooth_cube(rows: usize, cols: usize, bands: usize) -> DenseArray {
    let mut data = Vec::with_capacity(rows * cols * bands);
    for i in 0..rows {
        for j in 0..cols {
            for b in 0..bands {
                let (y, x, s) = (
                    i as f64 / rows as f64,
                    j as f64 / cols as f64,
                    b as f64 / bands as f64,
                );
                let a1 = 0.5 + 0.5 * (2.0 * x + y).sin();
                let a2 = 0.5 + 0.5 * (3.0 * y - x).cos();
                data.push(0.2 + 0.35 * a1 * (1.0 - s) + 0.25 * a2 * s);
            }
        }
    }
    DenseArray::new(vec![rows, cols, bands], data).expect("sized cube")
}

/// Adds `±1` spikes to a random `fraction` of the entries; returns the noisy
/// array and the spike mask.
pub fn add_impulse(clean: &DenseArray, fraction: f64, seed: u64) -> Result<(DenseArray, Vec<bool>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid("fraction", "must lie in [0, 1]"));
    }
    let mut r = rng(seed);
    let mut order: Vec<usize> = (0..clean.len()).collect();
    order.shuffle(&mut r);
    let count = (fraction * clean.len() as f64).round() as usize;
    let mut noisy = clean.clone();
    let mut mask = vec![false; clean.len()];
    for &i in &order[..count] {
        mask[i] = true;
        noisy.data_mut()[i] += if r.random_bool(0.5) { 1.0 } else { -1.0 };
    }
    Ok((noisy, mask))
}

/// Splits a table into observed and held-out rows with a seeded permutation.
pub fn split(table: &ObservationTable, observed: f64, seed: u64) -> Result<(ObservationTable, ObservationTable)> {
    if !(observed > 0.0 && observed < 1.0) {
        return Err(Error::invalid("observed", "fraction must lie in (0, 1)"));
    }
    let mut order: Vec<usize> = (0..table.len()).collect();
    order.shuffle(&mut rng(seed));
    let k = ((observed * table.len() as f64).round() as usize).clamp(1, table.len() - 1);
    let (a, b) = order.split_at(k);
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    a.sort_unstable();
    b.sort_unstable();
    Ok((table.select(&a)?, table.select(&b)?))
}

/// Keeps each entry of a fully observed table with probability `observed`.
pub fn mask_table(table: &ObservationTable, observed: f64, seed: u64) -> Result<ObservationTable> {
    Ok(split(table, observed, seed)?.0)
}

/// `points` random points on the unit sphere shell with three color
/// channels, as `(x, y, z, C, v)` rows with `C ∈ {1, 2, 3}`. `color` maps a
/// position and channel to a value.
pub fn color_cloud(
    points: usize,
    seed: u64,
    color: impl Fn(f64, f64, f64, usize) -> f64,
) -> Result<ObservationTable> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut r = rng(seed);
    let mut rows = Vec::with_capacity(points * 3);
    for _ in 0..points {
        let (mut x, mut y, mut z): (f64, f64, f64);
        loop {
            x = normal.sample(&mut r);
            y = normal.sample(&mut r);
            z = normal.sample(&mut r);
            if x * x + y * y + z * z > 1e-6 {
                break;
            }
        }
        let norm = (x * x + y * y + z * z).sqrt();
        let (x, y, z) = (x / norm, y / norm, z / norm);
        for c in 1..=3 {
            rows.push(vec![x, y, z, c as f64, color(x, y, z, c)]);
        }
    }
    ObservationTable::from_rows(&rows, 4)
}

/// A smooth color field on the sphere.
pub fn smooth_color(x: f64, y: f64, z: f64, c: usize) -> f64 {
    let phase = c as f64 * 0.7;
    0.5 + 0.2 * (1.5 * x + phase).sin() + 0.15 * (1.2 * y - z + phase).cos()
}

/// Two-gene smooth expression field on an `n × n` grid of spots, as
/// `(x, y, g, v)` rows with `g ∈ {0, 1}`.
pub fn two_gene_field(n: usize) -> Result<ObservationTable> {
    let mut rows = Vec::with_capacity(n * n * 2);
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (i as f64, j as f64);
            let (u, v) = (x / n as f64, y / n as f64);
            rows.push(vec![x, y, 0.0, 1.0 + (2.5 * u).sin() * (2.0 * v).cos()]);
            rows.push(vec![x, y, 1.0, 0.5 + u * v + 0.3 * (3.0 * v).sin()]);
        }
    }
    ObservationTable::from_rows(&rows, 3)
}

/// Query coordinates of a table (the held-out rows of a split).
pub fn query_points(table: &ObservationTable) -> Points {
    table.coords().clone()
}
