//! Denoising, inpainting, HSI mixed-noise removal, point-cloud and
//! transcriptomics recovery.

use crate::array::DenseArray;
use crate::error::{Error, Result};
use crate::net::{Architecture, NetworkSpec};
use crate::sampling::{grid_node, make_meshgrid, CoordMap, Points, SampleSet};

use super::config::TaskConfig;
use super::fit::{clip_to, fit, value_range, FitProblem, FitResult};
use super::table::ObservationTable;

/// Fills in the input dimension and default tf-net ranks.
fn resolve(cfg: &TaskConfig, extents: &[usize]) -> TaskConfig {
    let mut cfg = cfg.clone();
    cfg.network.input_dim = extents.len();
    if cfg.network.architecture == Architecture::TfNet && cfg.network.ranks.is_empty() {
        cfg.network.ranks = NetworkSpec::default_ranks(extents);
    }
    cfg
}

/// Every index tuple of `extents`, last index fastest, as integer coordinates.
fn index_points(extents: &[usize]) -> Result<Points> {
    let zero = DenseArray::zeros(extents);
    Ok(ObservationTable::from_array(&zero)?.coords().clone())
}

/// A recovered array together with the fits that produced it (one per
/// channel for channel-wise denoising).
#[derive(Clone, Debug)]
pub struct Recovered {
    pub array: DenseArray,
    pub fits: Vec<FitResult>,
}

/// Channel-wise denoising of a fully observed image table with integer
/// coordinates `(row, col)` or `(row, col, channel)`.
pub fn denoise_image(obs: &ObservationTable, cfg: &TaskConfig) -> Result<Recovered> {
    denoise_inner(obs, cfg, None)
}

/// As [`denoise_image`], also recording PSNR against `reference` in the trace.
pub fn denoise_image_traced(
    obs: &ObservationTable,
    cfg: &TaskConfig,
    reference: &DenseArray,
) -> Result<Recovered> {
    denoise_inner(obs, cfg, Some(reference))
}

fn denoise_inner(
    obs: &ObservationTable,
    cfg: &TaskConfig,
    reference: Option<&DenseArray>,
) -> Result<Recovered> {
    let table = obs.canonical();
    let extents = table.grid_extents().ok_or(Error::NotMeshgrid)?;
    let (spatial, channels) = match extents.len() {
        2 => (extents.clone(), 1),
        3 => (extents[..2].to_vec(), extents[2]),
        n => {
            return Err(Error::Precondition(format!(
                "denoising expects a 2-D or 3-D image, got {n} dimensions"
            )))
        }
    };
    if let Some(r) = reference {
        if r.shape() != extents.as_slice() {
            return Err(Error::ShapeMismatch {
                node: 0,
                expected: extents.clone(),
                actual: r.shape().to_vec(),
            });
        }
    }
    let cfg = resolve(cfg, &spatial);
    let map = CoordMap::for_grid(&spatial)?;
    let gamma = make_meshgrid(&spatial, cfg.factor)?;
    let pixels = spatial[0] * spatial[1];
    let mut out = DenseArray::zeros(&extents);
    let mut fits = Vec::with_capacity(channels);
    for c in 0..channels {
        // Canonical order puts the channel last, so channel c is strided.
        let rows: Vec<usize> = (0..pixels).map(|p| p * channels + c).collect();
        let slice = table.select(&rows)?;
        let raw = Points::new(2, slice.coords().iter().flat_map(|p| [p[0], p[1]]).collect())?;
        let mut problem = FitProblem::new(map.normalize(&raw)?, slice.values().to_vec(), gamma.clone())?;
        problem.unit = spatial.iter().map(|&e| 2.0 / e as f64).collect();
        problem.reference =
            reference.map(|r| rows.iter().map(|&i| r.data()[i]).collect::<Vec<f64>>());
        let result = fit(&problem, &cfg)?;
        let est = clip_to(&result.predictions, slice.value_range(), cfg.clip);
        for (&i, v) in rows.iter().zip(est) {
            out.data_mut()[i] = v;
        }
        fits.push(result);
    }
    Ok(Recovered { array: out, fits })
}

/// Recovers a `[rows, cols, channels]` image (or `[rows, cols]`) from the
/// observed entries. The channel coordinate is part of the network input but
/// is not regularized.
pub fn inpaint_image(obs: &ObservationTable, extents: &[usize], cfg: &TaskConfig) -> Result<Recovered> {
    let full: Vec<usize> = match extents.len() {
        2 => vec![extents[0], extents[1], 1],
        3 => extents.to_vec(),
        n => {
            return Err(Error::Precondition(format!(
                "inpainting expects a 2-D or 3-D image, got {n} dimensions"
            )))
        }
    };
    if obs.dim() != extents.len() {
        return Err(Error::DimensionMismatch {
            expected: extents.len(),
            actual: obs.dim(),
        });
    }
    let table = obs.canonical();
    let coords: Vec<f64> = if extents.len() == 2 {
        table.coords().iter().flat_map(|p| [p[0], p[1], 0.0]).collect()
    } else {
        table.coords().data().to_vec()
    };
    let raw = Points::new(3, coords)?;
    for p in raw.iter() {
        table.flat_index(p, &full)?;
    }
    let cfg = resolve(cfg, &full);
    let map = CoordMap::for_grid(&full)?;
    let channels: Vec<f64> = (0..full[2]).map(|c| grid_node(c, full[2])).collect();
    let gamma = make_meshgrid(&full[..2], cfg.factor)?.with_trailing(&channels)?;
    let mut problem = FitProblem::new(map.normalize(&raw)?, table.values().to_vec(), gamma)?;
    problem.unit = full.iter().map(|&e| 2.0 / e as f64).collect();
    let result = fit(&problem, &cfg)?;
    let grid = map.normalize(&index_points(&full)?)?;
    let est = clip_to(&result.network.forward(&grid)?, table.value_range(), cfg.clip);
    let shape = if extents.len() == 2 { extents.to_vec() } else { full };
    Ok(Recovered {
        array: DenseArray::new(shape, est)?,
        fits: vec![result],
    })
}

/// The estimated sparse noise of an HSI cube.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseComponent {
    pub array: DenseArray,
}

impl SparseComponent {
    /// Entries with nonzero estimated noise.
    pub fn support(&self) -> Vec<bool> {
        self.array.data().iter().map(|&v| v != 0.0).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.array.data().iter().all(|&v| v == 0.0)
    }
}

#[derive(Clone, Debug)]
pub struct HsiOutput {
    pub cube: DenseArray,
    pub sparse: SparseComponent,
    pub fit: FitResult,
}

/// Splits a `[rows, cols, bands]` cube into a smooth part and sparse noise.
pub fn hsi_mixed_denoise(cube: &DenseArray, cfg: &TaskConfig) -> Result<HsiOutput> {
    hsi_inner(cube, cfg, None)
}

pub fn hsi_mixed_denoise_traced(
    cube: &DenseArray,
    cfg: &TaskConfig,
    reference: &DenseArray,
) -> Result<HsiOutput> {
    hsi_inner(cube, cfg, Some(reference))
}

fn hsi_inner(cube: &DenseArray, cfg: &TaskConfig, reference: Option<&DenseArray>) -> Result<HsiOutput> {
    let extents = cube.shape().to_vec();
    if extents.len() != 3 {
        return Err(Error::Precondition(format!(
            "HSI denoising expects a 3-way cube, got {} dimensions",
            extents.len()
        )));
    }
    if !(cfg.gamma > 0.0 && cfg.gamma.is_finite()) {
        return Err(Error::invalid("gamma", "must be finite and > 0"));
    }
    if !cube.all_finite() {
        return Err(Error::NonFinite("HSI cube".into()));
    }
    let cfg = resolve(cfg, &extents);
    let map = CoordMap::for_grid(&extents)?;
    let points = map.normalize(&index_points(&extents)?)?;
    let gamma = make_meshgrid(&extents, cfg.factor)?;
    let mut problem = FitProblem::new(points, cube.data().to_vec(), gamma)?;
    problem.sparse = true;
    problem.unit = extents.iter().map(|&e| 2.0 / e as f64).collect();
    problem.reference = reference.map(|r| r.data().to_vec());
    let result = fit(&problem, &cfg)?;
    let est = clip_to(&result.predictions, value_range(cube.data()), cfg.clip);
    let s = result.sparse.clone().expect("sparse fit");
    Ok(HsiOutput {
        cube: DenseArray::new(extents.clone(), est)?,
        sparse: SparseComponent {
            array: DenseArray::new(extents, s)?,
        },
        fit: result,
    })
}

/// Predictions at query coordinates of a scattered-data fit.
#[derive(Clone, Debug)]
pub struct ScatterOutput {
    pub predictions: Vec<f64>,
    pub map: CoordMap,
    pub fit: FitResult,
}

/// Color regression over `(x, y, z, C)` rows; predicts at `queries`.
pub fn recover_pointcloud(
    observed: &ObservationTable,
    queries: &Points,
    cfg: &TaskConfig,
) -> Result<ScatterOutput> {
    scattered(observed, queries, cfg, 4)
}

/// Expression regression over `(x, y, g)` rows; predicts at `queries`.
pub fn reconstruct_transcriptomics(
    observed: &ObservationTable,
    queries: &Points,
    cfg: &TaskConfig,
) -> Result<ScatterOutput> {
    scattered(observed, queries, cfg, 3)
}

/// Sorted, duplicate-free union of the rows of `a` and `b`.
fn union_rows(a: &Points, b: &Points) -> Result<Points> {
    let mut rows: Vec<&[f64]> = a.iter().chain(b.iter()).collect();
    let cmp = |x: &&[f64], y: &&[f64]| {
        x.iter()
            .zip(y.iter())
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    rows.sort_by(cmp);
    rows.dedup_by(|x, y| cmp(x, y).is_eq());
    Points::new(a.dim(), rows.concat())
}

fn scattered(
    observed: &ObservationTable,
    queries: &Points,
    cfg: &TaskConfig,
    dim: usize,
) -> Result<ScatterOutput> {
    for actual in [observed.dim(), queries.dim()] {
        if actual != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual,
            });
        }
    }
    if let Some(v) = queries.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("query coordinate {v}")));
    }
    let table = observed.canonical();
    let all = union_rows(table.coords(), queries)?;
    let map = match &cfg.coord_ranges {
        Some(r) => CoordMap::new(r.clone())?,
        None => {
            // A coordinate with a single value (e.g. one gene) gets a unit
            // window around it.
            let ranges = ObservationTable::new(all.clone(), vec![0.0; all.len()])?
                .coord_ranges()
                .into_iter()
                .map(|(lo, hi)| if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) })
                .collect();
            CoordMap::new(ranges)?
        }
    };
    let gamma = SampleSet::from_points(map.normalize(&all)?)?;
    let unique: Vec<usize> = (0..dim)
        .map(|d| {
            let mut col = all.column(d);
            col.sort_by(f64::total_cmp);
            col.dedup();
            col.len()
        })
        .collect();
    let cfg = resolve(cfg, &unique);
    let problem = FitProblem::new(map.normalize(table.coords())?, table.values().to_vec(), gamma)?;
    let result = fit(&problem, &cfg)?;
    let pred = result.network.forward(&map.normalize(queries)?)?;
    Ok(ScatterOutput {
        predictions: clip_to(&pred, table.value_range(), cfg.clip),
        map,
        fit: result,
    })
}
