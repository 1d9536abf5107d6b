//! Observation coordinates and regularization point sets.
//!
//! Everything lives in the canonical domain `[-1, 1]^N`. Meshgrids use the
//! right-endpoint convention: with `n` partitions per axis the nodes are
//! `x_i = -1 + 2i/n` for `i = 1..=n`, so a data grid of extent `e` is exactly
//! the factor-1 grid and is nested inside every factor-`k` grid.

use crate::error::{Error, Result};

/// Default cap on the number of points of a generated meshgrid.
pub const DEFAULT_POINT_CAP: usize = 10_000_000;

/// A table of `N`-dimensional points stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "point dimension must be positive"));
        }
        if data.len() % dim != 0 {
            return Err(Error::LengthMismatch {
                what: "point table",
                expected: data.len() / dim * dim + dim,
                actual: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Malformed(format!(
                    "row {i} has {} coordinates, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Values of one coordinate across all points.
    pub fn column(&self, d: usize) -> Vec<f64> {
        self.iter().map(|p| p[d]).collect()
    }

    /// Copy with every point moved by `delta` along dimension `d`.
    pub fn shifted(&self, d: usize, delta: f64) -> Self {
        let mut data = self.data.clone();
        for p in data.chunks_exact_mut(self.dim) {
            p[d] += delta;
        }
        Self {
            dim: self.dim,
            data,
        }
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.point(r));
        }
        Self {
            dim: self.dim,
            data,
        }
    }
}

/// Affine per-dimension map from raw coordinates into `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordMap {
    ranges: Vec<(f64, f64)>,
}

impl CoordMap {
    pub fn new(ranges: Vec<(f64, f64)>) -> Result<Self> {
        for (dim, &(lo, hi)) in ranges.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::DegenerateRange { dim, lo, hi });
            }
        }
        Ok(Self { ranges })
    }

    /// Ranges spanning the observed minimum and maximum of every column.
    pub fn fit(raw: &Points) -> Result<Self> {
        let ranges = (0..raw.dim())
            .map(|d| {
                raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    (lo.min(p[d]), hi.max(p[d]))
                })
            })
            .collect();
        Self::new(ranges)
    }

    /// Ranges that place integer index `i ∈ 0..extent` at `-1 + 2(i+1)/extent`,
    /// matching the factor-1 meshgrid.
    pub fn for_grid(extents: &[usize]) -> Result<Self> {
        Self::new(extents.iter().map(|&e| (-1.0, e as f64 - 1.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    pub fn normalize_value(&self, d: usize, raw: f64) -> f64 {
        let (lo, hi) = self.ranges[d];
        2.0 * (raw - lo) / (hi - lo) - 1.0
    }

    pub fn denormalize_value(&self, d: usize, canonical: f64) -> f64 {
        let (lo, hi) = self.ranges[d];
        lo + (canonical + 1.0) * 0.5 * (hi - lo)
    }

    pub fn normalize(&self, raw: &Points) -> Result<Points> {
        self.apply(raw, Self::normalize_value)
    }

    pub fn denormalize(&self, canonical: &Points) -> Result<Points> {
        self.apply(canonical, Self::denormalize_value)
    }

    fn apply(&self, pts: &Points, f: fn(&Self, usize, f64) -> f64) -> Result<Points> {
        if pts.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: pts.dim(),
            });
        }
        let data = pts
            .iter()
            .flat_map(|p| p.iter().enumerate().map(|(d, &v)| f(self, d, v)))
            .collect();
        Points::new(pts.dim(), data)
    }
}

/// Maps raw coordinates into the canonical domain using explicit per-dimension
/// ranges, returning the canonical points and the map for reporting.
pub fn normalize_coords(raw: &Points, ranges: &[(f64, f64)]) -> Result<(Points, CoordMap)> {
    let map = CoordMap::new(ranges.to_vec())?;
    Ok((map.normalize(raw)?, map))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    DataMeshgrid,
    DenseMeshgrid,
    DataPoints,
}

/// Grid layout of a meshgrid sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct GridInfo {
    /// Partition count per dimension.
    pub partitions: Vec<usize>,
    /// Interval length per dimension.
    pub spacing: Vec<f64>,
}

/// A regularization point set Γ.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    points: Points,
    grid: Option<GridInfo>,
    provenance: Provenance,
}

impl SampleSet {
    /// Γ taken as exactly the given (canonical) points.
    pub fn from_points(points: Points) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        if let Some(v) = points.data().iter().find(|v| !(v.abs() <= 1.0 + 1e-12)) {
            return Err(Error::Malformed(format!(
                "sample coordinate {v} outside the canonical domain"
            )));
        }
        Ok(Self {
            points,
            grid: None,
            provenance: Provenance::DataPoints,
        })
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn grid(&self) -> Option<&GridInfo> {
        self.grid.as_ref()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn is_meshgrid(&self) -> bool {
        self.grid.is_some()
    }

    /// Cartesian product of this set with extra trailing coordinates that are
    /// not regularized (e.g. channel or gene codes). The result keeps the
    /// meshgrid spacing of the leading dimensions.
    pub fn with_trailing(&self, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        let dim = self.dim() + 1;
        let mut data = Vec::with_capacity(self.len() * values.len() * dim);
        for p in self.points.iter() {
            for &v in values {
                data.extend_from_slice(p);
                data.push(v);
            }
        }
        Ok(Self {
            points: Points::new(dim, data)?,
            grid: self.grid.clone(),
            provenance: self.provenance,
        })
    }
}

/// Canonical coordinate of node `i` (0-based) of an axis with `n` partitions.
pub fn grid_node(i: usize, n: usize) -> f64 {
    -1.0 + 2.0 * (i + 1) as f64 / n as f64
}

/// Uniform meshgrid with `factor · extent` partitions per dimension.
pub fn make_meshgrid(extents: &[usize], factor: usize) -> Result<SampleSet> {
    make_meshgrid_capped(extents, factor, DEFAULT_POINT_CAP)
}

pub fn make_meshgrid_capped(extents: &[usize], factor: usize, cap: usize) -> Result<SampleSet> {
    if extents.is_empty() {
        return Err(Error::invalid("extents", "at least one dimension required"));
    }
    if let Some(&e) = extents.iter().find(|&&e| e < 2) {
        return Err(Error::invalid("extents", format!("extent {e} is below 2")));
    }
    if factor == 0 {
        return Err(Error::invalid("factor", "resolution factor must be >= 1"));
    }
    let partitions: Vec<usize> = extents.iter().map(|&e| e * factor).collect();
    let count = partitions
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .unwrap_or(usize::MAX);
    if count > cap {
        return Err(Error::TooManyPoints { count, cap });
    }
    let dim = extents.len();
    let axes: Vec<Vec<f64>> = partitions
        .iter()
        .map(|&n| (0..n).map(|i| grid_node(i, n)).collect())
        .collect();
    let mut data = Vec::with_capacity(count * dim);
    let mut idx = vec![0usize; dim];
    for _ in 0..count {
        data.extend(idx.iter().zip(&axes).map(|(&i, axis)| axis[i]));
        for d in (0..dim).rev() {
            idx[d] += 1;
            if idx[d] < partitions[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    let spacing = partitions.iter().map(|&n| 2.0 / n as f64).collect();
    Ok(SampleSet {
        points: Points::new(dim, data)?,
        grid: Some(GridInfo {
            partitions,
            spacing,
        }),
        provenance: if factor == 1 {
            Provenance::DataMeshgrid
        } else {
            Provenance::DenseMeshgrid
        },
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let raw = Points::new(1, vec![0.0, 5.0, 10.0]).unwrap();
        let (canon, map) = normalize_coords(&raw, &[(0.0, 10.0)]).unwrap();
        assert_eq!(canon.data(), &[-1.0, 0.0, 1.0]);
        let back = map.denormalize(&canon).unwrap();
        assert_eq!(back.data(), raw.data());
    }

    #[test]
    fn degenerate_range_rejected() {
        let raw = Points::new(1, vec![1.0]).unwrap();
        assert!(matches!(
            normalize_coords(&raw, &[(2.0, 2.0)]),
            Err(Error::DegenerateRange { dim: 0, .. })
        ));
    }

    #[test]
    fn meshgrid_counts_and_spacing() {
        assert_eq!(make_meshgrid(&[4, 4], 1).unwrap().len(), 16);
        assert_eq!(make_meshgrid(&[4, 4], 3).unwrap().len(), 144);
        let g = make_meshgrid(&[4], 2).unwrap();
        assert_eq!(g.grid().unwrap().spacing, vec![2.0 / 8.0]);
        assert_eq!(g.provenance(), Provenance::DenseMeshgrid);
        assert!(matches!(
            make_meshgrid_capped(&[100, 100], 3, 1000),
            Err(Error::TooManyPoints { count: 90000, .. })
        ));
        assert!(make_meshgrid(&[1, 4], 1).is_err());
    }

    #[test]
    fn consecutive_nodes_differ_by_spacing() {
        let g = make_meshgrid(&[5, 3], 2).unwrap();
        let info = g.grid().unwrap();
        let (n0, n1) = (info.partitions[0], info.partitions[1]);
        for i in 0..n0 {
            for j in 1..n1 {
                let a = g.points().point(i * n1 + j - 1);
                let b = g.points().point(i * n1 + j);
                assert!((b[1] - a[1] - info.spacing[1]).abs() < 1e-12);
                assert_eq!(a[0], b[0]);
            }
        }
        assert_eq!(g.points().point(g.len() - 1), &[1.0, 1.0]);
    }

    #[test]
    fn data_grid_is_nested_in_dense_grid() {
        let coarse = make_meshgrid(&[6], 1).unwrap();
        let fine = make_meshgrid(&[6], 4).unwrap();
        for p in coarse.points().iter() {
            assert!(fine.points().iter().any(|q| (q[0] - p[0]).abs() < 1e-12));
        }
        // integer pixel indices land on the factor-1 nodes
        let map = CoordMap::for_grid(&[6]).unwrap();
        for i in 0..6 {
            let c = map.normalize_value(0, i as f64);
            assert!((c - coarse.points().point(i)[0]).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn normalize_round_trip(v in -1e3f64..1e3, lo in -50.0f64..0.0, width in 0.1f64..100.0) {
            let map = CoordMap::new(vec![(lo, lo + width)]).unwrap();
            let back = map.denormalize_value(0, map.normalize_value(0, v));
            prop_assert!((back - v).abs() <= 1e-12 * (1.0 + v.abs()));
        }
    }
}
