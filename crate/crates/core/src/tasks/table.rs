use std::cmp::Ordering;

use crate::array::DenseArray;
use crate::error::{Error, Result};
use crate::sampling::Points;

/// Observed samples: `n` rows of `N` raw coordinates followed by one value.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationTable {
    coords: Points,
    values: Vec<f64>,
}

impl ObservationTable {
    pub fn new(coords: Points, values: Vec<f64>) -> Result<Self> {
        if coords.len() != values.len() {
            return Err(Error::LengthMismatch {
                what: "observation values",
                expected: coords.len(),
                actual: values.len(),
            });
        }
        if coords.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        if let Some(v) = coords.data().iter().chain(&values).find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("observation entry {v}")));
        }
        Ok(Self { coords, values })
    }

    /// Rows of width `dim + 1`, value last.
    pub fn from_rows(rows: &[Vec<f64>], dim: usize) -> Result<Self> {
        let mut coords = Vec::with_capacity(rows.len() * dim);
        let mut values = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim + 1 {
                return Err(Error::Malformed(format!(
                    "row {i} has {} fields, expected {}",
                    r.len(),
                    dim + 1
                )));
            }
            coords.extend_from_slice(&r[..dim]);
            values.push(r[dim]);
        }
        Self::new(Points::new(dim, coords)?, values)
    }

    /// Flattens an array into rows `(i_1, …, i_N, value)` with integer
    /// coordinates, last index fastest.
    pub fn from_array(array: &DenseArray) -> Result<Self> {
        let shape = array.shape();
        let dim = shape.len();
        let mut coords = Vec::with_capacity(array.len() * dim);
        let mut idx = vec![0usize; dim];
        for _ in 0..array.len() {
            coords.extend(idx.iter().map(|&i| i as f64));
            for d in (0..dim).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Self::new(Points::new(dim, coords)?, array.data().to_vec())
    }

    pub fn dim(&self) -> usize {
        self.coords.dim()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn coords(&self) -> &Points {
        &self.coords
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> (&[f64], f64) {
        (self.coords.point(i), self.values[i])
    }

    /// `(min, max)` of the values.
    pub fn value_range(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            self.coords.select(rows),
            rows.iter().map(|&r| self.values[r]).collect(),
        )
    }

    fn cmp_rows(&self, a: usize, b: usize) -> Ordering {
        let (pa, va) = self.row(a);
        let (pb, vb) = self.row(b);
        pa.iter()
            .zip(pb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or_else(|| va.total_cmp(&vb))
    }

    /// Rows sorted lexicographically with exact duplicate rows removed. The
    /// result does not depend on the input row order.
    pub fn canonical(&self) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.cmp_rows(a, b));
        order.dedup_by(|a, b| self.cmp_rows(*a, *b).is_eq());
        self.select(&order).expect("subset of a valid table")
    }

    /// Per-dimension `(min, max)` of the coordinates.
    pub fn coord_ranges(&self) -> Vec<(f64, f64)> {
        (0..self.dim())
            .map(|d| {
                self.coords.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    (lo.min(p[d]), hi.max(p[d]))
                })
            })
            .collect()
    }

    /// Extents of the integer grid the table covers exactly once, if any.
    pub fn grid_extents(&self) -> Option<Vec<usize>> {
        let mut extents = Vec::with_capacity(self.dim());
        for (lo, hi) in self.coord_ranges() {
            if lo != 0.0 || hi.fract() != 0.0 {
                return None;
            }
            extents.push(hi as usize + 1);
        }
        let total: usize = extents.iter().product();
        if total != self.len() {
            return None;
        }
        let mut seen = vec![false; total];
        for p in self.coords.iter() {
            if p.iter().any(|v| v.fract() != 0.0) {
                return None;
            }
            let flat = p
                .iter()
                .zip(&extents)
                .fold(0usize, |acc, (&v, &e)| acc * e + v as usize);
            if std::mem::replace(&mut seen[flat], true) {
                return None;
            }
        }
        Some(extents)
    }

    /// Scatters the values into an array of the given extents. Coordinates
    /// must be integer indices inside the extents.
    pub fn to_array(&self, extents: &[usize]) -> Result<DenseArray> {
        if extents.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: extents.len(),
            });
        }
        let mut out = DenseArray::zeros(extents);
        for i in 0..self.len() {
            let (p, v) = self.row(i);
            let flat = self.flat_index(p, extents)?;
            out.data_mut()[flat] = v;
        }
        Ok(out)
    }

    pub(crate) fn flat_index(&self, p: &[f64], extents: &[usize]) -> Result<usize> {
        let mut flat = 0usize;
        for (&v, &e) in p.iter().zip(extents) {
            if v.fract() != 0.0 || v < 0.0 || v >= e as f64 {
                return Err(Error::Malformed(format!(
                    "coordinate {v} is not an index below {e}"
                )));
            }
            flat = flat * e + v as usize;
        }
        Ok(flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flattening_a_4x4_image_gives_16_rows() {
        let img = DenseArray::new(vec![4, 4], (0..16).map(f64::from).collect()).unwrap();
        let t = ObservationTable::from_array(&img).unwrap();
        assert_eq!(t.len(), 16);
        assert_eq!(t.row(5), (&[1.0, 1.0][..], 5.0));
        assert_eq!(t.grid_extents(), Some(vec![4, 4]));
        assert_eq!(t.to_array(&[4, 4]).unwrap(), img);
    }

    #[test]
    fn canonical_order_ignores_permutation_and_duplicates() {
        let rows = vec![
            vec![1.0, 0.0, 0.5],
            vec![0.0, 2.0, 0.1],
            vec![0.0, 1.0, 0.3],
            vec![1.0, 0.0, 0.5],
        ];
        let a = ObservationTable::from_rows(&rows, 2).unwrap().canonical();
        let mut rev = rows.clone();
        rev.reverse();
        let b = ObservationTable::from_rows(&rev, 2).unwrap().canonical();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert_eq!(a.row(0).0, &[0.0, 1.0]);
    }

    #[test]
    fn malformed_rows_rejected() {
        assert!(ObservationTable::from_rows(&[vec![0.0, 1.0]], 2).is_err());
        assert!(ObservationTable::from_rows(&[vec![0.0, f64::NAN, 1.0]], 2).is_err());
        assert!(ObservationTable::from_rows(&[], 2).is_err());
    }
}
