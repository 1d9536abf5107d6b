use std::collections::HashMap;
use std::sync::Arc;

use crate::array::DenseArray;
use crate::net::sine::SineStack;
use crate::net::NetworkSpec;
use crate::sampling::Points;
use crate::tape::{NodeId, Tape};

/// Batches whose per-dimension unique values span a grid at most this many
/// times larger than the batch are evaluated on the full grid and gathered.
const GRID_OVERHEAD: usize = 8;

pub(super) fn factor_prefix(d: usize) -> String {
    format!("f{d}.")
}

enum Layout {
    /// Full Cartesian grid of the unique values, optionally gathered.
    Grid {
        extents: Vec<usize>,
        gather: Option<Arc<[usize]>>,
    },
    /// Per-point contraction with per-dimension indices into the unique values.
    Points { index: Vec<Arc<[usize]>> },
}

/// Tucker network recorded on a tape. Each factor network is evaluated only on
/// the distinct values of its coordinate.
pub(super) struct TuckerGraph {
    core: NodeId,
    factors: Vec<SineStack>,
    layout: Layout,
    memo: HashMap<Vec<u8>, NodeId>,
}

fn unique_sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

impl TuckerGraph {
    pub(super) fn new(tape: &mut Tape, spec: &NetworkSpec, points: &Points) -> Self {
        let dim = spec.input_dim;
        let batch = points.len();
        let core = tape.param("core");
        let mut uniques = Vec::with_capacity(dim);
        let mut index = Vec::with_capacity(dim);
        let mut factors = Vec::with_capacity(dim);
        for d in 0..dim {
            let col = points.column(d);
            let uniq = unique_sorted(&col);
            let ix: Vec<usize> = col
                .iter()
                .map(|v| uniq.binary_search_by(|u| u.total_cmp(v)).unwrap())
                .collect();
            let input = tape.constant(DenseArray::row(uniq.clone()));
            factors.push(SineStack::with_input_dim(
                tape,
                spec,
                &factor_prefix(d),
                input,
                uniq.len(),
                1,
            ));
            uniques.push(uniq);
            index.push(ix);
        }

        let extents: Vec<usize> = uniques.iter().map(Vec::len).collect();
        let grid_size = extents
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .filter(|&n| n <= batch.saturating_mul(GRID_OVERHEAD));
        let layout = match grid_size {
            Some(_) => {
                let flat: Vec<usize> = (0..batch)
                    .map(|p| {
                        index
                            .iter()
                            .zip(&extents)
                            .fold(0, |acc, (ix, &e)| acc * e + ix[p])
                    })
                    .collect();
                let identity = flat.len() == extents.iter().product::<usize>()
                    && flat.iter().enumerate().all(|(i, &k)| i == k);
                Layout::Grid {
                    extents,
                    gather: (!identity).then(|| flat.into()),
                }
            }
            None => Layout::Points {
                index: index.into_iter().map(Arc::from).collect(),
            },
        };
        Self {
            core,
            factors,
            layout,
            memo: HashMap::new(),
        }
    }

    fn factor(&mut self, tape: &mut Tape, d: usize, order: u8) -> NodeId {
        let f = &mut self.factors[d];
        match order {
            0 => f.value(tape),
            1 => f.first(tape, 0),
            _ => f.second(tape, 0, 0),
        }
    }

    /// Contraction with factor `d` replaced by its `orders[d]`-th derivative.
    fn contract(&mut self, tape: &mut Tape, orders: Vec<u8>) -> NodeId {
        if let Some(&n) = self.memo.get(&orders) {
            return n;
        }
        let fs: Vec<NodeId> = orders
            .iter()
            .enumerate()
            .map(|(d, &o)| self.factor(tape, d, o))
            .collect();
        let out = match &self.layout {
            Layout::Grid { extents, gather } => {
                let mut t = self.core;
                for d in (0..fs.len()).rev() {
                    t = tape.mode_product(t, fs[d], d);
                }
                let total = extents.iter().product();
                let row = tape.reshape(t, vec![1, total]);
                match gather {
                    Some(ix) => tape.gather(row, ix.clone()),
                    None => row,
                }
            }
            Layout::Points { index } => tape.tucker_points(self.core, fs, index.clone()),
        };
        self.memo.insert(orders, out);
        out
    }

    pub(super) fn value(&mut self, tape: &mut Tape) -> NodeId {
        let n = self.factors.len();
        self.contract(tape, vec![0; n])
    }

    pub(super) fn first(&mut self, tape: &mut Tape, d: usize) -> NodeId {
        let mut orders = vec![0; self.factors.len()];
        orders[d] = 1;
        self.contract(tape, orders)
    }

    pub(super) fn second(&mut self, tape: &mut Tape, d: usize, e: usize) -> NodeId {
        let mut orders = vec![0; self.factors.len()];
        orders[d] += 1;
        orders[e] += 1;
        self.contract(tape, orders)
    }
}
