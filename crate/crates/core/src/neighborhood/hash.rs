//! Uniform spatial hash over atom positions.

use std::collections::HashMap;

use crate::measure::AtomicMeasure;

/// Atoms bucketed by the cube of edge `cell` containing them, with cubes
/// aligned to `origin`.
#[derive(Debug, Clone)]
pub struct SpatialHash<'a> {
    measure: &'a AtomicMeasure,
    origin: Vec<f64>,
    cell: f64,
    cells: HashMap<Box<[i64]>, Vec<u32>>,
}

impl<'a> SpatialHash<'a> {
    pub fn new(measure: &'a AtomicMeasure, cell: f64, origin: &[f64]) -> Self {
        let mut cells: HashMap<Box<[i64]>, Vec<u32>> = HashMap::new();
        let mut key = vec![0i64; measure.dim()];
        for i in 0..measure.len() {
            cell_key(measure.position(i), origin, cell, &mut key);
            match cells.get_mut(&key[..]) {
                Some(v) => v.push(i as u32),
                None => {
                    cells.insert(key.clone().into_boxed_slice(), vec![i as u32]);
                }
            }
        }
        Self {
            measure,
            origin: origin.to_vec(),
            cell,
            cells,
        }
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }

    pub fn occupied(&self) -> impl Iterator<Item = (&[i64], &[u32])> {
        self.cells.iter().map(|(k, v)| (&k[..], &v[..]))
    }

    pub fn bucket(&self, key: &[i64]) -> &[u32] {
        self.cells.get(key).map_or(&[], |v| &v[..])
    }

    pub fn key_of(&self, x: &[f64]) -> Vec<i64> {
        let mut key = vec![0; x.len()];
        cell_key(x, &self.origin, self.cell, &mut key);
        key
    }

    /// Calls `visit` for every atom in cells whose index differs from
    /// `center` by at most `reach` in every coordinate.
    pub fn for_each_near<F: FnMut(u32)>(&self, center: &[i64], reach: i64, mut visit: F) {
        for_each_offset(center.len(), reach, |off| {
            let key: Vec<i64> = center.iter().zip(off).map(|(a, b)| a + b).collect();
            for &i in self.bucket(&key) {
                visit(i);
            }
        });
    }

    /// Atoms within distance `r` (strictly) of `x`, for `r <= cell`.
    pub fn within(&self, x: &[f64], r: f64) -> Vec<u32> {
        let key = self.key_of(x);
        let reach = (r / self.cell).ceil().max(1.0) as i64;
        let mut out = Vec::new();
        self.for_each_near(&key, reach, |i| {
            if crate::measure::dist2(self.measure.position(i as usize), x) < r * r {
                out.push(i);
            }
        });
        out.sort_unstable();
        out
    }

    /// Distance from atom `i` to its nearest other atom, searching outwards
    /// ring by ring; `None` for a single atom.
    pub fn nearest_other(&self, i: usize) -> Option<f64> {
        if self.measure.len() < 2 {
            return None;
        }
        let x = self.measure.position(i);
        let key = self.key_of(x);
        let mut best = f64::INFINITY;
        let mut reach = 0i64;
        loop {
            // visit the shell at Chebyshev distance `reach`
            for_each_offset(x.len(), reach, |off| {
                if off.iter().map(|v| v.abs()).max().unwrap_or(0) != reach {
                    return;
                }
                let k: Vec<i64> = key.iter().zip(off).map(|(a, b)| a + b).collect();
                for &j in self.bucket(&k) {
                    if j as usize != i {
                        best =
                            best.min(crate::measure::dist2(self.measure.position(j as usize), x));
                    }
                }
            });
            // every unvisited atom is at least `reach * cell` away
            if best.sqrt() <= reach as f64 * self.cell {
                return Some(best.sqrt());
            }
            reach += 1;
            if reach > 6 {
                // isolated atom: a linear scan is cheaper than wide shells
                let all = (0..self.measure.len())
                    .filter(|&j| j != i)
                    .map(|j| crate::measure::dist2(self.measure.position(j), x))
                    .fold(f64::INFINITY, f64::min);
                return Some(all.sqrt());
            }
        }
    }
}

fn cell_key(x: &[f64], origin: &[f64], cell: f64, key: &mut [i64]) {
    for ((k, v), o) in key.iter_mut().zip(x).zip(origin) {
        *k = ((v - o) / cell).floor() as i64;
    }
}

/// Calls `f` with every offset vector in `{-reach..=reach}^d`.
pub(crate) fn for_each_offset<F: FnMut(&[i64])>(d: usize, reach: i64, mut f: F) {
    let mut off = vec![-reach; d];
    loop {
        f(&off);
        let mut k = 0;
        loop {
            if k == d {
                return;
            }
            off[k] += 1;
            if off[k] <= reach {
                break;
            }
            off[k] = -reach;
            k += 1;
        }
    }
}

/// Median nearest-neighbour distance, computed on at most `max_queries`
/// atoms taken at a regular stride.
pub fn median_spacing(m: &AtomicMeasure, max_queries: usize) -> Option<f64> {
    let n = m.len();
    if n < 2 {
        return None;
    }
    let (lo, hi) = m.bounding_box()?;
    let extent: f64 = lo
        .iter()
        .zip(&hi)
        .map(|(a, b)| (b - a).max(1e-12))
        .product();
    let cell = 0.5 * (extent / n as f64).powf(1.0 / m.dim() as f64);
    let hash = SpatialHash::new(m, cell.max(1e-12), &lo);
    let stride = n.div_ceil(max_queries.max(1));
    let mut d: Vec<f64> = (0..n)
        .step_by(stride)
        .filter_map(|i| hash.nearest_other(i))
        .collect();
    d.sort_by(f64::total_cmp);
    Some(d[d.len() / 2])
}
