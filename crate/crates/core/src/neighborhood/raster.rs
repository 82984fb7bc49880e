//! Voxel rasterisation of `eps`-neighbourhoods of atom sets.
//!
//! A voxel counts when its centre lies within distance `< eps` of some
//! atom. Instead of testing voxels one at a time, boxes of voxel centres
//! are classified wholesale: a box is covered when some atom is closer than
//! `eps` to its farthest centre, empty when every atom is at least `eps`
//! from its nearest centre, and split otherwise. The result is identical to
//! the voxel-by-voxel count.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hash::for_each_offset;
use super::TestFunction;
use crate::error::{domain, precondition, Result};
use crate::measure::{AtomicMeasure, Window};

/// Largest supported dimension.
pub const MAX_DIM: usize = 8;

/// Coverage of a window by an `eps`-neighbourhood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub eps: f64,
    pub resolution: f64,
    pub voxels: u64,
    /// `voxels * resolution^d`.
    pub volume: f64,
    /// `int 1{dist(x, supp) < eps} f(x) dx` per test function, by the
    /// voxel-centre rule.
    pub integrals: Vec<f64>,
    /// Voxels classified individually, all near the neighbourhood boundary.
    pub boundary_voxels: u64,
    /// `boundary_voxels * resolution^d`, an estimate of the rasterisation error.
    pub error_bound: f64,
    /// Whether some `eps`-ball leaves the window.
    pub clipped: bool,
}

/// Finest resolution relative to `eps` accepted by [`rasterize`].
pub const MIN_VOXELS_PER_EPS: f64 = 8.0;

/// Rasterises the `eps`-neighbourhood of the atoms of `m` selected by
/// `select` (all atoms when `None`) on `window`.
pub fn rasterize(
    m: &AtomicMeasure,
    select: Option<&[bool]>,
    eps: f64,
    window: &Window,
    fns: &[TestFunction],
) -> Result<Coverage> {
    let d = m.dim();
    if window.dim() != d {
        return Err(domain("window and measure dimensions differ"));
    }
    if d > MAX_DIM {
        return Err(domain(format!("rasterisation supports d <= {MAX_DIM}")));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(domain("eps must be positive"));
    }
    let res = window.resolution();
    if res > eps / MIN_VOXELS_PER_EPS * (1.0 + 1e-12) {
        return Err(precondition(format!(
            "resolution {res} is coarser than eps/{MIN_VOXELS_PER_EPS} = {}",
            eps / MIN_VOXELS_PER_EPS
        )));
    }
    if let Some(s) = select {
        if s.len() != m.len() {
            return Err(domain("selection mask length differs from atom count"));
        }
    }
    for f in fns {
        f.check_dim(d)?;
    }
    let shape: Vec<i64> = window.shape().iter().map(|&s| s as i64).collect();
    let lower = window.lower();
    let upper_eff: Vec<f64> = lower
        .iter()
        .zip(&shape)
        .map(|(l, &s)| l + s as f64 * res)
        .collect();
    let block = (eps / res).ceil() as i64;
    let block_len = block as f64 * res;
    let nblocks: Vec<i64> = shape.iter().map(|s| (s + block - 1) / block).collect();

    let mut buckets: HashMap<Box<[i64]>, Vec<u32>> = HashMap::new();
    let mut clipped = false;
    let mut key = vec![0i64; d];
    for i in 0..m.len() {
        if select.is_some_and(|s| !s[i]) {
            continue;
        }
        let x = m.position(i);
        for k in 0..d {
            key[k] = ((x[k] - lower[k]) / block_len).floor() as i64;
            clipped |= x[k] - eps < lower[k] || x[k] + eps > upper_eff[k];
        }
        match buckets.get_mut(&key[..]) {
            Some(v) => v.push(i as u32),
            None => {
                buckets.insert(key.clone().into_boxed_slice(), vec![i as u32]);
            }
        }
    }
    let mut candidates: BTreeSet<Box<[i64]>> = BTreeSet::new();
    for k in buckets.keys() {
        for_each_offset(d, 1, |off| {
            let nb: Vec<i64> = k.iter().zip(off).map(|(a, b)| a + b).collect();
            if nb.iter().zip(&nblocks).all(|(v, n)| *v >= 0 && v < n) {
                candidates.insert(nb.into_boxed_slice());
            }
        });
    }
    let candidates: Vec<Box<[i64]>> = candidates.into_iter().collect();
    let ctx = Ctx {
        m,
        d,
        eps2: eps * eps,
        res,
        lower,
        fns,
    };
    let parts: Vec<Acc> = candidates
        .par_iter()
        .map(|blk| {
            // own bucket first: its atoms are the likeliest to cover a box
            let mut buf: Vec<u32> = buckets.get(&blk[..]).cloned().unwrap_or_default();
            for_each_offset(d, 1, |off| {
                if off.iter().all(|o| *o == 0) {
                    return;
                }
                let nb: Vec<i64> = blk.iter().zip(off).map(|(a, b)| a + b).collect();
                if let Some(v) = buckets.get(&nb[..]) {
                    buf.extend_from_slice(v);
                }
            });
            let mut lo = [0i64; MAX_DIM];
            let mut hi = [0i64; MAX_DIM];
            for k in 0..d {
                lo[k] = blk[k] * block;
                hi[k] = ((blk[k] + 1) * block).min(shape[k]);
            }
            let mut acc = Acc::new(fns.len());
            let n = buf.len();
            ctx.visit(lo, hi, 0, n, &mut buf, &mut acc);
            acc
        })
        .collect();
    let mut total = Acc::new(fns.len());
    for p in &parts {
        total.voxels += p.voxels;
        total.boundary += p.boundary;
        for (a, b) in total.sums.iter_mut().zip(&p.sums) {
            *a += b;
        }
    }
    let cell = res.powi(d as i32);
    Ok(Coverage {
        eps,
        resolution: res,
        voxels: total.voxels,
        volume: total.voxels as f64 * cell,
        integrals: total.sums.iter().map(|s| s * cell).collect(),
        boundary_voxels: total.boundary,
        error_bound: total.boundary as f64 * cell,
        clipped,
    })
}

struct Acc {
    voxels: u64,
    boundary: u64,
    sums: Vec<f64>,
}

impl Acc {
    fn new(n: usize) -> Self {
        Self {
            voxels: 0,
            boundary: 0,
            sums: vec![0.0; n],
        }
    }
}

struct Ctx<'a> {
    m: &'a AtomicMeasure,
    d: usize,
    eps2: f64,
    res: f64,
    lower: &'a [f64],
    fns: &'a [TestFunction],
}

impl Ctx<'_> {
    fn center(&self, k: usize, i: i64) -> f64 {
        self.lower[k] + (i as f64 + 0.5) * self.res
    }

    /// Classifies the box of voxels `lo..hi` against candidates
    /// `buf[start..end]`, using the tail of `buf` as scratch.
    fn visit(
        &self,
        lo: [i64; MAX_DIM],
        hi: [i64; MAX_DIM],
        start: usize,
        end: usize,
        buf: &mut Vec<u32>,
        acc: &mut Acc,
    ) {
        let d = self.d;
        let mut clo = [0.0; MAX_DIM];
        let mut chi = [0.0; MAX_DIM];
        for k in 0..d {
            clo[k] = self.center(k, lo[k]);
            chi[k] = self.center(k, hi[k] - 1);
        }
        let single = (0..d).all(|k| hi[k] - lo[k] == 1);
        let mark = buf.len();
        let mut covered = false;
        for idx in start..end {
            let a = buf[idx];
            let x = self.m.position(a as usize);
            let mut near = 0.0;
            let mut far = 0.0;
            for k in 0..d {
                let below = clo[k] - x[k];
                let above = x[k] - chi[k];
                let gap = below.max(above).max(0.0);
                near += gap * gap;
                let reach = below.abs().max(above.abs());
                far += reach * reach;
            }
            if far < self.eps2 {
                covered = true;
                break;
            }
            if near < self.eps2 {
                buf.push(a);
            }
        }
        if covered {
            buf.truncate(mark);
            self.add_box(&lo, &hi, acc);
            acc.boundary += u64::from(single);
            return;
        }
        let new_end = buf.len();
        if new_end == mark {
            acc.boundary += u64::from(single);
            return;
        }
        // a single voxel is decided above: near == far for a point
        let mut axis = 0;
        for k in 1..d {
            if hi[k] - lo[k] > hi[axis] - lo[axis] {
                axis = k;
            }
        }
        let mid = (lo[axis] + hi[axis]) / 2;
        let mut h1 = hi;
        h1[axis] = mid;
        let mut l2 = lo;
        l2[axis] = mid;
        self.visit(lo, h1, mark, new_end, buf, acc);
        self.visit(l2, hi, mark, new_end, buf, acc);
        buf.truncate(mark);
    }

    fn add_box(&self, lo: &[i64; MAX_DIM], hi: &[i64; MAX_DIM], acc: &mut Acc) {
        let d = self.d;
        acc.voxels += (0..d).map(|k| (hi[k] - lo[k]) as u64).product::<u64>();
        for (j, f) in self.fns.iter().enumerate() {
            let mut prod = 1.0;
            for k in 0..d {
                let mut s = 0.0;
                for i in lo[k]..hi[k] {
                    s += f.axis(k, self.center(k, i));
                }
                prod *= s;
                if prod == 0.0 {
                    break;
                }
            }
            acc.sums[j] += prod;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::dist2;
    use rand::RngExt;

    fn brute(m: &AtomicMeasure, eps: f64, w: &Window, f: &TestFunction) -> (u64, f64) {
        let shape = w.shape();
        let res = w.resolution();
        let mut count = 0;
        let mut sum = 0.0;
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                for k in 0..shape[2] {
                    let c = [
                        w.lower()[0] + (i as f64 + 0.5) * res,
                        w.lower()[1] + (j as f64 + 0.5) * res,
                        w.lower()[2] + (k as f64 + 0.5) * res,
                    ];
                    if (0..m.len()).any(|a| dist2(m.position(a), &c) < eps * eps) {
                        count += 1;
                        sum += f.eval(&c);
                    }
                }
            }
        }
        (count, sum * res.powi(3))
    }

    #[test]
    fn matches_voxel_brute_force() {
        let mut rng = crate::rng::replicate_rng(9, 0);
        let mut m = AtomicMeasure::new(3).unwrap();
        for _ in 0..40 {
            let p: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 0.8 - 0.4).collect();
            m.push(&p, 0.1).unwrap();
        }
        let w = Window::cube(3, 0.5, 0.0125).unwrap();
        let f = TestFunction::Bump {
            center: vec![0.1, 0.0, -0.1],
            width: 0.4,
        };
        let cov = rasterize(&m, None, 0.1, &w, &[TestFunction::One, f.clone()]).unwrap();
        let (count, sum) = brute(&m, 0.1, &w, &f);
        assert_eq!(cov.voxels, count);
        assert!((cov.integrals[0] - cov.volume).abs() < 1e-12);
        assert!((cov.integrals[1] - sum).abs() < 1e-10 * sum.abs().max(1.0));
    }

    #[test]
    fn single_ball_volume() {
        let m = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        let eps = 0.2;
        let w = Window::covering(&m, eps, eps / 16.0).unwrap().unwrap();
        let cov = rasterize(&m, None, eps, &w, &[]).unwrap();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * eps.powi(3);
        assert!((cov.volume / exact - 1.0).abs() < 0.02);
        assert!(!cov.clipped);
    }

    #[test]
    fn coarse_resolution_is_rejected() {
        let m = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        let w = Window::cube(3, 1.0, 0.05).unwrap();
        assert!(rasterize(&m, None, 0.2, &w, &[]).is_err());
    }

    #[test]
    fn clipping_is_flagged() {
        let m = AtomicMeasure::dirac(&[0.95, 0.0, 0.0], 1.0).unwrap();
        let w = Window::cube(3, 1.0, 0.01).unwrap();
        assert!(rasterize(&m, None, 0.1, &w, &[]).unwrap().clipped);
    }
}
