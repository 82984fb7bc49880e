//! Overlap between the neighbourhoods of distinct subclusters.
//!
//! Atoms of the truncated process at time `t` are grouped by their ancestor
//! at time `t - h`. The defect `sum_i |eta_i^eps| - |xi^eps|` is the volume
//! covered by several subclusters, counted with multiplicity minus one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::raster::rasterize;
use crate::engine::{run_replicates, EngineParams, ReducedOptions, ReducedSampler};
use crate::error::{domain, precondition, Result};
use crate::measure::{AtomicMeasure, ParticleSnapshot, Window};
use crate::stats::{linear_fit, EstimateWithError, LinearFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub t: f64,
    pub h: f64,
    pub eps: f64,
    pub defect: EstimateWithError,
    /// Mean number of subclusters in the truncated process.
    pub mean_clusters: f64,
    /// `eps^{2(d - 2/beta)} h^{1 - d/2}`.
    pub bound: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapLadder {
    pub rows: Vec<OverlapReport>,
    /// Fit of `log defect` against `log eps`; absent for fewer than two
    /// rows with positive defect.
    pub slope: Option<LinearFit>,
    /// Exponent the slope is compared with: `2(d - 2/beta)`.
    pub expected_slope: f64,
}

/// Defect of the kept atoms of `snap` at every `eps`, each on a voxel grid
/// of edge `eps / voxels_per_eps` shared by all subclusters. Also returns
/// the number of subclusters.
pub fn snapshot_defects(
    snap: &ParticleSnapshot,
    eps_ladder: &[f64],
    voxels_per_eps: f64,
) -> Result<(Vec<f64>, usize)> {
    let tags = snap
        .lineage
        .as_ref()
        .ok_or_else(|| precondition("lineage tagging is required"))?;
    let m = &snap.measure;
    let d = m.dim();
    let mut groups: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for i in 0..m.len() {
        if !snap.kept[i] {
            continue;
        }
        let g = groups.entry(tags[i]).or_default();
        g.0.extend_from_slice(m.position(i));
        g.1.push(m.mass(i));
    }
    let kept = snap.k_measure();
    if groups.len() < 2 {
        return Ok((vec![0.0; eps_ladder.len()], groups.len()));
    }
    let parts: Vec<AtomicMeasure> = groups
        .into_values()
        .map(|(c, w)| AtomicMeasure::from_parts(d, c, w))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(eps_ladder.len());
    for &eps in eps_ladder {
        let res = eps / voxels_per_eps;
        let w = Window::covering(&kept, eps, res)?.expect("nonempty");
        let union = rasterize(&kept, None, eps, &w, &[])?.voxels;
        let mut sum = 0u64;
        for p in &parts {
            sum += rasterize(p, None, eps, &w, &[])?.voxels;
        }
        out.push((sum - union) as f64 * res.powi(d as i32));
    }
    Ok((out, parts.len()))
}

/// Defect along an `eps` ladder, with every `eps` evaluated on the same
/// replicates. Requires `eps^2 <= h <= t`.
pub fn overlap_ladder(
    params: &EngineParams,
    initial: &AtomicMeasure,
    h: f64,
    eps_ladder: &[f64],
    reps: u64,
) -> Result<OverlapLadder> {
    if params.snapshot_times.len() != 1 {
        return Err(domain("overlap estimation uses exactly one snapshot time"));
    }
    let t = params.snapshot_times[0];
    if !(h > 0.0 && h <= t) {
        return Err(domain("need 0 < h <= t"));
    }
    if eps_ladder.is_empty() || eps_ladder.iter().any(|e| !(*e > 0.0 && e * e <= h)) {
        return Err(precondition("every eps must satisfy 0 < eps^2 <= h"));
    }
    if reps < 2 {
        return Err(domain("need at least two replicates"));
    }
    let law = params.offspring_law()?;
    let sampler = ReducedSampler::new(params, &law)?;
    let opts = ReducedOptions {
        tag_time: Some(t - h),
        ..Default::default()
    };
    let per_rep = run_replicates(reps, params.seed, |_, rng| {
        let snap = sampler.sample(initial, &opts, rng)?;
        let p = snap[0]
            .particles
            .as_ref()
            .ok_or_else(|| domain("positions are required"))?;
        snapshot_defects(p, eps_ladder, 8.0)
    })?;
    let beta = params.beta;
    let d = params.d as f64;
    let expected_slope = 2.0 * (d - 2.0 / beta);
    let mean_clusters = per_rep.iter().map(|r| r.1 as f64).sum::<f64>() / reps as f64;
    let mut rows = Vec::new();
    for (j, &eps) in eps_ladder.iter().enumerate() {
        let samples: Vec<f64> = per_rep.iter().map(|r| r.0[j]).collect();
        let defect = EstimateWithError::from_samples(&samples)?;
        let bound = eps.powf(expected_slope) * h.powf(1.0 - d / 2.0);
        rows.push(OverlapReport {
            t,
            h,
            eps,
            defect,
            mean_clusters,
            bound,
            ratio: defect.value / bound,
        });
    }
    let slope = loglog_slope(&rows);
    Ok(OverlapLadder {
        rows,
        slope,
        expected_slope,
    })
}

fn loglog_slope(rows: &[OverlapReport]) -> Option<LinearFit> {
    let pos: Vec<&OverlapReport> = rows
        .iter()
        .filter(|r| r.defect.value > 0.0 && r.defect.stderr > 0.0)
        .collect();
    if pos.len() < 2 {
        return None;
    }
    let x: Vec<f64> = pos.iter().map(|r| r.eps.ln()).collect();
    let y: Vec<f64> = pos.iter().map(|r| r.defect.value.ln()).collect();
    // delta method: var(log D) = (se/D)^2
    let w: Vec<f64> = pos
        .iter()
        .map(|r| (r.defect.value / r.defect.stderr).powi(2))
        .collect();
    linear_fit(&x, &y, Some(&w)).ok()
}

/// Defect at a single `eps`.
pub fn overlap_defect(
    params: &EngineParams,
    initial: &AtomicMeasure,
    h: f64,
    eps: f64,
    reps: u64,
) -> Result<OverlapReport> {
    Ok(overlap_ladder(params, initial, h, &[eps], reps)?
        .rows
        .remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_lineage_has_no_defect() {
        let params = EngineParams::new(0.8, 3, 1000, 0.5)
            .with_snapshots(vec![0.5])
            .with_seed(11);
        // one particle, tagged at time 0
        let init = AtomicMeasure::dirac(&[0.0; 3], 1e-3).unwrap();
        let r = overlap_ladder(&params, &init, 0.5, &[0.2, 0.1], 8).unwrap();
        assert!(r.rows.iter().all(|r| r.defect.value == 0.0));
        assert!(r.slope.is_none());
    }

    #[test]
    fn defect_of_two_overlapping_groups() {
        let m = AtomicMeasure::from_parts(3, vec![0.0, 0.0, 0.0, 0.1, 0.0, 0.0], vec![1.0, 1.0])
            .unwrap();
        let snap = ParticleSnapshot {
            time: 1.0,
            measure: m,
            kept: vec![true, true],
            lineage: Some(vec![0, 1]),
        };
        let eps = 0.1;
        let (d, n) = snapshot_defects(&snap, &[eps], 32.0).unwrap();
        assert_eq!(n, 2);
        // lens of two balls of radius eps at distance eps
        let lens = 5.0 / 12.0 * std::f64::consts::PI * eps.powi(3);
        assert!((d[0] / lens - 1.0).abs() < 0.03, "{} vs {}", d[0], lens);
        let merged = ParticleSnapshot {
            lineage: Some(vec![4, 4]),
            ..snap
        };
        assert_eq!(snapshot_defects(&merged, &[eps], 32.0).unwrap().0[0], 0.0);
    }

    #[test]
    fn eps_must_fit_the_age() {
        let params = EngineParams::new(0.8, 3, 1000, 1.0).with_snapshots(vec![1.0]);
        let init = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        assert!(overlap_ladder(&params, &init, 0.01, &[0.2], 4).is_err());
    }
}
