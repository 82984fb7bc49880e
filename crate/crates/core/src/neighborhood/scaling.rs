//! Scaled neighbourhood measures `eps^{2/beta - d} xi^eps f / xi f` along an
//! `eps` ladder.

use serde::{Deserialize, Serialize};

use super::hash::median_spacing;
use super::raster::rasterize;
use super::TestFunction;
use crate::engine::{run_replicates, EngineParams, ReducedOptions, ReducedSampler};
use crate::error::{domain, precondition, Result};
use crate::measure::{AtomicMeasure, ParticleSnapshot, Window};
use crate::stats::RunningStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Full,
    Truncated,
}

/// Range of `eps` on which a particle configuration resolves its
/// neighbourhood structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityBand {
    /// Median nearest-neighbour distance.
    pub spacing: f64,
    /// Longest side of the bounding box.
    pub diameter: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ValidityBand {
    pub fn contains(&self, eps: f64) -> bool {
        eps >= self.lower && eps <= self.upper
    }
}

/// `[4 * median spacing, diameter / 4]`, or `None` with fewer than two atoms.
pub fn validity_band(m: &AtomicMeasure, max_queries: usize) -> Option<ValidityBand> {
    let spacing = median_spacing(m, max_queries)?;
    let (lo, hi) = m.bounding_box()?;
    let diameter = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
    Some(ValidityBand {
        spacing,
        diameter,
        lower: 4.0 * spacing,
        upper: diameter / 4.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingOptions {
    /// Voxels per `eps` along each axis; at least 8.
    pub voxels_per_eps: f64,
    /// Drop ladder values outside the validity band.
    pub enforce_band: bool,
    /// Atoms sampled for the spacing estimate.
    pub spacing_queries: usize,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        Self {
            voxels_per_eps: 8.0,
            enforce_band: true,
            spacing_queries: 2000,
        }
    }
}

/// One `(eps, f)` entry of a curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub eps: f64,
    pub volume: f64,
    pub f_id: usize,
    /// `xi^eps f`.
    pub raw: f64,
    /// `xi f`.
    pub mass: f64,
    pub scaled_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub component: Component,
    pub total_mass: f64,
    pub atoms: usize,
    pub band: Option<ValidityBand>,
    /// Ladder values dropped for lying outside the band.
    pub excluded: Vec<f64>,
    /// Rows by decreasing `eps`; test functions with `xi f = 0` are omitted.
    pub rows: Vec<ScalingRow>,
    pub clipped: bool,
    /// Largest relative rasterisation error bound over the ladder.
    pub max_relative_error: f64,
}

/// Curves of both components of one snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub time: f64,
    /// Set when the full process is extinct; both curves are then absent.
    pub extinct: bool,
    pub full: Option<ScalingCurve>,
    /// Absent when the truncated process is extinct.
    pub truncated: Option<ScalingCurve>,
}

fn check_ladder(eps_ladder: &[f64]) -> Result<()> {
    if eps_ladder.is_empty() || eps_ladder.iter().any(|e| !(*e > 0.0)) {
        return Err(domain("eps ladder must be nonempty and positive"));
    }
    if eps_ladder.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(domain("eps ladder must be strictly decreasing"));
    }
    Ok(())
}

fn curve(
    m: &AtomicMeasure,
    component: Component,
    beta: f64,
    eps_ladder: &[f64],
    fns: &[TestFunction],
    opts: &ScalingOptions,
) -> Result<ScalingCurve> {
    let d = m.dim();
    let band = validity_band(m, opts.spacing_queries);
    let masses: Vec<f64> = fns.iter().map(|f| f.integrate(m)).collect();
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    let mut clipped = false;
    let mut max_rel = 0.0f64;
    let expo = 2.0 / beta - d as f64;
    for &eps in eps_ladder {
        // a lone atom has no resolvable structure at any scale
        let inside = band.is_some_and(|b| b.contains(eps));
        if opts.enforce_band && !inside {
            excluded.push(eps);
            continue;
        }
        let res = eps / opts.voxels_per_eps;
        let Some(w) = Window::covering(m, eps, res)? else {
            continue;
        };
        let cov = rasterize(m, None, eps, &w, fns)?;
        clipped |= cov.clipped;
        if cov.volume > 0.0 {
            max_rel = max_rel.max(cov.error_bound / cov.volume);
        }
        let scale = eps.powf(expo);
        for (j, (&raw, &mass)) in cov.integrals.iter().zip(&masses).enumerate() {
            if mass > 0.0 {
                rows.push(ScalingRow {
                    eps,
                    volume: cov.volume,
                    f_id: j,
                    raw,
                    mass,
                    scaled_ratio: scale * raw / mass,
                });
            }
        }
    }
    Ok(ScalingCurve {
        component,
        total_mass: m.total_mass(),
        atoms: m.len(),
        band,
        excluded,
        rows,
        clipped,
        max_relative_error: max_rel,
    })
}

/// Scaling curves of the full and truncated components of `snapshot`.
pub fn scaling_curve(
    snapshot: &ParticleSnapshot,
    beta: f64,
    eps_ladder: &[f64],
    fns: &[TestFunction],
    opts: &ScalingOptions,
) -> Result<ScalingReport> {
    check_ladder(eps_ladder)?;
    if opts.voxels_per_eps < super::MIN_VOXELS_PER_EPS {
        return Err(precondition("voxels_per_eps must be at least 8"));
    }
    if snapshot.measure.is_empty() {
        return Ok(ScalingReport {
            time: snapshot.time,
            extinct: true,
            full: None,
            truncated: None,
        });
    }
    let full = curve(
        &snapshot.measure,
        Component::Full,
        beta,
        eps_ladder,
        fns,
        opts,
    )?;
    let truncated = if snapshot.all_kept() {
        Some(ScalingCurve {
            component: Component::Truncated,
            ..full.clone()
        })
    } else {
        let k = snapshot.k_measure();
        if k.is_empty() {
            None
        } else {
            Some(curve(
                &k,
                Component::Truncated,
                beta,
                eps_ladder,
                fns,
                opts,
            )?)
        }
    };
    Ok(ScalingReport {
        time: snapshot.time,
        extinct: false,
        full: Some(full),
        truncated,
    })
}

/// Replicate average of the scaled ratio at one `(eps, f)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRow {
    pub eps: f64,
    pub f_id: usize,
    pub mean_ratio: f64,
    pub stderr: f64,
    /// Replicates contributing (surviving, with `eps` inside their band).
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCurve {
    pub component: Component,
    pub rows: Vec<EnsembleRow>,
}

impl EnsembleCurve {
    /// `max / min` of the mean scaled ratio of `f_id` over the top decade of
    /// the ladder, with the ratio of the largest to the smallest `eps` used.
    /// Rows backed by fewer than `min_count` replicates are ignored.
    pub fn flatness(&self, f_id: usize, min_count: u64) -> Option<(f64, f64)> {
        let top = self
            .rows
            .iter()
            .filter(|r| r.f_id == f_id && r.count >= min_count)
            .map(|r| r.eps)
            .fold(f64::NAN, f64::max);
        self.decade_flatness(f_id, min_count, top)
    }

    /// As [`flatness`](Self::flatness) over the decade `[top/10, top]`.
    pub fn decade_flatness(&self, f_id: usize, min_count: u64, top: f64) -> Option<(f64, f64)> {
        let decade: Vec<&EnsembleRow> = self
            .rows
            .iter()
            .filter(|r| r.f_id == f_id && r.count >= min_count)
            .filter(|r| r.eps <= top * (1.0 + 1e-12) && r.eps >= top / 10.0 * (1.0 - 1e-12))
            .collect();
        if decade.len() < 2 {
            return None;
        }
        let hi = decade.iter().map(|r| r.mean_ratio).fold(f64::MIN, f64::max);
        let lo = decade.iter().map(|r| r.mean_ratio).fold(f64::MAX, f64::min);
        let first = decade.iter().map(|r| r.eps).fold(f64::MIN, f64::max);
        let last = decade.iter().map(|r| r.eps).fold(f64::MAX, f64::min);
        Some((hi / lo, first / last))
    }

    /// Smallest `max / min` over every full decade `[top/10, top]` of the
    /// ladder, with the `top` that attains it.
    pub fn flattest_decade(&self, f_id: usize, min_count: u64) -> Option<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.f_id == f_id && r.count >= min_count)
            .filter_map(|r| {
                let (ratio, span) = self.decade_flatness(f_id, min_count, r.eps)?;
                (span >= 10.0 * (1.0 - 1e-9)).then_some((ratio, r.eps))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleScaling {
    pub time: f64,
    pub reps: u64,
    pub surviving: u64,
    /// Replicates on which the two components coincide.
    pub coincident: u64,
    /// Replicates where every atom is kept but the curves differ.
    pub coupling_violations: u64,
    pub full: EnsembleCurve,
    pub truncated: EnsembleCurve,
    pub bands: Vec<ValidityBand>,
}

fn accumulate(stats: &mut [RunningStats], ladder: &[f64], nf: usize, c: &ScalingCurve) {
    for r in &c.rows {
        let i = ladder.iter().position(|e| *e == r.eps).unwrap();
        stats[i * nf + r.f_id].push(r.scaled_ratio);
    }
}

fn ensemble_curve(
    component: Component,
    ladder: &[f64],
    nf: usize,
    stats: &[RunningStats],
) -> EnsembleCurve {
    let mut rows = Vec::new();
    for (i, &eps) in ladder.iter().enumerate() {
        for f in 0..nf {
            let s = &stats[i * nf + f];
            if s.count() == 0 {
                continue;
            }
            let stderr = if s.count() > 1 {
                (s.variance() / s.count() as f64).sqrt()
            } else {
                f64::INFINITY
            };
            rows.push(EnsembleRow {
                eps,
                f_id: f,
                mean_ratio: s.mean(),
                stderr,
                count: s.count(),
            });
        }
    }
    EnsembleCurve { component, rows }
}

/// Averages per-replicate scaling curves of the process started from
/// `initial` and observed at `params.snapshot_times[0]`, sampled with the
/// reduced-tree sampler.
pub fn ensemble_scaling(
    params: &EngineParams,
    initial: &AtomicMeasure,
    eps_ladder: &[f64],
    fns: &[TestFunction],
    reps: u64,
    opts: &ScalingOptions,
) -> Result<EnsembleScaling> {
    check_ladder(eps_ladder)?;
    if params.snapshot_times.len() != 1 {
        return Err(domain("ensemble scaling uses exactly one snapshot time"));
    }
    let law = params.offspring_law()?;
    let sampler = ReducedSampler::new(params, &law)?;
    let reports = run_replicates(reps, params.seed, |_, rng| {
        let snap = sampler.sample(initial, &ReducedOptions::default(), rng)?;
        let particles = snap[0]
            .particles
            .as_ref()
            .ok_or_else(|| domain("positions are required"))?;
        scaling_curve(particles, params.beta, eps_ladder, fns, opts)
    })?;
    let nf = fns.len();
    let mut full = vec![RunningStats::new(); eps_ladder.len() * nf];
    let mut trunc = full.clone();
    let mut surviving = 0;
    let mut coincident = 0;
    let mut violations = 0;
    let mut bands = Vec::new();
    for r in &reports {
        let Some(f) = &r.full else { continue };
        surviving += 1;
        accumulate(&mut full, eps_ladder, nf, f);
        if let Some(b) = f.band {
            bands.push(b);
        }
        if let Some(k) = &r.truncated {
            accumulate(&mut trunc, eps_ladder, nf, k);
            if k.rows == f.rows {
                coincident += 1;
            } else if k.atoms == f.atoms {
                violations += 1;
            }
        }
    }
    Ok(EnsembleScaling {
        time: params.snapshot_times[0],
        reps,
        surviving,
        coincident,
        coupling_violations: violations,
        full: ensemble_curve(Component::Full, eps_ladder, nf, &full),
        truncated: ensemble_curve(Component::Truncated, eps_ladder, nf, &trunc),
        bands,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice(n: usize, step: f64) -> AtomicMeasure {
        let mut m = AtomicMeasure::new(3).unwrap();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    m.push(&[i as f64 * step, j as f64 * step, k as f64 * step], 0.01)
                        .unwrap();
                }
            }
        }
        m
    }

    #[test]
    fn band_and_exponent() {
        let m = lattice(12, 0.1);
        let b = validity_band(&m, 500).unwrap();
        assert!((b.spacing - 0.1).abs() < 1e-9);
        assert!((b.lower - 0.4).abs() < 1e-9);
        assert!((b.upper - 1.1 / 4.0).abs() < 1e-9);
        // the band is empty here, so every value is excluded
        let snap = ParticleSnapshot {
            time: 1.0,
            kept: vec![true; m.len()],
            measure: m,
            lineage: None,
        };
        let r = scaling_curve(
            &snap,
            0.8,
            &[0.3, 0.2],
            &[TestFunction::One],
            &ScalingOptions::default(),
        )
        .unwrap();
        assert_eq!(r.full.as_ref().unwrap().excluded, vec![0.3, 0.2]);
    }

    #[test]
    fn ratio_uses_the_scaling_exponent() {
        let m = lattice(4, 1.0);
        let snap = ParticleSnapshot {
            time: 1.0,
            kept: vec![true; m.len()],
            measure: m,
            lineage: None,
        };
        let opts = ScalingOptions {
            enforce_band: false,
            ..Default::default()
        };
        let r = scaling_curve(&snap, 0.8, &[0.2], &[TestFunction::One], &opts).unwrap();
        let row = r.full.as_ref().unwrap().rows[0];
        // 64 disjoint balls, total mass 0.64
        assert!((row.scaled_ratio - 0.2f64.powf(-0.5) * row.volume / 0.64).abs() < 1e-12);
        let ball = 4.0 / 3.0 * std::f64::consts::PI * 0.008;
        assert!((row.volume / (64.0 * ball) - 1.0).abs() < 0.05);
        assert_eq!(r.truncated.unwrap().rows, r.full.unwrap().rows);
    }

    #[test]
    fn extinct_snapshot_is_flagged() {
        let snap = ParticleSnapshot {
            time: 1.0,
            measure: AtomicMeasure::new(3).unwrap(),
            kept: vec![],
            lineage: None,
        };
        let r = scaling_curve(
            &snap,
            0.8,
            &[0.1],
            &[TestFunction::One],
            &ScalingOptions::default(),
        )
        .unwrap();
        assert!(r.extinct && r.full.is_none());
    }

    #[test]
    fn increasing_ladder_is_rejected() {
        let snap = ParticleSnapshot {
            time: 1.0,
            measure: lattice(2, 1.0),
            kept: vec![true; 8],
            lineage: None,
        };
        assert!(scaling_curve(&snap, 0.8, &[0.1, 0.2], &[], &ScalingOptions::default()).is_err());
    }

    #[test]
    fn ensemble_components_coincide_without_truncation() {
        let params = EngineParams::new(0.8, 3, 2000, 0.5)
            .with_snapshots(vec![0.5])
            .with_seed(3);
        let init = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        let e = ensemble_scaling(
            &params,
            &init,
            &[0.2, 0.1],
            &[TestFunction::One],
            6,
            &ScalingOptions {
                enforce_band: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(e.coincident, e.surviving);
        assert_eq!(e.full.rows, e.truncated.rows);
        assert!(e.full.rows.iter().all(|r| r.mean_ratio > 0.0));
    }

    #[test]
    fn flattest_decade_needs_a_full_decade() {
        // ratios 8, 4, 2, 2, 2.2 on a half-decade ladder
        let rows = [(1.0, 8.0), (0.316, 4.0), (0.1, 2.0), (0.0316, 2.0), (0.01, 2.2)]
            .iter()
            .map(|&(eps, m)| EnsembleRow { eps, f_id: 0, mean_ratio: m, stderr: 0.1, count: 60 })
            .collect();
        let c = EnsembleCurve { component: Component::Full, rows };
        let (ratio, top) = c.flattest_decade(0, 50).unwrap();
        assert!((ratio - 1.1).abs() < 1e-12);
        assert_eq!(top, 0.1);
        assert!(c.flattest_decade(0, 61).is_none());
        assert!(c.flattest_decade(1, 50).is_none());
    }
}
