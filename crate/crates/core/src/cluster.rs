//! Clusters of a common ancestor, their normaliser `a_K(h)`, the Cox
//! cluster representation and multiple hitting by distinct clusters.
//!
//! At particle level an `h`-cluster rooted at `x` is the population at age
//! `h` descended from one particle of mass `1/N` at `x`, conditioned on
//! survival. Its expected mass is `a_N(h) = 1/(N w(h))` up to `O(w)`, where
//! `w(h)` is the survival probability of one particle.

use std::collections::BTreeMap;

use rand::RngExt;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::engine::oracles::{cluster_normalizer, particle_cluster_normalizer, particle_survival};
use crate::engine::{
    Focus,
    run_replicates, simulate_coupled_with_law, EngineParams, Leaves, ReducedOptions, ReducedSampler,
};
use crate::error::{domain, precondition, Error, Result};
use crate::measure::{AtomicMeasure, ParticleSnapshot, Window};
use crate::neighborhood::{rasterize, TestFunction};
use crate::offspring::OffspringLaw;
use crate::rng::{derive_seed, SimRng};
use crate::stats::{
    ks_two_sample, linear_fit, EstimateWithError, KsResult, LinearFit, RunningStats,
};

/// One cluster at age `age` rooted at `root`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSample {
    pub root: Vec<f64>,
    pub age: f64,
    pub measure: AtomicMeasure,
    /// Atoms belonging to the truncated process.
    pub kept: Vec<bool>,
    /// Whether some truncated event removed mass from the cluster.
    pub truncated: bool,
    /// Runs needed, including the accepted one.
    pub attempts: u64,
    /// Bound on the hitting-probability change caused by focused pruning.
    pub pruned_bound: f64,
}

impl ClusterSample {
    pub fn snapshot(&self) -> ParticleSnapshot {
        ParticleSnapshot {
            time: self.age,
            measure: self.measure.clone(),
            kept: self.kept.clone(),
            lineage: None,
        }
    }
}

/// Parameters for runs over `[0, h]` with a single snapshot at `h`.
fn aged(params: &EngineParams, h: f64) -> EngineParams {
    EngineParams {
        horizon: h,
        snapshot_times: vec![h],
        ..params.clone()
    }
}

/// Acceptance probability of [`sample_cluster`].
pub fn cluster_acceptance_rate(h: f64, params: &EngineParams) -> f64 {
    particle_survival(h, params.beta, params.mass_scale)
}

/// Samples a cluster by running the direct engine from one particle at `x`
/// until a run survives to age `h`.
pub fn sample_cluster(
    x: &[f64],
    h: f64,
    params: &EngineParams,
    law: &OffspringLaw,
    max_attempts: u64,
    rng: &mut SimRng,
) -> Result<ClusterSample> {
    if !(h > 0.0) {
        return Err(domain("cluster age must be positive"));
    }
    let p = aged(params, h);
    let root = AtomicMeasure::dirac(x, p.particle_mass())?;
    for attempt in 1..=max_attempts {
        let run = simulate_coupled_with_law(&p, law, &root, rng)?;
        let snap = &run.snapshots[0];
        if snap.full_count > 0 {
            let parts = snap
                .particles
                .clone()
                .ok_or_else(|| domain("cluster sampling needs positions"))?;
            return Ok(ClusterSample {
                root: x.to_vec(),
                age: h,
                truncated: !parts.all_kept(),
                measure: parts.measure,
                kept: parts.kept,
                attempts: attempt,
                pruned_bound: 0.0,
            });
        }
    }
    Err(Error::SamplingFailure {
        attempts: max_attempts,
        expected_rate: cluster_acceptance_rate(h, params),
    })
}

/// Draws clusters directly from the reduced tree of one surviving lineage.
pub struct ClusterSampler<'a> {
    inner: ReducedSampler<'a>,
    age: f64,
}

impl<'a> ClusterSampler<'a> {
    /// `params` must already carry horizon and single snapshot `h`.
    pub fn new(params: &'a EngineParams, law: &'a OffspringLaw) -> Result<Self> {
        if params.snapshot_times.len() != 1 {
            return Err(domain("cluster sampler needs exactly one snapshot time"));
        }
        Ok(Self {
            inner: ReducedSampler::new(params, law)?,
            age: params.snapshot_times[0],
        })
    }

    pub fn sample(&self, x: &[f64], rng: &mut SimRng) -> Result<ClusterSample> {
        self.sample_focused(x, None, rng)
    }

    /// As [`sample`](Self::sample), dropping lineages unlikely to reach the
    /// focus ball; the cluster may then come back empty.
    pub fn sample_focused(
        &self,
        x: &[f64],
        focus: Option<&Focus>,
        rng: &mut SimRng,
    ) -> Result<ClusterSample> {
        let mut leaves = Leaves::default();
        let opts = ReducedOptions {
            focus: focus.cloned(),
            ..Default::default()
        };
        self.inner
            .grow_lineage(x, 0.0, self.age, true, &opts, &mut leaves, rng)?;
        let d = x.len();
        let n = leaves.len();
        let measure = AtomicMeasure::from_parts(
            d,
            leaves.coords,
            vec![self.inner.params().particle_mass(); n],
        )?;
        Ok(ClusterSample {
            root: x.to_vec(),
            age: self.age,
            truncated: leaves.kept.iter().any(|k| !k),
            measure,
            kept: leaves.kept,
            attempts: 1,
            pruned_bound: leaves.pruned_bound,
        })
    }
}

/// `P(xi_t B > 0)` as a function of the cluster hitting probability, and
/// its inverse, with normaliser `a`; `a = (beta t)^{1/beta}` for the full
/// process.
pub fn xi_hit_from_cluster(p_eta: f64, a: f64) -> f64 {
    -(-p_eta / a).exp_m1()
}

pub fn cluster_hit_from_xi(p_xi: f64, a: f64) -> f64 {
    -a * (-p_xi).ln_1p()
}

/// `-(beta t)^{1/beta} log(1 - p)`.
pub fn eta_from_xi(p_xi: f64, t: f64, beta: f64) -> f64 {
    cluster_hit_from_xi(p_xi, cluster_normalizer(t, beta))
}

/// `1 - exp(-(beta t)^{-1/beta} q)`.
pub fn xi_from_eta(p_eta: f64, t: f64, beta: f64) -> f64 {
    xi_hit_from_cluster(p_eta, cluster_normalizer(t, beta))
}

/// Monte-Carlo estimate of `a_K(h)` from one level of truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizerEstimate {
    /// `P(|xi_h| = 0)` from the initial mass.
    pub extinction: EstimateWithError,
    /// `-m / log P(|xi_h| = 0)`, delta-method standard error.
    pub value: EstimateWithError,
    /// Whether `value +- 3 stderr` meets `[(beta h)^{1/beta}, 2 (beta h)^{1/beta}]`.
    pub in_bracket: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerReport {
    pub h: f64,
    pub truncation: Option<f64>,
    pub initial_mass: f64,
    pub full: NormalizerEstimate,
    pub truncated: Option<NormalizerEstimate>,
    /// `(beta h)^{1/beta}`.
    pub lower: f64,
    /// `2 (beta h)^{1/beta}`.
    pub upper: f64,
    /// Exact particle-level value without truncation.
    pub particle_reference: f64,
}

fn normalizer_from(dead: u64, reps: u64, m: f64, lower: f64) -> Result<NormalizerEstimate> {
    let p = dead as f64 / reps as f64;
    if dead == 0 || dead == reps {
        return Err(Error::UnusableRegime(format!(
            "estimated extinction probability {p} is degenerate"
        )));
    }
    let se_p = (p * (1.0 - p) / reps as f64).sqrt();
    let lp = p.ln();
    let a = -m / lp;
    let se_a = m / (p * lp * lp) * se_p;
    let value = EstimateWithError::new(a, se_a, reps);
    Ok(NormalizerEstimate {
        extinction: EstimateWithError::new(p, se_p, reps),
        value,
        in_bracket: a + 3.0 * se_a >= lower && a - 3.0 * se_a <= 2.0 * lower,
    })
}

/// Estimates `a_K(h)` through `P(|xi^K_h| = 0) = exp(-m / a_K(h))` from
/// initial mass `m` (default `(beta h)^{1/beta}`), together with the
/// untruncated normaliser from the same coupled runs.
pub fn estimate_a_h(
    h: f64,
    params: &EngineParams,
    initial_mass: Option<f64>,
    reps: u64,
) -> Result<NormalizerReport> {
    if !(h > 0.0) {
        return Err(domain("h must be positive"));
    }
    if reps < 2 {
        return Err(domain("need at least two replicates"));
    }
    let lower = cluster_normalizer(h, params.beta);
    let m = initial_mass.unwrap_or(lower);
    let mut p = aged(params, h);
    p.track_positions = false;
    let law = p.offspring_law()?;
    let sampler = ReducedSampler::new(&p, &law)?;
    let init = AtomicMeasure::dirac(&[0.0], m)?;
    let runs = run_replicates(reps, p.seed, |_, rng| {
        let s = sampler.sample(&init, &ReducedOptions::default(), rng)?;
        Ok((s[0].full_count == 0, s[0].kept_count == 0))
    })?;
    let dead_full = runs.iter().filter(|r| r.0).count() as u64;
    let dead_kept = runs.iter().filter(|r| r.1).count() as u64;
    // rounding m to whole particles changes the effective mass
    let m_eff = (m * p.mass_scale as f64).round() / p.mass_scale as f64;
    let full = normalizer_from(dead_full, reps, m_eff, lower)?;
    let truncated = match p.truncation {
        Some(_) => Some(normalizer_from(dead_kept, reps, m_eff, lower)?),
        None => None,
    };
    Ok(NormalizerReport {
        h,
        truncation: p.truncation,
        initial_mass: m_eff,
        full,
        truncated,
        lower,
        upper: 2.0 * lower,
        particle_reference: particle_cluster_normalizer(h, p.beta, p.mass_scale),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxReport {
    pub t: f64,
    pub h: f64,
    /// Normaliser used for the number of ancestors.
    pub a_h: f64,
    pub reps: u64,
    pub mass_ks: KsResult,
    pub f_ks: KsResult,
    pub mean_direct: EstimateWithError,
    pub mean_clusters: EstimateWithError,
    /// Both KS p-values exceed `level`.
    pub passed: bool,
    pub level: f64,
}

/// Compares `xi_t` simulated directly with `xi_t` rebuilt from
/// `Poisson(|xi_s| / a_h)` clusters of age `h` rooted at atoms of `xi_s`,
/// `s = t - h`, through KS tests on `|xi_t|` and `xi_t f`. The two routes
/// use independent replicates.
pub fn cox_decomposition_check(
    params: &EngineParams,
    initial: &AtomicMeasure,
    t: f64,
    h: f64,
    f: &TestFunction,
    reps: u64,
) -> Result<CoxReport> {
    if !(h > 0.0) || h >= t {
        return Err(domain("need 0 < h < t"));
    }
    if reps < 2 {
        return Err(domain("need at least two replicates"));
    }
    f.check_dim(params.d)?;
    let s = t - h;
    let law = params.offspring_law()?;
    let direct_params = EngineParams {
        horizon: t,
        snapshot_times: vec![s, t],
        ..params.clone()
    };
    let direct = ReducedSampler::new(&direct_params, &law)?;
    let direct_runs = run_replicates(reps, derive_seed(params.seed, 1), |_, rng| {
        let snaps = direct.sample(initial, &ReducedOptions::default(), rng)?;
        let m = snaps[1].particles.as_ref().expect("positions tracked");
        Ok((m.full_mass(), f.integrate(&m.measure)))
    })?;

    let ancestor_params = EngineParams {
        horizon: s,
        snapshot_times: vec![s],
        ..params.clone()
    };
    let ancestors = ReducedSampler::new(&ancestor_params, &law)?;
    let cluster_params = aged(params, h);
    let clusters = ClusterSampler::new(&cluster_params, &law)?;
    let a_h = particle_cluster_normalizer(h, params.beta, params.mass_scale);
    let cluster_runs = run_replicates(reps, derive_seed(params.seed, 2), |_, rng| {
        let snaps = ancestors.sample(initial, &ReducedOptions::default(), rng)?;
        let xs = &snaps[0]
            .particles
            .as_ref()
            .expect("positions tracked")
            .measure;
        let mean = xs.total_mass() / a_h;
        let k = if mean > 0.0 {
            rng.sample(Poisson::new(mean).map_err(|e| domain(e.to_string()))?) as usize
        } else {
            0
        };
        let (mut mass, mut fsum) = (0.0, 0.0);
        for _ in 0..k {
            // atoms carry equal mass, so a uniform atom is mass-weighted
            let i = rng.random_range(0..xs.len());
            let c = clusters.sample(xs.position(i), rng)?;
            mass += c.measure.total_mass();
            fsum += f.integrate(&c.measure);
        }
        Ok((mass, fsum))
    })?;

    let col = |v: &[(f64, f64)], j: usize| -> Vec<f64> {
        v.iter().map(|r| if j == 0 { r.0 } else { r.1 }).collect()
    };
    let mass_ks = ks_two_sample(&col(&direct_runs, 0), &col(&cluster_runs, 0))?;
    let f_ks = ks_two_sample(&col(&direct_runs, 1), &col(&cluster_runs, 1))?;
    let level = 0.01;
    Ok(CoxReport {
        t,
        h,
        a_h,
        reps,
        mean_direct: EstimateWithError::from_samples(&col(&direct_runs, 0))?,
        mean_clusters: EstimateWithError::from_samples(&col(&cluster_runs, 0))?,
        passed: mass_ks.p_value > level && f_ks.p_value > level,
        mass_ks,
        f_ks,
        level,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiHitRow {
    pub eps: f64,
    /// `E kappa (kappa - 1)`.
    pub pairs: EstimateWithError,
    /// `E kappa`.
    pub hits: EstimateWithError,
    /// `eps^{2(d - 2/beta)} (h^{1-d/2} mu p_t + (mu p_{2t})^2)`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHitReport {
    pub t: f64,
    pub h: f64,
    pub center: Vec<f64>,
    pub rows: Vec<MultiHitRow>,
    /// Fit of `log E kappa(kappa-1)` against `log eps` over rows with a
    /// positive estimate.
    pub slope: Option<LinearFit>,
    pub expected_slope: f64,
    /// `max_eps E kappa(kappa-1) / bound`.
    pub fitted_constant: f64,
}

/// Counts the distinct time-`(t-h)` ancestors of truncated-process atoms in
/// `B(center, eps)` for every `eps` of a coupled ladder. `params` carries
/// the single snapshot time `t`.
pub fn multi_hit_count(
    params: &EngineParams,
    initial: &AtomicMeasure,
    h: f64,
    center: &[f64],
    eps_ladder: &[f64],
    reps: u64,
) -> Result<MultiHitReport> {
    if params.snapshot_times.len() != 1 {
        return Err(domain("multi-hit counting uses exactly one snapshot time"));
    }
    let t = params.snapshot_times[0];
    if !(h > 0.0 && h <= t) {
        return Err(precondition("need h <= t"));
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
        focus: Some(Focus::new(center, eps_ladder.iter().cloned().fold(0.0, f64::max))),
    };
    let counts = run_replicates(reps, params.seed, |_, rng| {
        let snap = sampler.sample(initial, &opts, rng)?;
        let p = snap[0].particles.as_ref().expect("positions tracked");
        let tags = p.lineage.as_ref().expect("tagged");
        let mut nearest: BTreeMap<u64, f64> = BTreeMap::new();
        for i in 0..p.measure.len() {
            if !p.kept[i] {
                continue;
            }
            let r2 = crate::measure::dist2(p.measure.position(i), center);
            let e = nearest.entry(tags[i]).or_insert(f64::INFINITY);
            *e = e.min(r2);
        }
        Ok(eps_ladder
            .iter()
            .map(|eps| nearest.values().filter(|&&r2| r2 < eps * eps).count() as f64)
            .collect::<Vec<f64>>())
    })?;
    let d = params.d as f64;
    let beta = params.beta;
    let expected_slope = 2.0 * (d - 2.0 / beta);
    let mpt = initial.convolve_heat(t, center)?;
    let mp2t = initial.convolve_heat(2.0 * t, center)?;
    let mut rows = Vec::new();
    for (j, &eps) in eps_ladder.iter().enumerate() {
        let k: Vec<f64> = counts.iter().map(|c| c[j]).collect();
        let pairs: Vec<f64> = k.iter().map(|k| k * (k - 1.0)).collect();
        rows.push(MultiHitRow {
            eps,
            pairs: EstimateWithError::from_samples(&pairs)?,
            hits: EstimateWithError::from_samples(&k)?,
            bound: eps.powf(expected_slope) * (h.powf(1.0 - d / 2.0) * mpt + mp2t * mp2t),
        });
    }
    let pos: Vec<&MultiHitRow> = rows
        .iter()
        .filter(|r| r.pairs.value > 0.0 && r.pairs.stderr > 0.0)
        .collect();
    let slope = if pos.len() >= 2 {
        let x: Vec<f64> = pos.iter().map(|r| r.eps.ln()).collect();
        let y: Vec<f64> = pos.iter().map(|r| r.pairs.value.ln()).collect();
        let w: Vec<f64> = pos
            .iter()
            .map(|r| (r.pairs.value / r.pairs.stderr).powi(2))
            .collect();
        linear_fit(&x, &y, Some(&w)).ok()
    } else {
        None
    };
    let fitted_constant = rows
        .iter()
        .map(|r| r.pairs.value / r.bound)
        .fold(0.0, f64::max);
    Ok(MultiHitReport {
        t,
        h,
        center: center.to_vec(),
        rows,
        slope,
        expected_slope,
        fitted_constant,
    })
}

/// Probability that a cluster of age `t` rooted at `root` charges
/// `B(center, eps)`, for every `eps` of a coupled ladder.
pub fn cluster_hit_prob(
    params: &EngineParams,
    root: &[f64],
    center: &[f64],
    eps_ladder: &[f64],
    t: f64,
    reps: u64,
) -> Result<Vec<EstimateWithError>> {
    if reps < 2 {
        return Err(domain("need at least two replicates"));
    }
    let p = aged(params, t);
    let law = p.offspring_law()?;
    let sampler = ClusterSampler::new(&p, &law)?;
    let hits = run_replicates(reps, p.seed, |_, rng| {
        let c = sampler.sample(root, rng)?;
        let r2 = (0..c.measure.len())
            .map(|i| crate::measure::dist2(c.measure.position(i), center))
            .fold(f64::INFINITY, f64::min);
        Ok(eps_ladder.iter().map(|e| r2 < e * e).collect::<Vec<bool>>())
    })?;
    (0..eps_ladder.len())
        .map(|j| {
            let x: Vec<f64> = hits.iter().map(|h| f64::from(u8::from(h[j]))).collect();
            EstimateWithError::from_samples(&x)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub eps: f64,
    pub h: f64,
    /// `|mu| Var(eta_h^eps f)`.
    pub variance: f64,
    /// `a_h eps^{d-2/beta} h^{d/2} |f|^2 |mu|`.
    pub bound: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub rows: Vec<VarianceRow>,
    /// Largest ratio over the grid.
    pub fitted_constant: f64,
    /// Largest over smallest ratio.
    pub spread: f64,
}

/// Conditional variance of `sum_i eta_i^eps f` given the ancestors, which
/// for Poisson ancestors of intensity `mu` is `|mu| Var_0(eta^eps f)` when
/// `f` is translation invariant. Uses `f = 1` and compares with the bound
/// on an `(eps, h)` grid with `eps^2 <= h`.
pub fn cluster_variance_check(
    params: &EngineParams,
    grid: &[(f64, f64)],
    total_mass: f64,
    reps: u64,
) -> Result<VarianceReport> {
    if grid.iter().any(|(e, h)| !(*e > 0.0 && e * e <= *h)) {
        return Err(precondition("grid points need 0 < eps^2 <= h"));
    }
    if reps < 2 {
        return Err(domain("need at least two replicates"));
    }
    let d = params.d;
    let beta = params.beta;
    let mut rows = Vec::new();
    for (k, &(eps, h)) in grid.iter().enumerate() {
        let p = EngineParams {
            seed: derive_seed(params.seed, k as u64),
            ..aged(params, h)
        };
        let law = p.offspring_law()?;
        let sampler = ClusterSampler::new(&p, &law)?;
        let origin = vec![0.0; d];
        let vols = run_replicates(reps, p.seed, |_, rng| {
            let c = sampler.sample(&origin, rng)?;
            let k = c.measure.select(&c.kept);
            if k.is_empty() {
                return Ok(0.0);
            }
            let w = Window::covering(&k, eps, eps / 8.0)?.expect("nonempty");
            Ok(rasterize(&k, None, eps, &w, &[])?.volume)
        })?;
        let stats: RunningStats = vols.iter().copied().collect();
        let variance = total_mass * stats.variance();
        let a_h = particle_cluster_normalizer(h, beta, p.mass_scale);
        let bound = a_h * eps.powf(d as f64 - 2.0 / beta) * h.powf(d as f64 / 2.0) * total_mass;
        rows.push(VarianceRow {
            eps,
            h,
            variance,
            bound,
            ratio: variance / bound,
        });
    }
    let hi = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let lo = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    Ok(VarianceReport {
        rows,
        fitted_constant: hi,
        spread: hi / lo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replicate_rng;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn transfer_round_trip(p in 1e-9f64..0.999_999, t in 0.01f64..10.0, beta in 0.1f64..0.99) {
            let q = eta_from_xi(p, t, beta);
            prop_assert!((xi_from_eta(q, t, beta) - p).abs() <= 1e-12 * p.max(1e-3));
            let a = 0.37 * t;
            prop_assert!((xi_hit_from_cluster(cluster_hit_from_xi(p, a), a) - p).abs() <= 1e-12 * p.max(1e-3));
        }
    }

    #[test]
    fn rejection_and_reduced_clusters_agree_in_mean() {
        let params = EngineParams::new(0.8, 3, 200, 0.2);
        let law = params.offspring_law().unwrap();
        let h = 0.2;
        let reps = 300;
        let rej = run_replicates(reps, 1, |_, rng| {
            sample_cluster(&[0.0; 3], h, &params, &law, 1_000_000, rng)
        })
        .unwrap();
        let p = aged(&params, h);
        let sampler = ClusterSampler::new(&p, &law).unwrap();
        let red = run_replicates(reps, 2, |_, rng| sampler.sample(&[0.0; 3], rng)).unwrap();
        let ma: Vec<f64> = rej.iter().map(|c| c.measure.total_mass()).collect();
        let mb: Vec<f64> = red.iter().map(|c| c.measure.total_mass()).collect();
        let a = EstimateWithError::from_samples(&ma).unwrap();
        let b = EstimateWithError::from_samples(&mb).unwrap();
        let reference = 1.0 / (200.0 * cluster_acceptance_rate(h, &params));
        assert!(a.z_score(reference, 1e-12) < 4.0, "{a:?} vs {reference}");
        assert!(b.z_score(reference, 1e-12) < 4.0, "{b:?} vs {reference}");
        let ks = ks_two_sample(&ma, &mb).unwrap();
        assert!(ks.p_value > 1e-3, "{ks:?}");
        let attempts: u64 = rej.iter().map(|c| c.attempts).sum();
        let rate = reps as f64 / attempts as f64;
        let expect = cluster_acceptance_rate(h, &params);
        assert!((rate / expect - 1.0).abs() < 0.25, "{rate} vs {expect}");
    }

    #[test]
    fn clusters_are_centred_on_their_root() {
        let params = EngineParams::new(0.8, 3, 500, 0.5).with_snapshots(vec![0.5]);
        let law = params.offspring_law().unwrap();
        let sampler = ClusterSampler::new(&params, &law).unwrap();
        let root = [1.0, -2.0, 0.5];
        let bary = run_replicates(400, 4, |_, rng| {
            Ok(sampler.sample(&root, rng)?.measure.barycenter().unwrap())
        })
        .unwrap();
        for k in 0..3 {
            let xs: Vec<f64> = bary.iter().map(|b| b[k]).collect();
            let e = EstimateWithError::from_samples(&xs).unwrap();
            assert!(e.z_score(root[k], 1e-12) < 4.0);
        }
    }

    #[test]
    fn exhausted_attempts_report_the_rate() {
        let params = EngineParams::new(0.8, 3, 100_000, 1.0);
        let law = params.offspring_law().unwrap();
        let mut rng = replicate_rng(0, 0);
        match sample_cluster(&[0.0; 3], 1.0, &params, &law, 2, &mut rng) {
            Err(Error::SamplingFailure {
                attempts,
                expected_rate,
            }) => {
                assert_eq!(attempts, 2);
                assert!(expected_rate < 1e-4);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn untruncated_normalizer_matches_particle_value() {
        let params = EngineParams::new(0.8, 3, 100_000, 0.05).with_seed(5);
        let r = estimate_a_h(0.05, &params, None, 2000).unwrap();
        assert!(
            r.full.value.z_score(r.particle_reference, 1e-12) < 3.5,
            "{r:?}"
        );
        assert!(r.truncated.is_none());
    }

    #[test]
    fn truncation_raises_the_normalizer() {
        let params = EngineParams::new(0.8, 3, 10_000, 0.1)
            .with_truncation(Some(0.001))
            .with_seed(6);
        let r = estimate_a_h(0.1, &params, None, 1000).unwrap();
        let k = r.truncated.unwrap();
        assert!(k.value.value >= r.full.value.value);
        assert!(k.extinction.value >= r.full.extinction.value);
    }

    #[test]
    fn far_ball_sees_no_clusters() {
        let params = EngineParams::new(0.8, 3, 2000, 0.25)
            .with_snapshots(vec![0.25])
            .with_seed(8);
        let init = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        let r = multi_hit_count(&params, &init, 0.1, &[20.0, 0.0, 0.0], &[0.3, 0.1], 20).unwrap();
        assert!(r
            .rows
            .iter()
            .all(|r| r.pairs.value == 0.0 && r.hits.value == 0.0));
        assert!(multi_hit_count(&params, &init, 0.01, &[0.0; 3], &[0.3], 5).is_err());
    }

    #[test]
    fn cox_check_rejects_h_at_least_t() {
        let params = EngineParams::new(0.8, 3, 100, 1.0);
        let init = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        let e = cox_decomposition_check(&params, &init, 1.0, 1.0, &TestFunction::One, 10);
        assert!(matches!(e, Err(Error::Domain(_))));
    }
}
