//! Exact snapshot sampling through the reduced (prolific-lineage) tree.
//!
//! Only lineages with descendants alive at the target time `b` are
//! simulated. A particle alive at time `s` has such descendants with
//! probability `w(s) = (1 + beta N^beta (b - s))^{-1/beta}`. Conditioned on
//! that, its lineage is a time-inhomogeneous Markov branching process:
//!
//! * it splits into `j >= 2` prolific lineages at rate
//!   `beta / (N^{-beta} + beta (b - s))`, with `j ~ p_j / (1 - p_0)`;
//! * given `j`, the number of non-prolific siblings is negative binomial
//!   with shape `j - 1 - beta` and success probability `w(s)`;
//! * events with exactly one prolific child and `k` offspring occur at rate
//!   `rho k p_k (1 - w)^{k-1}`.
//!
//! Siblings only matter for truncation, so they are drawn only for
//! K-process lineages. The number of particles handled is the number alive
//! at time `b`, instead of the number of branching events.

use rand::{Rng, RngExt};
use rand_distr::{Binomial, Exp1, Gamma, Poisson, StandardNormal};

use super::{discretize, EngineParams, SnapshotRecord};
use crate::error::{domain, precondition, Error, Result};
use crate::measure::{AtomicMeasure, ParticleSnapshot};
use crate::offspring::OffspringLaw;

/// Per-run options of the reduced sampler.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReducedOptions {
    /// Every lineage alive at this time receives a fresh lineage tag that its
    /// descendants inherit.
    pub tag_time: Option<f64>,
    /// Drop lineages that are unlikely to reach a target ball.
    pub focus: Option<Focus>,
}

/// Target ball for lineage pruning. A lineage at `(s, y)` is dropped when
/// the expected number of its descendants inside `B(center, radius)` at the
/// snapshot time is below `tolerance`; the dropped bounds are summed in
/// [`Leaves::pruned_bound`], which bounds the change of the hitting
/// probability of the ball. Only single-snapshot runs may be focused.
#[derive(Debug, Clone, PartialEq)]
pub struct Focus {
    pub center: Vec<f64>,
    pub radius: f64,
    pub tolerance: f64,
}

impl Focus {
    pub fn new(center: &[f64], radius: f64) -> Self {
        Focus {
            center: center.to_vec(),
            radius,
            tolerance: 1e-12,
        }
    }

    /// Upper bound on `P(|y + sqrt(v) Z - center| < radius)`.
    fn gaussian_bound(&self, y: &[f64], v: f64) -> f64 {
        let r = crate::measure::dist2(y, &self.center).sqrt();
        if r <= self.radius || v <= 0.0 {
            return 1.0;
        }
        let d = y.len() as f64;
        let ball = std::f64::consts::PI.powf(d / 2.0) / statrs::function::gamma::gamma(d / 2.0 + 1.0)
            * self.radius.powf(d);
        let gap = r - self.radius;
        (ball * (2.0 * std::f64::consts::PI * v).powf(-d / 2.0) * (-gap * gap / (2.0 * v)).exp())
            .min(1.0)
    }
}

/// Particles alive at the end of a stage.
#[derive(Debug, Clone, Default)]
pub struct Leaves {
    pub coords: Vec<f64>,
    pub kept: Vec<bool>,
    pub tags: Vec<u64>,
    /// Sum of the bounds of lineages dropped by a [`Focus`].
    pub pruned_bound: f64,
}

impl Leaves {
    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|k| **k).count()
    }
}

struct Lineage {
    time: f64,
    kept: bool,
    tag: u64,
}

/// Reduced-tree sampler bound to engine parameters and an offspring law.
pub struct ReducedSampler<'a> {
    params: &'a EngineParams,
    law: &'a OffspringLaw,
    kstar: Option<u64>,
    /// `rho E[K; K > kstar]`: candidate rate for hidden truncated events.
    big_rate: f64,
    n_neg_beta: f64,
}

impl<'a> ReducedSampler<'a> {
    pub fn new(params: &'a EngineParams, law: &'a OffspringLaw) -> Result<Self> {
        if params.track_positions {
            params.validate()?;
        } else {
            params.validate_mass_only()?;
        }
        if law.beta() != params.beta {
            return Err(domain("offspring law was built for a different beta"));
        }
        let kstar = params.kstar();
        let big_rate = kstar.map_or(0.0, |k| params.branch_rate() * law.tail_mean(k));
        Ok(Self {
            params,
            law,
            kstar,
            big_rate,
            n_neg_beta: (params.mass_scale as f64).powf(-params.beta),
        })
    }

    pub fn params(&self) -> &EngineParams {
        self.params
    }

    /// Probability that a particle alive at time `s` has descendants at `b`.
    fn survival(&self, b: f64, s: f64) -> f64 {
        let beta = self.params.beta;
        (self.n_neg_beta / (self.n_neg_beta + beta * (b - s))).powf(1.0 / beta)
    }

    /// Snapshots of the coupled pair at `params.snapshot_times`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        initial: &AtomicMeasure,
        opts: &ReducedOptions,
        rng: &mut R,
    ) -> Result<Vec<SnapshotRecord>> {
        let p = self.params;
        if p.track_positions && initial.dim() != p.d {
            return Err(domain("initial measure dimension differs from params.d"));
        }
        let d = if p.track_positions { p.d } else { 0 };
        if let Some(f) = &opts.focus {
            if p.snapshot_times.len() != 1 || d == 0 || f.center.len() != d {
                return Err(precondition(
                    "a focus needs positions and a single snapshot of matching dimension",
                ));
            }
        }
        let mass = p.particle_mass();
        let (counts, _) = discretize(initial, p.mass_scale);
        let mut next_tag = 0u64;
        let mut out = Vec::with_capacity(p.snapshot_times.len());

        // first stage: binomial thinning of each atom
        let b0 = p.snapshot_times[0];
        let w = self.survival(b0, 0.0);
        let mut leaves = Leaves::default();
        let mut roots: Vec<(Vec<f64>, bool, u64)> = Vec::new();
        for (i, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let m = rng.sample(Binomial::new(c, w).map_err(|e| domain(e.to_string()))?);
            let pos = if d > 0 {
                initial.position(i).to_vec()
            } else {
                Vec::new()
            };
            for _ in 0..m {
                roots.push((pos.clone(), true, 0));
            }
        }
        self.run_stage(
            &mut roots,
            0.0,
            b0,
            opts,
            &mut next_tag,
            &mut leaves,
            rng,
        )?;
        out.push(self.record(b0, &leaves, mass, d)?);

        for win in p.snapshot_times.windows(2) {
            let (a, b) = (win[0], win[1]);
            let w = self.survival(b, a);
            let mut roots = Vec::new();
            for i in 0..leaves.len() {
                if rng.random::<f64>() < w {
                    roots.push((
                        leaves.coords[i * d..(i + 1) * d].to_vec(),
                        leaves.kept[i],
                        leaves.tags[i],
                    ));
                }
            }
            let mut next = Leaves::default();
            self.run_stage(
                &mut roots,
                a,
                b,
                opts,
                &mut next_tag,
                &mut next,
                rng,
            )?;
            leaves = next;
            out.push(self.record(b, &leaves, mass, d)?);
        }
        Ok(out)
    }

    fn record(&self, time: f64, leaves: &Leaves, mass: f64, d: usize) -> Result<SnapshotRecord> {
        let particles = if d > 0 {
            Some(ParticleSnapshot {
                time,
                measure: AtomicMeasure::from_parts(
                    d,
                    leaves.coords.clone(),
                    vec![mass; leaves.len()],
                )?,
                kept: leaves.kept.clone(),
                lineage: Some(leaves.tags.clone()),
            })
        } else {
            None
        };
        Ok(SnapshotRecord {
            time,
            full_count: leaves.len() as u64,
            kept_count: leaves.kept_count() as u64,
            full_exposure: None,
            kept_exposure: None,
            particles,
            pruned_bound: leaves.pruned_bound,
        })
    }

    /// Grows the reduced tree of one prolific lineage started at `x` at time
    /// `start`, appending its particles alive at `end` to `out`.
    pub fn grow_lineage<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        start: f64,
        end: f64,
        kept: bool,
        opts: &ReducedOptions,
        out: &mut Leaves,
        rng: &mut R,
    ) -> Result<()> {
        let mut next_tag = 0;
        let mut roots = vec![(x.to_vec(), kept, 0)];
        self.run_stage(
            &mut roots,
            start,
            end,
            opts,
            &mut next_tag,
            out,
            rng,
        )
    }

    /// Probability that a single particle at `start` has descendants at `end`.
    pub fn lineage_survival(&self, start: f64, end: f64) -> f64 {
        self.survival(end, start)
    }

    #[allow(clippy::too_many_arguments)]
    fn run_stage<R: Rng + ?Sized>(
        &self,
        roots: &mut Vec<(Vec<f64>, bool, u64)>,
        a: f64,
        b: f64,
        opts: &ReducedOptions,
        next_tag: &mut u64,
        out: &mut Leaves,
        rng: &mut R,
    ) -> Result<()> {
        let p = self.params;
        let d = if p.track_positions { p.d } else { 0 };
        let beta = p.beta;
        let nb = self.n_neg_beta;
        let cap = p.population_cap;
        let tag_time = opts.tag_time;
        let focus = opts.focus.as_ref();
        // expected descendants at b of a prolific lineage at s, times the
        // chance that one of them lands in the ball
        let prune_bound = |s: f64, y: &[f64]| -> Option<f64> {
            let f = focus?;
            let bound = f.gaussian_bound(y, b - s) / self.survival(b, s);
            (bound < f.tolerance).then_some(bound)
        };
        let tag_inside = tag_time.filter(|&tt| tt > a && tt < b);
        let tag_at_start = tag_time.is_some_and(|tt| tt <= a);

        let mut stack: Vec<Lineage> = Vec::new();
        let mut stack_pos: Vec<f64> = Vec::new();
        for (pos, kept, tag) in roots.drain(..) {
            let tag = if tag_at_start && tag_time == Some(a) {
                *next_tag += 1;
                *next_tag - 1
            } else {
                tag
            };
            stack.push(Lineage { time: a, kept, tag });
            stack_pos.extend_from_slice(&pos[..d]);
        }
        let mut pos = vec![0.0; d];

        while let Some(mut lin) = stack.pop() {
            let base = stack_pos.len() - d;
            pos.copy_from_slice(&stack_pos[base..]);
            stack_pos.truncate(base);
            let mut s = lin.time;
            loop {
                let e: f64 = rng.sample(Exp1);
                let dnew = (nb + beta * (b - s)) * (-e).exp();
                let split_t = if dnew <= nb {
                    f64::INFINITY
                } else {
                    b - (dnew - nb) / beta
                };
                let big_t = if lin.kept && self.kstar.is_some() {
                    let e2: f64 = rng.sample(Exp1);
                    s + e2 / self.big_rate
                } else {
                    f64::INFINITY
                };
                let tag_t = match tag_inside {
                    Some(tt) if s < tt => tt,
                    _ => f64::INFINITY,
                };
                let next = split_t.min(big_t).min(tag_t).min(b);
                if d > 0 {
                    let sd = (next - s).max(0.0).sqrt();
                    for v in pos.iter_mut() {
                        let z: f64 = rng.sample(StandardNormal);
                        *v += sd * z;
                    }
                }
                s = next;
                if next < b {
                    if let Some(bound) = prune_bound(s, &pos) {
                        out.pruned_bound += bound;
                        break;
                    }
                }
                if next >= b {
                    if out.len() >= cap {
                        return Err(Error::PopulationCap {
                            population: out.len() + 1,
                            cap,
                            time: b,
                        });
                    }
                    out.coords.extend_from_slice(&pos);
                    out.kept.push(lin.kept);
                    out.tags.push(lin.tag);
                    break;
                }
                if next == tag_t {
                    lin.tag = *next_tag;
                    *next_tag += 1;
                    continue;
                }
                if next == big_t {
                    // hidden event: one prolific child among k > kstar offspring
                    let w = self.survival(b, s);
                    let k = self.law.sample_size_biased_above(self.kstar.unwrap(), rng);
                    let accept = ((k - 1) as f64 * (-w).ln_1p()).exp();
                    if rng.random::<f64>() < accept && rng.random::<f64>() * (k as f64) >= 1.0 {
                        lin.kept = false;
                    }
                    continue;
                }
                // split into j >= 2 prolific lineages
                let j = self.law.sample_at_least_two(rng);
                let mut child_kept = lin.kept;
                if lin.kept {
                    if let Some(kstar) = self.kstar {
                        let k = j + self.hidden_siblings(j, self.survival(b, s), rng)?;
                        if k > kstar {
                            // the kept child is uniform among the k offspring
                            child_kept = false;
                            if (rng.random::<f64>() * k as f64) >= j as f64 {
                                lin.kept = false;
                            }
                        }
                    }
                }
                for _ in 1..j {
                    stack.push(Lineage {
                        time: s,
                        kept: child_kept,
                        tag: lin.tag,
                    });
                    stack_pos.extend_from_slice(&pos);
                }
                if stack.len() + out.len() > cap {
                    return Err(Error::PopulationCap {
                        population: stack.len() + out.len(),
                        cap,
                        time: s,
                    });
                }
            }
        }
        Ok(())
    }

    /// Non-prolific siblings accompanying `j` prolific children: negative
    /// binomial with shape `j - 1 - beta`, drawn as a Gamma-Poisson mixture.
    fn hidden_siblings<R: Rng + ?Sized>(&self, j: u64, w: f64, rng: &mut R) -> Result<u64> {
        let shape = j as f64 - 1.0 - self.params.beta;
        let scale = (1.0 - w) / w;
        if !(scale > 1e-300) {
            return Ok(0);
        }
        let lambda: f64 = rng.sample(Gamma::new(shape, scale).map_err(|e| domain(e.to_string()))?);
        if !(lambda > 0.0) {
            return Ok(0);
        }
        let m: f64 = rng.sample(Poisson::new(lambda).map_err(|e| domain(e.to_string()))?);
        Ok(m as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::oracles::{particle_extinction_prob, particle_mass_laplace};
    use crate::rng::replicate_rng;
    use crate::stats::RunningStats;

    #[test]
    fn counts_match_exact_particle_laws() {
        // small N makes the particle and continuum answers differ, so this
        // checks exactness at particle level
        let n = 20;
        let p = EngineParams::new(0.8, 3, n, 1.0)
            .with_snapshots(vec![0.3, 1.0])
            .with_positions(false);
        let law = p.offspring_law().unwrap();
        let s = ReducedSampler::new(&p, &law).unwrap();
        let init = AtomicMeasure::dirac(&[0.0], 1.0).unwrap();
        let reps = 40_000;
        let lam = 1.5;
        let mut ext = [RunningStats::new(), RunningStats::new()];
        let mut lap = [RunningStats::new(), RunningStats::new()];
        for r in 0..reps {
            let mut rng = replicate_rng(9, r);
            let recs = s
                .sample(&init, &ReducedOptions::default(), &mut rng)
                .unwrap();
            for (i, rec) in recs.iter().enumerate() {
                ext[i].push(f64::from(rec.full_count == 0));
                lap[i].push((-lam * rec.full_mass(n)).exp());
            }
        }
        for (i, t) in [0.3, 1.0].iter().enumerate() {
            let e = ext[i].estimate().unwrap();
            let want = particle_extinction_prob(1.0, *t, 0.8, n);
            assert!(
                e.z_score(want, 1e-9) < 4.0,
                "ext t={t}: {} vs {want}",
                e.value
            );
            let l = lap[i].estimate().unwrap();
            let want = particle_mass_laplace(1.0, *t, lam, 0.8, n);
            assert!(
                l.z_score(want, 1e-9) < 4.0,
                "lap t={t}: {} vs {want}",
                l.value
            );
        }
    }

    #[test]
    fn tags_partition_by_ancestor() {
        let p = EngineParams::new(0.8, 3, 500, 1.0).with_snapshots(vec![1.0]);
        let law = p.offspring_law().unwrap();
        let s = ReducedSampler::new(&p, &law).unwrap();
        let init = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        let mut rng = replicate_rng(1, 0);
        let opts = ReducedOptions {
            tag_time: Some(0.5),
            ..Default::default()
        };
        let recs = s.sample(&init, &opts, &mut rng).unwrap();
        let snap = recs[0].particles.as_ref().unwrap();
        let tags = snap.lineage.as_ref().unwrap();
        let mut distinct: Vec<u64> = tags.clone();
        distinct.sort_unstable();
        distinct.dedup();
        // ancestors at 0.5 are roughly Poisson(|xi_0.5| / a_{0.5}) ~ a handful
        assert!(!distinct.is_empty() && distinct.len() < 200);
    }

    #[test]
    fn deterministic_for_fixed_stream() {
        let p = EngineParams::new(0.8, 3, 300, 1.0)
            .with_snapshots(vec![0.5, 1.0])
            .with_truncation(Some(0.05));
        let law = p.offspring_law().unwrap();
        let s = ReducedSampler::new(&p, &law).unwrap();
        let init = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        let a = s
            .sample(&init, &ReducedOptions::default(), &mut replicate_rng(2, 5))
            .unwrap();
        let b = s
            .sample(&init, &ReducedOptions::default(), &mut replicate_rng(2, 5))
            .unwrap();
        assert_eq!(a, b);
        for rec in &a {
            assert!(rec.kept_count <= rec.full_count);
        }
    }

    #[test]
    fn focus_preserves_hitting_frequency() {
        let p = EngineParams::new(0.8, 3, 2000, 1.0);
        let law = p.offspring_law().unwrap();
        let s = ReducedSampler::new(&p, &law).unwrap();
        let init = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        let center = [0.8, 0.0, 0.0];
        let focused = ReducedOptions {
            focus: Some(Focus::new(&center, 0.2)),
            ..Default::default()
        };
        let reps = 6000;
        let mut hits = [RunningStats::new(), RunningStats::new()];
        let mut sizes = [0usize; 2];
        let mut bound = 0.0f64;
        for r in 0..reps {
            for (k, opts) in [ReducedOptions::default(), focused.clone()].iter().enumerate() {
                let rec = s.sample(&init, opts, &mut replicate_rng(10 + k as u64, r)).unwrap();
                let m = &rec[0].particles.as_ref().unwrap().measure;
                hits[k].push(f64::from(m.hits_ball(&center, 0.2)));
                sizes[k] += m.len();
                bound = bound.max(rec[0].pruned_bound);
            }
        }
        let (a, b) = (hits[0].estimate().unwrap(), hits[1].estimate().unwrap());
        let z = (a.value - b.value).abs() / a.stderr.hypot(b.stderr);
        assert!(z < 4.0, "{} vs {}", a.value, b.value);
        assert!(sizes[1] * 5 < sizes[0]);
        assert!(bound < 1e-9);
    }

    #[test]
    fn focus_needs_a_single_snapshot() {
        let p = EngineParams::new(0.8, 3, 100, 1.0).with_snapshots(vec![0.5, 1.0]);
        let law = p.offspring_law().unwrap();
        let s = ReducedSampler::new(&p, &law).unwrap();
        let init = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        let opts = ReducedOptions {
            focus: Some(Focus::new(&[0.0; 3], 0.1)),
            ..Default::default()
        };
        assert!(s.sample(&init, &opts, &mut replicate_rng(0, 0)).is_err());
    }
}
