//! Event-driven simulation of every particle.

use rand::{Rng, RngExt};
use rand_distr::{Exp1, StandardNormal};

use super::{discretize, CoupledTrajectory, EngineParams, JumpEvent, JumpLog, SnapshotRecord};
use crate::error::{domain, Error, Result};
use crate::measure::{AtomicMeasure, ParticleSnapshot};
use crate::offspring::OffspringLaw;
use crate::rng::{replicate_rng, SimRng};

struct Population {
    d: usize,
    track: bool,
    pos: Vec<f64>,
    last: Vec<f64>,
    kept: Vec<bool>,
    n_kept: usize,
}

impl Population {
    fn len(&self) -> usize {
        self.kept.len()
    }

    fn push(&mut self, pos: &[f64], time: f64, kept: bool) {
        if self.track {
            self.pos.extend_from_slice(pos);
            self.last.push(time);
        }
        self.kept.push(kept);
        self.n_kept += usize::from(kept);
    }

    fn remove(&mut self, i: usize) {
        if self.track {
            let d = self.d;
            let last = self.len() - 1;
            for k in 0..d {
                self.pos[i * d + k] = self.pos[last * d + k];
            }
            self.pos.truncate(last * d);
            self.last.swap_remove(i);
        }
        self.n_kept -= usize::from(self.kept[i]);
        self.kept.swap_remove(i);
    }

    /// Moves particle `i` along its Brownian path up to `time`.
    fn advance<R: Rng + ?Sized>(&mut self, i: usize, time: f64, rng: &mut R) {
        if !self.track || self.last[i] == time {
            return;
        }
        let sd = (time - self.last[i]).max(0.0).sqrt();
        for k in 0..self.d {
            let z: f64 = rng.sample(StandardNormal);
            self.pos[i * self.d + k] += sd * z;
        }
        self.last[i] = time;
    }

    fn snapshot<R: Rng + ?Sized>(
        &mut self,
        time: f64,
        mass: f64,
        rng: &mut R,
    ) -> Result<ParticleSnapshot> {
        for i in 0..self.len() {
            self.advance(i, time, rng);
        }
        Ok(ParticleSnapshot {
            time,
            measure: AtomicMeasure::from_parts(self.d, self.pos.clone(), vec![mass; self.len()])?,
            kept: self.kept.clone(),
            lineage: None,
        })
    }
}

/// Simulates the coupled pair `(xi, xi^K)` from `initial`, using the
/// replicate-0 stream of `params.seed`.
pub fn simulate_coupled(
    params: &EngineParams,
    initial: &AtomicMeasure,
) -> Result<CoupledTrajectory> {
    let law = params.offspring_law()?;
    let mut rng = replicate_rng(params.seed, 0);
    simulate_coupled_with_law(params, &law, initial, &mut rng)
}

/// Simulates the coupled pair with a prebuilt offspring law and an explicit
/// random stream.
pub fn simulate_coupled_with_law(
    params: &EngineParams,
    law: &OffspringLaw,
    initial: &AtomicMeasure,
    rng: &mut SimRng,
) -> Result<CoupledTrajectory> {
    if params.track_positions {
        params.validate()?;
        if initial.dim() != params.d {
            return Err(domain("initial measure dimension differs from params.d"));
        }
    } else {
        params.validate_mass_only()?;
    }
    if (law.beta() - params.beta).abs() > 0.0 {
        return Err(domain("offspring law was built for a different beta"));
    }
    let n = params.mass_scale;
    let mass = 1.0 / n as f64;
    let rho = params.branch_rate();
    let kstar = params.kstar();
    let (counts, rounding_error) = discretize(initial, n);
    let total: u64 = counts.iter().sum();
    if total as usize > params.population_cap {
        return Err(Error::PopulationCap {
            population: total as usize,
            cap: params.population_cap,
            time: 0.0,
        });
    }
    let mut pop = Population {
        d: params.d,
        track: params.track_positions,
        pos: Vec::new(),
        last: Vec::new(),
        kept: Vec::new(),
        n_kept: 0,
    };
    for (i, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            pop.push(initial.position(i), 0.0, true);
        }
    }

    let mut log = JumpLog {
        threshold: params.jump_log_threshold,
        events: Vec::new(),
    };
    let mut tau_k = f64::INFINITY;
    let mut t = 0.0;
    let mut full_exposure = 0.0;
    let mut kept_exposure = 0.0;
    let mut snapshots = Vec::with_capacity(params.snapshot_times.len());
    let mut scratch = vec![0.0; params.d];

    for &stop in &params.snapshot_times {
        loop {
            let z = pop.len();
            if z == 0 {
                t = stop;
                break;
            }
            let e: f64 = rng.sample(Exp1);
            let dt = e / (rho * z as f64);
            if t + dt >= stop {
                full_exposure += z as f64 * (stop - t);
                kept_exposure += pop.n_kept as f64 * (stop - t);
                t = stop;
                break;
            }
            full_exposure += z as f64 * dt;
            kept_exposure += pop.n_kept as f64 * dt;
            t += dt;
            let i = rng.random_range(0..z);
            let k = law.sample(rng);
            let truncated = kstar.is_some_and(|ks| k > ks);
            let parent_kept = pop.kept[i];
            if truncated && tau_k.is_infinite() {
                tau_k = t;
            }
            if k >= 2 && (k - 1) as f64 * mass > params.jump_log_threshold {
                pop.advance(i, t, rng);
                let location = if pop.track {
                    pop.pos[i * pop.d..(i + 1) * pop.d].to_vec()
                } else {
                    Vec::new()
                };
                log.events.push(JumpEvent {
                    time: t,
                    location,
                    net_mass: (k - 1) as f64 * mass,
                    truncated,
                    in_k_process: parent_kept,
                });
            }
            match k {
                0 => pop.remove(i),
                1 => {}
                _ => {
                    let needed = z as u64 + k - 1;
                    if needed > params.population_cap as u64 {
                        return Err(Error::PopulationCap {
                            population: needed.min(usize::MAX as u64) as usize,
                            cap: params.population_cap,
                            time: t,
                        });
                    }
                    pop.advance(i, t, rng);
                    if pop.track {
                        scratch.copy_from_slice(&pop.pos[i * pop.d..(i + 1) * pop.d]);
                    }
                    // child 0 reuses the parent slot and keeps its flag
                    let child_kept = parent_kept && !truncated;
                    for _ in 1..k {
                        pop.push(&scratch, t, child_kept);
                    }
                }
            }
        }
        let particles = if pop.track {
            Some(pop.snapshot(stop, mass, rng)?)
        } else {
            None
        };
        snapshots.push(SnapshotRecord {
            time: stop,
            full_count: pop.len() as u64,
            kept_count: pop.n_kept as u64,
            full_exposure: Some(full_exposure * mass),
            kept_exposure: Some(kept_exposure * mass),
            particles,
            pruned_bound: 0.0,
        });
    }

    Ok(CoupledTrajectory {
        mass_scale: n,
        snapshots,
        jump_log: log,
        tau_k,
        rounding_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> EngineParams {
        EngineParams::new(0.8, 3, 200, 1.0)
            .with_snapshots(vec![0.25, 0.5, 1.0])
            .with_truncation(Some(0.02))
            .with_seed(42)
    }

    #[test]
    fn deterministic_given_seed() {
        let init = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        let a = simulate_coupled(&params(), &init).unwrap();
        let b = simulate_coupled(&params(), &init).unwrap();
        assert_eq!(a, b);
        let c = simulate_coupled(&params().with_seed(43), &init).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn coupling_structure_holds() {
        let init = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        for seed in 0..20 {
            let tr = simulate_coupled(&params().with_seed(seed), &init).unwrap();
            for s in &tr.snapshots {
                let snap = s.particles.as_ref().unwrap();
                assert_eq!(snap.measure.len() as u64, s.full_count);
                assert_eq!(
                    snap.kept.iter().filter(|k| **k).count() as u64,
                    s.kept_count
                );
                if s.time < tr.tau_k {
                    assert!(snap.all_kept());
                }
            }
            for e in &tr.jump_log.events {
                assert!(e.net_mass > tr.jump_log.threshold);
                assert_eq!(e.truncated, e.net_mass > 0.02);
            }
            let times: Vec<f64> = tr.jump_log.events.iter().map(|e| e.time).collect();
            assert!(times.windows(2).all(|w| w[0] <= w[1]));
            if let Some(first) = tr.jump_log.events.iter().find(|e| e.truncated) {
                assert!(tr.tau_k <= first.time);
            }
        }
    }

    #[test]
    fn untruncated_run_keeps_everything() {
        let init = AtomicMeasure::dirac(&[0.0; 3], 0.5).unwrap();
        let p = params().with_truncation(None);
        let tr = simulate_coupled(&p, &init).unwrap();
        assert!(tr.tau_k.is_infinite());
        for s in &tr.snapshots {
            assert_eq!(s.full_count, s.kept_count);
        }
    }

    #[test]
    fn population_cap_aborts_explicitly() {
        let init = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        let mut p = params();
        p.population_cap = 150;
        match simulate_coupled(&p, &init) {
            Err(Error::PopulationCap { cap, .. }) => assert_eq!(cap, 150),
            other => panic!("expected a population-cap error, got {other:?}"),
        }
    }

    #[test]
    fn count_only_mode_is_reproducible() {
        let init = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        let p = params().with_positions(false);
        let a = simulate_coupled(&p, &init).unwrap();
        let b = simulate_coupled(&p, &init).unwrap();
        assert_eq!(a, b);
        assert!(a.snapshots.iter().all(|s| s.particles.is_none()));
    }
}
