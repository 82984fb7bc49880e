//! Branching-particle approximation of the `(2, beta)`-superprocess and its
//! truncated K-process.
//!
//! Particles carry mass `1/N`, branch at rate `(1+beta) N^beta` and leave a
//! random number of offspring drawn from [`OffspringLaw`]. An event with
//! `(k-1)/N > K` is *truncated*: the full process receives all `k`
//! offspring, while in the K-process the parent continues as a single
//! particle. The K-process is therefore the sub-population of *kept*
//! particles.

mod direct;
mod experiments;
pub mod oracles;
mod reduced;

pub use direct::{simulate_coupled, simulate_coupled_with_law};
pub use experiments::{
    jump_compensator_check, run_replicates, tau_tail_experiment, CompensatorReport, CompensatorRow,
    TauTailReport,
};
pub use reduced::{Focus, Leaves, ReducedOptions, ReducedSampler};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::measure::{AtomicMeasure, ParticleSnapshot};
use crate::offspring::{OffspringLaw, DEFAULT_TAIL_CUTOFF};

/// Default population cap, in particle slots.
pub const DEFAULT_POPULATION_CAP: usize = 100_000_000;

/// Parameters of a particle simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineParams {
    pub beta: f64,
    pub d: usize,
    /// `N`: every particle has mass `1/N`.
    pub mass_scale: u64,
    /// Truncation level `K`; `None` means no truncation.
    pub truncation: Option<f64>,
    pub horizon: f64,
    pub snapshot_times: Vec<f64>,
    pub seed: u64,
    pub offspring_cutoff: usize,
    /// Net jumps `(k-1)/N` above this value are logged.
    pub jump_log_threshold: f64,
    pub population_cap: usize,
    /// When false only particle counts are simulated (no positions).
    pub track_positions: bool,
}

impl EngineParams {
    /// Parameters with the documented defaults: no truncation, logging
    /// threshold `10/N`, population cap `10^8`, positions tracked.
    pub fn new(beta: f64, d: usize, mass_scale: u64, horizon: f64) -> Self {
        Self {
            beta,
            d,
            mass_scale,
            truncation: None,
            horizon,
            snapshot_times: vec![horizon],
            seed: 0,
            offspring_cutoff: DEFAULT_TAIL_CUTOFF,
            jump_log_threshold: 10.0 / mass_scale.max(1) as f64,
            population_cap: DEFAULT_POPULATION_CAP,
            track_positions: true,
        }
    }

    pub fn with_truncation(mut self, k: Option<f64>) -> Self {
        self.truncation = k;
        self
    }

    pub fn with_snapshots(mut self, times: Vec<f64>) -> Self {
        self.snapshot_times = times;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_positions(mut self, track: bool) -> Self {
        self.track_positions = track;
        self
    }

    pub fn with_jump_threshold(mut self, r: f64) -> Self {
        self.jump_log_threshold = r;
        self
    }

    /// Checks the standing assumptions `0 < beta < 1`, `d >= 3`, `d > 2/beta`
    /// and the snapshot schedule.
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(domain(format!("beta must lie in (0,1), got {}", self.beta)));
        }
        if self.d < 3 || (self.d as f64) <= 2.0 / self.beta {
            return Err(domain(format!(
                "need d >= 3 and d > 2/beta (d = {}, 2/beta = {:.4})",
                self.d,
                2.0 / self.beta
            )));
        }
        self.validate_mass_only()
    }

    /// The checks that matter for the total-mass process alone, which is
    /// well defined in any dimension.
    pub fn validate_mass_only(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(domain(format!("beta must lie in (0,1), got {}", self.beta)));
        }
        if self.mass_scale == 0 {
            return Err(domain("mass scale N must be at least 1"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(domain("horizon must be positive and finite"));
        }
        if self.snapshot_times.is_empty() {
            return Err(domain("at least one snapshot time is required"));
        }
        if self.snapshot_times.windows(2).any(|w| !(w[0] < w[1]))
            || self.snapshot_times[0] <= 0.0
            || *self.snapshot_times.last().unwrap() > self.horizon
        {
            return Err(domain(
                "snapshot times must be strictly increasing within (0, horizon]",
            ));
        }
        if let Some(k) = self.truncation {
            if !(k > 0.0) {
                return Err(domain("truncation level K must be positive"));
            }
            if k * (self.mass_scale as f64) < 2.0 {
                return Err(domain("finite truncation needs K*N >= 2"));
            }
        }
        if !(self.jump_log_threshold > 0.0) {
            return Err(domain("jump logging threshold must be positive"));
        }
        Ok(())
    }

    /// Per-particle branching rate `(1+beta) N^beta`.
    pub fn branch_rate(&self) -> f64 {
        (1.0 + self.beta) * (self.mass_scale as f64).powf(self.beta)
    }

    pub fn particle_mass(&self) -> f64 {
        1.0 / self.mass_scale as f64
    }

    /// Largest offspring count that is not truncated: events with `k`
    /// offspring are truncated iff `k > kstar`.
    pub fn kstar(&self) -> Option<u64> {
        self.truncation
            .map(|k| (k * self.mass_scale as f64 * (1.0 + 1e-15)).floor() as u64 + 1)
    }

    pub fn offspring_law(&self) -> Result<OffspringLaw> {
        OffspringLaw::new(self.beta, self.offspring_cutoff)
    }
}

/// Converts an atomic measure into particle counts per atom. Returns the
/// counts and the total absolute rounding error in mass.
pub fn discretize(initial: &AtomicMeasure, mass_scale: u64) -> (Vec<u64>, f64) {
    let n = mass_scale as f64;
    let mut err = 0.0;
    let counts = initial
        .masses()
        .iter()
        .map(|m| {
            let c = (m * n).round();
            err += (c / n - m).abs();
            c as u64
        })
        .collect();
    (counts, err)
}

/// One logged branching event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    /// Empty when positions are not tracked.
    pub location: Vec<f64>,
    /// `(k-1)/N`.
    pub net_mass: f64,
    pub truncated: bool,
    /// Whether the branching particle belonged to the K-process.
    pub in_k_process: bool,
}

/// Branching events whose net mass exceeds the logging threshold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JumpLog {
    pub threshold: f64,
    pub events: Vec<JumpEvent>,
}

impl JumpLog {
    /// Number of logged jumps with net mass strictly above `r`.
    pub fn count_above(&self, r: f64) -> usize {
        self.events.iter().filter(|e| e.net_mass > r).count()
    }
}

/// State of the coupled pair at one snapshot time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub time: f64,
    pub full_count: u64,
    pub kept_count: u64,
    /// `int_0^time |xi_s| ds` (only recorded by the direct engine).
    pub full_exposure: Option<f64>,
    /// `int_0^time |xi^K_s| ds` (only recorded by the direct engine).
    pub kept_exposure: Option<f64>,
    /// Particle configuration (absent in count-only runs).
    pub particles: Option<ParticleSnapshot>,
    /// Bound on the hitting-probability change caused by focused pruning.
    pub pruned_bound: f64,
}

impl SnapshotRecord {
    pub fn full_mass(&self, mass_scale: u64) -> f64 {
        self.full_count as f64 / mass_scale as f64
    }

    pub fn kept_mass(&self, mass_scale: u64) -> f64 {
        self.kept_count as f64 / mass_scale as f64
    }
}

/// Output of one coupled simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledTrajectory {
    pub mass_scale: u64,
    pub snapshots: Vec<SnapshotRecord>,
    pub jump_log: JumpLog,
    /// First time a net jump exceeded `K` (infinite if none did).
    pub tau_k: f64,
    /// Absolute mass error introduced by rounding the initial measure.
    pub rounding_error: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_enforces_standing_assumptions() {
        assert!(EngineParams::new(0.8, 3, 100, 1.0).validate().is_ok());
        assert!(EngineParams::new(0.6, 3, 100, 1.0).validate().is_err());
        assert!(EngineParams::new(0.8, 2, 100, 1.0).validate().is_err());
        assert!(EngineParams::new(1.2, 3, 100, 1.0).validate().is_err());
        let p = EngineParams::new(0.8, 3, 100, 1.0).with_snapshots(vec![0.5, 0.5]);
        assert!(p.validate().is_err());
        let p = EngineParams::new(0.8, 3, 100, 1.0).with_truncation(Some(0.01));
        assert!(p.validate().is_err());
    }

    #[test]
    fn kstar_matches_net_mass_rule() {
        let p = EngineParams::new(0.8, 3, 1000, 1.0).with_truncation(Some(0.05));
        let ks = p.kstar().unwrap();
        assert_eq!(ks, 51);
        assert!((ks - 1) as f64 / 1000.0 <= 0.05);
        assert!(ks as f64 / 1000.0 > 0.05);
        let p = EngineParams::new(0.8, 3, 1000, 1.0).with_truncation(Some(0.0505));
        assert_eq!(p.kstar().unwrap(), 51);
    }

    #[test]
    fn discretization_records_rounding() {
        let m = AtomicMeasure::from_parts(1, vec![0.0, 1.0], vec![0.5, 0.2504]).unwrap();
        let (c, err) = discretize(&m, 1000);
        assert_eq!(c, vec![500, 250]);
        assert!((err - 0.0004).abs() < 1e-12);
    }
}
