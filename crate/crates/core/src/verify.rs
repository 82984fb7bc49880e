//! The acceptance suite: fourteen numbered criteria evaluated at a fast or a
//! full tier, each reported with its measured values and a pass/fail status.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use statrs::function::gamma::ln_gamma;

use crate::cluster::{
    cluster_hit_from_xi, estimate_a_h, eta_from_xi, multi_hit_count, xi_from_eta,
    xi_hit_from_cluster,
};
use crate::engine::oracles::{
    cluster_normalizer, extinction_prob_oracle, levy_laplace_exponent, mass_laplace_oracle,
    particle_extinction_prob, particle_mass_laplace,
};
use crate::engine::{
    jump_compensator_check, run_replicates, simulate_coupled_with_law, tau_tail_experiment,
    EngineParams, ReducedOptions, ReducedSampler,
};
use crate::error::{domain, Error, Result};
use crate::hitting::{asymptotic_constant, extinction_equivalence, sandwich_check, transfer_check};
use crate::measure::AtomicMeasure;
use crate::neighborhood::{
    ensemble_scaling, lebesgue_constant, overlap_ladder, EnsembleCurve, ScalingOptions,
    TestFunction,
};
use crate::offspring::{OffspringLaw, DEFAULT_TAIL_CUTOFF};
use crate::pde::{
    estimate_c_beta_d, radial_convolution, richardson_check, solve_radial, v0_ode,
    ConstantEstimate, FarBoundary, InitialProfile, PdeConstantOptions, PdeProblem, Probe,
    DEFAULT_EPS_LADDER, DEFAULT_PROBES,
};
use crate::measure::heat_kernel_radial;
use crate::rng::derive_seed;
use crate::stats::{loglog_fit, null_binomial_stderr, EstimateWithError, RunningStats};

/// Default parameters of the suite.
pub const BETA: f64 = 0.8;
pub const DIM: usize = 3;

/// Name of the random generator, as recorded in reports.
pub const RNG_NAME: &str = crate::rng::GENERATOR_NAME;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Fast,
    Full,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Fast => "fast",
            Tier::Full => "full",
        })
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Tier::Fast),
            "full" => Ok(Tier::Full),
            other => Err(domain(format!("unknown tier {other:?} (expected fast or full)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIPPED",
        })
    }
}

/// Static description of one criterion.
#[derive(Debug, Clone, Copy)]
pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    pub paper_ref: &'static str,
    pub target: &'static str,
    pub budget_s: f64,
}

pub const CRITERIA: [Criterion; 14] = [
    Criterion {
        id: 1,
        name: "offspring-law identities",
        paper_ref: "Section 2, particle approximation (offspring generating function)",
        target: "sum p_k = 1, mean 1, p_1 = 0, p_2 = beta/2, recursion; all to 1e-10",
        budget_s: 1.0,
    },
    Criterion {
        id: 2,
        name: "total-mass Laplace functional",
        paper_ref: "Section 2, CSBP Laplace transform",
        target: "engine within 3 stderr of the continuum oracle on the (m,t,lambda) grid",
        budget_s: 120.0,
    },
    Criterion {
        id: 3,
        name: "extinction probability",
        paper_ref: "Section 2, CSBP extinction probability",
        target: "engine within 3 stderr of the continuum oracle on the (m,t) grid",
        budget_s: 120.0,
    },
    Criterion {
        id: 4,
        name: "coupling invariants",
        paper_ref: "Lemma 2.2",
        target: "subset property and pre-tau_K equality on every snapshot of 500 replicates",
        budget_s: 120.0,
    },
    Criterion {
        id: 5,
        name: "tau_K scaling",
        paper_ref: "Lemma 2.1",
        target: "log-log slope of P(tau_K <= t) in K equals -(1+beta) +- 0.1",
        budget_s: 300.0,
    },
    Criterion {
        id: 6,
        name: "jump compensator",
        paper_ref: "Eq. (1)",
        target: "Levy identity to 1e-8; r-tail slope -(1+beta) +- 0.1; level within 15%",
        budget_s: 600.0,
    },
    Criterion {
        id: 7,
        name: "a_K(h) bracket",
        paper_ref: "Lemma 2.3",
        target: "a_K(h) in [(beta h)^{1/beta}, 2 (beta h)^{1/beta}] within 3 stderr; K = infinity within 3 stderr of (beta h)^{1/beta}",
        budget_s: 600.0,
    },
    Criterion {
        id: 8,
        name: "cluster/process identities",
        paper_ref: "Lemma 3.1",
        target: "round trip to 1e-12; cross-estimator transfer within 3 combined stderr",
        budget_s: 300.0,
    },
    Criterion {
        id: 9,
        name: "PDE solver validation",
        paper_ref: "Section 4, semilinear equation",
        target: "linear sup error <= 1e-3; flat data vs ODE to 1e-6; Richardson refinement",
        budget_s: 300.0,
    },
    Criterion {
        id: 10,
        name: "c_{beta,d} triangulation",
        paper_ref: "Lemma 4.2, Theorem 4.3, Theorem 5.2",
        target: "PDE, hitting and Lebesgue estimates positive and pairwise within 25%",
        budget_s: 7200.0,
    },
    Criterion {
        id: 11,
        name: "hitting sandwich",
        paper_ref: "Lemma 3.2",
        target: "c_low > 0 and finite c_up on >= 9 (eps,t) points; K-process below the upper bound",
        budget_s: 1800.0,
    },
    Criterion {
        id: 12,
        name: "multi-hit and overlap exponents",
        paper_ref: "Lemma 3.5, Lemma 3.7",
        target: "eps-slopes equal 2(d - 2/beta) +- 0.3",
        budget_s: 1800.0,
    },
    Criterion {
        id: 13,
        name: "Lebesgue-scaling flatness",
        paper_ref: "Theorem 5.2, Lemma 5.1",
        target: "max/min of the scaled ratio <= 1.3 over one eps-decade in the validity band, full and K-process, >= 50 survivors",
        budget_s: 7200.0,
    },
    Criterion {
        id: 14,
        name: "extinction equivalence",
        paper_ref: "Theorem 3.3",
        target: "P(xi_t B > 0) <= C (mu p_2t ^ 1) with one C over t in {1,2,4,8}; diagnostics decline",
        budget_s: 600.0,
    },
];

/// Behaviour the suite does not attempt to reproduce.
pub const OUT_OF_SCOPE: [&str; 3] = [
    "almost-sure and vague convergence as such (only ensemble statistics are checked)",
    "exact values of a_K(h) beyond the bracket",
    "behaviour of the continuum superprocess below the particle resolution scale",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub paper_ref: String,
    pub target: String,
    pub status: Status,
    pub reason: Option<String>,
    pub metrics: BTreeMap<String, f64>,
    pub detail: Value,
    /// `c_{beta,d}` estimates produced along the way.
    pub constants: Vec<ConstantEstimate>,
    pub runtime_s: f64,
    pub budget_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub tier: Tier,
    pub seed: u64,
    pub rng: String,
    pub beta: f64,
    pub d: usize,
    pub results: Vec<CriterionResult>,
    pub out_of_scope: Vec<String>,
    pub passed: usize,
    pub failed: usize,
    pub skipped: usize,
}

impl VerifyReport {
    /// Whether every executed criterion passed.
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

/// Measured part of a result.
#[derive(Default)]
struct Outcome {
    skip: Option<String>,
    failures: Vec<String>,
    metrics: BTreeMap<String, f64>,
    detail: Value,
    constants: Vec<ConstantEstimate>,
}

impl Outcome {
    fn skipped(reason: impl Into<String>) -> Self {
        Self {
            skip: Some(reason.into()),
            ..Default::default()
        }
    }

    fn metric(&mut self, key: impl Into<String>, value: f64) {
        self.metrics.insert(key.into(), value);
    }

    fn require(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }
}

struct Ctx {
    tier: Tier,
    seed: u64,
}

impl Ctx {
    fn seed(&self, id: u8, label: u64) -> u64 {
        derive_seed(derive_seed(self.seed, 1000 + id as u64), label)
    }

    fn pick<T>(&self, fast: T, full: T) -> T {
        match self.tier {
            Tier::Fast => fast,
            Tier::Full => full,
        }
    }
}

fn origin() -> Vec<f64> {
    vec![0.0; DIM]
}

fn point_source(mass: f64) -> Result<AtomicMeasure> {
    AtomicMeasure::dirac(&origin(), mass)
}

fn to_json<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).unwrap_or(Value::Null)
}

/// Evaluates one criterion. Errors are reported as failures.
pub fn run_criterion(id: u8, tier: Tier, seed: u64) -> Result<CriterionResult> {
    let spec = CRITERIA
        .iter()
        .find(|c| c.id == id)
        .ok_or_else(|| domain(format!("no criterion {id}")))?;
    let ctx = Ctx { tier, seed };
    let start = Instant::now();
    let outcome = match id {
        1 => offspring_identities(),
        2 => mass_laplace(&ctx),
        3 => extinction(&ctx),
        4 => coupling(&ctx),
        5 => tau_scaling(&ctx),
        6 => compensator(&ctx),
        7 => normalizer_bracket(&ctx),
        8 => transfer(&ctx),
        9 => pde_validation(),
        10 => triangulation(&ctx),
        11 => sandwich(&ctx),
        12 => multi_hit(&ctx),
        13 => flatness(&ctx),
        14 => extinction_chain(&ctx),
        _ => unreachable!(),
    };
    let runtime_s = start.elapsed().as_secs_f64();
    let (status, reason, o) = match outcome {
        Err(e) => (Status::Fail, Some(format!("error: {e}")), Outcome::default()),
        Ok(o) => match &o.skip {
            Some(r) => (Status::Skipped, Some(r.clone()), o),
            None => {
                let mut failures = o.failures.clone();
                if runtime_s > spec.budget_s {
                    failures.push(format!(
                        "runtime {runtime_s:.1} s exceeds budget {} s",
                        spec.budget_s
                    ));
                }
                if failures.is_empty() {
                    (Status::Pass, None, o)
                } else {
                    (Status::Fail, Some(failures.join("; ")), o)
                }
            }
        },
    };
    Ok(CriterionResult {
        id,
        name: spec.name.into(),
        paper_ref: spec.paper_ref.into(),
        target: spec.target.into(),
        status,
        reason,
        metrics: o.metrics,
        detail: o.detail,
        constants: o.constants,
        runtime_s,
        budget_s: spec.budget_s,
    })
}

/// Runs the selected criteria (all when `ids` is empty), calling `progress`
/// after each one.
pub fn verify_with<F: FnMut(&CriterionResult)>(
    tier: Tier,
    seed: u64,
    ids: &[u8],
    mut progress: F,
) -> Result<VerifyReport> {
    let selected: Vec<u8> = if ids.is_empty() {
        CRITERIA.iter().map(|c| c.id).collect()
    } else {
        ids.to_vec()
    };
    let mut results = Vec::new();
    for id in selected {
        let r = run_criterion(id, tier, seed)?;
        progress(&r);
        results.push(r);
    }
    let count = |s: Status| results.iter().filter(|r| r.status == s).count();
    Ok(VerifyReport {
        tier,
        seed,
        rng: RNG_NAME.into(),
        beta: BETA,
        d: DIM,
        passed: count(Status::Pass),
        failed: count(Status::Fail),
        skipped: count(Status::Skipped),
        out_of_scope: OUT_OF_SCOPE.iter().map(|s| s.to_string()).collect(),
        results,
    })
}

pub fn verify(tier: Tier, seed: u64, ids: &[u8]) -> Result<VerifyReport> {
    verify_with(tier, seed, ids, |_| {})
}

fn offspring_identities() -> Result<Outcome> {
    let mut o = Outcome::default();
    let mut worst = BTreeMap::<&str, f64>::new();
    let mut bump = |k: &'static str, v: f64| {
        let e = worst.entry(k).or_insert(0.0);
        *e = e.max(v);
    };
    for beta in [0.3, 0.5, BETA, 0.95] {
        let law = OffspringLaw::new(beta, DEFAULT_TAIL_CUTOFF)?;
        let p = law.table();
        let m = law.cutoff() as u64;
        let sum: f64 = p.iter().sum::<f64>() + law.tail(m);
        let mean: f64 =
            p.iter().enumerate().map(|(k, q)| k as f64 * q).sum::<f64>() + law.tail_mean(m);
        bump("sum_error", (sum - 1.0).abs());
        bump("mean_error", (mean - 1.0).abs());
        bump("p1", p[1].abs());
        bump("p2_error", (p[2] - beta / 2.0).abs());
        bump("p0_error", (p[0] - 1.0 / (1.0 + beta)).abs());
        // closed form p_k = beta Gamma(k-1-beta) / (Gamma(1-beta) Gamma(k+1))
        let lg = ln_gamma(1.0 - beta);
        for k in 2..=m {
            let x = k as f64;
            let closed = (beta.ln() + ln_gamma(x - 1.0 - beta) - lg - ln_gamma(x + 1.0)).exp();
            bump("recursion_rel_error", (law.prob(k) / closed - 1.0).abs());
        }
        // table and analytic tail agree across the cutoff
        let x = (m + 1) as f64;
        let closed = (beta.ln() + ln_gamma(x - 1.0 - beta) - lg - ln_gamma(x + 1.0)).exp();
        bump("tail_rel_error", (law.prob(m + 1) / closed - 1.0).abs());
        let tail_sum: f64 = (m + 1..m + 2000).map(|k| law.prob(k)).sum();
        let tail_diff = law.tail(m) - law.tail(m + 1999);
        bump("tail_sum_rel_error", (tail_sum / tail_diff - 1.0).abs());
    }
    for (k, v) in worst {
        o.metric(k, v);
        o.require(v <= 1e-10, || format!("{k} = {v:.2e} exceeds 1e-10"));
    }
    Ok(o)
}

/// Total masses at `t` of replicates started from `m delta_0`.
fn final_masses(n: u64, m: f64, t: f64, reps: u64, seed: u64) -> Result<Vec<f64>> {
    let p = EngineParams::new(BETA, DIM, n, t)
        .with_positions(false)
        .with_seed(seed);
    let law = p.offspring_law()?;
    let sampler = ReducedSampler::new(&p, &law)?;
    let init = point_source(m)?;
    let opts = ReducedOptions::default();
    run_replicates(reps, seed, |_, rng| {
        Ok(sampler.sample(&init, &opts, rng)?[0].full_mass(n))
    })
}

const MASS_GRID: [(f64, f64); 4] = [(0.5, 0.25), (0.5, 1.0), (1.0, 0.25), (1.0, 1.0)];
const MASS_N: u64 = 10_000;
const MASS_REPS: u64 = 2000;

fn mass_laplace(ctx: &Ctx) -> Result<Outcome> {
    let mut o = Outcome::default();
    let mut rows = Vec::new();
    let mut max_z = 0.0f64;
    for (k, &(m, t)) in MASS_GRID.iter().enumerate() {
        let masses = final_masses(MASS_N, m, t, MASS_REPS, ctx.seed(2, k as u64))?;
        for lambda in [0.5, 2.0] {
            let x: Vec<f64> = masses.iter().map(|z| (-lambda * z).exp()).collect();
            let est = EstimateWithError::from_samples(&x)?;
            let oracle = mass_laplace_oracle(m, t, lambda, BETA);
            let z = est.z_score(oracle, 1e-15);
            max_z = max_z.max(z);
            rows.push(json!({
                "m": m, "t": t, "lambda": lambda,
                "estimate": est.value, "stderr": est.stderr,
                "oracle": oracle,
                "particle_oracle": particle_mass_laplace(m, t, lambda, BETA, MASS_N),
                "z": z,
            }));
        }
    }
    o.metric("max_z", max_z);
    o.metric("points", rows.len() as f64);
    o.require(max_z <= 3.0, || format!("largest deviation {max_z:.2} stderr"));
    o.detail = json!({ "n": MASS_N, "reps": MASS_REPS, "rows": rows });
    Ok(o)
}

fn extinction(ctx: &Ctx) -> Result<Outcome> {
    let mut o = Outcome::default();
    let mut rows = Vec::new();
    let mut max_z = 0.0f64;
    for (k, &(m, t)) in MASS_GRID.iter().enumerate() {
        let masses = final_masses(MASS_N, m, t, MASS_REPS, ctx.seed(3, k as u64))?;
        let dead = masses.iter().filter(|&&z| z == 0.0).count() as f64 / MASS_REPS as f64;
        let oracle = extinction_prob_oracle(m, t, BETA);
        let se = null_binomial_stderr(oracle, MASS_REPS);
        let z = (dead - oracle).abs() / se;
        max_z = max_z.max(z);
        rows.push(json!({
            "m": m, "t": t, "estimate": dead, "stderr": se, "oracle": oracle,
            "particle_oracle": particle_extinction_prob(m, t, BETA, MASS_N), "z": z,
        }));
    }
    o.metric("max_z", max_z);
    o.require(max_z <= 3.0, || format!("largest deviation {max_z:.2} stderr"));
    o.detail = json!({ "n": MASS_N, "reps": MASS_REPS, "rows": rows });
    Ok(o)
}

fn coupling(ctx: &Ctx) -> Result<Outcome> {
    let mut o = Outcome::default();
    let reps = 500;
    let p = EngineParams::new(BETA, DIM, 1000, 1.0)
        .with_truncation(Some(0.5))
        .with_snapshots(vec![0.25, 0.5, 0.75, 1.0])
        .with_seed(ctx.seed(4, 0));
    let law = p.offspring_law()?;
    let init = point_source(1.0)?;
    // (pre-tau snapshots, post-tau snapshots, violations)
    let runs = run_replicates(reps, p.seed, |_, rng| {
        let tr = simulate_coupled_with_law(&p, &law, &init, rng)?;
        let mut pre = 0u64;
        let mut post = 0u64;
        let mut bad = 0u64;
        for s in &tr.snapshots {
            let ps = s.particles.as_ref().expect("positions tracked");
            let kept = ps.kept.iter().filter(|&&k| k).count() as u64;
            let subset = s.kept_count <= s.full_count
                && kept == s.kept_count
                && ps.measure.len() as u64 == s.full_count
                && s.kept_exposure <= s.full_exposure;
            if !subset {
                bad += 1;
            }
            if s.time < tr.tau_k {
                pre += 1;
                if s.full_count != s.kept_count || !ps.all_kept() || s.kept_exposure != s.full_exposure {
                    bad += 1;
                }
            } else {
                post += 1;
            }
        }
        Ok((pre, post, bad))
    })?;
    let pre: u64 = runs.iter().map(|r| r.0).sum();
    let post: u64 = runs.iter().map(|r| r.1).sum();
    let bad: u64 = runs.iter().map(|r| r.2).sum();
    o.metric("snapshots_before_tau", pre as f64);
    o.metric("snapshots_after_tau", post as f64);
    o.metric("violations", bad as f64);
    o.require(bad == 0, || format!("{bad} snapshot violations"));
    o.require(pre > 0 && post > 0, || "both sides of tau_K must be exercised".into());
    o.detail = json!({ "n": p.mass_scale, "truncation": p.truncation, "reps": reps });
    Ok(o)
}

fn tau_scaling(ctx: &Ctx) -> Result<Outcome> {
    let mut o = Outcome::default();
    let reps = ctx.pick(2000, 8000);
    let ks = [0.5, 1.0, 2.0, 4.0];
    let init = point_source(1.0)?;
    let mut reports = Vec::new();
    for &k in &ks {
        // common random numbers across K
        let p = EngineParams::new(BETA, DIM, 1000, 0.1)
            .with_truncation(Some(k))
            .with_positions(false)
            .with_seed(ctx.seed(5, 0));
        reports.push(tau_tail_experiment(&p, &init, reps)?);
    }
    let est: Vec<EstimateWithError> = reports.iter().map(|r| r.estimate).collect();
    let fit = loglog_fit(&ks, &est)?;
    let target = -(1.0 + BETA);
    o.metric("slope", fit.slope);
    o.metric("slope_stderr", fit.slope_stderr);
    o.metric("target", target);
    o.require((fit.slope - target).abs() <= 0.1, || {
        format!("slope {:.3} outside {target} +- 0.1", fit.slope)
    });
    o.detail = json!({ "n": 1000, "horizon": 0.1, "reps": reps, "rows": to_json(&reports) });
    Ok(o)
}

fn compensator(ctx: &Ctx) -> Result<Outcome> {
    let mut o = Outcome::default();
    let mut levy_err = 0.0f64;
    for beta in [0.3, 0.5, BETA, 0.95] {
        for lambda in [0.01f64, 0.1, 0.5, 1.0, 2.0, 7.0, 100.0] {
            let want = lambda.powf(1.0 + beta);
            levy_err = levy_err.max((levy_laplace_exponent(lambda, beta) / want - 1.0).abs());
        }
    }
    o.metric("levy_identity_rel_error", levy_err);
    if levy_err > 1e-8 {
        o.require(false, || format!("Levy identity error {levy_err:.2e} exceeds 1e-8"));
        return Ok(o);
    }
    let reps = 2000;
    let r_ladder = [0.05, 0.1, 0.2, 0.4, 0.8];
    let p = EngineParams::new(BETA, DIM, 1000, 1.0)
        .with_positions(false)
        .with_jump_threshold(r_ladder[0])
        .with_seed(ctx.seed(6, 0));
    let law = p.offspring_law()?;
    let init = point_source(1.0)?;
    let batch = run_replicates(reps, p.seed, |_, rng| {
        simulate_coupled_with_law(&p, &law, &init, rng)
    })?;
    let rep = jump_compensator_check(&batch, &r_ladder, BETA, &law, None)?;
    let target = -(1.0 + BETA);
    let worst = rep.rows.iter().map(|r| (r.ratio - 1.0).abs()).fold(0.0, f64::max);
    o.metric("slope", rep.slope.slope);
    o.metric("slope_stderr", rep.slope.slope_stderr);
    o.metric("max_level_deviation", worst);
    o.metric("exposure", rep.exposure);
    o.require((rep.slope.slope - target).abs() <= 0.1, || {
        format!("slope {:.3} outside {target} +- 0.1", rep.slope.slope)
    });
    o.require(worst <= 0.15, || format!("level off by {:.1}%", 100.0 * worst));
    o.detail = json!({ "n": p.mass_scale, "reps": reps, "report": to_json(&rep) });
    Ok(o)
}

fn normalizer_bracket(ctx: &Ctx) -> Result<Outcome> {
    let mut o = Outcome::default();
    let n = ctx.pick(10_000, 1_000_000);
    let reps = ctx.pick(2000, 20_000);
    let mut rows = Vec::new();
    for (k, h) in [0.01, 0.03, 0.1].into_iter().enumerate() {
        let p = EngineParams::new(BETA, DIM, n, h)
            .with_truncation(Some(1.0))
            .with_seed(ctx.seed(7, k as u64));
        let r = estimate_a_h(h, &p, None, reps)?;
        let trunc = r.truncated.as_ref().expect("finite K");
        let z_full = r.full.value.z_score(r.lower, 1e-300);
        o.metric(format!("a_K(h={h})"), trunc.value.value);
        o.metric(format!("a(h={h})/lower"), r.full.value.value / r.lower);
        o.metric(format!("z_infinity(h={h})"), z_full);
        o.require(trunc.in_bracket, || format!("a_K({h}) outside the bracket"));
        o.require(z_full <= 3.0, || {
            format!("K = infinity at h = {h}: {z_full:.2} stderr from (beta h)^(1/beta)")
        });
        rows.push(r);
    }
    o.detail = json!({ "n": n, "reps": reps, "truncation": 1.0, "rows": to_json(&rows) });
    Ok(o)
}

fn transfer(ctx: &Ctx) -> Result<Outcome> {
    let mut o = Outcome::default();
    let mut round = 0.0f64;
    for p in [1e-12, 1e-9, 1e-6, 1e-3, 0.1, 0.5, 0.9, 0.999] {
        for a in [0.05, 0.757, 3.0] {
            round = round.max((xi_hit_from_cluster(cluster_hit_from_xi(p, a), a) / p - 1.0).abs());
        }
        for t in [0.1, 1.0, 8.0] {
            round = round.max((xi_from_eta(eta_from_xi(p, t, BETA), t, BETA) / p - 1.0).abs());
        }
    }
    o.metric("round_trip_rel_error", round);
    o.require(round <= 1e-12, || format!("round trip error {round:.2e}"));
    let n = ctx.pick(10_000, 100_000);
    let reps = ctx.pick(20_000, 50_000);
    let t = 1.0;
    let center = [1.0, 0.0, 0.0];
    let eps = [0.4, 0.2, 0.1];
    let p = EngineParams::new(BETA, DIM, n, t).with_seed(ctx.seed(8, 0));
    let rows = transfer_check(&p, &point_source(1.0)?, t, &center, &eps, reps)?;
    let max_z = rows.iter().map(|r| r.z).fold(0.0, f64::max);
    o.metric("transfer_max_z", max_z);
    o.require(max_z <= 3.0, || format!("transfer deviates by {max_z:.2} stderr"));
    o.detail = json!({
        "n": n, "reps": reps, "t": t, "center": center,
        "normalizer": cluster_normalizer(t, BETA), "rows": to_json(&rows),
    });
    Ok(o)
}

fn pde_validation() -> Result<Outcome> {
    let mut o = Outcome::default();
    // pure heat flow against a direct Gaussian convolution of the bump
    let mut lin = PdeProblem::new(BETA, DIM, 1.0);
    lin.reaction = false;
    let times = [0.05, 0.3, 1.0];
    let sol = solve_radial(&lin, &times)?;
    let mut lin_err = 0.0f64;
    for (ti, &t) in times.iter().enumerate() {
        for k in 0..=60 {
            let r = k as f64 * 0.05;
            let exact = radial_convolution(
                |s| InitialProfile::Bump.eval(s),
                |u| heat_kernel_radial(t, u, DIM).unwrap_or(0.0),
                r,
                DIM,
                1.0,
                1000,
                400,
            );
            lin_err = lin_err.max((sol.value(ti, r) - exact).abs());
        }
    }
    o.metric("linear_sup_error", lin_err);
    o.require(lin_err <= 1e-3, || format!("linear sup error {lin_err:.2e}"));

    let theta = 5.0;
    let mut flat = PdeProblem::new(BETA, DIM, theta).with_profile(InitialProfile::Flat);
    flat.grid.far = FarBoundary::Neumann;
    let times = [0.1, 1.0, 10.0];
    let sol = solve_radial(&flat, &times)?;
    let mut flat_err = 0.0f64;
    for (ti, &t) in times.iter().enumerate() {
        let want = v0_ode(t, theta, BETA);
        for &v in &sol.values[ti] {
            flat_err = flat_err.max((v - want).abs() / want);
        }
    }
    o.metric("flat_rel_error", flat_err);
    o.require(flat_err <= 1e-6, || format!("flat-data error {flat_err:.2e}"));

    let rich = richardson_check(
        &PdeProblem::new(BETA, DIM, 100.0),
        1.0,
        &[0.0, 0.5, 1.0, 2.0, 3.0],
        1e-3,
    )?;
    o.metric("richardson_order", rich.observed_order);
    o.metric("richardson_error_estimate", rich.error_estimate);
    o.require(rich.passed, || "Richardson refinement failed".into());
    o.detail = json!({ "richardson": to_json(&rich) });
    Ok(o)
}

/// Lebesgue route source mass: small enough that surviving replicates are
/// mostly single clusters.
const LEBESGUE_MASS: f64 = 0.2;
/// Monte-Carlo ladder shared by the hitting and Lebesgue routes.
const MC_EPS_LADDER: [f64; 5] = [0.4, 0.28, 0.2, 0.14, 0.1];

fn triangulation(ctx: &Ctx) -> Result<Outcome> {
    if ctx.tier == Tier::Fast {
        return Ok(Outcome::skipped(
            "triangulation is defined at the full tier (N = 10^6)",
        ));
    }
    let mut o = Outcome::default();
    let n = 1_000_000;
    let pde = estimate_c_beta_d(
        BETA,
        DIM,
        &DEFAULT_EPS_LADDER,
        &DEFAULT_PROBES,
        &PdeConstantOptions::default(),
    )?;
    let hp = EngineParams::new(BETA, DIM, n, 1.0).with_seed(ctx.seed(10, 0));
    let hit = asymptotic_constant(&hp, 1.0, &DEFAULT_PROBES, &MC_EPS_LADDER, 50_000)?;
    let lp = EngineParams::new(BETA, DIM, n, 1.0).with_seed(ctx.seed(10, 1));
    let leb = lebesgue_constant(
        &lp,
        LEBESGUE_MASS,
        &[Probe { t: 1.0, x: 0.0 }],
        &MC_EPS_LADDER,
        8.0,
        1000,
    )?;
    let values = [pde.value, hit.value, leb.value];
    let names = ["pde", "hitting", "lebesgue"];
    for (name, c) in names.iter().zip([&pde, &hit, &leb]) {
        o.metric(format!("c_{name}"), c.value);
        o.metric(format!("c_{name}_error"), c.error_bar);
        o.require(c.value > 0.0, || format!("{name} estimate not positive"));
    }
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in i + 1..3 {
            let rel = (values[i] - values[j]).abs() / values[i].min(values[j]);
            worst = worst.max(rel);
            o.require(rel <= 0.25, || {
                format!("{} vs {} differ by {:.1}%", names[i], names[j], 100.0 * rel)
            });
        }
    }
    o.metric("max_pairwise_rel_diff", worst);
    o.detail = json!({ "n": n, "mc_eps_ladder": MC_EPS_LADDER, "hitting_reps": 50_000,
        "lebesgue_reps": 1000, "lebesgue_mass": LEBESGUE_MASS });
    o.constants = vec![pde, hit, leb];
    Ok(o)
}

fn sandwich(ctx: &Ctx) -> Result<Outcome> {
    let mut o = Outcome::default();
    let n = ctx.pick(10_000, 100_000);
    let reps = ctx.pick(4000, 20_000);
    let p = EngineParams::new(BETA, DIM, n, 1.0)
        .with_truncation(Some(1.0))
        .with_seed(ctx.seed(11, 0));
    let rep = sandwich_check(
        &p,
        &point_source(1.0)?,
        &[1.0, 0.0, 0.0],
        &[1.0, 2.0, 4.0],
        &[0.4, 0.2, 0.1],
        reps,
    )?;
    o.metric("points", rep.points.len() as f64);
    o.metric("c_low", rep.c_low);
    o.metric("c_low_margin", rep.c_low_margin);
    o.metric("c_up", rep.c_up);
    o.metric("c_up_truncated", rep.c_up_truncated);
    o.require(rep.points.len() >= 9, || "fewer than 9 grid points".into());
    o.require(rep.c_low_margin > 0.0, || "c_low not positive within 3 stderr".into());
    o.require(rep.c_up.is_finite(), || "c_up not finite".into());
    o.require(rep.c_up_truncated <= rep.c_up, || "K-process exceeds the upper bound".into());
    o.detail = json!({ "n": n, "reps": reps, "report": to_json(&rep) });
    Ok(o)
}

fn multi_hit(ctx: &Ctx) -> Result<Outcome> {
    let mut o = Outcome::default();
    let (t, h) = (2.0, 1.0);
    let eps = [0.25, 0.177, 0.125, 0.088, 0.0625];
    let init = point_source(1.0)?;
    let target = 2.0 * (DIM as f64 - 2.0 / BETA);
    let n = ctx.pick(10_000, 1_000_000);
    let reps = ctx.pick(20_000, 50_000);
    let p = EngineParams::new(BETA, DIM, n, t)
        .with_truncation(Some(1.0))
        .with_seed(ctx.seed(12, 0));
    let mh = multi_hit_count(&p, &init, h, &origin(), &eps, reps)?;
    let n_ov = ctx.pick(10_000, 100_000);
    let reps_ov = ctx.pick(100, 200);
    let p = EngineParams {
        mass_scale: n_ov,
        seed: ctx.seed(12, 1),
        ..p
    };
    let ov = overlap_ladder(&p, &init, h, &eps, reps_ov)?;
    o.metric("target", target);
    for (name, fit) in [("multi_hit", mh.slope), ("overlap", ov.slope)] {
        match fit {
            Some(f) => {
                o.metric(format!("{name}_slope"), f.slope);
                o.metric(format!("{name}_slope_stderr"), f.slope_stderr);
                o.require((f.slope - target).abs() <= 0.3, || {
                    format!("{name} slope {:.3} outside {target} +- 0.3", f.slope)
                });
            }
            None => o.require(false, || format!("{name} slope undefined")),
        }
    }
    o.metric("multi_hit_fitted_constant", mh.fitted_constant);
    o.detail = json!({
        "t": t, "h": h, "truncation": 1.0,
        "multi_hit": { "n": n, "reps": reps, "report": to_json(&mh) },
        "overlap": { "n": n_ov, "reps": reps_ov, "report": to_json(&ov) },
    });
    Ok(o)
}

/// Flatness over the finest decade backed by `min_count` replicates, for
/// every test function that has one.
fn curve_flatness(curve: &EnsembleCurve, nf: usize, min_count: u64) -> Vec<(usize, f64, f64)> {
    (0..nf)
        .filter_map(|f| {
            let (ratio, top) = curve.flattest_decade(f, min_count)?;
            Some((f, ratio, top))
        })
        .collect()
}

fn flatness(ctx: &Ctx) -> Result<Outcome> {
    if ctx.tier == Tier::Fast {
        return Ok(Outcome::skipped(
            "flatness is defined at the full tier (N >= 10^5)",
        ));
    }
    let mut o = Outcome::default();
    let n = 100_000;
    let reps = 100;
    let min_count = 50;
    let p = EngineParams::new(BETA, DIM, n, 1.0)
        .with_truncation(Some(1.0))
        .with_seed(ctx.seed(13, 0));
    let ladder: Vec<f64> = (0..=12).map(|i| 10f64.powf(-(i as f64) / 6.0)).collect();
    let fns = TestFunction::default_family(&[origin(), vec![0.7, 0.0, 0.0]], 1.0);
    let ens = ensemble_scaling(
        &p,
        &point_source(1.0)?,
        &ladder,
        &fns,
        reps,
        &ScalingOptions::default(),
    )?;
    o.metric("surviving", ens.surviving as f64);
    o.metric("coupling_violations", ens.coupling_violations as f64);
    o.require(ens.surviving >= min_count, || {
        format!("only {} surviving replicates", ens.surviving)
    });
    o.require(ens.coupling_violations == 0, || "coupled curves differ".into());
    for (label, curve) in [("full", &ens.full), ("truncated", &ens.truncated)] {
        let flat = curve_flatness(curve, fns.len(), min_count);
        o.require(flat.iter().any(|f| f.0 == 0), || {
            format!("{label}: no decade with {min_count} replicates")
        });
        for (f, ratio, top) in flat {
            o.metric(format!("{label}_f{f}_max_over_min"), ratio);
            o.metric(format!("{label}_f{f}_decade_top"), top);
            o.require(ratio <= 1.3, || format!("{label} f{f}: max/min {ratio:.3}"));
        }
    }
    o.detail = json!({ "n": n, "reps": reps, "t": 1.0, "truncation": 1.0,
        "ladder": ladder, "ensemble": to_json(&ens) });
    Ok(o)
}

fn extinction_chain(ctx: &Ctx) -> Result<Outcome> {
    let mut o = Outcome::default();
    let n = ctx.pick(10_000, 100_000);
    let reps = 4000;
    let p = EngineParams::new(BETA, DIM, n, 8.0).with_seed(ctx.seed(14, 0));
    let rep = extinction_equivalence(
        &p,
        &point_source(1.0)?,
        &[1.0, 2.0, 4.0, 8.0],
        &origin(),
        0.5,
        reps,
    )?;
    // the bound chain with the fitted constant, within three stderr
    let c = rep.fitted_constant;
    let chain = rep.rows.iter().all(|r| r.hit.value <= c * r.bound + 3.0 * r.hit.stderr);
    o.metric("fitted_constant", c);
    o.require(c.is_finite() && c > 0.0, || "no finite fitted constant".into());
    o.require(chain, || "bound chain violated".into());
    o.require(rep.monotone, || "diagnostics do not decline".into());
    o.require(rep.survival_matches, || "survival frequencies off the exact value".into());
    let hits: RunningStats = rep.rows.iter().map(|r| r.hit.value).collect();
    o.metric("mean_hit", hits.mean());
    o.detail = json!({ "n": n, "reps": reps, "report": to_json(&rep) });
    Ok(o)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_criterion_listed_once() {
        let ids: Vec<u8> = CRITERIA.iter().map(|c| c.id).collect();
        assert_eq!(ids, (1..=14).collect::<Vec<u8>>());
    }

    #[test]
    fn tiers_parse() {
        assert_eq!("fast".parse::<Tier>().unwrap(), Tier::Fast);
        assert_eq!("full".parse::<Tier>().unwrap(), Tier::Full);
        assert!("slow".parse::<Tier>().is_err());
    }

    #[test]
    fn offspring_criterion_passes() {
        let r = run_criterion(1, Tier::Fast, 1).unwrap();
        assert_eq!(r.status, Status::Pass, "{:?}", r.reason);
    }

    #[test]
    fn full_tier_only_criteria_are_skipped_fast() {
        let r = run_criterion(10, Tier::Fast, 1).unwrap();
        assert_eq!(r.status, Status::Skipped);
        assert!(r.reason.is_some());
    }

    #[test]
    fn unknown_criterion_is_an_error() {
        assert!(run_criterion(15, Tier::Fast, 1).is_err());
    }
}
