use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use suplab::cluster::estimate_a_h;
use suplab::engine::{
    run_replicates, simulate_coupled_with_law, EngineParams, ReducedOptions, ReducedSampler,
};
use suplab::hitting::{asymptotic_constant, hit_ladder, scaled_rate};
use suplab::measure::{write_snapshot_csv, AtomicMeasure};
use suplab::neighborhood::{
    ensemble_scaling, scaling_curve, validity_band, ScalingOptions, TestFunction,
};
use suplab::pde::{estimate_c_beta_d, ConstantEstimate, PdeConstantOptions, Probe};
use suplab::rng::{replicate_rng, GENERATOR_NAME};
use suplab::verify::{verify_with, Status, Tier, VerifyReport};

/// Environment variable naming the default output root.
const OUTPUT_ROOT_VAR: &str = "SUPLAB_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "suplab", version, about = "Stable-branching superprocess laboratory")]
struct Cli {
    /// TOML file of key = value settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the coupled particle system and store its snapshots and jumps.
    Simulate,
    /// Estimate the cluster normaliser a_K(h).
    Cluster,
    /// Ensemble Lebesgue-scaling curves of eps-neighbourhoods.
    Neighborhood,
    /// Hitting probabilities of small balls, optionally with c_{beta,d}.
    Hitting {
        /// Also extrapolate c_{beta,d} at the probes (t, |x|) = (1, 0), (2, 1).
        #[arg(long)]
        constant: bool,
    },
    /// c_{beta,d} from the semilinear PDE.
    Pde,
    /// Run the acceptance suite.
    Verify,
    /// Summarise a run directory.
    Report { dir: PathBuf },
}

/// Settings shared by every experiment. Each may come from the config file
/// or a flag; unset values take documented defaults.
#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Settings {
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    d: Option<usize>,
    /// Particles per unit mass.
    #[arg(long, global = true)]
    n: Option<u64>,
    /// Mass of the point source at the origin.
    #[arg(long, global = true)]
    mass: Option<f64>,
    /// Observation time.
    #[arg(long, global = true)]
    t: Option<f64>,
    /// Truncation level K (omit for none).
    #[arg(long, global = true)]
    truncation: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long, global = true)]
    reps: Option<u64>,
    /// Cluster age h.
    #[arg(long, global = true)]
    h: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    center: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    snapshots: Option<Vec<f64>>,
    #[arg(long, global = true)]
    jump_threshold: Option<f64>,
    #[arg(long, global = true)]
    voxels_per_eps: Option<f64>,
    #[arg(long, global = true)]
    tier: Option<String>,
    /// Criterion ids to run (default all).
    #[arg(long, global = true, value_delimiter = ',')]
    criteria: Option<Vec<u8>>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

impl Settings {
    fn merged_over(self, base: Settings) -> Settings {
        macro_rules! pick {
            ($($f:ident),*) => { Settings { $($f: self.$f.or(base.$f)),* } };
        }
        pick!(
            seed, beta, d, n, mass, t, truncation, eps, reps, h, center, snapshots,
            jump_threshold, voxels_per_eps, tier, criteria, threads, output_dir
        )
    }
}

/// Settings with every default filled in, as written to the manifest.
#[derive(Debug, Clone, Serialize)]
struct Resolved {
    experiment: String,
    seed: u64,
    beta: f64,
    d: usize,
    n: u64,
    mass: f64,
    t: f64,
    truncation: Option<f64>,
    eps: Vec<f64>,
    reps: u64,
    h: f64,
    center: Vec<f64>,
    snapshots: Vec<f64>,
    jump_threshold: f64,
    voxels_per_eps: f64,
    tier: Tier,
    criteria: Vec<u8>,
    threads: usize,
    output_dir: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<suplab::Error> for Failure {
    fn from(e: suplab::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn resolve(experiment: &str, s: Settings) -> Result<Resolved, Failure> {
    let seed = s.seed.unwrap_or(1);
    let beta = s.beta.unwrap_or(0.8);
    let d = s.d.unwrap_or(3);
    let n = s.n.unwrap_or(10_000);
    let t = s.t.unwrap_or(1.0);
    if !(beta > 0.0 && beta < 1.0) {
        return Err(usage("beta must lie in (0, 1)"));
    }
    if d == 0 || n == 0 {
        return Err(usage("d and n must be positive"));
    }
    let tier = match s.tier.as_deref() {
        None => Tier::Fast,
        Some(x) => x.parse().map_err(|e: suplab::Error| usage(e.to_string()))?,
    };
    let center = s.center.unwrap_or_else(|| vec![0.0; d]);
    if center.len() != d {
        return Err(usage(format!("center needs {d} coordinates")));
    }
    let output_dir = s.output_dir.unwrap_or_else(|| {
        let root = std::env::var_os(OUTPUT_ROOT_VAR)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(format!("{experiment}-seed{seed}"))
    });
    Ok(Resolved {
        experiment: experiment.into(),
        seed,
        beta,
        d,
        n,
        mass: s.mass.unwrap_or(1.0),
        t,
        truncation: s.truncation,
        eps: s.eps.unwrap_or_else(|| vec![0.4, 0.2, 0.1]),
        reps: s.reps.unwrap_or(1000),
        h: s.h.unwrap_or(0.1),
        center,
        snapshots: s.snapshots.unwrap_or_else(|| vec![t]),
        jump_threshold: s.jump_threshold.unwrap_or(10.0 / n as f64),
        voxels_per_eps: s.voxels_per_eps.unwrap_or(8.0),
        tier,
        criteria: s.criteria.unwrap_or_default(),
        threads: s.threads.unwrap_or_else(rayon::current_num_threads),
        output_dir,
    })
}

fn engine_params(r: &Resolved, horizon: f64) -> EngineParams {
    EngineParams::new(r.beta, r.d, r.n, horizon)
        .with_truncation(r.truncation)
        .with_seed(r.seed)
}

fn source(r: &Resolved) -> Result<AtomicMeasure, Failure> {
    Ok(AtomicMeasure::dirac(&vec![0.0; r.d], r.mass)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let f = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

fn write_manifest(r: &Resolved, extra: Value) -> Result<(), Failure> {
    fs::create_dir_all(&r.output_dir)?;
    let manifest = json!({
        "code_version": env!("CARGO_PKG_VERSION"),
        "generator": GENERATOR_NAME,
        "config": r,
        "extra": extra,
    });
    write_json(&r.output_dir.join("manifest.json"), &manifest)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, Failure> {
    Ok(csv::Writer::from_path(path)?)
}

fn simulate(r: &Resolved) -> Result<bool, Failure> {
    let p = engine_params(r, r.snapshots.iter().cloned().fold(r.t, f64::max))
        .with_snapshots(r.snapshots.clone())
        .with_jump_threshold(r.jump_threshold);
    p.validate()?;
    let law = p.offspring_law()?;
    let init = source(r)?;
    let runs = run_replicates(r.reps, p.seed, |_, rng| {
        simulate_coupled_with_law(&p, &law, &init, rng)
    })?;
    write_manifest(r, json!({ "engine": "direct", "params": p }))?;
    let snaps = r.output_dir.join("snapshots");
    fs::create_dir_all(&snaps)?;
    let mut jumps = csv_writer(&r.output_dir.join("jumps.csv"))?;
    jumps.write_record(["replicate", "time", "net_mass", "truncated", "in_k_process"])?;
    let mut summary = Vec::new();
    for (i, tr) in runs.iter().enumerate() {
        for (j, s) in tr.snapshots.iter().enumerate() {
            if let Some(ps) = &s.particles {
                let f = fs::File::create(snaps.join(format!("rep{i}_t{j}.csv")))?;
                write_snapshot_csv(ps, BufWriter::new(f))?;
            }
        }
        for e in &tr.jump_log.events {
            jumps.write_record([
                i.to_string(),
                e.time.to_string(),
                e.net_mass.to_string(),
                u8::from(e.truncated).to_string(),
                u8::from(e.in_k_process).to_string(),
            ])?;
        }
        summary.push(json!({
            "replicate": i,
            "tau_k": if tr.tau_k.is_finite() { json!(tr.tau_k) } else { Value::Null },
            "full_mass": tr.snapshots.iter().map(|s| s.full_mass(p.mass_scale)).collect::<Vec<_>>(),
            "kept_mass": tr.snapshots.iter().map(|s| s.kept_mass(p.mass_scale)).collect::<Vec<_>>(),
        }));
    }
    jumps.flush()?;
    write_json(&r.output_dir.join("report.json"), &json!({ "replicates": summary }))?;
    Ok(true)
}

fn cluster(r: &Resolved) -> Result<bool, Failure> {
    let p = engine_params(r, r.h);
    let rep = estimate_a_h(r.h, &p, Some(r.mass), r.reps)?;
    write_manifest(r, json!({ "params": p }))?;
    let mut w = csv_writer(&r.output_dir.join("normalizer.csv"))?;
    w.write_record(["h", "component", "estimate", "stderr", "lower", "upper", "in_bracket"])?;
    let mut rows = vec![("full", &rep.full)];
    if let Some(k) = &rep.truncated {
        rows.push(("truncated", k));
    }
    for (name, e) in &rows {
        w.write_record([
            rep.h.to_string(),
            name.to_string(),
            e.value.value.to_string(),
            e.value.stderr.to_string(),
            rep.lower.to_string(),
            rep.upper.to_string(),
            e.in_bracket.to_string(),
        ])?;
    }
    w.flush()?;
    write_json(&r.output_dir.join("report.json"), &rep)?;
    Ok(rows.iter().all(|(_, e)| e.in_bracket))
}

fn neighborhood(r: &Resolved) -> Result<bool, Failure> {
    let p = engine_params(r, r.t);
    let init = source(r)?;
    let fns = TestFunction::default_family(&[vec![0.0; r.d]], 1.0);
    let opts = ScalingOptions {
        voxels_per_eps: r.voxels_per_eps,
        ..Default::default()
    };
    let mut eps = r.eps.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    let ens = ensemble_scaling(&p, &init, &eps, &fns, r.reps, &opts)?;
    // one replicate in full detail
    let law = p.offspring_law()?;
    let sampler = ReducedSampler::new(&p, &law)?;
    let mut rng = replicate_rng(p.seed, 0);
    let snap = sampler.sample(&init, &ReducedOptions::default(), &mut rng)?;
    let particles = snap[0].particles.as_ref().expect("positions tracked");
    let single = scaling_curve(particles, r.beta, &eps, &fns, &opts)?;
    let band = validity_band(&particles.measure, opts.spacing_queries);
    write_manifest(
        r,
        json!({ "params": p, "options": opts, "test_functions": fns, "validity_band": band }),
    )?;
    let mut w = csv_writer(&r.output_dir.join("scaling.csv"))?;
    w.write_record(["eps", "volume", "f_id", "raw", "scaled_ratio"])?;
    if let Some(c) = &single.full {
        for row in &c.rows {
            w.write_record([
                row.eps.to_string(),
                row.volume.to_string(),
                row.f_id.to_string(),
                row.raw.to_string(),
                row.scaled_ratio.to_string(),
            ])?;
        }
    }
    w.flush()?;
    let mut w = csv_writer(&r.output_dir.join("ensemble.csv"))?;
    w.write_record(["component", "eps", "f_id", "mean_ratio", "stderr", "count"])?;
    for (name, curve) in [("full", &ens.full), ("truncated", &ens.truncated)] {
        for row in &curve.rows {
            w.write_record([
                name.to_string(),
                row.eps.to_string(),
                row.f_id.to_string(),
                row.mean_ratio.to_string(),
                row.stderr.to_string(),
                row.count.to_string(),
            ])?;
        }
    }
    w.flush()?;
    write_json(
        &r.output_dir.join("report.json"),
        &json!({ "ensemble": ens, "single_replicate": single }),
    )?;
    Ok(ens.coupling_violations == 0)
}

fn hitting(r: &Resolved, constant: bool) -> Result<bool, Failure> {
    let p = engine_params(r, r.t);
    let init = source(r)?;
    let ladder = hit_ladder(&p, &init, r.t, &r.center, &r.eps, r.reps)?;
    let reference = init.convolve_heat(r.t, &r.center)?;
    write_manifest(r, json!({ "params": p }))?;
    let mut w = csv_writer(&r.output_dir.join("hitting.csv"))?;
    w.write_record([
        "eps", "p_full", "stderr_full", "p_truncated", "stderr_truncated", "scaled_ratio",
    ])?;
    for (j, &eps) in r.eps.iter().enumerate() {
        let (s, _) = scaled_rate(&ladder.full[j], eps, r.beta, r.d);
        w.write_record([
            eps.to_string(),
            ladder.full[j].value.to_string(),
            ladder.full[j].stderr.to_string(),
            ladder.truncated[j].value.to_string(),
            ladder.truncated[j].stderr.to_string(),
            (s / reference).to_string(),
        ])?;
    }
    w.flush()?;
    if constant {
        let probes = [Probe { t: 1.0, x: 0.0 }, Probe { t: 2.0, x: 1.0 }];
        let c = asymptotic_constant(&p, r.mass, &probes, &r.eps, r.reps)?;
        write_constants(&r.output_dir, &[c])?;
    }
    write_json(&r.output_dir.join("report.json"), &ladder)?;
    Ok(true)
}

fn write_constants(dir: &Path, constants: &[ConstantEstimate]) -> Result<(), Failure> {
    let entries: Vec<Value> = constants
        .iter()
        .map(|c| json!({ "method": c.method, "c_beta_d": c.value, "error_bar": c.error_bar, "estimate": c }))
        .collect();
    write_json(&dir.join("constants.json"), &entries)?;
    let mut w = csv_writer(&dir.join("constant_ladders.csv"))?;
    w.write_record(["method", "probe_t", "probe_x", "eps", "big_t", "raw", "corrected", "stderr"])?;
    for c in constants {
        let method = serde_json::to_value(c.method)?;
        let method = method.as_str().unwrap_or_default().to_string();
        for pr in &c.probes {
            for pt in &pr.ladder {
                w.write_record([
                    method.clone(),
                    pr.probe.t.to_string(),
                    pr.probe.x.to_string(),
                    pt.eps.to_string(),
                    pt.big_t.to_string(),
                    pt.raw.to_string(),
                    pt.corrected.to_string(),
                    pt.stderr.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn pde(r: &Resolved) -> Result<bool, Failure> {
    let eps: Vec<f64> = if r.eps.iter().all(|&e| e <= 1e-2) {
        r.eps.clone()
    } else {
        suplab::pde::DEFAULT_EPS_LADDER.to_vec()
    };
    let opts = PdeConstantOptions::default();
    let c = estimate_c_beta_d(r.beta, r.d, &eps, &suplab::pde::DEFAULT_PROBES, &opts)?;
    write_manifest(r, json!({ "pde_eps_ladder": eps, "options": opts }))?;
    let ok = c.value > 0.0;
    write_constants(&r.output_dir, &[c])?;
    Ok(ok)
}

fn run_verify(r: &Resolved) -> Result<bool, Failure> {
    write_manifest(r, json!({ "suite": "acceptance" }))?;
    let report = verify_with(r.tier, r.seed, &r.criteria, |c| {
        eprintln!(
            "criterion {:>2} {:<7} {:<32} {:>8.1} s{}",
            c.id,
            c.status.to_string(),
            c.name,
            c.runtime_s,
            c.reason.as_deref().map(|s| format!("  ({s})")).unwrap_or_default()
        );
    })?;
    write_json(&r.output_dir.join("report.json"), &report)?;
    let mut w = csv_writer(&r.output_dir.join("criteria.csv"))?;
    w.write_record(["id", "name", "paper_ref", "status", "runtime_s", "budget_s"])?;
    for c in &report.results {
        w.write_record([
            c.id.to_string(),
            c.name.clone(),
            c.paper_ref.clone(),
            c.status.to_string(),
            c.runtime_s.to_string(),
            c.budget_s.to_string(),
        ])?;
    }
    w.flush()?;
    let constants: Vec<ConstantEstimate> =
        report.results.iter().flat_map(|c| c.constants.clone()).collect();
    if !constants.is_empty() {
        write_constants(&r.output_dir, &constants)?;
    }
    Ok(report.all_passed())
}

fn report(dir: &Path) -> Result<bool, Failure> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.is_file() {
        return Err(Failure::Runtime(format!(
            "{} contains no manifest.json; nothing to report",
            dir.display()
        )));
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    let cfg = &manifest["config"];
    println!(
        "run: {}  seed {}  code {}",
        cfg["experiment"].as_str().unwrap_or("?"),
        cfg["seed"],
        manifest["code_version"].as_str().unwrap_or("?")
    );
    let mut ok = true;
    let report_path = dir.join("report.json");
    if cfg["experiment"] == "verify" && report_path.is_file() {
        let rep: VerifyReport = serde_json::from_str(&fs::read_to_string(&report_path)?)?;
        println!("tier: {}\n", rep.tier);
        println!("{:>3}  {:<8} {:<34} {:>9}  reference", "id", "status", "criterion", "time/s");
        for c in &rep.results {
            println!(
                "{:>3}  {:<8} {:<34} {:>9.1}  {}",
                c.id,
                c.status.to_string(),
                c.name,
                c.runtime_s,
                c.paper_ref
            );
            if c.status != Status::Pass {
                if let Some(why) = &c.reason {
                    println!("     {why}");
                }
            }
        }
        println!(
            "\n{} passed, {} failed, {} skipped",
            rep.passed, rep.failed, rep.skipped
        );
        println!("out of scope: {}", rep.out_of_scope.join("; "));
        ok = rep.all_passed();
        write_ladders(dir, &rep)?;
    }
    let constants_path = dir.join("constants.json");
    if constants_path.is_file() {
        let entries: Vec<Value> = serde_json::from_str(&fs::read_to_string(&constants_path)?)?;
        println!("\nc_beta,d estimates:");
        for e in &entries {
            println!(
                "  {:<16} {:>10.4} +- {:.4}",
                e["method"].as_str().unwrap_or("?"),
                e["c_beta_d"].as_f64().unwrap_or(f64::NAN),
                e["error_bar"].as_f64().unwrap_or(f64::NAN)
            );
        }
    }
    let mut csvs: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    csvs.sort();
    if !csvs.is_empty() {
        println!("\nplot-ready CSV files: {}", csvs.join(", "));
    }
    Ok(ok)
}

/// Extracts the K-, t- and eps-ladders of a verify report into CSV files.
fn write_ladders(dir: &Path, rep: &VerifyReport) -> Result<(), Failure> {
    for c in &rep.results {
        match c.id {
            5 => {
                let mut w = csv_writer(&dir.join("k_ladder.csv"))?;
                w.write_record(["truncation", "estimate", "stderr", "indicator", "rate_comparison"])?;
                for row in c.detail["rows"].as_array().into_iter().flatten() {
                    w.write_record([
                        row["truncation"].to_string(),
                        row["estimate"]["value"].to_string(),
                        row["estimate"]["stderr"].to_string(),
                        row["indicator"]["value"].to_string(),
                        row["rate_comparison"].to_string(),
                    ])?;
                }
                w.flush()?;
            }
            14 => {
                let mut w = csv_writer(&dir.join("t_ladder.csv"))?;
                w.write_record(["t", "hit", "hit_stderr", "ball_mass", "survival", "bound"])?;
                for row in c.detail["report"]["rows"].as_array().into_iter().flatten() {
                    w.write_record([
                        row["t"].to_string(),
                        row["hit"]["value"].to_string(),
                        row["hit"]["stderr"].to_string(),
                        row["ball_mass"]["value"].to_string(),
                        row["survival"]["value"].to_string(),
                        row["bound"].to_string(),
                    ])?;
                }
                w.flush()?;
            }
            12 => {
                let mut w = csv_writer(&dir.join("eps_ladder_multi_hit.csv"))?;
                w.write_record(["eps", "pairs", "pairs_stderr", "bound"])?;
                let rows = &c.detail["multi_hit"]["report"]["rows"];
                for row in rows.as_array().into_iter().flatten() {
                    w.write_record([
                        row["eps"].to_string(),
                        row["pairs"]["value"].to_string(),
                        row["pairs"]["stderr"].to_string(),
                        row["bound"].to_string(),
                    ])?;
                }
                w.flush()?;
            }
            _ => {}
        }
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<Settings, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<bool, Failure> {
    if let Command::Report { dir } = &cli.command {
        return report(dir);
    }
    let file = match &cli.config {
        Some(p) => load_config(p)?,
        None => Settings::default(),
    };
    let settings = cli.settings.merged_over(file);
    let name = match &cli.command {
        Command::Simulate => "simulate",
        Command::Cluster => "cluster",
        Command::Neighborhood => "neighborhood",
        Command::Hitting { .. } => "hitting",
        Command::Pde => "pde",
        Command::Verify => "verify",
        Command::Report { .. } => unreachable!(),
    };
    let r = resolve(name, settings)?;
    if r.threads > 0 && r.threads != rayon::current_num_threads() {
        // an already initialised pool is fine
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(r.threads)
            .build_global();
    }
    match cli.command {
        Command::Simulate => simulate(&r),
        Command::Cluster => cluster(&r),
        Command::Neighborhood => neighborhood(&r),
        Command::Hitting { constant } => hitting(&r, constant),
        Command::Pde => pde(&r),
        Command::Verify => run_verify(&r),
        Command::Report { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
