//! C ABI for `suplab`.
//!
//! Every fallible function returns a [`SuplabStatus`]; on failure the
//! message is kept per thread and read with [`suplab_last_error_message`].
//! Objects are passed as opaque handles created by `*_new` functions and
//! released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use suplab::engine::oracles;
use suplab::engine::{simulate_coupled, CoupledTrajectory, EngineParams};
use suplab::hitting::{estimate_hit_prob, HitQuery, HitTarget};
use suplab::measure::AtomicMeasure;
use suplab::offspring::OffspringLaw;
use suplab::pde::{estimate_c_beta_d, PdeConstantOptions, DEFAULT_EPS_LADDER, DEFAULT_PROBES};
use suplab::verify::{verify, Tier};
use suplab::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuplabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Precondition = 3,
    Runtime = 4,
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> SuplabStatus {
    match e {
        Error::Domain(_) | Error::UnsupportedSpec(_) | Error::Config(_) => SuplabStatus::InvalidArgument,
        Error::Precondition(_) | Error::Resolution(_) => SuplabStatus::Precondition,
        _ => SuplabStatus::Runtime,
    }
}

/// Runs `f`, turning errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), SuplabStatus>>(f: F) -> SuplabStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SuplabStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            SuplabStatus::Panic
        }
    }
}

fn lift<T>(r: suplab::Result<T>) -> Result<T, SuplabStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, SuplabStatus> {
    // SAFETY: the caller guarantees that a non-null pointer is valid.
    unsafe { p.as_ref() }.ok_or_else(|| {
        set_error(format!("{what} is null"));
        SuplabStatus::NullPointer
    })
}

fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, SuplabStatus> {
    // SAFETY: the caller guarantees that a non-null pointer is valid.
    unsafe { p.as_mut() }.ok_or_else(|| {
        set_error(format!("{what} is null"));
        SuplabStatus::NullPointer
    })
}

fn array<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], SuplabStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    // SAFETY: the caller guarantees `len` readable values at `p`.
    Ok(unsafe { slice::from_raw_parts(p, len) })
}

/// Length in bytes of the last error message of this thread, without the
/// terminating NUL; 0 when there is none.
#[no_mangle]
pub extern "C" fn suplab_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |s| s.as_bytes().len()))
}

/// Copies the last error message of this thread into `buf` (at most
/// `len - 1` bytes plus a NUL). Returns the number of bytes copied.
///
/// # Safety
/// `buf` must be writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn suplab_last_error_message(buf: *mut c_char, len: usize) -> usize {
    if buf.is_null() || len == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |s| s.as_bytes());
        let n = bytes.len().min(len - 1);
        ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
        n
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn suplab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `E exp(-lambda |X_t|)` for the CSBP started at `m`.
#[no_mangle]
pub extern "C" fn suplab_mass_laplace_oracle(m: f64, t: f64, lambda: f64, beta: f64) -> f64 {
    oracles::mass_laplace_oracle(m, t, lambda, beta)
}

/// `P(X_t = 0)` for the CSBP started at `m`.
#[no_mangle]
pub extern "C" fn suplab_extinction_prob_oracle(m: f64, t: f64, beta: f64) -> f64 {
    oracles::extinction_prob_oracle(m, t, beta)
}

/// `(beta h)^{1/beta}`.
#[no_mangle]
pub extern "C" fn suplab_cluster_normalizer(h: f64, beta: f64) -> f64 {
    oracles::cluster_normalizer(h, beta)
}

/// Opaque offspring law.
pub struct SuplabOffspringLaw(OffspringLaw);

/// Tabulates the offspring law with `cutoff` explicit probabilities.
///
/// # Safety
/// `law` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn suplab_offspring_law_new(
    beta: f64,
    cutoff: usize,
    law: *mut *mut SuplabOffspringLaw,
) -> SuplabStatus {
    guard(|| {
        let slot = out(law, "law")?;
        let l = lift(OffspringLaw::new(beta, cutoff))?;
        *slot = Box::into_raw(Box::new(SuplabOffspringLaw(l)));
        Ok(())
    })
}

/// `p_k`.
///
/// # Safety
/// `law` must come from [`suplab_offspring_law_new`]; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn suplab_offspring_law_prob(
    law: *const SuplabOffspringLaw,
    k: u64,
    value: *mut f64,
) -> SuplabStatus {
    guard(|| {
        let l = non_null(law, "law")?;
        *out(value, "value")? = l.0.prob(k);
        Ok(())
    })
}

/// `P(K > k)`.
///
/// # Safety
/// As for [`suplab_offspring_law_prob`].
#[no_mangle]
pub unsafe extern "C" fn suplab_offspring_law_tail(
    law: *const SuplabOffspringLaw,
    k: u64,
    value: *mut f64,
) -> SuplabStatus {
    guard(|| {
        let l = non_null(law, "law")?;
        *out(value, "value")? = l.0.tail(k);
        Ok(())
    })
}

/// # Safety
/// `law` must come from [`suplab_offspring_law_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn suplab_offspring_law_free(law: *mut SuplabOffspringLaw) {
    if !law.is_null() {
        drop(Box::from_raw(law));
    }
}

/// Opaque finite atomic measure.
pub struct SuplabMeasure(AtomicMeasure);

/// Creates an empty measure on `R^dim`.
///
/// # Safety
/// `measure` must be writable.
#[no_mangle]
pub unsafe extern "C" fn suplab_measure_new(
    dim: usize,
    measure: *mut *mut SuplabMeasure,
) -> SuplabStatus {
    guard(|| {
        let slot = out(measure, "measure")?;
        let m = lift(AtomicMeasure::new(dim))?;
        *slot = Box::into_raw(Box::new(SuplabMeasure(m)));
        Ok(())
    })
}

/// Adds an atom of mass `mass` at `position` (`dim` coordinates).
///
/// # Safety
/// `measure` must come from [`suplab_measure_new`]; `position` must hold
/// `dim` values.
#[no_mangle]
pub unsafe extern "C" fn suplab_measure_push(
    measure: *mut SuplabMeasure,
    position: *const f64,
    mass: f64,
) -> SuplabStatus {
    guard(|| {
        let m = out(measure, "measure")?;
        let x = array(position, m.0.dim(), "position")?;
        lift(m.0.push(x, mass))
    })
}

/// # Safety
/// `measure` must come from [`suplab_measure_new`]; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn suplab_measure_total_mass(
    measure: *const SuplabMeasure,
    value: *mut f64,
) -> SuplabStatus {
    guard(|| {
        let m = non_null(measure, "measure")?;
        *out(value, "value")? = m.0.total_mass();
        Ok(())
    })
}

/// # Safety
/// `measure` must come from [`suplab_measure_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn suplab_measure_free(measure: *mut SuplabMeasure) {
    if !measure.is_null() {
        drop(Box::from_raw(measure));
    }
}

/// Simulation parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SuplabEngineParams {
    pub beta: f64,
    pub d: usize,
    /// Particles per unit mass.
    pub mass_scale: u64,
    /// Truncation level K; zero, negative or infinite means none.
    pub truncation: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Snapshot times, or null for a single snapshot at the horizon.
    pub snapshot_times: *const f64,
    pub snapshot_count: usize,
}

fn engine_params(p: &SuplabEngineParams) -> Result<EngineParams, SuplabStatus> {
    let truncation = (p.truncation > 0.0 && p.truncation.is_finite()).then_some(p.truncation);
    let mut e = EngineParams::new(p.beta, p.d, p.mass_scale, p.horizon)
        .with_truncation(truncation)
        .with_seed(p.seed);
    if !p.snapshot_times.is_null() {
        e.snapshot_times = array(p.snapshot_times, p.snapshot_count, "snapshot_times")?.to_vec();
    }
    lift(e.validate())?;
    Ok(e)
}

/// Opaque coupled trajectory.
pub struct SuplabTrajectory(CoupledTrajectory);

/// Simulates one coupled trajectory (replicate 0 of `params.seed`).
///
/// # Safety
/// All pointers must be valid; `trajectory` must be writable.
#[no_mangle]
pub unsafe extern "C" fn suplab_simulate(
    params: *const SuplabEngineParams,
    initial: *const SuplabMeasure,
    trajectory: *mut *mut SuplabTrajectory,
) -> SuplabStatus {
    guard(|| {
        let p = engine_params(non_null(params, "params")?)?;
        let init = non_null(initial, "initial")?;
        let slot = out(trajectory, "trajectory")?;
        let tr = lift(simulate_coupled(&p, &init.0))?;
        *slot = Box::into_raw(Box::new(SuplabTrajectory(tr)));
        Ok(())
    })
}

/// Number of snapshots in a trajectory.
///
/// # Safety
/// `trajectory` must come from [`suplab_simulate`]; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn suplab_trajectory_snapshot_count(
    trajectory: *const SuplabTrajectory,
    count: *mut usize,
) -> SuplabStatus {
    guard(|| {
        let t = non_null(trajectory, "trajectory")?;
        *out(count, "count")? = t.0.snapshots.len();
        Ok(())
    })
}

/// Time, full mass and truncated mass of snapshot `index`.
///
/// # Safety
/// `trajectory` must come from [`suplab_simulate`]; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn suplab_trajectory_snapshot(
    trajectory: *const SuplabTrajectory,
    index: usize,
    time: *mut f64,
    full_mass: *mut f64,
    kept_mass: *mut f64,
) -> SuplabStatus {
    guard(|| {
        let t = non_null(trajectory, "trajectory")?;
        let s = t.0.snapshots.get(index).ok_or_else(|| {
            set_error(format!("snapshot index {index} out of range"));
            SuplabStatus::InvalidArgument
        })?;
        *out(time, "time")? = s.time;
        *out(full_mass, "full_mass")? = s.full_mass(t.0.mass_scale);
        *out(kept_mass, "kept_mass")? = s.kept_mass(t.0.mass_scale);
        Ok(())
    })
}

/// First truncation time (infinity if none occurred).
///
/// # Safety
/// `trajectory` must come from [`suplab_simulate`]; `tau` must be writable.
#[no_mangle]
pub unsafe extern "C" fn suplab_trajectory_tau_k(
    trajectory: *const SuplabTrajectory,
    tau: *mut f64,
) -> SuplabStatus {
    guard(|| {
        let t = non_null(trajectory, "trajectory")?;
        *out(tau, "tau")? = t.0.tau_k;
        Ok(())
    })
}

/// # Safety
/// `trajectory` must come from [`suplab_simulate`] or be null.
#[no_mangle]
pub unsafe extern "C" fn suplab_trajectory_free(trajectory: *mut SuplabTrajectory) {
    if !trajectory.is_null() {
        drop(Box::from_raw(trajectory));
    }
}

/// Monte-Carlo `P(xi_t B(center, eps) > 0)` of the full process.
///
/// # Safety
/// All pointers must be valid; `center` must hold `params.d` values.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn suplab_hit_probability(
    params: *const SuplabEngineParams,
    initial: *const SuplabMeasure,
    t: f64,
    center: *const f64,
    eps: f64,
    reps: u64,
    value: *mut f64,
    stderr: *mut f64,
) -> SuplabStatus {
    guard(|| {
        let raw = non_null(params, "params")?;
        let p = engine_params(raw)?;
        let init = non_null(initial, "initial")?;
        let c = array(center, raw.d, "center")?;
        let q = HitQuery {
            initial: init.0.clone(),
            t,
            center: c.to_vec(),
            eps,
            target: HitTarget::Full,
        };
        let est = lift(estimate_hit_prob(&q, &p, reps))?;
        *out(value, "value")? = est.value;
        *out(stderr, "stderr")? = est.stderr;
        Ok(())
    })
}

/// `c_{beta,d}` from the semilinear PDE with the default ladder and probes.
///
/// # Safety
/// `value` and `error_bar` must be writable.
#[no_mangle]
pub unsafe extern "C" fn suplab_pde_constant(
    beta: f64,
    d: usize,
    value: *mut f64,
    error_bar: *mut f64,
) -> SuplabStatus {
    guard(|| {
        let v = out(value, "value")?;
        let e = out(error_bar, "error_bar")?;
        let c = lift(estimate_c_beta_d(
            beta,
            d,
            &DEFAULT_EPS_LADDER,
            &DEFAULT_PROBES,
            &PdeConstantOptions::default(),
        ))?;
        *v = c.value;
        *e = c.error_bar;
        Ok(())
    })
}

/// Runs acceptance criteria and returns the report as JSON. `tier` is
/// `"fast"` or `"full"`; `ids` selects criteria (all when `id_count` is 0).
/// The string must be released with [`suplab_string_free`].
///
/// # Safety
/// `tier` must be a NUL-terminated string, `ids` must hold `id_count`
/// values, and `json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn suplab_verify_json(
    tier: *const c_char,
    seed: u64,
    ids: *const u8,
    id_count: usize,
    json: *mut *mut c_char,
) -> SuplabStatus {
    guard(|| {
        let slot = out(json, "json")?;
        non_null(tier, "tier")?;
        let tier: Tier = match CStr::from_ptr(tier).to_str() {
            Ok(s) => lift(s.parse())?,
            Err(_) => {
                set_error("tier is not valid UTF-8");
                return Err(SuplabStatus::InvalidArgument);
            }
        };
        let ids: &[u8] = if id_count == 0 {
            &[]
        } else {
            non_null(ids, "ids")?;
            slice::from_raw_parts(ids, id_count)
        };
        let report = lift(verify(tier, seed, ids))?;
        let text = serde_json::to_string(&report).map_err(|e| {
            set_error(e.to_string());
            SuplabStatus::Runtime
        })?;
        *slot = CString::new(text)
            .map_err(|_| SuplabStatus::Runtime)?
            .into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn suplab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
