//! Radial solver for `v' = (1/2) Delta v - v^{1+beta}` in `R^d`, the limit
//! `v_infinity` of large initial data, and the constant `c_{beta,d}`.
//!
//! The solver is a finite-volume scheme on a geometrically stretched radial
//! grid. Time stepping is Strang splitting: the reaction `v' = -v^{1+beta}`
//! is integrated exactly, the diffusion by Crank-Nicolson after a few
//! backward Euler start steps. Steps grow geometrically with time, which
//! suits solutions that spread like `sqrt(t)`.

mod constant;
mod dirac;
mod vinf;

pub use constant::{
    closure_exponent, combine_probes, estimate_c_beta_d, extrapolate_ladder, gaussian_closure,
    gaussian_closure_slope, ConstantEstimate, ConstantMethod, LadderPoint, PdeConstantOptions,
    Probe, ProbeEstimate, DEFAULT_EPS_LADDER, DEFAULT_PROBES,
};
pub use dirac::{dirac_approx_check, radial_convolution, DiracReport, Quadrature};
pub use vinf::{
    v_infinity, vinf_bounds, Extrapolated, VInfinityBounds, VInfinityField, DEFAULT_LAMBDA_LADDER,
};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{domain, Error, Result};

/// `v_0(h, theta) = (theta^{-beta} + beta h)^{-1/beta}`, the spatially flat
/// solution.
pub fn v0_ode(h: f64, theta: f64, beta: f64) -> f64 {
    crate::engine::oracles::v0(h, theta, beta)
}

/// Surface area of the unit sphere in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(h) / gamma(h)
}

/// Radial initial profiles `f`, multiplied by the amplitude `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialProfile {
    /// `(1 - r^2)_+`.
    Bump,
    /// `(1 - r^2)_+^2`, a second admissible profile.
    SmoothBump,
    /// Indicator of the open unit ball.
    Indicator,
    /// The constant 1.
    Flat,
}

impl InitialProfile {
    pub fn eval(self, r: f64) -> f64 {
        match self {
            Self::Bump => (1.0 - r * r).max(0.0),
            Self::SmoothBump => (1.0 - r * r).max(0.0).powi(2),
            Self::Indicator => f64::from(r < 1.0),
            Self::Flat => 1.0,
        }
    }

    /// Exponent `q` in `v_lambda = v_infinity - B lambda^{-q} + ...`.
    ///
    /// Where `lambda f` vanishes linearly at the unit sphere the data is
    /// effectively infinite up to a layer of width `lambda^{-beta/(beta+2)}`;
    /// for the quadratic zero of the smooth bump the layer is
    /// `lambda^{-beta/(2 beta+2)}`; for the indicator the defect comes from
    /// the initial time layer of length `lambda^{-beta}`, whose diffusive
    /// width is `lambda^{-beta/2}`.
    pub fn ladder_exponent(self, beta: f64) -> f64 {
        match self {
            Self::Bump => beta / (beta + 2.0),
            Self::SmoothBump => beta / (2.0 * beta + 2.0),
            Self::Indicator => beta / 2.0,
            Self::Flat => beta,
        }
    }
}

/// Treatment of the outer edge `r = R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FarBoundary {
    /// `v(t, R) = 0`.
    Dirichlet,
    /// `v_r(t, R) = 0`.
    Neumann,
}

/// Discretisation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Width of the innermost cell.
    pub h0: f64,
    /// Cell widths grow like `h0 + stretch * r`.
    pub stretch: f64,
    /// Time step as a fraction of the current time.
    pub dt_ratio: f64,
    /// Smallest time step, used until `dt_ratio * t` exceeds it.
    pub dt_min: f64,
    /// Outer radius; defaults to `max(10 sqrt(T), 10)`.
    pub radius: Option<f64>,
    pub far: FarBoundary,
    /// Number of initial backward Euler steps.
    pub start_steps: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            h0: 0.01,
            stretch: 0.01,
            dt_ratio: 0.02,
            dt_min: 1e-6,
            radius: None,
            far: FarBoundary::Dirichlet,
            start_steps: 4,
        }
    }
}

impl GridSpec {
    /// The same grid with every step size halved.
    pub fn refined(&self) -> Self {
        Self {
            h0: self.h0 / 2.0,
            stretch: self.stretch / 2.0,
            dt_ratio: self.dt_ratio / 2.0,
            dt_min: self.dt_min / 2.0,
            ..*self
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.h0 > 0.0
            && self.stretch >= 0.0
            && self.dt_ratio > 0.0
            && self.dt_min > 0.0
            && self.radius.is_none_or(|r| r > 0.0);
        if ok {
            Ok(())
        } else {
            Err(domain("grid steps and radius must be positive"))
        }
    }
}

/// One problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeProblem {
    pub beta: f64,
    pub d: usize,
    pub lambda: f64,
    pub profile: InitialProfile,
    /// When false the reaction term is dropped (pure heat equation).
    pub reaction: bool,
    /// When false the diffusion term is dropped.
    pub diffusion: bool,
    pub grid: GridSpec,
}

impl PdeProblem {
    pub fn new(beta: f64, d: usize, lambda: f64) -> Self {
        Self {
            beta,
            d,
            lambda,
            profile: InitialProfile::Bump,
            reaction: true,
            diffusion: true,
            grid: GridSpec::default(),
        }
    }

    pub fn with_profile(mut self, profile: InitialProfile) -> Self {
        self.profile = profile;
        self
    }

    pub fn with_grid(mut self, grid: GridSpec) -> Self {
        self.grid = grid;
        self
    }
}

/// Relative size of the solution near the far edge above which the domain
/// is declared too small.
pub const BOUNDARY_TOLERANCE: f64 = 1e-8;

/// Relative negative undershoot above which a solve is rejected.
pub const UNDERSHOOT_TOLERANCE: f64 = 1e-3;

/// `v(t, r)` at the requested times, on cell centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialPdeSolution {
    pub beta: f64,
    pub d: usize,
    pub lambda: f64,
    pub profile: InitialProfile,
    pub radius: f64,
    /// Cell centres.
    pub r_grid: Vec<f64>,
    /// Cell volumes per unit solid angle.
    pub cell_volumes: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// `values[i][j] = v(t_grid[i], r_grid[j])`.
    pub values: Vec<Vec<f64>>,
    /// `int v(t, x) dx` at each requested time.
    pub masses: Vec<f64>,
    /// Largest negative undershoot relative to the maximum, before clipping.
    pub max_undershoot: f64,
    /// Largest value near `0.8 R` relative to the maximum.
    pub boundary_ratio: f64,
    pub steps: usize,
}

impl RadialPdeSolution {
    /// Index of `t` in the time grid.
    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.t_grid
            .iter()
            .position(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
    }

    /// Piecewise-linear interpolation of `v(t_grid[ti], r)`.
    pub fn value(&self, ti: usize, r: f64) -> f64 {
        let v = &self.values[ti];
        let c = &self.r_grid;
        let n = c.len();
        if r <= c[0] {
            return v[0];
        }
        if r >= c[n - 1] {
            if r >= self.radius {
                return 0.0;
            }
            let w = (r - c[n - 1]) / (self.radius - c[n - 1]);
            return v[n - 1] * (1.0 - w);
        }
        let j = c.partition_point(|&x| x <= r);
        let w = (r - c[j - 1]) / (c[j] - c[j - 1]);
        v[j - 1] * (1.0 - w) + v[j] * w
    }

    /// `v` at time `t`, which must be on the time grid.
    pub fn at(&self, t: f64, r: f64) -> Result<f64> {
        let ti = self
            .time_index(t)
            .ok_or_else(|| domain(format!("time {t} was not requested from the solver")))?;
        Ok(self.value(ti, r))
    }

    /// `int_{R^d} v(t_grid[ti], x) g(|x|) dx` by the cell rule.
    pub fn integrate<G: Fn(f64) -> f64>(&self, ti: usize, g: G) -> f64 {
        sphere_area(self.d)
            * self
                .cell_volumes
                .iter()
                .zip(&self.r_grid)
                .zip(&self.values[ti])
                .map(|((vol, &r), v)| vol * v * g(r))
                .sum::<f64>()
    }
}

/// Cell faces: `0 = f_0 < f_1 < ... = R` with widths `h0 + stretch * f`.
fn faces(radius: f64, h0: f64, stretch: f64) -> Vec<f64> {
    let mut f = vec![0.0];
    loop {
        let last = *f.last().unwrap();
        let next = last + h0 + stretch * last;
        if next >= radius {
            // avoid a sliver cell at the edge
            if radius - last < 0.5 * (h0 + stretch * last) && f.len() > 1 {
                f.pop();
            }
            f.push(radius);
            return f;
        }
        f.push(next);
    }
}

struct Operator {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Operator {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = v.len();
        for i in 0..n {
            let mut s = self.diag[i] * v[i];
            if i > 0 {
                s += self.lower[i] * v[i - 1];
            }
            if i + 1 < n {
                s += self.upper[i] * v[i + 1];
            }
            out[i] = s;
        }
    }

    /// Solves `(I - a L) x = rhs` in place (Thomas algorithm; the matrix is
    /// diagonally dominant).
    fn solve_shifted(&self, a: f64, rhs: &mut [f64], scratch: &mut [f64]) {
        let n = rhs.len();
        let b0 = 1.0 - a * self.diag[0];
        scratch[0] = -a * self.upper[0] / b0;
        rhs[0] /= b0;
        for i in 1..n {
            let lo = -a * self.lower[i];
            let denom = 1.0 - a * self.diag[i] - lo * scratch[i - 1];
            scratch[i] = if i + 1 < n {
                -a * self.upper[i] / denom
            } else {
                0.0
            };
            rhs[i] = (rhs[i] - lo * rhs[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= scratch[i] * rhs[i + 1];
        }
    }
}

fn reaction_flow(v: &mut [f64], beta: f64, h: f64) {
    for x in v.iter_mut() {
        if *x > 0.0 {
            *x = (x.powf(-beta) + beta * h).powf(-1.0 / beta);
        }
    }
}

/// Solves the problem and records the solution at `times`.
pub fn solve_radial(problem: &PdeProblem, times: &[f64]) -> Result<RadialPdeSolution> {
    let PdeProblem {
        beta,
        d,
        lambda,
        profile,
        reaction,
        diffusion,
        grid,
    } = *problem;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(domain(format!("beta must lie in (0,1), got {beta}")));
    }
    if d == 0 {
        return Err(domain("dimension must be at least 1"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(domain("lambda must be positive and finite"));
    }
    grid.validate()?;
    let mut t_grid: Vec<f64> = times.to_vec();
    t_grid.sort_by(f64::total_cmp);
    t_grid.dedup();
    if t_grid.is_empty() || !(t_grid[0] > 0.0) || !t_grid.iter().all(|t| t.is_finite()) {
        return Err(domain("solver needs positive finite output times"));
    }
    let t_end = *t_grid.last().unwrap();
    let radius = grid.radius.unwrap_or((10.0 * t_end.sqrt()).max(10.0));

    let f = faces(radius, grid.h0, grid.stretch);
    let n = f.len() - 1;
    let df = d as f64;
    let centers: Vec<f64> = f.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let vol: Vec<f64> = f
        .windows(2)
        .map(|w| (w[1].powf(df) - w[0].powf(df)) / df)
        .collect();
    let area: Vec<f64> = f.iter().map(|x| x.powf(df - 1.0)).collect();

    let mut op = Operator {
        lower: vec![0.0; n],
        diag: vec![0.0; n],
        upper: vec![0.0; n],
    };
    if diffusion {
        for i in 0..n - 1 {
            let g = 0.5 * area[i + 1] / (centers[i + 1] - centers[i]);
            op.diag[i] -= g / vol[i];
            op.upper[i] += g / vol[i];
            op.diag[i + 1] -= g / vol[i + 1];
            op.lower[i + 1] += g / vol[i + 1];
        }
        if grid.far == FarBoundary::Dirichlet {
            op.diag[n - 1] -= 0.5 * area[n] / (f[n] - centers[n - 1]) / vol[n - 1];
        }
    }

    let mut v: Vec<f64> = centers.iter().map(|&r| lambda * profile.eval(r)).collect();
    let edge = centers.partition_point(|&r| r < 0.8 * radius).min(n - 1);
    let omega = sphere_area(d);
    let mut values = Vec::with_capacity(t_grid.len());
    let mut masses = Vec::with_capacity(t_grid.len());
    let mut max_undershoot = 0.0f64;
    let mut boundary_ratio = 0.0f64;
    let mut tmp = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut t = 0.0;
    let mut steps = 0usize;
    let mut next_out = 0usize;

    while next_out < t_grid.len() {
        let target = t_grid[next_out];
        let mut dt = (grid.dt_ratio * t).max(grid.dt_min);
        let last_step = t + dt >= target * (1.0 - 1e-12);
        if last_step {
            dt = target - t;
        }
        if reaction {
            reaction_flow(&mut v, beta, dt / 2.0);
        }
        if diffusion {
            if steps < grid.start_steps {
                tmp.copy_from_slice(&v);
                op.solve_shifted(dt, &mut tmp, &mut scratch);
            } else {
                op.apply(&v, &mut tmp);
                for (a, b) in tmp.iter_mut().zip(&v) {
                    *a = b + 0.5 * dt * *a;
                }
                op.solve_shifted(0.5 * dt, &mut tmp, &mut scratch);
            }
            std::mem::swap(&mut v, &mut tmp);
        }
        let vmax = v.iter().cloned().fold(0.0f64, f64::max);
        if !vmax.is_finite() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Solver(format!(
                "non-finite values at t = {t:.6e} after {steps} steps (dt = {dt:.3e})"
            )));
        }
        let vmin = v.iter().cloned().fold(0.0f64, f64::min);
        if vmax > 0.0 {
            max_undershoot = max_undershoot.max(-vmin / vmax);
        }
        if max_undershoot > UNDERSHOOT_TOLERANCE {
            return Err(Error::Solver(format!(
                "negative undershoot {max_undershoot:.3e} of the maximum at t = {t:.6e} (dt = {dt:.3e}); refine dt_ratio or add start steps"
            )));
        }
        for x in v.iter_mut() {
            *x = x.max(0.0);
        }
        if reaction {
            reaction_flow(&mut v, beta, dt / 2.0);
        }
        steps += 1;
        t = if last_step { target } else { t + dt };
        if last_step {
            let vmax = v.iter().cloned().fold(0.0f64, f64::max);
            if vmax > 0.0 {
                boundary_ratio =
                    boundary_ratio.max(v[edge..].iter().cloned().fold(0.0, f64::max) / vmax);
            }
            masses.push(omega * vol.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>());
            values.push(v.clone());
            next_out += 1;
        }
    }
    if grid.far == FarBoundary::Dirichlet
        && profile != InitialProfile::Flat
        && boundary_ratio > BOUNDARY_TOLERANCE
    {
        return Err(Error::DomainTooSmall {
            boundary_value: boundary_ratio,
            tolerance: BOUNDARY_TOLERANCE,
        });
    }
    Ok(RadialPdeSolution {
        beta,
        d,
        lambda,
        profile,
        radius,
        r_grid: centers,
        cell_volumes: vol,
        t_grid,
        values,
        masses,
        max_undershoot,
        boundary_ratio,
        steps,
    })
}

/// Result of solving on three successively halved grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RichardsonReport {
    /// Max relative difference between the base and once-refined grids.
    pub coarse_diff: f64,
    /// Max relative difference between the once- and twice-refined grids.
    pub fine_diff: f64,
    pub observed_order: f64,
    /// Richardson estimate of the error of the finest solution.
    pub error_estimate: f64,
    /// The error estimate declared acceptable.
    pub tolerance: f64,
    pub passed: bool,
}

/// Grid-refinement study at the given probe radii and time `t`.
///
/// Differences are measured relative to `max_r v(t, r)`. The check passes
/// when the observed order exceeds 1 and the extrapolated error of the
/// finest grid is below `tolerance`.
pub fn richardson_check(
    problem: &PdeProblem,
    t: f64,
    probes: &[f64],
    tolerance: f64,
) -> Result<RichardsonReport> {
    if probes.is_empty() {
        return Err(domain("Richardson check needs probe radii"));
    }
    let g0 = problem.grid;
    let grids = [g0, g0.refined(), g0.refined().refined()];
    let sols = grids
        .iter()
        .map(|g| solve_radial(&problem.clone().with_grid(*g), &[t]))
        .collect::<Result<Vec<_>>>()?;
    let scale = sols[2].values[0].iter().cloned().fold(0.0f64, f64::max);
    if !(scale > 0.0) {
        return Err(Error::Solver("solution vanished identically".into()));
    }
    let diff = |a: &RadialPdeSolution, b: &RadialPdeSolution| {
        probes
            .iter()
            .map(|&r| (a.value(0, r) - b.value(0, r)).abs())
            .fold(0.0f64, f64::max)
            / scale
    };
    let coarse_diff = diff(&sols[0], &sols[1]);
    let fine_diff = diff(&sols[1], &sols[2]);
    let observed_order = if fine_diff > 0.0 {
        (coarse_diff / fine_diff).log2()
    } else {
        f64::INFINITY
    };
    let error_estimate = if observed_order.is_finite() && observed_order > 0.0 {
        fine_diff / (2f64.powf(observed_order) - 1.0)
    } else {
        fine_diff
    };
    Ok(RichardsonReport {
        coarse_diff,
        fine_diff,
        observed_order,
        error_estimate,
        tolerance,
        passed: observed_order > 1.0 && error_estimate < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// `((1 - |.|^2)_+ * p_t)(r)` in d = 3 by one-dimensional quadrature of
    /// the spherical-shell formula.
    fn bump_heat_oracle(t: f64, r: f64) -> f64 {
        let n = 4000;
        let h = 1.0 / n as f64;
        let shell = |s: f64| {
            let f = 1.0 - s * s;
            let kernel = if r * s / t < 1e-8 {
                (-(r * r + s * s) / (2.0 * t)).exp()
            } else {
                let a = r * s / t;
                // exp(-(r-s)^2/2t) (1 - e^{-2a}) / (2a)
                (-(r - s).powi(2) / (2.0 * t)).exp() * (-(-2.0 * a).exp_m1()) / (2.0 * a)
            };
            4.0 * PI * s * s * f * (2.0 * PI * t).powf(-1.5) * kernel
        };
        // Simpson
        let mut acc = shell(0.0) + shell(1.0);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * shell(i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn pure_heat_matches_gaussian_convolution() {
        let mut p = PdeProblem::new(0.8, 3, 1.0);
        p.reaction = false;
        let times = [0.05, 0.3, 1.0];
        let sol = solve_radial(&p, &times).unwrap();
        for (ti, &t) in times.iter().enumerate() {
            let mut err = 0.0f64;
            for k in 0..60 {
                let r = k as f64 * 0.05;
                err = err.max((sol.value(ti, r) - bump_heat_oracle(t, r)).abs());
            }
            assert!(err < 1e-3, "t = {t}: sup error {err}");
        }
    }

    #[test]
    fn flat_data_follows_ode() {
        let mut p = PdeProblem::new(0.8, 3, 5.0).with_profile(InitialProfile::Flat);
        p.grid.far = FarBoundary::Neumann;
        let times = [0.1, 1.0, 10.0];
        let sol = solve_radial(&p, &times).unwrap();
        for (ti, &t) in times.iter().enumerate() {
            let want = v0_ode(t, 5.0, 0.8);
            for &v in &sol.values[ti] {
                assert!((v - want).abs() <= 1e-6 * want);
            }
        }
    }

    #[test]
    fn comparison_and_mass_monotonicity() {
        let times = [0.1, 0.5, 1.0, 4.0];
        let a = solve_radial(&PdeProblem::new(0.8, 3, 10.0), &times).unwrap();
        let b = solve_radial(&PdeProblem::new(0.8, 3, 100.0), &times).unwrap();
        for ti in 0..times.len() {
            assert!(a.values[ti].iter().zip(&b.values[ti]).all(|(x, y)| x <= y));
        }
        assert!(a.masses.windows(2).all(|w| w[1] <= w[0]));
        assert!(b.masses.windows(2).all(|w| w[1] <= w[0]));
        // monotone in r for a radially decreasing profile
        assert!(b.values[3].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn too_small_domain_is_reported() {
        let mut p = PdeProblem::new(0.8, 3, 1.0);
        p.grid.radius = Some(3.0);
        match solve_radial(&p, &[4.0]) {
            Err(Error::DomainTooSmall { .. }) => {}
            other => panic!("expected DomainTooSmall, got {other:?}"),
        }
    }

    #[test]
    fn refinement_converges() {
        let p = PdeProblem::new(0.8, 3, 100.0);
        let rep = richardson_check(&p, 1.0, &[0.0, 0.5, 1.0, 2.0, 3.0], 1e-3).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-12);
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-12);
    }
}
