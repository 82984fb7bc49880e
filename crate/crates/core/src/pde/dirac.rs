//! Approximation of `c f` by the rescaled hitting kernel `p_h^eps * f`.

use serde::{Deserialize, Serialize};

use super::sphere_area;
use super::vinf::VInfinityField;
use crate::error::{precondition, Error, Result};
use crate::measure::heat_kernel_radial;

/// `int_{R^d} w(|u|) f(|x - u|) du` for radial `w` supported in
/// `[0, s_max]` and radial `f`, with `|x| = a`, by composite Simpson rules
/// in `|u|` and in the cosine of the angle between `u` and `x`. `n_s` and
/// `n_mu` are rounded up to even numbers. Needs `d >= 3`.
pub fn radial_convolution<W, F>(
    w: W,
    f: F,
    a: f64,
    d: usize,
    s_max: f64,
    n_s: usize,
    n_mu: usize,
) -> f64
where
    W: Fn(f64) -> f64,
    F: Fn(f64) -> f64,
{
    let ws: Vec<f64> = simpson_nodes(0.0, s_max, n_s)
        .map(|(s, c)| c * w(s))
        .collect();
    convolve_tabulated(&ws, &f, a, d, s_max, n_mu)
}

fn simpson_nodes(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = (f64, f64)> {
    let n = (n + n % 2).max(2);
    let h = (hi - lo) / n as f64;
    (0..=n).map(move |i| {
        let c = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        (lo + i as f64 * h, c * h / 3.0)
    })
}

/// `ws[i]` holds the Simpson weight times `w(s_i)` on the `|u|` grid.
fn convolve_tabulated<F: Fn(f64) -> f64>(
    ws: &[f64],
    f: &F,
    a: f64,
    d: usize,
    s_max: f64,
    n_mu: usize,
) -> f64 {
    let n_s = ws.len() - 1;
    let mu_nodes: Vec<(f64, f64)> = simpson_nodes(-1.0, 1.0, n_mu)
        .map(|(m, c)| (m, c * (1.0 - m * m).max(0.0).powf((d as f64 - 3.0) / 2.0)))
        .collect();
    let mut acc = 0.0;
    for (i, &wi) in ws.iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        let s = s_max * i as f64 / n_s as f64;
        let inner: f64 = mu_nodes
            .iter()
            .map(|&(m, c)| c * f((a * a + s * s - 2.0 * a * s * m).max(0.0).sqrt()))
            .sum();
        acc += wi * s.powi(d as i32 - 1) * inner;
    }
    sphere_area(d - 1) * acc
}

/// Outcome of [`dirac_approx_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiracReport {
    pub h: f64,
    pub eps: f64,
    /// `sup_x |eps^{2/beta-d} (beta h)^{-1/beta} (p_h^eps * f)(x) - c f(x)|`.
    pub defect: f64,
    /// `(|x|, approximation, c f(|x|))` at every probe.
    pub profile: Vec<[f64; 3]>,
    /// Rescaled hitting-kernel mass outside `|u| > 2 sqrt(h)`.
    pub tail_mass: f64,
    /// `int_{|u| > 2 sqrt(h)} p_{2h}`.
    pub tail_reference: f64,
}

/// Quadrature sizes for [`dirac_approx_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub n_s: usize,
    pub n_mu: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            n_s: 400,
            n_mu: 200,
        }
    }
}

/// Compares `eps^{2/beta-d} (beta h)^{-1/beta} (p_h^eps * f)` with `c f`
/// at the radii `x_probes`, for radial `f`.
///
/// `p_h^eps(u) = P_u{eta_h hits B_0^eps}` is obtained from `v_infinity` by
/// Brownian scaling: `p_h^eps(u) = (beta h/eps^2)^{1/beta} v_infinity(h/eps^2, |u|/eps)`,
/// so the rescaled kernel is `eps^{-d} v_infinity(h/eps^2, |u|/eps)`. The
/// field must contain the time `h/eps^2`.
pub fn dirac_approx_check<F: Fn(f64) -> f64>(
    field: &VInfinityField,
    h: f64,
    eps: f64,
    f: F,
    c: f64,
    x_probes: &[f64],
    quad: Quadrature,
) -> Result<DiracReport> {
    if !(h > 0.0 && eps > 0.0) || eps * eps > 0.01 * h * (1.0 + 1e-9) {
        return Err(precondition("need eps^2 <= 0.01 h"));
    }
    let d = field.d;
    let s_max = 10.0 * h.sqrt();
    let ds = s_max / quad.n_s as f64;
    if ds > h.sqrt() / 20.0 || quad.n_mu < 16 {
        return Err(Error::Resolution(format!(
            "radial step {ds:.3e} too coarse for sqrt(h) = {:.3e} or too few angular nodes",
            h.sqrt()
        )));
    }
    let big_t = h / (eps * eps);
    let scale = eps.powi(-(d as i32));
    let kernel = |s: f64| -> Result<f64> { Ok(scale * field.evaluate(big_t, s / eps)?.value) };
    let ws: Vec<f64> = simpson_nodes(0.0, s_max, quad.n_s)
        .map(|(s, c)| Ok(c * kernel(s)?))
        .collect::<Result<Vec<_>>>()?;
    let mut defect = 0.0f64;
    let mut profile = Vec::with_capacity(x_probes.len());
    for &a in x_probes {
        let approx = convolve_tabulated(&ws, &f, a, d, s_max, quad.n_mu);
        let target = c * f(a);
        defect = defect.max((approx - target).abs());
        profile.push([a, approx, target]);
    }
    let r_tail = 2.0 * h.sqrt();
    let omega = sphere_area(d);
    let shell = |lo: f64, g: &dyn Fn(f64) -> Result<f64>| -> Result<f64> {
        simpson_nodes(lo, s_max, quad.n_s)
            .map(|(s, c)| Ok(c * g(s)? * s.powi(d as i32 - 1)))
            .sum::<Result<f64>>()
            .map(|v| omega * v)
    };
    let tail_mass = shell(r_tail, &kernel)?;
    let tail_reference = shell(r_tail, &|s| heat_kernel_radial(2.0 * h, s, d))?;
    Ok(DiracReport {
        h,
        eps,
        defect,
        profile,
        tail_mass,
        tail_reference,
    })
}
