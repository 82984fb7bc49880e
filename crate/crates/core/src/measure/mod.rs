//! Finite atomic measures, the Gaussian heat kernel, observation windows and
//! initial-measure classes.

mod csvio;
mod density;
mod heat;
mod window;

pub use csvio::{read_measure_csv, read_snapshot_csv, write_measure_csv, write_snapshot_csv};
pub use density::{local_finiteness, DensitySpec, Finiteness, GaussianComponent};
pub use heat::{
    heat_kernel, heat_kernel_radial, kernel_domination_bound, kernel_domination_ratio,
    max_kernel_domination_ratio,
};
pub use window::Window;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// A finite measure made of weighted point masses in `R^d`.
///
/// Positions are stored contiguously, `dim` coordinates per atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicMeasure {
    dim: usize,
    coords: Vec<f64>,
    masses: Vec<f64>,
}

impl AtomicMeasure {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(domain("dimension must be at least 1"));
        }
        Ok(Self {
            dim,
            coords: Vec::new(),
            masses: Vec::new(),
        })
    }

    /// Builds a measure from flat coordinates and masses, validating both.
    pub fn from_parts(dim: usize, coords: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(domain("dimension must be at least 1"));
        }
        if coords.len() != dim * masses.len() {
            return Err(domain(format!(
                "{} coordinates do not describe {} atoms in dimension {dim}",
                coords.len(),
                masses.len()
            )));
        }
        if let Some(m) = masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(domain(format!(
                "atom mass {m} is not a positive finite number"
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(domain("atom positions must be finite"));
        }
        Ok(Self {
            dim,
            coords,
            masses,
        })
    }

    /// A single atom of mass `mass` at `pos`.
    pub fn dirac(pos: &[f64], mass: f64) -> Result<Self> {
        let mut m = Self::new(pos.len())?;
        m.push(pos, mass)?;
        Ok(m)
    }

    /// `count` atoms of equal mass at the same position.
    pub fn equal_atoms_at(pos: &[f64], count: usize, mass_each: f64) -> Result<Self> {
        let coords = pos
            .iter()
            .copied()
            .cycle()
            .take(pos.len() * count)
            .collect();
        Self::from_parts(pos.len(), coords, vec![mass_each; count])
    }

    pub fn push(&mut self, pos: &[f64], mass: f64) -> Result<()> {
        if pos.len() != self.dim {
            return Err(domain(format!(
                "position has {} coordinates, expected {}",
                pos.len(),
                self.dim
            )));
        }
        if !(mass.is_finite() && mass > 0.0) {
            return Err(domain(format!(
                "atom mass {mass} is not a positive finite number"
            )));
        }
        if pos.iter().any(|c| !c.is_finite()) {
            return Err(domain("atom positions must be finite"));
        }
        self.coords.extend_from_slice(pos);
        self.masses.push(mass);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.masses[i]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&[f64], f64)> + '_ {
        self.coords
            .chunks_exact(self.dim)
            .zip(self.masses.iter().copied())
    }

    /// Sum of atom masses.
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// The pairing `sum_i mass_i f(x_i)`.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.iter().map(|(x, m)| m * f(x)).sum()
    }

    /// `(m * p_t)(x) = sum_i mass_i p_t(x - x_i)`.
    pub fn convolve_heat(&self, t: f64, x: &[f64]) -> Result<f64> {
        if !(t > 0.0) {
            return Err(domain(format!(
                "heat kernel time must be positive, got {t}"
            )));
        }
        if x.len() != self.dim {
            return Err(domain("probe point has the wrong dimension"));
        }
        let norm = (2.0 * std::f64::consts::PI * t).powf(-(self.dim as f64) / 2.0);
        Ok(self
            .iter()
            .map(|(y, m)| {
                let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                m * (-r2 / (2.0 * t)).exp()
            })
            .sum::<f64>()
            * norm)
    }

    /// Sub-measure made of the atoms selected by `keep`.
    pub fn select(&self, keep: &[bool]) -> Self {
        let mut out = Self {
            dim: self.dim,
            coords: Vec::new(),
            masses: Vec::new(),
        };
        for (i, _) in keep.iter().enumerate().filter(|(_, k)| **k) {
            out.coords.extend_from_slice(self.position(i));
            out.masses.push(self.masses[i]);
        }
        out
    }

    /// Mass carried by the open ball of radius `r` around `center`.
    pub fn ball_mass(&self, center: &[f64], r: f64) -> f64 {
        let r2 = r * r;
        self.iter()
            .filter(|(x, _)| dist2(x, center) < r2)
            .map(|(_, m)| m)
            .sum()
    }

    /// Whether some atom lies strictly inside the open ball.
    pub fn hits_ball(&self, center: &[f64], r: f64) -> bool {
        let r2 = r * r;
        self.coords
            .chunks_exact(self.dim)
            .any(|x| dist2(x, center) < r2)
    }

    /// Smallest axis-aligned box containing every atom.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        if self.is_empty() {
            return None;
        }
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for x in self.coords.chunks_exact(self.dim) {
            for k in 0..self.dim {
                lo[k] = lo[k].min(x[k]);
                hi[k] = hi[k].max(x[k]);
            }
        }
        Some((lo, hi))
    }

    /// Mass-weighted mean position.
    pub fn barycenter(&self) -> Option<Vec<f64>> {
        let total = self.total_mass();
        if total <= 0.0 {
            return None;
        }
        let mut c = vec![0.0; self.dim];
        for (x, m) in self.iter() {
            for k in 0..self.dim {
                c[k] += m * x[k];
            }
        }
        c.iter_mut().for_each(|v| *v /= total);
        Some(c)
    }
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A particle configuration at one time: the full process, the flags
/// selecting the truncated-process atoms, and optional lineage tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSnapshot {
    pub time: f64,
    pub measure: AtomicMeasure,
    pub kept: Vec<bool>,
    pub lineage: Option<Vec<u64>>,
}

impl ParticleSnapshot {
    /// Truncated-process measure: the kept atoms.
    pub fn k_measure(&self) -> AtomicMeasure {
        self.measure.select(&self.kept)
    }

    pub fn full_mass(&self) -> f64 {
        self.measure.total_mass()
    }

    pub fn kept_mass(&self) -> f64 {
        self.measure
            .masses()
            .iter()
            .zip(&self.kept)
            .filter(|(_, k)| **k)
            .map(|(m, _)| m)
            .sum()
    }

    pub fn all_kept(&self) -> bool {
        self.kept.iter().all(|k| *k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn total_mass_examples() {
        assert_eq!(AtomicMeasure::new(3).unwrap().total_mass(), 0.0);
        let mut m = AtomicMeasure::new(2).unwrap();
        m.push(&[0.0, 0.0], 1.0).unwrap();
        m.push(&[1.0, -2.0], 2.5).unwrap();
        assert_eq!(m.total_mass(), 3.5);
        let many = AtomicMeasure::equal_atoms_at(&[0.0; 3], 10_000, 1e-4).unwrap();
        assert!((many.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_atoms() {
        let mut m = AtomicMeasure::new(2).unwrap();
        assert!(m.push(&[0.0], 1.0).is_err());
        assert!(m.push(&[0.0, 0.0], 0.0).is_err());
        assert!(m.push(&[0.0, f64::NAN], 1.0).is_err());
        assert!(AtomicMeasure::new(0).is_err());
    }

    #[test]
    fn integrate_constant_and_single_atom() {
        let m = AtomicMeasure::from_parts(2, vec![0.0, 1.0, 2.0, 3.0], vec![0.5, 1.5]).unwrap();
        assert_eq!(m.integrate(|_| 1.0), m.total_mass());
        let single = AtomicMeasure::dirac(&[0.3, -0.2], 2.0).unwrap();
        assert_eq!(single.integrate(|x| x[0] + 10.0 * x[1]), 2.0 * (0.3 - 2.0));
    }

    #[test]
    fn ball_indicator_matches_brute_force() {
        let coords: Vec<f64> = (0..300)
            .map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0)
            .collect();
        let m = AtomicMeasure::from_parts(3, coords, (1..=100).map(|i| i as f64 * 0.01).collect())
            .unwrap();
        let c = [0.1, -0.2, 0.05];
        let mut brute = 0.0;
        for i in 0..m.len() {
            let x = m.position(i);
            let r2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2);
            if r2.sqrt() < 0.7 {
                brute += m.mass(i);
            }
        }
        let via_integrate = m.integrate(|x| if dist2(x, &c).sqrt() < 0.7 { 1.0 } else { 0.0 });
        assert_eq!(via_integrate, brute);
        assert_eq!(m.ball_mass(&c, 0.7), brute);
    }

    #[test]
    fn convolution_of_unit_atom_is_kernel() {
        let m = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        let v = m.convolve_heat(0.7, &[0.0; 3]).unwrap();
        assert!((v - heat_kernel(0.7, &[0.0; 3]).unwrap()).abs() < 1e-15);
        assert!(m.convolve_heat(0.0, &[0.0; 3]).is_err());
    }

    fn arb_measure() -> impl Strategy<Value = AtomicMeasure> {
        prop::collection::vec((prop::array::uniform3(-3.0f64..3.0), 0.01f64..5.0), 1..30).prop_map(
            |atoms| {
                let mut m = AtomicMeasure::new(3).unwrap();
                for (x, w) in atoms {
                    m.push(&x, w).unwrap();
                }
                m
            },
        )
    }

    proptest! {
        #[test]
        fn integrate_is_linear_and_additive(m1 in arb_measure(), m2 in arb_measure(), a in -3.0f64..3.0) {
            let f = |x: &[f64]| x[0].sin() + x[1] * x[2];
            let g = |x: &[f64]| (x[0] - x[2]).cos();
            let lhs = m1.integrate(|x| a * f(x) + g(x));
            let rhs = a * m1.integrate(f) + m1.integrate(g);
            prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));

            let mut joint = m1.clone();
            for (x, w) in m2.iter() { joint.push(x, w).unwrap(); }
            let sum = m1.integrate(f) + m2.integrate(f);
            prop_assert!((joint.integrate(f) - sum).abs() < 1e-9 * (1.0 + sum.abs()));
        }

        #[test]
        fn convolution_bounded_by_kernel_maximum(m in arb_measure(), t in 0.05f64..4.0, x in prop::array::uniform3(-4.0f64..4.0)) {
            let v = m.convolve_heat(t, &x).unwrap();
            let bound = t.powf(-1.5) * m.total_mass() * (2.0 * std::f64::consts::PI).powf(-1.5);
            prop_assert!(v <= bound * (1.0 + 1e-12));
            prop_assert!(v >= 0.0);
        }
    }
}
