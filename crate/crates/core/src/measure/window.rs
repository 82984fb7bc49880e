use serde::{Deserialize, Serialize};

use super::AtomicMeasure;
use crate::error::{domain, Result};

/// Axis-aligned observation box together with a voxel edge length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    lower: Vec<f64>,
    upper: Vec<f64>,
    resolution: f64,
}

impl Window {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, resolution: f64) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(domain(
                "window corners must have the same nonzero dimension",
            ));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(a < b)) {
            return Err(domain(
                "window lower corner must lie below the upper corner",
            ));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(domain("window resolution must be positive"));
        }
        Ok(Self {
            lower,
            upper,
            resolution,
        })
    }

    /// Cube `[-half, half]^d`.
    pub fn cube(d: usize, half: f64, resolution: f64) -> Result<Self> {
        Self::new(vec![-half; d], vec![half; d], resolution)
    }

    /// Smallest box containing the `eps`-dilation of the atoms, padded by
    /// one voxel, or `None` for an empty measure.
    pub fn covering(m: &AtomicMeasure, eps: f64, resolution: f64) -> Result<Option<Self>> {
        match m.bounding_box() {
            None => Ok(None),
            Some((lo, hi)) => {
                let pad = eps + resolution;
                Self::new(
                    lo.iter().map(|v| v - pad).collect(),
                    hi.iter().map(|v| v + pad).collect(),
                    resolution,
                )
                .map(Some)
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// Number of voxels along each axis (partial voxels at the upper edge
    /// are dropped).
    pub fn shape(&self) -> Vec<usize> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| ((b - a) / self.resolution).floor() as usize)
            .collect()
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| b - a)
            .product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    /// Whether the box `[lo, hi]` lies inside the window.
    pub fn contains_box(&self, lo: &[f64], hi: &[f64]) -> bool {
        self.contains(lo) && self.contains(hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_corners_and_resolution() {
        assert!(Window::new(vec![0.0, 0.0], vec![1.0, 0.0], 0.1).is_err());
        assert!(Window::new(vec![0.0], vec![1.0], 0.0).is_err());
        let w = Window::cube(3, 1.0, 0.25).unwrap();
        assert_eq!(w.shape(), vec![8, 8, 8]);
        assert_eq!(w.volume(), 8.0);
    }

    #[test]
    fn covering_contains_dilation() {
        let m = AtomicMeasure::from_parts(2, vec![0.0, 0.0, 1.0, 2.0], vec![1.0, 1.0]).unwrap();
        let w = Window::covering(&m, 0.5, 0.05).unwrap().unwrap();
        assert!(w.contains_box(&[-0.5, -0.5], &[1.5, 2.5]));
        assert!(Window::covering(&AtomicMeasure::new(2).unwrap(), 0.5, 0.1)
            .unwrap()
            .is_none());
    }
}
