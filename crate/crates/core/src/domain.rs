use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned hyper-rectangle `[lo_1, hi_1] x ... x [lo_m, hi_m]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Domain {
    bounds: Vec<(f64, f64)>,
}

impl Domain {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Config("domain needs at least one axis".into()));
        }
        for (k, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!(
                    "domain axis {} must satisfy lo < hi, got [{}, {}]",
                    k + 1,
                    lo,
                    hi
                )));
            }
        }
        Ok(Domain { bounds })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Domain::new(vec![(lo, hi); dim]).expect("valid cube")
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(&self.bounds)
                .all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }

    /// Euclidean diameter `max ||x - x'||` over the box.
    pub fn diameter(&self) -> f64 {
        self.bounds
            .iter()
            .map(|&(lo, hi)| (hi - lo).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn midpoint(&self, axis: usize) -> f64 {
        let (lo, hi) = self.bounds[axis];
        0.5 * (lo + hi)
    }

    /// Same center, every half-width scaled by `1 + fraction`.
    pub fn inflated(&self, fraction: f64) -> Domain {
        let bounds = self
            .bounds
            .iter()
            .map(|&(lo, hi)| {
                let c = 0.5 * (lo + hi);
                let h = 0.5 * (hi - lo) * (1.0 + fraction);
                (c - h, c + h)
            })
            .collect();
        Domain { bounds }
    }

    /// Evenly spaced coordinates (endpoints included) along one axis.
    pub fn axis_points(&self, axis: usize, count: usize) -> Vec<f64> {
        let (lo, hi) = self.bounds[axis];
        if count == 1 {
            return vec![0.5 * (lo + hi)];
        }
        let step = (hi - lo) / (count - 1) as f64;
        (0..count)
            .map(|i| {
                if i + 1 == count {
                    hi
                } else {
                    lo + step * i as f64
                }
            })
            .collect()
    }

    /// Tensor grid with `count` points per axis; the first axis varies fastest.
    pub fn grid(&self, count: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|k| self.axis_points(k, count))
            .collect();
        let total = count.pow(self.dim() as u32);
        (0..total)
            .map(|mut idx| {
                axes.iter()
                    .map(|pts| {
                        let v = pts[idx % count];
                        idx /= count;
                        v
                    })
                    .collect()
            })
            .collect()
    }
}
