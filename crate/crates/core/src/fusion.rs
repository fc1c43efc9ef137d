//! Precision-weighted aggregation of neighbor GP predictions and the
//! high-probability uniform error bound on the aggregated mean.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::gp::AgentModels;
use crate::topology::Topology;

/// One agent's posterior for one output dimension, evaluated at some query
/// point (usually another agent's state).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalPrediction {
    pub agent: usize,
    pub dim: usize,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedPrediction {
    pub mean: f64,
    pub precision: f64,
    /// agent -> weight; sums to one.
    pub weights: BTreeMap<usize, f64>,
}

impl FusedPrediction {
    pub fn variance(&self) -> f64 {
        1.0 / self.precision
    }

    pub fn weight(&self, agent: usize) -> f64 {
        self.weights.get(&agent).copied().unwrap_or(0.0)
    }
}

fn checked_precision(p: &LocalPrediction) -> Result<f64> {
    if !(p.variance > 0.0) || !p.variance.is_finite() {
        return Err(Error::NonPositiveVariance(p.variance));
    }
    if !p.mean.is_finite() {
        return Err(Error::NonFinite(format!(
            "mean of agent {} dim {}",
            p.agent + 1,
            p.dim + 1
        )));
    }
    Ok(1.0 / p.variance)
}

/// Combines an agent's own prediction with its neighbors'.
///
/// The fused precision is `1/s_i^2 + sum_j a_ij / s_j^2`; the fused mean is
/// the corresponding precision-weighted average. `a_row[j]` is the edge
/// weight from the owning agent to agent `j`; neighbors with zero weight get
/// zero fusion weight.
pub fn fuse(
    own: &LocalPrediction,
    neighbors: &[LocalPrediction],
    a_row: &[f64],
) -> Result<FusedPrediction> {
    let own_precision = checked_precision(own)?;
    let mut precision = own_precision;
    // accumulated relative to the own mean so an isolated agent keeps it exactly
    let mut shift = 0.0;
    let mut raw = BTreeMap::new();
    raw.insert(own.agent, own_precision);
    for nb in neighbors {
        if nb.dim != own.dim {
            return Err(Error::DimensionMismatch {
                expected: own.dim,
                got: nb.dim,
            });
        }
        let a = *a_row.get(nb.agent).ok_or(Error::DimensionMismatch {
            expected: a_row.len(),
            got: nb.agent + 1,
        })?;
        let p = a * checked_precision(nb)?;
        precision += p;
        shift += p * (nb.mean - own.mean);
        *raw.entry(nb.agent).or_insert(0.0) += p;
    }
    let weights = raw.into_iter().map(|(j, p)| (j, p / precision)).collect();
    Ok(FusedPrediction {
        mean: own.mean + shift / precision,
        precision,
        weights,
    })
}

/// Local predictions of agent `i` and all of its neighbors at `x`, grouped by
/// output dimension: `result[k][0]` is agent `i`'s own.
pub fn local_predictions(
    bank: &[AgentModels],
    topology: &Topology,
    i: usize,
    x: &[f64],
) -> Result<Vec<Vec<LocalPrediction>>> {
    let participants = std::iter::once(i).chain(topology.neighbors(i));
    let m = bank[i].output_dim();
    let mut per_dim: Vec<Vec<LocalPrediction>> = vec![Vec::new(); m];
    for j in participants {
        let (means, vars) = bank[j].predict(x)?;
        for k in 0..m {
            per_dim[k].push(LocalPrediction {
                agent: j,
                dim: k,
                mean: means[k],
                variance: vars[k],
            });
        }
    }
    Ok(per_dim)
}

/// Fused prediction of agent `i` at its own state, one entry per dimension.
pub fn fuse_agent(
    bank: &[AgentModels],
    topology: &Topology,
    i: usize,
    x: &[f64],
) -> Result<Vec<(FusedPrediction, Vec<LocalPrediction>)>> {
    let a_row: Vec<f64> = topology.adjacency().row(i).iter().copied().collect();
    local_predictions(bank, topology, i, x)?
        .into_iter()
        .map(|locals| {
            let fused = fuse(&locals[0], &locals[1..], &a_row)?;
            Ok((fused, locals))
        })
        .collect()
}

/// `2m log(r sqrt(m) / (2 rho)) + 2 log n - 2 log delta`.
///
/// The covering number of the domain is overapproximated through a
/// hypercube of edge `r_omega`.
pub fn beta(rho: f64, delta: f64, m: usize, n: usize, r_omega: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::InvalidBoundParams(format!(
            "rho must be positive, got {}",
            rho
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidBoundParams(format!(
            "delta must lie in (0,1), got {}",
            delta
        )));
    }
    if m == 0 || n == 0 {
        return Err(Error::InvalidBoundParams("m and n must be positive".into()));
    }
    if !(r_omega > 0.0) {
        return Err(Error::InvalidBoundParams(format!(
            "domain diameter must be positive, got {}",
            r_omega
        )));
    }
    let mf = m as f64;
    let ratio = r_omega * mf.sqrt() / (2.0 * rho);
    if ratio < 1.0 {
        return Err(Error::VacuousCovering { ratio });
    }
    Ok(2.0 * mf * ratio.ln() + 2.0 * (n as f64).ln() - 2.0 * delta.ln())
}

/// `(L_f + L_mu) rho + sqrt(beta L_sigma2 rho)`.
pub fn gamma(rho: f64, beta: f64, l_f: f64, l_mu: f64, l_sigma2: f64) -> f64 {
    (l_f + l_mu) * rho + (beta * l_sigma2 * rho).sqrt()
}

/// Constants entering the uniform bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundParams {
    pub rho: f64,
    pub delta: f64,
    pub r_omega: f64,
    pub input_dim: usize,
    /// Lipschitz constant of the unknown function, per output dimension.
    pub lipschitz_f: Vec<f64>,
    /// `[agent][dim]`
    pub lipschitz_mean: Vec<Vec<f64>>,
    /// `[agent][dim]`
    pub lipschitz_variance: Vec<Vec<f64>>,
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(Error::InvalidBoundParams("rho must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidBoundParams("delta must lie in (0,1)".into()));
        }
        if !(self.r_omega > 0.0) {
            return Err(Error::InvalidBoundParams("r_omega must be positive".into()));
        }
        let n = self.lipschitz_mean.len();
        if self.lipschitz_variance.len() != n || n == 0 {
            return Err(Error::InvalidBoundParams(
                "lipschitz tables must cover every agent".into(),
            ));
        }
        let all = self
            .lipschitz_f
            .iter()
            .chain(self.lipschitz_mean.iter().flatten())
            .chain(self.lipschitz_variance.iter().flatten());
        for &l in all {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::InvalidBoundParams(format!(
                    "Lipschitz constants must be finite and nonnegative, got {}",
                    l
                )));
            }
        }
        Ok(())
    }

    pub fn agents(&self) -> usize {
        self.lipschitz_mean.len()
    }

    pub fn beta(&self) -> Result<f64> {
        beta(
            self.rho,
            self.delta,
            self.input_dim,
            self.agents(),
            self.r_omega,
        )
    }

    /// `[agent][dim]` table of gamma values.
    pub fn gamma_table(&self) -> Result<Vec<Vec<f64>>> {
        let b = self.beta()?;
        Ok(self
            .lipschitz_mean
            .iter()
            .zip(&self.lipschitz_variance)
            .map(|(lm, lv)| {
                lm.iter()
                    .zip(lv)
                    .zip(&self.lipschitz_f)
                    .map(|((&mu, &var), &f)| gamma(self.rho, b, f, mu, var))
                    .collect()
            })
            .collect())
    }

    /// Probability `(1 - delta)^m` attached to the stability result.
    pub fn probability(&self) -> f64 {
        (1.0 - self.delta).powi(self.input_dim as i32)
    }
}

/// `sum_j w_j (sqrt(beta) sigma_j + gamma_j)` with the weights of `fused`.
/// `gammas[j]` is the gamma of agent `j` for the dimension at hand.
pub fn pointwise_bound(
    fused: &FusedPrediction,
    locals: &[LocalPrediction],
    beta: f64,
    gammas: &[f64],
) -> Result<f64> {
    let sqrt_beta = beta.max(0.0).sqrt();
    let mut bound = 0.0;
    for p in locals {
        let w = fused.weight(p.agent);
        let g = *gammas.get(p.agent).ok_or(Error::DimensionMismatch {
            expected: gammas.len(),
            got: p.agent + 1,
        })?;
        bound += w * (sqrt_beta * p.variance.max(0.0).sqrt() + g);
    }
    Ok(bound)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LipschitzEstimate {
    pub constant: f64,
    /// Grid spacing per axis.
    pub spacing: Vec<f64>,
}

/// Largest finite-difference gradient norm of `f` over a uniform grid with
/// `points_per_axis` nodes per axis (endpoints included).
pub fn estimate_lipschitz<F>(
    f: F,
    domain: &Domain,
    points_per_axis: usize,
) -> Result<LipschitzEstimate>
where
    F: Fn(&[f64]) -> f64,
{
    if points_per_axis < 2 {
        return Err(Error::InvalidBoundParams(
            "Lipschitz grid needs at least 2 points per axis".into(),
        ));
    }
    let dim = domain.dim();
    let count = points_per_axis;
    let axes: Vec<Vec<f64>> = (0..dim).map(|k| domain.axis_points(k, count)).collect();
    let spacing: Vec<f64> = axes.iter().map(|a| a[1] - a[0]).collect();
    let total = count
        .checked_pow(dim as u32)
        .ok_or_else(|| Error::InvalidBoundParams("Lipschitz grid is too large".into()))?;

    let mut values = Vec::with_capacity(total);
    let mut point = vec![0.0; dim];
    for idx in 0..total {
        let mut rem = idx;
        for (k, pts) in axes.iter().enumerate() {
            point[k] = pts[rem % count];
            rem /= count;
        }
        let v = f(&point);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("function value at {:?}", point)));
        }
        values.push(v);
    }

    let strides: Vec<usize> = (0..dim).map(|k| count.pow(k as u32)).collect();
    let mut best = 0.0f64;
    for idx in 0..total {
        let mut sq = 0.0;
        for k in 0..dim {
            let pos = (idx / strides[k]) % count;
            let (a, b) = if pos + 1 < count {
                (idx, idx + strides[k])
            } else {
                (idx - strides[k], idx)
            };
            let slope = (values[b] - values[a]) / spacing[k];
            sq += slope * slope;
        }
        best = best.max(sq.sqrt());
    }
    Ok(LipschitzEstimate {
        constant: best,
        spacing,
    })
}

/// Points per axis that give at most `spacing` between neighbors.
pub fn points_for_spacing(domain: &Domain, spacing: f64) -> usize {
    let widest = domain
        .bounds()
        .iter()
        .map(|&(lo, hi)| hi - lo)
        .fold(0.0, f64::max);
    (widest / spacing).ceil() as usize + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn lp(agent: usize, mean: f64, variance: f64) -> LocalPrediction {
        LocalPrediction {
            agent,
            dim: 0,
            mean,
            variance,
        }
    }

    #[test]
    fn isolated_agent_keeps_own_mean() {
        let f = fuse(&lp(0, 0.7, 0.3), &[], &[0.0]).unwrap();
        assert_eq!(f.mean, 0.7);
        assert_eq!(f.weight(0), 1.0);
        assert_abs_diff_eq!(f.precision, 1.0 / 0.3, epsilon = 1e-15);
    }

    #[test]
    fn equal_variances_average() {
        let f = fuse(&lp(0, 1.0, 0.5), &[lp(1, 3.0, 0.5)], &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(f.mean, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.weight(0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(f.weight(1), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn hand_example_weights() {
        let f = fuse(&lp(0, 1.0, 1.0), &[lp(1, 0.0, 4.0)], &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(f.weight(0), 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(f.weight(1), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(f.mean, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(f.precision, 1.25, epsilon = 1e-15);
    }

    #[test]
    fn unlinked_neighbor_has_zero_weight() {
        let f = fuse(&lp(0, 1.0, 1.0), &[lp(1, 5.0, 0.1)], &[0.0, 0.0]).unwrap();
        assert_eq!(f.mean, 1.0);
        assert_eq!(f.weight(1), 0.0);
    }

    #[test]
    fn zero_variance_rejected() {
        assert!(matches!(
            fuse(&lp(0, 1.0, 0.0), &[], &[0.0]),
            Err(Error::NonPositiveVariance(_))
        ));
        assert!(fuse(&lp(0, 1.0, 1.0), &[lp(1, 0.0, -1.0)], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn beta_collapses_to_two() {
        // r sqrt(m) = 2 rho, n = 1, delta = 1/e
        let b = beta(0.5, (-1.0f64).exp(), 1, 1, 1.0).unwrap();
        assert_abs_diff_eq!(b, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn beta_benchmark_constants() {
        let b = beta(0.1, 0.05, 2, 4, 4.0 * 2f64.sqrt()).unwrap();
        let expected = 4.0 * 40f64.ln() + 2.0 * 4f64.ln() - 2.0 * 0.05f64.ln();
        assert_abs_diff_eq!(b, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(b, 23.52, epsilon = 5e-3);
    }

    #[test]
    fn beta_halving_delta() {
        let b1 = beta(0.1, 0.1, 2, 4, 3.0).unwrap();
        let b2 = beta(0.1, 0.05, 2, 4, 3.0).unwrap();
        assert_abs_diff_eq!(b2 - b1, 2.0 * 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn beta_vacuous_covering() {
        assert!(matches!(
            beta(10.0, 0.05, 1, 2, 1.0),
            Err(Error::VacuousCovering { .. })
        ));
    }

    #[test]
    fn gamma_cases() {
        assert_eq!(gamma(0.0, 20.0, 3.0, 2.0, 1.0), 0.0);
        assert_eq!(gamma(0.5, 20.0, 1.0, 1.0, 0.0), 1.0);
        assert_abs_diff_eq!(gamma(0.1, 20.0, 1.0, 2.0, 0.5), 0.3 + 1.0, epsilon = 1e-15);
    }

    #[test]
    fn gamma_vanishes_with_rho() {
        let mut prev = f64::INFINITY;
        for e in 1..8 {
            let rho = 10f64.powi(-e);
            let b = beta(rho, 0.05, 2, 4, 4.0).unwrap();
            let g = gamma(rho, b, 2.0, 3.0, 1.5);
            assert!(g < prev);
            prev = g;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn bound_zero_when_certain() {
        let f = fuse(&lp(0, 1.0, 1.0), &[lp(1, 0.0, 1.0)], &[0.0, 1.0]).unwrap();
        let zero_sigma = [lp(0, 1.0, 0.0), lp(1, 0.0, 0.0)];
        assert_eq!(
            pointwise_bound(&f, &zero_sigma, 9.0, &[0.0, 0.0]).unwrap(),
            0.0
        );
    }

    #[test]
    fn bound_single_model() {
        let own = lp(0, 0.2, 0.25);
        let f = fuse(&own, &[], &[0.0]).unwrap();
        let b = pointwise_bound(&f, &[own], 9.0, &[0.1]).unwrap();
        assert_abs_diff_eq!(b, 3.0 * 0.5 + 0.1, epsilon = 1e-15);
    }

    #[test]
    fn bound_two_models_by_hand() {
        let locals = [lp(0, 1.0, 1.0), lp(1, 0.0, 4.0)];
        let f = fuse(&locals[0], &locals[1..], &[0.0, 1.0]).unwrap();
        // 0.8 (2*1 + 0.1) + 0.2 (2*2 + 0.3) = 1.68 + 0.86
        let b = pointwise_bound(&f, &locals, 4.0, &[0.1, 0.3]).unwrap();
        assert_abs_diff_eq!(b, 2.54, epsilon = 1e-14);
    }

    #[test]
    fn lipschitz_linear_and_constant() {
        let d = Domain::cube(2, -2.0, 2.0);
        let lin = estimate_lipschitz(|x| 3.0 * x[0] - 4.0 * x[1], &d, 41).unwrap();
        assert_abs_diff_eq!(lin.constant, 5.0, epsilon = 1e-9);
        let c = estimate_lipschitz(|_| 2.5, &d, 41).unwrap();
        assert_eq!(c.constant, 0.0);
        assert_abs_diff_eq!(c.spacing[0], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn lipschitz_sine() {
        let d = Domain::cube(2, -2.0, 2.0);
        let n = points_for_spacing(&d, 1e-3);
        let est = estimate_lipschitz(|x| x[0].sin(), &d, n).unwrap();
        assert!(est.spacing[0] <= 1e-3 + 1e-15);
        assert!((est.constant - 1.0).abs() < 1e-2, "{}", est.constant);
    }

    #[test]
    fn lipschitz_rejects_non_finite() {
        let d = Domain::cube(1, -1.0, 1.0);
        assert!(estimate_lipschitz(|x| 1.0 / x[0], &d, 3).is_err());
    }
}
