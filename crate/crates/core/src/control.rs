//! Consensus error, control laws and the ultimate-bound radius.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::strategy::LearningStrategy;
use crate::topology::Topology;

/// Positive per-agent feedback gains.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Gains(Vec<f64>);

impl Gains {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidGains("no gains given".into()));
        }
        if let Some((i, k)) = values
            .iter()
            .enumerate()
            .find(|(_, &k)| !(k > 0.0) || !k.is_finite())
        {
            return Err(Error::InvalidGains(format!(
                "gain k_{} = {} must be positive and finite",
                i + 1,
                k
            )));
        }
        Ok(Gains(values))
    }

    pub fn uniform(n: usize, k: f64) -> Result<Self> {
        Self::new(vec![k; n])
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `k* = min k_i`.
    pub fn k_star(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// A learning strategy together with the gains it runs with.
#[derive(Clone, Debug)]
pub struct ControlMode {
    pub strategy: Arc<dyn LearningStrategy>,
    pub gains: Gains,
}

impl ControlMode {
    pub fn name(&self) -> &'static str {
        self.strategy.name()
    }
}

/// Per-agent tracking error `e_i = x_i - x_l` and consensus error `xi_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusState {
    pub xi: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
}

impl ConsensusState {
    pub fn stacked_e(&self) -> Vec<f64> {
        self.e.iter().flatten().copied().collect()
    }

    pub fn stacked_xi(&self) -> Vec<f64> {
        self.xi.iter().flatten().copied().collect()
    }
}

/// `xi_i = sum_j a_ij (e_i - e_j) + b_ii e_i`, evaluated agent by agent.
pub fn consensus_error(
    states: &[Vec<f64>],
    leader: &[f64],
    topology: &Topology,
) -> Result<ConsensusState> {
    let n = topology.n();
    if states.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: states.len(),
        });
    }
    let m = leader.len();
    if let Some(bad) = states.iter().find(|x| x.len() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: bad.len(),
        });
    }
    let e: Vec<Vec<f64>> = states
        .iter()
        .map(|x| x.iter().zip(leader).map(|(a, b)| a - b).collect())
        .collect();
    let b = topology.leader_links();
    let xi = (0..n)
        .map(|i| {
            let mut out: Vec<f64> = e[i].iter().map(|v| b[i] * v).collect();
            for j in topology.neighbors(i) {
                let a = topology.weight(i, j);
                for k in 0..m {
                    out[k] += a * (e[i][k] - e[j][k]);
                }
            }
            out
        })
        .collect();
    Ok(ConsensusState { xi, e })
}

/// `(M kron I_m) v` for a stacked vector `v` of `n` blocks of size `m`.
pub fn kron_identity_apply(matrix: &DMatrix<f64>, v: &[f64], m: usize) -> Vec<f64> {
    let n = matrix.nrows();
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..n {
            let a = matrix[(i, j)];
            if a != 0.0 {
                for k in 0..m {
                    out[i * m + k] += a * v[j * m + k];
                }
            }
        }
    }
    out
}

/// `u_i = -k_i xi_i - prediction - f_hat`.
///
/// `prediction` must be present exactly when the mode's strategy learns.
pub fn control_input(
    mode: &ControlMode,
    i: usize,
    xi_i: &[f64],
    prediction: Option<&[f64]>,
    f_hat: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let k = mode.gains.get(i);
    let mut u: Vec<f64> = xi_i.iter().map(|v| -k * v).collect();
    if mode.strategy.uses_models() {
        let p = prediction.ok_or(Error::MissingPrediction(i + 1))?;
        subtract(&mut u, p)?;
    }
    if let Some(fh) = f_hat {
        subtract(&mut u, fh)?;
    }
    Ok(u)
}

fn subtract(u: &mut [f64], v: &[f64]) -> Result<()> {
    if v.len() != u.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    for (a, b) in u.iter_mut().zip(v) {
        *a -= b;
    }
    Ok(())
}

/// `sum_i (f_l_bar^2 + ||dtau_i||^2)` given per-agent model-error norms.
pub fn nu(leader_bound: f64, model_errors: &[f64]) -> f64 {
    model_errors
        .iter()
        .map(|d| leader_bound * leader_bound + d * d)
        .sum()
}

/// `r = sqrt(2 nu) / (k* lambda_min)`.
pub fn ultimate_bound_radius(nu: f64, k_star: f64, lambda_min: f64) -> Result<f64> {
    if !(k_star > 0.0) {
        return Err(Error::InvalidGains(format!(
            "k* must be positive, got {}",
            k_star
        )));
    }
    if !(lambda_min > 0.0) {
        return Err(Error::NotPositiveDefinite { lambda_min });
    }
    if !(nu >= 0.0) {
        return Err(Error::InvalidBoundParams(format!(
            "nu must be nonnegative, got {}",
            nu
        )));
    }
    Ok((2.0 * nu).sqrt() / (k_star * lambda_min))
}
