//! Fixed-step closed-loop simulation and the stability monitors evaluated on
//! its trajectory.

use rand::Rng;
use serde::Serialize;

use crate::control::{consensus_error, control_input, kron_identity_apply, ControlMode};
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::gp::AgentModels;
use crate::plant::{stream_rng, Plant, STREAM_INITIAL};
use crate::strategy::PredictionContext;
use crate::topology::{GroundedLaplacian, Topology};

/// States beyond this magnitude abort the run.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Box for the random follower initial states.
    pub init_range: Domain,
    pub seed: u64,
    /// Overrides the plant's default leader initial state.
    pub leader_initial: Option<Vec<f64>>,
}

impl SimConfig {
    pub fn benchmark(seed: u64) -> Self {
        SimConfig {
            dt: 0.01,
            horizon: 100.0,
            init_range: Domain::cube(2, -2.0, 2.0),
            seed,
            leader_initial: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidSimConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.horizon >= self.dt * (1.0 - 1e-9)) || !self.horizon.is_finite() {
            return Err(Error::InvalidSimConfig(format!(
                "horizon {} must be at least dt = {}",
                self.horizon, self.dt
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt).round() as usize).max(1)
    }
}

/// One logged time instant.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub leader: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    pub xi: Vec<Vec<f64>>,
    pub lyapunov: f64,
    /// `E_j = sum_i |x_ij - x_lj|`
    pub accumulated: Vec<f64>,
    /// `||tau(x_i) - prediction_i||` per agent.
    pub dtau: Vec<f64>,
}

impl LogRow {
    pub fn error_norm(&self) -> f64 {
        self.e.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn xi_norm_sq(&self) -> f64 {
        self.xi.iter().flatten().map(|v| v * v).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivergenceInfo {
    pub step: usize,
    pub time: f64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    pub agents: usize,
    pub dim: usize,
    pub mode: String,
    pub rows: Vec<LogRow>,
    /// Set when the run was aborted; `rows` then holds the partial log.
    pub divergence: Option<DivergenceInfo>,
}

impl TrajectoryLog {
    pub fn new(agents: usize, dim: usize, mode: impl Into<String>) -> Self {
        TrajectoryLog {
            agents,
            dim,
            mode: mode.into(),
            rows: Vec::new(),
            divergence: None,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.t)
    }

    /// Rows with `t >= (1 - fraction) * horizon`.
    pub fn tail(&self, fraction: f64) -> &[LogRow] {
        let start_t = (1.0 - fraction) * self.horizon();
        let idx = self
            .rows
            .iter()
            .position(|r| r.t >= start_t - 1e-9)
            .unwrap_or(self.rows.len());
        &self.rows[idx..]
    }

    /// Mean of each `E_j` over the tail.
    pub fn tail_mean_accumulated(&self, fraction: f64) -> Vec<f64> {
        let tail = self.tail(fraction);
        let mut sums = vec![0.0; self.dim];
        for r in tail {
            for (s, v) in sums.iter_mut().zip(&r.accumulated) {
                *s += v;
            }
        }
        sums.iter().map(|s| s / tail.len().max(1) as f64).collect()
    }

    /// Largest per-step `sum_i (f_l_bar^2 + ||dtau_i||^2)` over the tail.
    pub fn tail_nu(&self, fraction: f64, leader_bound: f64) -> f64 {
        self.tail(fraction)
            .iter()
            .map(|r| crate::control::nu(leader_bound, &r.dtau))
            .fold(0.0, f64::max)
    }

    pub fn into_result(self) -> Result<TrajectoryLog> {
        match &self.divergence {
            Some(d) => Err(Error::Divergence {
                step: d.step,
                time: d.time,
                reason: d.reason.clone(),
            }),
            None => Ok(self),
        }
    }
}

fn check_finite(v: &[f64], t: f64, dt: f64, what: &str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Divergence {
            step: (t / dt).round() as usize,
            time: t,
            reason: format!("non-finite {} at component {}", what, i),
        }),
    }
}

/// Classical fourth-order Runge-Kutta step of `dy/dt = field(y, t)`.
pub fn rk4_step<F>(mut field: F, state: &[f64], t: f64, dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], f64) -> Vec<f64>,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidSimConfig(format!(
            "dt must be positive, got {}",
            dt
        )));
    }
    let axpy =
        |a: f64, k: &[f64]| -> Vec<f64> { state.iter().zip(k).map(|(s, d)| s + a * d).collect() };
    let k1 = field(state, t);
    check_finite(&k1, t, dt, "derivative (stage 1)")?;
    let k2 = field(&axpy(0.5 * dt, &k1), t + 0.5 * dt);
    check_finite(&k2, t, dt, "derivative (stage 2)")?;
    let k3 = field(&axpy(0.5 * dt, &k2), t + 0.5 * dt);
    check_finite(&k3, t, dt, "derivative (stage 3)")?;
    let k4 = field(&axpy(dt, &k3), t + dt);
    check_finite(&k4, t, dt, "derivative (stage 4)")?;
    Ok(state
        .iter()
        .enumerate()
        .map(|(i, s)| s + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// `1/2 e^T (L kron I_m) e`.
pub fn lyapunov(e: &[f64], grounded: &GroundedLaplacian, m: usize) -> Result<f64> {
    let n = grounded.n();
    if e.len() != n * m {
        return Err(Error::DimensionMismatch {
            expected: n * m,
            got: e.len(),
        });
    }
    let le = kron_identity_apply(&grounded.matrix, e, m);
    Ok(0.5 * e.iter().zip(&le).map(|(a, b)| a * b).sum::<f64>())
}

/// Random follower initial states: uniform in `init_range`, drawn agent by
/// agent, dimension by dimension.
pub fn initial_states(config: &SimConfig, n: usize) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(config.seed, STREAM_INITIAL);
    (0..n)
        .map(|_| {
            config
                .init_range
                .bounds()
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..=hi))
                .collect()
        })
        .collect()
}

/// Integrates leader and followers together. The control input is computed
/// once per step from fresh predictions and held over the step.
pub fn run(
    config: &SimConfig,
    plant: &dyn Plant,
    topology: &Topology,
    mode: &ControlMode,
    models: Option<&[AgentModels]>,
) -> Result<TrajectoryLog> {
    let x0 = initial_states(config, topology.n());
    run_from(config, plant, topology, mode, models, x0)
}

/// Like [`run`] but with explicit follower initial states.
pub fn run_from(
    config: &SimConfig,
    plant: &dyn Plant,
    topology: &Topology,
    mode: &ControlMode,
    models: Option<&[AgentModels]>,
    initial: Vec<Vec<f64>>,
) -> Result<TrajectoryLog> {
    config.validate()?;
    let n = topology.n();
    let m = plant.dim();
    if config.init_range.dim() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: config.init_range.dim(),
        });
    }
    if mode.gains.len() != n {
        return Err(Error::InvalidGains(format!(
            "{} gains for {} agents",
            mode.gains.len(),
            n
        )));
    }
    if mode.strategy.uses_models() {
        match models {
            Some(b) if b.len() == n && b.iter().all(|a| a.output_dim() == m) => {}
            Some(b) => {
                return Err(Error::Config(format!(
                    "expected {} trained agents with {} outputs, got {}",
                    n,
                    m,
                    b.len()
                )))
            }
            None => {
                return Err(Error::Config(format!(
                    "mode '{}' needs trained models",
                    mode.name()
                )))
            }
        }
    }
    if !topology.check_connectivity().holds {
        return Err(Error::AssumptionViolated(
            topology.check_connectivity().diagnostic,
        ));
    }
    let grounded = topology.grounded_laplacian()?;
    let leader0 = config
        .leader_initial
        .clone()
        .unwrap_or_else(|| plant.default_leader_initial());
    if leader0.len() != m || initial.len() != n || initial.iter().any(|x| x.len() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: leader0.len(),
        });
    }

    let ctx = PredictionContext { models, topology };
    let dt = config.dt;
    let steps = config.steps();
    let mut log = TrajectoryLog::new(n, m, mode.name());
    log.rows.reserve(steps + 1);

    let mut state: Vec<f64> = leader0
        .iter()
        .chain(initial.iter().flatten())
        .copied()
        .collect();

    for step in 0..=steps {
        let t = step as f64 * dt;
        let leader = state[..m].to_vec();
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|i| state[m * (i + 1)..m * (i + 2)].to_vec())
            .collect();
        let cs = consensus_error(&xs, &leader, topology)?;

        let mut us = Vec::with_capacity(n);
        let mut dtau = Vec::with_capacity(n);
        for i in 0..n {
            let pred = mode.strategy.predict(&ctx, i, &xs[i])?;
            let prior = plant.has_prior().then(|| plant.prior(&xs[i]));
            let u = control_input(mode, i, &cs.xi[i], pred.as_deref(), prior.as_deref())?;
            let tau = plant.residual(&xs[i]);
            let err = match &pred {
                Some(p) => tau.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>(),
                None => tau.iter().map(|a| a * a).sum::<f64>(),
            };
            dtau.push(err.sqrt());
            us.push(u);
        }

        let stacked_e = cs.stacked_e();
        let lyap = lyapunov(&stacked_e, &grounded, m)?;
        let accumulated = (0..m)
            .map(|k| cs.e.iter().map(|e| e[k].abs()).sum())
            .collect();
        log.rows.push(LogRow {
            t,
            leader,
            x: xs,
            u: us.clone(),
            e: cs.e,
            xi: cs.xi,
            lyapunov: lyap,
            accumulated,
            dtau,
        });
        if step == steps {
            break;
        }

        let field = |s: &[f64], tt: f64| -> Vec<f64> {
            let mut d = Vec::with_capacity(s.len());
            d.extend(plant.leader_velocity(&s[..m], tt));
            for (i, u) in us.iter().enumerate() {
                d.extend(plant.follower_velocity(&s[m * (i + 1)..m * (i + 2)], u));
            }
            d
        };
        let next = match rk4_step(field, &state, t, dt) {
            Ok(s) => s,
            Err(Error::Divergence { reason, .. }) => {
                log.divergence = Some(DivergenceInfo {
                    step,
                    time: t,
                    reason,
                });
                return Ok(log);
            }
            Err(e) => return Err(e),
        };
        if let Some(idx) = next
            .iter()
            .position(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
        {
            log.divergence = Some(DivergenceInfo {
                step: step + 1,
                time: t + dt,
                reason: format!(
                    "state component {} reached {:e} (limit {:e})",
                    idx, next[idx], DIVERGENCE_LIMIT
                ),
            });
            return Ok(log);
        }
        state = next;
    }
    Ok(log)
}

/// Containment of the stacked tracking error in a ball of radius `r`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContainmentReport {
    pub radius: f64,
    /// First time after which `||e|| <= r` for the rest of the horizon.
    pub entered_at: Option<f64>,
    pub contained: bool,
    /// Steps (excluding the last row) at which `||e|| > r`.
    pub steps_outside: usize,
    /// Among those, the fraction with `V(t + dt) < V(t)`.
    pub decrease_fraction_outside: Option<f64>,
    pub max_error_norm_tail: f64,
}

/// Checks when the trajectory enters the ball of radius `radius` for good and
/// how often the Lyapunov function decreases while outside it.
pub fn radius_monitor(log: &TrajectoryLog, radius: f64) -> ContainmentReport {
    let norms: Vec<f64> = log.rows.iter().map(LogRow::error_norm).collect();
    let mut entered_at = None;
    for (idx, &nrm) in norms.iter().enumerate().rev() {
        if nrm <= radius {
            entered_at = Some(log.rows[idx].t);
        } else {
            break;
        }
    }
    let mut outside = 0usize;
    let mut decreasing = 0usize;
    for w in 0..log.rows.len().saturating_sub(1) {
        if norms[w] > radius {
            outside += 1;
            if log.rows[w + 1].lyapunov < log.rows[w].lyapunov {
                decreasing += 1;
            }
        }
    }
    let tail_start = log.tail(0.25).first().map_or(0.0, |r| r.t);
    let max_error_norm_tail = log
        .rows
        .iter()
        .zip(&norms)
        .filter(|(r, _)| r.t >= tail_start)
        .map(|(_, &v)| v)
        .fold(0.0, f64::max);
    ContainmentReport {
        radius,
        entered_at,
        contained: entered_at.is_some(),
        steps_outside: outside,
        decrease_fraction_outside: (outside > 0).then(|| decreasing as f64 / outside as f64),
        max_error_norm_tail,
    }
}
