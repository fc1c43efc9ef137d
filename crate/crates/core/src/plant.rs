//! Follower, disturbance and leader dynamics; the residual the GPs learn;
//! training-data generation.
//!
//! New plants are added by implementing [`Plant`] and registering a
//! constructor in a [`PlantRegistry`].

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::gp::Dataset;

/// Dynamics of one homogeneous follower class and its virtual leader:
/// `dx_i/dt = f(x_i) + u_i + h(x_i)`, `dx_l/dt = f_l(x_l, t)`.
pub trait Plant: Send + Sync {
    fn name(&self) -> &str;

    /// State dimension `m`.
    fn dim(&self) -> usize;

    /// Follower drift, unknown to the controller.
    fn drift(&self, x: &[f64]) -> Vec<f64>;

    /// Environmental disturbance, unknown to the controller.
    fn disturbance(&self, x: &[f64]) -> Vec<f64>;

    /// Known part of the drift. Defaults to zero.
    fn prior(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    /// True if `prior` is not identically zero.
    fn has_prior(&self) -> bool {
        false
    }

    fn leader_velocity(&self, xl: &[f64], t: f64) -> Vec<f64>;

    /// Bound on the leader velocity norm over all time.
    fn leader_bound(&self) -> f64;

    fn default_leader_initial(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    /// `f(x) - f_hat(x) + h(x)`.
    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let f = self.drift(x);
        let h = self.disturbance(x);
        let fh = self.prior(x);
        f.iter()
            .zip(&h)
            .zip(&fh)
            .map(|((a, b), c)| a - c + b)
            .collect()
    }

    /// Right-hand side of a follower under input `u`.
    fn follower_velocity(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let f = self.drift(x);
        let h = self.disturbance(x);
        f.iter()
            .zip(&h)
            .zip(u)
            .map(|((a, b), c)| a + b + c)
            .collect()
    }
}

pub const LEADER_FREQUENCY: f64 = 0.02 * PI;

fn benchmark_drift(x: &[f64]) -> Vec<f64> {
    vec![
        2.0 * x[1] * x[0].sin(),
        x[0] * (0.2 * x[1] * x[1] + x[1]).cos(),
    ]
}

fn benchmark_disturbance(x: &[f64]) -> Vec<f64> {
    vec![x[1].sin(), x[0].sin()]
}

/// How the leader signal `(sin wt, cos wt)` is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeaderSignal {
    /// The signal is the leader position; its velocity is `w (cos wt, -sin wt)`
    /// and the leader starts at `(0, 1)`. Keeps the leader on the unit circle,
    /// inside the training domain.
    Position,
    /// The signal is the leader velocity; the leader starts at the origin and
    /// sweeps a circle of radius `1/w`.
    Velocity,
}

/// The two-dimensional benchmark system with four identical followers.
#[derive(Clone, Debug)]
pub struct BenchmarkPlant {
    name: &'static str,
    leader: LeaderSignal,
    /// Use the first drift component as known prior model.
    partial_prior: bool,
}

impl BenchmarkPlant {
    pub fn new(leader: LeaderSignal) -> Self {
        let name = match leader {
            LeaderSignal::Position => "paper_sec5",
            LeaderSignal::Velocity => "paper_sec5_velocity",
        };
        BenchmarkPlant {
            name,
            leader,
            partial_prior: false,
        }
    }

    /// Same system, but the controller knows `f_hat = (2 x2 sin x1, 0)`.
    pub fn with_partial_prior() -> Self {
        BenchmarkPlant {
            name: "paper_sec5_partial",
            leader: LeaderSignal::Position,
            partial_prior: true,
        }
    }

    pub fn leader_signal(&self) -> LeaderSignal {
        self.leader
    }
}

impl Plant for BenchmarkPlant {
    fn name(&self) -> &str {
        self.name
    }

    fn dim(&self) -> usize {
        2
    }

    fn drift(&self, x: &[f64]) -> Vec<f64> {
        benchmark_drift(x)
    }

    fn disturbance(&self, x: &[f64]) -> Vec<f64> {
        benchmark_disturbance(x)
    }

    fn prior(&self, x: &[f64]) -> Vec<f64> {
        if self.partial_prior {
            vec![2.0 * x[1] * x[0].sin(), 0.0]
        } else {
            vec![0.0, 0.0]
        }
    }

    fn has_prior(&self) -> bool {
        self.partial_prior
    }

    fn leader_velocity(&self, _xl: &[f64], t: f64) -> Vec<f64> {
        let wt = LEADER_FREQUENCY * t;
        match self.leader {
            LeaderSignal::Position => {
                vec![LEADER_FREQUENCY * wt.cos(), -LEADER_FREQUENCY * wt.sin()]
            }
            LeaderSignal::Velocity => vec![wt.sin(), wt.cos()],
        }
    }

    fn leader_bound(&self) -> f64 {
        match self.leader {
            LeaderSignal::Position => LEADER_FREQUENCY,
            LeaderSignal::Velocity => 1.0,
        }
    }

    fn default_leader_initial(&self) -> Vec<f64> {
        match self.leader {
            LeaderSignal::Position => vec![0.0, 1.0],
            LeaderSignal::Velocity => vec![0.0, 0.0],
        }
    }
}

/// Plant with `f = h = 0`: nothing to learn.
#[derive(Clone, Debug)]
pub struct ZeroResidualPlant {
    name: &'static str,
    dim: usize,
    moving_leader: bool,
}

impl ZeroResidualPlant {
    /// Leader follows the same path as `paper_sec5`.
    pub fn moving(dim: usize) -> Self {
        ZeroResidualPlant {
            name: "zero_residual",
            dim,
            moving_leader: true,
        }
    }

    /// Leader at rest.
    pub fn resting(dim: usize) -> Self {
        ZeroResidualPlant {
            name: "zero_residual_static",
            dim,
            moving_leader: false,
        }
    }
}

impl Plant for ZeroResidualPlant {
    fn name(&self) -> &str {
        self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    fn disturbance(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    fn leader_velocity(&self, _xl: &[f64], t: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        if self.moving_leader {
            let wt = LEADER_FREQUENCY * t;
            v[0] = LEADER_FREQUENCY * wt.cos();
            if self.dim > 1 {
                v[1] = -LEADER_FREQUENCY * wt.sin();
            }
        }
        v
    }

    fn leader_bound(&self) -> f64 {
        if self.moving_leader {
            LEADER_FREQUENCY
        } else {
            0.0
        }
    }
}

type VecField = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type LeaderField = Box<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;

/// Plant assembled from closures; the code-level extension point for
/// experiments that need custom dynamics.
pub struct FnPlant {
    name: String,
    dim: usize,
    drift: VecField,
    disturbance: VecField,
    prior: Option<VecField>,
    leader: LeaderField,
    leader_bound: f64,
    leader_initial: Vec<f64>,
}

impl FnPlant {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        drift: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        disturbance: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        leader: impl Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static,
        leader_bound: f64,
    ) -> Self {
        FnPlant {
            name: name.into(),
            dim,
            drift: Box::new(drift),
            disturbance: Box::new(disturbance),
            prior: None,
            leader: Box::new(leader),
            leader_bound,
            leader_initial: vec![0.0; dim],
        }
    }

    pub fn with_prior(
        mut self,
        prior: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.prior = Some(Box::new(prior));
        self
    }

    pub fn with_leader_initial(mut self, x0: Vec<f64>) -> Self {
        self.leader_initial = x0;
        self
    }

    /// Leader bound taken as 1.05 times the numerically probed supremum of
    /// the leader speed over `[0, horizon]`, starting from the configured
    /// leader initial state.
    pub fn with_probed_leader_bound(mut self, horizon: f64, dt: f64) -> Self {
        self.leader_bound = 1.05 * probe_leader_speed(&self, horizon, dt);
        self
    }
}

impl Plant for FnPlant {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, x: &[f64]) -> Vec<f64> {
        (self.drift)(x)
    }

    fn disturbance(&self, x: &[f64]) -> Vec<f64> {
        (self.disturbance)(x)
    }

    fn prior(&self, x: &[f64]) -> Vec<f64> {
        match &self.prior {
            Some(p) => p(x),
            None => vec![0.0; x.len()],
        }
    }

    fn has_prior(&self) -> bool {
        self.prior.is_some()
    }

    fn leader_velocity(&self, xl: &[f64], t: f64) -> Vec<f64> {
        (self.leader)(xl, t)
    }

    fn leader_bound(&self) -> f64 {
        self.leader_bound
    }

    fn default_leader_initial(&self) -> Vec<f64> {
        self.leader_initial.clone()
    }
}

/// Largest leader speed seen while integrating the leader alone (forward
/// Euler) over `[0, horizon]`.
pub fn probe_leader_speed(plant: &dyn Plant, horizon: f64, dt: f64) -> f64 {
    let mut xl = plant.default_leader_initial();
    let steps = (horizon / dt).ceil() as usize;
    let mut sup = 0.0f64;
    for s in 0..=steps {
        let t = s as f64 * dt;
        let v = plant.leader_velocity(&xl, t);
        sup = sup.max(v.iter().map(|c| c * c).sum::<f64>().sqrt());
        for (x, dv) in xl.iter_mut().zip(&v) {
            *x += dt * dv;
        }
    }
    sup
}

type PlantCtor = fn() -> Arc<dyn Plant>;

/// Name -> plant constructor.
pub struct PlantRegistry {
    entries: BTreeMap<&'static str, PlantCtor>,
}

impl PlantRegistry {
    pub fn empty() -> Self {
        PlantRegistry {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("paper_sec5", || {
            Arc::new(BenchmarkPlant::new(LeaderSignal::Position))
        });
        r.register("paper_sec5_velocity", || {
            Arc::new(BenchmarkPlant::new(LeaderSignal::Velocity))
        });
        r.register("paper_sec5_partial", || {
            Arc::new(BenchmarkPlant::with_partial_prior())
        });
        r.register("zero_residual", || Arc::new(ZeroResidualPlant::moving(2)));
        r.register("zero_residual_static", || {
            Arc::new(ZeroResidualPlant::resting(2))
        });
        r
    }

    pub fn register(&mut self, name: &'static str, ctor: PlantCtor) {
        self.entries.insert(name, ctor);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Plant>> {
        self.entries
            .get(name)
            .map(|ctor| ctor())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "plant",
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }
}

/// How training inputs are placed in the domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Axis-aligned tensor grid; `total` must be a perfect `m`-th power.
    Grid,
    /// Independent uniform draws from the seeded stream.
    Uniform,
}

/// How training points are split among agents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// Split every axis at its midpoint; agent `i` (zero-based) receives the
    /// cell whose axis-`k` half is the upper one iff bit `k` of `i` is set.
    /// Points on a midpoint go to the upper half. Needs `n = 2^m`.
    Orthants,
    /// `n` equal slabs along the first axis, lowest first.
    Slabs,
}

impl Partition {
    pub fn assign(&self, x: &[f64], domain: &Domain, n: usize) -> usize {
        match self {
            Partition::Orthants => (0..domain.dim())
                .filter(|&k| x[k] >= domain.midpoint(k))
                .map(|k| 1usize << k)
                .sum(),
            Partition::Slabs => {
                let (lo, hi) = domain.bounds()[0];
                let frac = (x[0] - lo) / (hi - lo);
                ((frac * n as f64).floor() as usize).min(n - 1)
            }
        }
    }

    pub fn check(&self, domain: &Domain, n: usize) -> Result<()> {
        match self {
            Partition::Orthants => {
                let cells = 1usize << domain.dim();
                if cells != n {
                    return Err(Error::InvalidPartition(format!(
                        "orthant partition of a {}-dimensional domain has {} cells but there are {} agents",
                        domain.dim(),
                        cells,
                        n
                    )));
                }
            }
            Partition::Slabs => {
                if n == 0 {
                    return Err(Error::InvalidPartition("no agents".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSpec {
    pub total: usize,
    pub sampling: Sampling,
    pub partition: Partition,
    pub noise_variance: f64,
}

impl TrainingSpec {
    pub fn benchmark() -> Self {
        TrainingSpec {
            total: 400,
            sampling: Sampling::Grid,
            partition: Partition::Orthants,
            noise_variance: 0.01,
        }
    }
}

pub(crate) const STREAM_TRAINING: u64 = 1;
pub(crate) const STREAM_INITIAL: u64 = 2;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-agent training sets: `result[i][k]` holds agent `i`'s data for
/// residual component `k`. Outputs are `tau_k(x)` plus independent
/// Gaussian noise of variance `spec.noise_variance`.
pub fn generate_training_data(
    plant: &dyn Plant,
    domain: &Domain,
    spec: &TrainingSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<Dataset>>> {
    let m = plant.dim();
    if domain.dim() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: domain.dim(),
        });
    }
    if !(spec.noise_variance >= 0.0) || !spec.noise_variance.is_finite() {
        return Err(Error::InvalidDataset(format!(
            "training noise variance must be finite and nonnegative, got {}",
            spec.noise_variance
        )));
    }
    spec.partition.check(domain, n)?;
    let mut rng = stream_rng(seed, STREAM_TRAINING);

    let inputs: Vec<Vec<f64>> = match spec.sampling {
        Sampling::Grid => {
            let per_axis = (spec.total as f64).powf(1.0 / m as f64).round() as usize;
            if per_axis.pow(m as u32) != spec.total || per_axis < 2 {
                return Err(Error::InvalidDataset(format!(
                    "grid sampling needs total = p^{} with p >= 2, got {}",
                    m, spec.total
                )));
            }
            domain.grid(per_axis)
        }
        Sampling::Uniform => (0..spec.total)
            .map(|_| {
                domain
                    .bounds()
                    .iter()
                    .map(|&(lo, hi)| rng.random_range(lo..=hi))
                    .collect()
            })
            .collect(),
    };

    let noise = if spec.noise_variance > 0.0 {
        Some(Normal::new(0.0, spec.noise_variance.sqrt()).expect("valid normal"))
    } else {
        None
    };

    let mut xs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
    let mut ys: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); m]; n];
    for x in inputs {
        let tau = plant.residual(&x);
        let owner = spec.partition.assign(&x, domain, n);
        for k in 0..m {
            let eps = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
            ys[owner][k].push(tau[k] + eps);
        }
        xs[owner].push(x);
    }

    xs.into_iter()
        .zip(ys)
        .map(|(x, y_per_dim)| {
            y_per_dim
                .into_iter()
                .map(|y| Dataset::new(m, x.clone(), y))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}
