//! Experiment configuration: a TOML document with one section per subsystem.
//! Unknown keys are rejected. Omitted keys take the documented defaults,
//! which reproduce the four-agent benchmark.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{ControlMode, Gains};
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::gp::KernelParams;
use crate::plant::{Partition, Plant, PlantRegistry, Sampling, TrainingSpec};
use crate::sim::SimConfig;
use crate::strategy::StrategyRegistry;
use crate::topology::Topology;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default = "default_plant")]
    pub plant: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub topology: TopologySection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub bounds: BoundsSection,
}

fn default_plant() -> String {
    "paper_sec5".into()
}

/// Agents are numbered from 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub agents: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader_links: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub weighted: bool,
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection {
            agents: 4,
            edges: Some(vec![[1, 3], [2, 3], [2, 4]]),
            adjacency: None,
            leader_links: Some(vec![1, 2]),
            leader_weights: None,
            weighted: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainSpec {
    Uniform(f64),
    PerAgent(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_gains")]
    pub gains: GainSpec,
}

fn default_mode() -> String {
    "distributed".into()
}

fn default_gains() -> GainSpec {
    GainSpec::Uniform(2.0)
}

impl Default for ControlSection {
    fn default() -> Self {
        ControlSection {
            mode: default_mode(),
            gains: default_gains(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_range: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader_initial: Option<Vec<f64>>,
}

fn default_dt() -> f64 {
    0.01
}

fn default_horizon() -> f64 {
    100.0
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            dt: default_dt(),
            horizon: default_horizon(),
            init_range: None,
            leader_initial: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    #[serde(default = "one")]
    pub signal_variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default = "default_noise")]
    pub noise_variance: f64,
}

fn one() -> f64 {
    1.0
}

fn default_noise() -> f64 {
    0.01
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection {
            signal_variance: 1.0,
            weights: None,
            noise_variance: default_noise(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default = "default_total")]
    pub total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_sampling")]
    pub sampling: Sampling,
    #[serde(default = "default_partition")]
    pub partition: Partition,
    #[serde(default = "default_noise")]
    pub noise_variance: f64,
}

fn default_total() -> usize {
    400
}

fn default_sampling() -> Sampling {
    Sampling::Grid
}

fn default_partition() -> Partition {
    Partition::Orthants
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            total: default_total(),
            domain: None,
            sampling: default_sampling(),
            partition: default_partition(),
            noise_variance: default_noise(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Points per axis for Lipschitz estimation.
    #[serde(default = "default_lipschitz_grid")]
    pub lipschitz_grid: usize,
    /// Points per axis for grid maxima of the pointwise bound.
    #[serde(default = "default_report_grid")]
    pub report_grid: usize,
    /// Fraction of the horizon over which the trajectory `nu` is taken.
    #[serde(default = "default_tail_fraction")]
    pub nu_tail_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_f: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_mean: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_variance: Option<Vec<Vec<f64>>>,
}

fn default_delta() -> f64 {
    0.05
}

fn default_rho() -> f64 {
    0.1
}

fn default_lipschitz_grid() -> usize {
    200
}

fn default_report_grid() -> usize {
    41
}

fn default_tail_fraction() -> f64 {
    0.5
}

impl Default for BoundsSection {
    fn default() -> Self {
        BoundsSection {
            delta: default_delta(),
            rho: default_rho(),
            lipschitz_grid: default_lipschitz_grid(),
            report_grid: default_report_grid(),
            nu_tail_fraction: default_tail_fraction(),
            lipschitz_f: None,
            lipschitz_mean: None,
            lipschitz_variance: None,
        }
    }
}

impl Default for ConfigFile {
    fn default() -> Self {
        toml::from_str("").expect("empty document takes every default")
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

/// Fully validated experiment settings.
#[derive(Clone)]
pub struct ExperimentConfig {
    pub file: ConfigFile,
    pub plant: Arc<dyn Plant>,
    pub topology: Topology,
    pub gains: Gains,
    pub sim: SimConfig,
    pub kernel: KernelParams,
    pub training: TrainingSpec,
    pub training_domain: Domain,
    pub bounds: BoundsSection,
}

fn domain_from(rows: &Option<Vec<[f64; 2]>>, dim: usize, what: &str) -> Result<Domain> {
    match rows {
        None => Ok(Domain::cube(dim, -2.0, 2.0)),
        Some(r) => {
            if r.len() != dim {
                return Err(Error::Config(format!(
                    "{} has {} axes but the plant state has {}",
                    what,
                    r.len(),
                    dim
                )));
            }
            Domain::new(r.iter().map(|b| (b[0], b[1])).collect())
        }
    }
}

fn build_topology(t: &TopologySection) -> Result<Topology> {
    let n = t.agents;
    if n == 0 {
        return Err(Error::InvalidTopology(
            "topology.agents must be positive".into(),
        ));
    }
    let adjacency = match (&t.edges, &t.adjacency) {
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "give either topology.edges or topology.adjacency, not both".into(),
            ))
        }
        (None, None) => return Err(Error::Config("topology needs edges or adjacency".into())),
        (Some(edges), None) => {
            let mut a = DMatrix::zeros(n, n);
            for &[i, j] in edges {
                if i == 0 || j == 0 || i > n || j > n {
                    return Err(Error::InvalidTopology(format!(
                        "edge [{}, {}] references an agent outside 1..={}",
                        i, j, n
                    )));
                }
                a[(i - 1, j - 1)] = 1.0;
                a[(j - 1, i - 1)] = 1.0;
            }
            a
        }
        (None, Some(rows)) => {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(Error::InvalidTopology(format!(
                    "adjacency must be {}x{}",
                    n, n
                )));
            }
            DMatrix::from_fn(n, n, |i, j| rows[i][j])
        }
    };
    let leader = match (&t.leader_links, &t.leader_weights) {
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "give either leader_links or leader_weights, not both".into(),
            ))
        }
        (None, None) => return Err(Error::Config("topology needs leader_links".into())),
        (Some(links), None) => {
            let mut b = DVector::zeros(n);
            for &i in links {
                if i == 0 || i > n {
                    return Err(Error::InvalidTopology(format!(
                        "leader link {} outside 1..={}",
                        i, n
                    )));
                }
                b[i - 1] = 1.0;
            }
            b
        }
        (None, Some(w)) => {
            if w.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: w.len(),
                });
            }
            DVector::from_column_slice(w)
        }
    };
    if t.weighted {
        Topology::new_weighted(adjacency, leader)
    } else {
        Topology::new(adjacency, leader)
    }
}

impl ExperimentConfig {
    pub fn from_file(file: ConfigFile) -> Result<Self> {
        let plant = PlantRegistry::with_builtins().get(&file.plant)?;
        // the mode name is checked here; the strategy itself is built per run
        StrategyRegistry::with_builtins().get(&file.control.mode)?;
        let m = plant.dim();

        let topology = build_topology(&file.topology)?;
        let n = topology.n();
        if n < 2 {
            return Err(Error::AssumptionViolated(
                "a leader-follower network needs at least two followers".into(),
            ));
        }
        let a3 = topology.check_connectivity();
        if !a3.holds {
            return Err(Error::AssumptionViolated(a3.diagnostic));
        }
        topology.grounded_laplacian()?;

        let gains = match &file.control.gains {
            GainSpec::Uniform(k) => Gains::uniform(n, *k)?,
            GainSpec::PerAgent(v) => {
                if v.len() != n {
                    return Err(Error::InvalidGains(format!(
                        "{} gains for {} agents",
                        v.len(),
                        n
                    )));
                }
                Gains::new(v.clone())?
            }
        };

        let init_range = domain_from(&file.sim.init_range, m, "sim.init_range")?;
        if let Some(l) = &file.sim.leader_initial {
            if l.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: l.len(),
                });
            }
        }
        let sim = SimConfig {
            dt: file.sim.dt,
            horizon: file.sim.horizon,
            init_range,
            seed: file.seed,
            leader_initial: file.sim.leader_initial.clone(),
        };
        sim.validate()?;

        let kernel = KernelParams::new(
            file.kernel.signal_variance,
            file.kernel.weights.clone().unwrap_or_else(|| vec![1.0; m]),
            file.kernel.noise_variance,
        )?;
        if kernel.dim() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: kernel.dim(),
            });
        }

        let training_domain = domain_from(&file.training.domain, m, "training.domain")?;
        let training = TrainingSpec {
            total: file.training.total,
            sampling: file.training.sampling,
            partition: file.training.partition,
            noise_variance: file.training.noise_variance,
        };
        training.partition.check(&training_domain, n)?;
        if !(training.noise_variance >= 0.0) {
            return Err(Error::InvalidDataset(
                "training.noise_variance must be nonnegative".into(),
            ));
        }

        let b = &file.bounds;
        if !(b.delta > 0.0 && b.delta < 1.0) {
            return Err(Error::InvalidBoundParams(format!(
                "bounds.delta must lie in (0,1), got {}",
                b.delta
            )));
        }
        if !(b.rho > 0.0) {
            return Err(Error::InvalidBoundParams(format!(
                "bounds.rho must be positive, got {}",
                b.rho
            )));
        }
        if b.lipschitz_grid < 2 || b.report_grid < 2 {
            return Err(Error::InvalidBoundParams(
                "bound grids need at least 2 points per axis".into(),
            ));
        }
        if !(b.nu_tail_fraction > 0.0 && b.nu_tail_fraction <= 1.0) {
            return Err(Error::InvalidBoundParams(
                "bounds.nu_tail_fraction must lie in (0,1]".into(),
            ));
        }
        if let Some(lf) = &b.lipschitz_f {
            if lf.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: lf.len(),
                });
            }
        }
        for table in [&b.lipschitz_mean, &b.lipschitz_variance]
            .into_iter()
            .flatten()
        {
            if table.len() != n || table.iter().any(|r| r.len() != m) {
                return Err(Error::InvalidBoundParams(format!(
                    "Lipschitz override tables must be {} agents x {} dims",
                    n, m
                )));
            }
        }

        Ok(ExperimentConfig {
            bounds: file.bounds.clone(),
            file,
            plant,
            topology,
            gains,
            sim,
            kernel,
            training,
            training_domain,
        })
    }

    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let mut file = ConfigFile::load(path)?;
        if let Some(s) = seed_override {
            file.seed = s;
        }
        Self::from_file(file)
    }

    pub fn benchmark() -> Self {
        Self::from_file(ConfigFile::default()).expect("defaults are valid")
    }

    pub fn seed(&self) -> u64 {
        self.file.seed
    }

    pub fn mode_name(&self) -> &str {
        &self.file.control.mode
    }

    pub fn control_mode(&self, name: &str) -> Result<ControlMode> {
        Ok(ControlMode {
            strategy: StrategyRegistry::with_builtins().get(name)?,
            gains: self.gains.clone(),
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.file.seed = seed;
        self.sim.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_benchmark() {
        let c = ExperimentConfig::from_file(ConfigFile::parse("").unwrap()).unwrap();
        assert_eq!(c.topology, Topology::benchmark());
        assert_eq!(c.gains.as_slice(), &[2.0; 4]);
        assert_eq!(c.sim.dt, 0.01);
        assert_eq!(c.sim.horizon, 100.0);
        assert_eq!(c.training.total, 400);
        assert_eq!(c.kernel, KernelParams::default_for(2));
        assert_eq!(c.mode_name(), "distributed");
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(ConfigFile::parse("bogus = 1").is_err());
        assert!(ConfigFile::parse("[sim]\nstep = 0.1").is_err());
    }

    #[test]
    fn asymmetric_adjacency_message() {
        let text = r#"
            [topology]
            agents = 2
            adjacency = [[0, 1], [0, 0]]
            leader_links = [1]
        "#;
        let err = ExperimentConfig::from_file(ConfigFile::parse(text).unwrap())
            .err()
            .unwrap();
        assert!(err.to_string().contains("adjacency not symmetric"));
        assert!(err.is_validation());
    }

    #[test]
    fn single_agent_rejected() {
        let text = r#"
            [topology]
            agents = 1
            edges = []
            leader_links = [1]
            [training]
            partition = "slabs"
        "#;
        let err = ExperimentConfig::from_file(ConfigFile::parse(text).unwrap())
            .err()
            .unwrap();
        assert!(matches!(err, Error::AssumptionViolated(_)));
    }

    #[test]
    fn disconnected_rejected() {
        let text = r#"
            [topology]
            agents = 4
            edges = [[1, 2], [3, 4]]
            leader_links = [1]
        "#;
        let err = ExperimentConfig::from_file(ConfigFile::parse(text).unwrap())
            .err()
            .unwrap();
        assert!(err.to_string().contains("not connected"));
    }

    #[test]
    fn unknown_mode_and_plant() {
        assert!(ExperimentConfig::from_file(
            ConfigFile::parse("[control]\nmode = \"psychic\"").unwrap()
        )
        .is_err());
        assert!(
            ExperimentConfig::from_file(ConfigFile::parse("plant = \"moon\"").unwrap()).is_err()
        );
    }

    #[test]
    fn gains_forms() {
        let c = ExperimentConfig::from_file(
            ConfigFile::parse("[control]\ngains = [1, 2, 3, 4]").unwrap(),
        )
        .unwrap();
        assert_eq!(c.gains.k_star(), 1.0);
        assert!(ExperimentConfig::from_file(
            ConfigFile::parse("[control]\ngains = [1, 2]").unwrap()
        )
        .is_err());
        assert!(
            ExperimentConfig::from_file(ConfigFile::parse("[control]\ngains = -1.0").unwrap())
                .is_err()
        );
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let c = ConfigFile::parse("seed = 9\n[sim]\nhorizon = 3.0").unwrap();
        let again = ConfigFile::parse(&c.to_toml()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
        assert_ne!(ConfigFile::default().hash(), c.hash());
    }
}
