//! End-to-end runs: training, simulation, mode comparison and bound reports,
//! with their on-disk artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::control::ultimate_bound_radius;
use crate::error::{Error, Result};
use crate::fusion::{self, estimate_lipschitz, BoundParams};
use crate::gp::{AgentModels, Dataset};
use crate::io;
use crate::plant::generate_training_data;
use crate::sim::{self, radius_monitor, ContainmentReport, TrajectoryLog};
use crate::strategy::COMPARISON_MODES;

/// Fraction of the horizon over which accumulated errors are averaged.
pub const COMPARISON_TAIL: f64 = 0.25;

pub fn training_data(cfg: &ExperimentConfig) -> Result<Vec<Vec<Dataset>>> {
    generate_training_data(
        cfg.plant.as_ref(),
        &cfg.training_domain,
        &cfg.training,
        cfg.topology.n(),
        cfg.seed(),
    )
}

pub fn train(cfg: &ExperimentConfig) -> Result<Vec<AgentModels>> {
    training_data(cfg)?
        .into_iter()
        .map(|per_dim| AgentModels::fit(per_dim, &cfg.kernel))
        .collect()
}

/// Simulates one mode. A diverged run comes back as a partial log.
pub fn simulate_mode(
    cfg: &ExperimentConfig,
    mode: &str,
    models: Option<&[AgentModels]>,
) -> Result<TrajectoryLog> {
    let mode = cfg.control_mode(mode)?;
    let models = if mode.strategy.uses_models() {
        models
    } else {
        None
    };
    sim::run(&cfg.sim, cfg.plant.as_ref(), &cfg.topology, &mode, models)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn trajectory_file_name(mode: &str) -> String {
    format!("trajectory_{}.csv", mode)
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Effective configuration with every default filled in.
    pub config: String,
    pub outputs: Vec<String>,
}

fn write_manifest(
    cfg: &ExperimentConfig,
    command: &str,
    dir: &Path,
    outputs: Vec<String>,
) -> Result<()> {
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        seed: cfg.seed(),
        config_sha256: cfg.file.hash(),
        config: cfg.file.to_toml(),
        outputs,
    };
    io::save_json(&manifest, &dir.join("run_manifest.json"))
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulateSummary {
    pub mode: String,
    pub trajectory: PathBuf,
    pub rows: usize,
    pub tail_mean_accumulated: Vec<f64>,
    pub divergence: Option<sim::DivergenceInfo>,
}

/// Runs the configured mode and writes its trajectory, a bound report
/// evaluated along it, and a manifest. The trajectory is written even when
/// the run diverges; the divergence is then returned as an error.
pub fn simulate(cfg: &ExperimentConfig, dir: &Path) -> Result<SimulateSummary> {
    ensure_dir(dir)?;
    let mode = cfg.mode_name().to_string();
    let models = train(cfg)?;
    let log = simulate_mode(cfg, &mode, Some(&models))?;
    let name = trajectory_file_name(&mode);
    let path = dir.join(&name);
    io::save_trajectory(&log, &path)?;
    let mut outputs = vec![name];
    if log.divergence.is_none() {
        let report = bound_report(cfg, &models, Some(&log))?;
        io::save_json(&report, &dir.join("bound_report.json"))?;
        outputs.push("bound_report.json".into());
    }
    write_manifest(cfg, "simulate", dir, outputs)?;
    let summary = SimulateSummary {
        mode,
        trajectory: path,
        rows: log.rows.len(),
        tail_mean_accumulated: log.tail_mean_accumulated(COMPARISON_TAIL),
        divergence: log.divergence.clone(),
    };
    log.into_result()?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct ModeSummary {
    pub mode: String,
    pub tail_mean_accumulated: Vec<f64>,
    pub divergence: Option<sim::DivergenceInfo>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonSummary {
    pub seed: u64,
    pub tail_fraction: f64,
    pub modes: Vec<ModeSummary>,
    /// Per dimension: distributed < individual < none.
    pub ordering_holds: Vec<bool>,
    /// Per dimension: distributed / none.
    pub ratio_distributed_to_none: Vec<f64>,
}

impl ComparisonSummary {
    pub fn from_logs(seed: u64, logs: &[TrajectoryLog]) -> Self {
        let modes: Vec<ModeSummary> = logs
            .iter()
            .map(|l| ModeSummary {
                mode: l.mode.clone(),
                tail_mean_accumulated: l.tail_mean_accumulated(COMPARISON_TAIL),
                divergence: l.divergence.clone(),
            })
            .collect();
        let find = |name: &str| {
            modes
                .iter()
                .find(|m| m.mode == name)
                .map(|m| &m.tail_mean_accumulated)
        };
        let dim = logs.first().map_or(0, |l| l.dim);
        let (mut ordering, mut ratio) = (vec![false; dim], vec![f64::NAN; dim]);
        if let (Some(none), Some(ind), Some(dist)) =
            (find("none"), find("individual"), find("distributed"))
        {
            for k in 0..dim {
                ordering[k] = dist[k] < ind[k] && ind[k] < none[k];
                ratio[k] = dist[k] / none[k];
            }
        }
        ComparisonSummary {
            seed,
            tail_fraction: COMPARISON_TAIL,
            modes,
            ordering_holds: ordering,
            ratio_distributed_to_none: ratio,
        }
    }
}

/// Runs every built-in mode on the same seed and training data, in
/// parallel threads, and returns the logs in reporting order.
pub fn compare_logs(cfg: &ExperimentConfig) -> Result<Vec<TrajectoryLog>> {
    let models = train(cfg)?;
    let results: Vec<Result<TrajectoryLog>> = std::thread::scope(|s| {
        let handles: Vec<_> = COMPARISON_MODES
            .iter()
            .map(|&mode| {
                let models = &models;
                s.spawn(move || simulate_mode(cfg, mode, Some(models)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });
    results.into_iter().collect()
}

pub fn compare(cfg: &ExperimentConfig, dir: &Path) -> Result<ComparisonSummary> {
    ensure_dir(dir)?;
    let logs = compare_logs(cfg)?;
    let mut outputs = Vec::new();
    for log in &logs {
        let name = trajectory_file_name(&log.mode);
        io::save_trajectory(log, &dir.join(&name))?;
        outputs.push(name);
    }
    let summary = ComparisonSummary::from_logs(cfg.seed(), &logs);
    io::save_json(&summary, &dir.join("summary.json"))?;
    outputs.push("summary.json".into());
    write_manifest(cfg, "compare", dir, outputs)?;
    for log in logs {
        log.into_result()?;
    }
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct NuRadius {
    pub nu: f64,
    pub radius: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub agents: usize,
    pub input_dim: usize,
    pub delta: f64,
    pub rho: f64,
    pub r_omega: f64,
    pub beta: f64,
    /// `(1 - delta)^m`
    pub probability: f64,
    pub lipschitz_grid: usize,
    pub lipschitz_f: Vec<f64>,
    /// `[agent][dim]`
    pub lipschitz_mean: Vec<Vec<f64>>,
    pub lipschitz_variance: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub report_grid: usize,
    /// Grid maximum of the fused pointwise bound, `[agent][dim]`.
    pub bound_max: Vec<Vec<f64>>,
    /// Grid maximum of the actual fused prediction error, `[agent][dim]`.
    pub error_max: Vec<Vec<f64>>,
    /// Fraction of grid evaluations with error within the bound.
    pub bound_coverage: f64,
    pub lambda_min: f64,
    pub k_star: f64,
    pub leader_bound: f64,
    /// From the grid maxima of the actual fused error.
    pub grid: NuRadius,
    /// From the grid maxima of the pointwise bound.
    pub bound: NuRadius,
    /// From the simulated trajectory's model errors over its tail.
    pub trajectory: Option<NuRadius>,
    pub nu_tail_fraction: f64,
    pub containment: Option<ContainmentReport>,
}

/// Lipschitz constants from the config overrides, or estimated on a grid.
pub fn bound_params(cfg: &ExperimentConfig, models: &[AgentModels]) -> Result<BoundParams> {
    let b = &cfg.bounds;
    let omega = &cfg.training_domain;
    let m = omega.dim();
    let pts = b.lipschitz_grid;
    let lipschitz_f = match &b.lipschitz_f {
        Some(v) => v.clone(),
        None => (0..m)
            .map(|k| Ok(estimate_lipschitz(|x| cfg.plant.residual(x)[k], omega, pts)?.constant))
            .collect::<Result<Vec<_>>>()?,
    };
    let per_model = |variance: bool| -> Result<Vec<Vec<f64>>> {
        models
            .iter()
            .map(|a| {
                a.iter()
                    .map(|gp| {
                        let est = estimate_lipschitz(
                            |x| {
                                let (mu, var) = gp.predict(x).unwrap_or((f64::NAN, f64::NAN));
                                if variance {
                                    var
                                } else {
                                    mu
                                }
                            },
                            omega,
                            pts,
                        )?;
                        Ok(est.constant)
                    })
                    .collect()
            })
            .collect()
    };
    let lipschitz_mean = match &b.lipschitz_mean {
        Some(t) => t.clone(),
        None => per_model(false)?,
    };
    let lipschitz_variance = match &b.lipschitz_variance {
        Some(t) => t.clone(),
        None => per_model(true)?,
    };
    let params = BoundParams {
        rho: b.rho,
        delta: b.delta,
        r_omega: omega.diameter(),
        input_dim: m,
        lipschitz_f,
        lipschitz_mean,
        lipschitz_variance,
    };
    params.validate()?;
    Ok(params)
}

/// Evaluates the uniform error bound and the resulting ultimate-bound radii.
/// `trajectory`, when given, adds the radius from its observed model errors
/// and checks containment against it.
pub fn bound_report(
    cfg: &ExperimentConfig,
    models: &[AgentModels],
    trajectory: Option<&TrajectoryLog>,
) -> Result<BoundReport> {
    let params = bound_params(cfg, models)?;
    let beta = params.beta()?;
    let gamma = params.gamma_table()?;
    let n = cfg.topology.n();
    let m = params.input_dim;

    let mut bound_max = vec![vec![0.0f64; m]; n];
    let mut error_max = vec![vec![0.0f64; m]; n];
    let mut sq_error_max = vec![0.0f64; n];
    let (mut covered, mut total) = (0usize, 0usize);
    let gammas_by_dim: Vec<Vec<f64>> = (0..m)
        .map(|k| gamma.iter().map(|g| g[k]).collect())
        .collect();
    for x in cfg.training_domain.grid(cfg.bounds.report_grid) {
        let tau = cfg.plant.residual(&x);
        for i in 0..n {
            let fused = fusion::fuse_agent(models, &cfg.topology, i, &x)?;
            let mut sq = 0.0;
            for (k, (f, locals)) in fused.iter().enumerate() {
                let bound = fusion::pointwise_bound(f, locals, beta, &gammas_by_dim[k])?;
                let err = (tau[k] - f.mean).abs();
                bound_max[i][k] = bound_max[i][k].max(bound);
                error_max[i][k] = error_max[i][k].max(err);
                sq += err * err;
                total += 1;
                if err <= bound {
                    covered += 1;
                }
            }
            sq_error_max[i] = sq_error_max[i].max(sq);
        }
    }

    let grounded = cfg.topology.grounded_laplacian()?;
    let k_star = cfg.gains.k_star();
    let fl = cfg.plant.leader_bound();
    let nu_radius = |nu: f64| -> Result<NuRadius> {
        Ok(NuRadius {
            nu,
            radius: ultimate_bound_radius(nu, k_star, grounded.lambda_min)?,
        })
    };
    let grid = nu_radius(sq_error_max.iter().map(|s| fl * fl + s).sum())?;
    let bound = nu_radius(
        bound_max
            .iter()
            .map(|row| fl * fl + row.iter().map(|b| b * b).sum::<f64>())
            .sum(),
    )?;
    let frac = cfg.bounds.nu_tail_fraction;
    let (traj, containment) = match trajectory {
        Some(log) => {
            let nr = nu_radius(log.tail_nu(frac, fl))?;
            let rep = radius_monitor(log, nr.radius);
            (Some(nr), Some(rep))
        }
        None => (None, None),
    };

    Ok(BoundReport {
        agents: n,
        input_dim: m,
        delta: params.delta,
        rho: params.rho,
        r_omega: params.r_omega,
        beta,
        probability: params.probability(),
        lipschitz_grid: cfg.bounds.lipschitz_grid,
        lipschitz_f: params.lipschitz_f,
        lipschitz_mean: params.lipschitz_mean,
        lipschitz_variance: params.lipschitz_variance,
        gamma,
        report_grid: cfg.bounds.report_grid,
        bound_max,
        error_max,
        bound_coverage: covered as f64 / total.max(1) as f64,
        lambda_min: grounded.lambda_min,
        k_star,
        leader_bound: fl,
        grid,
        bound,
        trajectory: traj,
        nu_tail_fraction: frac,
        containment,
    })
}

/// Trains, optionally simulates the configured mode, and writes
/// `bound_report.json`.
pub fn write_bound_report(
    cfg: &ExperimentConfig,
    dir: &Path,
    with_trajectory: bool,
) -> Result<BoundReport> {
    ensure_dir(dir)?;
    let models = train(cfg)?;
    let log = if with_trajectory {
        let log = simulate_mode(cfg, cfg.mode_name(), Some(&models))?;
        Some(log.into_result()?)
    } else {
        None
    };
    let report = bound_report(cfg, &models, log.as_ref())?;
    io::save_json(&report, &dir.join("bound_report.json"))?;
    write_manifest(cfg, "bound-report", dir, vec!["bound_report.json".into()])?;
    Ok(report)
}

/// Writes every agent's training set as `agent{i}_dim{k}.csv`.
pub fn gen_data(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    let mut names = Vec::new();
    for (i, per_dim) in training_data(cfg)?.iter().enumerate() {
        for (k, d) in per_dim.iter().enumerate() {
            let name = io::dataset_file_name(i, k);
            let path = dir.join(&name);
            io::save_dataset(d, &path)?;
            written.push(path);
            names.push(name);
        }
    }
    write_manifest(cfg, "gen-data", dir, names)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigFile;

    fn short(horizon: f64) -> ExperimentConfig {
        let text = format!(
            "seed = 4\n[sim]\nhorizon = {}\n[bounds]\nlipschitz_grid = 30\nreport_grid = 9",
            horizon
        );
        ExperimentConfig::from_file(ConfigFile::parse(&text).unwrap()).unwrap()
    }

    #[test]
    fn training_sizes() {
        let d = training_data(&short(1.0)).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.iter().map(|a| a[0].len()).sum::<usize>(), 400);
    }

    #[test]
    fn summary_ordering_logic() {
        let cfg = short(2.0);
        let logs = compare_logs(&cfg).unwrap();
        let names: Vec<&str> = logs.iter().map(|l| l.mode.as_str()).collect();
        assert_eq!(names, COMPARISON_MODES);
        let s = ComparisonSummary::from_logs(4, &logs);
        assert_eq!(s.ratio_distributed_to_none.len(), 2);
    }

    #[test]
    fn report_shapes_and_beta() {
        let cfg = short(1.0);
        let models = train(&cfg).unwrap();
        let r = bound_report(&cfg, &models, None).unwrap();
        assert!((r.beta - 23.52).abs() < 0.01, "{}", r.beta);
        assert!((r.probability - 0.9025).abs() < 1e-12);
        assert_eq!(r.gamma.len(), 4);
        assert!(r.bound.radius >= r.grid.radius);
        assert!(r.bound_coverage > 0.9);
    }
}
