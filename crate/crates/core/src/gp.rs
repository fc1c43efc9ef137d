//! Exact Gaussian-process regression with a squared-exponential kernel.
//!
//! One [`GpModel`] is a scalar regressor; an agent learning an `m`-dimensional
//! residual owns `m` of them (see [`AgentModels`]), all trained on the same
//! inputs with no cross-output correlation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// Hyperparameters of `k(x, x') = s2 * exp(-1/2 * sum_i d_i (x_i - x'_i)^2)`
/// plus the observation noise variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub weights: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(signal_variance: f64, weights: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let p = KernelParams {
            signal_variance,
            weights,
            noise_variance,
        };
        p.validate()?;
        Ok(p)
    }

    /// `s2 = 1`, `d_i = 1`, `noise = 0.01`.
    pub fn default_for(dim: usize) -> Self {
        KernelParams {
            signal_variance: 1.0,
            weights: vec![1.0; dim],
            noise_variance: 0.01,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.signal_variance) {
            return Err(Error::InvalidKernel(format!(
                "signal variance must be positive and finite, got {}",
                self.signal_variance
            )));
        }
        if !ok(self.noise_variance) {
            return Err(Error::InvalidKernel(format!(
                "noise variance must be positive and finite, got {}",
                self.noise_variance
            )));
        }
        if self.weights.is_empty() {
            return Err(Error::InvalidKernel(
                "at least one input weight is required".into(),
            ));
        }
        if let Some(w) = self.weights.iter().find(|&&w| !ok(w)) {
            return Err(Error::InvalidKernel(format!(
                "input weights must be positive and finite, got {}",
                w
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        let m = self.dim();
        if x.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: x.len(),
            });
        }
        if x2.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: x2.len(),
            });
        }
        Ok(self.eval_unchecked(x, x2))
    }

    #[inline]
    fn eval_unchecked(&self, x: &[f64], x2: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((a, b), d) in x.iter().zip(x2).zip(&self.weights) {
            let diff = a - b;
            s += d * diff * diff;
        }
        self.signal_variance * (-0.5 * s).exp()
    }
}

/// Training inputs and scalar outputs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    dim: usize,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
}

impl Dataset {
    pub fn new(dim: usize, inputs: Vec<Vec<f64>>, outputs: Vec<f64>) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::InvalidDataset(format!(
                "{} inputs but {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        for (i, x) in inputs.iter().enumerate() {
            if x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!("input {} is not finite", i)));
            }
        }
        if let Some(i) = outputs.iter().position(|y| !y.is_finite()) {
            return Err(Error::InvalidDataset(format!("output {} is not finite", i)));
        }
        Ok(Dataset {
            dim,
            inputs,
            outputs,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Dataset {
            dim,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn check_within(&self, domain: &Domain) -> Result<()> {
        match self.inputs.iter().position(|x| !domain.contains(x)) {
            Some(i) => Err(Error::InvalidDataset(format!(
                "input {} = {:?} lies outside the domain",
                i, self.inputs[i]
            ))),
            None => Ok(()),
        }
    }
}

/// A fitted scalar GP. Immutable; `predict` is pure.
#[derive(Clone, Debug)]
pub struct GpModel {
    params: KernelParams,
    data: Dataset,
    /// `None` for the empty (prior-only) model.
    chol: Option<Cholesky<f64, Dyn>>,
    /// `(K + noise I)^-1 y`
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpModel {
    /// Factorizes `K + noise I`. Adds escalating diagonal jitter
    /// (1e-10, 1e-9, ... 1e-6) if the plain factorization fails.
    pub fn fit(data: Dataset, params: KernelParams) -> Result<Self> {
        params.validate()?;
        if data.dim() != params.dim() {
            return Err(Error::DimensionMismatch {
                expected: params.dim(),
                got: data.dim(),
            });
        }
        let m = data.len();
        if m == 0 {
            return Ok(GpModel {
                params,
                data,
                chol: None,
                alpha: DVector::zeros(0),
                jitter: 0.0,
            });
        }
        let gram = gram_matrix(&params, data.inputs());
        let mut jitter = 0.0;
        let chol = loop {
            let mut a = gram.clone();
            for i in 0..m {
                a[(i, i)] += params.noise_variance + jitter;
            }
            if let Some(c) = Cholesky::new(a) {
                break c;
            }
            jitter = if jitter == 0.0 {
                JITTER_START
            } else {
                jitter * 10.0
            };
            if jitter > JITTER_MAX * (1.0 + 1e-9) {
                let mut a = gram.clone();
                for i in 0..m {
                    a[(i, i)] += params.noise_variance;
                }
                let eig = crate::topology::sorted_eigenvalues(&a);
                let condition = eig.last().unwrap().abs() / eig[0].abs().max(f64::MIN_POSITIVE);
                return Err(Error::Factorization {
                    jitter: JITTER_MAX,
                    condition,
                });
            }
        };
        let y = DVector::from_column_slice(data.outputs());
        let alpha = chol.solve(&y);
        Ok(GpModel {
            params,
            data,
            chol: Some(chol),
            alpha,
            jitter,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// Diagonal jitter that was needed for the factorization (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior mean and variance at `x`. The mean costs O(M) given the
    /// cached weights; the variance needs one O(M^2) triangular solve.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        let m = self.params.dim();
        if x.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: x.len(),
            });
        }
        let prior = self.params.signal_variance;
        let Some(chol) = &self.chol else {
            return Ok((0.0, prior));
        };
        let kx = self.cross_covariance(x);
        let mean = kx.dot(&self.alpha);
        let v = chol
            .l_dirty()
            .solve_lower_triangular(&kx)
            .expect("cholesky factor is invertible");
        let reduction = v.norm_squared();
        let variance = (prior - reduction).clamp(prior * f64::EPSILON, prior);
        Ok((mean, variance))
    }

    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        let m = self.params.dim();
        if x.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: x.len(),
            });
        }
        if self.chol.is_none() {
            return Ok(0.0);
        }
        Ok(self.cross_covariance(x).dot(&self.alpha))
    }

    fn cross_covariance(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.data.len(),
            self.data
                .inputs()
                .iter()
                .map(|xi| self.params.eval_unchecked(x, xi)),
        )
    }
}

/// `K(X)` without the noise term.
pub fn gram_matrix(params: &KernelParams, inputs: &[Vec<f64>]) -> DMatrix<f64> {
    let m = inputs.len();
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        k[(i, i)] = params.signal_variance;
        for j in 0..i {
            let v = params.eval_unchecked(&inputs[i], &inputs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// The `m` scalar GPs one agent uses for its `m`-dimensional residual.
#[derive(Clone, Debug)]
pub struct AgentModels {
    per_dim: Vec<GpModel>,
}

impl AgentModels {
    pub fn new(per_dim: Vec<GpModel>) -> Self {
        AgentModels { per_dim }
    }

    /// Fits one GP per output dimension, all sharing `params`.
    pub fn fit(datasets: Vec<Dataset>, params: &KernelParams) -> Result<Self> {
        let per_dim = datasets
            .into_iter()
            .map(|d| GpModel::fit(d, params.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(AgentModels { per_dim })
    }

    pub fn output_dim(&self) -> usize {
        self.per_dim.len()
    }

    pub fn dim(&self, k: usize) -> &GpModel {
        &self.per_dim[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &GpModel> {
        self.per_dim.iter()
    }

    /// Means and variances for every output dimension.
    pub fn predict(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut means = Vec::with_capacity(self.per_dim.len());
        let mut vars = Vec::with_capacity(self.per_dim.len());
        for model in &self.per_dim {
            let (mu, var) = model.predict(x)?;
            means.push(mu);
            vars.push(var);
        }
        Ok((means, vars))
    }
}
