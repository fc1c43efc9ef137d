//! Residual-prediction strategies, selectable by name.
//!
//! A strategy decides what an agent subtracts from its proportional consensus
//! feedback to cancel the unknown residual dynamics. The built-in ones are
//! registered as `none`, `individual` and `distributed`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fusion;
use crate::gp::AgentModels;
use crate::topology::Topology;

/// What a strategy may look at when agent `i` predicts at its own state.
#[derive(Clone, Copy)]
pub struct PredictionContext<'a> {
    pub models: Option<&'a [AgentModels]>,
    pub topology: &'a Topology,
}

impl<'a> PredictionContext<'a> {
    fn models(&self) -> Result<&'a [AgentModels]> {
        self.models
            .ok_or_else(|| Error::Config("learning strategy requires trained models".into()))
    }
}

pub trait LearningStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether GP models must be trained before running.
    fn uses_models(&self) -> bool;

    /// Residual estimate for agent `i` at state `x`; `None` means no
    /// feedforward term.
    fn predict(&self, ctx: &PredictionContext<'_>, i: usize, x: &[f64])
        -> Result<Option<Vec<f64>>>;
}

impl fmt::Debug for dyn LearningStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LearningStrategy({})", self.name())
    }
}

/// Pure proportional consensus feedback.
#[derive(Debug, Default)]
pub struct NoLearning;

impl LearningStrategy for NoLearning {
    fn name(&self) -> &'static str {
        "none"
    }

    fn uses_models(&self) -> bool {
        false
    }

    fn predict(
        &self,
        _ctx: &PredictionContext<'_>,
        _i: usize,
        _x: &[f64],
    ) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }
}

/// Each agent uses the posterior mean of its own GPs only.
#[derive(Debug, Default)]
pub struct IndividualGp;

impl LearningStrategy for IndividualGp {
    fn name(&self) -> &'static str {
        "individual"
    }

    fn uses_models(&self) -> bool {
        true
    }

    fn predict(
        &self,
        ctx: &PredictionContext<'_>,
        i: usize,
        x: &[f64],
    ) -> Result<Option<Vec<f64>>> {
        let own = &ctx.models()?[i];
        let means = own
            .iter()
            .map(|gp| gp.predict_mean(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(means))
    }
}

/// Agent `i` queries its neighbors' GPs at `x_i` and fuses the predictions
/// by precision weighting.
#[derive(Debug, Default)]
pub struct DistributedGp;

impl LearningStrategy for DistributedGp {
    fn name(&self) -> &'static str {
        "distributed"
    }

    fn uses_models(&self) -> bool {
        true
    }

    fn predict(
        &self,
        ctx: &PredictionContext<'_>,
        i: usize,
        x: &[f64],
    ) -> Result<Option<Vec<f64>>> {
        let fused = fusion::fuse_agent(ctx.models()?, ctx.topology, i, x)?;
        Ok(Some(fused.into_iter().map(|(f, _)| f.mean).collect()))
    }
}

type StrategyCtor = fn() -> Arc<dyn LearningStrategy>;

pub struct StrategyRegistry {
    entries: BTreeMap<&'static str, StrategyCtor>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        StrategyRegistry {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("none", || Arc::new(NoLearning));
        r.register("individual", || Arc::new(IndividualGp));
        r.register("distributed", || Arc::new(DistributedGp));
        r
    }

    pub fn register(&mut self, name: &'static str, ctor: StrategyCtor) {
        self.entries.insert(name, ctor);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn LearningStrategy>> {
        self.entries
            .get(name)
            .map(|ctor| ctor())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "mode",
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }
}

/// The modes compared side by side, in the order they are reported.
pub const COMPARISON_MODES: [&str; 3] = ["none", "individual", "distributed"];
