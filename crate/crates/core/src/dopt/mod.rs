//! Gradient-based design-space optimization.
//!
//! A [`Problem`] maps a parameter assignment to runtime, energy and area
//! together with their gradients. An [`Objective`] folds those into one
//! scalar (time, energy or energy-delay product, with an area constraint),
//! and [`optimize`] runs projected gradient descent on it.

mod backward;
mod dotproduct;
mod optimize;

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::dsim::PerfEstimate;
use crate::expr::{Assignment, Expr, ExprError};
use crate::hwmodel::{HardwareModel, HwModelError, Key, ParamSpec};
use crate::mapper::MapError;

pub use backward::{backward_pass, metric_sensitivities, GradientAccumulator, MetricSensitivity, PipelineProblem};
pub use dotproduct::{t_grad_memsize, DotProductScenario};
pub use optimize::{
    apply_update, history_csv, optimize, polish, HistoryRow, OptimizeResult, OptimizerConfig, Status, UpdateOutcome,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DoptError {
    #[error(transparent)]
    Hardware(#[from] HwModelError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    Time,
    Energy,
    Edp,
}

impl FromStr for ObjectiveKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "time" => Ok(ObjectiveKind::Time),
            "energy" => Ok(ObjectiveKind::Energy),
            "edp" => Ok(ObjectiveKind::Edp),
            _ => Err(format!("unknown objective `{s}` (expected time, energy or edp)")),
        }
    }
}

/// How the area constraint enters the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AreaPenalty {
    /// `F = f + λ·(a − A)`.
    Lagrange(f64),
    /// `F = f · exp(a/A − 1)`.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub kind: ObjectiveKind,
    pub area_max: f64,
    pub penalty: AreaPenalty,
}

impl Objective {
    pub fn new(kind: ObjectiveKind, area_max: f64) -> Self {
        Objective {
            kind,
            area_max,
            penalty: AreaPenalty::Lagrange(0.0),
        }
    }

    pub fn validate(&self) -> Result<(), DoptError> {
        if !(self.area_max > 0.0) {
            return Err(DoptError::Invalid(format!("area budget must be positive, got {}", self.area_max)));
        }
        if let AreaPenalty::Lagrange(l) = self.penalty {
            if !(l >= 0.0) {
                return Err(DoptError::Invalid(format!("lagrange multiplier must be nonnegative, got {l}")));
            }
        }
        Ok(())
    }

    pub fn feasible(&self, area: f64) -> bool {
        area <= self.area_max
    }

    /// The unconstrained metric `f`.
    pub fn base(&self, p: &PerfEstimate) -> f64 {
        match self.kind {
            ObjectiveKind::Time => p.runtime,
            ObjectiveKind::Energy => p.energy,
            ObjectiveKind::Edp => p.energy * p.runtime,
        }
    }

    pub fn value(&self, p: &PerfEstimate) -> f64 {
        let f = self.base(p);
        match self.penalty {
            AreaPenalty::Lagrange(l) => f + l * (p.area - self.area_max),
            AreaPenalty::Exponential => f * (p.area / self.area_max - 1.0).exp(),
        }
    }

    /// `∂F/∂p` for every parameter of the evaluation.
    pub fn gradient(&self, ev: &Evaluation) -> BTreeMap<String, f64> {
        let p = &ev.perf;
        let f = self.base(p);
        ev.d_runtime
            .keys()
            .map(|name| {
                let dt = ev.d_runtime[name];
                let de = ev.d_energy[name];
                let da = ev.d_area[name];
                let df = match self.kind {
                    ObjectiveKind::Time => dt,
                    ObjectiveKind::Energy => de,
                    ObjectiveKind::Edp => de * p.runtime + p.energy * dt,
                };
                let g = match self.penalty {
                    AreaPenalty::Lagrange(l) => df + l * da,
                    AreaPenalty::Exponential => {
                        let s = (p.area / self.area_max - 1.0).exp();
                        s * (df + f * da / self.area_max)
                    }
                };
                (name.clone(), g)
            })
            .collect()
    }
}

/// One point of a problem: the estimates and their parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub perf: PerfEstimate,
    pub d_runtime: BTreeMap<String, f64>,
    pub d_energy: BTreeMap<String, f64>,
    pub d_area: BTreeMap<String, f64>,
}

/// Something [`optimize`] can descend on.
pub trait Problem: Sync {
    /// The free parameters, with seeds and bounds.
    fn params(&self) -> &[ParamSpec];

    /// Evaluate at `a`, which binds every free parameter.
    fn evaluate(&self, a: &Assignment) -> Result<Evaluation, DoptError>;

    /// Estimates only, without gradients.
    fn forward(&self, a: &Assignment) -> Result<PerfEstimate, DoptError> {
        Ok(self.evaluate(a)?.perf)
    }

    fn seed(&self) -> Assignment {
        self.params().iter().map(|p| (p.name().to_string(), p.seed)).collect()
    }

    fn spec(&self, name: &str) -> Option<&ParamSpec> {
        self.params().iter().find(|p| p.name() == name)
    }
}

/// A problem stated directly as expressions over its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprProblem {
    pub params: Vec<ParamSpec>,
    pub runtime: Expr,
    pub energy: Expr,
    pub area: Expr,
}

impl Problem for ExprProblem {
    fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    fn forward(&self, a: &Assignment) -> Result<PerfEstimate, DoptError> {
        let runtime = self.runtime.eval(a)?;
        let energy = self.energy.eval(a)?;
        Ok(PerfEstimate {
            runtime,
            energy,
            power: if runtime > 0.0 { energy * 1e-9 / runtime } else { 0.0 },
            area: self.area.eval(a)?,
        })
    }

    fn evaluate(&self, a: &Assignment) -> Result<Evaluation, DoptError> {
        let grads = |e: &Expr| -> Result<BTreeMap<String, f64>, DoptError> {
            self.params
                .iter()
                .map(|p| Ok((p.name().to_string(), e.diff(p.name()).eval(a)?)))
                .collect()
        };
        Ok(Evaluation {
            perf: self.forward(a)?,
            d_runtime: grads(&self.runtime)?,
            d_energy: grads(&self.energy)?,
            d_area: grads(&self.area)?,
        })
    }
}

/// Parameter ↔ metric edges weighted by `∂metric/∂param`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BipartiteGraph {
    edges: BTreeMap<String, Vec<(Key, Expr)>>,
}

impl BipartiteGraph {
    /// Edges for every parameter in `params` that occurs in some metric of `h`.
    pub fn build<'a>(h: &HardwareModel, params: impl IntoIterator<Item = &'a str>) -> Self {
        let mut edges = BTreeMap::new();
        for p in params {
            let list: Vec<(Key, Expr)> = h
                .entries()
                .filter(|(_, e)| e.contains(p))
                .map(|(k, e)| (k, e.diff(p)))
                .collect();
            edges.insert(p.to_string(), list);
        }
        BipartiteGraph { edges }
    }

    pub fn edges(&self, param: &str) -> &[(Key, Expr)] {
        self.edges.get(param).map_or(&[], Vec::as_slice)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(Vec::len).sum()
    }

    /// `g[p] = Σ_(u,q) unitGrad(u,q) · ∂h(u,q)/∂p` evaluated at `a`.
    pub fn gather(&self, unit_grads: &BTreeMap<Key, f64>, a: &Assignment) -> Result<BTreeMap<String, f64>, ExprError> {
        let mut out = BTreeMap::new();
        for (p, list) in &self.edges {
            let mut g = 0.0;
            for (k, d) in list {
                if let Some(&ug) = unit_grads.get(k) {
                    if ug != 0.0 {
                        g += ug * d.eval(a)?;
                    }
                }
            }
            out.insert(p.clone(), g);
        }
        Ok(out)
    }
}

/// Parameters ordered by normalized sensitivity `|g[p]·p|`, largest first.
/// Equal scores keep their input order.
pub fn rank_technology_targets(grads: &[(String, f64)], values: &Assignment) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> = grads
        .iter()
        .map(|(name, g)| {
            let v = values.get(name).unwrap_or(0.0);
            let s = (g * v).abs();
            (name.clone(), if s.is_finite() { s } else { 0.0 })
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored
}
