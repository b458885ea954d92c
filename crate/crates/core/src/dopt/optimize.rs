//! The epoch loop.
//!
//! Each epoch evaluates the current point, then steps every parameter by
//! `Δp = −α·g[p]·s_p²`, where `s_p` is the parameter's current magnitude.
//! This is gradient descent with per-parameter scaling, so one `α` serves
//! parameters whose values differ by many orders of magnitude; by default
//! `α` is chosen so the first step changes no parameter by more than 10%.
//!
//! While the area budget is violated, parameters that affect area step down
//! the area gradient instead and the rest hold still. Once a feasible point
//! is reached, steps that raise the objective or leave the feasible region
//! are rejected and halve `α`, while accepted ones grow it by a quarter. Discrete parameters carry a continuous value
//! between epochs and are rounded into their domain for every evaluation.
//!
//! After the loop, parameters that hit a bound are tried at that bound, and
//! a neighbor search over the discrete parameters polishes the best point.

use std::collections::BTreeMap;

use super::{DoptError, Evaluation, Objective, Problem};
use crate::expr::Assignment;
use crate::hwmodel::ParamSpec;
use crate::par::{self, Execution};
use crate::report::{csv_line, fmt_sig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// Learning rate; `None` picks it from the first gradient.
    pub alpha: Option<f64>,
    pub max_epochs: usize,
    /// Stop once no parameter moves by more than this relative amount.
    pub epsilon: f64,
    /// Stop once a feasible point reaches this objective value.
    pub target: Option<f64>,
    pub polish: bool,
    pub exec: Execution,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            alpha: None,
            max_epochs: 100,
            epsilon: 1e-3,
            target: None,
            polish: true,
            exec: Execution::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), DoptError> {
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(DoptError::Invalid(format!("learning rate must be positive, got {a}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(DoptError::Invalid(format!("tolerance must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    TargetMet,
    /// The epoch budget ran out before the step size fell below tolerance.
    NonConvergence,
    /// No evaluated point met the area budget.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub objective: f64,
    pub area: f64,
    pub feasible: bool,
    pub accepted: bool,
    /// Current point, in the order of [`OptimizeResult::params`].
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub params: Vec<String>,
    pub best: Assignment,
    pub evaluation: Evaluation,
    pub objective: f64,
    pub feasible: bool,
    pub status: Status,
    pub epochs: usize,
    pub history: Vec<HistoryRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    /// Continuous state after the step.
    pub next: Assignment,
    /// `next` rounded into each parameter's domain.
    pub point: Assignment,
    /// Parameters the step pushed onto a bound, with that bound.
    pub clamped: Vec<(String, f64)>,
    pub max_rel_change: f64,
}

fn scale(spec: &ParamSpec, v: f64) -> f64 {
    v.abs().max((spec.max - spec.min).abs() * 1e-3).max(1e-300)
}

/// Round into the domain, then clamp into bounds.
pub fn round_point(specs: &[ParamSpec], x: &Assignment) -> Assignment {
    specs
        .iter()
        .map(|s| {
            let v = x.get(s.name()).unwrap_or(s.seed);
            (s.name().to_string(), s.clamp(s.id.domain.round(s.clamp(v))))
        })
        .collect()
}

/// Largest relative move a unit-rate step along `dir` would make.
fn max_relative(specs: &[ParamSpec], x: &Assignment, dir: &BTreeMap<String, f64>) -> f64 {
    specs
        .iter()
        .map(|s| {
            let v = x.get(s.name()).unwrap_or(s.seed);
            (dir.get(s.name()).copied().unwrap_or(0.0) * scale(s, v)).abs()
        })
        .filter(|m| m.is_finite())
        .fold(0.0, f64::max)
}

/// One projected step: `p' = clamp(p − α·dir[p]·s_p²)`, each move capped at
/// half the parameter's magnitude.
pub fn apply_update(x: &Assignment, specs: &[ParamSpec], dir: &BTreeMap<String, f64>, alpha: f64) -> UpdateOutcome {
    let mut next = Assignment::new();
    let mut clamped = Vec::new();
    let mut max_rel: f64 = 0.0;
    for s in specs {
        let v = x.get(s.name()).unwrap_or(s.seed);
        let sc = scale(s, v);
        let g = dir.get(s.name()).copied().unwrap_or(0.0);
        let delta = if g.is_finite() { (-alpha * g * sc * sc).clamp(-0.5 * sc, 0.5 * sc) } else { 0.0 };
        let raw = v + delta;
        let nv = s.clamp(raw);
        if nv != raw {
            clamped.push((s.name().to_string(), nv));
        }
        max_rel = max_rel.max((nv - v).abs() / sc);
        next.insert(s.name(), nv);
    }
    UpdateOutcome {
        point: round_point(specs, &next),
        next,
        clamped,
        max_rel_change: max_rel,
    }
}

fn values(specs: &[ParamSpec], a: &Assignment) -> Vec<f64> {
    specs.iter().map(|s| a.get(s.name()).unwrap_or(s.seed)).collect()
}

struct Point {
    at: Assignment,
    ev: Evaluation,
    f: f64,
    feasible: bool,
}

fn eval_point(problem: &dyn Problem, obj: &Objective, at: Assignment) -> Result<Point, DoptError> {
    let ev = problem.evaluate(&at)?;
    let f = obj.value(&ev.perf);
    if !f.is_finite() {
        return Err(DoptError::Invalid("objective is not finite".into()));
    }
    Ok(Point {
        feasible: obj.feasible(ev.perf.area),
        at,
        ev,
        f,
    })
}

/// Accepted steps lengthen the next one, rejected ones halve it.
fn grow(alpha: &mut Option<f64>, feasible: bool) {
    if let (Some(a), true) = (alpha.as_mut(), feasible) {
        *a *= 1.25;
    }
}

fn improves(cand: &Point, best: &Option<Point>) -> bool {
    cand.feasible && best.as_ref().is_none_or(|b| cand.f < b.f)
}

pub fn optimize(
    problem: &dyn Problem,
    seed: &Assignment,
    obj: &Objective,
    cfg: &OptimizerConfig,
) -> Result<OptimizeResult, DoptError> {
    obj.validate()?;
    cfg.validate()?;
    let specs = problem.params().to_vec();
    let mut x = Assignment::new();
    for s in &specs {
        let v = seed.get(s.name()).unwrap_or(s.seed);
        if !s.contains(v) {
            return Err(DoptError::Invalid(format!(
                "seed {} = {v} lies outside [{}, {}]",
                s.name(),
                s.min,
                s.max
            )));
        }
        x.insert(s.name(), v);
    }
    let mut cur = eval_point(problem, obj, round_point(&specs, &x))?;
    let mut best: Option<Point> = None;
    if cur.feasible {
        best = Some(eval_point(problem, obj, cur.at.clone())?);
    }
    let row = |epoch, p: &Point, accepted| HistoryRow {
        epoch,
        objective: p.f,
        area: p.ev.perf.area,
        feasible: p.feasible,
        accepted,
        values: values(&specs, &p.at),
    };
    let mut history = vec![row(0, &cur, true)];
    let mut alpha = cfg.alpha;
    let mut bounds_hit: BTreeMap<String, f64> = BTreeMap::new();
    let mut status = Status::NonConvergence;
    let mut epochs = 0;

    for epoch in 1..=cfg.max_epochs {
        epochs = epoch;
        if let Some(t) = cfg.target {
            if cur.feasible && cur.f <= t {
                status = Status::TargetMet;
                break;
            }
        }
        let (dir, rate) = if cur.feasible {
            let g = obj.gradient(&cur.ev);
            let m = max_relative(&specs, &x, &g);
            if m == 0.0 {
                status = Status::Converged;
                break;
            }
            let a = *alpha.get_or_insert(0.1 / m);
            (g, a)
        } else {
            let d = cur.ev.d_area.clone();
            let m = max_relative(&specs, &x, &d);
            if m == 0.0 {
                status = Status::Infeasible;
                break;
            }
            (d, 0.1 / m)
        };
        let step = apply_update(&x, &specs, &dir, rate);
        for (n, b) in &step.clamped {
            bounds_hit.insert(n.clone(), *b);
        }
        if step.point == cur.at {
            x = step.next;
            grow(&mut alpha, cur.feasible);
            history.push(row(epoch, &cur, true));
            if step.max_rel_change < cfg.epsilon {
                status = Status::Converged;
                break;
            }
            continue;
        }
        let next = eval_point(problem, obj, step.point.clone());
        let accepted = match next {
            Ok(p) if !cur.feasible || (p.feasible && p.f <= cur.f) => {
                x = step.next;
                grow(&mut alpha, cur.feasible);
                if improves(&p, &best) {
                    best = Some(Point {
                        at: p.at.clone(),
                        ev: p.ev.clone(),
                        f: p.f,
                        feasible: true,
                    });
                }
                cur = p;
                true
            }
            _ => false,
        };
        history.push(row(epoch, &cur, accepted));
        if !accepted {
            if cur.feasible {
                if let Some(a) = alpha.as_mut() {
                    *a *= 0.5;
                }
                if step.max_rel_change * 0.5 < cfg.epsilon {
                    status = Status::Converged;
                    break;
                }
            } else {
                status = Status::Infeasible;
                break;
            }
        } else if step.max_rel_change < cfg.epsilon {
            status = Status::Converged;
            break;
        }
    }

    if let Some(b) = &best {
        let candidates: Vec<Assignment> = bounds_hit
            .iter()
            .map(|(n, v)| {
                let mut a = b.at.clone();
                a.insert(n.clone(), *v);
                round_point(&specs, &a)
            })
            .filter(|a| *a != b.at)
            .collect();
        let evaluated = par::map(cfg.exec, &candidates, |a| eval_point(problem, obj, a.clone()).ok());
        for p in evaluated.into_iter().flatten() {
            if improves(&p, &best) {
                best = Some(p);
            }
        }
    }
    if cfg.polish {
        if let Some(b) = &best {
            if let Some(p) = polish_from(problem, obj, b, cfg.exec) {
                best = Some(p);
            }
        }
    }
    let names: Vec<String> = specs.iter().map(|s| s.name().to_string()).collect();
    Ok(match best {
        Some(b) => OptimizeResult {
            params: names,
            best: b.at,
            evaluation: b.ev,
            objective: b.f,
            feasible: true,
            status: if status == Status::Infeasible { Status::NonConvergence } else { status },
            epochs,
            history,
        },
        None => OptimizeResult {
            params: names,
            best: cur.at,
            evaluation: cur.ev,
            objective: cur.f,
            feasible: false,
            status: Status::Infeasible,
            epochs,
            history,
        },
    })
}

/// `v` followed by up to `radius` notches in each direction within bounds.
fn neighbors(s: &ParamSpec, v: f64, radius: usize) -> Vec<f64> {
    use crate::expr::ValueDomain;
    let (down, up): (fn(f64) -> f64, fn(f64) -> f64) = match s.id.domain {
        ValueDomain::Real => return vec![v],
        ValueDomain::Natural => (|x| x - 1.0, |x| x + 1.0),
        ValueDomain::PowerOfTwo => (|x| x / 2.0, |x| x * 2.0),
    };
    let mut out = vec![v];
    for dir in [down, up] {
        let mut cur = v;
        for _ in 0..radius {
            let n = s.clamp(dir(cur));
            if n == cur || !s.contains(n) || s.id.domain.round(n) != n {
                break;
            }
            out.push(n);
            cur = n;
        }
    }
    out
}

/// Candidate moves around `at`. With one or two discrete parameters, every
/// combination of moves up to two notches; with up to four, every
/// combination of one-notch moves; otherwise single moves. Two notches let
/// the search trade one parameter against another along an area budget.
fn candidate_moves(specs: &[ParamSpec], at: &Assignment) -> Vec<Assignment> {
    let discrete: Vec<&ParamSpec> = specs.iter().filter(|s| s.id.domain.is_discrete()).collect();
    let radius = if discrete.len() <= 2 { 2 } else { 1 };
    let options: Vec<Vec<f64>> = discrete
        .iter()
        .map(|s| neighbors(s, at.get(s.name()).unwrap_or(s.seed), radius))
        .collect();
    let mut out = Vec::new();
    if discrete.len() <= 4 {
        let mut combos: Vec<Vec<f64>> = vec![Vec::new()];
        for opts in &options {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    opts.iter().map(move |&o| {
                        let mut c = c.clone();
                        c.push(o);
                        c
                    })
                })
                .collect();
        }
        for combo in combos.into_iter().skip(1) {
            let mut a = at.clone();
            for (s, v) in discrete.iter().zip(combo) {
                a.insert(s.name(), v);
            }
            out.push(a);
        }
    } else {
        for (s, opts) in discrete.iter().zip(&options) {
            for &v in &opts[1..] {
                let mut a = at.clone();
                a.insert(s.name(), v);
                out.push(a);
            }
        }
    }
    out
}

fn polish_from(problem: &dyn Problem, obj: &Objective, start: &Point, exec: Execution) -> Option<Point> {
    let specs = problem.params();
    let mut cur: Option<Point> = None;
    for _ in 0..1000 {
        let at = cur.as_ref().map_or(&start.at, |p| &p.at);
        let f = cur.as_ref().map_or(start.f, |p| p.f);
        let cands = candidate_moves(specs, at);
        let evaluated = par::map(exec, &cands, |a| eval_point(problem, obj, a.clone()).ok());
        let mut step: Option<Point> = None;
        for p in evaluated.into_iter().flatten() {
            if p.feasible && p.f < f && step.as_ref().is_none_or(|s| p.f < s.f) {
                step = Some(p);
            }
        }
        match step {
            Some(p) => cur = Some(p),
            None => break,
        }
    }
    cur
}

/// Discrete neighbor search from a feasible `start`; returns the improved
/// point, its evaluation and objective, or `None` if nothing nearby is better.
pub fn polish(
    problem: &dyn Problem,
    obj: &Objective,
    start: &Assignment,
    exec: Execution,
) -> Result<Option<(Assignment, Evaluation, f64)>, DoptError> {
    let p = eval_point(problem, obj, start.clone())?;
    if !p.feasible {
        return Err(DoptError::Invalid("polish needs a feasible starting point".into()));
    }
    Ok(polish_from(problem, obj, &p, exec).map(|b| (b.at, b.ev, b.f)))
}

/// `epoch,objective,area,<param>...`, one row per epoch.
pub fn history_csv(names: &[String], rows: &[HistoryRow]) -> String {
    let mut out = csv_line(["epoch", "objective", "area"].iter().map(|s| s.to_string()).chain(names.iter().cloned()));
    for r in rows {
        out.push_str(&csv_line(
            [r.epoch.to_string(), fmt_sig(r.objective), fmt_sig(r.area)]
                .into_iter()
                .chain(r.values.iter().map(|v| fmt_sig(*v))),
        ));
    }
    out
}
