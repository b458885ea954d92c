//! Exhaustive grid evaluation.
//!
//! A full-factorial sweep over a few parameters serves as ground truth for
//! the optimizer on small problems. Points are enumerated with the first
//! axis outermost and evaluated with a forward pass only, concurrently when
//! the `parallel` feature is on; rows always come back in grid order.

use std::str::FromStr;

use crate::dopt::{DoptError, Objective, Problem};
use crate::dsim::PerfEstimate;
use crate::expr::{Assignment, ValueDomain};
use crate::hwmodel::ParamSpec;
use crate::par::{self, Execution};
use crate::report::{csv_line, fmt_sig};

pub const MAX_GRID_POINTS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SweepError {
    #[error("grid has {0} points (limit {MAX_GRID_POINTS})")]
    GridTooLarge(u64),
    #[error("bad grid axis `{0}`")]
    BadAxis(String),
    #[error(transparent)]
    Dopt(#[from] DoptError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub param: String,
    pub values: Vec<f64>,
}

impl GridAxis {
    pub fn new(param: impl Into<String>, values: Vec<f64>) -> Self {
        GridAxis {
            param: param.into(),
            values,
        }
    }

    /// Every value of a discrete parameter's domain within its bounds.
    pub fn from_spec(spec: &ParamSpec) -> Result<Self, SweepError> {
        let bad = || SweepError::BadAxis(format!("{} has no finite grid", spec.name()));
        if !spec.min.is_finite() || !spec.max.is_finite() {
            return Err(bad());
        }
        let mut values = Vec::new();
        match spec.id.domain {
            ValueDomain::Real => return Err(bad()),
            ValueDomain::Natural => {
                let mut v = spec.min.ceil();
                while v <= spec.max {
                    values.push(v);
                    v += 1.0;
                    if values.len() as u64 > MAX_GRID_POINTS {
                        return Err(SweepError::GridTooLarge(values.len() as u64));
                    }
                }
            }
            ValueDomain::PowerOfTwo => {
                let mut v = 1.0;
                while v < spec.min {
                    v *= 2.0;
                }
                while v <= spec.max {
                    values.push(v);
                    v *= 2.0;
                }
            }
        }
        Ok(GridAxis::new(spec.name(), values))
    }
}

/// `name=v1,v2,...`, `name=lo..hi` (integer steps) or `name=pow2:lo..hi`.
impl FromStr for GridAxis {
    type Err = SweepError;
    fn from_str(s: &str) -> Result<Self, SweepError> {
        let bad = || SweepError::BadAxis(s.to_string());
        let (name, rest) = s.split_once('=').ok_or_else(bad)?;
        let name = name.trim();
        if name.is_empty() {
            return Err(bad());
        }
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let (pow2, range) = match rest.strip_prefix("pow2:") {
            Some(r) => (true, r),
            None => (false, rest),
        };
        let values = if let Some((lo, hi)) = range.split_once("..") {
            let (lo, hi) = (num(lo)?, num(hi)?);
            if !(lo <= hi) || (pow2 && lo <= 0.0) {
                return Err(bad());
            }
            let mut out = Vec::new();
            let mut v = lo;
            while v <= hi {
                out.push(v);
                v = if pow2 { v * 2.0 } else { v + 1.0 };
                if out.len() as u64 > MAX_GRID_POINTS {
                    return Err(SweepError::GridTooLarge(out.len() as u64));
                }
            }
            out
        } else if pow2 {
            return Err(bad());
        } else {
            range.split(',').map(num).collect::<Result<Vec<_>, _>>()?
        };
        if values.is_empty() {
            return Err(bad());
        }
        Ok(GridAxis::new(name, values))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub values: Vec<f64>,
    /// `None` when the point could not be evaluated (e.g. a vertex does not fit).
    pub perf: Option<PerfEstimate>,
    pub objective: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub params: Vec<String>,
    pub rows: Vec<SweepRow>,
    /// Row with the lowest feasible objective; the first one on ties.
    pub best: Option<usize>,
}

impl SweepResult {
    pub fn best_row(&self) -> Option<&SweepRow> {
        self.best.map(|i| &self.rows[i])
    }

    pub fn best_assignment(&self) -> Option<Assignment> {
        self.best_row()
            .map(|r| self.params.iter().cloned().zip(r.values.iter().copied()).collect())
    }

    /// `<params>...,runtime,energy,power,area,objective,feasible,best`.
    pub fn to_csv(&self) -> String {
        let header = self
            .params
            .iter()
            .cloned()
            .chain(["runtime", "energy", "power", "area", "objective", "feasible", "best"].map(String::from));
        let mut out = csv_line(header);
        for (i, r) in self.rows.iter().enumerate() {
            let perf = match &r.perf {
                Some(p) => [p.runtime, p.energy, p.power, p.area].map(fmt_sig),
                None => ["nan"; 4].map(String::from),
            };
            let fields = r
                .values
                .iter()
                .map(|v| fmt_sig(*v))
                .chain(perf)
                .chain([
                    fmt_sig(r.objective),
                    u8::from(r.feasible).to_string(),
                    u8::from(self.best == Some(i)).to_string(),
                ]);
            out.push_str(&csv_line(fields));
        }
        out
    }
}

pub fn grid_size(axes: &[GridAxis]) -> u64 {
    axes.iter()
        .map(|a| a.values.len() as u64)
        .try_fold(1u64, |acc, n| acc.checked_mul(n))
        .unwrap_or(u64::MAX)
}

fn point(axes: &[GridAxis], mut index: usize) -> Vec<f64> {
    let mut out = vec![0.0; axes.len()];
    for (slot, axis) in out.iter_mut().zip(axes).rev() {
        let n = axis.values.len();
        *slot = axis.values[index % n];
        index /= n;
    }
    out
}

/// Evaluate `problem` at every grid point; parameters not on an axis keep
/// their seed values.
pub fn sweep(problem: &dyn Problem, axes: &[GridAxis], obj: &Objective, exec: Execution) -> Result<SweepResult, SweepError> {
    obj.validate()?;
    for a in axes {
        if problem.spec(&a.param).is_none() {
            return Err(DoptError::UnknownParam(a.param.clone()).into());
        }
    }
    let n = grid_size(axes);
    if n > MAX_GRID_POINTS {
        return Err(SweepError::GridTooLarge(n));
    }
    let seed = problem.seed();
    let indices: Vec<usize> = (0..n as usize).collect();
    let rows = par::map(exec, &indices, |&i| {
        let values = point(axes, i);
        let mut a = seed.clone();
        for (axis, v) in axes.iter().zip(&values) {
            a.insert(axis.param.clone(), *v);
        }
        match problem.forward(&a) {
            Ok(p) => SweepRow {
                objective: obj.value(&p),
                feasible: obj.feasible(p.area),
                perf: Some(p),
                values,
            },
            Err(_) => SweepRow {
                values,
                perf: None,
                objective: f64::NAN,
                feasible: false,
            },
        }
    });
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if r.feasible && r.objective.is_finite() && best.is_none_or(|b| r.objective < rows[b].objective) {
            best = Some(i);
        }
    }
    Ok(SweepResult {
        params: axes.iter().map(|a| a.param.clone()).collect(),
        rows,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dopt::{DotProductScenario, ObjectiveKind};

    #[test]
    fn axis_syntax() {
        let a: GridAxis = "B=pow2:1..16".parse().unwrap();
        assert_eq!(a.values, [1.0, 2.0, 4.0, 8.0, 16.0]);
        let a: GridAxis = "n=2..4".parse().unwrap();
        assert_eq!(a.values, [2.0, 3.0, 4.0]);
        let a: GridAxis = "x=0.5,1.5".parse().unwrap();
        assert_eq!(a.values, [0.5, 1.5]);
        assert!("x".parse::<GridAxis>().is_err());
        assert!("x=pow2:0..4".parse::<GridAxis>().is_err());
        assert!("x=3..1".parse::<GridAxis>().is_err());
    }

    #[test]
    fn first_axis_outermost() {
        let axes = [GridAxis::new("a", vec![1.0, 2.0]), GridAxis::new("b", vec![10.0, 20.0, 30.0])];
        assert_eq!(point(&axes, 0), [1.0, 10.0]);
        assert_eq!(point(&axes, 2), [1.0, 30.0]);
        assert_eq!(point(&axes, 3), [2.0, 10.0]);
    }

    #[test]
    fn refuses_huge_grids() {
        let s = DotProductScenario::default();
        let big = GridAxis::new("B", vec![1.0; 1001]);
        let axes = [big.clone(), GridAxis::new("P", vec![1.0; 1000])];
        let obj = Objective::new(ObjectiveKind::Time, 10.0);
        assert_eq!(
            sweep(&s.problem(), &axes, &obj, Execution::Sequential),
            Err(SweepError::GridTooLarge(1_001_000))
        );
    }

    #[test]
    fn ten_by_ten_marks_one_minimum() {
        let s = DotProductScenario::default();
        let axes = [
            GridAxis::new("B", (0..10).map(|i| 2f64.powi(i)).collect()),
            GridAxis::new("P", (0..10).map(|i| 2f64.powi(i).min(256.0)).collect()),
        ];
        let obj = Objective::new(ObjectiveKind::Time, 20.0);
        let r = sweep(&s.problem(), &axes, &obj, Execution::default()).unwrap();
        assert_eq!(r.rows.len(), 100);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 101);
        assert_eq!(csv.lines().filter(|l| l.ends_with(",1")).count(), 1);
        let seq = sweep(&s.problem(), &axes, &obj, Execution::Sequential).unwrap();
        assert_eq!(seq, r);
    }
}
