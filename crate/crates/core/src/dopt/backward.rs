//! The backward pass over a mapping run.
//!
//! Each execution record contributes `max(t_c, t_mem') + t_stream` cycles,
//! where `t_mem'` is the memory time left after prefetch hiding. Gradients
//! follow the critical branch of that `max` (ties go to compute), and the
//! ceilings inside `t_c` and `t_mem` are differentiated straight through:
//! `∂⌈n/x⌉/∂x = −n/x²`. Cycle sensitivities then reach runtime through
//! `T = cycles/frequency`, energy through the dynamic and leakage terms, and
//! the hardware parameters through the bipartite parameter/metric graph.

use std::collections::BTreeMap;

use super::{BipartiteGraph, DoptError, Evaluation, Objective, Problem};
use crate::dsim::{estimate, Estimate, PerfEstimate};
use crate::expr::Assignment;
use crate::hwmodel::{ConcreteHardwareModel, HardwareModel, Key, MemUnit, Metric, ParamSpec, Unit};
use crate::mapper::{map_workload, ExecRecord, MapConfig, MapResult};
use crate::workload::Workload;

/// Derivatives of runtime [s], energy [nJ] and area [mm²] with respect to
/// each concrete metric value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricSensitivity {
    pub runtime: BTreeMap<Key, f64>,
    pub energy: BTreeMap<Key, f64>,
    pub area: BTreeMap<Key, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientAccumulator {
    /// `Σ (t_min − t_unit)` over the records each unit takes part in [cycles].
    pub t_grad: BTreeMap<Unit, f64>,
    /// Dynamic energy of each unit [nJ].
    pub e_grad: BTreeMap<Unit, f64>,
    pub sensitivity: MetricSensitivity,
    pub evaluation: Evaluation,
    /// Objective gradient per parameter.
    pub g: BTreeMap<String, f64>,
}

fn critical_level(rec: &ExecRecord) -> Option<MemUnit> {
    let mut best: Option<(MemUnit, f64)> = None;
    for (&m, &t) in &rec.t_mem {
        if best.is_none_or(|(_, b)| t > b) {
            best = Some((m, t));
        }
    }
    best.map(|(m, _)| m)
}

/// `(∂X/∂t_c, ∂X/∂t_mem, ∂X/∂prev_t_c)` of one record's contribution `X`.
fn branch_partials(rec: &ExecRecord, overlap: bool) -> (f64, f64, f64) {
    let tc = rec.t_c;
    let tm = rec.t_mem_max();
    let hides_all = rec.prefetched && tm <= rec.prev_t_c;
    if overlap {
        let tm_left = if !rec.prefetched {
            tm
        } else if hides_all {
            0.0
        } else {
            tm - rec.prev_t_c
        };
        let mem_critical = tm_left > tc;
        let dtm_left = if mem_critical { 1.0 } else { 0.0 };
        let dtc = 1.0 - dtm_left;
        match (rec.prefetched, hides_all) {
            (false, _) => (dtc, dtm_left, 0.0),
            (true, true) => (dtc, 0.0, 0.0),
            (true, false) => (dtc, dtm_left, -dtm_left),
        }
    } else {
        match (rec.prefetched, hides_all) {
            (false, _) => (1.0, 1.0, 0.0),
            (true, true) => (1.0, 0.0, 0.0),
            (true, false) => (1.0, 1.0, -1.0),
        }
    }
}

fn add(map: &mut BTreeMap<Key, f64>, k: Key, v: f64) {
    if v != 0.0 {
        *map.entry(k).or_insert(0.0) += v;
    }
}

fn compute_partials(rec: &ExecRecord, c: &ConcreteHardwareModel, scale: f64, out: &mut BTreeMap<Key, f64>) {
    for (&u, &ops) in &rec.ops {
        let thr = c.get(Unit::Comp(u), Metric::Throughput).unwrap_or(f64::INFINITY);
        add(out, (Unit::Comp(u), Metric::Throughput), -scale * ops as f64 / (thr * thr));
    }
}

/// `∂cycles/∂metric` for throughputs and bandwidths.
pub fn cycle_sensitivities(r: &MapResult, c: &ConcreteHardwareModel) -> BTreeMap<Key, f64> {
    let mut out = BTreeMap::new();
    for (i, rec) in r.records.iter().enumerate() {
        let (dtc, dtm, dprev) = branch_partials(rec, r.overlap);
        if dtc != 0.0 {
            compute_partials(rec, c, dtc, &mut out);
        }
        if dtm != 0.0 {
            if let Some(m) = critical_level(rec) {
                let bw = c.get(Unit::Mem(m), Metric::Bandwidth).unwrap_or(f64::INFINITY);
                add(&mut out, (Unit::Mem(m), Metric::Bandwidth), -dtm * rec.bytes[&m] as f64 / (bw * bw));
            }
        }
        if let Some(l) = rec.stream_level.filter(|_| rec.stream_bytes > 0) {
            let bw = c.get(Unit::Mem(l), Metric::Bandwidth).unwrap_or(f64::INFINITY);
            add(&mut out, (Unit::Mem(l), Metric::Bandwidth), -(rec.stream_bytes as f64) / (bw * bw));
        }
        if dprev != 0.0 && i > 0 {
            compute_partials(&r.records[i - 1], c, dprev, &mut out);
        }
    }
    out
}

pub fn metric_sensitivities(r: &MapResult, c: &ConcreteHardwareModel) -> MetricSensitivity {
    let f = c.get(Unit::Soc, Metric::Frequency).unwrap_or(1.0);
    let cycles = r.total_cycles;
    let runtime_s = cycles / f;
    let mut s = MetricSensitivity::default();
    for (k, v) in cycle_sensitivities(r, c) {
        s.runtime.insert(k, v / f);
    }
    add(&mut s.runtime, (Unit::Soc, Metric::Frequency), -cycles / (f * f));

    let units: Vec<Unit> = c
        .mem_units()
        .into_iter()
        .map(Unit::Mem)
        .chain(c.comp_units().into_iter().map(Unit::Comp))
        .collect();
    let leak_total: f64 = units
        .iter()
        .filter_map(|&u| c.get(u, Metric::LeakagePower))
        .sum();
    for (&k, &dt) in &s.runtime {
        add(&mut s.energy, k, leak_total * 1e6 * dt);
    }
    for &u in &units {
        add(&mut s.energy, (u, Metric::LeakagePower), runtime_s * 1e6);
        s.area.insert((u, Metric::Area), 1.0);
    }
    for (&m, st) in &r.memory {
        add(&mut s.energy, (Unit::Mem(m), Metric::ReadEnergy), st.n_reads as f64);
        add(&mut s.energy, (Unit::Mem(m), Metric::WriteEnergy), st.n_writes as f64);
    }
    for (&u, st) in &r.compute {
        add(&mut s.energy, (Unit::Comp(u), Metric::IntEnergy), st.n_ops as f64);
    }
    s
}

fn stall_accumulation(r: &MapResult) -> BTreeMap<Unit, f64> {
    let mut t = BTreeMap::new();
    for rec in &r.records {
        for &u in rec.ops.keys() {
            *t.entry(Unit::Comp(u)).or_insert(0.0) += rec.t_min - rec.t_c;
        }
        for (&m, &tm) in &rec.t_mem {
            *t.entry(Unit::Mem(m)).or_insert(0.0) += rec.t_min - tm;
        }
    }
    t
}

fn evaluation(
    est: &Estimate,
    sens: &MetricSensitivity,
    graph: &BipartiteGraph,
    a: &Assignment,
) -> Result<Evaluation, DoptError> {
    Ok(Evaluation {
        perf: est.perf,
        d_runtime: graph.gather(&sens.runtime, a)?,
        d_energy: graph.gather(&sens.energy, a)?,
        d_area: graph.gather(&sens.area, a)?,
    })
}

/// Gradients of one mapping run of `c` (specialized at `a`) for `obj`.
pub fn backward_pass(
    r: &MapResult,
    c: &ConcreteHardwareModel,
    graph: &BipartiteGraph,
    a: &Assignment,
    obj: &Objective,
) -> Result<GradientAccumulator, DoptError> {
    let est = estimate(r, c);
    let sensitivity = metric_sensitivities(r, c);
    let ev = evaluation(&est, &sensitivity, graph, a)?;
    Ok(GradientAccumulator {
        t_grad: stall_accumulation(r),
        e_grad: est.units.iter().map(|b| (b.unit, b.dynamic_energy)).collect(),
        g: obj.gradient(&ev),
        sensitivity,
        evaluation: ev,
    })
}

/// Specialize, map, estimate and differentiate a hardware model on a workload.
#[derive(Debug, Clone)]
pub struct PipelineProblem {
    pub model: HardwareModel,
    pub workload: Workload,
    pub map: MapConfig,
    free: Vec<ParamSpec>,
    base: Assignment,
    graph: BipartiteGraph,
}

impl PipelineProblem {
    /// Every parameter of `model` is free.
    pub fn new(model: HardwareModel, workload: Workload, map: MapConfig) -> Self {
        let names: Vec<String> = model.params().map(|p| p.name().to_string()).collect();
        Self::with_free(model, workload, map, &names).expect("own parameters exist")
    }

    pub fn with_free(
        model: HardwareModel,
        workload: Workload,
        map: MapConfig,
        free: &[impl AsRef<str>],
    ) -> Result<Self, DoptError> {
        let specs = free
            .iter()
            .map(|n| {
                model
                    .param(n.as_ref())
                    .cloned()
                    .ok_or_else(|| DoptError::UnknownParam(n.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let graph = BipartiteGraph::build(&model, specs.iter().map(|p| p.name()));
        Ok(PipelineProblem {
            base: model.seed_assignment(),
            model,
            workload,
            map,
            free: specs,
            graph,
        })
    }

    /// Seed values with `a` layered on top.
    pub fn full_assignment(&self, a: &Assignment) -> Assignment {
        self.base.union(a)
    }

    pub fn graph(&self) -> &BipartiteGraph {
        &self.graph
    }

    /// Forward pass only.
    pub fn run(&self, a: &Assignment) -> Result<(ConcreteHardwareModel, MapResult), DoptError> {
        let c = self.model.specialize_at(&self.full_assignment(a))?;
        let r = map_workload(&self.workload, &c, &self.map)?;
        Ok((c, r))
    }

    pub fn backward(&self, a: &Assignment, obj: &Objective) -> Result<GradientAccumulator, DoptError> {
        let (c, r) = self.run(a)?;
        backward_pass(&r, &c, &self.graph, &self.full_assignment(a), obj)
    }
}

impl Problem for PipelineProblem {
    fn params(&self) -> &[ParamSpec] {
        &self.free
    }

    fn evaluate(&self, a: &Assignment) -> Result<Evaluation, DoptError> {
        let (c, r) = self.run(a)?;
        let est = estimate(&r, &c);
        let sens = metric_sensitivities(&r, &c);
        evaluation(&est, &sens, &self.graph, &self.full_assignment(a))
    }

    fn forward(&self, a: &Assignment) -> Result<PerfEstimate, DoptError> {
        let (c, r) = self.run(a)?;
        Ok(estimate(&r, &c).perf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hwmodel::CompUnit;

    fn record(t_c: f64, t_mem: f64) -> ExecRecord {
        ExecRecord {
            vertex: "v".into(),
            ops: [(CompUnit::Vector, 96)].into_iter().collect(),
            bytes: [(MemUnit::GlobalBuf, 1280)].into_iter().collect(),
            t_comp: [(CompUnit::Vector, t_c)].into_iter().collect(),
            t_c,
            t_mem: [(MemUnit::GlobalBuf, t_mem)].into_iter().collect(),
            stream_bytes: 0,
            stream_level: None,
            t_stream: 0.0,
            t_exec: t_c.max(t_mem),
            t_min: t_c.min(t_mem),
            prefetched: false,
            prev_t_c: 0.0,
            credit: 0.0,
            alloc_used: 0,
        }
    }

    #[test]
    fn stall_time_accumulation() {
        let r = MapResult {
            total_cycles: 10.0,
            records: vec![record(6.0, 10.0)],
            overlap: true,
            ..MapResult::default()
        };
        let t = stall_accumulation(&r);
        assert_eq!(t[&Unit::Mem(MemUnit::GlobalBuf)], -4.0);
        assert_eq!(t[&Unit::Comp(CompUnit::Vector)], 0.0);
    }

    #[test]
    fn critical_branch() {
        assert_eq!(branch_partials(&record(6.0, 10.0), true), (0.0, 1.0, 0.0));
        assert_eq!(branch_partials(&record(10.0, 10.0), true), (1.0, 0.0, 0.0));
        let mut p = record(1.0, 10.0);
        p.prefetched = true;
        p.prev_t_c = 4.0;
        assert_eq!(branch_partials(&p, true), (0.0, 1.0, -1.0));
        p.prev_t_c = 12.0;
        assert_eq!(branch_partials(&p, true), (1.0, 0.0, 0.0));
        assert_eq!(branch_partials(&record(6.0, 10.0), false), (1.0, 1.0, 0.0));
    }
}
