//! Performance estimates from a mapping run.
//!
//! ```text
//! runtime = cycles / frequency                                    [s]
//! t_us    = runtime · 1e6                                         [µs]
//! energy  = Σ_m (reads_m·readEnergy_m + writes_m·writeEnergy_m + leakage_m·t_us)
//!         + Σ_c (ops_c·intEnergy_c + leakage_c·t_us)              [nJ]
//! power   = energy · 1e-9 / runtime                               [W]
//! area    = Σ over every unit of its area                         [mm²]
//! ```
//!
//! Leakage is in mW, so `leakage · t_us` is in nJ. The numeric estimate is
//! computed by evaluating the same expression tree that [`estimate_symbolic`]
//! returns, so the two agree bit for bit.

use std::fmt::Write as _;

use crate::expr::{Assignment, Expr, ExprError};
use crate::hwmodel::{CompUnit, ConcreteHardwareModel, HardwareModel, MemUnit, Metric, Unit};
use crate::mapper::MapResult;
use crate::report::{csv_line, fmt_sig};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PerfEstimate {
    pub runtime: f64,
    pub energy: f64,
    pub power: f64,
    pub area: f64,
}

/// Energy and area attributed to one unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitBreakdown {
    pub unit: Unit,
    pub dynamic_energy: f64,
    pub leakage_energy: f64,
    pub area: f64,
}

impl UnitBreakdown {
    pub fn energy(&self) -> f64 {
        self.dynamic_energy + self.leakage_energy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub perf: PerfEstimate,
    pub cycles: f64,
    pub units: Vec<UnitBreakdown>,
}

/// Estimate expressions for one mapping run.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicEstimate {
    pub runtime: Expr,
    pub energy: Expr,
    pub power: Expr,
    pub area: Expr,
}

impl SymbolicEstimate {
    pub fn eval(&self, b: &impl crate::expr::Bindings) -> Result<PerfEstimate, ExprError> {
        Ok(PerfEstimate {
            runtime: self.runtime.eval(b)?,
            energy: self.energy.eval(b)?,
            power: self.power.eval(b)?,
            area: self.area.eval(b)?,
        })
    }
}

/// Name of the variable standing for metric `q` of unit `u`.
pub fn metric_var(u: Unit, q: Metric) -> String {
    format!("{}.{}", u.name(), q.name())
}

fn var(u: Unit, q: Metric) -> Expr {
    Expr::p(metric_var(u, q))
}

fn count(n: u64) -> Expr {
    Expr::c(n as f64)
}

struct Terms {
    /// per unit: (dynamic energy, leakage energy, area)
    units: Vec<(Unit, Expr, Expr, Expr)>,
    runtime: Expr,
}

fn terms(r: &MapResult, mems: &[MemUnit], comps: &[CompUnit], runtime_us: &dyn Fn(&Expr) -> Expr) -> Terms {
    let runtime = Expr::div(Expr::c(r.total_cycles), var(Unit::Soc, Metric::Frequency));
    let t_us = runtime_us(&runtime);
    let mut units = Vec::new();
    for &m in mems {
        let u = Unit::Mem(m);
        let st = r.memory.get(&m).copied().unwrap_or_default();
        let dynamic = Expr::add(
            Expr::mul(count(st.n_reads), var(u, Metric::ReadEnergy)),
            Expr::mul(count(st.n_writes), var(u, Metric::WriteEnergy)),
        );
        let leak = Expr::mul(var(u, Metric::LeakagePower), t_us.clone());
        units.push((u, dynamic, leak, var(u, Metric::Area)));
    }
    for &c in comps {
        let u = Unit::Comp(c);
        let st = r.compute.get(&c).copied().unwrap_or_default();
        let dynamic = Expr::mul(count(st.n_ops), var(u, Metric::IntEnergy));
        let leak = Expr::mul(var(u, Metric::LeakagePower), t_us.clone());
        units.push((u, dynamic, leak, var(u, Metric::Area)));
    }
    Terms { units, runtime }
}

fn micro(runtime: &Expr) -> Expr {
    Expr::mul(runtime.clone(), Expr::c(1e6))
}

fn assemble(r: &MapResult, t: Terms) -> SymbolicEstimate {
    let energy = Expr::sum(t.units.iter().map(|(_, d, l, _)| Expr::add(d.clone(), l.clone())));
    let area = Expr::sum(t.units.iter().map(|(_, _, _, a)| a.clone()));
    let power = if r.total_cycles > 0.0 {
        Expr::div(Expr::mul(energy.clone(), Expr::c(1e-9)), t.runtime.clone())
    } else {
        Expr::zero()
    };
    SymbolicEstimate {
        runtime: t.runtime,
        energy,
        power,
        area,
    }
}

/// Estimates over metric variables named by [`metric_var`].
pub fn estimate_over_metrics(r: &MapResult, mems: &[MemUnit], comps: &[CompUnit]) -> SymbolicEstimate {
    assemble(r, terms(r, mems, comps, &micro))
}

fn metric_bindings(c: &ConcreteHardwareModel) -> Assignment {
    c.values().map(|((u, q), v)| (metric_var(u, q), v)).collect()
}

pub fn estimate(r: &MapResult, c: &ConcreteHardwareModel) -> Estimate {
    let (mems, comps) = (c.mem_units(), c.comp_units());
    let b = metric_bindings(c);
    let t = terms(r, &mems, &comps, &micro);
    let eval = |e: &Expr| e.eval(&b).expect("concrete model binds every metric");
    let units = t
        .units
        .iter()
        .map(|(u, d, l, a)| UnitBreakdown {
            unit: *u,
            dynamic_energy: eval(d),
            leakage_energy: eval(l),
            area: eval(a),
        })
        .collect();
    let s = assemble(r, t);
    Estimate {
        perf: s.eval(&b).expect("concrete model binds every metric"),
        cycles: r.total_cycles,
        units,
    }
}

/// The estimate as expressions over the hardware model's parameters.
pub fn estimate_symbolic(r: &MapResult, h: &HardwareModel) -> SymbolicEstimate {
    let s = estimate_over_metrics(r, &h.mem_units(), &h.comp_units());
    let sub = |e: &Expr| {
        e.replace(&|name| {
            let (u, q) = crate::hwmodel::parse_key(name).ok()?;
            h.get(u, q).cloned()
        })
    };
    SymbolicEstimate {
        runtime: sub(&s.runtime),
        energy: sub(&s.energy),
        power: sub(&s.power),
        area: sub(&s.area),
    }
}

/// Name of the runtime variable (in µs) used by [`tmec`] and [`energy_over_runtime`].
pub const RUNTIME_VAR: &str = "t_W";

/// Total memory energy `Σ_i (ww_i·ew_i + rw_i·er_i + l_i·t_W)` with the
/// runtime left as the variable [`RUNTIME_VAR`].
pub fn tmec(r: &MapResult, mems: &[MemUnit]) -> Expr {
    let t = terms(r, mems, &[], &|_| Expr::p(RUNTIME_VAR));
    Expr::sum(t.units.into_iter().map(|(_, d, l, _)| Expr::add(d, l)))
}

/// Total energy with the runtime left as [`RUNTIME_VAR`]; its `t_W` partial
/// is the summed memory leakage plus the summed compute leakage.
pub fn energy_over_runtime(r: &MapResult, mems: &[MemUnit], comps: &[CompUnit]) -> Expr {
    let t = terms(r, mems, comps, &|_| Expr::p(RUNTIME_VAR));
    Expr::sum(t.units.into_iter().map(|(_, d, l, _)| Expr::add(d, l)))
}

impl Estimate {
    /// `key = value # units` lines: the four metrics, cycles, then per unit.
    pub fn to_report(&self) -> String {
        let p = &self.perf;
        let mut out = String::new();
        for (k, v, u) in [
            ("runtime", p.runtime, "s"),
            ("energy", p.energy, "nJ"),
            ("power", p.power, "W"),
            ("area", p.area, "mm2"),
            ("cycles", self.cycles, "cycles"),
        ] {
            let _ = writeln!(out, "{k} = {} # {u}", fmt_sig(v));
        }
        for b in &self.units {
            let n = b.unit.name();
            let _ = writeln!(out, "{n}.dynamicEnergy = {} # nJ", fmt_sig(b.dynamic_energy));
            let _ = writeln!(out, "{n}.leakageEnergy = {} # nJ", fmt_sig(b.leakage_energy));
            let _ = writeln!(out, "{n}.area = {} # mm2", fmt_sig(b.area));
        }
        out
    }

    /// One row per unit plus a total row.
    pub fn to_csv(&self) -> String {
        let mut out = csv_line(["unit", "dynamic_energy_nJ", "leakage_energy_nJ", "energy_nJ", "area_mm2"]);
        for b in &self.units {
            out.push_str(&csv_line([
                b.unit.name().to_string(),
                fmt_sig(b.dynamic_energy),
                fmt_sig(b.leakage_energy),
                fmt_sig(b.energy()),
                fmt_sig(b.area),
            ]));
        }
        let dynamic: f64 = self.units.iter().map(|b| b.dynamic_energy).sum();
        let leakage: f64 = self.units.iter().map(|b| b.leakage_energy).sum();
        out.push_str(&csv_line([
            "total".to_string(),
            fmt_sig(dynamic),
            fmt_sig(leakage),
            fmt_sig(self.perf.energy),
            fmt_sig(self.perf.area),
        ]));
        out
    }
}
