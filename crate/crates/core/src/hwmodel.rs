//! Hardware models: `(unit, metric) -> Expr`, and their specialization to
//! concrete real-valued models.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::expr::{Assignment, Bindings, Expr, ExprError, ParamId, ParamKind, ValueDomain};
use crate::report::fmt_sig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MemUnit {
    LocalMem,
    GlobalBuf,
    MainMem,
}

impl MemUnit {
    pub const ALL: [MemUnit; 3] = [MemUnit::LocalMem, MemUnit::GlobalBuf, MemUnit::MainMem];

    pub fn name(self) -> &'static str {
        match self {
            MemUnit::LocalMem => "localMem",
            MemUnit::GlobalBuf => "globalBuf",
            MemUnit::MainMem => "mainMem",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CompUnit {
    SystolicArray,
    Vector,
    MacTree,
    Fpu,
}

impl CompUnit {
    pub const ALL: [CompUnit; 4] = [
        CompUnit::SystolicArray,
        CompUnit::Vector,
        CompUnit::MacTree,
        CompUnit::Fpu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CompUnit::SystolicArray => "systolicArray",
            CompUnit::Vector => "vector",
            CompUnit::MacTree => "macTree",
            CompUnit::Fpu => "fpu",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Unit {
    Mem(MemUnit),
    Comp(CompUnit),
    Soc,
}

impl Unit {
    pub fn name(self) -> &'static str {
        match self {
            Unit::Mem(m) => m.name(),
            Unit::Comp(c) => c.name(),
            Unit::Soc => "SoC",
        }
    }

    pub fn metrics(self) -> &'static [Metric] {
        match self {
            Unit::Mem(_) => &Metric::MEMORY,
            Unit::Comp(_) => &Metric::COMPUTE,
            Unit::Soc => &[Metric::Frequency],
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MemUnit {
    type Err = HwModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MemUnit::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HwModelError::UnknownName(s.to_string()))
    }
}

impl FromStr for CompUnit {
    type Err = HwModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CompUnit::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| HwModelError::UnknownName(s.to_string()))
    }
}

impl FromStr for Unit {
    type Err = HwModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "SoC" || s == "soc" {
            return Ok(Unit::Soc);
        }
        if let Ok(m) = s.parse::<MemUnit>() {
            return Ok(Unit::Mem(m));
        }
        s.parse::<CompUnit>().map(Unit::Comp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    ReadLatency,
    WriteLatency,
    ReadEnergy,
    WriteEnergy,
    LeakagePower,
    Area,
    Capacity,
    Bandwidth,
    /// Dynamic energy per operation. `intPower` is accepted as an alias when parsing.
    IntEnergy,
    Latency,
    Throughput,
    Frequency,
}

impl Metric {
    pub const MEMORY: [Metric; 8] = [
        Metric::ReadLatency,
        Metric::WriteLatency,
        Metric::ReadEnergy,
        Metric::WriteEnergy,
        Metric::LeakagePower,
        Metric::Area,
        Metric::Capacity,
        Metric::Bandwidth,
    ];

    pub const COMPUTE: [Metric; 5] = [
        Metric::IntEnergy,
        Metric::LeakagePower,
        Metric::Latency,
        Metric::Area,
        Metric::Throughput,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::ReadLatency => "readLatency",
            Metric::WriteLatency => "writeLatency",
            Metric::ReadEnergy => "readEnergy",
            Metric::WriteEnergy => "writeEnergy",
            Metric::LeakagePower => "leakagePower",
            Metric::Area => "area",
            Metric::Capacity => "capacity",
            Metric::Bandwidth => "bandwidth",
            Metric::IntEnergy => "intEnergy",
            Metric::Latency => "latency",
            Metric::Throughput => "throughput",
            Metric::Frequency => "frequency",
        }
    }

    pub fn units(self) -> &'static str {
        match self {
            Metric::ReadLatency | Metric::WriteLatency => "s/access",
            Metric::Latency => "s/op",
            Metric::ReadEnergy | Metric::WriteEnergy => "nJ/byte",
            Metric::IntEnergy => "nJ/op",
            Metric::LeakagePower => "mW",
            Metric::Area => "mm2",
            Metric::Capacity => "bytes",
            Metric::Bandwidth => "bytes/cycle",
            Metric::Throughput => "ops/cycle",
            Metric::Frequency => "Hz",
        }
    }

    const ALL: [Metric; 12] = [
        Metric::ReadLatency,
        Metric::WriteLatency,
        Metric::ReadEnergy,
        Metric::WriteEnergy,
        Metric::LeakagePower,
        Metric::Area,
        Metric::Capacity,
        Metric::Bandwidth,
        Metric::IntEnergy,
        Metric::Latency,
        Metric::Throughput,
        Metric::Frequency,
    ];
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = HwModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "intPower" {
            return Ok(Metric::IntEnergy);
        }
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HwModelError::UnknownName(s.to_string()))
    }
}

pub type Key = (Unit, Metric);

/// Parse `unit.metric`.
pub fn parse_key(s: &str) -> Result<Key, HwModelError> {
    let (u, m) = s
        .split_once('.')
        .ok_or_else(|| HwModelError::UnknownName(s.to_string()))?;
    Ok((u.parse()?, m.parse()?))
}

pub fn key_name(key: Key) -> String {
    format!("{}.{}", key.0, key.1)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HwModelError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("parameter `{param}` = {value} outside bounds [{min}, {max}]")]
    OutOfBounds {
        param: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("missing metric {}.{}", .0.name(), .1.name())]
    MissingMetric(Unit, Metric),
    #[error("metric {}.{} has invalid value {value}", .unit.name(), .metric.name())]
    InvalidMetric { unit: Unit, metric: Metric, value: f64 },
    #[error("unknown unit or metric `{0}`")]
    UnknownName(String),
    #[error("model line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Which side of the design a parameter tunes, used for reporting and ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamSide {
    Memory,
    Compute,
}

impl ParamSide {
    fn name(self) -> &'static str {
        match self {
            ParamSide::Memory => "memory",
            ParamSide::Compute => "compute",
        }
    }
}

/// A parameter together with its seed value and admissible range.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub id: ParamId,
    pub side: ParamSide,
    pub seed: f64,
    pub min: f64,
    pub max: f64,
}

impl ParamSpec {
    /// Bounds default to 0.1x..10x of the seed (rounded into the domain).
    pub fn new(id: ParamId, side: ParamSide, seed: f64) -> Self {
        let (lo, hi) = if seed >= 0.0 {
            (0.1 * seed, 10.0 * seed)
        } else {
            (10.0 * seed, 0.1 * seed)
        };
        let (min, max) = match id.domain {
            ValueDomain::Real => (lo, hi),
            ValueDomain::Natural => (lo.ceil().max(1.0).min(seed), hi.floor().max(seed)),
            ValueDomain::PowerOfTwo => (
                lo.max(1.0).log2().ceil().exp2().min(seed),
                hi.max(1.0).log2().floor().exp2().max(seed),
            ),
        };
        ParamSpec {
            id,
            side,
            seed,
            min,
            max,
        }
    }

    pub fn with_bounds(mut self, min: f64, max: f64) -> Self {
        self.min = min;
        self.max = max;
        self
    }

    pub fn name(&self) -> &str {
        &self.id.name
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }

    pub fn contains(&self, v: f64) -> bool {
        let slack = 1e-12 * self.min.abs().max(self.max.abs()).max(1.0);
        v >= self.min - slack && v <= self.max + slack
    }
}

/// `(unit, metric) -> Expr` plus the table of parameters those expressions use.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HardwareModel {
    entries: BTreeMap<Key, Expr>,
    params: BTreeMap<String, ParamSpec>,
}

impl HardwareModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, unit: Unit, metric: Metric, expr: Expr) {
        self.entries.insert((unit, metric), expr);
    }

    pub fn add_param(&mut self, spec: ParamSpec) {
        self.params.insert(spec.id.name.clone(), spec);
    }

    pub fn get(&self, unit: Unit, metric: Metric) -> Option<&Expr> {
        self.entries.get(&(unit, metric))
    }

    pub fn entries(&self) -> impl Iterator<Item = (Key, &Expr)> {
        self.entries.iter().map(|(k, e)| (*k, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn params(&self) -> impl Iterator<Item = &ParamSpec> {
        self.params.values()
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut ParamSpec> {
        self.params.get_mut(name)
    }

    pub fn mem_units(&self) -> Vec<MemUnit> {
        let mut out: Vec<MemUnit> = self
            .entries
            .keys()
            .filter_map(|(u, _)| match u {
                Unit::Mem(m) => Some(*m),
                _ => None,
            })
            .collect();
        out.dedup();
        out
    }

    pub fn comp_units(&self) -> Vec<CompUnit> {
        let mut out: Vec<CompUnit> = self
            .entries
            .keys()
            .filter_map(|(u, _)| match u {
                Unit::Comp(c) => Some(*c),
                _ => None,
            })
            .collect();
        out.dedup();
        out
    }

    /// Seed values of every parameter, split by kind.
    pub fn seed_assignments(&self) -> (Assignment, Assignment) {
        let mut tech = Assignment::new();
        let mut arch = Assignment::new();
        for p in self.params.values() {
            match p.id.kind {
                ParamKind::Tech => tech.insert(p.name(), p.seed),
                ParamKind::Arch => arch.insert(p.name(), p.seed),
            };
        }
        (tech, arch)
    }

    pub fn seed_assignment(&self) -> Assignment {
        let (t, a) = self.seed_assignments();
        t.union(&a)
    }

    /// Parameters referenced by some expression but missing from the table.
    pub fn undeclared_params(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .entries
            .values()
            .flat_map(|e| e.params())
            .filter(|p| !self.params.contains_key(p))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Specialize at the full assignment `a` (tech and arch already merged).
    pub fn specialize_at(&self, a: &Assignment) -> Result<ConcreteHardwareModel, HwModelError> {
        self.specialize(a, &Assignment::new())
    }

    pub fn specialize(
        &self,
        tech: &Assignment,
        arch: &Assignment,
    ) -> Result<ConcreteHardwareModel, HwModelError> {
        let bindings = (tech, arch);
        for (name, spec) in &self.params {
            if let Some(v) = bindings.value(name) {
                if !spec.contains(v) {
                    return Err(HwModelError::OutOfBounds {
                        param: name.clone(),
                        value: v,
                        min: spec.min,
                        max: spec.max,
                    });
                }
            }
        }
        let mut values = BTreeMap::new();
        for (&(unit, metric), e) in &self.entries {
            let v = e.eval(&bindings)?;
            let ok = v.is_finite()
                && match metric {
                    Metric::Capacity | Metric::Bandwidth | Metric::Throughput | Metric::Frequency => {
                        v > 0.0
                    }
                    _ => v >= 0.0,
                };
            if !ok {
                return Err(HwModelError::InvalidMetric {
                    unit,
                    metric,
                    value: v,
                });
            }
            values.insert((unit, metric), v);
        }
        Ok(ConcreteHardwareModel {
            values,
            tech: tech.clone(),
            arch: arch.clone(),
        })
    }

    /// Serialized model text: parameter table followed by one expression per entry.
    ///
    /// ```text
    /// param <name> <tech|arch> <real|natural|pow2> <memory|compute> seed=<v> min=<v> max=<v>
    /// expr <unit>.<metric> = <prefix expression>
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::from("# hardware model\n");
        for p in self.params.values() {
            out.push_str(&format!(
                "param {} {} {} {} seed={} min={} max={}\n",
                p.id.name,
                kind_name(p.id.kind),
                domain_name(p.id.domain),
                p.side.name(),
                p.seed,
                p.min,
                p.max
            ));
        }
        for (&key, e) in &self.entries {
            out.push_str(&format!("expr {} = {}\n", key_name(key), e));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<HardwareModel, HwModelError> {
        let mut model = HardwareModel::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |reason: String| HwModelError::Parse {
                line: line_no,
                reason,
            };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("param ") {
                let f: Vec<&str> = rest.split_whitespace().collect();
                if f.len() != 7 {
                    return Err(err(format!("expected 7 fields after `param`, got {}", f.len())));
                }
                let kind = match f[1] {
                    "tech" => ParamKind::Tech,
                    "arch" => ParamKind::Arch,
                    k => return Err(err(format!("bad parameter kind `{k}`"))),
                };
                let domain = match f[2] {
                    "real" => ValueDomain::Real,
                    "natural" => ValueDomain::Natural,
                    "pow2" => ValueDomain::PowerOfTwo,
                    d => return Err(err(format!("bad value domain `{d}`"))),
                };
                let side = match f[3] {
                    "memory" => ParamSide::Memory,
                    "compute" => ParamSide::Compute,
                    s => return Err(err(format!("bad parameter side `{s}`"))),
                };
                let num = |field: &str, key: &str| -> Result<f64, HwModelError> {
                    field
                        .strip_prefix(key)
                        .and_then(|v| v.parse::<f64>().ok())
                        .ok_or_else(|| err(format!("expected `{key}<number>`, got `{field}`")))
                };
                let seed = num(f[4], "seed=")?;
                let min = num(f[5], "min=")?;
                let max = num(f[6], "max=")?;
                model.add_param(ParamSpec {
                    id: ParamId::new(f[0], kind, domain),
                    side,
                    seed,
                    min,
                    max,
                });
            } else if let Some(rest) = line.strip_prefix("expr ") {
                let (key, e) = rest
                    .split_once('=')
                    .ok_or_else(|| err("expected `unit.metric = expr`".into()))?;
                let key = parse_key(key.trim()).map_err(|e| err(e.to_string()))?;
                let e: Expr = e.trim().parse().map_err(|e: crate::expr::ParseExprError| err(e.to_string()))?;
                model.insert(key.0, key.1, e);
            } else {
                return Err(err(format!("unrecognized line `{line}`")));
            }
        }
        Ok(model)
    }
}

fn kind_name(k: ParamKind) -> &'static str {
    match k {
        ParamKind::Tech => "tech",
        ParamKind::Arch => "arch",
    }
}

fn domain_name(d: ValueDomain) -> &'static str {
    match d {
        ValueDomain::Real => "real",
        ValueDomain::Natural => "natural",
        ValueDomain::PowerOfTwo => "pow2",
    }
}

/// `(unit, metric) -> real`, remembering the assignments it was built from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConcreteHardwareModel {
    values: BTreeMap<Key, f64>,
    pub tech: Assignment,
    pub arch: Assignment,
}

impl ConcreteHardwareModel {
    /// A concrete model holding exactly `values`, with no provenance.
    pub fn from_values(values: impl IntoIterator<Item = (Key, f64)>) -> Self {
        ConcreteHardwareModel {
            values: values.into_iter().collect(),
            tech: Assignment::new(),
            arch: Assignment::new(),
        }
    }

    pub fn lookup(&self, unit: Unit, metric: Metric) -> Result<f64, HwModelError> {
        self.values
            .get(&(unit, metric))
            .copied()
            .ok_or(HwModelError::MissingMetric(unit, metric))
    }

    pub fn get(&self, unit: Unit, metric: Metric) -> Option<f64> {
        self.values.get(&(unit, metric)).copied()
    }

    pub fn set(&mut self, unit: Unit, metric: Metric, value: f64) {
        self.values.insert((unit, metric), value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = (Key, f64)> + '_ {
        self.values.iter().map(|(k, v)| (*k, *v))
    }

    pub fn mem_units(&self) -> Vec<MemUnit> {
        MemUnit::ALL
            .into_iter()
            .filter(|m| self.values.contains_key(&(Unit::Mem(*m), Metric::Capacity)))
            .collect()
    }

    pub fn comp_units(&self) -> Vec<CompUnit> {
        CompUnit::ALL
            .into_iter()
            .filter(|c| self.values.contains_key(&(Unit::Comp(*c), Metric::Throughput)))
            .collect()
    }

    /// Merged parameter values the model was specialized at.
    pub fn assignment(&self) -> Assignment {
        self.tech.union(&self.arch)
    }

    /// `unit.metric = value # units`, one line per entry.
    pub fn to_report(&self) -> String {
        let mut out = String::new();
        for (&(u, m), &v) in &self.values {
            out.push_str(&format!("{}.{} = {} # {}\n", u, m, fmt_sig(v), m.units()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> HardwareModel {
        let mut h = HardwareModel::new();
        h.insert(
            Unit::Mem(MemUnit::MainMem),
            Metric::ReadEnergy,
            Expr::p("cellReadPower") * Expr::p("cellReadLatency"),
        );
        h.insert(Unit::Soc, Metric::Frequency, Expr::p("frequency"));
        for (n, k, v) in [
            ("cellReadPower", ParamKind::Tech, 2.0),
            ("cellReadLatency", ParamKind::Tech, 3.0),
            ("frequency", ParamKind::Arch, 1e9),
        ] {
            h.add_param(ParamSpec::new(
                ParamId::new(n, k, ValueDomain::Real),
                ParamSide::Memory,
                v,
            ));
        }
        h
    }

    #[test]
    fn specialize_and_lookup() {
        let h = toy();
        let tech: Assignment = [("cellReadPower", 2.0), ("cellReadLatency", 3.0)].into_iter().collect();
        let arch: Assignment = [("frequency", 1e9)].into_iter().collect();
        let c = h.specialize(&tech, &arch).unwrap();
        assert_eq!(c.lookup(Unit::Mem(MemUnit::MainMem), Metric::ReadEnergy).unwrap(), 6.0);
        assert_eq!(c.lookup(Unit::Soc, Metric::Frequency).unwrap(), 1e9);
        assert_eq!(
            c.lookup(Unit::Comp(CompUnit::Fpu), Metric::Area),
            Err(HwModelError::MissingMetric(Unit::Comp(CompUnit::Fpu), Metric::Area))
        );
    }

    #[test]
    fn empty_model_specializes_to_empty() {
        let c = HardwareModel::new()
            .specialize(&Assignment::new(), &Assignment::new())
            .unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn specialize_errors() {
        let h = toy();
        let tech: Assignment = [("cellReadPower", 2.0)].into_iter().collect();
        let arch: Assignment = [("frequency", 1e9)].into_iter().collect();
        assert!(matches!(
            h.specialize(&tech, &arch),
            Err(HwModelError::Expr(ExprError::UnboundParameter(p))) if p == "cellReadLatency"
        ));
        let tech: Assignment = [("cellReadPower", 200.0), ("cellReadLatency", 3.0)].into_iter().collect();
        assert!(matches!(h.specialize(&tech, &arch), Err(HwModelError::OutOfBounds { .. })));
    }

    #[test]
    fn default_bounds_span_tenth_to_ten_times() {
        let p = ParamSpec::new(
            ParamId::new("x", ParamKind::Tech, ValueDomain::Real),
            ParamSide::Memory,
            2.0,
        );
        assert!((p.min - 0.2).abs() < 1e-15 && p.max == 20.0);
        let n = ParamSpec::new(
            ParamId::new("n", ParamKind::Arch, ValueDomain::Natural),
            ParamSide::Compute,
            16.0,
        );
        assert_eq!((n.min, n.max), (2.0, 160.0));
        let q = ParamSpec::new(
            ParamId::new("q", ParamKind::Arch, ValueDomain::PowerOfTwo),
            ParamSide::Compute,
            16.0,
        );
        assert_eq!((q.min, q.max), (2.0, 128.0));
    }

    #[test]
    fn model_text_round_trip() {
        let h = toy();
        let back = HardwareModel::from_text(&h.to_text()).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn intpower_is_an_alias() {
        assert_eq!("intPower".parse::<Metric>().unwrap(), Metric::IntEnergy);
        assert_eq!(parse_key("systolicArray.area").unwrap(), (Unit::Comp(CompUnit::SystolicArray), Metric::Area));
    }

    #[test]
    fn report_lines() {
        let h = toy();
        let c = h.specialize_at(&h.seed_assignment()).unwrap();
        let r = c.to_report();
        assert!(r.contains("mainMem.readEnergy = 6 # nJ/byte"), "{r}");
        assert!(r.contains("SoC.frequency = 1e9 # Hz"), "{r}");
    }
}
