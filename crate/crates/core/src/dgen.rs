//! Hardware model generation from an architecture description, a device
//! library and an accelerator template library.
//!
//! Architecture and technology files share one line-oriented format:
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! key = value in min..max      # explicit bounds
//! ```
//!
//! Architecture sections are `soc`, one per memory unit (`localMem`,
//! `globalBuf`, `mainMem`, each with a `type` key) and one per compute unit.
//! Technology sections are the memory types (`sram`, `rram`, `dram`) and
//! `logic` for the compute primitives.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::expr::{Expr, ParamId, ParamKind, ValueDomain};
use crate::hwmodel::{CompUnit, HardwareModel, MemUnit, Metric, ParamSide, ParamSpec, Unit};

pub const BUNDLED_MEMLIB: &str = include_str!("../data/memlib.txt");
pub const BUNDLED_PRIMLIB: &str = include_str!("../data/primlib.txt");
pub const BUNDLED_TEMPLATES: &str = include_str!("../data/templates.txt");
pub const BUNDLED_ARCH: &str = include_str!("../data/arch_default.cfg");
pub const BUNDLED_TECH: &str = include_str!("../data/tech_40nm.cfg");

pub const MEM_TECH_PARAMS: [&str; 8] = [
    "wireCap",
    "wireResist",
    "cellReadLatency",
    "cellAccessDevice",
    "cellReadPower",
    "cellLeakagePower",
    "cellArea",
    "peripheralLogicNode",
];
pub const MEM_ARCH_PARAMS: [&str; 3] = ["capacity", "bankSize", "nReadPorts"];
pub const LOGIC_TECH_PARAMS: [&str; 3] = ["wireCap", "wireResist", "node"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DgenError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("memory library has no {1} model for memory type {0}")]
    UnsupportedMemType(MemType, Metric),
    #[error("template library has no {metric} rule for {}", .unit.name())]
    UnsupportedTemplate { unit: CompUnit, metric: Metric },
}

fn parse_err(line: usize, reason: impl Into<String>) -> DgenError {
    DgenError::Parse {
        line,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MemType {
    Sram,
    Rram,
    Dram,
}

impl MemType {
    pub fn name(self) -> &'static str {
        match self {
            MemType::Sram => "sram",
            MemType::Rram => "rram",
            MemType::Dram => "dram",
        }
    }
}

impl fmt::Display for MemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MemType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sram" => Ok(MemType::Sram),
            "rram" => Ok(MemType::Rram),
            "dram" => Ok(MemType::Dram),
            _ => Err(format!("unknown memory type `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Primitive {
    Adder,
    Ff,
    Mult,
}

impl Primitive {
    pub const ALL: [Primitive; 3] = [Primitive::Adder, Primitive::Ff, Primitive::Mult];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Adder => "adder",
            Primitive::Ff => "ff",
            Primitive::Mult => "mult",
        }
    }
}

/// One `key = value [in min..max]` line.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigEntry {
    pub key: String,
    pub value: String,
    pub bounds: Option<(f64, f64)>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigSection {
    pub name: String,
    pub line: usize,
    pub entries: Vec<ConfigEntry>,
}

impl ConfigSection {
    pub fn get(&self, key: &str) -> Option<&ConfigEntry> {
        self.entries.iter().find(|e| e.key == key)
    }
}

pub fn parse_config(text: &str) -> Result<Vec<ConfigSection>, DgenError> {
    let mut sections: Vec<ConfigSection> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line, "unterminated section header"))?
                .trim();
            if name.is_empty() {
                return Err(parse_err(line, "empty section name"));
            }
            if sections.iter().any(|s| s.name == name) {
                return Err(parse_err(line, format!("duplicate section `{name}`")));
            }
            sections.push(ConfigSection {
                name: name.to_string(),
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, rhs) = content
            .split_once('=')
            .ok_or_else(|| parse_err(line, format!("expected `key = value`, got `{content}`")))?;
        let key = key.trim();
        if !crate::expr::is_name(key) {
            return Err(parse_err(line, format!("bad key `{key}`")));
        }
        let section = sections
            .last_mut()
            .ok_or_else(|| parse_err(line, "entry before any [section]"))?;
        if section.get(key).is_some() {
            return Err(parse_err(line, format!("duplicate key `{key}`")));
        }
        let mut words = rhs.split_whitespace();
        let value = words
            .next()
            .ok_or_else(|| parse_err(line, format!("missing value for `{key}`")))?
            .to_string();
        let bounds = match (words.next(), words.next(), words.next()) {
            (None, _, _) => None,
            (Some("in"), Some(range), None) => {
                let (lo, hi) = range
                    .split_once("..")
                    .ok_or_else(|| parse_err(line, "bounds must be `in min..max`"))?;
                let lo: f64 = lo.parse().map_err(|_| parse_err(line, format!("bad bound `{lo}`")))?;
                let hi: f64 = hi.parse().map_err(|_| parse_err(line, format!("bad bound `{hi}`")))?;
                if lo > hi {
                    return Err(parse_err(line, "min bound exceeds max bound"));
                }
                Some((lo, hi))
            }
            _ => return Err(parse_err(line, format!("trailing text after value of `{key}`"))),
        };
        section.entries.push(ConfigEntry {
            key: key.to_string(),
            value,
            bounds,
            line,
        });
    }
    Ok(sections)
}

fn number(entry: &ConfigEntry) -> Result<f64, DgenError> {
    entry
        .value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(entry.line, format!("`{}` is not a number", entry.value)))
}

/// A scoped parameter value read from a description file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamValue {
    pub value: f64,
    pub bounds: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArchSpec {
    pub mem_type: BTreeMap<MemUnit, MemType>,
    pub comp_units: BTreeSet<CompUnit>,
    /// Keyed by scoped name: `<memUnit>.capacity`, `sysArrX`, `frequency`, ...
    pub arch_params: BTreeMap<String, ParamValue>,
}

fn comp_arch_params(c: CompUnit) -> &'static [&'static str] {
    match c {
        CompUnit::SystolicArray => &["sysArrX", "sysArrY", "sysArrN"],
        CompUnit::Vector => &["vectDataWidth", "vectN"],
        CompUnit::MacTree => &["mTreeX", "mTreeY", "mTreeTileX", "mTreeTileY"],
        CompUnit::Fpu => &["fpuN"],
    }
}

impl ArchSpec {
    pub fn mem_units(&self) -> impl Iterator<Item = MemUnit> + '_ {
        self.mem_type.keys().copied()
    }

    pub fn parse(text: &str) -> Result<ArchSpec, DgenError> {
        let sections = parse_config(text)?;
        let mut spec = ArchSpec::default();
        let mut problems = Vec::new();
        for s in &sections {
            let mut put = |name: String, e: &ConfigEntry| -> Result<(), DgenError> {
                spec.arch_params.insert(
                    name,
                    ParamValue {
                        value: number(e)?,
                        bounds: e.bounds,
                    },
                );
                Ok(())
            };
            if s.name == "soc" {
                for e in &s.entries {
                    if e.key != "frequency" {
                        return Err(parse_err(e.line, format!("unknown soc key `{}`", e.key)));
                    }
                    put("frequency".into(), e)?;
                }
            } else if let Ok(m) = s.name.parse::<MemUnit>() {
                for e in &s.entries {
                    if e.key == "type" {
                        let t = e.value.parse::<MemType>().map_err(|r| parse_err(e.line, r))?;
                        spec.mem_type.insert(m, t);
                    } else if MEM_ARCH_PARAMS.contains(&e.key.as_str()) {
                        put(format!("{}.{}", m.name(), e.key), e)?;
                    } else {
                        return Err(parse_err(e.line, format!("unknown {} key `{}`", m.name(), e.key)));
                    }
                }
                if !spec.mem_type.contains_key(&m) {
                    problems.push(format!("memory unit {} has no type", m.name()));
                    // keep the unit visible for the remaining checks
                }
                for k in MEM_ARCH_PARAMS {
                    if s.get(k).is_none() {
                        problems.push(format!("memory unit {} is missing `{k}`", m.name()));
                    }
                }
            } else if let Ok(c) = s.name.parse::<CompUnit>() {
                spec.comp_units.insert(c);
                let allowed = comp_arch_params(c);
                for e in &s.entries {
                    if !allowed.contains(&e.key.as_str()) {
                        return Err(parse_err(e.line, format!("unknown {} key `{}`", c.name(), e.key)));
                    }
                    put(e.key.clone(), e)?;
                }
                for k in allowed {
                    if s.get(k).is_none() {
                        problems.push(format!("compute unit {} is missing `{k}`", c.name()));
                    }
                }
            } else {
                return Err(parse_err(s.line, format!("unknown section `{}`", s.name)));
            }
        }
        if !spec.arch_params.contains_key("frequency") {
            problems.push("missing [soc] frequency".into());
        }
        if spec.mem_type.is_empty() && !sections.iter().any(|s| s.name.parse::<MemUnit>().is_ok()) {
            problems.push("no memory unit".into());
        }
        if spec.comp_units.is_empty() {
            problems.push("no compute unit".into());
        }
        if problems.is_empty() {
            Ok(spec)
        } else {
            Err(DgenError::Validation(problems))
        }
    }
}

/// Technology values: `<memType>.<name>` and `logic.<name>`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TechSpec {
    pub params: BTreeMap<String, ParamValue>,
}

impl TechSpec {
    pub fn parse(text: &str) -> Result<TechSpec, DgenError> {
        let mut spec = TechSpec::default();
        for s in parse_config(text)? {
            let allowed: &[&str] = if s.name == "logic" {
                &LOGIC_TECH_PARAMS
            } else if s.name.parse::<MemType>().is_ok() {
                &MEM_TECH_PARAMS
            } else {
                return Err(parse_err(s.line, format!("unknown technology section `{}`", s.name)));
            };
            for e in &s.entries {
                if !allowed.contains(&e.key.as_str()) {
                    return Err(parse_err(e.line, format!("unknown {} key `{}`", s.name, e.key)));
                }
                spec.params.insert(
                    format!("{}.{}", s.name, e.key),
                    ParamValue {
                        value: number(e)?,
                        bounds: e.bounds,
                    },
                );
            }
        }
        Ok(spec)
    }
}

fn parse_library<K: Ord>(
    text: &str,
    key: impl Fn(&str, &str) -> Option<K>,
) -> Result<BTreeMap<K, Expr>, DgenError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let (lhs, rhs) = content
            .split_once('=')
            .ok_or_else(|| parse_err(line, "expected `<name>.<metric> = <expr>`"))?;
        let (a, b) = lhs
            .trim()
            .split_once('.')
            .ok_or_else(|| parse_err(line, "expected `<name>.<metric>`"))?;
        let k = key(a, b).ok_or_else(|| parse_err(line, format!("unknown entry `{}`", lhs.trim())))?;
        let e: Expr = rhs
            .trim()
            .parse()
            .map_err(|e: crate::expr::ParseExprError| parse_err(line, e.to_string()))?;
        out.insert(k, e);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceMemLib {
    pub entries: BTreeMap<(MemType, Metric), Expr>,
}

impl DeviceMemLib {
    pub fn parse(text: &str) -> Result<Self, DgenError> {
        let entries = parse_library(text, |t, m| {
            let m: Metric = m.parse().ok()?;
            Metric::MEMORY.contains(&m).then_some(())?;
            Some((t.parse::<MemType>().ok()?, m))
        })?;
        Ok(DeviceMemLib { entries })
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_MEMLIB).expect("bundled memory library parses")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DevicePrimLib {
    pub entries: BTreeMap<(Primitive, Metric), Expr>,
}

impl DevicePrimLib {
    pub fn parse(text: &str) -> Result<Self, DgenError> {
        let entries = parse_library(text, |p, m| {
            let p = Primitive::ALL.into_iter().find(|x| x.name() == p)?;
            let m: Metric = m.parse().ok()?;
            PRIM_METRICS.contains(&m).then_some((p, m))
        })?;
        let missing: Vec<String> = Primitive::ALL
            .iter()
            .flat_map(|p| PRIM_METRICS.iter().map(move |m| (*p, *m)))
            .filter(|k| !entries.contains_key(k))
            .map(|(p, m)| format!("primitive library lacks {}.{}", p.name(), m))
            .collect();
        if !missing.is_empty() {
            return Err(DgenError::Validation(missing));
        }
        Ok(DevicePrimLib { entries })
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_PRIMLIB).expect("bundled primitive library parses")
    }
}

const PRIM_METRICS: [Metric; 4] = [Metric::Latency, Metric::IntEnergy, Metric::LeakagePower, Metric::Area];

#[derive(Debug, Clone, PartialEq)]
pub struct AccelTemplateLib {
    pub rules: BTreeMap<(CompUnit, Metric), Expr>,
}

impl AccelTemplateLib {
    pub fn parse(text: &str) -> Result<Self, DgenError> {
        let rules = parse_library(text, |c, m| {
            let m: Metric = m.parse().ok()?;
            Metric::COMPUTE.contains(&m).then_some(())?;
            Some((c.parse::<CompUnit>().ok()?, m))
        })?;
        Ok(AccelTemplateLib { rules })
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_TEMPLATES).expect("bundled template library parses")
    }
}

/// The three libraries used by [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Libraries {
    pub mem: DeviceMemLib,
    pub prims: DevicePrimLib,
    pub templates: AccelTemplateLib,
}

impl Libraries {
    pub fn bundled() -> Self {
        Libraries {
            mem: DeviceMemLib::bundled(),
            prims: DevicePrimLib::bundled(),
            templates: AccelTemplateLib::bundled(),
        }
    }
}

/// `H(m, q) := memlib(type(m), q)` with parameters scoped to the type and unit.
pub fn derive_memory_model(
    spec: &ArchSpec,
    lib: &DeviceMemLib,
    m: MemUnit,
    q: Metric,
) -> Result<Expr, DgenError> {
    let t = *spec
        .mem_type
        .get(&m)
        .ok_or_else(|| DgenError::Validation(vec![format!("{} is not in the architecture", m.name())]))?;
    let e = lib
        .entries
        .get(&(t, q))
        .ok_or(DgenError::UnsupportedMemType(t, q))?;
    Ok(e.rename(&|name| {
        if MEM_TECH_PARAMS.contains(&name) {
            format!("{}.{}", t.name(), name)
        } else if MEM_ARCH_PARAMS.contains(&name) {
            format!("{}.{}", m.name(), name)
        } else {
            name.to_string()
        }
    }))
}

/// `H(c, q) := templates(prims, c, q)`.
pub fn derive_compute_model(
    spec: &ArchSpec,
    prims: &DevicePrimLib,
    templ: &AccelTemplateLib,
    c: CompUnit,
    q: Metric,
) -> Result<Expr, DgenError> {
    if !spec.comp_units.contains(&c) {
        return Err(DgenError::Validation(vec![format!("{} is not in the architecture", c.name())]));
    }
    let rule = templ
        .rules
        .get(&(c, q))
        .ok_or(DgenError::UnsupportedTemplate { unit: c, metric: q })?;
    let logic = |name: &str| format!("logic.{name}");
    Ok(rule.replace(&|name| {
        let (p, m) = name.split_once('.')?;
        let p = Primitive::ALL.into_iter().find(|x| x.name() == p)?;
        let m: Metric = m.parse().ok()?;
        prims.entries.get(&(p, m)).map(|e| e.rename(&logic))
    }))
}

fn domain_of(name: &str) -> ValueDomain {
    let local = name.rsplit('.').next().unwrap_or(name);
    match local {
        "wireCap" | "wireResist" | "cellReadLatency" | "cellAccessDevice" | "cellReadPower"
        | "cellLeakagePower" | "cellArea" => ValueDomain::Real,
        _ => ValueDomain::Natural,
    }
}

fn side_of(name: &str) -> ParamSide {
    let scope = name.split('.').next().unwrap_or("");
    let is_mem = scope.parse::<MemType>().is_ok() || scope.parse::<MemUnit>().is_ok();
    if is_mem && name.contains('.') {
        ParamSide::Memory
    } else {
        ParamSide::Compute
    }
}

fn spec_for(name: &str, kind: ParamKind, v: &ParamValue) -> ParamSpec {
    let s = ParamSpec::new(ParamId::new(name, kind, domain_of(name)), side_of(name), v.value);
    match v.bounds {
        Some((lo, hi)) => s.with_bounds(lo, hi),
        None => s,
    }
}

pub fn generate_from_specs(
    arch: &ArchSpec,
    tech: &TechSpec,
    libs: &Libraries,
) -> Result<HardwareModel, DgenError> {
    let mut h = HardwareModel::new();
    for m in arch.mem_units() {
        for q in Metric::MEMORY {
            h.insert(Unit::Mem(m), q, derive_memory_model(arch, &libs.mem, m, q)?);
        }
    }
    for &c in &arch.comp_units {
        for q in Metric::COMPUTE {
            h.insert(
                Unit::Comp(c),
                q,
                derive_compute_model(arch, &libs.prims, &libs.templates, c, q)?,
            );
        }
    }
    h.insert(Unit::Soc, Metric::Frequency, Expr::p("frequency"));

    let mut problems = Vec::new();
    for (name, v) in &arch.arch_params {
        h.add_param(spec_for(name, ParamKind::Arch, v));
    }
    let used_types: BTreeSet<MemType> = arch.mem_type.values().copied().collect();
    for (name, v) in &tech.params {
        let scope = name.split('.').next().unwrap_or("");
        let relevant = scope == "logic" || scope.parse::<MemType>().is_ok_and(|t| used_types.contains(&t));
        if relevant {
            h.add_param(spec_for(name, ParamKind::Tech, v));
        }
    }
    for t in &used_types {
        for p in MEM_TECH_PARAMS {
            if !tech.params.contains_key(&format!("{}.{p}", t.name())) {
                problems.push(format!("technology file lacks [{}] {p}", t.name()));
            }
        }
    }
    for p in LOGIC_TECH_PARAMS {
        if !tech.params.contains_key(&format!("logic.{p}")) {
            problems.push(format!("technology file lacks [logic] {p}"));
        }
    }
    for p in h.undeclared_params() {
        problems.push(format!("parameter `{p}` is used but never given a value"));
    }
    if problems.is_empty() {
        Ok(h)
    } else {
        Err(DgenError::Validation(problems))
    }
}

/// Parse both description files and derive the hardware model with `libs`.
pub fn generate_with(arch_text: &str, tech_text: &str, libs: &Libraries) -> Result<HardwareModel, DgenError> {
    let arch = ArchSpec::parse(arch_text)?;
    let tech = TechSpec::parse(tech_text)?;
    generate_from_specs(&arch, &tech, libs)
}

pub fn generate(arch_text: &str, tech_text: &str) -> Result<HardwareModel, DgenError> {
    generate_with(arch_text, tech_text, &Libraries::bundled())
}

/// The model built from the bundled architecture and 40nm-style technology files.
pub fn bundled_model() -> HardwareModel {
    generate(BUNDLED_ARCH, BUNDLED_TECH).expect("bundled description files generate")
}
