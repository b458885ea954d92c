//! Forward pass: fold an ordered workload over a concrete hardware model,
//! tracking memory and compute state and producing one execution record per
//! executed vertex (or vertex piece, when streaming splits it).
//!
//! Per-vertex time, all in cycles:
//!
//! * `t_c = Σ_u ⌈ops_u / throughput_u⌉` over the compute units it uses,
//! * `t_mem[m] = ⌈(read_m + write_m) / bandwidth_m⌉`,
//! * `t_stream = ⌈alloc / bandwidth⌉` of the streaming level, for split pieces only,
//! * `t_exec = max(t_c, max_m t_mem[m]) + t_stream` (or the sum of the terms
//!   with `overlap` off), and `t_min` the minimum of the same terms.
//!
//! A prefetched vertex hides up to the previous vertex's compute time of its
//! memory phase; the hidden cycles are its `credit` and are not counted.

mod tiling;

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use crate::hwmodel::{CompUnit, ConcreteHardwareModel, MemUnit, Metric, Unit};
use crate::report::{csv_line, fmt_sig};
use crate::workload::{default_hvth, split_vertex, workload_optimize, Vertex, Workload};

pub use tiling::{tiling_energy, tiling_levels, tiling_search, Tiling, TilingLevel, TilingLevels};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MapError {
    #[error("vertex {vertex} uses {unit}, which the hardware model does not have")]
    MissingUnit { vertex: String, unit: String },
    #[error("vertex {0} does not fit in memory even after maximal splitting")]
    InfeasibleVertex(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapConfig {
    /// Overlap compute with memory (`max`) instead of adding them.
    pub overlap: bool,
    pub prefetch: bool,
    /// Compute-merge threshold in ops; `None` picks [`default_hvth`].
    pub hvth: Option<u64>,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            overlap: true,
            prefetch: true,
            hvth: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MemoryState {
    pub capacity_used: u64,
    pub bw_used: f64,
    pub n_reads: u64,
    pub n_writes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ComputeState {
    pub n_ops: u64,
    pub rows_active: u64,
    pub cols_active: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecRecord {
    pub vertex: String,
    pub ops: BTreeMap<CompUnit, u64>,
    /// Read plus written bytes per memory level.
    pub bytes: BTreeMap<MemUnit, u64>,
    pub t_comp: BTreeMap<CompUnit, f64>,
    pub t_c: f64,
    pub t_mem: BTreeMap<MemUnit, f64>,
    pub stream_bytes: u64,
    pub stream_level: Option<MemUnit>,
    pub t_stream: f64,
    pub t_exec: f64,
    pub t_min: f64,
    pub prefetched: bool,
    /// Compute time of the vertex that ran before this prefetched one.
    pub prev_t_c: f64,
    pub credit: f64,
    /// Bytes resident at the allocation level while this vertex ran.
    pub alloc_used: u64,
}

impl ExecRecord {
    pub fn t_mem_max(&self) -> f64 {
        self.t_mem.values().copied().fold(0.0, f64::max)
    }

    /// Cycles this record adds to the total.
    pub fn contribution(&self) -> f64 {
        self.t_exec - self.credit
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MapResult {
    pub total_cycles: f64,
    pub memory: BTreeMap<MemUnit, MemoryState>,
    pub compute: BTreeMap<CompUnit, ComputeState>,
    pub records: Vec<ExecRecord>,
    pub overlap: bool,
}

impl MapResult {
    pub fn cycles(&self) -> u64 {
        self.total_cycles.round() as u64
    }

    /// Per-record CSV trace.
    pub fn trace_csv(&self) -> String {
        let mems: Vec<MemUnit> = self.memory.keys().copied().collect();
        let mut header = vec!["vertex".to_string(), "t_c".into()];
        header.extend(mems.iter().map(|m| format!("t_mem_{}", m.name())));
        header.extend(["t_stream", "t_exec", "t_min", "credit", "prefetched"].map(String::from));
        let mut out = csv_line(header);
        for r in &self.records {
            let mut row = vec![r.vertex.clone(), fmt_sig(r.t_c)];
            row.extend(mems.iter().map(|m| fmt_sig(r.t_mem.get(m).copied().unwrap_or(0.0))));
            row.extend([
                fmt_sig(r.t_stream),
                fmt_sig(r.t_exec),
                fmt_sig(r.t_min),
                fmt_sig(r.credit),
                r.prefetched.to_string(),
            ]);
            out.push_str(&csv_line(row));
        }
        out
    }
}

/// The hardware numbers the mapper consults.
#[derive(Debug, Clone, PartialEq)]
pub struct Machine {
    pub throughput: BTreeMap<CompUnit, f64>,
    pub bandwidth: BTreeMap<MemUnit, f64>,
    pub capacity: BTreeMap<MemUnit, f64>,
    pub systolic_dims: Option<(u64, u64)>,
}

impl Machine {
    pub fn from_concrete(c: &ConcreteHardwareModel) -> Machine {
        let mut m = Machine {
            throughput: BTreeMap::new(),
            bandwidth: BTreeMap::new(),
            capacity: BTreeMap::new(),
            systolic_dims: None,
        };
        for u in c.comp_units() {
            if let Some(t) = c.get(Unit::Comp(u), Metric::Throughput) {
                m.throughput.insert(u, t);
            }
        }
        for u in c.mem_units() {
            if let (Some(b), Some(cap)) = (c.get(Unit::Mem(u), Metric::Bandwidth), c.get(Unit::Mem(u), Metric::Capacity)) {
                m.bandwidth.insert(u, b);
                m.capacity.insert(u, cap);
            }
        }
        let a = c.assignment();
        if let (Some(x), Some(y)) = (a.get("sysArrX"), a.get("sysArrY")) {
            m.systolic_dims = Some((x.round().max(1.0) as u64, y.round().max(1.0) as u64));
        }
        m
    }

    /// Level that holds vertex allocations: the first present of global
    /// buffer, local memory, main memory.
    pub fn alloc_level(&self) -> Option<MemUnit> {
        [MemUnit::GlobalBuf, MemUnit::LocalMem, MemUnit::MainMem]
            .into_iter()
            .find(|m| self.capacity.contains_key(m))
    }

    /// Level split pieces are swapped through: main memory when present.
    pub fn stream_level(&self) -> Option<MemUnit> {
        if self.bandwidth.contains_key(&MemUnit::MainMem) {
            Some(MemUnit::MainMem)
        } else {
            self.alloc_level()
        }
    }

    pub fn capacity_bytes(&self, m: MemUnit) -> u64 {
        self.capacity.get(&m).map_or(0, |c| c.floor().max(0.0) as u64)
    }

    /// `capacityUsed + n ≤ capacity` at level `m`.
    pub fn has_space(&self, m: MemUnit, used: u64, n: u64) -> bool {
        used.saturating_add(n) <= self.capacity_bytes(m)
    }
}

/// `⌈n / rate⌉`; zero work takes zero cycles.
pub fn cycles_for(n: u64, rate: f64) -> f64 {
    if n == 0 {
        0.0
    } else {
        (n as f64 / rate).ceil()
    }
}

/// Execution time of one record from its terms.
pub fn exec_time(t_c: f64, t_mem: f64, t_stream: f64, overlap: bool) -> f64 {
    if overlap {
        t_c.max(t_mem) + t_stream
    } else {
        t_c + t_mem + t_stream
    }
}

/// Cycles saved by hiding up to `prev_t_c` cycles of a prefetched vertex's memory phase.
pub fn prefetch_credit(t_c: f64, t_mem: f64, t_stream: f64, prev_t_c: f64, overlap: bool) -> f64 {
    let hidden = t_mem.min(prev_t_c);
    if overlap {
        exec_time(t_c, t_mem, t_stream, true) - exec_time(t_c, t_mem - hidden, t_stream, true)
    } else {
        hidden
    }
}

struct Run<'a> {
    machine: &'a Machine,
    cfg: MapConfig,
    mem: BTreeMap<MemUnit, MemoryState>,
    comp: BTreeMap<CompUnit, ComputeState>,
    /// Allocations of completed pieces at the allocation level, oldest first.
    resident: VecDeque<u64>,
    live: u64,
    records: Vec<ExecRecord>,
    cycles: f64,
    pending_prefetch: Option<f64>,
}

impl Run<'_> {
    fn check_units(&self, v: &Vertex) -> Result<(), MapError> {
        let missing = |unit: &str| MapError::MissingUnit {
            vertex: v.id.clone(),
            unit: unit.to_string(),
        };
        for (u, &n) in &v.stats.n_comp {
            if n > 0 && !self.machine.throughput.contains_key(u) {
                return Err(missing(u.name()));
            }
        }
        for (m, &n) in v.stats.n_read.iter().chain(&v.stats.n_write) {
            if n > 0 && !self.machine.bandwidth.contains_key(m) {
                return Err(missing(m.name()));
            }
        }
        Ok(())
    }

    fn map_vertex(&mut self, v: &Vertex, streamed: bool) -> Result<(), MapError> {
        let n = v.stats.n_alloc;
        if let Some(level) = self.machine.alloc_level() {
            let state = self.mem.get_mut(&level).expect("state for every level");
            while !self.machine.has_space(level, state.capacity_used, n) {
                match self.resident.pop_front() {
                    Some(bytes) => state.capacity_used -= bytes,
                    None => break,
                }
            }
            if !self.machine.has_space(level, state.capacity_used, n) {
                let (a, b) = split_vertex(v).map_err(|_| MapError::InfeasibleVertex(v.id.clone()))?;
                self.map_vertex(&a, true)?;
                return self.map_vertex(&b, true);
            }
            state.capacity_used += n;
            assert!(state.capacity_used <= self.machine.capacity_bytes(level));
            self.live = n;
        }
        self.execute(v, streamed);
        if self.machine.alloc_level().is_some() {
            self.resident.push_back(n);
        }
        Ok(())
    }

    fn execute(&mut self, v: &Vertex, streamed: bool) {
        let s = &v.stats;
        let mut t_comp = BTreeMap::new();
        for (&u, &ops) in s.n_comp.iter().filter(|(_, n)| **n > 0) {
            t_comp.insert(u, cycles_for(ops, self.machine.throughput[&u]));
            let cs = self.comp.get_mut(&u).expect("state for every unit");
            cs.n_ops += ops;
            let (rows, cols) = match (u, self.machine.systolic_dims) {
                (CompUnit::SystolicArray, Some((x, y))) => {
                    let rows = x.min(ops.div_ceil(y));
                    (rows, y.min(ops.div_ceil(rows.max(1))))
                }
                _ => ((self.machine.throughput[&u].round() as u64).min(ops), 0),
            };
            cs.rows_active = rows;
            cs.cols_active = cols;
        }
        let t_c: f64 = t_comp.values().sum();

        let mut bytes = BTreeMap::new();
        let mut t_mem = BTreeMap::new();
        for m in self.machine.bandwidth.keys().copied() {
            let (r, w) = (s.read(m), s.write(m));
            if r + w == 0 {
                continue;
            }
            let st = self.mem.get_mut(&m).expect("state for every level");
            st.n_reads += r;
            st.n_writes += w;
            bytes.insert(m, r + w);
            t_mem.insert(m, cycles_for(r + w, self.machine.bandwidth[&m]));
        }

        let stream_level = if streamed { self.machine.stream_level() } else { None };
        let stream_bytes = if stream_level.is_some() { s.n_alloc } else { 0 };
        let t_stream = stream_level.map_or(0.0, |l| cycles_for(stream_bytes, self.machine.bandwidth[&l]));

        let t_mem_max = t_mem.values().copied().fold(0.0, f64::max);
        let t_exec = exec_time(t_c, t_mem_max, t_stream, self.cfg.overlap);
        let mut terms: Vec<f64> = t_mem.values().copied().collect();
        if !t_comp.is_empty() {
            terms.push(t_c);
        }
        let t_min = terms.into_iter().reduce(f64::min).unwrap_or(0.0);

        let (prefetched, prev_t_c, credit) = match self.pending_prefetch.take() {
            Some(prev) => (true, prev, prefetch_credit(t_c, t_mem_max, t_stream, prev, self.cfg.overlap)),
            None => (false, 0.0, 0.0),
        };

        for (m, st) in self.mem.iter_mut() {
            st.bw_used = match bytes.get(m) {
                Some(&b) if t_exec > 0.0 => b as f64 / t_exec,
                _ => 0.0,
            };
        }
        let rec = ExecRecord {
            vertex: v.id.clone(),
            ops: s.n_comp.iter().filter(|(_, n)| **n > 0).map(|(k, n)| (*k, *n)).collect(),
            bytes,
            t_comp,
            t_c,
            t_mem,
            stream_bytes,
            stream_level,
            t_stream,
            t_exec,
            t_min,
            prefetched,
            prev_t_c,
            credit,
            alloc_used: self.machine.alloc_level().map_or(0, |l| self.mem[&l].capacity_used),
        };
        self.cycles += rec.contribution();
        self.records.push(rec);
    }

    /// Decide, after a vertex finished, whether its successor is prefetched.
    fn consider_prefetch(&mut self, next: &Vertex) {
        if !self.cfg.prefetch {
            return;
        }
        let Some(cur) = self.records.last() else { return };
        if let Some(l) = self.machine.stream_level() {
            if self.mem[&l].bw_used > 0.9 * self.machine.bandwidth[&l] {
                return;
            }
        }
        if let Some(l) = self.machine.alloc_level() {
            let cap = self.machine.capacity_bytes(l);
            if self.live as f64 > 0.9 * cap as f64 {
                // streamed instead of prefetched; no timing effect
                return;
            }
            if !self.machine.has_space(l, self.live, next.stats.n_alloc) {
                return;
            }
        }
        self.pending_prefetch = Some(cur.t_c);
    }
}

/// Map `w` onto `c`.
pub fn map_workload(w: &Workload, c: &ConcreteHardwareModel, cfg: &MapConfig) -> Result<MapResult, MapError> {
    map_on_machine(w, &Machine::from_concrete(c), cfg.hvth.unwrap_or_else(|| default_hvth(c)), cfg)
}

pub fn map_on_machine(w: &Workload, machine: &Machine, hvth: u64, cfg: &MapConfig) -> Result<MapResult, MapError> {
    let ordered = workload_optimize(w, hvth);
    let mut run = Run {
        machine,
        cfg: *cfg,
        mem: machine.capacity.keys().map(|m| (*m, MemoryState::default())).collect(),
        comp: machine.throughput.keys().map(|u| (*u, ComputeState::default())).collect(),
        resident: VecDeque::new(),
        live: 0,
        records: Vec::new(),
        cycles: 0.0,
        pending_prefetch: None,
    };
    let vs = ordered.vertices();
    for (i, v) in vs.iter().enumerate() {
        run.check_units(v)?;
        run.map_vertex(v, false)?;
        if let Some(next) = vs.get(i + 1) {
            run.consider_prefetch(next);
        }
    }
    Ok(MapResult {
        total_cycles: run.cycles,
        memory: run.mem,
        compute: run.comp,
        records: run.records,
        overlap: cfg.overlap,
    })
}

/// Human-readable summary of the final states.
pub fn state_report(r: &MapResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "cycles = {}", fmt_sig(r.total_cycles));
    for (m, s) in &r.memory {
        let _ = writeln!(
            out,
            "{}: capacityUsed={} bwUsed={} nReads={} nWrites={}",
            m.name(),
            s.capacity_used,
            fmt_sig(s.bw_used),
            s.n_reads,
            s.n_writes
        );
    }
    for (u, s) in &r.compute {
        let _ = writeln!(
            out,
            "{}: nOps={} rowsActive={} colsActive={}",
            u.name(),
            s.n_ops,
            s.rows_active,
            s.cols_active
        );
    }
    out
}
