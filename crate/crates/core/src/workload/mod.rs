//! Workload data-flow graphs.
//!
//! File format, one record per line, `#` starts a comment line:
//!
//! ```text
//! v <id> comp=<unit>:<ops>,... alloc=<bytes> read=<mem>:<bytes>,... write=<mem>:<bytes>,... [kind=<label>] [loops=x:<n>,y:<n>,c:<n>,k:<n>[,r:<n>]]
//! e <src> <dst> <bytes>
//! ```
//!
//! The four statistics fields are mandatory and appear in that order; a map
//! may be empty (`comp=`). Vertex ids are any whitespace-free token and must be
//! unique. Edges may only name vertices declared earlier in the file.

mod generate;
mod merge;

use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::cmp::Reverse;
use std::fmt::Write as _;

use crate::hwmodel::{CompUnit, MemUnit};

pub use generate::{cnn, dot, generate, mlp, transformer, GeneratorKind};
pub use merge::{compute_merge, default_hvth, split_vertex, split_vertex_in, workload_optimize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkloadError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("workload graph has a cycle through {}", .0.join(", "))]
    CycleDetected(Vec<String>),
    #[error("vertex {0} cannot be split further")]
    Unsplittable(String),
    #[error("invalid workload: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VertexStats {
    pub n_comp: BTreeMap<CompUnit, u64>,
    pub n_alloc: u64,
    pub n_read: BTreeMap<MemUnit, u64>,
    pub n_write: BTreeMap<MemUnit, u64>,
}

fn add_into<K: Ord + Copy>(dst: &mut BTreeMap<K, u64>, src: &BTreeMap<K, u64>) {
    for (k, v) in src {
        *dst.entry(*k).or_insert(0) += v;
    }
}

impl VertexStats {
    pub fn compute_total(&self) -> u64 {
        self.n_comp.values().sum()
    }

    pub fn read_total(&self) -> u64 {
        self.n_read.values().sum()
    }

    pub fn write_total(&self) -> u64 {
        self.n_write.values().sum()
    }

    pub fn comp(&self, u: CompUnit) -> u64 {
        self.n_comp.get(&u).copied().unwrap_or(0)
    }

    pub fn read(&self, m: MemUnit) -> u64 {
        self.n_read.get(&m).copied().unwrap_or(0)
    }

    pub fn write(&self, m: MemUnit) -> u64 {
        self.n_write.get(&m).copied().unwrap_or(0)
    }

    /// True when there is neither compute nor memory traffic.
    pub fn is_idle(&self) -> bool {
        self.compute_total() == 0 && self.read_total() == 0 && self.write_total() == 0
    }

    pub fn accumulate(&mut self, other: &VertexStats) {
        add_into(&mut self.n_comp, &other.n_comp);
        self.n_alloc += other.n_alloc;
        add_into(&mut self.n_read, &other.n_read);
        add_into(&mut self.n_write, &other.n_write);
    }

    /// Largest single statistic.
    pub fn max_stat(&self) -> u64 {
        self.n_comp
            .values()
            .chain(self.n_read.values())
            .chain(self.n_write.values())
            .copied()
            .chain([self.n_alloc])
            .max()
            .unwrap_or(0)
    }

    /// Split every statistic in two; odd values give the extra unit to the first half.
    pub fn halves(&self) -> (VertexStats, VertexStats) {
        fn split<K: Ord + Copy>(m: &BTreeMap<K, u64>) -> (BTreeMap<K, u64>, BTreeMap<K, u64>) {
            let a = m.iter().map(|(k, v)| (*k, v - v / 2)).collect();
            let b = m.iter().map(|(k, v)| (*k, v / 2)).collect();
            (a, b)
        }
        let (ca, cb) = split(&self.n_comp);
        let (ra, rb) = split(&self.n_read);
        let (wa, wb) = split(&self.n_write);
        (
            VertexStats {
                n_comp: ca,
                n_alloc: self.n_alloc - self.n_alloc / 2,
                n_read: ra,
                n_write: wa,
            },
            VertexStats {
                n_comp: cb,
                n_alloc: self.n_alloc / 2,
                n_read: rb,
                n_write: wb,
            },
        )
    }
}

/// Convolution loop extents: output width/height, input channels, output
/// channels and the (square) filter size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLoops {
    pub x: u64,
    pub y: u64,
    pub c: u64,
    pub k: u64,
    pub r: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vertex {
    pub id: String,
    pub kind: String,
    pub stats: VertexStats,
    pub loops: Option<ConvLoops>,
}

impl Vertex {
    pub fn new(id: impl Into<String>, stats: VertexStats) -> Self {
        Vertex {
            id: id.into(),
            kind: "op".into(),
            stats,
            loops: None,
        }
    }

    pub fn with_kind(mut self, kind: impl Into<String>) -> Self {
        self.kind = kind.into();
        self
    }

    pub fn with_loops(mut self, loops: ConvLoops) -> Self {
        self.loops = Some(loops);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub bytes: u64,
}

/// A validated DAG. Edges refer to vertices by index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Workload {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
}

impl Workload {
    pub fn new(vertices: Vec<Vertex>, edges: Vec<Edge>) -> Result<Workload, WorkloadError> {
        let mut seen = HashMap::new();
        for (i, v) in vertices.iter().enumerate() {
            if v.id.is_empty() || v.id.chars().any(char::is_whitespace) {
                return Err(WorkloadError::Invalid(format!("bad vertex id `{}`", v.id)));
            }
            if seen.insert(v.id.as_str(), i).is_some() {
                return Err(WorkloadError::Invalid(format!("duplicate vertex id `{}`", v.id)));
            }
        }
        for e in &edges {
            if e.src >= vertices.len() || e.dst >= vertices.len() {
                return Err(WorkloadError::Invalid("edge endpoint out of range".into()));
            }
        }
        let w = Workload { vertices, edges };
        w.topological_order()?;
        Ok(w)
    }

    /// Build from edges given by vertex id.
    pub fn from_named_edges(
        vertices: Vec<Vertex>,
        edges: &[(&str, &str, u64)],
    ) -> Result<Workload, WorkloadError> {
        let index: HashMap<&str, usize> = vertices.iter().enumerate().map(|(i, v)| (v.id.as_str(), i)).collect();
        let mut out = Vec::with_capacity(edges.len());
        for (s, d, b) in edges {
            let look = |n: &str| {
                index
                    .get(n)
                    .copied()
                    .ok_or_else(|| WorkloadError::Invalid(format!("edge names unknown vertex `{n}`")))
            };
            out.push(Edge {
                src: look(s)?,
                dst: look(d)?,
                bytes: *b,
            });
        }
        Workload::new(vertices, out)
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.vertices.iter().position(|v| v.id == id)
    }

    /// Sum of every vertex's statistics.
    pub fn totals(&self) -> VertexStats {
        let mut t = VertexStats::default();
        for v in &self.vertices {
            t.accumulate(&v.stats);
        }
        t
    }

    /// Topological order with ties broken by ascending vertex id.
    pub fn topological_order(&self) -> Result<Vec<usize>, WorkloadError> {
        let n = self.vertices.len();
        let mut indeg = vec![0usize; n];
        let mut succ = vec![Vec::new(); n];
        for e in &self.edges {
            indeg[e.dst] += 1;
            succ[e.src].push(e.dst);
        }
        let mut ready: BinaryHeap<Reverse<(&str, usize)>> = (0..n)
            .filter(|&i| indeg[i] == 0)
            .map(|i| Reverse((self.vertices[i].id.as_str(), i)))
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse((_, i))) = ready.pop() {
            order.push(i);
            for &j in &succ[i] {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.push(Reverse((self.vertices[j].id.as_str(), j)));
                }
            }
        }
        if order.len() < n {
            let mut stuck: Vec<String> = (0..n)
                .filter(|&i| indeg[i] > 0)
                .map(|i| self.vertices[i].id.clone())
                .collect();
            stuck.sort();
            return Err(WorkloadError::CycleDetected(stuck));
        }
        Ok(order)
    }

    /// Same graph with vertices listed in `order` (a permutation of indices).
    pub fn reordered(&self, order: &[usize]) -> Workload {
        let mut pos = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            pos[old] = new;
        }
        Workload {
            vertices: order.iter().map(|&i| self.vertices[i].clone()).collect(),
            edges: self
                .edges
                .iter()
                .map(|e| Edge {
                    src: pos[e.src],
                    dst: pos[e.dst],
                    bytes: e.bytes,
                })
                .collect(),
        }
    }

    /// Concatenation of two workloads; ids of `other` get `suffix` appended.
    pub fn concat(&self, other: &Workload, suffix: &str) -> Result<Workload, WorkloadError> {
        let off = self.vertices.len();
        let mut vertices = self.vertices.clone();
        vertices.extend(other.vertices.iter().map(|v| Vertex {
            id: format!("{}{suffix}", v.id),
            ..v.clone()
        }));
        let mut edges = self.edges.clone();
        edges.extend(other.edges.iter().map(|e| Edge {
            src: e.src + off,
            dst: e.dst + off,
            bytes: e.bytes,
        }));
        Workload::new(vertices, edges)
    }

    pub fn parse(text: &str) -> Result<Workload, WorkloadError> {
        let mut vertices: Vec<Vertex> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |reason: String| WorkloadError::Parse { line, reason };
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let mut words = content.split_whitespace();
            match words.next() {
                Some("v") => {
                    let id = words.next().ok_or_else(|| err("missing vertex id".into()))?;
                    if index.contains_key(id) {
                        return Err(err(format!("duplicate vertex id `{id}`")));
                    }
                    let mut field = |name: &str| -> Result<&str, WorkloadError> {
                        let w = words
                            .next()
                            .ok_or_else(|| err(format!("missing `{name}=` field")))?;
                        w.strip_prefix(name)
                            .and_then(|r| r.strip_prefix('='))
                            .ok_or_else(|| err(format!("expected `{name}=`, got `{w}`")))
                    };
                    let comp = parse_map(field("comp")?, |s| s.parse::<CompUnit>().ok()).map_err(&err)?;
                    let alloc = parse_count(field("alloc")?).map_err(&err)?;
                    let read = parse_map(field("read")?, |s| s.parse::<MemUnit>().ok()).map_err(&err)?;
                    let write = parse_map(field("write")?, |s| s.parse::<MemUnit>().ok()).map_err(&err)?;
                    let mut v = Vertex::new(
                        id,
                        VertexStats {
                            n_comp: comp,
                            n_alloc: alloc,
                            n_read: read,
                            n_write: write,
                        },
                    );
                    let mut seen_kind = false;
                    for w in words {
                        if let Some(k) = w.strip_prefix("kind=").filter(|_| !seen_kind && v.loops.is_none()) {
                            if k.is_empty() {
                                return Err(err("empty kind".into()));
                            }
                            v.kind = k.to_string();
                            seen_kind = true;
                        } else if let Some(l) = w.strip_prefix("loops=").filter(|_| v.loops.is_none()) {
                            v.loops = Some(parse_loops(l).map_err(&err)?);
                        } else {
                            return Err(err(format!("trailing text `{w}`")));
                        }
                    }
                    if v.stats.is_idle() {
                        return Err(err(format!("vertex `{id}` has no compute and no memory accesses")));
                    }
                    index.insert(id.to_string(), vertices.len());
                    vertices.push(v);
                }
                Some("e") => {
                    let mut endpoint = || -> Result<usize, WorkloadError> {
                        let id = words.next().ok_or_else(|| err("edge needs `src dst bytes`".into()))?;
                        index
                            .get(id)
                            .copied()
                            .ok_or_else(|| err(format!("edge names unknown vertex `{id}`")))
                    };
                    let src = endpoint()?;
                    let dst = endpoint()?;
                    let bytes = parse_count(words.next().ok_or_else(|| err("edge needs a byte count".into()))?)
                        .map_err(&err)?;
                    if let Some(w) = words.next() {
                        return Err(err(format!("trailing text `{w}`")));
                    }
                    edges.push(Edge { src, dst, bytes });
                }
                Some(other) => return Err(err(format!("unknown record `{other}`"))),
                None => unreachable!("blank lines skipped"),
            }
        }
        Workload::new(vertices, edges)
    }

    pub fn to_text(&self) -> String {
        fn map<K: Copy>(m: &BTreeMap<K, u64>, name: impl Fn(K) -> &'static str) -> String {
            m.iter()
                .map(|(k, v)| format!("{}:{v}", name(*k)))
                .collect::<Vec<_>>()
                .join(",")
        }
        let mut out = String::new();
        for v in &self.vertices {
            let s = &v.stats;
            let _ = write!(
                out,
                "v {} comp={} alloc={} read={} write={} kind={}",
                v.id,
                map(&s.n_comp, CompUnit::name),
                s.n_alloc,
                map(&s.n_read, MemUnit::name),
                map(&s.n_write, MemUnit::name),
                v.kind
            );
            if let Some(l) = v.loops {
                let _ = write!(out, " loops=x:{},y:{},c:{},k:{},r:{}", l.x, l.y, l.c, l.k, l.r);
            }
            out.push('\n');
        }
        for e in &self.edges {
            let _ = writeln!(out, "e {} {} {}", self.vertices[e.src].id, self.vertices[e.dst].id, e.bytes);
        }
        out
    }
}

fn parse_count(s: &str) -> Result<u64, String> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("`{s}` is not a nonnegative integer"));
    }
    s.parse().map_err(|_| format!("`{s}` is out of range"))
}

fn parse_map<K: Ord>(s: &str, key: impl Fn(&str) -> Option<K>) -> Result<BTreeMap<K, u64>, String> {
    let mut out = BTreeMap::new();
    if s.is_empty() {
        return Ok(out);
    }
    for item in s.split(',') {
        let (k, v) = item
            .split_once(':')
            .ok_or_else(|| format!("expected `<unit>:<count>`, got `{item}`"))?;
        let unit = key(k).ok_or_else(|| format!("unknown unit `{k}`"))?;
        if out.insert(unit, parse_count(v)?).is_some() {
            return Err(format!("unit `{k}` listed twice"));
        }
    }
    Ok(out)
}

fn parse_loops(s: &str) -> Result<ConvLoops, String> {
    let mut vals: BTreeMap<&str, u64> = BTreeMap::new();
    for item in s.split(',') {
        let (k, v) = item
            .split_once(':')
            .ok_or_else(|| format!("expected `<loop>:<extent>`, got `{item}`"))?;
        if !matches!(k, "x" | "y" | "c" | "k" | "r") {
            return Err(format!("unknown loop `{k}`"));
        }
        let v = parse_count(v)?;
        if v == 0 {
            return Err(format!("loop `{k}` has zero extent"));
        }
        if vals.insert(k, v).is_some() {
            return Err(format!("loop `{k}` listed twice"));
        }
    }
    let get = |k: &str| vals.get(k).copied().ok_or_else(|| format!("loops lack `{k}`"));
    Ok(ConvLoops {
        x: get("x")?,
        y: get("y")?,
        c: get("c")?,
        k: get("k")?,
        r: vals.get("r").copied().unwrap_or(1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_small_file() {
        let w = Workload::parse(
            "v a comp=systolicArray:128 alloc=64 read=globalBuf:64 write=\n\
             v b comp=vector:16 alloc=0 read= write=globalBuf:16\n\
             e a b 16\n",
        )
        .unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w.edges().len(), 1);
        assert_eq!(w.vertices()[0].stats.comp(CompUnit::SystolicArray), 128);
    }

    #[test]
    fn rejects_bad_input() {
        let e = Workload::parse("v a comp=vector:1 alloc=0 read= write=\ne a zz 1\n").unwrap_err();
        assert!(matches!(e, WorkloadError::Parse { line: 2, .. }));
        let e = Workload::parse("v a comp=vector:1 alloc=0 read= write= extra\n").unwrap_err();
        assert!(matches!(e, WorkloadError::Parse { line: 1, .. }));
        let e = Workload::parse("e a b 1 2\n").unwrap_err();
        assert!(matches!(e, WorkloadError::Parse { .. }));
        let e = Workload::parse("v a comp=vector:-1 alloc=0 read= write=\n").unwrap_err();
        assert!(matches!(e, WorkloadError::Parse { .. }));
        let e = Workload::parse("v a comp= alloc=0 read= write=\n").unwrap_err();
        assert!(matches!(e, WorkloadError::Parse { .. }));
    }

    #[test]
    fn detects_cycles() {
        let text = "v a comp=vector:1 alloc=0 read= write=\n\
                    v b comp=vector:1 alloc=0 read= write=\n\
                    e a b 1\ne b a 1\n";
        assert_eq!(
            Workload::parse(text).unwrap_err(),
            WorkloadError::CycleDetected(vec!["a".into(), "b".into()])
        );
    }

    #[test]
    fn conv_annotations_round_trip() {
        let text = "v c0 comp=systolicArray:10 alloc=5 read=mainMem:3 write= kind=conv loops=x:4,y:4,c:2,k:8,r:3\n";
        let w = Workload::parse(text).unwrap();
        assert_eq!(
            w.vertices()[0].loops,
            Some(ConvLoops {
                x: 4,
                y: 4,
                c: 2,
                k: 8,
                r: 3
            })
        );
        assert_eq!(w.to_text(), text);
    }

    #[test]
    fn halving_stats() {
        let mut s = VertexStats::default();
        s.n_read.insert(MemUnit::GlobalBuf, 100);
        let (a, b) = s.halves();
        assert_eq!((a.read(MemUnit::GlobalBuf), b.read(MemUnit::GlobalBuf)), (50, 50));
        s.n_read.insert(MemUnit::GlobalBuf, 101);
        let (a, b) = s.halves();
        assert_eq!((a.read(MemUnit::GlobalBuf), b.read(MemUnit::GlobalBuf)), (51, 50));
    }
}
