#![allow(dead_code)]

use gradsim::expr::{Assignment, Expr};
use gradsim::hwmodel::{CompUnit, ConcreteHardwareModel, MemUnit, Metric, Unit};
use gradsim::mapper::MapConfig;
use gradsim::workload::{Edge, Vertex, VertexStats, Workload};
use rand::seq::SliceRandom;
use rand::Rng;

pub const VARS: [&str; 3] = ["x", "y", "z"];

/// Random expression over [`VARS`], well-defined for positive inputs.
/// `ceil` nodes appear only when `with_ceil` is set.
pub fn random_expr(rng: &mut impl Rng, depth: u32, with_ceil: bool) -> Expr {
    if depth == 0 || rng.gen_bool(0.2) {
        return if rng.gen_bool(0.7) {
            Expr::p(*VARS.choose(rng).unwrap())
        } else {
            Expr::c(rng.gen_range(0.5..3.0))
        };
    }
    let sub = |rng: &mut _| random_expr(rng, depth - 1, with_ceil);
    let ops = if with_ceil { 9 } else { 8 };
    match rng.gen_range(0..ops) {
        0 => Expr::add(sub(rng), sub(rng)),
        1 => Expr::sub(sub(rng), sub(rng)),
        2 | 3 => Expr::mul(sub(rng), sub(rng)),
        4 => {
            let d = sub(rng);
            Expr::div(sub(rng), Expr::add(Expr::mul(d.clone(), d), Expr::c(0.5)))
        }
        5 => Expr::max(sub(rng), sub(rng)),
        6 => Expr::min(sub(rng), sub(rng)),
        7 => Expr::exp(Expr::mul(Expr::c(0.1), Expr::min(sub(rng), Expr::c(5.0)))),
        _ => Expr::mul(Expr::ceil(Expr::mul(sub(rng), Expr::c(4.0))), Expr::c(0.25)),
    }
}

pub fn random_point(rng: &mut impl Rng) -> Assignment {
    VARS.iter().map(|v| (*v, rng.gen_range(0.5..2.0))).collect()
}

pub fn central_difference(e: &Expr, at: &Assignment, param: &str, h: f64) -> f64 {
    let v = at.get(param).unwrap();
    let mut hi = at.clone();
    hi.insert(param, v + h);
    let mut lo = at.clone();
    lo.insert(param, v - h);
    (e.eval(&hi).unwrap() - e.eval(&lo).unwrap()) / (2.0 * h)
}

/// Central difference at step `h_rel·|p|`, or `None` when it disagrees with
/// the half-step estimate, which means a kink lies inside the stencil.
pub fn smooth_difference(e: &Expr, at: &Assignment, param: &str, h_rel: f64) -> Option<f64> {
    let v = at.get(param).unwrap();
    let h = h_rel * v.abs().max(1e-300);
    let a = central_difference(e, at, param, h);
    let b = central_difference(e, at, param, h / 2.0);
    let scale = a.abs().max(b.abs()).max(1e-3);
    ((a - b).abs() <= 1e-7 * scale).then_some(b)
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / got.abs().max(want.abs()).max(1e-3)
}

/// Three chained vertices on a vector unit with a global buffer and DRAM.
/// All metric values are dyadic, so every sum is exact.
pub fn three_vertex_workload() -> Workload {
    Workload::parse(
        "v a comp=vector:20 alloc=100 read=mainMem:16 write=globalBuf:30\n\
         v b comp=vector:7 alloc=200 read=globalBuf:30 write=globalBuf:25\n\
         v c comp=vector:9 alloc=50 read=globalBuf:25 write=mainMem:10\n\
         e a b 30\n\
         e b c 25\n",
    )
    .unwrap()
}

pub fn three_vertex_machine() -> ConcreteHardwareModel {
    let g = Unit::Mem(MemUnit::GlobalBuf);
    let m = Unit::Mem(MemUnit::MainMem);
    let v = Unit::Comp(CompUnit::Vector);
    ConcreteHardwareModel::from_values([
        ((Unit::Soc, Metric::Frequency), 8e6),
        ((g, Metric::Capacity), 1000.0),
        ((g, Metric::Bandwidth), 10.0),
        ((g, Metric::ReadEnergy), 0.5),
        ((g, Metric::WriteEnergy), 0.25),
        ((g, Metric::LeakagePower), 0.5),
        ((g, Metric::Area), 2.0),
        ((m, Metric::Capacity), 1e6),
        ((m, Metric::Bandwidth), 4.0),
        ((m, Metric::ReadEnergy), 2.0),
        ((m, Metric::WriteEnergy), 3.0),
        ((m, Metric::LeakagePower), 1.5),
        ((m, Metric::Area), 5.0),
        ((v, Metric::Throughput), 2.0),
        ((v, Metric::IntEnergy), 0.125),
        ((v, Metric::LeakagePower), 2.0),
        ((v, Metric::Area), 1.5),
    ])
}

pub fn three_vertex_config() -> MapConfig {
    MapConfig {
        overlap: true,
        prefetch: false,
        hvth: Some(0),
    }
}

/// Hand calculation for the fixture above.
///
/// Per vertex `max(t_c, t_mem)`: a = max(⌈20/2⌉, ⌈16/4⌉, ⌈30/10⌉) = 10,
/// b = max(⌈7/2⌉, ⌈55/10⌉) = 6, c = max(⌈9/2⌉, ⌈25/10⌉, ⌈10/4⌉) = 5, so
/// 21 cycles and 21 / 8 MHz = 2.625 µs.
///
/// Dynamic: DRAM 16·2 + 10·3 = 62, buffer 55·0.5 + 55·0.25 = 41.25,
/// vector 36·0.125 = 4.5. Leakage: (1.5 + 0.5 + 2)·2.625 = 10.5.
pub struct HandCalc;

impl HandCalc {
    pub const CYCLES: f64 = 21.0;
    pub const RUNTIME: f64 = 2.625e-6;
    pub const ENERGY: f64 = 118.25;
    pub const AREA: f64 = 8.5;

    pub fn power() -> f64 {
        Self::ENERGY * 1e-9 / Self::RUNTIME
    }
}

/// Random DAG with edges only from lower to higher index.
pub fn random_dag(rng: &mut impl Rng, max_vertices: usize) -> Workload {
    let n = rng.gen_range(1..=max_vertices);
    let mut vertices = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = VertexStats::default();
        for u in [CompUnit::SystolicArray, CompUnit::Vector] {
            if rng.gen_bool(0.6) {
                s.n_comp.insert(u, rng.gen_range(1..5000));
            }
        }
        s.n_alloc = rng.gen_range(0..40_000);
        for m in [MemUnit::GlobalBuf, MemUnit::MainMem] {
            if rng.gen_bool(0.6) {
                s.n_read.insert(m, rng.gen_range(1..20_000));
            }
            if rng.gen_bool(0.4) {
                s.n_write.insert(m, rng.gen_range(1..20_000));
            }
        }
        if s.is_idle() {
            s.n_comp.insert(CompUnit::Vector, 1);
        }
        vertices.push(Vertex::new(format!("v{i:02}"), s));
    }
    let mut edges = Vec::new();
    for dst in 1..n {
        for src in 0..dst {
            if rng.gen_bool(2.0 / n as f64) {
                edges.push(Edge {
                    src,
                    dst,
                    bytes: rng.gen_range(0..1000),
                });
            }
        }
    }
    Workload::new(vertices, edges).unwrap()
}

/// A small machine whose global buffer forces streaming splits on
/// [`random_dag`] vertices.
pub fn small_machine() -> ConcreteHardwareModel {
    let g = Unit::Mem(MemUnit::GlobalBuf);
    let m = Unit::Mem(MemUnit::MainMem);
    let mut values = vec![
        ((Unit::Soc, Metric::Frequency), 1e9),
        ((g, Metric::Capacity), 16_384.0),
        ((g, Metric::Bandwidth), 64.0),
        ((m, Metric::Capacity), 1e9),
        ((m, Metric::Bandwidth), 16.0),
    ];
    for u in [g, m] {
        values.extend([
            ((u, Metric::ReadEnergy), 1.0),
            ((u, Metric::WriteEnergy), 1.0),
            ((u, Metric::LeakagePower), 1.0),
            ((u, Metric::Area), 1.0),
        ]);
    }
    for c in [CompUnit::SystolicArray, CompUnit::Vector] {
        let u = Unit::Comp(c);
        values.extend([
            ((u, Metric::Throughput), 64.0),
            ((u, Metric::IntEnergy), 1.0),
            ((u, Metric::LeakagePower), 1.0),
            ((u, Metric::Area), 1.0),
        ]);
    }
    ConcreteHardwareModel::from_values(values)
}

/// Checks `∂e/∂param` at `at` against a central difference of the
/// ceil-relaxed expression. `None` when the point is unusable: a kink sits
/// inside the stencil, or rounding picks a different max/min branch than
/// the relaxation does.
pub fn gradient_error(e: &Expr, at: &Assignment, param: &str) -> Option<f64> {
    let relaxed = e.relax_ceil();
    let got = e.diff(param).eval(at).ok()?;
    if rel_err(got, relaxed.diff(param).eval(at).ok()?) > 1e-12 {
        return None;
    }
    let fd = smooth_difference(&relaxed, at, param, 1e-4)?;
    Some(rel_err(got, fd))
}
