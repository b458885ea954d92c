//! Synthetic workload generators. Every generator is deterministic in its
//! seed. Ids are zero-padded so ascending id order is a valid visit order.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ConvLoops, Vertex, VertexStats, Workload};
use crate::hwmodel::{CompUnit, MemUnit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    Cnn,
    Mlp,
    Dot,
    Transformer,
}

impl FromStr for GeneratorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cnn" => Ok(GeneratorKind::Cnn),
            "mlp" => Ok(GeneratorKind::Mlp),
            "dot" => Ok(GeneratorKind::Dot),
            "transformer" => Ok(GeneratorKind::Transformer),
            _ => Err(format!("unknown generator `{s}` (expected cnn, mlp, dot or transformer)")),
        }
    }
}

pub fn generate(kind: GeneratorKind, size: usize, seed: u64) -> Workload {
    match kind {
        GeneratorKind::Cnn => cnn(size, seed),
        GeneratorKind::Mlp => mlp(size, seed),
        GeneratorKind::Dot => dot(size, seed),
        GeneratorKind::Transformer => transformer(size, seed),
    }
}

#[derive(Default)]
struct Builder {
    vertices: Vec<Vertex>,
    edges: Vec<(usize, usize, u64)>,
}

impl Builder {
    fn push(&mut self, v: Vertex) -> usize {
        self.vertices.push(v);
        self.vertices.len() - 1
    }

    fn edge(&mut self, a: usize, b: usize, bytes: u64) {
        self.edges.push((a, b, bytes));
    }

    fn finish(self) -> Workload {
        let edges = self
            .edges
            .into_iter()
            .map(|(src, dst, bytes)| super::Edge { src, dst, bytes })
            .collect();
        Workload::new(self.vertices, edges).expect("generators build DAGs")
    }
}

struct Traffic {
    comp: Vec<(CompUnit, u64)>,
    alloc: u64,
    read: Vec<(MemUnit, u64)>,
    write: Vec<(MemUnit, u64)>,
}

fn stats(t: Traffic) -> VertexStats {
    VertexStats {
        n_comp: t.comp.into_iter().filter(|(_, v)| *v > 0).collect(),
        n_alloc: t.alloc,
        n_read: t.read.into_iter().filter(|(_, v)| *v > 0).collect(),
        n_write: t.write.into_iter().filter(|(_, v)| *v > 0).collect(),
    }
}

/// A stack of 3x3 convolutions with a residual edge every third layer.
/// Activations and weights are one byte per element.
pub fn cnn(layers: usize, seed: u64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::default();
    let mut spatial = [56u64, 28, 14][rng.gen_range(0..3)];
    let mut channels = [16u64, 32][rng.gen_range(0..2)];
    for i in 0..layers {
        let k = *[16u64, 32, 64, 128].choose(&mut rng).expect("nonempty");
        if i > 0 && i % 4 == 0 && spatial > 7 {
            spatial /= 2;
        }
        let (x, y, c, r) = (spatial, spatial, channels, 3u64);
        let macs = x * y * c * k * r * r;
        let input = x * y * c;
        let weights = c * k * r * r;
        let output = x * y * k;
        let last = i + 1 == layers;
        let v = Vertex::new(
            format!("conv{i:03}"),
            stats(Traffic {
                comp: vec![(CompUnit::SystolicArray, macs), (CompUnit::Vector, output)],
                alloc: input + weights + output,
                read: vec![
                    (MemUnit::GlobalBuf, input * r * r + weights),
                    (MemUnit::MainMem, weights + if i == 0 { input } else { 0 }),
                ],
                write: vec![
                    (MemUnit::GlobalBuf, output),
                    (MemUnit::MainMem, if last { output } else { 0 }),
                ],
            }),
        )
        .with_kind("conv")
        .with_loops(ConvLoops { x, y, c, k, r });
        let id = b.push(v);
        if i > 0 {
            b.edge(id - 1, id, input);
        }
        if i >= 3 && i % 3 == 0 {
            b.edge(id - 3, id, input);
        }
        channels = k;
    }
    b.finish()
}

/// Fully connected layers on a batch of activations.
pub fn mlp(layers: usize, seed: u64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::default();
    let batch = [16u64, 32, 64][rng.gen_range(0..3)];
    let mut width = [256u64, 512, 1024][rng.gen_range(0..3)];
    for i in 0..layers {
        let out = *[256u64, 512, 1024].choose(&mut rng).expect("nonempty");
        let weights = width * out;
        let input = batch * width;
        let output = batch * out;
        let v = Vertex::new(
            format!("fc{i:03}"),
            stats(Traffic {
                comp: vec![(CompUnit::SystolicArray, batch * width * out), (CompUnit::Vector, output)],
                alloc: input + weights + output,
                read: vec![(MemUnit::GlobalBuf, input + weights), (MemUnit::MainMem, weights)],
                write: vec![(MemUnit::GlobalBuf, output)],
            }),
        )
        .with_kind("matmul");
        let id = b.push(v);
        if i > 0 {
            b.edge(id - 1, id, input);
        }
        width = out;
    }
    b.finish()
}

/// A chain of streaming dot products over 4-byte operands read from main
/// memory; memory bound on any reasonable machine.
pub fn dot(count: usize, seed: u64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::default();
    for i in 0..count {
        let n: u64 = 1 << rng.gen_range(14..=17);
        let bytes = 8 * n;
        let v = Vertex::new(
            format!("dot{i:03}"),
            stats(Traffic {
                comp: vec![(CompUnit::Vector, n)],
                alloc: bytes,
                read: vec![(MemUnit::MainMem, bytes), (MemUnit::GlobalBuf, bytes)],
                write: vec![(MemUnit::GlobalBuf, 4), (MemUnit::MainMem, 4)],
            }),
        )
        .with_kind("dot");
        let id = b.push(v);
        if i > 0 {
            b.edge(id - 1, id, 4);
        }
    }
    b.finish()
}

/// Transformer encoder blocks: QKV projection, per-head attention, softmax,
/// output projection with a residual add, then a two-layer feed-forward.
pub fn transformer(blocks: usize, seed: u64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::default();
    let s = [64u64, 128][rng.gen_range(0..2)];
    let d = [256u64, 512][rng.gen_range(0..2)];
    let heads = 4u64;
    let dh = d / heads;
    let act = s * d;
    let mut prev: Option<usize> = None;
    let matmul = |id: String, m: u64, k: u64, n: u64, kind: &str| {
        Vertex::new(
            id,
            stats(Traffic {
                comp: vec![(CompUnit::SystolicArray, m * k * n)],
                alloc: m * k + k * n + m * n,
                read: vec![(MemUnit::GlobalBuf, m * k + k * n), (MemUnit::MainMem, k * n)],
                write: vec![(MemUnit::GlobalBuf, m * n)],
            }),
        )
        .with_kind(kind)
    };
    let vector = |id: String, ops: u64, bytes: u64, kind: &str| {
        Vertex::new(
            id,
            stats(Traffic {
                comp: vec![(CompUnit::Vector, ops)],
                alloc: 2 * bytes,
                read: vec![(MemUnit::GlobalBuf, bytes)],
                write: vec![(MemUnit::GlobalBuf, bytes)],
            }),
        )
        .with_kind(kind)
    };
    for blk in 0..blocks {
        let p = |name: &str| format!("b{blk:02}.{name}");
        let qkv = b.push(matmul(p("0qkv"), s, d, 3 * d, "matmul"));
        if let Some(pv) = prev {
            b.edge(pv, qkv, act);
        }
        let proj_in: Vec<usize> = (0..heads)
            .map(|h| {
                let score = b.push(matmul(p(&format!("1head{h}.score")), s, dh, s, "matmul"));
                b.edge(qkv, score, 2 * s * dh);
                let soft = b.push(vector(p(&format!("2head{h}.softmax")), 3 * s * s, s * s, "softmax"));
                b.edge(score, soft, s * s);
                let ctx = b.push(matmul(p(&format!("3head{h}.ctx")), s, s, dh, "matmul"));
                b.edge(soft, ctx, s * s);
                b.edge(qkv, ctx, s * dh);
                ctx
            })
            .collect();
        let proj = b.push(matmul(p("4proj"), s, d, d, "matmul"));
        for c in proj_in {
            b.edge(c, proj, s * dh);
        }
        let add = b.push(vector(p("5residual"), act, act, "add"));
        b.edge(proj, add, act);
        if let Some(pv) = prev {
            b.edge(pv, add, act);
        }
        let ffn1 = b.push(matmul(p("6ffn1"), s, d, 4 * d, "matmul"));
        b.edge(add, ffn1, act);
        let ffn2 = b.push(matmul(p("7ffn2"), s, 4 * d, d, "matmul"));
        b.edge(ffn1, ffn2, 4 * act);
        prev = Some(ffn2);
    }
    b.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic_and_valid() {
        for kind in [GeneratorKind::Cnn, GeneratorKind::Mlp, GeneratorKind::Dot, GeneratorKind::Transformer] {
            let a = generate(kind, 5, 7);
            assert_eq!(a, generate(kind, 5, 7));
            assert!(!a.is_empty());
            assert!(a.vertices().iter().all(|v| !v.stats.is_idle()));
            assert_eq!(Workload::parse(&a.to_text()).unwrap(), a);
        }
    }

    #[test]
    fn visit_order_respects_edges() {
        let w = transformer(2, 1);
        let order = w.topological_order().unwrap();
        let mut pos = vec![0; w.len()];
        for (i, &v) in order.iter().enumerate() {
            pos[v] = i;
        }
        assert!(w.edges().iter().all(|e| pos[e.src] < pos[e.dst]));
        assert_eq!(w.vertices()[order[1]].id, "b00.1head0.score");
    }
}
