//! Analytical tiled dot-product scenario.
//!
//! A program runs `k` dot products of lengths `N_i` on a datapath with `B`
//! buffer words and `P` multipliers. Without prefetching, each product takes
//!
//! ```text
//! max(⌈B/P⌉·t4 + 2·t5, ⌈N_i/B⌉·(t1 + t2))
//! ```
//!
//! cycles (compute vs. DRAM+SRAM reads), and the datapath occupies
//! `2·B·a_sram + P·a_mult + 2·a_add`. Both `B` and `P` are powers of two.
//! Only runtime and area are modeled; energy is identically zero.

use super::ExprProblem;
use crate::expr::{Expr, ParamId, ParamKind, ValueDomain};
use crate::hwmodel::{ParamSide, ParamSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct DotProductScenario {
    pub lengths: Vec<u64>,
    /// DRAM and SRAM read time per tile [cycles].
    pub t1: f64,
    pub t2: f64,
    /// Multiply and add time [cycles].
    pub t4: f64,
    pub t5: f64,
    /// Area per buffer word, per multiplier and per adder [mm²].
    pub area_sram: f64,
    pub area_mult: f64,
    pub area_add: f64,
    pub b: ParamSpec,
    pub p: ParamSpec,
}

impl Default for DotProductScenario {
    fn default() -> Self {
        let pow2 = |name: &str, seed: f64, max: f64, side| {
            ParamSpec::new(ParamId::new(name, ParamKind::Arch, ValueDomain::PowerOfTwo), side, seed).with_bounds(1.0, max)
        };
        DotProductScenario {
            lengths: vec![1024, 4096, 300, 65536, 20000, 777],
            t1: 100.0,
            t2: 10.0,
            t4: 4.0,
            t5: 1.0,
            area_sram: 0.01,
            area_mult: 0.5,
            area_add: 0.1,
            b: pow2("B", 64.0, 4096.0, ParamSide::Memory),
            p: pow2("P", 4.0, 256.0, ParamSide::Compute),
        }
    }
}

impl DotProductScenario {
    pub fn runtime_expr(&self) -> Expr {
        let (b, p) = (Expr::p(self.b.name()), Expr::p(self.p.name()));
        let compute = Expr::ceil(b.clone() / p) * self.t4 + 2.0 * self.t5;
        Expr::sum(self.lengths.iter().map(|&n| {
            let memory = Expr::ceil(Expr::c(n as f64) / b.clone()) * (self.t1 + self.t2);
            Expr::max(compute.clone(), memory)
        }))
    }

    pub fn area_expr(&self) -> Expr {
        2.0 * Expr::p(self.b.name()) * self.area_sram + Expr::p(self.p.name()) * self.area_mult + 2.0 * self.area_add
    }

    pub fn problem(&self) -> ExprProblem {
        ExprProblem {
            params: vec![self.b.clone(), self.p.clone()],
            runtime: self.runtime_expr(),
            energy: Expr::zero(),
            area: self.area_expr(),
        }
    }

    /// Total read time `Σ ⌈N_i/B⌉·(t1 + t2)`.
    pub fn memory_time(&self, b: f64) -> f64 {
        self.lengths
            .iter()
            .map(|&n| (n as f64 / b).ceil() * (self.t1 + self.t2))
            .sum()
    }
}

/// Read time saved by moving the buffer from `b` to the reference size `b_ref`:
/// `(⌈N/B⌉ − ⌈N/B'⌉)·(t1 + t2)`.
pub fn t_grad_memsize(n: u64, b: f64, b_ref: f64, t1: f64, t2: f64) -> f64 {
    ((n as f64 / b).ceil() - (n as f64 / b_ref).ceil()) * (t1 + t2)
}
