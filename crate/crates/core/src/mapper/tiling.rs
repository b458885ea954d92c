//! Loop blocking for convolutions over a two-level memory hierarchy.
//!
//! A tile `(tx, ty, tc, tk)` of the output-width, output-height, input-channel
//! and output-channel loops must fit in the inner level together with its
//! weights and partial sums. Traffic to the outer level is then
//!
//! * inputs: `X·Y·C` once per output-channel tile,
//! * weights: `C·K·r²` once per spatial tile,
//! * partial sums: written once per input-channel tile and read back on all
//!   but the first.
//!
//! Inner-level traffic does not depend on the tiling.

use crate::hwmodel::{ConcreteHardwareModel, MemUnit, Metric, Unit};
use crate::workload::ConvLoops;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tiling {
    pub x: u64,
    pub y: u64,
    pub c: u64,
    pub k: u64,
}

impl Tiling {
    fn volume(self) -> u64 {
        self.x * self.y * self.c * self.k
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TilingLevel {
    pub capacity: f64,
    pub read_energy: f64,
    pub write_energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TilingLevels {
    /// On-chip level holding the tile; absent for a single-level hierarchy.
    pub inner: Option<TilingLevel>,
    pub outer: TilingLevel,
}

fn level(c: &ConcreteHardwareModel, m: MemUnit) -> Option<TilingLevel> {
    Some(TilingLevel {
        capacity: c.get(Unit::Mem(m), Metric::Capacity)?,
        read_energy: c.get(Unit::Mem(m), Metric::ReadEnergy)?,
        write_energy: c.get(Unit::Mem(m), Metric::WriteEnergy)?,
    })
}

/// Inner level: global buffer or else local memory; outer: main memory.
pub fn tiling_levels(c: &ConcreteHardwareModel) -> Option<TilingLevels> {
    let on_chip = level(c, MemUnit::GlobalBuf).or_else(|| level(c, MemUnit::LocalMem));
    match (on_chip, level(c, MemUnit::MainMem)) {
        (Some(inner), Some(outer)) => Some(TilingLevels {
            inner: Some(inner),
            outer,
        }),
        (Some(only), None) | (None, Some(only)) => Some(TilingLevels { inner: None, outer: only }),
        (None, None) => None,
    }
}

/// Modeled energy of a tiling, `None` when the tile does not fit.
pub fn tiling_energy(l: &ConvLoops, t: Tiling, levels: &TilingLevels) -> Option<f64> {
    let macs = (l.x * l.y * l.c * l.k * l.r * l.r) as f64;
    let outputs = (l.x * l.y * l.k) as f64;
    let Some(inner) = levels.inner else {
        let o = levels.outer;
        return Some(macs * 2.0 * o.read_energy + outputs * o.write_energy);
    };
    let footprint = t.x * t.y * t.c + t.c * t.k * l.r * l.r + t.x * t.y * t.k;
    if footprint as f64 > inner.capacity {
        return None;
    }
    let passes_c = l.c.div_ceil(t.c) as f64;
    let reads = (l.x * l.y * l.c) as f64 * l.k.div_ceil(t.k) as f64
        + (l.c * l.k * l.r * l.r) as f64 * (l.x.div_ceil(t.x) * l.y.div_ceil(t.y)) as f64
        + outputs * (passes_c - 1.0);
    let writes = outputs * passes_c;
    let inner_cost = macs * 2.0 * inner.read_energy + outputs * inner.write_energy;
    Some(inner_cost + reads * levels.outer.read_energy + writes * levels.outer.write_energy)
}

fn candidates(extent: u64) -> Vec<u64> {
    let mut out: Vec<u64> = std::iter::successors(Some(1u64), |p| p.checked_mul(2))
        .take_while(|&p| p < extent)
        .collect();
    out.push(extent.max(1));
    out
}

/// Lowest-energy tiling over power-of-two factors (plus the full extent) of
/// each loop. Ties go to the largest tile.
pub fn tiling_search(l: &ConvLoops, levels: &TilingLevels) -> Tiling {
    let mut best: Option<(f64, Tiling)> = None;
    let better = |e: f64, t: Tiling, b: &Option<(f64, Tiling)>| match b {
        None => true,
        Some((be, bt)) => e < *be || (e == *be && (t.volume(), t) > (bt.volume(), *bt)),
    };
    // footprint grows in every factor, so the first misfit ends each loop
    'x: for &x in &candidates(l.x) {
        for &y in &candidates(l.y) {
            for &c in &candidates(l.c) {
                for &k in &candidates(l.k) {
                    let t = Tiling { x, y, c, k };
                    match tiling_energy(l, t, levels) {
                        Some(e) => {
                            if better(e, t, &best) {
                                best = Some((e, t));
                            }
                        }
                        None if k == 1 && c == 1 && y == 1 => break 'x,
                        None => break,
                    }
                }
            }
        }
    }
    best.map_or(Tiling { x: 1, y: 1, c: 1, k: 1 }, |(_, t)| t)
}
