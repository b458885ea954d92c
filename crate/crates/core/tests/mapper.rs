mod common;

use common::{random_dag, small_machine};
use gradsim::hwmodel::{CompUnit, MemUnit, Metric, Unit};
use gradsim::mapper::{
    map_workload, tiling_energy, tiling_search, MapConfig, Tiling, TilingLevel, TilingLevels,
};
use gradsim::workload::ConvLoops;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn configs() -> [MapConfig; 4] {
    let base = MapConfig::default();
    [
        base,
        MapConfig { hvth: Some(0), ..base },
        MapConfig { prefetch: false, ..base },
        MapConfig { overlap: false, hvth: Some(0), ..base },
    ]
}

#[test]
fn counters_conserve_workload_totals() {
    let c = small_machine();
    let cap = c.get(Unit::Mem(MemUnit::GlobalBuf), Metric::Capacity).unwrap() as u64;
    let mut split_runs = 0;
    for seed in 0..100 {
        let w = random_dag(&mut ChaCha8Rng::seed_from_u64(seed), 50);
        let totals = w.totals();
        for cfg in configs() {
            let r = map_workload(&w, &c, &cfg).unwrap();
            for m in [MemUnit::GlobalBuf, MemUnit::MainMem] {
                assert_eq!(r.memory[&m].n_reads, totals.read(m), "seed {seed} {m:?}");
                assert_eq!(r.memory[&m].n_writes, totals.write(m), "seed {seed} {m:?}");
            }
            for u in [CompUnit::SystolicArray, CompUnit::Vector] {
                assert_eq!(r.compute[&u].n_ops, totals.comp(u), "seed {seed} {u:?}");
            }
            assert!(r.records.iter().all(|x| x.alloc_used <= cap));
            assert!(r.memory[&MemUnit::GlobalBuf].capacity_used <= cap);
            if r.records.iter().any(|x| x.vertex.contains('/')) {
                split_runs += 1;
            }
        }
    }
    assert!(split_runs > 50, "only {split_runs} runs exercised streaming splits");
}

proptest! {
    #[test]
    fn cycles_are_the_sum_of_contributions(seed in any::<u64>()) {
        let w = random_dag(&mut ChaCha8Rng::seed_from_u64(seed), 30);
        let r = map_workload(&w, &small_machine(), &MapConfig::default()).unwrap();
        let sum: f64 = r.records.iter().map(|x| x.contribution()).sum();
        prop_assert!((sum - r.total_cycles).abs() <= 1e-9 * sum.max(1.0));
        prop_assert!(r.records.iter().all(|x| x.contribution() >= 0.0 && x.t_min <= x.t_exec));
    }

    #[test]
    fn overlap_and_prefetch_never_slow_things_down(seed in any::<u64>()) {
        let w = random_dag(&mut ChaCha8Rng::seed_from_u64(seed), 30);
        let c = small_machine();
        let run = |overlap, prefetch| {
            map_workload(&w, &c, &MapConfig { overlap, prefetch, hvth: Some(0) }).unwrap().total_cycles
        };
        prop_assert!(run(true, false) <= run(false, false));
        prop_assert!(run(true, true) <= run(true, false));
        prop_assert!(run(false, true) <= run(false, false));
    }

    #[test]
    fn mapping_is_deterministic(seed in any::<u64>()) {
        let w = random_dag(&mut ChaCha8Rng::seed_from_u64(seed), 30);
        let c = small_machine();
        let a = map_workload(&w, &c, &MapConfig::default()).unwrap();
        let b = map_workload(&w, &c, &MapConfig::default()).unwrap();
        prop_assert_eq!(a.trace_csv(), b.trace_csv());
    }
}

fn grid(extent: u64) -> Vec<u64> {
    let mut v: Vec<u64> = (0..).map(|i| 1u64 << i).take_while(|&p| p < extent).collect();
    v.push(extent);
    v
}

/// Straight transcription of the traffic model, evaluated without pruning.
fn energy(l: &ConvLoops, t: Tiling, inner: TilingLevel, outer: TilingLevel) -> Option<f64> {
    let fp = t.x * t.y * t.c + t.c * t.k * l.r * l.r + t.x * t.y * t.k;
    if fp as f64 > inner.capacity {
        return None;
    }
    let cd = |a: u64, b: u64| a.div_ceil(b) as f64;
    let (xyc, ckr, xyk) = ((l.x * l.y * l.c) as f64, (l.c * l.k * l.r * l.r) as f64, (l.x * l.y * l.k) as f64);
    let reads = xyc * cd(l.k, t.k) + ckr * cd(l.x, t.x) * cd(l.y, t.y) + xyk * (cd(l.c, t.c) - 1.0);
    let writes = xyk * cd(l.c, t.c);
    let macs = (l.x * l.y * l.c * l.k * l.r * l.r) as f64;
    Some(macs * 2.0 * inner.read_energy + xyk * inner.write_energy + reads * outer.read_energy + writes * outer.write_energy)
}

#[test]
fn tiling_search_matches_exhaustive_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40 {
        let l = ConvLoops {
            x: rng.gen_range(1..=20),
            y: rng.gen_range(1..=20),
            c: rng.gen_range(1..=40),
            k: rng.gen_range(1..=40),
            r: rng.gen_range(1..=3),
        };
        let inner = TilingLevel {
            capacity: rng.gen_range(50.0..5000.0),
            read_energy: 0.1,
            write_energy: 0.2,
        };
        let outer = TilingLevel {
            capacity: 1e12,
            read_energy: rng.gen_range(1.0..10.0),
            write_energy: rng.gen_range(1.0..10.0),
        };
        let levels = TilingLevels { inner: Some(inner), outer };
        let mut best = f64::INFINITY;
        for &x in &grid(l.x) {
            for &y in &grid(l.y) {
                for &c in &grid(l.c) {
                    for &k in &grid(l.k) {
                        if let Some(e) = energy(&l, Tiling { x, y, c, k }, inner, outer) {
                            best = best.min(e);
                        }
                    }
                }
            }
        }
        let t = tiling_search(&l, &levels);
        if best.is_finite() {
            let got = tiling_energy(&l, t, &levels).expect("returned tile fits");
            assert!((got - best).abs() <= 1e-9 * best, "{l:?}: {got} vs {best}");
        }
    }
}
