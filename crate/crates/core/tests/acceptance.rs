//! Acceptance suite: one pass/fail line per criterion, nonzero exit on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use gradsim::dgen::{bundled_model, generate as dgen, BUNDLED_ARCH, BUNDLED_TECH};
use gradsim::dopt::{
    history_csv, optimize, rank_technology_targets, t_grad_memsize, DotProductScenario, Objective, ObjectiveKind,
    OptimizerConfig, PipelineProblem, Problem,
};
use gradsim::dsim::{energy_over_runtime, estimate, metric_var, tmec, RUNTIME_VAR};
use gradsim::expr::{Assignment, Expr};
use gradsim::hwmodel::{CompUnit, MemUnit, Metric, ParamSide, Unit};
use gradsim::mapper::{map_workload, MapConfig};
use gradsim::par::Execution;
use gradsim::sweep::{sweep, GridAxis};
use gradsim::workload::{generate, GeneratorKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut exprs = [0usize; 2];
    let mut worst = [0f64; 2];
    for (slot, with_ceil, tol) in [(0, false, 1e-6), (1, true, 1e-3)] {
        let mut attempts = 0;
        while exprs[slot] < 100 {
            attempts += 1;
            ensure(attempts < 10_000, || "could not find usable points".into())?;
            let e = random_expr(&mut rng, 6, with_ceil);
            if e.params().is_empty() || (with_ceil && !e.has_ceil()) {
                continue;
            }
            let at = random_point(&mut rng);
            let errs: Option<Vec<f64>> = e.params().iter().map(|p| gradient_error(&e, &at, p)).collect();
            let Some(errs) = errs else { continue };
            for err in errs {
                ensure(err <= tol, || format!("{e} at {at:?}: relative error {err:e}"))?;
                worst[slot] = worst[slot].max(err);
            }
            exprs[slot] += 1;
        }
    }
    let h = bundled_model();
    let at = h.seed_assignment();
    let mut metric_pairs = 0;
    for ((u, q), e) in h.entries() {
        let tol = if e.has_ceil() { 1e-3 } else { 1e-6 };
        for p in e.params() {
            let err = gradient_error(e, &at, &p).ok_or_else(|| format!("{}.{}: kink at seed", u.name(), q.name()))?;
            ensure(err <= tol, || format!("{}.{} by {p}: relative error {err:e}", u.name(), q.name()))?;
            metric_pairs += 1;
        }
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "{} smooth + {} ceil expressions (worst {:.1e} / {:.1e}), {metric_pairs} model partials",
        exprs[0], exprs[1], worst[0], worst[1]
    ))
}

fn energy_accounting() -> Outcome {
    let c = three_vertex_machine();
    let r = map_workload(&three_vertex_workload(), &c, &three_vertex_config()).map_err(|e| e.to_string())?;
    let p = estimate(&r, &c).perf;
    for (got, want, what) in [
        (p.runtime, HandCalc::RUNTIME, "runtime"),
        (p.energy, HandCalc::ENERGY, "energy"),
        (p.power, HandCalc::power(), "power"),
        (p.area, HandCalc::AREA, "area"),
    ] {
        ensure(got.to_bits() == want.to_bits(), || format!("{what}: {got} vs {want}"))?;
    }
    Ok(format!("runtime {} s, energy {} nJ, area {} mm², bit-equal", p.runtime, p.energy, p.area))
}

fn dot_product_oracle() -> Outcome {
    let start = Instant::now();
    let one = DotProductScenario {
        lengths: vec![1024],
        ..DotProductScenario::default()
    };
    let mt = one.memory_time(64.0);
    ensure(mt == 1760.0, || format!("memory time {mt}"))?;
    let tg = t_grad_memsize(1024, 64.0, 128.0, 100.0, 10.0);
    ensure(tg == 880.0, || format!("t_grad_memsize {tg}"))?;

    let s = DotProductScenario::default();
    let problem = s.problem();
    let obj = Objective::new(ObjectiveKind::Time, 10.0);
    let axes = [GridAxis::from_spec(&s.b).unwrap(), GridAxis::from_spec(&s.p).unwrap()];
    let grid = sweep(&problem, &axes, &obj, Execution::default()).map_err(|e| e.to_string())?;
    let truth = grid.best_row().ok_or("no feasible grid point")?.objective;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let seed: Assignment = [("B", 2f64.powi(rng.gen_range(0..=12))), ("P", 2f64.powi(rng.gen_range(0..=8)))]
            .into_iter()
            .collect();
        let r = optimize(&problem, &seed, &obj, &OptimizerConfig::default()).map_err(|e| e.to_string())?;
        ensure(r.feasible && (r.objective - truth).abs() <= 1e-9 * truth, || {
            format!("seed {seed:?} -> {:?} objective {} vs grid {truth}", r.best, r.objective)
        })?;
    }
    within(start.elapsed(), 30.0)?;
    Ok(format!("1760 / 880 cycles; 5 seeds reach grid minimum {truth}"))
}

fn conservation() -> Outcome {
    let c = small_machine();
    let cap = c.get(Unit::Mem(MemUnit::GlobalBuf), Metric::Capacity).unwrap() as u64;
    let mut splits = 0;
    for seed in 0..100 {
        let w = random_dag(&mut ChaCha8Rng::seed_from_u64(1000 + seed), 50);
        let t = w.totals();
        let r = map_workload(&w, &c, &MapConfig::default()).map_err(|e| e.to_string())?;
        for m in [MemUnit::GlobalBuf, MemUnit::MainMem] {
            ensure(r.memory[&m].n_reads == t.read(m) && r.memory[&m].n_writes == t.write(m), || {
                format!("dag {seed}: {m:?} counters differ")
            })?;
        }
        for u in [CompUnit::SystolicArray, CompUnit::Vector] {
            ensure(r.compute[&u].n_ops == t.comp(u), || format!("dag {seed}: {u:?} ops differ"))?;
        }
        ensure(r.records.iter().all(|x| x.alloc_used <= cap), || format!("dag {seed}: capacity exceeded"))?;
        splits += r.records.iter().filter(|x| x.stream_level.is_some()).count();
    }
    Ok(format!("100 DAGs, {splits} streamed pieces, counters and capacity hold"))
}

fn tmec_identities() -> Outcome {
    let mems = [MemUnit::GlobalBuf, MemUnit::MainMem];
    let comps = [CompUnit::SystolicArray, CompUnit::Vector];
    let w = random_dag(&mut ChaCha8Rng::seed_from_u64(5), 30);
    let r = map_workload(&w, &small_machine(), &MapConfig::default()).map_err(|e| e.to_string())?;
    let t = tmec(&r, &mems);
    for m in mems {
        let u = Unit::Mem(m);
        let st = r.memory[&m];
        ensure(t.diff(&metric_var(u, Metric::WriteEnergy)) == Expr::c(st.n_writes as f64), || "∂/∂ew".into())?;
        ensure(t.diff(&metric_var(u, Metric::ReadEnergy)) == Expr::c(st.n_reads as f64), || "∂/∂er".into())?;
        ensure(t.diff(&metric_var(u, Metric::LeakagePower)) == Expr::p(RUNTIME_VAR), || "∂/∂l".into())?;
    }
    let leak = |units: Vec<Unit>| Expr::sum(units.into_iter().map(|u| Expr::p(metric_var(u, Metric::LeakagePower))));
    let mem_units: Vec<Unit> = mems.iter().map(|&m| Unit::Mem(m)).collect();
    ensure(t.diff(RUNTIME_VAR) == leak(mem_units.clone()), || "∂TMEC/∂t_W".into())?;
    let all: Vec<Unit> = mem_units.into_iter().chain(comps.iter().map(|&u| Unit::Comp(u))).collect();
    ensure(energy_over_runtime(&r, &mems, &comps).diff(RUNTIME_VAR) == leak(all), || "∂E/∂t_W".into())?;
    Ok("write, read, leakage and runtime partials are structural".into())
}

fn boundness(p: &PipelineProblem) -> Result<f64, String> {
    let (_, r) = p.run(&p.seed()).map_err(|e| e.to_string())?;
    let tm: f64 = r.records.iter().map(|x| x.t_mem_max()).sum();
    let tc: f64 = r.records.iter().map(|x| x.t_c).sum();
    Ok(tm / tc)
}

fn top_target(p: &PipelineProblem) -> Result<(String, ParamSide), String> {
    let obj = Objective::new(ObjectiveKind::Time, 1e9);
    let acc = p.backward(&p.seed(), &obj).map_err(|e| e.to_string())?;
    let g: Vec<(String, f64)> = acc.g.into_iter().collect();
    let first = rank_technology_targets(&g, &p.seed()).remove(0).0;
    let side = p.spec(&first).ok_or("ranked an unknown parameter")?.side;
    Ok((first, side))
}

fn optimizer_sanity() -> Outcome {
    let wide = dgen(&BUNDLED_ARCH.replace("vectN = 16", "vectN = 256"), BUNDLED_TECH).map_err(|e| e.to_string())?;
    let mem = PipelineProblem::new(wide, generate(GeneratorKind::Dot, 8, 1), MapConfig::default());
    let comp = PipelineProblem::new(bundled_model(), generate(GeneratorKind::Cnn, 8, 1), MapConfig::default());
    let (rm, rc) = (boundness(&mem)?, boundness(&comp)?);
    ensure(rm > 10.0 && rc < 0.1, || format!("t_mem/t_c ratios {rm} and {rc}"))?;
    let (m_name, m_side) = top_target(&mem)?;
    let (c_name, c_side) = top_target(&comp)?;
    ensure(m_side == ParamSide::Memory, || format!("memory-bound ranks {m_name} first"))?;
    ensure(c_side == ParamSide::Compute, || format!("compute-bound ranks {c_name} first"))?;
    Ok(format!("dot ({rm:.0}x) -> {m_name}; cnn (1/{:.0}x) -> {c_name}", 1.0 / rc))
}

/// Every output the CLI subcommands emit, rendered twice.
fn render_all() -> Result<Vec<String>, String> {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let h = dgen(BUNDLED_ARCH, BUNDLED_TECH).map_err(|e| err(&e))?;
    let mut out = vec![h.to_text()];
    let c = h.specialize_at(&h.seed_assignment()).map_err(|e| err(&e))?;
    for kind in [GeneratorKind::Cnn, GeneratorKind::Mlp, GeneratorKind::Dot, GeneratorKind::Transformer] {
        let w = generate(kind, 4, 9);
        out.push(w.to_text());
        let r = map_workload(&w, &c, &MapConfig::default()).map_err(|e| err(&e))?;
        let e = estimate(&r, &c);
        out.extend([r.trace_csv(), e.to_report(), e.to_csv()]);
    }
    let p = PipelineProblem::with_free(
        h.clone(),
        generate(GeneratorKind::Dot, 4, 9),
        MapConfig::default(),
        &["mainMem.nReadPorts", "globalBuf.nReadPorts"],
    )
    .map_err(|e| err(&e))?;
    let obj = Objective::new(ObjectiveKind::Edp, 50.0);
    let cfg = OptimizerConfig {
        max_epochs: 10,
        ..OptimizerConfig::default()
    };
    let r = optimize(&p, &p.seed(), &obj, &cfg).map_err(|e| err(&e))?;
    out.push(history_csv(&r.params, &r.history));
    let s = DotProductScenario::default();
    let axes = [GridAxis::from_spec(&s.b).unwrap(), GridAxis::from_spec(&s.p).unwrap()];
    let g = sweep(&s.problem(), &axes, &Objective::new(ObjectiveKind::Time, 10.0), Execution::default())
        .map_err(|e| err(&e))?;
    out.push(g.to_csv());
    Ok(out)
}

fn determinism() -> Outcome {
    let a = render_all()?;
    let b = render_all()?;
    ensure(a == b, || "outputs differ between runs".into())?;
    let seq = {
        let s = DotProductScenario::default();
        let axes = [GridAxis::from_spec(&s.b).unwrap(), GridAxis::from_spec(&s.p).unwrap()];
        sweep(&s.problem(), &axes, &Objective::new(ObjectiveKind::Time, 10.0), Execution::Sequential)
            .map_err(|e| e.to_string())?
            .to_csv()
    };
    ensure(a.last() == Some(&seq), || "parallel and sequential sweeps differ".into())?;
    Ok(format!("{} outputs byte-identical across reruns", a.len()))
}

fn speed() -> Outcome {
    let start = Instant::now();
    let c = small_machine();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut w = random_dag(&mut rng, 50);
    while w.len() < 1000 {
        let more = random_dag(&mut rng, 50);
        w = w.concat(&more, &format!("_{}", w.len())).map_err(|e| e.to_string())?;
    }
    let t = Instant::now();
    let r = map_workload(&w, &c, &MapConfig::default()).map_err(|e| e.to_string())?;
    let _ = estimate(&r, &c);
    let single = t.elapsed();
    within(single, 1.0)?;

    let h = bundled_model();
    let hc = h.specialize_at(&h.seed_assignment()).map_err(|e| e.to_string())?;
    for kind in [GeneratorKind::Cnn, GeneratorKind::Mlp, GeneratorKind::Dot, GeneratorKind::Transformer] {
        let w = generate(kind, 8, 1);
        let r = map_workload(&w, &hc, &MapConfig::default()).map_err(|e| e.to_string())?;
        let _ = estimate(&r, &hc);
    }
    let s = DotProductScenario::default();
    optimize(&s.problem(), &s.problem().seed(), &Objective::new(ObjectiveKind::Time, 10.0), &OptimizerConfig::default())
        .map_err(|e| e.to_string())?;
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "{}-vertex DFG simulated in {:.1} ms; scenarios in {:.2} s",
        w.len(),
        single.as_secs_f64() * 1e3,
        start.elapsed().as_secs_f64()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient correctness", gradient_correctness),
        ("energy accounting", energy_accounting),
        ("dot-product oracle", dot_product_oracle),
        ("conservation", conservation),
        ("TMEC partial identities", tmec_identities),
        ("optimizer sanity", optimizer_sanity),
        ("determinism", determinism),
        ("end-to-end speed", speed),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}. {name}: {why}", i + 1);
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
