//! Built-in correctness checks behind `halolab validate`.

use crate::bench::{run_once, InitialCondition, RunConfig};
use crate::exchange::{build_plan, ExchangeStrategy, Exchanger, Fault};
use crate::grid::{decompose, Block, GridConfig, NGHOST};
use crate::metrics::{self, EnergyModel, PhaseTimes};
use crate::runtime::{spawn_ranks, IntranodePath, RuntimeConfig, Scheduling};
use crate::solver::{PhysicsSystem, Reconstruction, SolverConfig};
use crate::Error;
use parking_lot::Mutex;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }

    fn from_result(name: impl Into<String>, r: Result<(bool, String), Error>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

/// Run one halo exchange on hashed initial data and count face-ghost cells
/// that differ from the periodic neighbour's interior value.
#[allow(clippy::too_many_arguments)]
pub fn ghost_mismatches(
    grid: &GridConfig,
    system: &PhysicsSystem,
    ranks: usize,
    threads: usize,
    strategy: ExchangeStrategy,
    scheduling: Scheduling,
    path: IntranodePath,
    fault: Option<Fault>,
) -> Result<u64, Error> {
    let decomp = decompose(grid, ranks)?;
    let init = InitialCondition::Random { seed: 17 };
    let config = RuntimeConfig::new(ranks, threads).with_path(path);
    let counts = spawn_ranks(config, |ctx| {
        let plan = build_plan(&decomp, ctx.rank())?;
        let blocks: Vec<Mutex<Block>> = decomp
            .blocks_of(ctx.rank())
            .iter()
            .map(|&id| {
                let mut b = Block::new(id, ctx.rank(), system.nvar(), grid.block());
                crate::bench::init_block(&mut b, &init, system, grid);
                Mutex::new(b)
            })
            .collect();
        let mut ex = Exchanger::new(plan, strategy, scheduling).with_fault(fault);
        ex.exchange(ctx, &blocks, &mut PhaseTimes::default())?;
        let mut bad = 0u64;
        let n = grid.cells();
        let mut expect = vec![0.0; system.nvar()];
        for b in &blocks {
            let b = b.lock();
            let p = b.padded();
            let inside = |c: usize| (NGHOST..NGHOST + b.size()).contains(&c);
            for k in 0..p {
                for j in 0..p {
                    for i in 0..p {
                        let outside = [i, j, k].iter().filter(|&&c| !inside(c)).count();
                        if outside != 1 {
                            continue;
                        }
                        let g = b.global_cell(i, j, k);
                        let cell = [0, 1, 2].map(|a| g[a].rem_euclid(n[a] as i64) as usize);
                        init.value(system, grid, cell, &mut expect);
                        for (v, &e) in expect.iter().enumerate() {
                            if b.get(v, i, j, k).to_bits() != e.to_bits() {
                                bad += 1;
                            }
                        }
                    }
                }
            }
        }
        Ok(bad)
    })?;
    Ok(counts.iter().sum())
}

fn advection() -> PhysicsSystem {
    PhysicsSystem::Advection { velocity: [1.0, -0.5, 0.25] }
}

fn euler() -> PhysicsSystem {
    PhysicsSystem::Euler { gamma: 1.4 }
}

fn small_run(system: PhysicsSystem, fault: Option<Fault>) -> Result<RunConfig, Error> {
    let mut c = RunConfig::new(GridConfig::cube(16, 4)?, system);
    c.init = InitialCondition::Random { seed: 5 };
    c.steps = 4;
    c.fault = fault;
    Ok(c)
}

fn check_ghosts(fault: Option<Fault>) -> CheckResult {
    let r = (|| {
        let mut total = 0;
        let mut cases = 0;
        for (n, b) in [(16, 4), (16, 8), (8, 8)] {
            let grid = GridConfig::cube(n, b)?;
            for ranks in [1, 2, 4] {
                if ranks > grid.nblocks() {
                    continue;
                }
                for strategy in [ExchangeStrategy::Fused, ExchangeStrategy::SplitOverlap] {
                    for system in [advection(), euler()] {
                        total += ghost_mismatches(
                            &grid,
                            &system,
                            ranks,
                            2,
                            strategy,
                            Scheduling::dynamic(),
                            IntranodePath::CopyThrough,
                            fault,
                        )?;
                        cases += 1;
                    }
                }
            }
        }
        Ok((total == 0, format!("{cases} cases, {total} wrong ghost values")))
    })();
    CheckResult::from_result("ghost correctness", r)
}

fn hashes(base: &RunConfig, layouts: &[(usize, usize, ExchangeStrategy, Scheduling, IntranodePath)]) -> Result<Vec<String>, Error> {
    layouts
        .iter()
        .map(|&(r, t, s, sch, p)| {
            let c = base.clone().with_layout(r, t).with_engine(s, sch, p);
            Ok(run_once(&c, 0)?.metrics.state_hash)
        })
        .collect()
}

fn check_equivalence(fault: Option<Fault>) -> CheckResult {
    use ExchangeStrategy::*;
    let r = (|| {
        let base = small_run(advection(), fault)?;
        let h = hashes(
            &base,
            &[
                (2, 2, Fused, Scheduling::StaticBlocked, IntranodePath::SharedHandoff),
                (2, 2, SplitOverlap, Scheduling::StaticBlocked, IntranodePath::SharedHandoff),
                (2, 2, SplitOverlap, Scheduling::dynamic(), IntranodePath::CopyThrough),
            ],
        )?;
        Ok((h.iter().all(|x| *x == h[0]), format!("{} runs, hash {}", h.len(), h[0])))
    })();
    CheckResult::from_result("strategy equivalence", r)
}

fn check_decomposition(fault: Option<Fault>) -> CheckResult {
    let r = (|| {
        let base = small_run(euler(), fault)?;
        let f = ExchangeStrategy::Fused;
        let s = Scheduling::StaticBlocked;
        let h = hashes(
            &base,
            &[
                (1, 1, f, s, IntranodePath::SharedHandoff),
                (4, 2, f, s, IntranodePath::SharedHandoff),
                (8, 1, ExchangeStrategy::SplitOverlap, s, IntranodePath::CopyThrough),
            ],
        )?;
        Ok((h.iter().all(|x| *x == h[0]), format!("{} layouts, hash {}", h.len(), h[0])))
    })();
    CheckResult::from_result("decomposition invariance", r)
}

fn check_conservation(system: PhysicsSystem, fault: Option<Fault>) -> CheckResult {
    let vars: &[usize] = match system {
        PhysicsSystem::Advection { .. } => &[0],
        PhysicsSystem::Euler { .. } => &[0, 4],
    };
    let r = (|| {
        let mut c = small_run(system, fault)?.with_layout(2, 2);
        c.collect_field = true;
        let mut c0 = c.clone();
        c0.steps = 0;
        let before = run_once(&c0, 0)?.field.expect("field");
        let after = run_once(&c, 0)?;
        let after = after.field.expect("field");
        let mut worst = 0.0f64;
        for &v in vars {
            let drift = ((after.total(v) - before.total(v)) / before.total(v)).abs() / c.steps as f64;
            worst = worst.max(drift);
        }
        Ok((worst <= 1e-12, format!("max drift {worst:.3e} per step")))
    })();
    CheckResult::from_result(format!("conservation ({})", system.name()), r)
}

/// L1 error after advecting `1 + ½ sin(2πx)` once across a periodic box of
/// `n` cells.
pub fn advection_crossing_error(n: usize, reconstruction: Reconstruction, ranks: usize) -> Result<f64, Error> {
    let block = 4;
    let extent = block as f64 / n as f64;
    let grid = GridConfig::new([n, block, block], block, [1.0, extent, extent])?;
    let mut c = RunConfig::new(grid, PhysicsSystem::Advection { velocity: [1.0, 0.0, 0.0] })
        .with_layout(ranks, 1);
    c.solver = SolverConfig { reconstruction, ..SolverConfig::default() };
    c.init = InitialCondition::Sine { wavenumber: [1, 0, 0] };
    c.t_end = Some(1.0);
    c.collect_field = true;
    let mut c0 = c.clone();
    c0.t_end = Some(0.0);
    let exact = run_once(&c0, 0)?.field.expect("field");
    let done = run_once(&c, 0)?.field.expect("field");
    let err: f64 = done.data.iter().zip(&exact.data).map(|(a, b)| (a - b).abs()).sum();
    Ok(err / done.data.len() as f64)
}

fn check_convergence() -> CheckResult {
    let r = (|| {
        let mut detail = Vec::new();
        let mut ok = true;
        for (mode, want) in [(Reconstruction::PlmMinmod, 1.8), (Reconstruction::FirstOrder, 0.8)] {
            // Minmod clipping at the extrema keeps coarser pairs pre-asymptotic.
            let e1 = advection_crossing_error(128, mode, 2)?;
            let e2 = advection_crossing_error(256, mode, 2)?;
            let order = (e1 / e2).log2();
            ok &= order >= want;
            detail.push(format!("{mode:?} order {order:.3} (need {want})"));
        }
        Ok((ok, detail.join(", ")))
    })();
    CheckResult::from_result("convergence order", r)
}

fn check_energy() -> CheckResult {
    let close = |a: f64, b: f64| ((a - b) / b).abs() <= 1e-9;
    let updates = metrics::cellupdates(6_000_000, 2_000_000, 2);
    let kwh = metrics::workload_energy_kwh(updates, 1.6e-5);
    let co2 = metrics::co2_equivalent(kwh, EnergyModel::default().carbon_intensity_g_per_kwh);
    let epc6 = metrics::epc6(307_400.0, 5_300_000_000).unwrap_or(f64::NAN);
    let ok = updates == 24_000_000_000_000 && close(kwh, 384.0) && close(co2, 105_600.0) && close(epc6, 58.0);
    CheckResult::new(
        "energy arithmetic",
        ok,
        format!("{updates} updates, {kwh} kWh, {co2} g CO2e, {epc6:.4} J per 1e6 updates"),
    )
}

/// Every check, in a fixed order. `fault` is injected into every run.
pub fn run_suite(fault: Option<Fault>) -> Vec<CheckResult> {
    vec![
        check_ghosts(fault),
        check_equivalence(fault),
        check_decomposition(fault),
        check_conservation(advection(), fault),
        check_conservation(euler(), fault),
        check_convergence(),
        check_energy(),
    ]
}

pub fn format_report(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for r in results {
        let _ = writeln!(s, "{:<width$}  {}  {}", r.name, if r.passed { "PASS" } else { "FAIL" }, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    let _ = writeln!(s, "{} checks, {failed} failed", results.len());
    s
}
