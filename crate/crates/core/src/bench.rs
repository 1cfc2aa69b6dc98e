//! Experiment orchestration: single runs, strong/weak scaling sweeps and
//! synthetic load imbalance.

use crate::exchange::{build_plan, ExchangeStrategy, Exchanger, Fault};
use crate::grid::{decompose, Block, BlockId, Decomposition, GridConfig, NGHOST};
use crate::metrics::{self, EnergyModel, Phase, PhaseTimes, RunMetrics};
use crate::runtime::{spawn_ranks, IntranodePath, RuntimeConfig, Scheduling};
use crate::solver::{
    euler_conserved, local_dt, rk2_step, PhysicsSystem, SolverConfig, StageState, SUBSTEPS,
};
use crate::Error;
use parking_lot::Mutex;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::time::{Duration, Instant};

/// Default per-core workload of weak-scaling sweeps.
pub const DEFAULT_CELLS_PER_CORE: u64 = 65536;

/// SplitMix64 finaliser, used for every deterministic pseudo-random value.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn unit_hash(seed: u64, key: u64) -> f64 {
    (splitmix64(seed ^ splitmix64(key)) >> 11) as f64 / (1u64 << 53) as f64
}

/// Per-block work multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImbalanceProfile {
    /// Multiplier in `[1, max_multiplier]`, hashed from `(seed, morton)`.
    Hashed { seed: u64, max_multiplier: u32 },
    /// The same multiplier on every block.
    Constant(u32),
}

impl ImbalanceProfile {
    pub fn multiplier(&self, id: BlockId) -> u32 {
        match *self {
            Self::Hashed { seed, max_multiplier } => {
                let k = max_multiplier.max(1) as u64;
                1 + (splitmix64(seed ^ splitmix64(id.morton)) % k) as u32
            }
            Self::Constant(m) => m.max(1),
        }
    }
}

/// Run `task` `multiplier` times and return the last result; the extra
/// evaluations only cost time.
pub fn apply_imbalance<R>(multiplier: u32, mut task: impl FnMut() -> R) -> R {
    for _ in 1..multiplier {
        std::hint::black_box(task());
    }
    task()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialCondition {
    /// Constant state.
    Uniform,
    /// `1 + ½ sin(2π k·x/L)`: the advected scalar, or the density of a gas
    /// moving at unit x-velocity under uniform pressure.
    Sine { wavenumber: [i32; 3] },
    /// Two mirrored Sod tubes along x: the left state on the outer quarters of
    /// the box and the right state in the middle half.
    SodPair,
    /// Hashed per-cell noise, independent of the decomposition.
    Random { seed: u64 },
}

impl InitialCondition {
    pub fn name(&self) -> String {
        match self {
            Self::Uniform => "uniform".into(),
            Self::Sine { wavenumber: [a, b, c] } => format!("sine:{a},{b},{c}"),
            Self::SodPair => "sod".into(),
            Self::Random { seed } => format!("random:{seed}"),
        }
    }

    /// Conserved state of the global cell `cell` with centre `x`.
    pub fn value(&self, system: &PhysicsSystem, grid: &GridConfig, cell: [usize; 3], out: &mut [f64]) {
        let dx = grid.dx();
        let ext = grid.extent();
        let x = [
            (cell[0] as f64 + 0.5) * dx,
            (cell[1] as f64 + 0.5) * dx,
            (cell[2] as f64 + 0.5) * dx,
        ];
        let linear = {
            let n = grid.cells();
            (cell[0] + n[0] * (cell[1] + n[1] * cell[2])) as u64
        };
        match (*self, *system) {
            (Self::Uniform, PhysicsSystem::Advection { .. }) => out[0] = 1.0,
            (Self::Uniform, PhysicsSystem::Euler { gamma }) => {
                out.copy_from_slice(&euler_conserved(1.0, [0.0; 3], 1.0, gamma))
            }
            (Self::Sine { wavenumber }, sys) => {
                let phase: f64 = (0..3).map(|a| wavenumber[a] as f64 * x[a] / ext[a]).sum();
                let s = 1.0 + 0.5 * (2.0 * std::f64::consts::PI * phase).sin();
                match sys {
                    PhysicsSystem::Advection { .. } => out[0] = s,
                    PhysicsSystem::Euler { gamma } => {
                        out.copy_from_slice(&euler_conserved(s, [1.0, 0.0, 0.0], 1.0, gamma))
                    }
                }
            }
            (Self::SodPair, sys) => {
                let f = x[0] / ext[0];
                let left = !(0.25..0.75).contains(&f);
                match sys {
                    PhysicsSystem::Advection { .. } => out[0] = if left { 1.0 } else { 0.125 },
                    PhysicsSystem::Euler { gamma } => {
                        let (rho, p) = if left { (1.0, 1.0) } else { (0.125, 0.1) };
                        out.copy_from_slice(&euler_conserved(rho, [0.0; 3], p, gamma));
                    }
                }
            }
            (Self::Random { seed }, sys) => {
                let r = |k: u64| unit_hash(seed, linear * 8 + k);
                match sys {
                    PhysicsSystem::Advection { .. } => out[0] = 0.5 + r(0),
                    PhysicsSystem::Euler { gamma } => {
                        let vel = [r(1) - 0.5, r(2) - 0.5, r(3) - 0.5];
                        out.copy_from_slice(&euler_conserved(0.5 + r(0), vel, 0.5 + r(4), gamma));
                    }
                }
            }
        }
    }
}

/// Fill the interior of `block` from `init`; ghost cells are left at zero.
pub fn init_block(block: &mut Block, init: &InitialCondition, system: &PhysicsSystem, grid: &GridConfig) {
    let n = block.size();
    let nvar = block.nvar();
    let mut u = vec![0.0; nvar];
    for k in NGHOST..NGHOST + n {
        for j in NGHOST..NGHOST + n {
            for i in NGHOST..NGHOST + n {
                let g = block.global_cell(i, j, k);
                init.value(system, grid, [g[0] as usize, g[1] as usize, g[2] as usize], &mut u);
                for (v, &val) in u.iter().enumerate() {
                    block.set(v, i, j, k, val);
                }
            }
        }
    }
}

/// SHA-256 of a block interior, values as little-endian bytes.
pub fn block_digest(interior: &[f64]) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in interior {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

/// Global state hash: SHA-256 over per-block digests in Morton order, as 32
/// hex characters.
pub fn combine_digests<'a>(digests: impl IntoIterator<Item = &'a [u8; 32]>) -> String {
    let mut h = Sha256::new();
    for d in digests {
        h.update(d);
    }
    hex16(&h.finalize())
}

fn hex16(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(32);
    for b in &bytes[..16] {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Everything needed to execute one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub system: PhysicsSystem,
    pub solver: SolverConfig,
    pub init: InitialCondition,
    /// Number of time steps; ignored when `t_end` is set.
    pub steps: u64,
    /// Integrate to this time instead of a fixed step count.
    pub t_end: Option<f64>,
    pub ranks: usize,
    pub threads: usize,
    pub strategy: ExchangeStrategy,
    pub scheduling: Scheduling,
    pub path: IntranodePath,
    pub imbalance: Option<ImbalanceProfile>,
    pub energy: Option<EnergyModel>,
    pub fault: Option<Fault>,
    pub watchdog: Option<Duration>,
    /// Gather the final interior field on the orchestrator.
    pub collect_field: bool,
}

impl RunConfig {
    /// 64³ advection with the default solver, one rank, one thread.
    pub fn new(grid: GridConfig, system: PhysicsSystem) -> Self {
        Self {
            grid,
            system,
            solver: SolverConfig::default(),
            init: InitialCondition::Sine { wavenumber: [1, 1, 1] },
            steps: 10,
            t_end: None,
            ranks: 1,
            threads: 1,
            strategy: ExchangeStrategy::Fused,
            scheduling: Scheduling::StaticBlocked,
            path: IntranodePath::SharedHandoff,
            imbalance: None,
            energy: None,
            fault: None,
            watchdog: None,
            collect_field: false,
        }
    }

    pub fn with_layout(mut self, ranks: usize, threads: usize) -> Self {
        self.ranks = ranks;
        self.threads = threads;
        self
    }

    pub fn with_engine(mut self, strategy: ExchangeStrategy, scheduling: Scheduling, path: IntranodePath) -> Self {
        self.strategy = strategy;
        self.scheduling = scheduling;
        self.path = path;
        self
    }

    /// Canonical text form, the input of the run id.
    pub fn describe(&self) -> String {
        let c = self.grid.cells();
        let system = match self.system {
            PhysicsSystem::Advection { velocity: [a, b, d] } => format!("advection:{a},{b},{d}"),
            PhysicsSystem::Euler { gamma } => format!("euler:{gamma}"),
        };
        format!(
            "grid={}x{}x{} block={} system={} recon={:?} cfl={} init={} steps={} t_end={:?} \
             ranks={} threads={} strategy={} scheduling={} path={} imbalance={:?}",
            c[0],
            c[1],
            c[2],
            self.grid.block(),
            system,
            self.solver.reconstruction,
            self.solver.cfl,
            self.init.name(),
            self.steps,
            self.t_end,
            self.ranks,
            self.threads,
            self.strategy.name(),
            self.scheduling,
            self.path.name(),
            self.imbalance,
        )
    }

    pub fn run_id(&self, rep: usize) -> String {
        let mut h = Sha256::new();
        h.update(self.describe().as_bytes());
        h.update(b" rep=");
        h.update(rep.to_string().as_bytes());
        hex16(&h.finalize())[..12].to_string()
    }

    fn validate(&self) -> Result<(), Error> {
        self.solver.validate()?;
        if self.ranks == 0 || self.threads == 0 {
            return Err(Error::Usage("ranks and threads must be at least 1".into()));
        }
        if let Some(e) = &self.energy {
            e.validate()?;
        }
        if let Some(t) = self.t_end {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::Usage(format!("t_end must be non-negative, got {t}")));
            }
        }
        Ok(())
    }
}

/// Final interior state of every cell, `[var][z][y][x]` over the global grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalField {
    pub cells: [usize; 3],
    pub nvar: usize,
    pub data: Vec<f64>,
}

impl GlobalField {
    pub fn get(&self, var: usize, i: usize, j: usize, k: usize) -> f64 {
        let [nx, ny, nz] = self.cells;
        self.data[((var * nz + k) * ny + j) * nx + i]
    }

    /// Sum of variable `var` over all cells.
    pub fn total(&self, var: usize) -> f64 {
        let n: usize = self.cells.iter().product();
        self.data[var * n..(var + 1) * n].iter().sum()
    }
}

/// Result of [`run_once`].
#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: RunMetrics,
    pub initial_hash: String,
    pub time: f64,
    pub field: Option<GlobalField>,
}

struct RankOutput {
    times: PhaseTimes,
    steps: u64,
    time: f64,
    cellupdates: u64,
    initial: Vec<[u8; 32]>,
    digests: Vec<[u8; 32]>,
    interiors: Vec<(BlockId, Vec<f64>)>,
    mem_bytes: u64,
}

/// Execute one configuration end to end: decompose, initialise, step, hash.
pub fn run_once(config: &RunConfig, rep: usize) -> Result<RunResult, Error> {
    config.validate()?;
    let decomp = decompose(&config.grid, config.ranks)?;
    let mut rcfg = RuntimeConfig::new(config.ranks, config.threads).with_path(config.path);
    if let Some(w) = config.watchdog {
        rcfg = rcfg.with_watchdog(w);
    }
    let start = Instant::now();
    let outputs = spawn_ranks(rcfg, |ctx| rank_main(ctx, config, &decomp))?;
    let wall_s = start.elapsed().as_secs_f64();

    let steps = outputs[0].steps;
    let time = outputs[0].time;
    let cellupdates: u64 = outputs.iter().map(|o| o.cellupdates).sum();
    debug_assert_eq!(cellupdates, metrics::cellupdates(config.grid.interior_cells(), steps, SUBSTEPS));
    let initial_hash = combine_digests(outputs.iter().flat_map(|o| o.initial.iter()));
    let state_hash = combine_digests(outputs.iter().flat_map(|o| o.digests.iter()));
    let phase = PhaseTimes::mean(&outputs.iter().map(|o| o.times).collect::<Vec<_>>());
    let mem_bytes = outputs.iter().map(|o| o.mem_bytes).max().unwrap_or(0);

    let field = config.collect_field.then(|| {
        let cells = config.grid.cells();
        let nvar = config.system.nvar();
        let b = config.grid.block();
        let mut data = vec![0.0; nvar * cells.iter().product::<usize>()];
        for (id, interior) in outputs.iter().flat_map(|o| o.interiors.iter()) {
            let mut at = 0;
            for v in 0..nvar {
                for k in 0..b {
                    for j in 0..b {
                        let gk = id.coords[2] * b + k;
                        let gj = id.coords[1] * b + j;
                        let row = ((v * cells[2] + gk) * cells[1] + gj) * cells[0] + id.coords[0] * b;
                        data[row..row + b].copy_from_slice(&interior[at..at + b]);
                        at += b;
                    }
                }
            }
        }
        GlobalField { cells, nvar, data }
    });

    let metrics = RunMetrics {
        run_id: config.run_id(rep),
        ranks: config.ranks,
        threads: config.threads,
        strategy: config.strategy,
        scheduling: config.scheduling,
        path: config.path,
        nx: config.grid.cells()[0],
        block: config.grid.block(),
        steps,
        rep,
        wall_s,
        cellupdates,
        phase,
        mem_bytes,
        state_hash,
        energy_j: config.energy.map(|e| metrics::energy_to_solution(&e, wall_s)),
        error: None,
    };
    Ok(RunResult { metrics, initial_hash, time, field })
}

fn rank_main(ctx: &crate::runtime::RankContext, config: &RunConfig, decomp: &Decomposition) -> Result<RankOutput, Error> {
    let rank = ctx.rank();
    let pool = ctx.pool();
    let grid = &config.grid;
    let dx = grid.dx();
    let nvar = config.system.nvar();
    let size = grid.block();
    let mut times = PhaseTimes::default();

    let ids = decomp.blocks_of(rank);
    let plan = build_plan(decomp, rank)?;
    let buffer_bytes = plan.buffer_bytes(nvar, size)
        * match config.path {
            IntranodePath::SharedHandoff => 1,
            IntranodePath::CopyThrough => 2,
        };
    let mut exchanger = Exchanger::new(plan, config.strategy, config.scheduling).with_fault(config.fault);

    let blocks: Vec<Mutex<Block>> = times.time(Phase::SerialOther, || {
        ids.iter()
            .map(|&id| {
                let mut b = Block::new(id, rank, nvar, size);
                init_block(&mut b, &config.init, &config.system, grid);
                Mutex::new(b)
            })
            .collect()
    });
    let states: Vec<Mutex<StageState>> = ids.iter().map(|_| Mutex::new(StageState::default())).collect();
    let repeat: Vec<u32> = ids
        .iter()
        .map(|&id| config.imbalance.map_or(1, |p| p.multiplier(id)))
        .collect();
    let initial = times.time(Phase::SerialOther, || digests(&blocks));

    let block_bytes = (nvar * (size + 2 * NGHOST).pow(3) + nvar * size.pow(3)) * std::mem::size_of::<f64>();
    let mem_bytes = ids.len() as u64 * block_bytes as u64 + buffer_bytes;

    let mut t = 0.0;
    let mut steps = 0u64;
    let mut cellupdates = 0u64;
    loop {
        match config.t_end {
            Some(t_end) if t_end - t <= 1e-12 * t_end.max(1.0) => break,
            None if steps >= config.steps => break,
            _ => {}
        }
        let candidate = times.time(Phase::Compute, || {
            local_dt(pool, &blocks, &config.system, &config.solver, dx, config.scheduling)
        })?;
        let mut dt = times.time(Phase::SerialOther, || ctx.allreduce_min(candidate))?;
        if let Some(t_end) = config.t_end {
            dt = dt.min(t_end - t);
        }
        cellupdates += rk2_step(
            pool,
            &blocks,
            &states,
            &repeat,
            dt,
            dx,
            &config.system,
            &config.solver,
            config.scheduling,
            &mut times,
            |times| exchanger.exchange(ctx, &blocks, times),
        )?;
        t += dt;
        steps += 1;
    }

    let digests = times.time(Phase::SerialOther, || digests(&blocks));
    let interiors = if config.collect_field {
        blocks.iter().map(|b| {
            let b = b.lock();
            (b.id, b.interior())
        }).collect()
    } else {
        Vec::new()
    };
    Ok(RankOutput { times, steps, time: t, cellupdates, initial, digests, interiors, mem_bytes })
}

fn digests(blocks: &[Mutex<Block>]) -> Vec<[u8; 32]> {
    blocks.iter().map(|b| block_digest(&b.lock().interior())).collect()
}

/// How the grid is sized across a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scaling {
    /// Fixed `nx³` grid for every configuration.
    Strong { nx: usize },
    /// Grid grows with the core count to keep `cells_per_core` per core.
    Weak { cells_per_core: u64 },
}

/// Cube edge for `cells` cells, rounded up to a multiple of `block`.
pub fn weak_grid_edge(cells: u64, block: usize) -> usize {
    let edge = (cells as f64).cbrt();
    // Guard against cbrt landing just below an exact integer.
    let edge = if (edge.round().powi(3) - cells as f64).abs() < 0.5 { edge.round() } else { edge.ceil() };
    let edge = (edge as usize).max(1);
    edge.div_ceil(block) * block
}

/// The experiment matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub scaling: Scaling,
    pub configs: Vec<(usize, usize)>,
    pub strategies: Vec<ExchangeStrategy>,
    pub schedulings: Vec<Scheduling>,
    pub paths: Vec<IntranodePath>,
    pub steps: u64,
    pub repetitions: usize,
    pub block: usize,
    pub system: PhysicsSystem,
    pub solver: SolverConfig,
    pub init: InitialCondition,
    pub imbalance: Option<ImbalanceProfile>,
    pub energy: Option<EnergyModel>,
}

impl SweepSpec {
    pub fn new(scaling: Scaling, configs: Vec<(usize, usize)>) -> Self {
        Self {
            scaling,
            configs,
            strategies: vec![ExchangeStrategy::Fused],
            schedulings: vec![Scheduling::StaticBlocked],
            paths: vec![IntranodePath::SharedHandoff],
            steps: 10,
            repetitions: 5,
            block: 16,
            system: PhysicsSystem::Advection { velocity: [1.0, 0.0, 0.0] },
            solver: SolverConfig::default(),
            init: InitialCondition::Sine { wavenumber: [1, 1, 1] },
            imbalance: None,
            energy: None,
        }
    }

    /// Grid for a `(ranks, threads)` configuration.
    pub fn grid_for(&self, ranks: usize, threads: usize) -> Result<GridConfig, Error> {
        let nx = match self.scaling {
            Scaling::Strong { nx } => nx,
            Scaling::Weak { cells_per_core } => {
                weak_grid_edge(cells_per_core * (ranks * threads) as u64, self.block)
            }
        };
        Ok(GridConfig::cube(nx, self.block)?)
    }

    /// Every run configuration in sweep order, without repetitions.
    pub fn expand(&self) -> Vec<Result<RunConfig, (usize, usize, Error)>> {
        let mut out = Vec::new();
        for &(ranks, threads) in &self.configs {
            for &strategy in &self.strategies {
                for &scheduling in &self.schedulings {
                    for &path in &self.paths {
                        out.push(match self.grid_for(ranks, threads) {
                            Ok(grid) => {
                                let mut c = RunConfig::new(grid, self.system)
                                    .with_layout(ranks, threads)
                                    .with_engine(strategy, scheduling, path);
                                c.solver = self.solver;
                                c.init = self.init;
                                c.steps = self.steps;
                                c.imbalance = self.imbalance;
                                c.energy = self.energy;
                                Ok(c)
                            }
                            Err(e) => Err((ranks, threads, e)),
                        });
                    }
                }
            }
        }
        out
    }
}

/// Median, min and max wall time of one configuration plus derived figures.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigSummary {
    pub ranks: usize,
    pub threads: usize,
    pub strategy: ExchangeStrategy,
    pub scheduling: Scheduling,
    pub path: IntranodePath,
    pub nx: usize,
    pub runs: usize,
    pub failures: usize,
    pub median_wall_s: f64,
    pub min_wall_s: f64,
    pub max_wall_s: f64,
    pub median_mcups: f64,
    pub speedup: f64,
    pub efficiency: f64,
    /// Interior cells per core actually simulated.
    pub cells_per_core: f64,
    /// `cells_per_core` over the requested workload (weak scaling only).
    pub rounding_factor: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepTable {
    pub rows: Vec<RunMetrics>,
    pub summaries: Vec<ConfigSummary>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

/// Run every configuration `repetitions` times, one run at a time. Failed runs
/// become rows with the error column set.
pub fn run_sweep(spec: &SweepSpec) -> SweepTable {
    let hw = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut table = SweepTable::default();
    let mut baselines: Vec<((ExchangeStrategy, Scheduling, IntranodePath), f64, f64)> = Vec::new();

    for entry in spec.expand() {
        let config = match entry {
            Ok(c) => c,
            Err((ranks, threads, e)) => {
                for rep in 0..spec.repetitions.max(1) {
                    table.rows.push(error_row(spec, ranks, threads, rep, &e));
                }
                continue;
            }
        };
        if config.ranks * config.threads > hw {
            log::warn!(
                "{} ranks x {} threads exceeds the {hw} available hardware threads",
                config.ranks,
                config.threads
            );
        }
        let mut walls = Vec::new();
        let mut mcups = Vec::new();
        let mut failures = 0;
        for rep in 0..spec.repetitions.max(1) {
            match run_once(&config, rep) {
                Ok(r) => {
                    walls.push(r.metrics.wall_s);
                    mcups.push(r.metrics.mcups());
                    table.rows.push(r.metrics);
                }
                Err(e) => {
                    failures += 1;
                    let mut row = error_row(spec, config.ranks, config.threads, rep, &e);
                    row.run_id = config.run_id(rep);
                    row.strategy = config.strategy;
                    row.scheduling = config.scheduling;
                    row.path = config.path;
                    table.rows.push(row);
                }
            }
        }
        let runs = walls.len();
        let (min, max) = walls.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &w| (lo.min(w), hi.max(w)));
        let median_wall_s = median(&mut walls).unwrap_or(f64::NAN);
        let median_mcups = median(&mut mcups).unwrap_or(f64::NAN);
        let cores = (config.ranks * config.threads) as f64;
        let key = (config.strategy, config.scheduling, config.path);
        let (speedup, efficiency) = match baselines.iter().find(|(k, _, _)| *k == key) {
            Some(&(_, ref_mcups, ref_cores)) => {
                let speedup = median_mcups / ref_mcups;
                (speedup, speedup / (cores / ref_cores))
            }
            None => {
                if runs > 0 {
                    baselines.push((key, median_mcups, cores));
                }
                (1.0, 1.0)
            }
        };
        let cells_per_core = config.grid.interior_cells() as f64 / cores;
        let rounding_factor = match spec.scaling {
            Scaling::Weak { cells_per_core: want } => Some(cells_per_core / want as f64),
            Scaling::Strong { .. } => None,
        };
        table.summaries.push(ConfigSummary {
            ranks: config.ranks,
            threads: config.threads,
            strategy: config.strategy,
            scheduling: config.scheduling,
            path: config.path,
            nx: config.grid.cells()[0],
            runs,
            failures,
            median_wall_s,
            min_wall_s: if runs > 0 { min } else { f64::NAN },
            max_wall_s: if runs > 0 { max } else { f64::NAN },
            median_mcups,
            speedup,
            efficiency,
            cells_per_core,
            rounding_factor,
        });
    }
    table
}

fn error_row(spec: &SweepSpec, ranks: usize, threads: usize, rep: usize, e: &Error) -> RunMetrics {
    let nx = spec.grid_for(ranks, threads).map(|g| g.cells()[0]).unwrap_or(0);
    RunMetrics {
        run_id: String::new(),
        ranks,
        threads,
        strategy: spec.strategies.first().copied().unwrap_or(ExchangeStrategy::Fused),
        scheduling: spec.schedulings.first().copied().unwrap_or(Scheduling::StaticBlocked),
        path: spec.paths.first().copied().unwrap_or(IntranodePath::SharedHandoff),
        nx,
        block: spec.block,
        steps: 0,
        rep,
        wall_s: 0.0,
        cellupdates: 0,
        phase: PhaseTimes::default(),
        mem_bytes: 0,
        state_hash: String::new(),
        energy_j: None,
        error: Some(e.to_string()),
    }
}

/// Named sweep presets.
pub const TEMPLATES: [&str; 8] = [
    "strong-threads",
    "strong-ranks",
    "mix-8omp",
    "mix-2mpi",
    "weak",
    "overlap",
    "imbalance",
    "equivalence",
];

/// Build a preset sweep on top of `base`, which supplies the physics, block
/// size, steps and repetitions.
pub fn template(name: &str, base: &SweepSpec) -> Option<SweepSpec> {
    let mut s = base.clone();
    match name {
        "strong-threads" => s.configs = vec![(1, 1), (1, 2), (1, 4), (1, 8)],
        "strong-ranks" => s.configs = vec![(1, 1), (2, 1), (4, 1), (8, 1)],
        // Fixed eight threads per rank, more ranks.
        "mix-8omp" => s.configs = vec![(1, 8), (2, 8), (4, 8)],
        // Fixed two ranks, more threads.
        "mix-2mpi" => s.configs = vec![(2, 1), (2, 2), (2, 4), (2, 8)],
        "weak" => {
            s.scaling = Scaling::Weak { cells_per_core: DEFAULT_CELLS_PER_CORE };
            s.configs = vec![(1, 1), (2, 1), (4, 1), (8, 1)];
        }
        "overlap" => {
            s.configs = vec![(2, 4)];
            s.strategies = vec![ExchangeStrategy::Fused, ExchangeStrategy::SplitOverlap];
            s.paths = vec![IntranodePath::SharedHandoff, IntranodePath::CopyThrough];
        }
        "imbalance" => {
            s.configs = vec![(1, 4)];
            s.strategies = vec![ExchangeStrategy::SplitOverlap];
            s.schedulings = vec![Scheduling::StaticBlocked, Scheduling::dynamic()];
            s.imbalance = Some(ImbalanceProfile::Hashed { seed: 1, max_multiplier: 8 });
        }
        "equivalence" => {
            s.configs = vec![(1, 1), (2, 2), (4, 2), (1, 8)];
            s.strategies = vec![ExchangeStrategy::Fused, ExchangeStrategy::SplitOverlap];
            s.schedulings = vec![Scheduling::StaticBlocked, Scheduling::dynamic()];
            s.paths = vec![IntranodePath::SharedHandoff, IntranodePath::CopyThrough];
        }
        _ => return None,
    }
    Some(s)
}
