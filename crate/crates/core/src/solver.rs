//! Second-order explicit finite-volume update for the proxy hyperbolic
//! systems: linear scalar advection and ideal-gas Euler.
//!
//! Spatial discretisation is a per-axis reconstruction (piecewise constant or
//! minmod-limited linear) followed by a Rusanov flux. Time integration is the
//! two-stage Heun scheme. Flux differences are accumulated in x, y, z order so
//! that results do not depend on how the grid is split into blocks.

use crate::grid::{Block, BlockId, NGHOST};
use crate::metrics::{Phase, PhaseTimes};
use crate::runtime::{Scheduling, ThreadPool};
use crate::Error;
use parking_lot::Mutex;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("non-physical state in block {block:?} at cell {cell:?}: density {density}, pressure {pressure}")]
    NonPhysical {
        block: [usize; 3],
        cell: [i64; 3],
        density: f64,
        pressure: f64,
    },
    #[error("invalid solver configuration: {0}")]
    Config(String),
}

/// Raw non-physical state, before a location is attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonPhysicalState {
    pub density: f64,
    pub pressure: f64,
}

impl NonPhysicalState {
    fn at(self, block: BlockId, cell: [i64; 3]) -> SolverError {
        SolverError::NonPhysical {
            block: block.coords,
            cell,
            density: self.density,
            pressure: self.pressure,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhysicsSystem {
    Advection { velocity: [f64; 3] },
    Euler { gamma: f64 },
}

impl PhysicsSystem {
    pub fn advection(velocity: [f64; 3]) -> Result<Self, SolverError> {
        if velocity.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::Config("advection velocity must be finite".into()));
        }
        Ok(Self::Advection { velocity })
    }

    pub fn euler(gamma: f64) -> Result<Self, SolverError> {
        if !(gamma.is_finite() && gamma > 1.0) {
            return Err(SolverError::Config(format!("gamma must be > 1, got {gamma}")));
        }
        Ok(Self::Euler { gamma })
    }

    pub fn nvar(&self) -> usize {
        match self {
            Self::Advection { .. } => 1,
            Self::Euler { .. } => 5,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Advection { .. } => "advection",
            Self::Euler { .. } => "euler",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reconstruction {
    FirstOrder,
    PlmMinmod,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub reconstruction: Reconstruction,
    pub cfl: f64,
    /// Step used when every signal speed is zero.
    pub dt_max: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { reconstruction: Reconstruction::PlmMinmod, cfl: 0.4, dt_max: 1e-2 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(SolverError::Config(format!("cfl must be in (0, 1], got {}", self.cfl)));
        }
        if !(self.dt_max.is_finite() && self.dt_max > 0.0) {
            return Err(SolverError::Config("dt_max must be positive".into()));
        }
        Ok(())
    }
}

/// Number of sub-steps per time step of the integrator.
pub const SUBSTEPS: u64 = 2;

#[inline]
pub fn minmod(a: f64, b: f64) -> f64 {
    if a > 0.0 && b > 0.0 {
        a.min(b)
    } else if a < 0.0 && b < 0.0 {
        a.max(b)
    } else {
        0.0
    }
}

/// Face values `(minus, plus)` of the centre cell given its two neighbours.
#[inline]
pub fn reconstruct_cell(left: f64, centre: f64, right: f64, mode: Reconstruction) -> (f64, f64) {
    match mode {
        Reconstruction::FirstOrder => (centre, centre),
        Reconstruction::PlmMinmod => {
            let half = 0.5 * minmod(centre - left, right - centre);
            (centre - half, centre + half)
        }
    }
}

/// Interface states along a line of cells.
///
/// `line` holds `n + 2·NGHOST` cells; the result has `n + 1` entries, one per
/// interface between cells `NGHOST - 1 + m` and `NGHOST + m`.
pub fn reconstruct_axis(line: &[f64], mode: Reconstruction) -> (Vec<f64>, Vec<f64>) {
    let n = line.len() - 2 * NGHOST;
    let mut left = vec![0.0; n + 1];
    let mut right = vec![0.0; n + 1];
    reconstruct_into(line, mode, &mut left, &mut right);
    (left, right)
}

#[inline]
fn reconstruct_into(line: &[f64], mode: Reconstruction, left: &mut [f64], right: &mut [f64]) {
    let n = line.len() - 2 * NGHOST;
    for m in 0..=n {
        let lc = NGHOST - 1 + m;
        left[m] = reconstruct_cell(line[lc - 1], line[lc], line[lc + 1], mode).1;
        right[m] = reconstruct_cell(line[lc], line[lc + 1], line[lc + 2], mode).0;
    }
}

#[inline]
fn euler_primitive(u: &[f64], gamma: f64) -> Result<(f64, [f64; 3], f64), NonPhysicalState> {
    let rho = u[0];
    let vel = [u[1] / rho, u[2] / rho, u[3] / rho];
    let kinetic = 0.5 * rho * (vel[0] * vel[0] + vel[1] * vel[1] + vel[2] * vel[2]);
    let p = (gamma - 1.0) * (u[4] - kinetic);
    if !(rho > 0.0 && p > 0.0) {
        return Err(NonPhysicalState { density: rho, pressure: p });
    }
    Ok((rho, vel, p))
}

/// Largest wave speed of `u` along `axis`.
pub fn max_signal_speed(
    u: &[f64],
    axis: usize,
    system: &PhysicsSystem,
) -> Result<f64, NonPhysicalState> {
    match *system {
        PhysicsSystem::Advection { velocity } => Ok(velocity[axis].abs()),
        PhysicsSystem::Euler { gamma } => {
            let (rho, vel, p) = euler_primitive(u, gamma)?;
            Ok(vel[axis].abs() + (gamma * p / rho).sqrt())
        }
    }
}

/// Analytic flux of `u` along `axis`; returns the signal speed as well.
#[inline]
fn physical_flux(
    u: &[f64],
    axis: usize,
    system: &PhysicsSystem,
    out: &mut [f64],
) -> Result<f64, NonPhysicalState> {
    match *system {
        PhysicsSystem::Advection { velocity } => {
            out[0] = velocity[axis] * u[0];
            Ok(velocity[axis].abs())
        }
        PhysicsSystem::Euler { gamma } => {
            let (rho, vel, p) = euler_primitive(u, gamma)?;
            let va = vel[axis];
            out[0] = u[0] * va;
            out[1] = u[1] * va;
            out[2] = u[2] * va;
            out[3] = u[3] * va;
            out[1 + axis] += p;
            out[4] = (u[4] + p) * va;
            Ok(va.abs() + (gamma * p / rho).sqrt())
        }
    }
}

/// Analytic flux `F(u)` along `axis`.
pub fn analytic_flux(
    u: &[f64],
    axis: usize,
    system: &PhysicsSystem,
) -> Result<Vec<f64>, NonPhysicalState> {
    let mut out = vec![0.0; system.nvar()];
    physical_flux(u, axis, system, &mut out)?;
    Ok(out)
}

/// Rusanov (local Lax-Friedrichs) flux between `ul` and `ur`, written to `out`.
pub fn numerical_flux(
    ul: &[f64],
    ur: &[f64],
    axis: usize,
    system: &PhysicsSystem,
    out: &mut [f64],
) -> Result<(), NonPhysicalState> {
    let nvar = system.nvar();
    let mut fl = [0.0; 5];
    let mut fr = [0.0; 5];
    let sl = physical_flux(ul, axis, system, &mut fl)?;
    let sr = physical_flux(ur, axis, system, &mut fr)?;
    let smax = sl.max(sr);
    for v in 0..nvar {
        out[v] = 0.5 * (fl[v] + fr[v]) - 0.5 * smax * (ur[v] - ul[v]);
    }
    Ok(())
}

/// Stable step for the interior of the given blocks (before the global
/// minimum is taken). Falls back to `config.dt_max` when nothing moves.
pub fn compute_dt<'a>(
    blocks: impl IntoIterator<Item = &'a Block>,
    system: &PhysicsSystem,
    config: &SolverConfig,
    dx: f64,
) -> Result<f64, SolverError> {
    let mut smax = 0.0f64;
    for block in blocks {
        smax = smax.max(block_max_speed(block, system)?);
    }
    Ok(dt_from_speed(smax, config, dx))
}

pub fn dt_from_speed(smax: f64, config: &SolverConfig, dx: f64) -> f64 {
    if smax > 0.0 {
        config.cfl * dx / smax
    } else {
        config.dt_max
    }
}

/// Maximum signal speed over interior cells and axes of one block.
pub fn block_max_speed(block: &Block, system: &PhysicsSystem) -> Result<f64, SolverError> {
    if let PhysicsSystem::Advection { velocity } = system {
        return Ok(velocity.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    let n = block.size();
    let nvar = block.nvar();
    let mut u = [0.0; 5];
    let mut smax = 0.0f64;
    for k in NGHOST..NGHOST + n {
        for j in NGHOST..NGHOST + n {
            for i in NGHOST..NGHOST + n {
                for (v, slot) in u.iter_mut().enumerate().take(nvar) {
                    *slot = block.get(v, i, j, k);
                }
                for axis in 0..3 {
                    let s = max_signal_speed(&u[..nvar], axis, system)
                        .map_err(|e| e.at(block.id, block.global_cell(i, j, k)))?;
                    smax = smax.max(s);
                }
            }
        }
    }
    Ok(smax)
}

/// Flux divergence `Σ_axes (F_{i+½} − F_{i−½})` of every interior cell,
/// ordered `[var][z][y][x]`. Each cell accumulates x, then y, then z.
pub fn flux_divergence(
    block: &Block,
    system: &PhysicsSystem,
    config: &SolverConfig,
) -> Result<Vec<f64>, SolverError> {
    let n = block.size();
    let p = block.padded();
    let nvar = block.nvar();
    let mut div = vec![0.0; nvar * n * n * n];
    let mut line = vec![0.0; nvar * p];
    let mut left = vec![0.0; nvar * (n + 1)];
    let mut right = vec![0.0; nvar * (n + 1)];
    let mut flux = vec![0.0; nvar * (n + 1)];
    let mut ul = [0.0; 5];
    let mut ur = [0.0; 5];
    let mut f = [0.0; 5];

    for axis in 0..3 {
        for b in 0..n {
            for a in 0..n {
                // (a, b) index the two transverse interior directions.
                let cell = |s: usize| -> [usize; 3] {
                    match axis {
                        0 => [s, NGHOST + a, NGHOST + b],
                        1 => [NGHOST + a, s, NGHOST + b],
                        _ => [NGHOST + a, NGHOST + b, s],
                    }
                };
                for v in 0..nvar {
                    for s in 0..p {
                        let [i, j, k] = cell(s);
                        line[v * p + s] = block.get(v, i, j, k);
                    }
                    reconstruct_into(
                        &line[v * p..(v + 1) * p],
                        config.reconstruction,
                        &mut left[v * (n + 1)..(v + 1) * (n + 1)],
                        &mut right[v * (n + 1)..(v + 1) * (n + 1)],
                    );
                }
                for m in 0..=n {
                    for v in 0..nvar {
                        ul[v] = left[v * (n + 1) + m];
                        ur[v] = right[v * (n + 1) + m];
                    }
                    numerical_flux(&ul[..nvar], &ur[..nvar], axis, system, &mut f[..nvar])
                        .map_err(|e| {
                            let [i, j, k] = cell(NGHOST - 1 + m);
                            e.at(block.id, block.global_cell(i, j, k))
                        })?;
                    for v in 0..nvar {
                        flux[v * (n + 1) + m] = f[v];
                    }
                }
                for v in 0..nvar {
                    for s in 0..n {
                        let [i, j, k] = cell(NGHOST + s);
                        let at = ((v * n + (k - NGHOST)) * n + (j - NGHOST)) * n + (i - NGHOST);
                        div[at] += flux[v * (n + 1) + s + 1] - flux[v * (n + 1) + s];
                    }
                }
            }
        }
    }
    Ok(div)
}

/// Which update a stage applies to the interior cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// `u ← u − dt/dx · div(u)`.
    Forward,
    /// Heun predictor: saves `u⁰`, then `u¹ = u⁰ − dt/dx · div(u⁰)`.
    Predictor,
    /// Heun corrector: `u² = ½u⁰ + ½(u¹ − dt/dx · div(u¹))`.
    Corrector,
}

/// Per-block scratch kept between the two Heun stages.
#[derive(Debug, Clone, Default)]
pub struct StageState {
    saved: Vec<f64>,
}

/// Apply one stage to the interior of `block`. Ghost layers must be current.
///
/// `repeat` re-evaluates the flux divergence that many times and keeps the
/// last result; it inflates compute time without changing the state.
#[allow(clippy::too_many_arguments)]
pub fn update_block_stage(
    block: &mut Block,
    state: &mut StageState,
    dt: f64,
    dx: f64,
    system: &PhysicsSystem,
    config: &SolverConfig,
    stage: Stage,
    repeat: u32,
) -> Result<(), SolverError> {
    let div = crate::bench::apply_imbalance(repeat, || flux_divergence(block, system, config))?;
    let n = block.size();
    let nvar = block.nvar();
    let dtdx = dt / dx;
    if stage == Stage::Predictor {
        state.saved.resize(nvar * n * n * n, 0.0);
    }
    let mut at = 0;
    for v in 0..nvar {
        for k in NGHOST..NGHOST + n {
            for j in NGHOST..NGHOST + n {
                let row = block.index(v, NGHOST, j, k);
                for i in 0..n {
                    let u = &mut block.data[row + i];
                    match stage {
                        Stage::Forward => *u -= dtdx * div[at],
                        Stage::Predictor => {
                            state.saved[at] = *u;
                            *u -= dtdx * div[at];
                        }
                        Stage::Corrector => {
                            *u = 0.5 * state.saved[at] + 0.5 * (*u - dtdx * div[at]);
                        }
                    }
                    at += 1;
                }
            }
        }
    }
    if let PhysicsSystem::Euler { gamma } = *system {
        check_physical(block, gamma)?;
    }
    Ok(())
}

fn check_physical(block: &Block, gamma: f64) -> Result<(), SolverError> {
    let n = block.size();
    let mut u = [0.0; 5];
    for k in NGHOST..NGHOST + n {
        for j in NGHOST..NGHOST + n {
            for i in NGHOST..NGHOST + n {
                for (v, slot) in u.iter_mut().enumerate() {
                    *slot = block.get(v, i, j, k);
                }
                euler_primitive(&u, gamma).map_err(|e| e.at(block.id, block.global_cell(i, j, k)))?;
            }
        }
    }
    Ok(())
}

/// Conserved state of an ideal gas from primitives.
pub fn euler_conserved(rho: f64, vel: [f64; 3], p: f64, gamma: f64) -> [f64; 5] {
    let kinetic = 0.5 * rho * (vel[0] * vel[0] + vel[1] * vel[1] + vel[2] * vel[2]);
    [rho, rho * vel[0], rho * vel[1], rho * vel[2], p / (gamma - 1.0) + kinetic]
}


/// Local stable step over `blocks`, evaluated block-parallel on `pool`.
pub fn local_dt(
    pool: &ThreadPool,
    blocks: &[Mutex<Block>],
    system: &PhysicsSystem,
    config: &SolverConfig,
    dx: f64,
    scheduling: Scheduling,
) -> Result<f64, Error> {
    let speeds: Vec<Mutex<f64>> = blocks.iter().map(|_| Mutex::new(0.0)).collect();
    pool.parallel_for(blocks.len(), scheduling, |b| {
        *speeds[b].lock() = block_max_speed(&blocks[b].lock(), system)?;
        Ok(())
    })?;
    let smax = speeds.into_iter().map(Mutex::into_inner).fold(0.0f64, f64::max);
    Ok(dt_from_speed(smax, config, dx))
}

/// One Heun step of every local block.
///
/// `exchange` refreshes the ghost layers and is called before each of the two
/// stages. `repeat[b]` is the flux re-evaluation count of block `b`. Returns the
/// number of cellupdates performed.
#[allow(clippy::too_many_arguments)]
pub fn rk2_step<X>(
    pool: &ThreadPool,
    blocks: &[Mutex<Block>],
    states: &[Mutex<StageState>],
    repeat: &[u32],
    dt: f64,
    dx: f64,
    system: &PhysicsSystem,
    config: &SolverConfig,
    scheduling: Scheduling,
    times: &mut PhaseTimes,
    mut exchange: X,
) -> Result<u64, Error>
where
    X: FnMut(&mut PhaseTimes) -> Result<(), Error>,
{
    for stage in [Stage::Predictor, Stage::Corrector] {
        exchange(times)?;
        times.time(Phase::Compute, || {
            pool.parallel_for(blocks.len(), scheduling, |b| {
                let mut block = blocks[b].lock();
                let mut state = states[b].lock();
                let times = repeat.get(b).copied().unwrap_or(1);
                update_block_stage(&mut block, &mut state, dt, dx, system, config, stage, times)?;
                Ok(())
            })
        })?;
    }
    let cells: u64 = blocks.iter().map(|b| (b.lock().size() as u64).pow(3)).sum();
    Ok(SUBSTEPS * cells)
}
