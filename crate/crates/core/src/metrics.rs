//! Phase timers, cellupdate accounting and derived performance and energy
//! figures.

use crate::exchange::ExchangeStrategy;
use crate::runtime::{IntranodePath, Scheduling};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("cellupdate count is zero")]
    ZeroCellupdates,
    #[error("all phase timers are zero")]
    NoPhaseTime,
    #[error("invalid energy model: {0}")]
    Energy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Compute,
    Pack,
    LocalCopy,
    CommWait,
    Unpack,
    SerialOther,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::Compute,
        Phase::Pack,
        Phase::LocalCopy,
        Phase::CommWait,
        Phase::Unpack,
        Phase::SerialOther,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Compute => "compute",
            Phase::Pack => "pack",
            Phase::LocalCopy => "localcopy",
            Phase::CommWait => "wait",
            Phase::Unpack => "unpack",
            Phase::SerialOther => "serial",
        }
    }
}

/// Accumulated wall seconds per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    secs: [f64; 6],
}

impl PhaseTimes {
    pub fn from_secs(secs: [f64; 6]) -> Self {
        Self { secs }
    }

    pub fn get(&self, phase: Phase) -> f64 {
        self.secs[phase as usize]
    }

    /// Add `secs` to `phase`. Negative or non-finite amounts are ignored so
    /// accumulators never decrease.
    pub fn add(&mut self, phase: Phase, secs: f64) {
        if secs.is_finite() && secs > 0.0 {
            self.secs[phase as usize] += secs;
        }
    }

    /// Run `f` and charge its duration to `phase`.
    pub fn time<R>(&mut self, phase: Phase, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let out = f();
        self.add(phase, start.elapsed().as_secs_f64());
        out
    }

    pub fn total(&self) -> f64 {
        self.secs.iter().sum()
    }

    pub fn as_array(&self) -> [f64; 6] {
        self.secs
    }

    /// Element-wise mean of several timers.
    pub fn mean(all: &[PhaseTimes]) -> PhaseTimes {
        let mut out = PhaseTimes::default();
        if all.is_empty() {
            return out;
        }
        for t in all {
            for (acc, v) in out.secs.iter_mut().zip(t.secs.iter()) {
                *acc += v;
            }
        }
        for acc in &mut out.secs {
            *acc /= all.len() as f64;
        }
        out
    }
}

/// Communication share of the phase total: (wait + pack + unpack + local
/// copy) / all phases.
pub fn comm_fraction(phase: &PhaseTimes) -> Result<f64, MetricsError> {
    let total = phase.total();
    if total <= 0.0 {
        return Err(MetricsError::NoPhaseTime);
    }
    let comm = phase.get(Phase::CommWait)
        + phase.get(Phase::Pack)
        + phase.get(Phase::Unpack)
        + phase.get(Phase::LocalCopy);
    Ok(comm / total)
}

/// One cell advanced by one integrator sub-step is one cellupdate.
pub fn cellupdates(interior_cells: u64, steps: u64, substeps: u64) -> u64 {
    interior_cells * steps * substeps
}

/// Node power model for energy-to-solution estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel {
    pub node_power_w: f64,
    pub nodes: f64,
    pub carbon_intensity_g_per_kwh: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self { node_power_w: 277.0, nodes: 1.0, carbon_intensity_g_per_kwh: 275.0 }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.node_power_w) || !ok(self.nodes) || !ok(self.carbon_intensity_g_per_kwh) {
            return Err(MetricsError::Energy(format!(
                "power, nodes and carbon intensity must be positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub const JOULES_PER_KWH: f64 = 3.6e6;

/// Joules consumed by `model.nodes` nodes drawing `model.node_power_w` for
/// `wall_s` seconds.
pub fn energy_to_solution(model: &EnergyModel, wall_s: f64) -> f64 {
    model.node_power_w * model.nodes * wall_s
}

/// Energy per million cellupdates, in joules.
pub fn epc6(energy_j: f64, cellupdates: u64) -> Result<f64, MetricsError> {
    if cellupdates == 0 {
        return Err(MetricsError::ZeroCellupdates);
    }
    Ok(energy_j / (cellupdates as f64 / 1e6))
}

/// Energy for `cellupdates` at `kwh_per_million` kWh per 10⁶ cellupdates.
pub fn workload_energy_kwh(cellupdates: u64, kwh_per_million: f64) -> f64 {
    cellupdates as f64 / 1e6 * kwh_per_million
}

/// Grams of CO₂-equivalent for `energy_kwh` at the given carbon intensity.
pub fn co2_equivalent(energy_kwh: f64, intensity_g_per_kwh: f64) -> f64 {
    energy_kwh * intensity_g_per_kwh
}

/// `(speedup, efficiency)` of a run on `cores` relative to a reference run.
pub fn speedup_efficiency(t_ref: f64, cores_ref: f64, t: f64, cores: f64) -> (f64, f64) {
    let speedup = t_ref / t;
    (speedup, speedup / (cores / cores_ref))
}

/// Measured outcome of one benchmark run, with the configuration echoed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub run_id: String,
    pub ranks: usize,
    pub threads: usize,
    pub strategy: ExchangeStrategy,
    pub scheduling: Scheduling,
    pub path: IntranodePath,
    pub nx: usize,
    pub block: usize,
    pub steps: u64,
    pub rep: usize,
    pub wall_s: f64,
    pub cellupdates: u64,
    pub phase: PhaseTimes,
    pub mem_bytes: u64,
    pub state_hash: String,
    pub energy_j: Option<f64>,
    pub error: Option<String>,
}

impl RunMetrics {
    /// Million cellupdates per second.
    pub fn mcups(&self) -> f64 {
        if self.wall_s > 0.0 {
            self.cellupdates as f64 / self.wall_s / 1e6
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn cellupdate_examples() {
        assert_eq!(cellupdates(6_000_000, 2_000_000, 2), 24_000_000_000_000);
        assert_eq!(cellupdates(123, 0, 2), 0);
        assert_eq!(cellupdates(64 * 64 * 64, 50, 2), 26_214_400);
    }

    #[test]
    fn energy_examples() {
        let lenox = EnergyModel { nodes: 16.0, ..EnergyModel::default() };
        let e = energy_to_solution(&lenox, 69.7);
        assert!(rel(e, 309_000.0) < 0.01);
        assert_eq!(energy_to_solution(&lenox, 0.0), 0.0);
        let small = EnergyModel { node_power_w: 100.0, nodes: 1.0, ..EnergyModel::default() };
        assert_eq!(energy_to_solution(&small, 10.0), 1000.0);
    }

    #[test]
    fn epc6_examples() {
        assert!(rel(epc6(307_400.0, 5_300_000_000).unwrap(), 58.0) < 1e-9);
        assert_eq!(epc6(58.0, 1_000_000).unwrap(), 58.0);
        assert_eq!(epc6(1e6, 1_000_000).unwrap(), 1e6);
        assert_eq!(epc6(1.0, 0), Err(MetricsError::ZeroCellupdates));
    }

    #[test]
    fn co2_examples() {
        assert!(rel(co2_equivalent(384.0, 275.0), 105_600.0) < 1e-12);
        assert_eq!(co2_equivalent(0.0, 275.0), 0.0);
        assert!(rel(co2_equivalent(1.6e-5, 275.0), 4.4e-3) < 1e-12);
    }

    #[test]
    fn speedup_examples() {
        let (s, e) = speedup_efficiency(20.0, 160.0, 20.0 / 19.0, 3200.0);
        assert!(rel(s, 19.0) < 1e-12);
        assert!(rel(e, 0.95) < 1e-12);
        assert_eq!(speedup_efficiency(5.0, 4.0, 5.0, 4.0), (1.0, 1.0));
        let (s, e) = speedup_efficiency(100.0, 1.0, 14.0, 8.0);
        assert!((s - 7.142857).abs() < 1e-6);
        assert!((e - 0.892857).abs() < 1e-6);
    }

    #[test]
    fn comm_fraction_examples() {
        let t = PhaseTimes::from_secs([9.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!((comm_fraction(&t).unwrap() - 0.1).abs() < 1e-15);
        let t = PhaseTimes::from_secs([5.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
        assert_eq!(comm_fraction(&t).unwrap(), 0.0);
        let t = PhaseTimes::from_secs([6.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
        assert!((comm_fraction(&t).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(comm_fraction(&PhaseTimes::default()), Err(MetricsError::NoPhaseTime));
    }

    #[test]
    fn timers_never_decrease() {
        let mut t = PhaseTimes::default();
        t.add(Phase::Pack, 1.0);
        t.add(Phase::Pack, -5.0);
        t.add(Phase::Pack, f64::NAN);
        assert_eq!(t.get(Phase::Pack), 1.0);
        let before = t.get(Phase::Compute);
        t.time(Phase::Compute, || std::thread::sleep(std::time::Duration::from_millis(2)));
        assert!(t.get(Phase::Compute) > before);
    }
}
