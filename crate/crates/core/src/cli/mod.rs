//! Command-line interface: configuration resolution, the `run`, `sweep` and
//! `validate` subcommands, and CSV output.
//!
//! Every option exists both as a `--key value` flag and as a `key = value`
//! line of a spec file passed with `--spec`. Flags win over the file, the
//! file wins over built-in defaults.

pub mod csv;
pub mod validate;

use crate::bench::{self, ImbalanceProfile, InitialCondition, RunConfig, Scaling, SweepSpec, SweepTable};
use crate::exchange::{ExchangeStrategy, Fault};
use crate::grid::GridConfig;
use crate::metrics::EnergyModel;
use crate::runtime::{IntranodePath, Scheduling};
use crate::solver::{PhysicsSystem, Reconstruction, SolverConfig};
use crate::Error;
use clap::{Arg, ArgMatches, Command};
use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// One configuration key, usable as a flag and as a spec-file entry.
pub struct Key {
    pub name: &'static str,
    pub value: &'static str,
    pub help: &'static str,
    pub hidden: bool,
}

const fn key(name: &'static str, value: &'static str, help: &'static str) -> Key {
    Key { name, value, help, hidden: false }
}

pub const KEYS: &[Key] = &[
    key("nx", "N", "cells per axis (default 64)"),
    key("block", "B", "block edge length in cells (default 16)"),
    key("system", "NAME", "advection or euler (default advection)"),
    key("velocity", "VX,VY,VZ", "advection velocity (default 1,0,0)"),
    key("gamma", "G", "euler adiabatic index (default 1.4)"),
    key("reconstruction", "MODE", "plm or first-order (default plm)"),
    key("cfl", "C", "Courant number (default 0.4)"),
    key("init", "IC", "sine, uniform, sod or random:SEED (default sine)"),
    key("steps", "N", "time steps (default 10)"),
    key("t-end", "T", "integrate to this time instead of a step count"),
    key("ranks", "N", "simulated ranks (default 1)"),
    key("threads", "N", "worker threads per rank (default 1)"),
    key("strategy", "S", "fused or split-overlap; comma list for sweeps (default fused)"),
    key("scheduling", "S", "static, dynamic or dynamic:CHUNK; comma list for sweeps (default static)"),
    key("path", "P", "shared-handoff or copy-through; comma list for sweeps (default shared-handoff)"),
    key("output", "FILE", "CSV destination (default stdout)"),
    key("template", "NAME", "sweep preset"),
    key("configs", "RxT,...", "sweep layouts as ranks x threads, e.g. 1x1,1x2,2x2"),
    key("weak", "CELLS", "weak scaling with this many cells per core"),
    key("reps", "N", "repetitions per sweep configuration (default 5)"),
    key("imbalance", "SEED:K", "per-block work multipliers in [1, K]"),
    key("power", "WATTS", "node power; enables energy estimates"),
    key("nodes", "N", "node count for energy estimates (default 1)"),
    key("carbon", "G_PER_KWH", "carbon intensity (default 275)"),
    Key {
        name: "fault",
        value: "FAULT",
        help: "inject a defect: skip-exchange[:CALL]",
        hidden: true,
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Run,
    Sweep,
    Validate,
}

/// Fully resolved command-line configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub command: Subcommand,
    pub nx: usize,
    pub block: usize,
    pub system: PhysicsSystem,
    pub solver: SolverConfig,
    pub init: InitialCondition,
    pub steps: u64,
    pub t_end: Option<f64>,
    pub ranks: usize,
    pub threads: usize,
    pub strategies: Vec<ExchangeStrategy>,
    pub schedulings: Vec<Scheduling>,
    pub paths: Vec<IntranodePath>,
    pub output: Option<PathBuf>,
    pub template: Option<String>,
    pub configs: Option<Vec<(usize, usize)>>,
    pub weak_cells_per_core: Option<u64>,
    pub repetitions: usize,
    pub imbalance: Option<ImbalanceProfile>,
    pub energy: Option<EnergyModel>,
    pub fault: Option<Fault>,
    /// Keys set by a flag or the spec file rather than defaulted.
    pub explicit: BTreeSet<&'static str>,
}

impl CliConfig {
    pub fn strategy(&self) -> ExchangeStrategy {
        self.strategies[0]
    }

    pub fn scheduling(&self) -> Scheduling {
        self.schedulings[0]
    }

    pub fn path(&self) -> IntranodePath {
        self.paths[0]
    }

    pub fn grid(&self) -> Result<GridConfig, Error> {
        Ok(GridConfig::cube(self.nx, self.block)?)
    }

    pub fn run_config(&self) -> Result<RunConfig, Error> {
        let mut c = RunConfig::new(self.grid()?, self.system)
            .with_layout(self.ranks, self.threads)
            .with_engine(self.strategy(), self.scheduling(), self.path());
        c.solver = self.solver;
        c.init = self.init;
        c.steps = self.steps;
        c.t_end = self.t_end;
        c.imbalance = self.imbalance;
        c.energy = self.energy;
        c.fault = self.fault;
        Ok(c)
    }

    /// The sweep described by the template (if any) with explicit keys
    /// layered on top.
    pub fn sweep_spec(&self) -> Result<SweepSpec, Error> {
        let scaling = match self.weak_cells_per_core {
            Some(cells_per_core) => Scaling::Weak { cells_per_core },
            None => Scaling::Strong { nx: self.nx },
        };
        let mut base = SweepSpec::new(scaling, vec![(self.ranks, self.threads)]);
        base.steps = self.steps;
        base.repetitions = self.repetitions;
        base.block = self.block;
        base.system = self.system;
        base.solver = self.solver;
        base.init = self.init;
        base.imbalance = self.imbalance;
        base.energy = self.energy;
        base.strategies = self.strategies.clone();
        base.schedulings = self.schedulings.clone();
        base.paths = self.paths.clone();
        let mut spec = match &self.template {
            Some(name) => bench::template(name, &base).ok_or_else(|| {
                Error::Usage(format!(
                    "--template {name} is not a known template (expected one of {})",
                    bench::TEMPLATES.join(", ")
                ))
            })?,
            None => base,
        };
        let set = |k: &str| self.explicit.contains(k);
        if let Some(configs) = &self.configs {
            spec.configs = configs.clone();
        } else if set("ranks") || set("threads") {
            spec.configs = vec![(self.ranks, self.threads)];
        }
        if set("strategy") {
            spec.strategies = self.strategies.clone();
        }
        if set("scheduling") {
            spec.schedulings = self.schedulings.clone();
        }
        if set("path") {
            spec.paths = self.paths.clone();
        }
        if set("imbalance") {
            spec.imbalance = self.imbalance;
        }
        if set("weak") {
            spec.scaling = scaling;
        } else if set("nx") {
            if let Scaling::Strong { .. } = spec.scaling {
                spec.scaling = scaling;
            }
        }
        Ok(spec)
    }

    /// Spec-file text reproducing this configuration, used as the sweep
    /// manifest.
    pub fn to_spec_file(&self, spec: &SweepSpec) -> String {
        let mut s = String::from("# resolved halolab sweep\n");
        let join = |v: Vec<String>| v.join(",");
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match spec.scaling {
            Scaling::Strong { nx } => put("nx", nx.to_string()),
            Scaling::Weak { cells_per_core } => put("weak", cells_per_core.to_string()),
        }
        put("block", spec.block.to_string());
        match spec.system {
            PhysicsSystem::Advection { velocity: [a, b, c] } => {
                put("system", "advection".into());
                put("velocity", format!("{a},{b},{c}"));
            }
            PhysicsSystem::Euler { gamma } => {
                put("system", "euler".into());
                put("gamma", gamma.to_string());
            }
        }
        put("reconstruction", reconstruction_name(spec.solver.reconstruction).into());
        put("cfl", spec.solver.cfl.to_string());
        put("init", spec.init.name());
        put("steps", spec.steps.to_string());
        put("configs", join(spec.configs.iter().map(|(r, t)| format!("{r}x{t}")).collect()));
        put("strategy", join(spec.strategies.iter().map(|s| s.name().to_string()).collect()));
        put("scheduling", join(spec.schedulings.iter().map(|s| s.to_string()).collect()));
        put("path", join(spec.paths.iter().map(|p| p.name().to_string()).collect()));
        put("reps", spec.repetitions.to_string());
        if let Some(ImbalanceProfile::Hashed { seed, max_multiplier }) = spec.imbalance {
            put("imbalance", format!("{seed}:{max_multiplier}"));
        }
        if let Some(e) = spec.energy {
            put("power", e.node_power_w.to_string());
            put("nodes", e.nodes.to_string());
            put("carbon", e.carbon_intensity_g_per_kwh.to_string());
        }
        s
    }
}

fn reconstruction_name(r: Reconstruction) -> &'static str {
    match r {
        Reconstruction::FirstOrder => "first-order",
        Reconstruction::PlmMinmod => "plm",
    }
}

/// Where a raw value came from, for error messages.
#[derive(Debug, Clone, PartialEq)]
enum Source {
    Flag,
    File(String, usize),
}

#[derive(Debug, Clone)]
struct Raw {
    value: String,
    source: Source,
}

impl Raw {
    fn label(&self, key: &str) -> String {
        match &self.source {
            Source::Flag => format!("--{key} {}", self.value),
            Source::File(file, line) => format!("{key} = {} ({file}:{line})", self.value),
        }
    }
}

/// Parse `key = value` lines. Blank lines and `#` comments are skipped;
/// underscores in keys are read as dashes.
pub fn parse_spec_file(text: &str, name: &str) -> Result<Vec<(&'static str, String, usize)>, Error> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Usage(format!("{name}:{}: expected key = value, got {line:?}", n + 1))
        })?;
        let k = k.trim().replace('_', "-");
        let key = KEYS.iter().find(|key| key.name == k).ok_or_else(|| {
            Error::Usage(format!("{name}:{}: unknown key {k:?}", n + 1))
        })?;
        out.push((key.name, v.trim().to_string(), n + 1));
    }
    Ok(out)
}

fn command() -> Command {
    let mut cmd = Command::new("halolab")
        .about("Hybrid-parallel halo-exchange proxy application")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("spec")
                .long("spec")
                .value_name("FILE")
                .global(true)
                .help("key = value file supplying defaults for any option"),
        );
    for k in KEYS {
        cmd = cmd.arg(
            Arg::new(k.name)
                .long(k.name)
                .value_name(k.value)
                .help(k.help)
                .hide(k.hidden)
                .global(true),
        );
    }
    cmd.subcommand(Command::new("run").about("Execute one configuration and emit one CSV row"))
        .subcommand(Command::new("sweep").about("Execute a scaling sweep and emit one CSV row per run"))
        .subcommand(Command::new("validate").about("Run the built-in correctness checks"))
}

/// Parse argv (program name first) and an optional spec file into a
/// resolved configuration.
pub fn parse_config<I, T>(argv: I) -> Result<CliConfig, Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = command().try_get_matches_from(argv).map_err(|e| Error::Usage(e.to_string()))?;
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let subcommand = match name {
        "run" => Subcommand::Run,
        "sweep" => Subcommand::Sweep,
        _ => Subcommand::Validate,
    };
    let file = match sub.get_one::<String>("spec") {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|source| Error::Io { path: path.clone(), source })?;
            Some((path.clone(), text))
        }
        None => None,
    };
    resolve(subcommand, sub, file.as_ref().map(|(p, t)| (p.as_str(), t.as_str())))
}

fn resolve(command: Subcommand, m: &ArgMatches, file: Option<(&str, &str)>) -> Result<CliConfig, Error> {
    let mut raw: BTreeMap<&'static str, Raw> = BTreeMap::new();
    if let Some((name, text)) = file {
        for (k, value, line) in parse_spec_file(text, name)? {
            raw.insert(k, Raw { value, source: Source::File(name.to_string(), line) });
        }
    }
    for k in KEYS {
        if let Some(v) = m.get_one::<String>(k.name) {
            raw.insert(k.name, Raw { value: v.clone(), source: Source::Flag });
        }
    }
    Resolver { raw }.build(command)
}

struct Resolver {
    raw: BTreeMap<&'static str, Raw>,
}

impl Resolver {
    fn get<T>(&self, key: &str, default: T, parse: impl Fn(&str) -> Result<T, String>) -> Result<T, Error> {
        match self.raw.get(key) {
            None => Ok(default),
            Some(r) => parse(r.value.trim()).map_err(|why| Error::Usage(format!("{}: {why}", r.label(key)))),
        }
    }

    fn opt<T>(&self, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<Option<T>, Error> {
        self.get(key, None, |s| parse(s).map(Some))
    }

    fn label(&self, key: &str, fallback: impl std::fmt::Display) -> String {
        match self.raw.get(key) {
            Some(r) => r.label(key),
            None => format!("--{key} {fallback}"),
        }
    }

    fn build(&self, command: Subcommand) -> Result<CliConfig, Error> {
        let nx = self.get("nx", 64, positive)?;
        let block = self.get("block", 16, positive)?;
        let steps = self.get("steps", 10u64, |s| s.parse().map_err(|_| "expected a non-negative integer".into()))?;
        let t_end = self.opt("t-end", non_negative)?;
        let ranks = self.get("ranks", 1, positive)?;
        let threads = self.get("threads", 1, positive)?;
        let repetitions = self.get("reps", 5, positive)?;
        let velocity = self.get("velocity", [1.0, 0.0, 0.0], triple)?;
        let gamma = self.get("gamma", 1.4, |s| {
            let g: f64 = s.parse().map_err(|_| "expected a number".to_string())?;
            if g > 1.0 && g.is_finite() {
                Ok(g)
            } else {
                Err("must be greater than 1".into())
            }
        })?;
        let system = self.get("system", PhysicsSystem::Advection { velocity }, |s| match s {
            "advection" => Ok(PhysicsSystem::Advection { velocity }),
            "euler" => Ok(PhysicsSystem::Euler { gamma }),
            _ => Err("expected advection or euler".into()),
        })?;
        let reconstruction = self.get("reconstruction", Reconstruction::PlmMinmod, |s| match s {
            "plm" | "plm-minmod" => Ok(Reconstruction::PlmMinmod),
            "first-order" => Ok(Reconstruction::FirstOrder),
            _ => Err("expected plm or first-order".into()),
        })?;
        let cfl = self.get("cfl", 0.4, |s| {
            let c: f64 = s.parse().map_err(|_| "expected a number".to_string())?;
            if c > 0.0 && c <= 1.0 {
                Ok(c)
            } else {
                Err("must lie in (0, 1]".into())
            }
        })?;
        let solver = SolverConfig { reconstruction, cfl, ..SolverConfig::default() };
        let init = self.get("init", InitialCondition::Sine { wavenumber: [1, 1, 1] }, parse_init)?;
        let strategies = self.get("strategy", vec![ExchangeStrategy::Fused], list)?;
        let schedulings = self.get("scheduling", vec![Scheduling::StaticBlocked], list)?;
        let paths = self.get("path", vec![IntranodePath::SharedHandoff], list)?;
        let output = self.opt("output", |s| Ok(PathBuf::from(s)))?;
        let template = self.opt("template", |s| {
            if bench::TEMPLATES.contains(&s) {
                Ok(s.to_string())
            } else {
                Err(format!("unknown template (expected one of {})", bench::TEMPLATES.join(", ")))
            }
        })?;
        let configs = self.opt("configs", parse_configs)?;
        let weak_cells_per_core = self.opt("weak", |s| match s.parse::<u64>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err("expected a positive cell count".into()),
        })?;
        let imbalance = self.opt("imbalance", |s| {
            let (seed, k) = s.split_once(':').ok_or("expected SEED:K")?;
            let seed = seed.parse().map_err(|_| "bad seed")?;
            let max_multiplier = k.parse().ok().filter(|&k: &u32| k >= 1).ok_or("K must be at least 1")?;
            Ok(ImbalanceProfile::Hashed { seed, max_multiplier })
        })?;
        let power = self.opt("power", positive_f64)?;
        let nodes = self.get("nodes", 1.0, positive_f64)?;
        let carbon = self.get("carbon", 275.0, positive_f64)?;
        let energy = power.map(|p| EnergyModel { node_power_w: p, nodes, carbon_intensity_g_per_kwh: carbon });
        let fault = self.opt("fault", |s| {
            let call = match s.split_once(':') {
                None if s == "skip-exchange" => 0,
                Some(("skip-exchange", n)) => n.parse().map_err(|_| "bad call index")?,
                _ => return Err("expected skip-exchange[:CALL]".into()),
            };
            Ok(Fault::SkipExchange { call })
        })?;

        let cfg = CliConfig {
            command,
            nx,
            block,
            system,
            solver,
            init,
            steps,
            t_end,
            ranks,
            threads,
            strategies,
            schedulings,
            paths,
            output,
            template,
            configs,
            weak_cells_per_core,
            repetitions,
            imbalance,
            energy,
            fault,
            explicit: self.raw.keys().copied().collect(),
        };
        self.check(&cfg)?;
        Ok(cfg)
    }

    /// Cross-key checks.
    fn check(&self, c: &CliConfig) -> Result<(), Error> {
        if c.block < crate::grid::NGHOST {
            return Err(Error::Usage(format!(
                "{} is smaller than the ghost width {}",
                self.label("block", c.block),
                crate::grid::NGHOST
            )));
        }
        let weak = c.command == Subcommand::Sweep && c.weak_cells_per_core.is_some();
        if !weak && !c.nx.is_multiple_of(c.block) {
            return Err(Error::Usage(format!(
                "{} is not divisible by {}",
                self.label("nx", c.nx),
                self.label("block", c.block)
            )));
        }
        if c.command == Subcommand::Run {
            for key in ["strategy", "scheduling", "path"] {
                if self.raw.get(key).is_some_and(|r| r.value.contains(',')) {
                    return Err(Error::Usage(format!(
                        "{}: run takes a single value",
                        self.label(key, "")
                    )));
                }
            }
            let nblocks = (c.nx / c.block).pow(3);
            if c.ranks > nblocks {
                return Err(Error::Usage(format!(
                    "{} exceeds the {nblocks} blocks of the grid ({}, {})",
                    self.label("ranks", c.ranks),
                    self.label("nx", c.nx),
                    self.label("block", c.block)
                )));
            }
        }
        if c.command == Subcommand::Sweep && c.template.is_none() && c.configs.is_none() {
            log::info!("no --template or --configs given; sweeping the single layout {}x{}", c.ranks, c.threads);
        }
        Ok(())
    }
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err("expected a positive integer".into()),
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err("expected a positive number".into()),
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err("expected a non-negative number".into()),
    }
}

fn triple(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect::<Option<_>>()
        .ok_or("expected three comma-separated numbers")?;
    parts.try_into().map_err(|_| "expected three comma-separated numbers".into())
}

fn list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse::<T>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err("expected at least one value".into());
    }
    Ok(items)
}

fn parse_init(s: &str) -> Result<InitialCondition, String> {
    match s.split_once(':') {
        None => match s {
            "sine" => Ok(InitialCondition::Sine { wavenumber: [1, 1, 1] }),
            "uniform" => Ok(InitialCondition::Uniform),
            "sod" => Ok(InitialCondition::SodPair),
            "random" => Ok(InitialCondition::Random { seed: 0 }),
            _ => Err("expected sine, uniform, sod or random:SEED".into()),
        },
        Some(("random", seed)) => seed
            .parse()
            .map(|seed| InitialCondition::Random { seed })
            .map_err(|_| "bad random seed".into()),
        Some(("sine", k)) => {
            let k: Vec<i32> = k.split(',').map(|v| v.trim().parse().ok()).collect::<Option<_>>().ok_or("bad wavenumber")?;
            let wavenumber: [i32; 3] = k.try_into().map_err(|_| "sine takes three wavenumbers")?;
            Ok(InitialCondition::Sine { wavenumber })
        }
        _ => Err("expected sine, uniform, sod or random:SEED".into()),
    }
}

fn parse_configs(s: &str) -> Result<Vec<(usize, usize)>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (r, t) = p.trim().split_once('x').ok_or_else(|| format!("{p:?} is not RANKSxTHREADS"))?;
            Ok((positive(r)?, positive(t)?))
        })
        .collect()
}

/// Entry point behind the binary; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let config = match command().try_get_matches_from(&argv) {
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return EXIT_OK;
        }
        Err(e) if e.kind() == clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            return EXIT_USAGE;
        }
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
        Ok(_) => match parse_config(&argv) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_USAGE;
            }
        },
    };
    match execute(&config) {
        Ok(code) => code,
        Err(e @ Error::Usage(_)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

/// Carry out a resolved command; returns the exit code.
pub fn execute(config: &CliConfig) -> Result<i32, Error> {
    match config.command {
        Subcommand::Run => {
            let run = config.run_config()?;
            let result = bench::run_once(&run, 0)?;
            let m = &result.metrics;
            eprintln!(
                "{} ranks x {} threads, {}: {} steps in {:.3} s, {:.2} MCUPS, hash {}",
                m.ranks,
                m.threads,
                m.strategy.name(),
                m.steps,
                m.wall_s,
                m.mcups(),
                m.state_hash
            );
            write_rows(std::slice::from_ref(m), config.output.as_deref())?;
            Ok(EXIT_OK)
        }
        Subcommand::Sweep => {
            let spec = config.sweep_spec()?;
            let table = bench::run_sweep(&spec);
            eprint!("{}", summary_table(&table));
            write_rows(&table.rows, config.output.as_deref())?;
            if let Some(out) = &config.output {
                let manifest = manifest_path(out);
                std::fs::write(&manifest, config.to_spec_file(&spec))
                    .map_err(|source| Error::Io { path: manifest.display().to_string(), source })?;
            }
            let failed = table.rows.iter().any(|r| r.error.is_some());
            Ok(if failed { EXIT_FAILURE } else { EXIT_OK })
        }
        Subcommand::Validate => {
            let report = validate::run_suite(config.fault);
            print!("{}", validate::format_report(&report));
            Ok(if report.iter().all(|c| c.passed) { EXIT_OK } else { EXIT_FAILURE })
        }
    }
}

/// Location of the manifest written next to a sweep CSV.
pub fn manifest_path(csv: &Path) -> PathBuf {
    csv.with_extension("manifest")
}

fn write_rows(rows: &[crate::metrics::RunMetrics], output: Option<&Path>) -> Result<(), Error> {
    match output {
        Some(path) => csv::emit_csv(rows, path),
        None => csv::write_csv(std::io::stdout().lock(), rows),
    }
}

/// Human-readable per-configuration summary of a sweep.
pub fn summary_table(table: &SweepTable) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>5} {:>7} {:>13} {:>10} {:>14} {:>5} {:>10} {:>10} {:>8} {:>7} {:>5}",
        "ranks", "threads", "strategy", "sched", "path", "nx", "median_s", "mcups", "speedup", "eff", "fail"
    );
    for c in &table.summaries {
        let _ = writeln!(
            s,
            "{:>5} {:>7} {:>13} {:>10} {:>14} {:>5} {:>10.4} {:>10.2} {:>8.3} {:>7.3} {:>5}",
            c.ranks,
            c.threads,
            c.strategy.name(),
            c.scheduling.to_string(),
            c.path.name(),
            c.nx,
            c.median_wall_s,
            c.median_mcups,
            c.speedup,
            c.efficiency,
            c.failures
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<CliConfig, Error> {
        parse_config(std::iter::once("halolab").chain(args.iter().copied()))
    }

    #[test]
    fn defaults() {
        let c = parse(&["run"]).unwrap();
        assert_eq!(c.command, Subcommand::Run);
        assert_eq!((c.nx, c.block, c.ranks, c.threads), (64, 16, 1, 1));
        assert_eq!(c.system, PhysicsSystem::Advection { velocity: [1.0, 0.0, 0.0] });
        assert_eq!(c.strategy(), ExchangeStrategy::Fused);
        assert_eq!(c.scheduling(), Scheduling::StaticBlocked);
        assert_eq!(c.path(), IntranodePath::SharedHandoff);
        assert!(c.energy.is_none());
        assert!(c.explicit.is_empty());
    }

    #[test]
    fn flags_are_echoed() {
        let c = parse(&["run", "--ranks", "2", "--threads", "4", "--strategy", "split-overlap"]).unwrap();
        assert_eq!((c.ranks, c.threads), (2, 4));
        assert_eq!(c.strategy(), ExchangeStrategy::SplitOverlap);
    }

    #[test]
    fn indivisible_grid_names_flags() {
        let e = parse(&["run", "--block", "15", "--nx", "64"]).unwrap_err().to_string();
        assert!(e.contains("--nx 64"), "{e}");
        assert!(e.contains("--block 15"), "{e}");
        assert!(e.contains("divisible"), "{e}");
    }

    #[test]
    fn bad_values_name_the_flag() {
        let e = parse(&["run", "--threads", "0"]).unwrap_err().to_string();
        assert!(e.contains("--threads 0"), "{e}");
        let e = parse(&["run", "--strategy", "eager"]).unwrap_err().to_string();
        assert!(e.contains("--strategy eager"), "{e}");
        let e = parse(&["run", "--ranks", "9", "--nx", "32"]).unwrap_err().to_string();
        assert!(e.contains("--ranks 9") && e.contains("8 blocks"), "{e}");
        assert!(parse(&["run", "--bogus", "1"]).is_err());
        assert!(parse(&["run", "--strategy", "fused,split-overlap"]).is_err());
    }

    #[test]
    fn spec_file_rejects_unknown_keys() {
        let e = parse_spec_file("nx = 32\nwibble = 3\n", "f.txt").unwrap_err().to_string();
        assert!(e.contains("f.txt:2") && e.contains("wibble"), "{e}");
        let ok = parse_spec_file("# c\n\nt_end = 1\n", "f.txt").unwrap();
        assert_eq!(ok, vec![("t-end", "1".to_string(), 3)]);
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("s.txt");
        std::fs::write(&f, "nx = 32\nthreads = 2\nsystem = euler\n").unwrap();
        let c = parse(&["run", "--spec", f.to_str().unwrap(), "--threads", "3"]).unwrap();
        assert_eq!(c.nx, 32);
        assert_eq!(c.threads, 3);
        assert_eq!(c.ranks, 1);
        assert!(matches!(c.system, PhysicsSystem::Euler { .. }));
        std::fs::write(&f, "block = 15\n").unwrap();
        let e = parse(&["run", "--spec", f.to_str().unwrap()]).unwrap_err().to_string();
        assert!(e.contains("s.txt:1"), "{e}");
    }

    #[test]
    fn sweep_lists_and_templates() {
        let c = parse(&["sweep", "--template", "overlap", "--nx", "32"]).unwrap();
        let s = c.sweep_spec().unwrap();
        assert_eq!(s.configs, vec![(2, 4)]);
        assert_eq!(s.strategies.len(), 2);
        assert_eq!(s.scaling, Scaling::Strong { nx: 32 });
        let c = parse(&["sweep", "--configs", "1x1,2x2", "--strategy", "fused,split-overlap"]).unwrap();
        let s = c.sweep_spec().unwrap();
        assert_eq!(s.configs, vec![(1, 1), (2, 2)]);
        assert_eq!(s.strategies, vec![ExchangeStrategy::Fused, ExchangeStrategy::SplitOverlap]);
        let c = parse(&["sweep", "--template", "weak"]).unwrap();
        assert!(matches!(c.sweep_spec().unwrap().scaling, Scaling::Weak { cells_per_core: 65536 }));
    }

    #[test]
    fn manifest_round_trips() {
        let c = parse(&["sweep", "--template", "imbalance", "--nx", "32", "--reps", "2", "--power", "277"]).unwrap();
        let spec = c.sweep_spec().unwrap();
        let text = c.to_spec_file(&spec);
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("m.manifest");
        std::fs::write(&f, &text).unwrap();
        let again = parse(&["sweep", "--spec", f.to_str().unwrap()]).unwrap();
        assert_eq!(again.sweep_spec().unwrap(), spec);
    }
}
