//! Benchmark CSV: frozen header, row formatting and a parser for reading
//! results back.

use crate::exchange::ExchangeStrategy;
use crate::metrics::{PhaseTimes, RunMetrics};
use crate::runtime::{IntranodePath, Scheduling};
use crate::Error;
use std::io::{Read, Write};
use std::path::Path;

pub const HEADER: &str = "run_id,ranks,threads,strategy,scheduling,path,nx,block,steps,rep,\
wall_s,cellupdates,mcups,t_compute,t_pack,t_localcopy,t_wait,t_unpack,t_serial,mem_bytes,\
state_hash,energy_j,error";

/// `%g`-style rendering with six significant digits.
pub fn format_g6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn record(m: &RunMetrics) -> Vec<String> {
    let p = m.phase.as_array();
    let mut r = vec![
        m.run_id.clone(),
        m.ranks.to_string(),
        m.threads.to_string(),
        m.strategy.name().to_string(),
        m.scheduling.to_string(),
        m.path.name().to_string(),
        m.nx.to_string(),
        m.block.to_string(),
        m.steps.to_string(),
        m.rep.to_string(),
        format_g6(m.wall_s),
        m.cellupdates.to_string(),
        format_g6(m.mcups()),
    ];
    r.extend(p.iter().map(|&t| format_g6(t)));
    r.push(m.mem_bytes.to_string());
    r.push(m.state_hash.clone());
    r.push(m.energy_j.map(format_g6).unwrap_or_default());
    r.push(m.error.clone().unwrap_or_default());
    r
}

pub fn write_csv<W: Write>(out: W, rows: &[RunMetrics]) -> Result<(), Error> {
    let mut w = ::csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let csv_err = |e: ::csv::Error| Error::Csv(e.to_string());
    w.write_record(HEADER.split(',')).map_err(csv_err)?;
    for m in rows {
        w.write_record(record(m)).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

pub fn emit_csv(rows: &[RunMetrics], path: &Path) -> Result<(), Error> {
    let io = |source| Error::Io { path: path.display().to_string(), source };
    let file = std::fs::File::create(path).map_err(io)?;
    write_csv(std::io::BufWriter::new(file), rows)
}

/// A parsed CSV row: the metrics plus the stored `mcups` column.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub metrics: RunMetrics,
    pub mcups: f64,
}

pub fn parse_csv<R: Read>(input: R) -> Result<Vec<CsvRow>, Error> {
    let mut r = ::csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers().map_err(|e| Error::Csv(e.to_string()))?;
    let got = header.iter().collect::<Vec<_>>().join(",");
    if got != HEADER {
        return Err(Error::Csv(format!("unexpected header: {got}")));
    }
    let mut rows = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
        let line = n + 2;
        let field = |i: usize| rec.get(i).unwrap_or("");
        fn parse<T: std::str::FromStr>(s: &str, col: &str, line: usize) -> Result<T, Error> {
            s.parse().map_err(|_| Error::Csv(format!("line {line}: bad {col} value {s:?}")))
        }
        let strategy: ExchangeStrategy = parse(field(3), "strategy", line)?;
        let scheduling: Scheduling = parse(field(4), "scheduling", line)?;
        let path: IntranodePath = parse(field(5), "path", line)?;
        let mut phase = [0.0; 6];
        for (k, slot) in phase.iter_mut().enumerate() {
            *slot = parse(field(13 + k), "phase time", line)?;
        }
        let energy = field(21);
        let error = field(22);
        let metrics = RunMetrics {
            run_id: field(0).to_string(),
            ranks: parse(field(1), "ranks", line)?,
            threads: parse(field(2), "threads", line)?,
            strategy,
            scheduling,
            path,
            nx: parse(field(6), "nx", line)?,
            block: parse(field(7), "block", line)?,
            steps: parse(field(8), "steps", line)?,
            rep: parse(field(9), "rep", line)?,
            wall_s: parse(field(10), "wall_s", line)?,
            cellupdates: parse(field(11), "cellupdates", line)?,
            phase: PhaseTimes::from_secs(phase),
            mem_bytes: parse(field(19), "mem_bytes", line)?,
            state_hash: field(20).to_string(),
            energy_j: if energy.is_empty() { None } else { Some(parse(energy, "energy_j", line)?) },
            error: (!error.is_empty()).then(|| error.to_string()),
        };
        rows.push(CsvRow { metrics, mcups: parse(field(12), "mcups", line)? });
    }
    Ok(rows)
}
