//! Edge runner, cloud server, wire protocol and the three-strategy
//! benchmark.

mod cloud;
mod edge;
mod profile;
pub mod wire;

use std::fmt::Write as _;

pub use cloud::{CloudHandle, CloudServer};
pub use edge::{edge_run, edge_run_traced, CloudClient, EdgeGate, SampleOutcome, Strategy};
pub use profile::{simulate_delay, NetMode, NetProfile};
pub use wire::{decode_message, encode_message, WireMessage};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Network;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub strategy: Strategy,
    pub runtime_s: f64,
    pub accuracy: f64,
    pub offload_fraction: f64,
    pub samples: usize,
}

pub const BENCH_HEADER: &str = "strategy,runtime_s,accuracy,offload_fraction,samples";

pub fn bench_csv(reports: &[BenchReport]) -> String {
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.strategy, r.runtime_s, r.accuracy, r.offload_fraction, r.samples
        )
        .unwrap();
    }
    out
}

pub fn parse_bench_csv(text: &str) -> Result<Vec<BenchReport>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(BENCH_HEADER) {
        return Err(Error::input("bench CSV header mismatch"));
    }
    let bad = |n: usize, what: &str| Error::input(format!("bench CSV line {n}: bad {what}"));
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let n = i + 2;
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 5 {
                return Err(bad(n, "field count"));
            }
            Ok(BenchReport {
                strategy: f[0].parse()?,
                runtime_s: f[1].parse().map_err(|_| bad(n, "runtime_s"))?,
                accuracy: f[2].parse().map_err(|_| bad(n, "accuracy"))?,
                offload_fraction: f[3].parse().map_err(|_| bad(n, "offload_fraction"))?,
                samples: f[4].parse().map_err(|_| bad(n, "samples"))?,
            })
        })
        .collect()
}

/// Fixed-width table with one row per strategy.
pub fn render_table(reports: &[BenchReport]) -> String {
    let mut out = String::new();
    writeln!(out, "{:<12} {:>12} {:>10} {:>9} {:>8}", "Strategy", "Runtime (s)", "Accuracy", "Offload", "Samples").unwrap();
    for r in reports {
        writeln!(
            out,
            "{:<12} {:>12.3} {:>9.2}% {:>8.1}% {:>8}",
            r.strategy.as_str(),
            r.runtime_s,
            r.accuracy * 100.0,
            r.offload_fraction * 100.0,
            r.samples
        )
        .unwrap();
    }
    out
}

pub struct Comparison {
    pub reports: Vec<BenchReport>,
    pub csv: String,
    pub table: String,
}

/// Serve `teacher` on an ephemeral local port and run all three strategies
/// over `data` in the same order.
pub fn bench_compare(
    data: &Dataset,
    student: &Network,
    teacher: &Network,
    gate: &EdgeGate,
    profile: &NetProfile,
) -> Result<Comparison> {
    let server = CloudServer::bind(teacher.clone(), "127.0.0.1:0", *profile)?.spawn()?;
    let addr = server.addr.to_string();
    let reports = Strategy::ALL
        .iter()
        .map(|&s| edge_run(student, Some(gate), data, Some(&addr), s, profile))
        .collect::<Result<Vec<_>>>()?;
    server.shutdown()?;
    Ok(Comparison {
        csv: bench_csv(&reports),
        table: render_table(&reports),
        reports,
    })
}
