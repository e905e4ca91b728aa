use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fogdisc_core::model::canonical_json;
use fogdisc_core::sim::{generate, ring, run_scenario, Metrics, Scenario};

/// Fog-layer service discovery simulator.
#[derive(Parser)]
#[command(name = "fogdisc", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and check its expectations.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the metrics as canonical JSON.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Recompute the ring audit from a metrics dump.
    AuditRing { metrics: PathBuf },
    /// Parse and check a scenario and its taxonomies.
    Validate { scenario: PathBuf },
    /// Write one of the bundled scenarios (smoke, e2e, churn).
    Generate {
        name: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn run(scenario: PathBuf, seed: u64, dump: Option<PathBuf>) -> Result<bool> {
    let m = run_scenario(&scenario, seed).with_context(|| format!("running {}", scenario.display()))?;
    let ok_queries = m.queries.iter().filter(|q| q.success).count();
    println!(
        "{}: seed {} end {} ms, {} queries ({} ok), {} compositions, {} messages ({} dropped)",
        m.scenario,
        m.seed,
        m.end_ms,
        m.queries.len(),
        ok_queries,
        m.compositions.len(),
        m.messages.sent,
        m.messages.dropped
    );
    for a in &m.assertions {
        println!("{} {}: {}", mark(a.passed), a.name, a.detail);
    }
    if let Some(path) = dump {
        std::fs::write(&path, m.dump()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(m.passed())
}

fn audit_ring(path: PathBuf) -> Result<bool> {
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let m: Metrics = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let a = ring::audit(&m.ring);
    println!("{} nodes, m = {}", a.nodes, m.ring.m);
    println!("{} successors", mark(a.successors_ok));
    println!("{} predecessors", mark(a.predecessors_ok));
    println!("{} residency: misplaced {:?}", mark(a.residency_ok), a.misplaced);
    println!("{} completeness: missing {:?}", mark(a.completeness_ok), a.missing);
    if a != m.ring_audit {
        bail!("recorded audit disagrees with the snapshot");
    }
    Ok(a.passed())
}

fn validate(path: PathBuf) -> Result<bool> {
    let loaded = Scenario::load(&path).with_context(|| format!("validating {}", path.display()))?;
    let s = &loaded.scenario;
    println!(
        "{}: {} gateways, {} devices, {} actions, {} taxonomies",
        s.name,
        s.gateways.len(),
        s.devices.len(),
        s.timeline.len(),
        loaded.taxonomies.len()
    );
    Ok(true)
}

fn write_generated(name: String, seed: u64, out: Option<PathBuf>) -> Result<bool> {
    let Some(s) = generate::bundled(&name, seed) else {
        bail!("unknown scenario {name}; expected one of {:?}", generate::BUNDLED);
    };
    let text = canonical_json(&s) + "\n";
    match out {
        Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { scenario, seed, dump } => run(scenario, seed, dump),
        Cmd::AuditRing { metrics } => audit_ring(metrics),
        Cmd::Validate { scenario } => validate(scenario),
        Cmd::Generate { name, seed, out } => write_generated(name, seed, out),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
