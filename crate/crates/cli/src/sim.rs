//! `rmsd-sim`: deterministic cluster runs from fault and workload files.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;
use rmsd_core::sim::{
    check_liveness, check_trace, run_sim, sweep_config, ClientOp, Event, Liveness, Property, ScheduledFault,
    ScheduledOp, SimConfig, TraceViolation,
};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{io_error, CliError};

#[derive(Parser, Debug, Clone)]
#[command(name = "rmsd-sim", version, about = "Run a simulated ledger cluster and check its trace")]
pub struct SimArgs {
    #[arg(long, default_value_t = 5)]
    pub nodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON array of `{"at": ms, "fault": {...}}`.
    #[arg(long)]
    pub faults: Option<PathBuf>,
    /// JSON array of `{"at": ms, "op": {...}}`.
    #[arg(long)]
    pub workload: Option<PathBuf>,
    /// Where to write the JSONL trace.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use the randomized five-node schedule derived from the seed.
    #[arg(long, conflicts_with_all = ["faults", "workload"])]
    pub random: bool,
    /// Nodes outside the initial membership. Defaults to what the
    /// workload's add-peer operations reference.
    #[arg(long)]
    pub spare_nodes: Option<usize>,
    /// Simulated milliseconds before the run is cut off.
    #[arg(long)]
    pub time_cap: Option<u64>,
    /// Also fail when the liveness bound is missed.
    #[arg(long)]
    pub check_liveness: bool,
    #[arg(long, default_value_t = 3_000)]
    pub liveness_bound: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub seed: u64,
    pub nodes: usize,
    pub events: usize,
    pub committed_height: u64,
    pub time_cap_exceeded: bool,
    pub violation: Option<TraceViolation>,
    pub liveness: Liveness,
    pub liveness_enforced: bool,
}

impl SimReport {
    pub fn passed(&self) -> bool {
        self.violation.is_none() && (!self.liveness_enforced || self.liveness.ok)
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

pub fn build_config(args: &SimArgs) -> Result<SimConfig, CliError> {
    let mut cfg = if args.random {
        sweep_config(args.seed)
    } else {
        let mut cfg = SimConfig::new(args.nodes, args.seed);
        if let Some(p) = &args.faults {
            cfg.faults = read_json::<Vec<ScheduledFault>>(p)?;
        }
        if let Some(p) = &args.workload {
            cfg.workload = read_json::<Vec<ScheduledOp>>(p)?;
        }
        let highest_joiner = cfg
            .workload
            .iter()
            .filter_map(|o| match o.op {
                ClientOp::AddPeer { node } => Some(node + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        cfg.spare_nodes = highest_joiner.saturating_sub(cfg.node_count);
        cfg
    };
    if let Some(s) = args.spare_nodes {
        cfg.spare_nodes = s;
    }
    if let Some(t) = args.time_cap {
        cfg.time_cap = t;
    }
    Ok(cfg)
}

/// Runs `cfg`, writes the trace to `trace_out` and checks every property.
pub fn simulate(
    cfg: &SimConfig,
    trace_out: Option<&Path>,
    liveness_bound: u64,
    enforce_liveness: bool,
) -> Result<SimReport, CliError> {
    let outcome = run_sim(cfg).map_err(|e| CliError::Invalid(e.to_string()))?;
    if let Some(path) = trace_out {
        std::fs::write(path, outcome.trace.to_jsonl()).map_err(|e| io_error(path, e))?;
    }
    let committed_height = outcome
        .trace
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Commit { height, .. } => Some(*height),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    Ok(SimReport {
        seed: cfg.seed,
        nodes: cfg.node_count + cfg.spare_nodes,
        events: outcome.trace.events.len(),
        committed_height,
        time_cap_exceeded: outcome.time_cap_exceeded,
        violation: check_trace(&outcome.trace, &Property::ALL).err(),
        liveness: check_liveness(&outcome.trace, liveness_bound),
        liveness_enforced: enforce_liveness,
    })
}

pub fn run(args: &SimArgs, out: &mut dyn Write) -> Result<SimReport, CliError> {
    let cfg = build_config(args)?;
    let report = simulate(&cfg, args.out.as_deref(), args.liveness_bound, args.check_liveness)?;
    let r = if args.json {
        serde_json::to_writer_pretty(&mut *out, &report).map_err(std::io::Error::from).and_then(|_| writeln!(out))
    } else {
        (|| {
            writeln!(
                out,
                "seed {} nodes {} events {} committed height {}",
                report.seed, report.nodes, report.events, report.committed_height
            )?;
            match &report.violation {
                Some(v) => writeln!(out, "safety: FAIL {v}")?,
                None => writeln!(out, "safety: ok")?,
            }
            let live = if report.liveness.ok { "ok" } else { "FAIL" };
            writeln!(out, "liveness: {live} ({})", report.liveness.detail)
        })()
    };
    r.map_err(|e| CliError::Io(format!("stdout: {e}")))?;
    Ok(report)
}
