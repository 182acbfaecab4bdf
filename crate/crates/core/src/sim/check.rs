use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::trace::{Event, Trace};
use crate::crypto::Digest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Property {
    ElectionSafety,
    LogMatching,
    LeaderCompleteness,
    StateMachineSafety,
    PrivacySeparation,
}

impl Property {
    pub const ALL: [Property; 5] = [
        Property::ElectionSafety,
        Property::LogMatching,
        Property::LeaderCompleteness,
        Property::StateMachineSafety,
        Property::PrivacySeparation,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceViolation {
    pub property: Property,
    /// Index of the offending event.
    pub index: usize,
    pub detail: String,
}

impl fmt::Display for TraceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} violated at event {}: {}", self.property, self.index, self.detail)
    }
}

/// Checks `properties` over `trace` and returns the earliest violation.
pub fn check_trace(trace: &Trace, properties: &[Property]) -> Result<(), TraceViolation> {
    let mut found: Vec<TraceViolation> = Vec::new();
    for p in properties {
        let r = match p {
            Property::ElectionSafety => election_safety(trace),
            Property::LogMatching => log_matching(trace),
            Property::LeaderCompleteness => leader_completeness(trace),
            Property::StateMachineSafety => state_machine_safety(trace),
            Property::PrivacySeparation => privacy_separation(trace),
        };
        if let Err(v) = r {
            found.push(v);
        }
    }
    match found.into_iter().min_by_key(|v| (v.index, v.property)) {
        Some(v) => Err(v),
        None => Ok(()),
    }
}

fn violation(property: Property, index: usize, detail: String) -> TraceViolation {
    TraceViolation { property, index, detail }
}

fn election_safety(trace: &Trace) -> Result<(), TraceViolation> {
    let mut leaders: BTreeMap<u64, usize> = BTreeMap::new();
    for (i, e) in trace.events.iter().enumerate() {
        if let Event::BecameLeader { node, term, .. } = e {
            if let Some(prev) = leaders.insert(*term, *node) {
                if prev != *node {
                    return Err(violation(
                        Property::ElectionSafety,
                        i,
                        format!("nodes {prev} and {node} both lead term {term}"),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Log snapshots are taken when a node becomes leader and at the end.
fn log_matching(trace: &Trace) -> Result<(), TraceViolation> {
    let mut seen: Vec<(usize, &[Digest])> = Vec::new();
    for (i, e) in trace.events.iter().enumerate() {
        let logs: Vec<&[Digest]> = match e {
            Event::BecameLeader { log, .. } => vec![log.as_slice()],
            Event::End { logs, .. } => logs.iter().map(|l| l.as_slice()).collect(),
            _ => continue,
        };
        for log in logs {
            for (_, other) in &seen {
                if let Some(h) = mismatch_below_match(log, other) {
                    return Err(violation(
                        Property::LogMatching,
                        i,
                        format!("logs agree at a later height but differ at height {h}"),
                    ));
                }
            }
            seen.push((i, log));
        }
    }
    Ok(())
}

/// If the logs share an entry at some height, every lower entry must match.
/// Returns the first height where that fails.
fn mismatch_below_match(a: &[Digest], b: &[Digest]) -> Option<usize> {
    let common = a.len().min(b.len());
    let top = (0..common).rev().find(|&h| a[h] == b[h])?;
    (0..top).find(|&h| a[h] != b[h])
}

fn leader_completeness(trace: &Trace) -> Result<(), TraceViolation> {
    let mut committed: BTreeMap<u64, (Digest, u64)> = BTreeMap::new();
    for (i, e) in trace.events.iter().enumerate() {
        match e {
            Event::Commit { height, hash, term, .. } => {
                committed.entry(*height).or_insert((*hash, *term));
            }
            Event::BecameLeader { node, term: lt, log, .. } => {
                for (h, (hash, bt)) in &committed {
                    if bt >= lt {
                        continue;
                    }
                    if log.get(*h as usize) != Some(hash) {
                        return Err(violation(
                            Property::LeaderCompleteness,
                            i,
                            format!("leader {node} of term {lt} lacks block {h} committed in term {bt}"),
                        ));
                    }
                }
            }
            _ => {}
        }
    }
    Ok(())
}

fn state_machine_safety(trace: &Trace) -> Result<(), TraceViolation> {
    let mut by_height: BTreeMap<u64, (Digest, Digest)> = BTreeMap::new();
    let mut last: BTreeMap<usize, u64> = BTreeMap::new();
    for (i, e) in trace.events.iter().enumerate() {
        if let Event::Commit { node, height, hash, state, .. } = e {
            let prev = last.get(node).copied().unwrap_or(0);
            if *height != prev + 1 {
                return Err(violation(
                    Property::StateMachineSafety,
                    i,
                    format!("node {node} committed height {height} after {prev}"),
                ));
            }
            last.insert(*node, *height);
            match by_height.get(height) {
                Some((h, s)) if h != hash || s != state => {
                    let what = if h != hash { "block" } else { "state digest" };
                    return Err(violation(
                        Property::StateMachineSafety,
                        i,
                        format!("node {node} committed a different {what} at height {height}"),
                    ));
                }
                Some(_) => {}
                None => {
                    by_height.insert(*height, (*hash, *state));
                }
            }
        }
    }
    Ok(())
}

fn privacy_separation(trace: &Trace) -> Result<(), TraceViolation> {
    let sentinels: Vec<&str> = trace
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Personal { fields, .. } => Some(fields.iter().map(String::as_str)),
            _ => None,
        })
        .flatten()
        .filter(|f| !f.is_empty())
        .collect();
    for (i, e) in trace.events.iter().enumerate() {
        if let Event::BlockBytes { height, hex, .. } = e {
            let Ok(bytes) = hex::decode(hex) else {
                return Err(violation(Property::PrivacySeparation, i, "undecodable block bytes".into()));
            };
            if let Some(s) = sentinels.iter().find(|s| contains(&bytes, s.as_bytes())) {
                return Err(violation(
                    Property::PrivacySeparation,
                    i,
                    format!("block {height} contains personal value {s:?}"),
                ));
            }
        }
    }
    Ok(())
}

pub fn contains(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Liveness {
    pub ok: bool,
    pub detail: String,
}

/// Once every fault has healed, a leader must appear and every workload
/// operation must finish within `bound_ms`. Later-scheduled operations get
/// the same bound from their own start.
pub fn check_liveness(trace: &Trace, bound_ms: u64) -> Liveness {
    let Some(Event::End { healed_at, leader_at, last_op_at, workload_done_at, time_cap_exceeded, .. }) = trace.end()
    else {
        return Liveness { ok: false, detail: "trace has no end event".into() };
    };
    let window_start = (*healed_at).max(*last_op_at);
    let leader_ok = leader_at.is_some_and(|l| l <= healed_at + bound_ms);
    let work_ok = workload_done_at.is_some_and(|w| w <= window_start + bound_ms);
    let ok = leader_ok && work_ok && !time_cap_exceeded;
    let detail = format!(
        "healed at {healed_at}, leader at {leader_at:?}, last op at {last_op_at}, workload done at {workload_done_at:?}, bound {bound_ms}"
    );
    Liveness { ok, detail }
}
