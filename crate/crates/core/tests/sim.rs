use rmsd_core::contract::{Role, Status};
use rmsd_core::crypto::Digest;
use rmsd_core::ledger::{validate_chain, BlockKind};
use rmsd_core::sim::{
    account_key, check_liveness, check_trace, run_sim, sweep_config, ClientOp, Event, Fault, Property, ScheduledFault,
    ScheduledOp, SimConfig, Trace, ADMIN,
};

fn op(at: u64, op: ClientOp) -> ScheduledOp {
    ScheduledOp { at, op }
}

fn fault(at: u64, fault: Fault) -> ScheduledFault {
    ScheduledFault { at, fault }
}

fn need_flow() -> Vec<ScheduledOp> {
    vec![
        op(600, ClientOp::GrantRole { by: ADMIN.into(), target: "checker".into(), role: Role::Checker }),
        op(600, ClientOp::CreateNeed { by: "victim".into(), kind: "blanket".into(), amount: 100, unit: "pcs".into() }),
        op(700, ClientOp::ApproveNeed { by: "checker".into(), need_id: 0 }),
    ]
}

fn assert_clean(trace: &Trace) {
    if let Err(v) = check_trace(trace, &Property::ALL) {
        panic!("{v}");
    }
}

fn end_logs(trace: &Trace) -> (Vec<Vec<Digest>>, Vec<u64>) {
    match trace.end() {
        Some(Event::End { logs, commit, .. }) => (logs.clone(), commit.clone()),
        _ => panic!("no end event"),
    }
}

#[test]
fn single_node_elects_itself_and_goes_quiet() {
    let out = run_sim(&SimConfig::new(1, 3)).unwrap();
    assert!(!out.time_cap_exceeded);
    assert!(out.trace.events.iter().any(|e| matches!(e, Event::BecameLeader { node: 0, term: 1, .. })));
    assert_clean(&out.trace);
    assert_eq!(out.chains[0].len(), 1);
}

#[test]
fn three_nodes_commit_the_need_flow_as_three_blocks() {
    for seed in 0..20 {
        let mut cfg = SimConfig::new(3, seed);
        cfg.workload = need_flow();
        let out = run_sim(&cfg).unwrap();
        assert!(!out.time_cap_exceeded, "seed {seed}");
        assert_clean(&out.trace);
        let first = &out.chains[0];
        assert_eq!(first.len(), 3, "seed {seed}: genesis + create + approve");
        for chain in &out.chains {
            assert_eq!(chain, first, "seed {seed}");
        }
        let state = validate_chain(first).unwrap();
        let need = state.contract.show_need(0).unwrap();
        assert_eq!(need.status, Status::Approved);
        assert_eq!(need.approved_by, Some(account_key(seed, "checker").public()));
    }
}

#[test]
fn equal_configs_give_identical_traces() {
    for seed in [1, 77, 4242] {
        let cfg = sweep_config(seed);
        let a = run_sim(&cfg).unwrap().trace.to_jsonl();
        let b = run_sim(&cfg).unwrap().trace.to_jsonl();
        assert_eq!(a, b, "seed {seed}");
        assert!(a.lines().count() > 100);
        assert_eq!(Trace::from_jsonl(&a).unwrap().to_jsonl(), a);
    }
    let a = run_sim(&sweep_config(1)).unwrap().trace.to_jsonl();
    let b = run_sim(&sweep_config(2)).unwrap().trace.to_jsonl();
    assert_ne!(a, b);
}

#[test]
fn config_round_trips_through_json() {
    let cfg = sweep_config(9);
    let json = serde_json::to_string_pretty(&cfg).unwrap();
    let back: SimConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn leader_crash_mid_replication_loses_no_committed_block() {
    for seed in 0..30 {
        let mut cfg = SimConfig::new(5, seed);
        cfg.workload = need_flow();
        for i in 0..6 {
            cfg.workload.push(op(
                650 + 7 * i,
                ClientOp::CreateSupport {
                    by: format!("donor-{i}"),
                    kind: "tent".into(),
                    amount: 10 + i,
                    unit: "pcs".into(),
                    shipping: "truck".into(),
                },
            ));
        }
        cfg.faults = vec![fault(660, Fault::CrashLeader), fault(2_500, Fault::Heal)];
        let out = run_sim(&cfg).unwrap();
        assert!(!out.time_cap_exceeded, "seed {seed}");
        assert_clean(&out.trace);
        let leaders: Vec<u64> = out
            .trace
            .events
            .iter()
            .filter_map(|e| match e {
                Event::BecameLeader { term, .. } => Some(*term),
                _ => None,
            })
            .collect();
        assert!(leaders.len() >= 2, "seed {seed}: a new leader took over");

        // Everything any node committed, including the crashed leader before
        // it went down, is in the final chain of every live node.
        let longest = out.chains.iter().max_by_key(|c| c.len()).unwrap();
        for chain in &out.chains {
            assert_eq!(&longest[..chain.len()], &chain[..], "seed {seed}");
        }
        let state = validate_chain(longest).unwrap();
        assert_eq!(state.contract.show_supports().len(), 6, "seed {seed}");
    }
}

#[test]
fn peer_added_during_leader_crash_lands_exactly_once() {
    for seed in 0..20 {
        let mut cfg = SimConfig::new(3, seed);
        cfg.spare_nodes = 2;
        cfg.workload = need_flow();
        cfg.workload.push(op(800, ClientOp::AddPeer { node: 3 }));
        cfg.workload.push(op(800, ClientOp::AddPeer { node: 4 }));
        cfg.faults = vec![fault(805, Fault::CrashLeader), fault(3_000, Fault::Heal)];
        // The crashed node comes back so all five can be compared.
        for n in 0..3 {
            cfg.faults.push(fault(3_000, Fault::Restart { node: n }));
        }
        let out = run_sim(&cfg).unwrap();
        assert!(!out.time_cap_exceeded, "seed {seed}");
        assert_clean(&out.trace);
        let chain = out.chains.iter().max_by_key(|c| c.len()).unwrap();
        let state = validate_chain(chain).unwrap();
        assert_eq!(state.members.len(), 5, "seed {seed}");
        for added in 3..5 {
            let key = rmsd_core::sim::node_ids(seed, 5)[added].pubkey;
            let n = chain.iter().filter(|b| matches!(&b.kind, BlockKind::AddPeer(id) if id.pubkey == key)).count();
            assert_eq!(n, 1, "seed {seed}: node {added}");
        }
        let (logs, commit) = end_logs(&out.trace);
        let top = *commit.iter().max().unwrap();
        for (i, c) in commit.iter().enumerate() {
            assert_eq!(*c, top, "seed {seed}: node {i} caught up");
            assert_eq!(logs[i][..=top as usize], logs[0][..=top as usize]);
        }
    }
}

#[test]
fn sweep_sample_is_safe_and_live() {
    for seed in 0..25 {
        let out = run_sim(&sweep_config(seed)).unwrap();
        assert_clean(&out.trace);
        let live = check_liveness(&out.trace, 3_000);
        assert!(live.ok, "seed {seed}: {}", live.detail);
    }
}

#[test]
fn committed_trace_replays_to_the_reported_state() {
    let out = run_sim(&sweep_config(11)).unwrap();
    let blocks = out.trace.committed_blocks();
    let state = validate_chain(&blocks).unwrap();
    let last = out
        .trace
        .events
        .iter()
        .rev()
        .find_map(|e| match e {
            Event::Commit { height, state, .. } if *height == blocks.last().unwrap().height => Some(*state),
            _ => None,
        })
        .unwrap();
    assert_eq!(state.contract.digest(), last);
    assert_eq!(blocks, out.chains.iter().max_by_key(|c| c.len()).unwrap().clone());
}

#[test]
fn personal_sentinels_stay_in_node_stores() {
    let out = run_sim(&sweep_config(5)).unwrap();
    let fields: Vec<String> = out
        .trace
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Personal { fields, .. } => Some(fields.clone()),
            _ => None,
        })
        .flatten()
        .collect();
    assert!(!fields.is_empty());
    assert!(fields.iter().all(|f| f.len() == 32));
    assert!(out.stores.iter().map(|s| s.len()).sum::<usize>() > 0);
    for chain in &out.chains {
        for b in chain {
            let bytes = b.canonical_bytes();
            for f in &fields {
                assert!(!rmsd_core::sim::contains(&bytes, f.as_bytes()));
            }
        }
    }
}

// ---- the checker flags corrupted traces ----

fn healthy() -> Trace {
    let mut cfg = SimConfig::new(3, 21);
    cfg.workload = need_flow();
    let t = run_sim(&cfg).unwrap().trace;
    assert_clean(&t);
    t
}

fn first_index(t: &Trace, f: impl Fn(&Event) -> bool) -> usize {
    t.events.iter().position(f).unwrap()
}

#[test]
fn checker_flags_two_leaders_in_one_term() {
    let mut t = healthy();
    let i = first_index(&t, |e| matches!(e, Event::BecameLeader { .. }));
    let mut dup = t.events[i].clone();
    if let Event::BecameLeader { node, .. } = &mut dup {
        *node = (*node + 1) % 3;
    }
    t.events.insert(i + 1, dup);
    let v = check_trace(&t, &Property::ALL).unwrap_err();
    assert_eq!((v.property, v.index), (Property::ElectionSafety, i + 1));
}

#[test]
fn checker_flags_divergent_commits() {
    let mut t = healthy();
    let commits: Vec<usize> =
        (0..t.events.len()).filter(|&i| matches!(t.events[i], Event::Commit { height: 1, .. })).collect();
    let k = commits[1];
    if let Event::Commit { hash, .. } = &mut t.events[k] {
        hash.0[0] ^= 1;
    }
    let v = check_trace(&t, &[Property::StateMachineSafety]).unwrap_err();
    assert_eq!((v.property, v.index), (Property::StateMachineSafety, k));

    let mut t = healthy();
    if let Event::Commit { state, .. } = &mut t.events[k] {
        state.0[31] ^= 1;
    }
    let v = check_trace(&t, &[Property::StateMachineSafety]).unwrap_err();
    assert!(v.detail.contains("state digest"));
}

#[test]
fn checker_flags_skipped_heights() {
    let mut t = healthy();
    let k = first_index(&t, |e| matches!(e, Event::Commit { height: 1, .. }));
    t.events.remove(k);
    let v = check_trace(&t, &[Property::StateMachineSafety]).unwrap_err();
    assert_eq!(v.property, Property::StateMachineSafety);
}

#[test]
fn checker_flags_leader_missing_a_committed_block() {
    let mut t = healthy();
    let k = first_index(&t, |e| matches!(e, Event::Commit { height: 1, .. }));
    t.events.push(Event::BecameLeader { t: 99_999, node: 2, term: 99, log: vec![Digest::ZERO] });
    let v = check_trace(&t, &[Property::LeaderCompleteness]).unwrap_err();
    assert_eq!(v.index, t.events.len() - 1);
    assert!(k < v.index);
}

#[test]
fn checker_flags_log_mismatch_below_agreement() {
    let mut t = healthy();
    let i = t.events.len() - 1;
    if let Event::End { logs, .. } = &mut t.events[i] {
        logs[1][1].0[0] ^= 0xff;
    }
    let v = check_trace(&t, &[Property::LogMatching]).unwrap_err();
    assert_eq!((v.property, v.index), (Property::LogMatching, i));
}

#[test]
fn checker_flags_personal_data_in_blocks() {
    let mut t = healthy();
    let k = first_index(&t, |e| matches!(e, Event::BlockBytes { height: 1, .. }));
    let sentinel = t
        .events
        .iter()
        .find_map(|e| match e {
            Event::Personal { fields, .. } => Some(fields[0].clone()),
            _ => None,
        })
        .unwrap();
    if let Event::BlockBytes { hex, .. } = &mut t.events[k] {
        hex.push_str(&hex::encode(sentinel.as_bytes()));
    }
    let v = check_trace(&t, &Property::ALL).unwrap_err();
    assert_eq!((v.property, v.index), (Property::PrivacySeparation, k));
}

#[test]
fn liveness_fails_without_a_majority() {
    let mut cfg = SimConfig::new(3, 4);
    cfg.workload = need_flow();
    cfg.faults = vec![fault(100, Fault::Crash { node: 0 }), fault(100, Fault::Crash { node: 1 })];
    cfg.time_cap = 8_000;
    let out = run_sim(&cfg).unwrap();
    assert!(out.time_cap_exceeded);
    assert_clean(&out.trace);
    assert!(!check_liveness(&out.trace, 3_000).ok);
}
