//! Acceptance gate. Runs every end-to-end, simulation and property criterion
//! and prints one PASS or FAIL line for each. Exits non-zero if any fails.

mod common;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use common::{keygen, p, rmsd_json, Net};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::distributions::Alphanumeric;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmsd_core::contract::{ContractState, Role, Status};
use rmsd_core::crypto::{Digest, Keypair, PublicKey};
use rmsd_core::ledger::{apply_transaction, validate_chain, Block, Payload, SigCheck, Transaction};
use rmsd_core::sim::{check_liveness, check_trace, contains, run_sim, sweep_config, Event, Property};
use rmsd_node::storage::{Storage, BLOCKS_DIR, GENESIS_FILE};
use rmsd_node::types::ChainInfo;
use serde_json::Value;

const SWEEP_SEEDS: u64 = 1_000;
/// Ten maximum election timeouts of the default consensus config.
const LIVENESS_BOUND_MS: u64 = 3_000;
const FUZZ_TXS: usize = 10_000;

struct Gate {
    failed: usize,
}

impl Gate {
    fn report(&mut self, name: &str, result: Result<String, String>) {
        match result {
            Ok(detail) => println!("PASS  {name:<28} {detail}"),
            Err(detail) => {
                self.failed += 1;
                println!("FAIL  {name:<28} {detail}");
            }
        }
    }
}

fn sentinel(rng: &mut impl Rng) -> String {
    rng.sample_iter(&Alphanumeric).take(32).map(char::from).collect()
}

// ---------------------------------------------------------------- e2e ----

struct E2e {
    scenario_a: Result<String, String>,
    scenario_b: Result<String, String>,
    sentinels: Vec<String>,
    /// Node data directories, for block scans after shutdown.
    dirs: Vec<PathBuf>,
    /// Committed view of each node just before shutdown.
    infos: Vec<ChainInfo>,
    /// Outcome of deleting personal data, then validating the chain.
    deletion: Result<String, String>,
}

async fn cli_ok(args: &[&str]) -> Result<Value, String> {
    let (code, v) = rmsd_json(args).await;
    if code == 0 {
        Ok(v)
    } else {
        Err(format!("`rmsd {}` exited {code}: {v}", args.join(" ")))
    }
}

async fn application(node: &str, kind: &str, fields: &[String], shipping: Option<&str>) -> Result<Digest, String> {
    let mut args = vec![
        "--node",
        node,
        "tx",
        kind,
        "--category",
        "blanket",
        "--amount",
        "100",
        "--name",
        &fields[0],
        "--phone",
        &fields[1],
        "--address",
        &fields[2],
        "--notes",
        &fields[3],
    ];
    if let Some(s) = shipping {
        args.extend(["--shipping", s]);
    }
    let v = cli_ok(&args).await?;
    v["personal_ref"].as_str().and_then(|s| Digest::from_hex(s).ok()).ok_or_else(|| format!("no personal ref in {v}"))
}

async fn all_report(net: &Net, what: &str, check: impl Fn(&Value) -> bool, path: &str) -> Result<(), String> {
    for i in net.running() {
        let (status, body) = net.client(i).get_raw(path).await.map_err(|e| e.to_string())?;
        let v: Value = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
        if status != 200 || !check(&v) {
            return Err(format!("node {i} does not report {what}: {v}"));
        }
    }
    Ok(())
}

async fn scenario_a(net: &Net, checker_key: &Path, fields: &[String]) -> Result<(), String> {
    let node = net.url(1);
    let admin = p(&net.admin_key);
    let checker_pub = std::fs::read_to_string(checker_key.with_extension("pub")).map_err(|e| e.to_string())?;
    cli_ok(&["--node", &node, "tx", "grant-role", checker_pub.trim(), "checker", "--key", admin]).await?;
    application(&node, "create-need", fields, None).await?;
    cli_ok(&["--node", &node, "tx", "approve", "need", "0", "--key", p(checker_key)]).await?;
    let infos = net.converged(3, Duration::from_secs(20)).await?;
    if infos.len() != 3 {
        return Err(format!("{} nodes answered", infos.len()));
    }
    all_report(net, "need 0 approved", |v| v["status_label"] == "approved", "/v1/needs/0").await
}

async fn scenario_b(net: &mut Net, root: &Path, checker_key: &Path, fields: &[String]) -> Result<Digest, String> {
    for j in 0..2 {
        let dir = root.join(format!("joined{j}"));
        let port = rmsd_node::cluster::free_port().to_string();
        let raftport = rmsd_node::cluster::free_port().to_string();
        let v = cli_ok(&[
            "--node",
            &net.url(0),
            "join",
            "--data-dir",
            p(&dir),
            "--host",
            "127.0.0.1",
            "--port",
            &port,
            "--raftport",
            &raftport,
            "--admin-key",
            p(&net.admin_key),
        ])
        .await?;
        let id = v["node_id"].as_str().and_then(|s| s.parse().ok()).ok_or("join printed no node id")?;
        let i = net.add(dir, id);
        net.start_node(i).await;
    }
    net.converged(5, Duration::from_secs(20)).await?;
    let support_ref = application(&net.url(3), "create-support", fields, Some("cargo")).await?;
    cli_ok(&["--node", &net.url(4), "tx", "approve", "support", "0", "--key", p(checker_key)]).await?;
    let infos = net.converged(7, Duration::from_secs(20)).await?;
    if infos.len() != 5 || infos.iter().any(|i| i.members.len() != 5) {
        return Err(format!(
            "{} nodes answered, members {:?}",
            infos.len(),
            infos.iter().map(|i| i.members.len()).collect::<Vec<_>>()
        ));
    }
    all_report(net, "need 0 approved", |v| v["status_label"] == "approved", "/v1/needs/0").await?;
    all_report(
        net,
        "support 0 approved with shipping",
        |v| v["status_label"] == "approved" && v["shipping"] == "cargo",
        "/v1/supports/0",
    )
    .await?;
    all_report(
        net,
        "support 0 in the approved list",
        |v| v.as_array().is_some_and(|a| a.len() == 1 && a[0]["support_id"] == 0),
        "/v1/supports/approved",
    )
    .await?;
    Ok(support_ref)
}

async fn run_e2e(root: &Path) -> E2e {
    let mut rng = ChaCha8Rng::seed_from_u64(0x05e4_71e1);
    let need_fields: Vec<String> = (0..4).map(|_| sentinel(&mut rng)).collect();
    let support_fields: Vec<String> = (0..4).map(|_| sentinel(&mut rng)).collect();
    let sentinels = need_fields.iter().chain(&support_fields).cloned().collect();

    let started = Instant::now();
    let mut net = Net::start(root, 3).await;
    let (checker_key, _) = keygen(root, "checker").await;
    let a = scenario_a(&net, &checker_key, &need_fields).await;
    let a_time = started.elapsed();
    let scenario_a = a.and_then(|()| {
        if a_time < Duration::from_secs(30) {
            Ok(format!("3/3 nodes share tip and state, need approved in {:.1} s (< 30 s)", a_time.as_secs_f64()))
        } else {
            Err(format!("took {:.1} s", a_time.as_secs_f64()))
        }
    });

    let mut support_ref = None;
    let scenario_b = if scenario_a.is_ok() {
        let b = scenario_b(&mut net, root, &checker_key, &support_fields).await;
        let b_time = started.elapsed();
        b.and_then(|r| {
            support_ref = Some(r);
            if b_time < Duration::from_secs(60) {
                Ok(format!("2 nodes joined, support approved, 5/5 agree in {:.1} s (< 60 s)", b_time.as_secs_f64()))
            } else {
                Err(format!("took {:.1} s", b_time.as_secs_f64()))
            }
        })
    } else {
        Err("not run: scenario A failed".into())
    };

    // The support's personal record lives on the node that took the
    // application. Reading it proves the sentinels reached the private store.
    let deletion = match support_ref {
        Some(r) => delete_and_validate(&net, &checker_key, r).await,
        None => Err("no committed application to delete".into()),
    };

    let mut infos = Vec::new();
    for i in net.running() {
        if let Ok(info) = net.client(i).chain().await {
            infos.push(info);
        }
    }
    let dirs = net.dirs.clone();
    net.shutdown().await;
    E2e { scenario_a, scenario_b, sentinels, dirs, infos, deletion }
}

async fn delete_and_validate(net: &Net, checker_key: &Path, personal_ref: Digest) -> Result<String, String> {
    let checker = load_key(checker_key)?;
    let admin = load_key(&net.admin_key)?;
    let client = net.client(3);
    client
        .personal(&checker, &personal_ref)
        .await
        .map_err(|e| format!("personal record not readable before delete: {e}"))?;
    let before = client.chain().await.map_err(|e| e.to_string())?;
    client.delete_personal(&admin, &personal_ref).await.map_err(|e| format!("delete failed: {e}"))?;
    if client.personal(&checker, &personal_ref).await.is_ok() {
        return Err("record still readable after delete".into());
    }
    let mut storage = Storage::open(&net.dirs[3]).map_err(|e| e.to_string())?;
    let mut log = storage.load_log().map_err(|e| e.to_string())?;
    log.truncate(before.height as usize + 1);
    let state = validate_chain(&log).map_err(|e| format!("validate_chain after delete: {e}"))?;
    if state.contract.digest() != before.state_digest {
        return Err("state digest changed after delete".into());
    }
    Ok(format!("validate_chain OK over {} blocks after delete", log.len()))
}

fn load_key(path: &Path) -> Result<Keypair, String> {
    rmsd_cli::read_key(path).map_err(|e| e.to_string())
}

/// Every block file and genesis in every node directory.
fn stored_blocks(dirs: &[PathBuf]) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for d in dirs {
        if let Ok(b) = std::fs::read(d.join(GENESIS_FILE)) {
            out.push((d.join(GENESIS_FILE), b));
        }
        if let Ok(entries) = std::fs::read_dir(d.join(BLOCKS_DIR)) {
            for e in entries.flatten() {
                if let Ok(b) = std::fs::read(e.path()) {
                    out.push((e.path(), b));
                }
            }
        }
    }
    out
}

fn e2e_replay(e2e: &E2e) -> Result<String, String> {
    if e2e.infos.len() != e2e.dirs.len() {
        return Err(format!("only {} of {} nodes reported their chain", e2e.infos.len(), e2e.dirs.len()));
    }
    for (dir, info) in e2e.dirs.iter().zip(&e2e.infos) {
        let mut storage = Storage::open(dir).map_err(|e| e.to_string())?;
        let mut log = storage.load_log().map_err(|e| e.to_string())?;
        log.truncate(info.height as usize + 1);
        let state = validate_chain(&log).map_err(|e| format!("{}: {e}", dir.display()))?;
        if state.contract.digest() != info.state_digest {
            return Err(format!("{}: replay digest differs from the node's", dir.display()));
        }
    }
    Ok(format!("{} nodes", e2e.dirs.len()))
}

// ---------------------------------------------------------------- sim ----

#[derive(Default)]
struct Sweep {
    safety: Vec<String>,
    liveness_misses: Vec<u64>,
    liveness_safety: Vec<u64>,
    privacy: Vec<String>,
    replay: Vec<String>,
    nondeterministic: Vec<u64>,
    blocks_scanned: u64,
    sentinels_planted: u64,
    determinism_checked: u64,
    elapsed: Duration,
}

const RAFT_PROPERTIES: [Property; 4] =
    [Property::ElectionSafety, Property::LogMatching, Property::LeaderCompleteness, Property::StateMachineSafety];

fn sweep_one(seed: u64, out: &Mutex<Sweep>, scanned: &AtomicU64, planted: &AtomicU64) {
    let cfg = sweep_config(seed);
    let run = match run_sim(&cfg) {
        Ok(r) => r,
        Err(e) => {
            out.lock().unwrap().safety.push(format!("seed {seed}: {e}"));
            return;
        }
    };
    let trace = &run.trace;
    let safety = check_trace(trace, &RAFT_PROPERTIES);
    let live = check_liveness(trace, LIVENESS_BOUND_MS);

    let fields: Vec<&String> = trace
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Personal { fields, .. } => Some(fields),
            _ => None,
        })
        .flatten()
        .collect();
    planted.fetch_add(fields.len() as u64, Ordering::Relaxed);
    let mut leaked = check_trace(trace, &[Property::PrivacySeparation]).err().map(|v| v.to_string());
    for chain in &run.chains {
        for b in chain {
            scanned.fetch_add(1, Ordering::Relaxed);
            let bytes = b.canonical_bytes();
            if let Some(f) = fields.iter().find(|f| contains(&bytes, f.as_bytes())) {
                leaked = Some(format!("sentinel {f} in block {}", b.height));
            }
        }
    }

    let blocks = trace.committed_blocks();
    let replay = replay_matches(&blocks, trace);

    let deterministic = if seed.is_multiple_of(10) {
        let again = run_sim(&cfg).map(|r| r.trace.to_jsonl());
        Some(again.as_deref() == Ok(trace.to_jsonl().as_str()))
    } else {
        None
    };

    let mut s = out.lock().unwrap();
    if let Err(v) = &safety {
        s.safety.push(format!("seed {seed}: {v}"));
    }
    if !live.ok {
        s.liveness_misses.push(seed);
        if safety.is_err() {
            s.liveness_safety.push(seed);
        }
    }
    if let Some(l) = leaked {
        s.privacy.push(format!("seed {seed}: {l}"));
    }
    if let Err(r) = replay {
        s.replay.push(format!("seed {seed}: {r}"));
    }
    match deterministic {
        Some(true) => s.determinism_checked += 1,
        Some(false) => {
            s.determinism_checked += 1;
            s.nondeterministic.push(seed);
        }
        None => {}
    }
}

/// Replays the committed blocks of a trace on a fresh state and compares
/// with the state digest the nodes reported at the tip.
fn replay_matches(blocks: &[Block], trace: &rmsd_core::sim::Trace) -> Result<(), String> {
    let Some(tip) = blocks.last() else { return Ok(()) };
    let state = validate_chain(blocks).map_err(|e| e.to_string())?;
    let reported: Vec<Digest> = trace
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Commit { height, state, .. } if *height == tip.height => Some(*state),
            _ => None,
        })
        .collect();
    if reported.is_empty() || reported.iter().any(|d| *d != state.contract.digest()) {
        return Err(format!("replayed digest differs at height {}", tip.height));
    }
    Ok(())
}

fn run_sweep() -> Sweep {
    let started = Instant::now();
    let out = Mutex::new(Sweep::default());
    let scanned = AtomicU64::new(0);
    let planted = AtomicU64::new(0);
    let next = AtomicU64::new(0);
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let seed = next.fetch_add(1, Ordering::Relaxed);
                if seed >= SWEEP_SEEDS {
                    break;
                }
                sweep_one(seed, &out, &scanned, &planted);
            });
        }
    });
    let mut sweep = out.into_inner().unwrap();
    sweep.blocks_scanned = scanned.into_inner();
    sweep.sentinels_planted = planted.into_inner();
    sweep.elapsed = started.elapsed();
    sweep
}

// -------------------------------------------------------- authorization ----

const PAYLOADS: [&str; 5] = ["SetUser", "CreateNeed", "CreateSupport", "ApproveNeed", "ApproveSupport"];

/// Privilege table as stated for the contract: only Admin assigns roles,
/// only Checker approves, and creation is open to every account.
fn oracle(role: Role, payload: &str) -> bool {
    match payload {
        "SetUser" => role == Role::Admin,
        "CreateNeed" | "CreateSupport" => true,
        "ApproveNeed" | "ApproveSupport" => role == Role::Checker,
        other => unreachable!("unknown payload {other}"),
    }
}

fn payload_name(p: &Payload) -> &'static str {
    match p {
        Payload::SetUser { .. } => "SetUser",
        Payload::CreateNeed { .. } => "CreateNeed",
        Payload::CreateSupport { .. } => "CreateSupport",
        Payload::ApproveNeed { .. } => "ApproveNeed",
        Payload::ApproveSupport { .. } => "ApproveSupport",
    }
}

fn payload(name: &str, target: PublicKey) -> Payload {
    let personal_ref = Digest::ZERO;
    match name {
        "SetUser" => Payload::SetUser { target, role: Role::Creator },
        "CreateNeed" => Payload::CreateNeed { kind: "tent".into(), amount: 2, unit: "pcs".into(), personal_ref },
        "CreateSupport" => Payload::CreateSupport {
            kind: "tent".into(),
            amount: 2,
            unit: "pcs".into(),
            shipping: "cargo".into(),
            personal_ref,
        },
        "ApproveNeed" => Payload::ApproveNeed { need_id: 0 },
        "ApproveSupport" => Payload::ApproveSupport { support_id: 0 },
        other => unreachable!("unknown payload {other}"),
    }
}

fn key(i: u8) -> Keypair {
    Keypair::from_seed([i; 32])
}

fn authorization_matrix() -> Result<String, String> {
    let admin = key(1).public();
    let actor = key(2).public();
    let other = key(3).public();
    let mut mismatches = Vec::new();
    for role in Role::ALL {
        let mut base = ContractState::genesis_state(admin);
        base.execute(&admin, &payload("CreateNeed", other), 1).map_err(|e| e.to_string())?;
        base.execute(&admin, &payload("CreateSupport", other), 1).map_err(|e| e.to_string())?;
        if role != Role::None {
            base.execute(&admin, &Payload::SetUser { target: actor, role }, 1).map_err(|e| e.to_string())?;
        }
        for name in PAYLOADS {
            let mut s = base.clone();
            let allowed = s.execute(&actor, &payload(name, other), 2).is_ok();
            if allowed != oracle(role, name) {
                mismatches.push(format!("{role}/{name}: contract {allowed}, table {}", oracle(role, name)));
            }
            if !allowed && s.digest() != base.digest() {
                mismatches.push(format!("{role}/{name}: refused call changed state"));
            }
        }
    }
    if mismatches.is_empty() {
        Ok("4 roles x 5 payloads match the privilege table".into())
    } else {
        Err(mismatches.join("; "))
    }
}

fn random_payload(rng: &mut ChaCha8Rng, accounts: &[Keypair], state: &ContractState) -> Payload {
    let personal_ref = Digest(rng.gen());
    let kind = if rng.gen_ratio(1, 10) { String::new() } else { "water".into() };
    let amount = if rng.gen_ratio(1, 10) { 0 } else { rng.gen_range(1..1_000) };
    match rng.gen_range(0..5) {
        0 => Payload::SetUser {
            target: accounts[rng.gen_range(0..accounts.len())].public(),
            role: Role::ALL[rng.gen_range(0..4)],
        },
        1 => Payload::CreateNeed { kind, amount, unit: "pcs".into(), personal_ref },
        2 => Payload::CreateSupport {
            kind,
            amount,
            unit: "pcs".into(),
            shipping: if rng.gen_ratio(1, 10) { String::new() } else { "truck".into() },
            personal_ref,
        },
        3 => Payload::ApproveNeed { need_id: rng.gen_range(0..state.show_needs().len() as u64 + 2) },
        _ => Payload::ApproveSupport { support_id: rng.gen_range(0..state.show_supports().len() as u64 + 2) },
    }
}

fn authorization_fuzz() -> Result<String, String> {
    let accounts: Vec<Keypair> = (10..16).map(key).collect();
    let mut state = ContractState::genesis_state(accounts[0].public());
    let mut rng = ChaCha8Rng::seed_from_u64(0xa117);
    let (mut applied, mut refused_by_role) = (0usize, 0usize);
    let mut violations = Vec::new();
    for i in 0..FUZZ_TXS {
        // The admin sends a third of the traffic so roles keep changing.
        let sender = if rng.gen_ratio(1, 3) { &accounts[0] } else { &accounts[rng.gen_range(0..accounts.len())] };
        let payload = random_payload(&mut rng, &accounts, &state);
        let mut nonce = state.expected_nonce(&sender.public());
        if rng.gen_ratio(1, 20) {
            nonce += 1;
        }
        let mut tx = Transaction::sign(sender, nonce, payload.clone());
        if rng.gen_ratio(1, 20) {
            let forged = Transaction::sign(&accounts[(i + 1) % accounts.len()], nonce, payload.clone());
            tx = Transaction::from_parts(tx.sender, tx.nonce, tx.payload.clone(), forged.signature);
        }
        let role = state.get_user_auth(&tx.sender);
        let permitted = oracle(role, payload_name(&payload));
        let before = state.clone();
        let result = apply_transaction(&mut state, &tx, i as u64 + 1, SigCheck::Verify);
        let changed = state.digest() != before.digest();
        if !permitted {
            refused_by_role += 1;
        }
        match (&result, changed) {
            (Ok(_), _) if !permitted => violations.push(format!("tx {i}: {role} ran {}", payload_name(&payload))),
            (Ok(_), _) => applied += 1,
            (Err(e), true) => violations.push(format!("tx {i}: refused ({e}) but state changed")),
            (Err(_), false) => {}
        }
    }
    if violations.is_empty() {
        Ok(format!("{FUZZ_TXS} txs: {applied} applied, {refused_by_role} lacked the role, none slipped through"))
    } else {
        Err(format!("{} violations, first: {}", violations.len(), violations[0]))
    }
}

// ------------------------------------------------------------ lifecycle ----

#[derive(Debug, Clone)]
enum Op {
    Grant { actor: usize, target: usize, role: Role },
    Need { actor: usize, amount: u64 },
    Support { actor: usize, amount: u64 },
    ApproveNeed { actor: usize, id: u64 },
    ApproveSupport { actor: usize, id: u64 },
}

fn op_strategy() -> impl Strategy<Value = Op> {
    let actor = 0..4usize;
    let role = prop::sample::select(Role::ALL.to_vec());
    prop_oneof![
        (actor.clone(), 0..4usize, role).prop_map(|(actor, target, role)| Op::Grant { actor, target, role }),
        (actor.clone(), 0..3u64).prop_map(|(actor, amount)| Op::Need { actor, amount }),
        (actor.clone(), 0..3u64).prop_map(|(actor, amount)| Op::Support { actor, amount }),
        (actor.clone(), 0..8u64).prop_map(|(actor, id)| Op::ApproveNeed { actor, id }),
        (actor, 0..8u64).prop_map(|(actor, id)| Op::ApproveSupport { actor, id }),
    ]
}

fn lifecycle_case(ops: Vec<Op>) -> Result<(), TestCaseError> {
    let accounts: Vec<PublicKey> = (20..24).map(|i| key(i).public()).collect();
    let mut state = ContractState::genesis_state(accounts[0]);
    state.execute(&accounts[0], &Payload::SetUser { target: accounts[1], role: Role::Checker }, 0).unwrap();
    for (h, op) in ops.into_iter().enumerate() {
        let height = h as u64 + 1;
        let (actor, payload) = match op {
            Op::Grant { actor, target, role } => (actor, Payload::SetUser { target: accounts[target], role }),
            Op::Need { actor, amount } => {
                (actor, Payload::CreateNeed { kind: "k".into(), amount, unit: "u".into(), personal_ref: Digest::ZERO })
            }
            Op::Support { actor, amount } => (
                actor,
                Payload::CreateSupport {
                    kind: "k".into(),
                    amount,
                    unit: "u".into(),
                    shipping: "s".into(),
                    personal_ref: Digest::ZERO,
                },
            ),
            Op::ApproveNeed { actor, id } => (actor, Payload::ApproveNeed { need_id: id }),
            Op::ApproveSupport { actor, id } => (actor, Payload::ApproveSupport { support_id: id }),
        };
        let before = state.clone();
        let _ = state.execute(&accounts[actor], &payload, height);
        for (old, new) in before.show_needs().iter().zip(state.show_needs()) {
            if old.status == Status::Approved {
                prop_assert_eq!(old, new, "approved need changed");
            }
        }
        for (old, new) in before.show_supports().iter().zip(state.show_supports()) {
            if old.status == Status::Approved {
                prop_assert_eq!(old, new, "approved support changed");
            }
        }
        prop_assert!(state.show_needs().len() >= before.show_needs().len());
        prop_assert!(state.show_supports().len() >= before.show_supports().len());
        for (i, n) in state.show_needs().iter().enumerate() {
            prop_assert_eq!(n.need_id, i as u64);
        }
        for (i, s) in state.show_supports().iter().enumerate() {
            prop_assert_eq!(s.support_id, i as u64);
        }
    }
    Ok(())
}

fn lifecycle() -> Result<String, String> {
    let cases = 512;
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner
        .run(&prop::collection::vec(op_strategy(), 0..120), lifecycle_case)
        .map(|()| format!("{cases} random histories of up to 120 ops"))
        .map_err(|e| e.to_string())
}

// ----------------------------------------------------------------- main ----

fn main() {
    let mut gate = Gate { failed: 0 };
    let root = tempfile::tempdir().expect("temp dir");

    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().expect("runtime");
    let e2e = rt.block_on(run_e2e(root.path()));
    drop(rt);
    gate.report("scenario A (3 nodes)", e2e.scenario_a.clone());
    gate.report("scenario B (5 nodes)", e2e.scenario_b.clone());

    let sweep = run_sweep();
    let secs = sweep.elapsed.as_secs_f64();
    gate.report(
        "raft safety sweep",
        if !sweep.safety.is_empty() {
            Err(format!("{} of {SWEEP_SEEDS} seeds violated safety, first: {}", sweep.safety.len(), sweep.safety[0]))
        } else if sweep.elapsed >= Duration::from_secs(600) {
            Err(format!("{SWEEP_SEEDS} seeds clean but took {secs:.0} s"))
        } else {
            Ok(format!("{SWEEP_SEEDS} seeds, 5 nodes, 0 violations in {secs:.1} s (< 600 s)"))
        },
    );
    let live = SWEEP_SEEDS - sweep.liveness_misses.len() as u64;
    let live_pct = 100.0 * live as f64 / SWEEP_SEEDS as f64;
    gate.report(
        "liveness",
        if live_pct >= 99.0 && sweep.liveness_safety.is_empty() {
            Ok(format!("{live}/{SWEEP_SEEDS} seeds ({live_pct:.1}%) met the {LIVENESS_BOUND_MS} ms bound; misses {:?} are safe", sweep.liveness_misses))
        } else {
            Err(format!(
                "{live}/{SWEEP_SEEDS} seeds ({live_pct:.1}%) met the bound; misses {:?}; misses with safety violations {:?}",
                sweep.liveness_misses, sweep.liveness_safety
            ))
        },
    );

    let matrix = authorization_matrix();
    let fuzz = authorization_fuzz();
    gate.report(
        "authorization",
        match (matrix, fuzz) {
            (Ok(m), Ok(f)) => Ok(format!("{m}; {f}")),
            (Err(e), _) | (_, Err(e)) => Err(e),
        },
    );

    let stored = stored_blocks(&e2e.dirs);
    let e2e_hits: Vec<String> = stored
        .iter()
        .flat_map(|(path, bytes)| {
            e2e.sentinels
                .iter()
                .filter(|s| contains(bytes, s.as_bytes()))
                .map(move |s| format!("{s} in {}", path.display()))
        })
        .collect();
    gate.report(
        "privacy separation",
        if !e2e_hits.is_empty() {
            Err(format!("sentinels on chain: {}", e2e_hits.join(", ")))
        } else if !sweep.privacy.is_empty() {
            Err(format!("{} sim seeds leaked, first: {}", sweep.privacy.len(), sweep.privacy[0]))
        } else if stored.is_empty() || sweep.sentinels_planted == 0 {
            Err("nothing was scanned".into())
        } else {
            e2e.deletion.clone().map(|d| {
                format!(
                    "{} e2e block files and {} sim blocks hold none of {} sentinels; {d}",
                    stored.len(),
                    sweep.blocks_scanned,
                    e2e.sentinels.len() as u64 + sweep.sentinels_planted
                )
            })
        },
    );

    gate.report(
        "determinism",
        if !sweep.replay.is_empty() {
            Err(format!("sim replay mismatch, first: {}", sweep.replay[0]))
        } else if !sweep.nondeterministic.is_empty() {
            Err(format!("traces differ between equal configs for seeds {:?}", sweep.nondeterministic))
        } else {
            e2e_replay(&e2e).map(|nodes| {
                format!(
                    "replay matches on {nodes} and {SWEEP_SEEDS} sim chains; {} configs rerun to identical traces",
                    sweep.determinism_checked
                )
            })
        },
    );

    gate.report("lifecycle monotonicity", lifecycle());

    println!("{} criteria failed", gate.failed);
    if gate.failed > 0 {
        std::process::exit(1);
    }
}
