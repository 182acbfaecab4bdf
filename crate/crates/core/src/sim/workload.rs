use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClientOp, Fault, ScheduledFault, ScheduledOp, SimConfig, ADMIN};
use crate::contract::Role;

const CHECKERS: [&str; 2] = ["checker-1", "checker-2"];
const CREATORS: [&str; 3] = ["creator-1", "creator-2", "creator-3"];
const KINDS: [&str; 4] = ["blanket", "tent", "water", "medicine"];

/// When the randomized fault window closes with a final heal.
pub const SWEEP_HEAL_AT: u64 = 6_000;

/// A randomized five-node run: checker grants, needs and supports with
/// their approvals, and a fault schedule of partitions, crashes and message
/// loss that is fully healed at [`SWEEP_HEAL_AT`].
pub fn sweep_config(seed: u64) -> SimConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7377_6565_7000_0000);
    let nodes = 5;
    let mut cfg = SimConfig::new(nodes, seed);

    let mut ops = Vec::new();
    for c in CHECKERS {
        ops.push(ScheduledOp {
            at: rng.gen_range(0..300),
            op: ClientOp::GrantRole { by: ADMIN.into(), target: c.into(), role: Role::Checker },
        });
    }
    let needs = rng.gen_range(2..=4);
    let supports = rng.gen_range(1..=3);
    for _ in 0..needs {
        ops.push(ScheduledOp {
            at: rng.gen_range(0..5_000),
            op: ClientOp::CreateNeed {
                by: CREATORS.choose(&mut rng).expect("nonempty").to_string(),
                kind: KINDS.choose(&mut rng).expect("nonempty").to_string(),
                amount: rng.gen_range(1..500),
                unit: "pcs".into(),
            },
        });
    }
    for _ in 0..supports {
        ops.push(ScheduledOp {
            at: rng.gen_range(0..5_000),
            op: ClientOp::CreateSupport {
                by: CREATORS.choose(&mut rng).expect("nonempty").to_string(),
                kind: KINDS.choose(&mut rng).expect("nonempty").to_string(),
                amount: rng.gen_range(1..500),
                unit: "pcs".into(),
                shipping: ["cargo", "truck", "air"].choose(&mut rng).expect("nonempty").to_string(),
            },
        });
    }
    for need_id in 0..needs {
        ops.push(ScheduledOp {
            at: rng.gen_range(0..5_500),
            op: ClientOp::ApproveNeed { by: CHECKERS.choose(&mut rng).expect("nonempty").to_string(), need_id },
        });
    }
    for support_id in 0..supports {
        ops.push(ScheduledOp {
            at: rng.gen_range(0..5_500),
            op: ClientOp::ApproveSupport { by: CHECKERS.choose(&mut rng).expect("nonempty").to_string(), support_id },
        });
    }
    cfg.workload = ops;

    let mut faults = Vec::new();
    // Crashes are capped at two outstanding ones so that a majority usually
    // survives; a blind leader crash counts as one. Restarts pick any node
    // (restarting a live node is a no-op), so the count is an estimate.
    let mut down = 0usize;
    let mut t = rng.gen_range(100..600);
    while t < SWEEP_HEAL_AT - 300 {
        let fault = match rng.gen_range(0..7) {
            0 => {
                let mut order: Vec<usize> = (0..nodes).collect();
                order.shuffle(&mut rng);
                let cut = rng.gen_range(1..nodes);
                Fault::Partition { a: order[..cut].to_vec(), b: order[cut..].to_vec() }
            }
            1 => Fault::Heal,
            2 if down < 2 => {
                down += 1;
                Fault::Crash { node: rng.gen_range(0..nodes) }
            }
            3 | 4 if down < 2 => {
                down += 1;
                Fault::CrashLeader
            }
            5 if down > 0 => {
                down -= 1;
                Fault::Restart { node: rng.gen_range(0..nodes) }
            }
            _ => Fault::Drop { probability: rng.gen_range(0.05..=0.3), duration: rng.gen_range(200..1_500) },
        };
        faults.push(ScheduledFault { at: t, fault });
        t += rng.gen_range(150..900);
    }
    faults.push(ScheduledFault { at: SWEEP_HEAL_AT, fault: Fault::Heal });
    for node in 0..nodes {
        faults.push(ScheduledFault { at: SWEEP_HEAL_AT, fault: Fault::Restart { node } });
    }
    cfg.faults = faults;
    cfg
}
