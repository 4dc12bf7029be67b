//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scabd::checker::{
    audit_logical_clocks, audit_proposition1, build_logical_time_history, check_linearizable,
    check_sc_bruteforce, check_sc_compositional, check_sc_compositional_report,
    is_legal_sequential, preserves_precedence, Verdict, DEFAULT_SEARCH_CAP,
};
use scabd::model::{
    compare_timestamps, histories_equivalent, quorum_size, Event, History, Message, OpId, OpKind,
    Operation, ProcessId, ReturnValue, Timestamp, TimestampValuePair,
};
use scabd::protocol::{Mutation, ProtocolKind, Replica, Stimulus};
use scabd::sim::{
    fuzz_config, register_name, run_simulation, CrashSpec, DelayModel, Delivery, Outcome,
    SimConfig, Trace, Workload,
};

type Criterion = Result<String, String>;
type Check = fn() -> Criterion;

fn main() -> ExitCode {
    let criteria: [(&str, Check); 8] = [
        ("1 rounds per operation", rounds),
        ("2 termination under tolerated crashes", termination),
        (
            "3 SC-ABD histories are sequentially consistent",
            sequential_consistency,
        ),
        (
            "4 compositional acceptance implies oracle acceptance",
            oracle_agreement,
        ),
        ("5 checker discrimination", discrimination),
        ("6 mutation detection", mutation_detection),
        ("7 logical clock audit", clock_audit),
        ("8 property suites", property_suites),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(cfg: &SimConfig) -> Result<Trace, String> {
    run_simulation(cfg).map_err(|e| format!("seed {}: {e}", cfg.seed))
}

fn mixed_config(seed: u64, n: usize) -> SimConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = rng.random_range(1..=30);
    SimConfig {
        n,
        seed,
        delay: DelayModel::Uniform { min: 1, max },
        workload: Workload {
            ops_per_process: rng.random_range(1..=6),
            read_fraction: rng.random_range(0.0..=1.0),
            register_count: rng.random_range(1..=3),
            think_time: rng.random_range(0..=5),
        },
        ..SimConfig::default()
    }
}

fn kinds(h: &History) -> BTreeMap<OpId, OpKind> {
    h.events().iter().map(|e| (e.op.id, e.op.kind)).collect()
}

fn rounds() -> Criterion {
    let mut ops = 0usize;
    for seed in 0..1000u64 {
        let n = [3, 5, 7][seed as usize % 3];
        let cfg = mixed_config(seed, n);
        for protocol in [ProtocolKind::ScAbd, ProtocolKind::MwAbd] {
            let trace = run(&SimConfig {
                protocol,
                ..cfg.clone()
            })?;
            let kinds = kinds(&trace.history);
            for (op, &r) in &trace.rounds {
                let expected = match (protocol, kinds[op]) {
                    (ProtocolKind::ScAbd, OpKind::Write) => 1,
                    (_, _) => 2,
                };
                if r != expected {
                    return Err(format!(
                        "seed {seed} {} {op} {}: {r} rounds",
                        protocol.display_name(),
                        kinds[op].as_str()
                    ));
                }
                ops += 1;
            }
        }
    }
    Ok(format!(
        "{ops} operations over 1000 seeds; SC-ABD W:1 R:2, MW-ABD W:2 R:2"
    ))
}

fn with_random_crashes(mut cfg: SimConfig, rng: &mut impl Rng, count: usize) -> SimConfig {
    let mut procs: Vec<ProcessId> = ProcessId::all(cfg.n).collect();
    procs.shuffle(rng);
    cfg.crashes = procs[..count]
        .iter()
        .map(|&proc| CrashSpec {
            proc,
            at: rng.random_range(0..80),
        })
        .collect();
    cfg
}

fn termination() -> Criterion {
    let mut correct_ops = 0;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57);
        let n = [3, 4, 5, 7][rng.random_range(0..4)];
        let f = (n - 1) / 2;
        let count = rng.random_range(0..=f);
        for protocol in [ProtocolKind::ScAbd, ProtocolKind::MwAbd] {
            for mid_op_crash in [false, true] {
                let cfg = SimConfig {
                    protocol,
                    mid_op_crash,
                    ..with_random_crashes(mixed_config(seed, n), &mut rng, count)
                };
                let trace = run(&cfg)?;
                if trace.outcome != Outcome::Quiescent {
                    return Err(format!("seed {seed}: horizon exhausted"));
                }
                let unfinished = trace.unfinished_correct_ops();
                if !unfinished.is_empty() {
                    return Err(format!(
                        "seed {seed}: {} ops never completed",
                        unfinished.len()
                    ));
                }
                let crashed = trace.crashed();
                correct_ops += trace
                    .history
                    .events()
                    .iter()
                    .filter(|e| e.is_invocation() && !crashed.contains(&e.proc()))
                    .count();
            }
        }
    }
    Ok(format!(
        "{correct_ops} operations of correct processes completed over 1000 seeds"
    ))
}

fn sequential_consistency() -> Criterion {
    let mut fast = 0;
    let mut registers = 0;
    for seed in 0..10_000u64 {
        let trace = run(&fuzz_config(seed, Mutation::None))?;
        let report = check_sc_compositional_report(&trace.history, DEFAULT_SEARCH_CAP)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        if !report.overall.is_accepted() {
            return Err(format!("seed {seed}: {:?}", report.overall));
        }
        registers += report.registers.len();
        fast += report.registers.iter().filter(|r| r.fast_path).count();
    }
    Ok(format!(
        "10000 runs accepted; fast path on {fast} of {registers} registers"
    ))
}

fn small_config(seed: u64) -> SimConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a11);
    let n = rng.random_range(2..=5);
    let mutation =
        [Mutation::None, Mutation::SmallQuorum, Mutation::NoWriteback][seed as usize % 3];
    let mut cfg = if mutation == Mutation::None {
        mixed_config(seed, n)
    } else {
        SimConfig {
            n,
            ..fuzz_config(seed, mutation)
        }
    };
    cfg.n = n;
    cfg.mutation = mutation;
    cfg.seed = seed;
    cfg.workload.ops_per_process = rng.random_range(1..=10 / n);
    cfg
}

fn oracle_agreement() -> Criterion {
    let mut compositional_accepts = 0;
    let mut rejects = 0;
    for seed in 0..1000u64 {
        let cfg = small_config(seed);
        let trace = run(&cfg)?;
        if trace.history.len() > 20 {
            return Err(format!("seed {seed}: more than 10 operations"));
        }
        let comp = check_sc_compositional(&trace.history).map_err(|e| e.to_string())?;
        let oracle = check_sc_bruteforce(&trace.history).map_err(|e| e.to_string())?;
        if comp.is_accepted() {
            compositional_accepts += 1;
            if !oracle.is_accepted() {
                return Err(format!("seed {seed}: oracle rejects accepted history"));
            }
        } else {
            rejects += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut random_accepts = 0;
    for _ in 0..1000 {
        let ops = rng.random_range(1..=10);
        let h = common::random_history(&mut rng, 3, ops, 2);
        if check_sc_compositional(&h)
            .map_err(|e| e.to_string())?
            .is_accepted()
        {
            random_accepts += 1;
            if !check_sc_bruteforce(&h)
                .map_err(|e| e.to_string())?
                .is_accepted()
            {
                return Err(format!("random history disagrees: {h:?}"));
            }
        }
    }
    Ok(format!(
        "1000 simulated runs ({compositional_accepts} accepted, {rejects} rejected) and \
         1000 random histories ({random_accepts} accepted), no disagreement"
    ))
}

fn discrimination() -> Criterion {
    let x = common::reg("x");
    let p = ProcessId(1);
    let mut w = Operation::write(OpId(0), p, x.clone(), 1);
    let wi = Event::invocation(w.clone(), 0, Some(scabd::model::LogicalTime(1)));
    w.ret = Some(ReturnValue::Ok);
    let wr = Event::response(w, 1, Some(scabd::model::LogicalTime(2)));
    let mut r = Operation::read(OpId(1), p, x);
    let ri = Event::invocation(r.clone(), 2, Some(scabd::model::LogicalTime(3)));
    r.ret = Some(ReturnValue::Value(0));
    let rr = Event::response(r, 3, Some(scabd::model::LogicalTime(4)));
    let illegal = History::new(vec![wi, wr, ri, rr]);
    let a = check_sc_compositional(&illegal).map_err(|e| e.to_string())?;
    let b = check_sc_bruteforce(&illegal).map_err(|e| e.to_string())?;
    if !a.is_rejected() || !b.is_rejected() {
        return Err("w(x,1); r(x)->0 was not rejected by both checkers".into());
    }

    let trace = run(&common::stale_read_config())?;
    let h = &trace.history;
    if check_linearizable(h)
        .map_err(|e| e.to_string())?
        .is_accepted()
    {
        return Err("stale-read history is unexpectedly linearizable".into());
    }
    let a = check_sc_compositional(h).map_err(|e| e.to_string())?;
    let b = check_sc_bruteforce(h).map_err(|e| e.to_string())?;
    if !a.is_accepted() || !b.is_accepted() {
        return Err("stale-read history not accepted by both checkers".into());
    }
    Ok(
        "illegal history rejected by both; stale read accepted by both, \
        rejected by real-time linearizability"
            .into(),
    )
}

fn mutation_detection() -> Criterion {
    let mut small_quorum = None;
    let mut small_quorum_hits = 0;
    let mut no_writeback = None;
    let mut no_writeback_hits = 0;
    for seed in 0..1000u64 {
        let trace = run(&fuzz_config(seed, Mutation::SmallQuorum))?;
        if check_sc_compositional(&trace.history)
            .map_err(|e| e.to_string())?
            .is_rejected()
        {
            small_quorum_hits += 1;
            small_quorum.get_or_insert(seed);
        }
        let trace = run(&fuzz_config(seed, Mutation::NoWriteback))?;
        if !audit_proposition1(&trace) {
            no_writeback_hits += 1;
            no_writeback.get_or_insert(seed);
        }
    }
    match (small_quorum, no_writeback) {
        (Some(a), Some(b)) => Ok(format!(
            "small-quorum rejected on {small_quorum_hits}/1000 seeds (first {a}); \
             no-writeback fails the phase audit on {no_writeback_hits}/1000 (first {b})"
        )),
        _ => Err(format!(
            "small-quorum detected {small_quorum_hits}/1000, no-writeback {no_writeback_hits}/1000"
        )),
    }
}

fn clock_audit() -> Criterion {
    let mut traces = 0;
    let mut lowered = 0;
    for seed in 0..2000u64 {
        let mut cfg = fuzz_config(seed, Mutation::None);
        if seed % 2 == 1 {
            cfg.protocol = ProtocolKind::MwAbd;
        }
        cfg.mid_op_crash = seed % 4 == 3;
        let trace = run(&cfg)?;
        if !audit_logical_clocks(&trace) {
            return Err(format!("seed {seed}: unmutated trace fails the audit"));
        }
        traces += 1;
        let mut bad = trace.clone();
        let handled: Vec<usize> = bad
            .messages
            .iter()
            .enumerate()
            .filter(|(_, m)| matches!(m.delivery, Delivery::Handled { .. }))
            .map(|(i, _)| i)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = &mut bad.messages[handled[rng.random_range(0..handled.len())]];
        if let Delivery::Handled { rt, .. } = m.delivery {
            m.delivery = Delivery::Handled {
                rt,
                lt: m.msg.body.lt(),
            };
        }
        if audit_logical_clocks(&bad) {
            return Err(format!("seed {seed}: lowered receive lt passes the audit"));
        }
        lowered += 1;
    }
    Ok(format!(
        "{traces} unmutated traces pass; {lowered} traces with one lowered receive lt fail"
    ))
}

const CASES: usize = 10_000;

fn property_suites() -> Criterion {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut lines = Vec::new();

    // Timestamp total order.
    let mut ts = || Timestamp::new(rng.random_range(0..6), rng.random_range(0..4));
    for _ in 0..CASES {
        let (a, b, c) = (ts(), ts(), ts());
        let ab = compare_timestamps(a, b);
        if ab != compare_timestamps(b, a).reverse()
            || (ab.is_eq() != (a == b))
            || (a <= b && b <= c && a > c)
            || (a.lt < b.lt && a >= b)
            || (a.lt == b.lt && a.pid < b.pid && a >= b)
        {
            return Err(format!("timestamp order broken at {a:?} {b:?} {c:?}"));
        }
    }
    lines.push("timestamp order");

    // Quorum intersection.
    for n in 1..=100 {
        let q = quorum_size(n).map_err(|e| e.to_string())?;
        if 2 * q <= n || q > n {
            return Err(format!("quorum_size({n}) = {q}"));
        }
    }
    for _ in 0..CASES {
        let n = rng.random_range(1..=100);
        let q = quorum_size(n).unwrap();
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        let a: BTreeSet<usize> = all[..q].iter().copied().collect();
        all.shuffle(&mut rng);
        if all[..q].iter().all(|i| !a.contains(i)) {
            return Err(format!("disjoint quorums for n={n}"));
        }
    }
    lines.push("quorum intersection");

    // Replica tvps never decrease.
    for case in 0..CASES {
        tvps_monotone(&mut ChaCha8Rng::seed_from_u64(case as u64))
            .map_err(|e| format!("case {case}: {e}"))?;
    }
    lines.push("tvps monotonicity");

    // H and its logical-time reordering are equivalent.
    for case in 0..CASES {
        let h = if case % 2 == 0 {
            let procs = rng.random_range(1..=5);
            let ops = rng.random_range(0..=15);
            common::random_history(&mut rng, procs, ops, 2)
        } else {
            run(&fuzz_config(case as u64, Mutation::None))?.history
        };
        let hlt = build_logical_time_history(&h).map_err(|e| e.to_string())?;
        if !histories_equivalent(&h, hlt.history()) {
            return Err(format!("case {case}: H^lt not equivalent"));
        }
    }
    lines.push("H ~ H^lt");

    // Phase audit and witness validity on protocol traces.
    for case in 0..CASES as u64 {
        let mut cfg = fuzz_config(case + 1_000_000, Mutation::None);
        if case % 3 == 0 {
            cfg.protocol = ProtocolKind::MwAbd;
        }
        let trace = run(&cfg)?;
        if !audit_proposition1(&trace) {
            return Err(format!("case {case}: phase audit fails"));
        }
        witness_valid(&trace.history).map_err(|e| format!("case {case}: {e}"))?;
    }
    lines.push("phase audit");
    for case in 0..CASES {
        let procs = rng.random_range(1..=4);
        let ops = rng.random_range(0..=8);
        let h = common::random_history(&mut rng, procs, ops, 2);
        witness_valid(&h).map_err(|e| format!("random case {case}: {e}"))?;
    }
    lines.push("witness validity");

    Ok(format!("{} with {CASES}+ cases each", lines.join(", ")))
}

fn tvps_monotone(rng: &mut impl Rng) -> Result<(), String> {
    let n = rng.random_range(1..=5);
    let protocol = if rng.random_bool(0.5) {
        ProtocolKind::ScAbd
    } else {
        ProtocolKind::MwAbd
    };
    let mut replicas: Vec<Replica> = ProcessId::all(n)
        .map(|p| Replica::new(p, n, protocol).unwrap())
        .collect();
    let regs = [register_name(0), register_name(1)];
    let mut network: Vec<Message> = Vec::new();
    let mut next_op = 0;
    for _ in 0..40 {
        let i = rng.random_range(0..n);
        let stimulus = if !network.is_empty() && rng.random_bool(0.7) {
            let k = rng.random_range(0..network.len());
            let msg = network.swap_remove(k);
            let to = msg.to.index();
            let before: Vec<TimestampValuePair> =
                regs.iter().map(|r| replicas[to].stored(r)).collect();
            let out = replicas[to]
                .step(Stimulus::Deliver(msg))
                .map_err(|e| e.to_string())?;
            network.extend(out.outbox);
            check_monotone(&replicas[to], &regs, &before)?;
            continue;
        } else if replicas[i].is_idle() {
            next_op += 1;
            let reg = regs[rng.random_range(0..2)].clone();
            if rng.random_bool(0.5) {
                Stimulus::InvokeRead {
                    op: OpId(next_op),
                    reg,
                }
            } else {
                Stimulus::InvokeWrite {
                    op: OpId(next_op),
                    reg,
                    val: next_op as i64,
                }
            }
        } else {
            continue;
        };
        let before: Vec<TimestampValuePair> = regs.iter().map(|r| replicas[i].stored(r)).collect();
        let out = replicas[i].step(stimulus).map_err(|e| e.to_string())?;
        network.extend(out.outbox);
        check_monotone(&replicas[i], &regs, &before)?;
    }
    Ok(())
}

fn check_monotone(
    replica: &Replica,
    regs: &[scabd::model::RegisterId],
    before: &[TimestampValuePair],
) -> Result<(), String> {
    for (r, old) in regs.iter().zip(before) {
        let new = replica.stored(r);
        if new.ts < old.ts || (new.ts == old.ts && new.val != old.val) {
            return Err(format!("{r:?} went from {old:?} to {new:?}"));
        }
    }
    Ok(())
}

/// Every accepted witness, per register and composed, is legal and
/// equivalent to its input; per-register witnesses also preserve the
/// precedence of the logical-time projection they linearize.
fn witness_valid(h: &History) -> Result<(), String> {
    let err = |e: scabd::checker::CheckError| e.to_string();
    let report = check_sc_compositional_report(h, DEFAULT_SEARCH_CAP).map_err(err)?;
    let hlt = build_logical_time_history(h).map_err(err)?.into_history();
    for r in &report.registers {
        if let Verdict::Accepted { witness } = &r.verdict {
            let hx = hlt.project_register(&r.register);
            if !is_legal_sequential(witness).map_err(err)? {
                return Err(format!("{:?}: witness not legal", r.register));
            }
            if !histories_equivalent(witness, &hx) {
                return Err(format!("{:?}: witness not equivalent", r.register));
            }
            if !preserves_precedence(&hx, witness).map_err(err)? {
                return Err(format!("{:?}: witness breaks precedence", r.register));
            }
        }
    }
    if let Verdict::Accepted { witness } = &report.overall {
        if !is_legal_sequential(witness).map_err(err)? || !histories_equivalent(witness, h) {
            return Err("composed witness invalid".into());
        }
    }
    Ok(())
}
