#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use scabd::model::{
    Event, History, LogicalTime, OpId, OpKind, Operation, ProcessId, RegisterId, ReturnValue, Value,
};
use scabd::sim::{register_name, DelayModel, PlannedOp, SimConfig};

pub fn reg(name: &str) -> RegisterId {
    RegisterId::new(name).unwrap()
}

/// Random well-formed, complete history.
///
/// Processes invoke and respond in a random interleaving. Writes use small
/// values (so reads can collide), reads return 0 or some written value.
/// Logical times increase per process by random steps, independently across
/// processes.
pub fn random_history(rng: &mut impl Rng, procs: usize, ops: usize, registers: usize) -> History {
    let names: Vec<RegisterId> = (0..registers).map(|i| reg(&format!("r{i}"))).collect();
    let mut pending: Vec<Option<Operation>> = vec![None; procs];
    let mut lts = vec![0u64; procs];
    let mut events = Vec::new();
    let mut written: Vec<Value> = vec![0];
    let mut issued = 0;
    let mut rt = 0;
    while issued < ops || pending.iter().any(Option::is_some) {
        let p = rng.random_range(0..procs);
        rt += 1;
        lts[p] += rng.random_range(1..=3);
        let lt = Some(LogicalTime(lts[p]));
        match pending[p].take() {
            Some(mut op) => {
                op.ret = Some(match op.kind {
                    OpKind::Write => ReturnValue::Ok,
                    OpKind::Read => ReturnValue::Value(written[rng.random_range(0..written.len())]),
                });
                events.push(Event::response(op, rt, lt));
            }
            None if issued < ops => {
                let id = OpId(issued as u64);
                let r = names[rng.random_range(0..registers)].clone();
                let pid = ProcessId::from_index(p);
                let op = if rng.random_bool(0.5) {
                    let v = rng.random_range(1..=3);
                    written.push(v);
                    Operation::write(id, pid, r, v)
                } else {
                    Operation::read(id, pid, r)
                };
                issued += 1;
                events.push(Event::invocation(op.clone(), rt, lt));
                pending[p] = Some(op);
            }
            None => {}
        }
    }
    History::new(events)
}

#[derive(Clone)]
struct Span {
    inv: usize,
    res: usize,
    reg: RegisterId,
    kind: OpKind,
    val: Value,
}

fn spans(h: &History) -> Vec<Span> {
    let mut open: HashMap<OpId, usize> = HashMap::new();
    let mut out: Vec<Span> = Vec::new();
    for (i, e) in h.events().iter().enumerate() {
        if e.is_invocation() {
            open.insert(e.op.id, out.len());
            out.push(Span {
                inv: i,
                res: usize::MAX,
                reg: e.op.reg.clone(),
                kind: e.op.kind,
                val: e.op.arg.unwrap_or(0),
            });
        } else {
            let s = &mut out[open[&e.op.id]];
            s.res = i;
            if let Some(ReturnValue::Value(v)) = e.op.ret {
                s.val = v;
            }
        }
    }
    out
}

fn legal(order: &[usize], ops: &[Span]) -> bool {
    let mut mem: HashMap<&RegisterId, Value> = HashMap::new();
    for &i in order {
        let op = &ops[i];
        match op.kind {
            OpKind::Write => {
                mem.insert(&op.reg, op.val);
            }
            OpKind::Read => {
                if mem.get(&op.reg).copied().unwrap_or(0) != op.val {
                    return false;
                }
            }
        }
    }
    true
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Linearizability by trying every permutation of the operations.
pub fn naive_linearizable(h: &History) -> bool {
    let ops = spans(h);
    permutations(ops.len()).into_iter().any(|order| {
        let pos: Vec<usize> = {
            let mut pos = vec![0; order.len()];
            for (k, &i) in order.iter().enumerate() {
                pos[i] = k;
            }
            pos
        };
        let respects = (0..ops.len())
            .all(|a| (0..ops.len()).all(|b| !(ops[a].res < ops[b].inv) || pos[a] < pos[b]));
        respects && legal(&order, &ops)
    })
}

/// Sequential consistency by trying every permutation that keeps each
/// process's own order.
pub fn naive_sequentially_consistent(h: &History) -> bool {
    let ops = spans(h);
    let procs: Vec<ProcessId> = h
        .events()
        .iter()
        .filter(|e| e.is_invocation())
        .map(|e| e.proc())
        .collect();
    permutations(ops.len()).into_iter().any(|order| {
        let mut pos = vec![0; order.len()];
        for (k, &i) in order.iter().enumerate() {
            pos[i] = k;
        }
        let keeps_program_order = (0..ops.len()).all(|a| {
            (0..ops.len())
                .all(|b| !(procs[a] == procs[b] && ops[a].inv < ops[b].inv) || pos[a] < pos[b])
        });
        keeps_program_order && legal(&order, &ops)
    })
}

pub fn read(reg: usize) -> PlannedOp {
    PlannedOp {
        kind: OpKind::Read,
        reg: register_name(reg),
        val: None,
    }
}

pub fn write(reg: usize, val: i64) -> PlannedOp {
    PlannedOp {
        kind: OpKind::Write,
        reg: register_name(reg),
        val: Some(val),
    }
}

/// p1 drives its clock up with reads, then writes x=1. p2 hears nothing
/// from anyone, starts after p1's write has completed, writes x=2 with a
/// smaller timestamp, and reads back 1. In real time that read is stale;
/// in logical time p2's operations come first, so the run is still
/// sequentially consistent.
pub fn stale_read_config() -> SimConfig {
    let p = ProcessId;
    let mut links = BTreeMap::new();
    links.insert((p(1), p(2)), 500);
    links.insert((p(3), p(2)), 500);
    SimConfig {
        n: 3,
        delay: DelayModel::PerLink { default: 1, links },
        scripts: Some(vec![
            vec![read(1), read(1), read(1), write(0, 1)],
            vec![write(0, 2), read(0)],
            vec![],
        ]),
        start_ticks: Some(vec![0, 100, 0]),
        ..SimConfig::default()
    }
}
