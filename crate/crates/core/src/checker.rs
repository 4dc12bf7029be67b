//! Consistency checking for recorded histories.
//!
//! The main entry point, [`check_sc_compositional`], certifies sequential
//! consistency one register at a time:
//!
//! 1. reorder the history by logical time (`H^lt`); per-process order is
//!    preserved, so `SC(H) ⇔ SC(H^lt)`;
//! 2. check that every register subhistory `H^lt|x` is linearizable;
//! 3. linearizability composes across registers, and a linearizable history
//!    is sequentially consistent, so the whole history is accepted.
//!
//! Step 2 first tries a direct witness built from the instrumented update
//! timestamps (writes in timestamp order, each read right after the write it
//! observed) and falls back to an exhaustive search when that witness does
//! not check out. The chain is sound but one-directional: a rejection means
//! "not certified", not "not sequentially consistent". For small histories
//! [`check_sc_bruteforce`] decides SC exactly.

use std::collections::{BTreeMap, HashMap, HashSet};

use fixedbitset::FixedBitSet;
use thiserror::Error;

use crate::model::{
    histories_equivalent, Event, EventKind, History, LogicalTime, ModelError, OpId, OpKind, OpSpan,
    ProcessId, RegisterId, ReturnValue, Timestamp, Value,
};
use crate::sim::{Delivery, Trace};

/// Default bound on explored search states before giving up.
pub const DEFAULT_SEARCH_CAP: u64 = 10_000_000;

/// Default bound on the number of operations the brute-force oracle accepts.
pub const DEFAULT_ORACLE_CAP: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error("malformed history: {0}")]
    Model(#[from] ModelError),
    #[error("operation {0} has an event without a logical time")]
    MissingLogicalTime(OpId),
    #[error("operation {0} has no update timestamp")]
    MissingTimestamp(OpId),
    #[error("operation {0} carries a timestamp that matches no write")]
    MalformedInstrumentation(OpId),
    #[error("history is not sequential")]
    NotSequential,
    #[error("history has pending operations")]
    Incomplete,
    #[error("history has {ops} operations, oracle limit is {cap}")]
    OracleCapExceeded { ops: usize, cap: usize },
    #[error("per-register witnesses could not be composed")]
    CompositionFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    /// No legal order preserves the operations' precedence.
    NotLinearizable,
    /// No interleaving of the process subhistories is legal.
    NotSequentiallyConsistent,
}

impl Condition {
    pub fn describe(self) -> &'static str {
        match self {
            Condition::NotLinearizable => "not linearizable in logical-time order",
            Condition::NotSequentiallyConsistent => "no legal interleaving of process histories",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub register: Option<RegisterId>,
    pub condition: Condition,
    /// Two operations that cannot be reconciled, when one was isolated.
    pub conflict: Option<(OpId, OpId)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accepted {
        witness: History,
    },
    Rejected(Violation),
    /// The search cap was hit before a decision.
    Undecided {
        explored: u64,
    },
}

impl Verdict {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Verdict::Accepted { .. })
    }

    pub fn is_rejected(&self) -> bool {
        matches!(self, Verdict::Rejected(_))
    }

    pub fn witness(&self) -> Option<&History> {
        match self {
            Verdict::Accepted { witness } => Some(witness),
            _ => None,
        }
    }
}

/// A history sorted by `(logical time, process, per-process position)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogicalTimeHistory(History);

impl LogicalTimeHistory {
    pub fn history(&self) -> &History {
        &self.0
    }

    pub fn into_history(self) -> History {
        self.0
    }
}

pub fn build_logical_time_history(h: &History) -> Result<LogicalTimeHistory, CheckError> {
    h.spans()?;
    let mut seen: HashMap<ProcessId, usize> = HashMap::new();
    let mut keyed = Vec::with_capacity(h.len());
    for e in h.events() {
        let lt = e.lt.ok_or(CheckError::MissingLogicalTime(e.op.id))?;
        let idx = seen.entry(e.proc()).or_default();
        keyed.push(((lt, e.proc(), *idx), e.clone()));
        *idx += 1;
    }
    keyed.sort_by_key(|(k, _)| *k);
    Ok(LogicalTimeHistory(History::new(
        keyed.into_iter().map(|(_, e)| e).collect(),
    )))
}

/// Every read returns the value of the closest preceding write to its
/// register, or 0 when there is none.
pub fn is_legal_sequential(s: &History) -> Result<bool, CheckError> {
    if !s.is_sequential() {
        return Err(CheckError::NotSequential);
    }
    let mut mem: HashMap<&RegisterId, Value> = HashMap::new();
    for e in s.events().iter().filter(|e| e.kind == EventKind::Response) {
        match e.op.kind {
            OpKind::Write => {
                mem.insert(&e.op.reg, e.op.arg.unwrap_or_default());
            }
            OpKind::Read => {
                let current = mem.get(&e.op.reg).copied().unwrap_or(0);
                if e.op.ret != Some(ReturnValue::Value(current)) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Every pair ordered in `h` (response before invocation) keeps its order in
/// the sequential history `s`.
pub fn preserves_precedence(h: &History, s: &History) -> Result<bool, CheckError> {
    let spans = h.spans()?;
    let order: HashMap<OpId, usize> = s
        .events()
        .iter()
        .filter(|e| e.is_invocation())
        .enumerate()
        .map(|(i, e)| (e.op.id, i))
        .collect();
    let mut by_res: Vec<&OpSpan> = spans.iter().filter(|s| s.res.is_some()).collect();
    by_res.sort_by_key(|s| s.res);
    // For each op, the latest witness position among ops that completed
    // before it was invoked must be earlier than its own position.
    let mut by_inv: Vec<&OpSpan> = spans.iter().collect();
    by_inv.sort_by_key(|s| s.inv);
    let mut j = 0;
    let mut latest: Option<usize> = None;
    for op in by_inv {
        while j < by_res.len() && by_res[j].res.unwrap() < op.inv {
            let Some(&pos) = order.get(&by_res[j].id) else {
                return Ok(false);
            };
            latest = Some(latest.map_or(pos, |l| l.max(pos)));
            j += 1;
        }
        let Some(&pos) = order.get(&op.id) else {
            return Ok(false);
        };
        if latest.is_some_and(|l| l >= pos) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Sequential history listing each span's original invocation and response
/// events in the given order.
fn sequential_from(h: &History, spans: &[OpSpan], order: &[usize]) -> History {
    let events = h.events();
    let mut out = Vec::with_capacity(order.len() * 2);
    for &i in order {
        let s = &spans[i];
        out.push(events[s.inv].clone());
        if let Some(r) = s.res {
            out.push(events[r].clone());
        }
    }
    History::new(out)
}

/// Compact operation record for the searches.
#[derive(Debug, Clone)]
struct SearchOp {
    inv: usize,
    res: usize,
    reg: usize,
    kind: OpKind,
    /// Written value, or the value a read returned.
    val: Value,
}

enum SearchResult {
    Found(Vec<usize>),
    NotFound,
    CapHit(u64),
}

fn search_ops(spans: &[OpSpan]) -> Vec<SearchOp> {
    let mut regs: BTreeMap<&RegisterId, usize> = BTreeMap::new();
    for s in spans {
        let next = regs.len();
        regs.entry(&s.reg).or_insert(next);
    }
    spans
        .iter()
        .map(|s| SearchOp {
            inv: s.inv,
            res: s.res.unwrap_or(usize::MAX),
            reg: regs[&s.reg],
            kind: s.kind,
            val: s.value().unwrap_or_default(),
        })
        .collect()
}

/// Wing–Gong style search for a legal order that respects precedence, with
/// memoization on (linearized set, register contents).
fn linearize(ops: &[SearchOp], cap: u64) -> SearchResult {
    let nregs = ops.iter().map(|o| o.reg + 1).max().unwrap_or(0);
    let mut done = FixedBitSet::with_capacity(ops.len());
    let mut mem = vec![0 as Value; nregs];
    let mut order = Vec::with_capacity(ops.len());
    let mut seen: HashSet<(FixedBitSet, Vec<Value>)> = HashSet::new();
    let mut explored = 0u64;

    fn go(
        ops: &[SearchOp],
        done: &mut FixedBitSet,
        mem: &mut Vec<Value>,
        order: &mut Vec<usize>,
        seen: &mut HashSet<(FixedBitSet, Vec<Value>)>,
        explored: &mut u64,
        cap: u64,
    ) -> Option<bool> {
        if order.len() == ops.len() {
            return Some(true);
        }
        if !seen.insert((done.clone(), mem.clone())) {
            return Some(false);
        }
        *explored += 1;
        if *explored > cap {
            return None;
        }
        let min_res = (0..ops.len())
            .filter(|&i| !done.contains(i))
            .map(|i| ops[i].res)
            .min()
            .unwrap_or(usize::MAX);
        for i in 0..ops.len() {
            if done.contains(i) || ops[i].inv > min_res {
                continue;
            }
            let op = &ops[i];
            let saved = mem[op.reg];
            match op.kind {
                OpKind::Read if mem[op.reg] != op.val => continue,
                OpKind::Read => {}
                OpKind::Write => mem[op.reg] = op.val,
            }
            done.insert(i);
            order.push(i);
            match go(ops, done, mem, order, seen, explored, cap) {
                Some(true) => return Some(true),
                None => return None,
                Some(false) => {}
            }
            order.pop();
            done.set(i, false);
            mem[op.reg] = saved;
        }
        Some(false)
    }

    match go(
        ops,
        &mut done,
        &mut mem,
        &mut order,
        &mut seen,
        &mut explored,
        cap,
    ) {
        Some(true) => SearchResult::Found(order),
        Some(false) => SearchResult::NotFound,
        None => SearchResult::CapHit(explored),
    }
}

/// Linearizability of a complete history: a legal sequential witness that is
/// equivalent to `h` and keeps every response-before-invocation order.
pub fn check_linearizable(h: &History) -> Result<Verdict, CheckError> {
    check_linearizable_capped(h, DEFAULT_SEARCH_CAP)
}

pub fn check_linearizable_capped(h: &History, cap: u64) -> Result<Verdict, CheckError> {
    let spans = h.spans()?;
    if spans.iter().any(OpSpan::is_pending) {
        return Err(CheckError::Incomplete);
    }
    let ops = search_ops(&spans);
    Ok(match linearize(&ops, cap) {
        SearchResult::Found(order) => Verdict::Accepted {
            witness: sequential_from(h, &spans, &order),
        },
        SearchResult::CapHit(explored) => Verdict::Undecided { explored },
        SearchResult::NotFound => Verdict::Rejected(Violation {
            register: single_register(h),
            condition: Condition::NotLinearizable,
            conflict: find_conflict(&spans, &ops, cap),
        }),
    })
}

fn single_register(h: &History) -> Option<RegisterId> {
    let regs = h.registers();
    (regs.len() == 1).then(|| regs.into_iter().next().unwrap())
}

/// Narrows a non-linearizable history to a pair of operations: the op whose
/// response first makes a prefix non-linearizable, and an op whose removal
/// from that prefix repairs it.
///
/// A prefix keeps operations invoked before the cut; writes still running at
/// the cut are kept with an open-ended interval, reads are dropped.
fn find_conflict(spans: &[OpSpan], ops: &[SearchOp], cap: u64) -> Option<(OpId, OpId)> {
    let mut cuts: Vec<usize> = ops.iter().map(|o| o.res).collect();
    cuts.sort_unstable();
    for cut in cuts {
        let keep: Vec<usize> = (0..ops.len())
            .filter(|&i| ops[i].inv < cut && (ops[i].res <= cut || ops[i].kind == OpKind::Write))
            .collect();
        let prefix = |skip: Option<usize>| -> Vec<SearchOp> {
            keep.iter()
                .filter(|&&i| Some(i) != skip)
                .map(|&i| {
                    let mut o = ops[i].clone();
                    if o.res > cut {
                        o.res = usize::MAX;
                    }
                    o
                })
                .collect()
        };
        if !matches!(linearize(&prefix(None), cap), SearchResult::NotFound) {
            continue;
        }
        let closer = keep.iter().copied().find(|&i| ops[i].res == cut)?;
        let partner = keep
            .iter()
            .copied()
            .filter(|&i| i != closer)
            .find(|&i| matches!(linearize(&prefix(Some(i)), cap), SearchResult::Found(_)))
            .unwrap_or(closer);
        let (a, b) = if spans[partner].inv <= spans[closer].inv {
            (partner, closer)
        } else {
            (closer, partner)
        };
        return Some((spans[a].id, spans[b].id));
    }
    None
}

/// Sequential witness from update timestamps: writes by timestamp, each read
/// right after the write whose timestamp it carries (reads of the initial
/// value first); reads sharing a timestamp go by invocation logical time,
/// then process id.
pub fn construct_timestamp_witness(hx: &History) -> Result<History, CheckError> {
    let spans = hx.spans()?;
    let mut writes: Vec<(Timestamp, usize)> = Vec::new();
    let mut reads: Vec<(Timestamp, LogicalTime, ProcessId, usize)> = Vec::new();
    for (i, s) in spans.iter().enumerate() {
        let ts = s.ts.ok_or(CheckError::MissingTimestamp(s.id))?;
        match s.kind {
            OpKind::Write => writes.push((ts, i)),
            OpKind::Read => reads.push((ts, s.inv_lt.unwrap_or_default(), s.proc, i)),
        }
    }
    writes.sort();
    for pair in writes.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(CheckError::MalformedInstrumentation(spans[pair[1].1].id));
        }
    }
    let mut after: BTreeMap<Timestamp, Vec<(LogicalTime, ProcessId, usize)>> = BTreeMap::new();
    for (ts, lt, p, i) in reads {
        let known = ts.is_initial() || writes.binary_search_by_key(&ts, |w| w.0).is_ok();
        if !known {
            return Err(CheckError::MalformedInstrumentation(spans[i].id));
        }
        after.entry(ts).or_default().push((lt, p, i));
    }
    for group in after.values_mut() {
        group.sort();
    }
    let mut order = Vec::with_capacity(spans.len());
    let group = |ts: &Timestamp| after.get(ts).into_iter().flatten().map(|r| r.2);
    order.extend(group(&Timestamp::INITIAL));
    for (ts, w) in &writes {
        order.push(*w);
        order.extend(group(ts));
    }
    Ok(sequential_from(hx, &spans, &order))
}

/// Checks the three clauses a linearizability witness must satisfy.
pub fn is_valid_linearization(h: &History, witness: &History) -> Result<bool, CheckError> {
    Ok(is_legal_sequential(witness)?
        && histories_equivalent(witness, h)
        && preserves_precedence(h, witness)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterVerdict {
    pub register: RegisterId,
    pub verdict: Verdict,
    /// Decided by the timestamp witness alone, without search.
    pub fast_path: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositionalReport {
    pub registers: Vec<RegisterVerdict>,
    pub overall: Verdict,
}

pub fn check_sc_compositional(h: &History) -> Result<Verdict, CheckError> {
    Ok(check_sc_compositional_report(h, DEFAULT_SEARCH_CAP)?.overall)
}

pub fn check_sc_compositional_report(
    h: &History,
    cap: u64,
) -> Result<CompositionalReport, CheckError> {
    let spans = h.spans()?;
    if spans.iter().any(OpSpan::is_pending) {
        return Err(CheckError::Incomplete);
    }
    let hlt = build_logical_time_history(h)?.into_history();
    let mut registers = Vec::new();
    let mut rejected = None;
    let mut undecided = None;
    for reg in hlt.registers() {
        let hx = hlt.project_register(&reg);
        let fast = construct_timestamp_witness(&hx)
            .ok()
            .filter(|w| is_valid_linearization(&hx, w).unwrap_or(false));
        let (verdict, fast_path) = match fast {
            Some(witness) => (Verdict::Accepted { witness }, true),
            None => (check_linearizable_capped(&hx, cap)?, false),
        };
        match &verdict {
            Verdict::Rejected(v) if rejected.is_none() => {
                let mut v = v.clone();
                v.register = Some(reg.clone());
                rejected = Some(v);
            }
            Verdict::Undecided { explored } => {
                undecided = Some(undecided.unwrap_or(0) + explored);
            }
            _ => {}
        }
        registers.push(RegisterVerdict {
            register: reg,
            verdict,
            fast_path,
        });
    }
    let overall = if let Some(v) = rejected {
        Verdict::Rejected(v)
    } else if let Some(explored) = undecided {
        Verdict::Undecided { explored }
    } else {
        let witness = compose(&hlt, &registers)?;
        if !is_legal_sequential(&witness)? || !histories_equivalent(&witness, h) {
            return Err(CheckError::CompositionFailed);
        }
        Verdict::Accepted { witness }
    };
    Ok(CompositionalReport { registers, overall })
}

/// Merges per-register witnesses into one sequential history of `hlt`.
///
/// Repeatedly emits the head of some register's witness that no remaining
/// operation precedes in `hlt`, preferring the smallest (timestamp,
/// invocation logical time, process). Such a head always exists because the
/// union of the witness orders and the precedence order is acyclic.
fn compose(hlt: &History, registers: &[RegisterVerdict]) -> Result<History, CheckError> {
    let spans = hlt.spans()?;
    let index: HashMap<OpId, usize> = spans.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
    let mut queues: Vec<std::collections::VecDeque<usize>> = registers
        .iter()
        .map(|r| {
            r.verdict
                .witness()
                .map(|w| {
                    w.events()
                        .iter()
                        .filter(|e| e.is_invocation())
                        .map(|e| index[&e.op.id])
                        .collect()
                })
                .unwrap_or_default()
        })
        .collect();
    let mut remaining = FixedBitSet::with_capacity(spans.len());
    remaining.insert_range(..);
    let mut order = Vec::with_capacity(spans.len());
    while order.len() < spans.len() {
        let min_res = remaining
            .ones()
            .map(|i| spans[i].res.unwrap_or(usize::MAX))
            .min()
            .unwrap_or(usize::MAX);
        let pick = queues
            .iter()
            .enumerate()
            .filter_map(|(q, queue)| queue.front().map(|&i| (q, i)))
            .filter(|&(_, i)| spans[i].inv < min_res)
            .min_by_key(|&(_, i)| {
                let s = &spans[i];
                (s.ts.unwrap_or_default(), s.inv_lt, s.proc)
            });
        let Some((q, i)) = pick else {
            return Err(CheckError::CompositionFailed);
        };
        queues[q].pop_front();
        remaining.set(i, false);
        order.push(i);
    }
    Ok(sequential_from(hlt, &spans, &order))
}

/// Exact SC decision for small complete histories: tries every interleaving
/// of the per-process operation sequences, pruning illegal prefixes.
pub fn check_sc_bruteforce(h: &History) -> Result<Verdict, CheckError> {
    check_sc_bruteforce_capped(h, DEFAULT_ORACLE_CAP)
}

pub fn check_sc_bruteforce_capped(h: &History, cap: usize) -> Result<Verdict, CheckError> {
    let spans = h.spans()?;
    if spans.iter().any(OpSpan::is_pending) {
        return Err(CheckError::Incomplete);
    }
    if spans.len() > cap {
        return Err(CheckError::OracleCapExceeded {
            ops: spans.len(),
            cap,
        });
    }
    let mut per_proc: BTreeMap<ProcessId, Vec<usize>> = BTreeMap::new();
    for (i, s) in spans.iter().enumerate() {
        per_proc.entry(s.proc).or_default().push(i);
    }
    let seqs: Vec<Vec<usize>> = per_proc.into_values().collect();
    let ops = search_ops(&spans);
    let nregs = ops.iter().map(|o| o.reg + 1).max().unwrap_or(0);

    fn go(
        seqs: &[Vec<usize>],
        ops: &[SearchOp],
        cursor: &mut Vec<usize>,
        mem: &mut Vec<Value>,
        order: &mut Vec<usize>,
    ) -> bool {
        if order.len() == ops.len() {
            return true;
        }
        for p in 0..seqs.len() {
            let Some(&i) = seqs[p].get(cursor[p]) else {
                continue;
            };
            let op = &ops[i];
            let saved = mem[op.reg];
            match op.kind {
                OpKind::Read if mem[op.reg] != op.val => continue,
                OpKind::Read => {}
                OpKind::Write => mem[op.reg] = op.val,
            }
            cursor[p] += 1;
            order.push(i);
            if go(seqs, ops, cursor, mem, order) {
                return true;
            }
            order.pop();
            cursor[p] -= 1;
            mem[op.reg] = saved;
        }
        false
    }

    let mut cursor = vec![0; seqs.len()];
    let mut mem = vec![0; nregs];
    let mut order = Vec::new();
    Ok(if go(&seqs, &ops, &mut cursor, &mut mem, &mut order) {
        Verdict::Accepted {
            witness: sequential_from(h, &spans, &order),
        }
    } else {
        Verdict::Rejected(Violation {
            register: single_register(h),
            condition: Condition::NotSequentiallyConsistent,
            conflict: None,
        })
    })
}

/// Completion rule for histories cut short by crashes: pending writes get a
/// response appended after every other event (their update may already be
/// visible), pending reads are dropped.
pub fn complete_pending(h: &History) -> Result<History, CheckError> {
    let spans = h.spans()?;
    let pending: Vec<&OpSpan> = spans.iter().filter(|s| s.is_pending()).collect();
    if pending.is_empty() {
        return Ok(h.clone());
    }
    let dropped: HashSet<OpId> = pending
        .iter()
        .filter(|s| s.kind == OpKind::Read)
        .map(|s| s.id)
        .collect();
    let max_lt = h.events().iter().filter_map(|e| e.lt).max();
    let max_rt = h.events().iter().map(|e| e.rt).max().unwrap_or(0);
    let mut events: Vec<Event> = h
        .events()
        .iter()
        .filter(|e| !dropped.contains(&e.op.id))
        .cloned()
        .collect();
    for s in pending.iter().filter(|s| s.kind == OpKind::Write) {
        let mut op = h.events()[s.inv].op.clone();
        op.ret = Some(ReturnValue::Ok);
        let lt = max_lt.map(|l| LogicalTime(l.0 + 1));
        events.push(Event::response(op, max_rt + 1, lt));
    }
    Ok(History::new(events))
}

/// Lamport clock audit: logical time strictly increases along each
/// process's handler executions and across every delivered message.
pub fn audit_logical_clocks(t: &Trace) -> bool {
    let mut steps: BTreeMap<ProcessId, Vec<(u64, LogicalTime)>> = BTreeMap::new();
    for e in t.history.events().iter().filter(|e| e.is_invocation()) {
        let Some(lt) = e.lt else { return false };
        steps.entry(e.proc()).or_default().push((e.rt, lt));
    }
    for m in &t.messages {
        if let Delivery::Handled { rt, lt } = m.delivery {
            if m.sent_lt() >= lt {
                return false;
            }
            steps.entry(m.msg.to).or_default().push((rt, lt));
        }
    }
    for seq in steps.values_mut() {
        seq.sort();
        if seq.windows(2).any(|w| w[0].1 >= w[1].1) {
            return false;
        }
    }
    let Ok(spans) = t.history.spans() else {
        return false;
    };
    spans.iter().all(|s| match (s.inv_lt, s.res_lt) {
        (Some(i), Some(r)) => i < r,
        (Some(_), None) => s.is_pending(),
        _ => false,
    })
}

/// For every register and every pair `o1` before `o2` in `H^lt|x` where `o1`
/// runs an update phase and `o2` a query phase: `ts(o1) <= ts(o2)`.
///
/// Phases are classified by what the traced protocol prescribes for each
/// operation kind, so a defective replica that skips a phase is still held
/// to the property.
pub fn audit_proposition1(t: &Trace) -> bool {
    let Ok(h) = complete_pending(&t.history) else {
        return false;
    };
    let Ok(hlt) = build_logical_time_history(&h) else {
        return false;
    };
    for reg in hlt.history().registers() {
        let hx = hlt.history().project_register(&reg);
        let Ok(spans) = hx.spans() else { return false };
        for o1 in spans.iter().filter(|s| t.protocol.has_update_phase(s.kind)) {
            for o2 in spans.iter().filter(|s| t.protocol.has_query_phase(s.kind)) {
                if !o1.precedes(o2) {
                    continue;
                }
                match (o1.ts, o2.ts) {
                    (Some(a), Some(b)) if a <= b => {}
                    _ => return false,
                }
            }
        }
    }
    true
}
