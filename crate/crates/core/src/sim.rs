//! Deterministic discrete-event simulation of `n` replicas over reliable,
//! asynchronous, non-FIFO links with crash-stop failures.
//!
//! All randomness comes from the configured seed, and events are popped in
//! `(due tick, insertion sequence)` order, so a configuration always produces
//! the same [`Trace`].

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{
    max_faults, Event, History, LogicalTime, Message, MessageKind, ModelError, OpId, OpKind,
    Operation, ProcessId, RegisterId, ReturnValue, Value,
};
use crate::protocol::{Mutation, ProtocolError, ProtocolKind, Replica, Stimulus};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("{crashes} crashes requested but {n} processes tolerate at most {tolerated}")]
    TooManyCrashes {
        crashes: usize,
        n: usize,
        tolerated: usize,
    },
    #[error("process {0} does not exist")]
    UnknownProcess(ProcessId),
    #[error("process {0} is scheduled to crash twice")]
    DuplicateCrash(ProcessId),
    #[error("message delays must be at least one tick")]
    ZeroDelay,
    #[error("delay range {min}..={max} is empty")]
    BadDelayRange { min: u64, max: u64 },
    #[error("read fraction {0} is outside [0, 1]")]
    BadReadFraction(f64),
    #[error("workload needs at least one register")]
    NoRegisters,
    #[error("{scripts} per-process entries given for {n} processes")]
    ScriptCount { scripts: usize, n: usize },
    #[error("scripted writes need a value and scripted reads must not have one")]
    BadScript,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("protocol step failed: {0}")]
    Protocol(#[from] ProtocolError),
}

/// Matches messages by sender, receiver and kind; `None` matches anything.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkRule {
    pub from: Option<ProcessId>,
    pub to: Option<ProcessId>,
    pub kind: Option<MessageKind>,
    pub delay: u64,
}

impl LinkRule {
    fn matches(&self, msg: &Message) -> bool {
        self.from.is_none_or(|p| p == msg.from)
            && self.to.is_none_or(|p| p == msg.to)
            && self.kind.is_none_or(|k| k == msg.body.kind())
    }
}

/// Delivery script: the first matching rule sets a message's delay.
///
/// Because delays are exact, a script fixes the relative delivery order of
/// every message, which is what lets tests force specific interleavings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub rules: Vec<LinkRule>,
    pub default_delay: u64,
}

impl Schedule {
    pub fn delay_for(&self, msg: &Message) -> u64 {
        self.rules
            .iter()
            .find(|r| r.matches(msg))
            .map_or(self.default_delay, |r| r.delay)
    }

    /// A randomly drawn hostile script.
    ///
    /// Processes are split into two non-empty camps. Links inside a camp
    /// (including self-links) are fast and links across are slow. On top of
    /// that, each non-self link independently may carry updates very slowly,
    /// so writes linger half propagated while reads run.
    pub fn adversarial(n: usize, rng: &mut impl Rng) -> Schedule {
        let mut rules = Vec::new();
        let camp: Vec<bool> = if n < 2 {
            vec![true; n]
        } else {
            let mut c: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            if c.iter().all(|&b| b) || c.iter().all(|&b| !b) {
                let flip = rng.random_range(0..n);
                c[flip] = !c[flip];
            }
            c
        };
        for from in ProcessId::all(n) {
            for to in ProcessId::all(n) {
                if from != to && rng.random_bool(0.5) {
                    rules.push(LinkRule {
                        from: Some(from),
                        to: Some(to),
                        kind: Some(MessageKind::Update),
                        delay: rng.random_range(100..=300),
                    });
                }
                let delay = if camp[from.index()] == camp[to.index()] {
                    rng.random_range(1..=3)
                } else {
                    rng.random_range(15..=60)
                };
                rules.push(LinkRule {
                    from: Some(from),
                    to: Some(to),
                    kind: None,
                    delay,
                });
            }
        }
        Schedule {
            rules,
            default_delay: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DelayModel {
    /// Independent uniform draw per message.
    Uniform {
        min: u64,
        max: u64,
    },
    /// Fixed delay per directed link.
    PerLink {
        default: u64,
        links: BTreeMap<(ProcessId, ProcessId), u64>,
    },
    Scripted(Schedule),
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel::Uniform { min: 1, max: 10 }
    }
}

impl DelayModel {
    fn validate(&self) -> Result<(), SimError> {
        match self {
            DelayModel::Uniform { min, max } => {
                if *min == 0 {
                    return Err(SimError::ZeroDelay);
                }
                if min > max {
                    return Err(SimError::BadDelayRange {
                        min: *min,
                        max: *max,
                    });
                }
            }
            DelayModel::PerLink { default, links } => {
                if *default == 0 || links.values().any(|&d| d == 0) {
                    return Err(SimError::ZeroDelay);
                }
            }
            DelayModel::Scripted(s) => {
                if s.default_delay == 0 || s.rules.iter().any(|r| r.delay == 0) {
                    return Err(SimError::ZeroDelay);
                }
            }
        }
        Ok(())
    }

    fn draw(&self, msg: &Message, rng: &mut ChaCha8Rng) -> u64 {
        match self {
            DelayModel::Uniform { min, max } => rng.random_range(*min..=*max),
            DelayModel::PerLink { default, links } => {
                links.get(&(msg.from, msg.to)).copied().unwrap_or(*default)
            }
            DelayModel::Scripted(s) => s.delay_for(msg),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub ops_per_process: usize,
    pub read_fraction: f64,
    pub register_count: usize,
    /// Ticks between an operation's completion and the next invocation.
    pub think_time: u64,
}

impl Default for Workload {
    fn default() -> Self {
        Workload {
            ops_per_process: 4,
            read_fraction: 0.5,
            register_count: 2,
            think_time: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrashSpec {
    pub proc: ProcessId,
    pub at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub protocol: ProtocolKind,
    pub mutation: Mutation,
    pub crashes: Vec<CrashSpec>,
    pub seed: u64,
    pub delay: DelayModel,
    pub workload: Workload,
    pub max_ticks: u64,
    /// Let crashes interrupt an operation instead of waiting for it to end.
    pub mid_op_crash: bool,
    /// Explicit per-process client scripts; replaces the generated workload.
    pub scripts: Option<Vec<Vec<PlannedOp>>>,
    /// Per-process tick of the first invocation; drawn from the seed otherwise.
    pub start_ticks: Option<Vec<u64>>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 3,
            protocol: ProtocolKind::ScAbd,
            mutation: Mutation::None,
            crashes: Vec::new(),
            seed: 0,
            delay: DelayModel::default(),
            workload: Workload::default(),
            max_ticks: 1_000_000,
            mid_op_crash: false,
            scripts: None,
            start_ticks: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let tolerated = max_faults(self.n)?;
        if self.crashes.len() > tolerated {
            return Err(SimError::TooManyCrashes {
                crashes: self.crashes.len(),
                n: self.n,
                tolerated,
            });
        }
        let mut seen = BTreeSet::new();
        for c in &self.crashes {
            if !c.proc.is_valid_for(self.n) {
                return Err(SimError::UnknownProcess(c.proc));
            }
            if !seen.insert(c.proc) {
                return Err(SimError::DuplicateCrash(c.proc));
            }
        }
        self.delay.validate()?;
        let rf = self.workload.read_fraction;
        if !(0.0..=1.0).contains(&rf) {
            return Err(SimError::BadReadFraction(rf));
        }
        if self.workload.register_count == 0 && self.workload.ops_per_process > 0 {
            return Err(SimError::NoRegisters);
        }
        if let Some(starts) = &self.start_ticks {
            if starts.len() != self.n {
                return Err(SimError::ScriptCount {
                    scripts: starts.len(),
                    n: self.n,
                });
            }
        }
        if let Some(scripts) = &self.scripts {
            if scripts.len() != self.n {
                return Err(SimError::ScriptCount {
                    scripts: scripts.len(),
                    n: self.n,
                });
            }
            if scripts
                .iter()
                .flatten()
                .any(|op| (op.kind == OpKind::Write) != op.val.is_some())
            {
                return Err(SimError::BadScript);
            }
        }
        Ok(())
    }

    pub fn is_faulty(&self, p: ProcessId) -> bool {
        self.crashes.iter().any(|c| c.proc == p)
    }
}

/// Configuration for run `seed` of a fuzz campaign.
///
/// Unmutated campaigns draw the process count from {3, 4, 5, 7}, uniform
/// delays with a random spread, a mixed workload and up to the tolerated
/// number of crashes at random times. Mutant campaigns run without crashes
/// under an [adversarial](Schedule::adversarial) script with a read-heavy,
/// single-register workload, which is where the defects show.
pub fn fuzz_config(seed: u64, mutation: Mutation) -> SimConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf022_c0f1_9000_0000);
    let n = [3, 4, 5, 7][rng.random_range(0..4)];
    let mut cfg = SimConfig {
        n,
        seed,
        mutation,
        ..SimConfig::default()
    };
    if mutation == Mutation::None {
        let max = rng.random_range(2..=40);
        cfg.delay = DelayModel::Uniform { min: 1, max };
        cfg.workload = Workload {
            ops_per_process: rng.random_range(1..=5),
            read_fraction: rng.random_range(0.2..=0.8),
            register_count: rng.random_range(1..=3),
            think_time: rng.random_range(0..=5),
        };
        let tolerated = max_faults(n).expect("n >= 1");
        let crashes = rng.random_range(0..=tolerated);
        let mut procs: Vec<ProcessId> = ProcessId::all(n).collect();
        for _ in 0..crashes {
            let p = procs.remove(rng.random_range(0..procs.len()));
            cfg.crashes.push(CrashSpec {
                proc: p,
                at: rng.random_range(0..=60),
            });
        }
    } else {
        cfg.delay = DelayModel::Scripted(Schedule::adversarial(n, &mut rng));
        cfg.workload = Workload {
            ops_per_process: 4,
            read_fraction: 0.7,
            register_count: 1,
            think_time: 1,
        };
    }
    cfg
}

/// An operation a client will invoke.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedOp {
    pub kind: OpKind,
    pub reg: RegisterId,
    /// Written value; every write in a workload writes a distinct non-zero value.
    pub val: Option<Value>,
}

pub fn register_name(i: usize) -> RegisterId {
    RegisterId::new(format!("x{i}")).expect("non-empty")
}

/// Per-process operation scripts for closed-loop clients.
pub fn generate_workload(cfg: &SimConfig, rng: &mut impl Rng) -> Vec<Vec<PlannedOp>> {
    let w = &cfg.workload;
    (0..cfg.n)
        .map(|p| {
            (0..w.ops_per_process)
                .map(|k| {
                    let reg = register_name(rng.random_range(0..w.register_count));
                    if rng.random_bool(w.read_fraction) {
                        PlannedOp {
                            kind: OpKind::Read,
                            reg,
                            val: None,
                        }
                    } else {
                        PlannedOp {
                            kind: OpKind::Write,
                            reg,
                            val: Some(((p + 1) * 1000 + k + 1) as Value),
                        }
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// No events left and every correct client finished its script.
    Quiescent,
    /// Stopped at `max_ticks` with events still queued.
    HorizonExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    /// Receiver ran a handler at tick `rt` with logical time `lt`.
    Handled { rt: u64, lt: LogicalTime },
    /// Receiver dropped it as stale (request id no longer current).
    Discarded { rt: u64 },
    /// Receiver had crashed.
    Dropped { rt: u64 },
    /// Still in flight when the run stopped.
    InFlight,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageRecord {
    pub msg: Message,
    pub sent_rt: u64,
    pub delivery: Delivery,
}

impl MessageRecord {
    /// Sender's logical time at the send.
    pub fn sent_lt(&self) -> LogicalTime {
        self.msg.body.lt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrashRecord {
    pub proc: ProcessId,
    pub scheduled: u64,
    /// Tick the crash took effect; later than `scheduled` when deferred to
    /// the end of an operation, `None` if the run ended first.
    pub at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub protocol: ProtocolKind,
    pub mutation: Mutation,
    pub n: usize,
    pub outcome: Outcome,
    pub history: History,
    pub messages: Vec<MessageRecord>,
    pub rounds: BTreeMap<OpId, u32>,
    pub crashes: Vec<CrashRecord>,
    pub end_tick: u64,
}

impl Trace {
    pub fn crashed(&self) -> BTreeSet<ProcessId> {
        self.crashes
            .iter()
            .filter(|c| c.at.is_some())
            .map(|c| c.proc)
            .collect()
    }

    /// Operations invoked by processes that never crashed and that have no
    /// response in the history.
    pub fn unfinished_correct_ops(&self) -> Vec<OpId> {
        let faulty: BTreeSet<ProcessId> = self.crashes.iter().map(|c| c.proc).collect();
        let mut open = BTreeMap::new();
        for e in self.history.events() {
            if e.is_invocation() {
                open.insert(e.op.id, e.proc());
            } else {
                open.remove(&e.op.id);
            }
        }
        open.into_iter()
            .filter(|(_, p)| !faulty.contains(p))
            .map(|(id, _)| id)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Pending {
    Deliver(usize),
    Invoke(ProcessId),
    Crash(ProcessId),
}

impl Pending {
    fn target(&self, messages: &[MessageRecord]) -> ProcessId {
        match self {
            Pending::Deliver(i) => messages[*i].msg.to,
            Pending::Invoke(p) | Pending::Crash(p) => *p,
        }
    }
}

/// Queue entry; ordering is `(due, seq)` and `seq` is unique.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct SimEvent {
    due: u64,
    seq: u64,
    kind: Pending,
}

struct Client {
    replica: Replica,
    script: Vec<PlannedOp>,
    next: usize,
    outstanding: Option<Operation>,
    crashed: bool,
    crash_pending: bool,
    last_step: Option<u64>,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    net_rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<SimEvent>>,
    seq: u64,
    clients: Vec<Client>,
    history: History,
    messages: Vec<MessageRecord>,
    rounds: BTreeMap<OpId, u32>,
    crashes: Vec<CrashRecord>,
    next_op: u64,
}

/// Runs one simulation to quiescence or to `cfg.max_ticks`.
pub fn run_simulation(cfg: &SimConfig) -> Result<Trace, SimError> {
    cfg.validate()?;
    let mut workload_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let generated = generate_workload(cfg, &mut workload_rng);
    let scripts = cfg.scripts.clone().unwrap_or(generated);
    let mut clients = Vec::with_capacity(cfg.n);
    for (i, script) in scripts.into_iter().enumerate() {
        clients.push(Client {
            replica: Replica::with_mutation(
                ProcessId::from_index(i),
                cfg.n,
                cfg.protocol,
                cfg.mutation,
            )?,
            script,
            next: 0,
            outstanding: None,
            crashed: false,
            crash_pending: false,
            last_step: None,
        });
    }
    let mut sim = Sim {
        cfg,
        net_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f11_4e75),
        queue: BinaryHeap::new(),
        seq: 0,
        clients,
        history: History::default(),
        messages: Vec::new(),
        rounds: BTreeMap::new(),
        crashes: cfg
            .crashes
            .iter()
            .map(|c| CrashRecord {
                proc: c.proc,
                scheduled: c.at,
                at: None,
            })
            .collect(),
        next_op: 0,
    };
    for i in 0..cfg.n {
        if !sim.clients[i].script.is_empty() {
            let drawn = workload_rng.random_range(0..=cfg.workload.think_time);
            let start = cfg.start_ticks.as_ref().map_or(drawn, |s| s[i]);
            sim.push(start, Pending::Invoke(ProcessId::from_index(i)));
        }
    }
    for c in &cfg.crashes {
        sim.push(c.at, Pending::Crash(c.proc));
    }
    sim.run()
}

impl Sim<'_> {
    fn push(&mut self, due: u64, kind: Pending) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(SimEvent { due, seq, kind }));
    }

    fn run(mut self) -> Result<Trace, SimError> {
        let mut outcome = Outcome::Quiescent;
        let mut now = 0;
        while let Some(Reverse(ev)) = self.queue.pop() {
            if ev.due > self.cfg.max_ticks {
                outcome = Outcome::HorizonExhausted;
                break;
            }
            now = ev.due;
            let p = ev.kind.target(&self.messages);
            let client = &self.clients[p.index()];

            if let Pending::Crash(p) = ev.kind {
                self.crash(p, now);
                continue;
            }
            if client.crashed {
                if let Pending::Deliver(i) = ev.kind {
                    self.messages[i].delivery = Delivery::Dropped { rt: now };
                }
                continue;
            }
            // At most one handler per process per tick.
            if let Some(last) = client.last_step {
                if last >= now {
                    self.push(last + 1, ev.kind);
                    continue;
                }
            }
            match ev.kind {
                Pending::Invoke(p) => self.invoke(p, now)?,
                Pending::Deliver(i) => self.deliver(i, now)?,
                Pending::Crash(_) => unreachable!(),
            }
        }
        Ok(Trace {
            protocol: self.cfg.protocol,
            mutation: self.cfg.mutation,
            n: self.cfg.n,
            outcome,
            history: self.history,
            messages: self.messages,
            rounds: self.rounds,
            crashes: self.crashes,
            end_tick: now,
        })
    }

    fn crash(&mut self, p: ProcessId, now: u64) {
        let mid_op_crash = self.cfg.mid_op_crash;
        let client = &mut self.clients[p.index()];
        if client.crashed {
            return;
        }
        if client.outstanding.is_some() && !mid_op_crash {
            client.crash_pending = true;
            return;
        }
        client.crashed = true;
        if let Some(rec) = self.crashes.iter_mut().find(|c| c.proc == p) {
            rec.at = Some(now);
        }
    }

    fn invoke(&mut self, p: ProcessId, now: u64) -> Result<(), SimError> {
        let op_id = OpId(self.next_op);
        let client = &mut self.clients[p.index()];
        let Some(planned) = client.script.get(client.next).cloned() else {
            return Ok(());
        };
        self.next_op += 1;
        client.next += 1;
        let (stimulus, mut op) = match planned.kind {
            OpKind::Read => (
                Stimulus::InvokeRead {
                    op: op_id,
                    reg: planned.reg.clone(),
                },
                Operation::read(op_id, p, planned.reg),
            ),
            OpKind::Write => {
                let val = planned.val.expect("planned writes carry a value");
                (
                    Stimulus::InvokeWrite {
                        op: op_id,
                        reg: planned.reg.clone(),
                        val,
                    },
                    Operation::write(op_id, p, planned.reg, val),
                )
            }
        };
        let out = client.replica.step(stimulus)?;
        client.last_step = Some(now);
        op.ts = out.invocation_ts;
        client.outstanding = Some(op.clone());
        self.history.push(Event::invocation(op, now, Some(out.lt)));
        self.send(out.outbox, now);
        Ok(())
    }

    fn deliver(&mut self, index: usize, now: u64) -> Result<(), SimError> {
        let msg = self.messages[index].msg.clone();
        let p = msg.to;
        let client = &mut self.clients[p.index()];
        let out = client.replica.step(Stimulus::Deliver(msg))?;
        if !out.handled {
            self.messages[index].delivery = Delivery::Discarded { rt: now };
            return Ok(());
        }
        client.last_step = Some(now);
        self.messages[index].delivery = Delivery::Handled {
            rt: now,
            lt: out.lt,
        };
        let mut finished = false;
        if let Some(done) = out.completion {
            let mut op = client
                .outstanding
                .take()
                .expect("completion for an operation that was never invoked");
            debug_assert_eq!(op.id, done.op);
            op.ret = Some(done.ret);
            op.ts = Some(done.ts);
            self.rounds.insert(done.op, done.rounds);
            self.history.push(Event::response(op, now, Some(out.lt)));
            finished = true;
        }
        self.send(out.outbox, now);
        if finished {
            let client = &self.clients[p.index()];
            if client.crash_pending {
                self.crash(p, now);
            } else if client.next < client.script.len() {
                self.push(now + self.cfg.workload.think_time, Pending::Invoke(p));
            }
        }
        Ok(())
    }

    fn send(&mut self, outbox: Vec<Message>, now: u64) {
        for msg in outbox {
            let delay = self.cfg.delay.draw(&msg, &mut self.net_rng);
            let index = self.messages.len();
            self.messages.push(MessageRecord {
                msg,
                sent_rt: now,
                delivery: Delivery::InFlight,
            });
            self.push(now + delay, Pending::Deliver(index));
        }
    }
}

/// Response value helper for tests and reports.
pub fn read_values(history: &History) -> Vec<(OpId, Value)> {
    history
        .events()
        .iter()
        .filter_map(|e| match (e.kind, e.op.ret) {
            (crate::model::EventKind::Response, Some(ReturnValue::Value(v))) => Some((e.op.id, v)),
            _ => None,
        })
        .collect()
}
