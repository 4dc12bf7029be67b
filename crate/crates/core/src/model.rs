//! Shared vocabulary: identifiers, logical clocks, timestamps, messages,
//! operation events and histories.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

/// Errors raised when constructing model values or validating histories.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("register name must not be empty")]
    EmptyRegister,
    #[error("process count must be at least 1, got {0}")]
    NoProcesses(usize),
    #[error("operation {0} is invoked more than once")]
    DuplicateInvocation(OpId),
    #[error("operation {0} has a response but no earlier invocation")]
    ResponseWithoutInvocation(OpId),
    #[error("operation {0} has more than one response")]
    DuplicateResponse(OpId),
    #[error("process {proc} invokes {next} while {pending} is still outstanding")]
    OverlappingOperations {
        proc: ProcessId,
        pending: OpId,
        next: OpId,
    },
    #[error("response of operation {0} disagrees with its invocation")]
    MismatchedResponse(OpId),
    #[error("write {0} carries no argument")]
    WriteWithoutArgument(OpId),
    #[error("operation {0} completed with a return value of the wrong kind")]
    BadReturn(OpId),
}

/// Process identifier in `1..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ProcessId(pub u32);

impl ProcessId {
    pub fn get(self) -> u32 {
        self.0
    }

    /// Zero-based slot for per-process tables.
    pub fn index(self) -> usize {
        (self.0 as usize).saturating_sub(1)
    }

    pub fn from_index(i: usize) -> Self {
        ProcessId(i as u32 + 1)
    }

    pub fn is_valid_for(self, n: usize) -> bool {
        self.0 >= 1 && (self.0 as usize) <= n
    }

    /// All identifiers of an `n`-process system, ascending.
    pub fn all(n: usize) -> impl Iterator<Item = ProcessId> {
        (0..n).map(ProcessId::from_index)
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Name of a shared read/write register.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegisterId(String);

impl RegisterId {
    pub fn new(name: impl Into<String>) -> Result<Self, ModelError> {
        let name = name.into();
        if name.is_empty() {
            return Err(ModelError::EmptyRegister);
        }
        Ok(RegisterId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RegisterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Register contents. Every register starts at zero.
pub type Value = i64;

/// Scalar Lamport clock reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LogicalTime(pub u64);

impl LogicalTime {
    pub const ZERO: LogicalTime = LogicalTime(0);

    /// Clock value after a locally triggered handler.
    pub fn tick(self) -> LogicalTime {
        LogicalTime(self.0 + 1)
    }

    /// Clock value after handling a message stamped with `received`.
    pub fn merge(self, received: LogicalTime) -> LogicalTime {
        LogicalTime(self.0.max(received.0) + 1)
    }
}

impl fmt::Display for LogicalTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn clock_local_step(lt: LogicalTime) -> LogicalTime {
    lt.tick()
}

pub fn clock_merge(lt: LogicalTime, lt_msg: LogicalTime) -> LogicalTime {
    lt.merge(lt_msg)
}

/// Version tag of a written value.
///
/// Ordered lexicographically: logical time first, then process id. A writer
/// stamps its value with its own clock and id, so two writes never share a
/// timestamp. The initial value of every register carries `(0, 0)`, which is
/// below any timestamp a process can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp {
    pub lt: LogicalTime,
    pub pid: ProcessId,
}

impl Timestamp {
    pub const INITIAL: Timestamp = Timestamp {
        lt: LogicalTime(0),
        pid: ProcessId(0),
    };

    pub fn new(lt: u64, pid: u32) -> Self {
        Timestamp {
            lt: LogicalTime(lt),
            pid: ProcessId(pid),
        }
    }

    pub fn is_initial(&self) -> bool {
        *self == Timestamp::INITIAL
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.lt.0, self.pid.0)
    }
}

pub fn compare_timestamps(a: Timestamp, b: Timestamp) -> Ordering {
    a.cmp(&b)
}

/// A value together with the timestamp of the write that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TimestampValuePair {
    pub ts: Timestamp,
    pub val: Value,
}

impl TimestampValuePair {
    pub const INITIAL: TimestampValuePair = TimestampValuePair {
        ts: Timestamp::INITIAL,
        val: 0,
    };

    pub fn new(ts: Timestamp, val: Value) -> Self {
        TimestampValuePair { ts, val }
    }

    /// The pair with the larger timestamp; `self` wins ties.
    pub fn newer(self, other: TimestampValuePair) -> TimestampValuePair {
        if other.ts > self.ts {
            other
        } else {
            self
        }
    }
}

impl fmt::Display for TimestampValuePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.ts, self.val)
    }
}

/// Per-process request counter, bumped at the start of every phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct RequestId(pub u64);

impl RequestId {
    pub fn next(self) -> RequestId {
        RequestId(self.0 + 1)
    }
}

/// Size of a majority of `n` processes: `floor(n/2) + 1`.
pub fn quorum_size(n: usize) -> Result<usize, ModelError> {
    if n < 1 {
        return Err(ModelError::NoProcesses(n));
    }
    Ok(n / 2 + 1)
}

/// Number of crash faults an `n`-process system tolerates.
pub fn max_faults(n: usize) -> Result<usize, ModelError> {
    Ok(n - quorum_size(n)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum MessageBody {
    Query {
        lt: LogicalTime,
        rid: RequestId,
        reg: RegisterId,
    },
    Response {
        lt: LogicalTime,
        rid: RequestId,
        tsv: TimestampValuePair,
    },
    Update {
        lt: LogicalTime,
        rid: RequestId,
        reg: RegisterId,
        tsv: TimestampValuePair,
    },
    Ack {
        lt: LogicalTime,
        rid: RequestId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    Query,
    Response,
    Update,
    Ack,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Query => "query",
            MessageKind::Response => "response",
            MessageKind::Update => "update",
            MessageKind::Ack => "ack",
        }
    }
}

impl MessageBody {
    pub fn lt(&self) -> LogicalTime {
        match self {
            MessageBody::Query { lt, .. }
            | MessageBody::Response { lt, .. }
            | MessageBody::Update { lt, .. }
            | MessageBody::Ack { lt, .. } => *lt,
        }
    }

    pub fn rid(&self) -> RequestId {
        match self {
            MessageBody::Query { rid, .. }
            | MessageBody::Response { rid, .. }
            | MessageBody::Update { rid, .. }
            | MessageBody::Ack { rid, .. } => *rid,
        }
    }

    pub fn kind(&self) -> MessageKind {
        match self {
            MessageBody::Query { .. } => MessageKind::Query,
            MessageBody::Response { .. } => MessageKind::Response,
            MessageBody::Update { .. } => MessageKind::Update,
            MessageBody::Ack { .. } => MessageKind::Ack,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Message {
    pub from: ProcessId,
    pub to: ProcessId,
    pub body: MessageBody,
}

/// Globally unique operation identifier, assigned at invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct OpId(pub u64);

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Read,
    Write,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Read => "read",
            OpKind::Write => "write",
        }
    }
}

/// What an operation returned: a value for reads, `Ok` for writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReturnValue {
    Value(Value),
    Ok,
}

impl fmt::Display for ReturnValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReturnValue::Value(v) => write!(f, "{v}"),
            ReturnValue::Ok => f.write_str("OK"),
        }
    }
}

/// Description of an operation as carried by its events.
///
/// `ret` is set on response events only. `ts` is instrumentation: the
/// timestamp the operation used in its update phase, when known.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Operation {
    pub id: OpId,
    pub proc: ProcessId,
    pub kind: OpKind,
    pub reg: RegisterId,
    pub arg: Option<Value>,
    pub ret: Option<ReturnValue>,
    pub ts: Option<Timestamp>,
}

impl Operation {
    pub fn read(id: OpId, proc: ProcessId, reg: RegisterId) -> Self {
        Operation {
            id,
            proc,
            kind: OpKind::Read,
            reg,
            arg: None,
            ret: None,
            ts: None,
        }
    }

    pub fn write(id: OpId, proc: ProcessId, reg: RegisterId, val: Value) -> Self {
        Operation {
            id,
            proc,
            kind: OpKind::Write,
            reg,
            arg: Some(val),
            ret: None,
            ts: None,
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            OpKind::Write => write!(
                f,
                "{}:{} w({},{})",
                self.id,
                self.proc,
                self.reg,
                self.arg.unwrap_or_default()
            )?,
            OpKind::Read => write!(f, "{}:{} r({})", self.id, self.proc, self.reg)?,
        }
        if let Some(ret) = self.ret {
            write!(f, "->{ret}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Invocation,
    Response,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Event {
    pub kind: EventKind,
    pub op: Operation,
    /// Simulation tick at which the event occurred.
    pub rt: u64,
    /// Logical time of the handler execution; absent in uninstrumented input.
    pub lt: Option<LogicalTime>,
}

impl Event {
    pub fn invocation(op: Operation, rt: u64, lt: Option<LogicalTime>) -> Self {
        Event {
            kind: EventKind::Invocation,
            op,
            rt,
            lt,
        }
    }

    pub fn response(op: Operation, rt: u64, lt: Option<LogicalTime>) -> Self {
        Event {
            kind: EventKind::Response,
            op,
            rt,
            lt,
        }
    }

    pub fn proc(&self) -> ProcessId {
        self.op.proc
    }

    pub fn is_invocation(&self) -> bool {
        self.kind == EventKind::Invocation
    }
}

/// One operation's span in a history: where its events sit and what it did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpSpan {
    pub id: OpId,
    pub proc: ProcessId,
    pub kind: OpKind,
    pub reg: RegisterId,
    pub arg: Option<Value>,
    pub ret: Option<ReturnValue>,
    pub ts: Option<Timestamp>,
    /// Position of the invocation event.
    pub inv: usize,
    /// Position of the response event, `None` while pending.
    pub res: Option<usize>,
    pub inv_lt: Option<LogicalTime>,
    pub res_lt: Option<LogicalTime>,
}

impl OpSpan {
    /// `self` completes before `other` is invoked.
    pub fn precedes(&self, other: &OpSpan) -> bool {
        matches!(self.res, Some(r) if r < other.inv)
    }

    pub fn is_pending(&self) -> bool {
        self.res.is_none()
    }

    /// Value the operation wrote or read back, if known.
    pub fn value(&self) -> Option<Value> {
        match self.kind {
            OpKind::Write => self.arg,
            OpKind::Read => match self.ret {
                Some(ReturnValue::Value(v)) => Some(v),
                _ => None,
            },
        }
    }
}

/// A sequence of invocation and response events.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct History {
    events: Vec<Event>,
}

impl History {
    pub fn new(events: Vec<Event>) -> Self {
        History { events }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    pub fn push(&mut self, event: Event) {
        self.events.push(event);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// `H|p`: the events of one process, in order.
    pub fn project_process(&self, p: ProcessId) -> History {
        self.filter(|e| e.proc() == p)
    }

    /// `H|x`: the events of operations on one register, in order.
    pub fn project_register(&self, x: &RegisterId) -> History {
        self.filter(|e| &e.op.reg == x)
    }

    pub fn filter(&self, mut keep: impl FnMut(&Event) -> bool) -> History {
        History::new(self.events.iter().filter(|e| keep(e)).cloned().collect())
    }

    pub fn processes(&self) -> BTreeSet<ProcessId> {
        self.events.iter().map(Event::proc).collect()
    }

    pub fn registers(&self) -> BTreeSet<RegisterId> {
        self.events.iter().map(|e| e.op.reg.clone()).collect()
    }

    pub fn has_logical_times(&self) -> bool {
        self.events.iter().all(|e| e.lt.is_some())
    }

    /// Validates well-formedness and returns one span per operation, ordered
    /// by invocation position.
    ///
    /// Well-formed means: every response follows its invocation, no operation
    /// has two invocations or two responses, response and invocation agree
    /// on the operation, and no process invokes while it has an operation
    /// outstanding. Pending operations are allowed; see [`History::is_complete`].
    pub fn spans(&self) -> Result<Vec<OpSpan>, ModelError> {
        let mut spans: Vec<OpSpan> = Vec::new();
        let mut by_id: BTreeMap<OpId, usize> = BTreeMap::new();
        let mut outstanding: BTreeMap<ProcessId, OpId> = BTreeMap::new();
        for (pos, e) in self.events.iter().enumerate() {
            let op = &e.op;
            match e.kind {
                EventKind::Invocation => {
                    if by_id.contains_key(&op.id) {
                        return Err(ModelError::DuplicateInvocation(op.id));
                    }
                    if let Some(&pending) = outstanding.get(&op.proc) {
                        return Err(ModelError::OverlappingOperations {
                            proc: op.proc,
                            pending,
                            next: op.id,
                        });
                    }
                    if op.kind == OpKind::Write && op.arg.is_none() {
                        return Err(ModelError::WriteWithoutArgument(op.id));
                    }
                    outstanding.insert(op.proc, op.id);
                    by_id.insert(op.id, spans.len());
                    spans.push(OpSpan {
                        id: op.id,
                        proc: op.proc,
                        kind: op.kind,
                        reg: op.reg.clone(),
                        arg: op.arg,
                        ret: None,
                        ts: op.ts,
                        inv: pos,
                        res: None,
                        inv_lt: e.lt,
                        res_lt: None,
                    });
                }
                EventKind::Response => {
                    let Some(&idx) = by_id.get(&op.id) else {
                        return Err(ModelError::ResponseWithoutInvocation(op.id));
                    };
                    let span = &mut spans[idx];
                    if span.res.is_some() {
                        return Err(ModelError::DuplicateResponse(op.id));
                    }
                    if span.proc != op.proc || span.kind != op.kind || span.reg != op.reg {
                        return Err(ModelError::MismatchedResponse(op.id));
                    }
                    let ret_ok = matches!(
                        (op.kind, op.ret),
                        (OpKind::Read, Some(ReturnValue::Value(_)))
                            | (OpKind::Write, Some(ReturnValue::Ok))
                    );
                    if !ret_ok {
                        return Err(ModelError::BadReturn(op.id));
                    }
                    outstanding.remove(&op.proc);
                    span.res = Some(pos);
                    span.ret = op.ret;
                    span.res_lt = e.lt;
                    if op.ts.is_some() {
                        span.ts = op.ts;
                    }
                }
            }
        }
        Ok(spans)
    }

    /// Every invocation has a matching response.
    pub fn is_complete(&self) -> bool {
        let mut open = BTreeSet::new();
        for e in &self.events {
            match e.kind {
                EventKind::Invocation => {
                    open.insert(e.op.id);
                }
                EventKind::Response => {
                    open.remove(&e.op.id);
                }
            }
        }
        open.is_empty()
    }

    /// Starts with an invocation and every invocation except possibly the
    /// last is immediately followed by its response.
    pub fn is_sequential(&self) -> bool {
        let mut i = 0;
        while i < self.events.len() {
            let e = &self.events[i];
            if e.kind != EventKind::Invocation {
                return false;
            }
            match self.events.get(i + 1) {
                None => return true,
                Some(next) => {
                    if next.kind != EventKind::Response || next.op.id != e.op.id {
                        return false;
                    }
                }
            }
            i += 2;
        }
        true
    }
}

/// `H ≃ H'`: every process sees the same sequence of events in both.
pub fn histories_equivalent(h1: &History, h2: &History) -> bool {
    fn per_process(h: &History) -> BTreeMap<ProcessId, Vec<(OpId, EventKindKey)>> {
        let mut map: BTreeMap<ProcessId, Vec<(OpId, EventKindKey)>> = BTreeMap::new();
        for e in h.events() {
            map.entry(e.proc())
                .or_default()
                .push((e.op.id, EventKindKey::from(e.kind)));
        }
        map
    }
    per_process(h1) == per_process(h2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKindKey {
    Inv,
    Res,
}

impl From<EventKind> for EventKindKey {
    fn from(k: EventKind) -> Self {
        match k {
            EventKind::Invocation => EventKindKey::Inv,
            EventKind::Response => EventKindKey::Res,
        }
    }
}
