//! Per-process replica state machines.
//!
//! Each [`Replica`] plays both roles at once: it is a client that runs at
//! most one read or write at a time, and a server that answers every query
//! and update it receives, including its own (broadcasts go to all `n`
//! processes, the sender included, over the normal message path).
//!
//! Two protocols share this machinery:
//!
//! * [`ProtocolKind::ScAbd`]: writes take one round (update), reads take
//!   two (query, then write-back update). Write timestamps are the writer's
//!   Lamport clock paired with its id.
//! * [`ProtocolKind::MwAbd`]: the classic multi-writer register. Writes first
//!   query a majority for the highest timestamp and then update with the
//!   next sequence number, so both operations take two rounds.
//!
//! A step never blocks and never consults anything outside the replica; the
//! simulator owns transport and time.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::{
    quorum_size, LogicalTime, Message, MessageBody, ModelError, OpId, ProcessId, RegisterId,
    RequestId, ReturnValue, Timestamp, TimestampValuePair, Value,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ProtocolKind {
    #[default]
    ScAbd,
    MwAbd,
}

impl ProtocolKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolKind::ScAbd => "sc_abd",
            ProtocolKind::MwAbd => "mw_abd",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ProtocolKind::ScAbd => "SC-ABD",
            ProtocolKind::MwAbd => "MW-ABD",
        }
    }

    /// Whether an operation of this kind runs an update phase.
    pub fn has_update_phase(self, _kind: crate::model::OpKind) -> bool {
        true
    }

    /// Whether an operation of this kind runs a query phase.
    pub fn has_query_phase(self, kind: crate::model::OpKind) -> bool {
        match self {
            ProtocolKind::ScAbd => kind == crate::model::OpKind::Read,
            ProtocolKind::MwAbd => true,
        }
    }
}

/// Deliberate protocol defects used to show that the checkers can tell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mutation {
    #[default]
    None,
    /// Phases end after `floor(n/2)` replies instead of a majority.
    SmallQuorum,
    /// Reads return right after the query phase, skipping the write-back.
    NoWriteback,
}

impl Mutation {
    pub fn as_str(self) -> &'static str {
        match self {
            Mutation::None => "none",
            Mutation::SmallQuorum => "small-quorum",
            Mutation::NoWriteback => "no-writeback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("{proc} already has operation {outstanding} in progress")]
    Busy { proc: ProcessId, outstanding: OpId },
    #[error("message addressed to {to} delivered to {proc}")]
    WrongRecipient { proc: ProcessId, to: ProcessId },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Phase {
    #[default]
    Idle,
    Querying,
    Updating,
}

/// One input to a replica.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stimulus {
    InvokeRead {
        op: OpId,
        reg: RegisterId,
    },
    InvokeWrite {
        op: OpId,
        reg: RegisterId,
        val: Value,
    },
    Deliver(Message),
}

/// Reported when an operation finishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Completion {
    pub op: OpId,
    pub ret: ReturnValue,
    /// Timestamp used by the operation's last update phase, or the one its
    /// query selected when no update phase ran.
    pub ts: Timestamp,
    /// Request/response rounds the operation needed.
    pub rounds: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StepOutput {
    /// Logical time of this handler execution. Unchanged when the stimulus
    /// was discarded.
    pub lt: LogicalTime,
    /// `false` when a stale response or ack was dropped by the request-id
    /// guard; such a delivery is not a handler execution.
    pub handled: bool,
    pub outbox: Vec<Message>,
    pub completion: Option<Completion>,
    /// Timestamp fixed at invocation time (SC-ABD writes).
    pub invocation_ts: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replica {
    id: ProcessId,
    n: usize,
    protocol: ProtocolKind,
    mutation: Mutation,
    quorum: usize,
    lt: LogicalTime,
    rid: RequestId,
    tvps: BTreeMap<RegisterId, TimestampValuePair>,
    query_responses: BTreeMap<ProcessId, TimestampValuePair>,
    acks: BTreeSet<ProcessId>,
    reading: bool,
    rreg: Option<RegisterId>,
    rval: Value,
    phase: Phase,
    current: Option<OpId>,
    write_value: Option<Value>,
    op_ts: Timestamp,
    rounds: u32,
}

impl Replica {
    pub fn new(id: ProcessId, n: usize, protocol: ProtocolKind) -> Result<Self, ProtocolError> {
        Self::with_mutation(id, n, protocol, Mutation::None)
    }

    pub fn with_mutation(
        id: ProcessId,
        n: usize,
        protocol: ProtocolKind,
        mutation: Mutation,
    ) -> Result<Self, ProtocolError> {
        let majority = quorum_size(n)?;
        let quorum = match mutation {
            Mutation::SmallQuorum => (n / 2).max(1),
            _ => majority,
        };
        Ok(Replica {
            id,
            n,
            protocol,
            mutation,
            quorum,
            lt: LogicalTime::ZERO,
            rid: RequestId::default(),
            tvps: BTreeMap::new(),
            query_responses: BTreeMap::new(),
            acks: BTreeSet::new(),
            reading: false,
            rreg: None,
            rval: 0,
            phase: Phase::Idle,
            current: None,
            write_value: None,
            op_ts: Timestamp::INITIAL,
            rounds: 0,
        })
    }

    pub fn id(&self) -> ProcessId {
        self.id
    }

    pub fn lt(&self) -> LogicalTime {
        self.lt
    }

    pub fn rid(&self) -> RequestId {
        self.rid
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn quorum(&self) -> usize {
        self.quorum
    }

    pub fn current_op(&self) -> Option<OpId> {
        self.current
    }

    pub fn is_idle(&self) -> bool {
        self.phase == Phase::Idle
    }

    /// Stored pair for `reg`, `((0,0),0)` if never updated.
    pub fn stored(&self, reg: &RegisterId) -> TimestampValuePair {
        self.tvps
            .get(reg)
            .copied()
            .unwrap_or(TimestampValuePair::INITIAL)
    }

    pub fn step(&mut self, stimulus: Stimulus) -> Result<StepOutput, ProtocolError> {
        match stimulus {
            Stimulus::InvokeRead { op, reg } => self.invoke_read(op, reg),
            Stimulus::InvokeWrite { op, reg, val } => self.invoke_write(op, reg, val),
            Stimulus::Deliver(msg) => self.deliver(msg),
        }
    }

    pub fn deliver(&mut self, msg: Message) -> Result<StepOutput, ProtocolError> {
        if msg.to != self.id {
            return Err(ProtocolError::WrongRecipient {
                proc: self.id,
                to: msg.to,
            });
        }
        let from = msg.from;
        Ok(match msg.body {
            MessageBody::Query { lt, rid, reg } => self.handle_query(lt, rid, &reg, from),
            MessageBody::Response { lt, rid, tsv } => self.handle_response(lt, rid, tsv, from),
            MessageBody::Update { lt, rid, reg, tsv } => {
                self.handle_update(lt, rid, reg, tsv, from)
            }
            MessageBody::Ack { lt, rid } => self.handle_ack(lt, rid, from),
        })
    }

    fn ensure_idle(&self) -> Result<(), ProtocolError> {
        match self.current {
            Some(outstanding) if self.phase != Phase::Idle => Err(ProtocolError::Busy {
                proc: self.id,
                outstanding,
            }),
            _ => Ok(()),
        }
    }

    pub fn invoke_read(&mut self, op: OpId, reg: RegisterId) -> Result<StepOutput, ProtocolError> {
        self.ensure_idle()?;
        self.lt = self.lt.tick();
        self.reading = true;
        self.current = Some(op);
        self.rounds = 0;
        let out = self.start_query(reg);
        Ok(out)
    }

    pub fn invoke_write(
        &mut self,
        op: OpId,
        reg: RegisterId,
        val: Value,
    ) -> Result<StepOutput, ProtocolError> {
        self.ensure_idle()?;
        self.lt = self.lt.tick();
        self.reading = false;
        self.current = Some(op);
        self.rounds = 0;
        match self.protocol {
            ProtocolKind::ScAbd => {
                let tsv = TimestampValuePair::new(
                    Timestamp {
                        lt: self.lt,
                        pid: self.id,
                    },
                    val,
                );
                let mut out = self.start_update(reg, tsv);
                out.invocation_ts = Some(tsv.ts);
                Ok(out)
            }
            ProtocolKind::MwAbd => {
                self.write_value = Some(val);
                Ok(self.start_query(reg))
            }
        }
    }

    fn start_query(&mut self, reg: RegisterId) -> StepOutput {
        self.rid = self.rid.next();
        self.query_responses.clear();
        self.acks.clear();
        self.phase = Phase::Querying;
        self.rounds += 1;
        let body = MessageBody::Query {
            lt: self.lt,
            rid: self.rid,
            reg: reg.clone(),
        };
        self.rreg = Some(reg);
        self.output(self.broadcast(body))
    }

    fn start_update(&mut self, reg: RegisterId, tsv: TimestampValuePair) -> StepOutput {
        self.rid = self.rid.next();
        self.query_responses.clear();
        self.acks.clear();
        self.phase = Phase::Updating;
        self.rounds += 1;
        self.op_ts = tsv.ts;
        let body = MessageBody::Update {
            lt: self.lt,
            rid: self.rid,
            reg,
            tsv,
        };
        self.output(self.broadcast(body))
    }

    fn broadcast(&self, body: MessageBody) -> Vec<Message> {
        ProcessId::all(self.n)
            .map(|to| Message {
                from: self.id,
                to,
                body: body.clone(),
            })
            .collect()
    }

    fn output(&self, outbox: Vec<Message>) -> StepOutput {
        StepOutput {
            lt: self.lt,
            handled: true,
            outbox,
            completion: None,
            invocation_ts: None,
        }
    }

    fn discarded(&self) -> StepOutput {
        StepOutput {
            lt: self.lt,
            handled: false,
            ..StepOutput::default()
        }
    }

    pub fn handle_query(
        &mut self,
        lt: LogicalTime,
        rid: RequestId,
        reg: &RegisterId,
        from: ProcessId,
    ) -> StepOutput {
        self.lt = self.lt.merge(lt);
        let reply = Message {
            from: self.id,
            to: from,
            body: MessageBody::Response {
                lt: self.lt,
                rid,
                tsv: self.stored(reg),
            },
        };
        self.output(vec![reply])
    }

    pub fn handle_response(
        &mut self,
        lt: LogicalTime,
        rid: RequestId,
        tsv: TimestampValuePair,
        from: ProcessId,
    ) -> StepOutput {
        if rid != self.rid || self.phase != Phase::Querying {
            return self.discarded();
        }
        self.lt = self.lt.merge(lt);
        self.query_responses.insert(from, tsv);
        if self.query_responses.len() != self.quorum {
            return self.output(Vec::new());
        }
        let best = self
            .query_responses
            .values()
            .fold(TimestampValuePair::INITIAL, |acc, &p| acc.newer(p));
        self.query_responses.clear();
        let reg = self
            .rreg
            .clone()
            .expect("query phase always records its register");

        if self.reading {
            self.rval = best.val;
            if self.mutation == Mutation::NoWriteback {
                self.rid = self.rid.next();
                self.op_ts = best.ts;
                return self.finish(ReturnValue::Value(best.val));
            }
            return self.start_update(reg, best);
        }
        // Only MW-ABD writes query before updating.
        let val = self
            .write_value
            .take()
            .expect("a querying write has a pending value");
        let ts = Timestamp {
            lt: LogicalTime(best.ts.lt.0 + 1),
            pid: self.id,
        };
        self.start_update(reg, TimestampValuePair::new(ts, val))
    }

    pub fn handle_update(
        &mut self,
        lt: LogicalTime,
        rid: RequestId,
        reg: RegisterId,
        tsv: TimestampValuePair,
        from: ProcessId,
    ) -> StepOutput {
        self.lt = self.lt.merge(lt);
        let slot = self.tvps.entry(reg).or_insert(TimestampValuePair::INITIAL);
        *slot = slot.newer(tsv);
        let ack = Message {
            from: self.id,
            to: from,
            body: MessageBody::Ack { lt: self.lt, rid },
        };
        self.output(vec![ack])
    }

    pub fn handle_ack(&mut self, lt: LogicalTime, rid: RequestId, from: ProcessId) -> StepOutput {
        if rid != self.rid || self.phase != Phase::Updating {
            return self.discarded();
        }
        self.lt = self.lt.merge(lt);
        self.acks.insert(from);
        if self.acks.len() != self.quorum {
            return self.output(Vec::new());
        }
        self.acks.clear();
        self.rid = self.rid.next();
        let ret = if self.reading {
            ReturnValue::Value(self.rval)
        } else {
            ReturnValue::Ok
        };
        self.finish(ret)
    }

    fn finish(&mut self, ret: ReturnValue) -> StepOutput {
        let op = self
            .current
            .take()
            .expect("completion without an outstanding operation");
        self.phase = Phase::Idle;
        let mut out = self.output(Vec::new());
        out.completion = Some(Completion {
            op,
            ret,
            ts: self.op_ts,
            rounds: self.rounds,
        });
        out
    }
}
