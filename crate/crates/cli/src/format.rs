//! On-disk formats: JSON-lines histories and the message-log sidecar.

use std::path::{Path, PathBuf};

use scabd::model::{
    Event, EventKind, History, LogicalTime, OpId, OpKind, Operation, ProcessId, RegisterId,
    ReturnValue, Timestamp,
};
use scabd::protocol::ProtocolKind;
use scabd::sim::{Delivery, MessageRecord, Trace};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: {msg}")]
    Invalid { line: usize, msg: String },
    #[error("events out of rt order at line {0}")]
    Unordered(usize),
    #[error(transparent)]
    Model(#[from] scabd::model::ModelError),
}

/// `"OK"`, an integer, or `null` on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RetField {
    Value(i64),
    Ok(OkTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OkTag {
    #[serde(rename = "OK")]
    Ok,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindField {
    Inv,
    Res,
}

/// One line of a history file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryRecord {
    pub kind: KindField,
    pub opid: u64,
    pub proc: u32,
    pub op: String,
    pub reg: String,
    pub val: Option<i64>,
    pub ret: Option<RetField>,
    pub rt: u64,
    /// Absent or null in uninstrumented histories.
    #[serde(default)]
    pub lt: Option<u64>,
    #[serde(default)]
    pub ts: Option<[u64; 2]>,
}

impl HistoryRecord {
    pub fn from_event(e: &Event) -> Self {
        HistoryRecord {
            kind: match e.kind {
                EventKind::Invocation => KindField::Inv,
                EventKind::Response => KindField::Res,
            },
            opid: e.op.id.0,
            proc: e.op.proc.0,
            op: e.op.kind.as_str().to_string(),
            reg: e.op.reg.as_str().to_string(),
            val: e.op.arg,
            ret: e.op.ret.map(|r| match r {
                ReturnValue::Value(v) => RetField::Value(v),
                ReturnValue::Ok => RetField::Ok(OkTag::Ok),
            }),
            rt: e.rt,
            lt: e.lt.map(|lt| lt.0),
            ts: e.op.ts.map(|ts| [ts.lt.0, u64::from(ts.pid.0)]),
        }
    }

    pub fn to_event(&self, line: usize) -> Result<Event, FormatError> {
        let invalid = |msg: &str| FormatError::Invalid {
            line,
            msg: msg.to_string(),
        };
        let kind = match self.op.as_str() {
            "read" => OpKind::Read,
            "write" => OpKind::Write,
            other => return Err(invalid(&format!("unknown op {other:?}"))),
        };
        if self.proc == 0 {
            return Err(invalid("process ids start at 1"));
        }
        let ts = match self.ts {
            Some([lt, pid]) => {
                let pid = u32::try_from(pid).map_err(|_| invalid("timestamp pid too large"))?;
                Some(Timestamp::new(lt, pid))
            }
            None => None,
        };
        let op = Operation {
            id: OpId(self.opid),
            proc: ProcessId(self.proc),
            kind,
            reg: RegisterId::new(self.reg.clone())?,
            arg: self.val,
            ret: self.ret.map(|r| match r {
                RetField::Value(v) => ReturnValue::Value(v),
                RetField::Ok(_) => ReturnValue::Ok,
            }),
            ts,
        };
        let lt = self.lt.map(LogicalTime);
        Ok(match self.kind {
            KindField::Inv => Event::invocation(op, self.rt, lt),
            KindField::Res => Event::response(op, self.rt, lt),
        })
    }
}

pub fn write_history(h: &History) -> String {
    let mut out = String::new();
    for e in h.events() {
        out.push_str(&serde_json::to_string(&HistoryRecord::from_event(e)).expect("serializable"));
        out.push('\n');
    }
    out
}

/// Parses and validates a history file. Blank lines are skipped.
pub fn parse_history(text: &str) -> Result<History, FormatError> {
    let mut events = Vec::new();
    let mut last_rt = 0;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: HistoryRecord =
            serde_json::from_str(line).map_err(|source| FormatError::Json {
                line: line_no,
                source,
            })?;
        if rec.rt < last_rt {
            return Err(FormatError::Unordered(line_no));
        }
        last_rt = rec.rt;
        events.push(rec.to_event(line_no)?);
    }
    let h = History::new(events);
    h.spans()?;
    Ok(h)
}

/// `runs/a.jsonl` → `runs/a.msgs.jsonl`.
pub fn sidecar_path(history: &Path) -> PathBuf {
    let stem = history
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    history.with_file_name(format!("{stem}.msgs.jsonl"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidecarHeader {
    pub protocol: String,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageLine {
    pub from: u32,
    pub to: u32,
    pub kind: String,
    pub rid: u64,
    pub lt: u64,
    pub sent_rt: u64,
    /// `handled`, `discarded`, `dropped` or `in_flight`.
    pub delivery: String,
    pub recv_rt: Option<u64>,
    pub recv_lt: Option<u64>,
}

impl MessageLine {
    pub fn from_record(m: &MessageRecord) -> Self {
        let (delivery, recv_rt, recv_lt) = match m.delivery {
            Delivery::Handled { rt, lt } => ("handled", Some(rt), Some(lt.0)),
            Delivery::Discarded { rt } => ("discarded", Some(rt), None),
            Delivery::Dropped { rt } => ("dropped", Some(rt), None),
            Delivery::InFlight => ("in_flight", None, None),
        };
        MessageLine {
            from: m.msg.from.0,
            to: m.msg.to.0,
            kind: m.msg.body.kind().as_str().to_string(),
            rid: m.msg.body.rid().0,
            lt: m.sent_lt().0,
            sent_rt: m.sent_rt,
            delivery: delivery.to_string(),
            recv_rt,
            recv_lt,
        }
    }
}

pub fn write_sidecar(trace: &Trace) -> String {
    let header = SidecarHeader {
        protocol: trace.protocol.as_str().to_string(),
        n: trace.n,
    };
    let mut out = serde_json::to_string(&header).expect("serializable");
    out.push('\n');
    for m in &trace.messages {
        out.push_str(&serde_json::to_string(&MessageLine::from_record(m)).expect("serializable"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sidecar {
    pub protocol: ProtocolKind,
    pub n: usize,
    pub messages: Vec<MessageLine>,
}

pub fn parse_sidecar(text: &str) -> Result<Sidecar, FormatError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let json = |line: usize| move |source| FormatError::Json { line, source };
    let (i, first) = lines.next().ok_or(FormatError::Invalid {
        line: 1,
        msg: "missing header".into(),
    })?;
    let header: SidecarHeader = serde_json::from_str(first).map_err(json(i + 1))?;
    let protocol = parse_protocol(&header.protocol).ok_or_else(|| FormatError::Invalid {
        line: i + 1,
        msg: format!("unknown protocol {:?}", header.protocol),
    })?;
    let messages = lines
        .map(|(i, l)| serde_json::from_str(l).map_err(json(i + 1)))
        .collect::<Result<_, _>>()?;
    Ok(Sidecar {
        protocol,
        n: header.n,
        messages,
    })
}

pub fn parse_protocol(s: &str) -> Option<ProtocolKind> {
    [ProtocolKind::ScAbd, ProtocolKind::MwAbd]
        .into_iter()
        .find(|p| p.as_str() == s)
}

impl Sidecar {
    /// Rounds each completed operation used: distinct request ids among the
    /// query and update broadcasts its process sent while it was running.
    pub fn rounds(&self, h: &History) -> Result<Vec<(OpKind, u32)>, FormatError> {
        let spans = h.spans()?;
        let events = h.events();
        let mut out = Vec::new();
        for s in spans {
            let Some(res) = s.res else { continue };
            let (from, to) = (events[s.inv].rt, events[res].rt);
            let mut rids: Vec<u64> = self
                .messages
                .iter()
                .filter(|m| {
                    m.from == s.proc.0
                        && (m.kind == "query" || m.kind == "update")
                        && (from..=to).contains(&m.sent_rt)
                })
                .map(|m| m.rid)
                .collect();
            rids.sort_unstable();
            rids.dedup();
            out.push((s.kind, rids.len() as u32));
        }
        Ok(out)
    }
}
