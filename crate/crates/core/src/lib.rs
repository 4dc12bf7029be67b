//! Simulation and consistency checking for SC-ABD, a quorum-replicated
//! shared memory whose writes finish in one round trip and whose reads
//! finish in two, and which is sequentially consistent while tolerating
//! crashes of a minority of processes.
//!
//! * [`model`]: identifiers, clocks, timestamps, messages, histories.
//! * [`protocol`]: replica state machines (SC-ABD and the multi-writer ABD
//!   baseline), plus defective variants for mutation testing.
//! * [`sim`]: seeded discrete-event simulator with crash injection.
//! * [`checker`]: logical-time reordering, linearizability search, the
//!   compositional SC check, a brute-force SC oracle and trace audits.

pub mod checker;
pub mod model;
pub mod protocol;
pub mod sim;

pub use checker::{
    check_sc_bruteforce, check_sc_compositional, CheckError, LogicalTimeHistory, Verdict,
};
pub use model::{History, ProcessId, RegisterId, Timestamp, TimestampValuePair};
pub use protocol::{Mutation, ProtocolKind, Replica};
pub use sim::{run_simulation, SimConfig, Trace};
