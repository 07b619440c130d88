//! A mobile edge gateway model: GTP-U framing, S1AP-lite signalling, a
//! two-stage steering data plane with its controller, a discrete-event
//! harness and a region mobility simulator.

mod util;

pub mod cli;
pub mod control;
pub mod gtp;
pub mod harness;
pub mod s1ap;
pub mod sim;
pub mod steering;
