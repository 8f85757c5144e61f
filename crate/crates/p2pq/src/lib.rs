//! Queueing systems with randomly arriving and departing servers.
//!
//! Classical queueing theory assumes a fixed pool of servers. In peer-to-peer
//! service systems (online storage, video-on-demand, file sharing) the servers
//! are peers that come and go, so service capacity is itself a stochastic
//! process. This crate models such systems as a two-dimensional job-server
//! Markov process and provides:
//!
//! * [`model`] — model parameters, state types, workload distributions, and a
//!   parser for the extended Kendall notation `A/B/(C/E)`;
//! * [`sim`] — a continuous-time discrete-event simulator for exponential and
//!   general workloads, with replication statistics;
//! * [`stability`] — drift verification of a quadratic-plus-linear Lyapunov
//!   function over the discretized workload-server chain;
//! * [`qbd`] — a matrix-geometric equilibrium solver for the job-server chain
//!   (level = jobs, phase = servers) plus a direct truncated-chain solver used
//!   as an independent oracle;
//! * [`bounds`] — closed-form queue-length bounds, sojourn-time conversion via
//!   Little's law, and an identity-evaluation harness.

// `!(a < b)` guards throughout treat NaN as out of domain; `partial_cmp`
// would lose that.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod model;
pub mod qbd;
pub mod sim;
pub mod stability;

pub use model::{ModelParams, ModelSpec, Notation, SystemState, Tag, WorkloadDist};
