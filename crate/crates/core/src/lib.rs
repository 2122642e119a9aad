//! Scaling LLM serving instances across a GPU cluster in sub-second time.
//!
//! The crate has three layers:
//!
//! * planning: [`multicast`] builds block-pipelined multicast schedules over
//!   hypercube pairings, and [`pipeline`] turns the partially-loaded receivers
//!   into execution pipelines that serve requests before any single node holds
//!   the whole model;
//! * state: [`modelmgr`] tracks where each model lives (GPU, host memory, SSD)
//!   and decides where a scale-out sources its bytes from;
//! * simulation: [`simengine`] replays a [`workload`] trace through a
//!   deterministic discrete-event model of the cluster under several scaling
//!   strategies, and [`workload::aggregate`] turns the event log into TTFT,
//!   throughput, and GPU-time metrics.
//!
//! The [`cli`] module wires all of it to the `pipecast` binary.

pub mod cli;
pub mod error;
pub mod modelmgr;
pub mod multicast;
pub mod pipeline;
pub mod simengine;
pub mod workload;

mod ids;

pub use error::{Error, Result};
pub use ids::{BlockId, ModelId, NodeId};
