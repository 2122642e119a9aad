//! Deterministic discrete-event simulation of a serverless LLM cluster:
//! arrivals, autoscaling, model loading under each scaling strategy,
//! execute-while-load pipelines and mode switching.

mod autoscale;
mod cost;
mod engine;
mod events;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::multicast::ModelSpec;
use crate::{Error, ModelId, NodeId, Result};

pub use autoscale::{autoscale, ScaleDecision};
pub use cost::{baseline_schedule, plan_load, transfer_step_time, LoadPlan, ScheduledChunk};
pub use engine::{run, SimOutput};
pub use events::{events_to_text, parse_event_log, EventKind, LoadPath, Payload, SimEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSpec {
    pub node_count: u32,
    pub gpus_per_node: u32,
    pub gpu_mem_bytes: u64,
    pub host_mem_bytes: u64,
    pub nic_bps: f64,
    pub nvlink_bps: f64,
    pub h2d_bps: f64,
    pub ssd_bps: f64,
    pub step_fixed_overhead_s: f64,
    /// One-time process-group setup before the first block of the
    /// group-broadcast baseline.
    pub baseline_group_init_s: f64,
    /// Intermediate activation size handed between pipeline stages.
    pub activation_bytes: u64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        ClusterSpec {
            node_count: 8,
            gpus_per_node: 1,
            gpu_mem_bytes: 80_000_000_000,
            host_mem_bytes: 1_000_000_000_000,
            nic_bps: 50e9,
            nvlink_bps: 400e9,
            h2d_bps: 64e9,
            ssd_bps: 5e9,
            step_fixed_overhead_s: 0.0,
            baseline_group_init_s: 0.6,
            activation_bytes: 64 * 1024,
        }
    }
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.node_count == 0 {
            return Err(Error::invalid("node_count must be >= 1"));
        }
        if self.gpus_per_node == 0 {
            return Err(Error::invalid("gpus_per_node must be >= 1"));
        }
        for (name, v) in [
            ("nic_bps", self.nic_bps),
            ("nvlink_bps", self.nvlink_bps),
            ("h2d_bps", self.h2d_bps),
            ("ssd_bps", self.ssd_bps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and > 0")));
            }
        }
        for (name, v) in [
            ("step_fixed_overhead_s", self.step_fixed_overhead_s),
            ("baseline_group_init_s", self.baseline_group_init_s),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    LambdaScale,
    BinaryTree,
    BroadcastGroups,
    SsdOnly,
    Ideal,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::LambdaScale,
        Strategy::BinaryTree,
        Strategy::BroadcastGroups,
        Strategy::SsdOnly,
        Strategy::Ideal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::LambdaScale => "lambda_scale",
            Strategy::BinaryTree => "binary_tree",
            Strategy::BroadcastGroups => "broadcast_groups",
            Strategy::SsdOnly => "ssd_only",
            Strategy::Ideal => "ideal",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoscalePolicy {
    /// Scale out when queued requests per active replica exceed this.
    pub threshold_hi: f64,
    pub keep_alive_s: f64,
    pub min_replicas: u32,
    /// Requests one replica is assumed to absorb.
    pub capacity_per_replica: u32,
}

impl Default for AutoscalePolicy {
    fn default() -> Self {
        AutoscalePolicy {
            threshold_hi: 2.0,
            keep_alive_s: 15.0,
            min_replicas: 0,
            capacity_per_replica: 1,
        }
    }
}

/// Number of transfer blocks per model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockCount {
    /// Elbow of the modeled multicast time.
    Auto,
    Fixed(u32),
}

/// Everything a run needs besides the strategy, trace and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub cluster: ClusterSpec,
    pub models: Vec<ModelSpec>,
    pub policy: AutoscalePolicy,
    /// Maximum multicast sources per scale event.
    pub k: u32,
    pub block_count: BlockCount,
    pub elbow_threshold: f64,
    /// Requests per batch.
    pub batch_size: u32,
    /// Nodes holding each model in GPU memory at time 0.
    pub hot: Vec<(NodeId, ModelId)>,
    /// Pinned host-memory copies.
    pub memory: Vec<(NodeId, ModelId)>,
    /// Every node keeps every model on local SSD.
    pub ssd_everywhere: bool,
    /// A GPU copy released at scale-in leaves a host-memory copy behind.
    pub write_back: bool,
    pub horizon_s: Option<f64>,
}

impl SimConfig {
    pub fn new(cluster: ClusterSpec, models: Vec<ModelSpec>) -> Self {
        SimConfig {
            cluster,
            models,
            policy: AutoscalePolicy::default(),
            k: 1,
            block_count: BlockCount::Auto,
            elbow_threshold: 0.01,
            batch_size: 1,
            hot: Vec::new(),
            memory: Vec::new(),
            ssd_everywhere: true,
            write_back: false,
            horizon_s: None,
        }
    }
}
