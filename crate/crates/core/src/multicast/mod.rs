//! Block partitioning, sub-group layout, k-way transfer ordering and
//! binomial-pipeline send plans.

mod binomial;
mod blocks;
mod schedule;
mod subgroups;

use serde::{Deserialize, Serialize};

use crate::{Error, ModelId, Result};

pub use binomial::{build_binomial_schedule, GroupSteps};
pub use blocks::{
    ceil_log2, modeled_multicast_time, partition_blocks, select_block_count, Block, BlockPlan,
};
pub use schedule::{
    compose_schedule, parse_transfers, validate_schedule, MulticastSchedule, ScheduleSummary,
    StepTimeModel, Topology, Transfer, Violation, ViolationKind,
};
pub use subgroups::{assign_orders, k_way_chunks, k_way_orders, partition_subgroups, SubGroup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub model_id: ModelId,
    pub size_bytes: u64,
    pub layer_count: u32,
    pub gpus_per_replica: u32,
    /// Compute time of one block for one batch, in milliseconds.
    pub per_block_compute_ms: f64,
    pub prefill_ms_per_token: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size_bytes == 0 {
            return Err(Error::invalid(format!(
                "model {}: size_bytes must be > 0",
                self.model_id
            )));
        }
        if self.layer_count == 0 {
            return Err(Error::invalid(format!(
                "model {}: layer_count must be >= 1",
                self.model_id
            )));
        }
        if self.gpus_per_replica == 0 {
            return Err(Error::invalid(format!(
                "model {}: gpus_per_replica must be >= 1",
                self.model_id
            )));
        }
        if !(self.per_block_compute_ms >= 0.0 && self.per_block_compute_ms.is_finite()) {
            return Err(Error::invalid(format!(
                "model {}: per_block_compute_ms must be finite and >= 0",
                self.model_id
            )));
        }
        if !(self.prefill_ms_per_token >= 0.0 && self.prefill_ms_per_token.is_finite()) {
            return Err(Error::invalid(format!(
                "model {}: prefill_ms_per_token must be finite and >= 0",
                self.model_id
            )));
        }
        Ok(())
    }
}
