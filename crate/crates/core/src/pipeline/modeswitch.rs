use serde::{Deserialize, Serialize};

use super::{ExecMode, ExecutionPipeline};
use crate::multicast::ModelSpec;
use crate::{Error, NodeId, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiGpuStrategy {
    CrossNodeSingleGpu,
    CrossNodeMultiGpu,
    /// Replicate a single-GPU model onto free local GPUs over the intra-node
    /// link; replicas then take part in cross-node pipelines.
    IntraNodeReplicate,
}

pub fn select_multi_gpu_strategy(
    model: &ModelSpec,
    node_gpus: u32,
    free_local_gpus: u32,
) -> Result<MultiGpuStrategy> {
    if node_gpus == 0 {
        return Err(Error::invalid("node_gpus must be >= 1"));
    }
    if model.gpus_per_replica > node_gpus {
        return Err(Error::Unsupported(format!(
            "model {} needs {} GPUs per replica but nodes have {node_gpus}; \
             replicas spanning nodes are not modeled",
            model.model_id, model.gpus_per_replica
        )));
    }
    Ok(if model.gpus_per_replica > 1 {
        MultiGpuStrategy::CrossNodeMultiGpu
    } else if free_local_gpus >= 1 {
        MultiGpuStrategy::IntraNodeReplicate
    } else {
        MultiGpuStrategy::CrossNodeSingleGpu
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestAssignment {
    pub request_id: u64,
    pub node: NodeId,
    pub tokens_generated: u32,
    /// Blocking delay to rebuild the request's KV cache on `node`.
    pub recompute_cost_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSwitchPlan {
    pub pipeline_id: usize,
    pub assignments: Vec<RequestAssignment>,
}

impl ModeSwitchPlan {
    pub fn total_recompute_s(&self) -> f64 {
        self.assignments.iter().map(|a| a.recompute_cost_s).sum()
    }

    pub fn apply(&self, pipeline: &mut ExecutionPipeline) {
        debug_assert_eq!(pipeline.pipeline_id, self.pipeline_id);
        pipeline.mode = ExecMode::Local;
    }
}

/// Spreads a pipeline's unfinished requests round-robin over its nodes (stage
/// nodes first, then standby) and prices the KV-cache rebuild of each.
pub fn plan_mode_switch(
    pipeline: &ExecutionPipeline,
    incomplete: &[(u64, u32)],
    prefill_ms_per_token: f64,
) -> ModeSwitchPlan {
    let nodes: Vec<NodeId> = pipeline.nodes().collect();
    let assignments = if nodes.is_empty() {
        Vec::new()
    } else {
        incomplete
            .iter()
            .enumerate()
            .map(|(i, &(request_id, tokens))| RequestAssignment {
                request_id,
                node: nodes[i % nodes.len()],
                tokens_generated: tokens,
                recompute_cost_s: tokens as f64 * prefill_ms_per_token / 1000.0,
            })
            .collect()
    };
    ModeSwitchPlan {
        pipeline_id: pipeline.pipeline_id,
        assignments,
    }
}
