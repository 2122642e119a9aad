//! Execution pipelines built from multicast sub-groups, their 2D pipelined
//! tick tables, multi-GPU placement and the switch back to local serving.

mod assign;
mod modeswitch;
mod twod;

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::NodeId;

pub use assign::{
    assign_blocks_to_stages, generate_pipelines, order_receivers, plan_pipelines, PlanWarning,
};
pub use modeswitch::{
    plan_mode_switch, select_multi_gpu_strategy, ModeSwitchPlan, MultiGpuStrategy,
    RequestAssignment,
};
pub use twod::{plan_2d_schedule, ActivityTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Pipelined,
    Local,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub node: NodeId,
    pub device: u32,
    /// Half-open block id range executed by this stage.
    pub blocks: Range<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionPipeline {
    pub pipeline_id: usize,
    pub stages: Vec<Stage>,
    /// 0-indexed multicast step after which every stage holds its blocks.
    /// `None` when the stages hold them before the multicast starts.
    pub activation_step: Option<usize>,
    pub mode: ExecMode,
    /// Nodes that belong to the pipeline but execute nothing while it is
    /// pipelined (more nodes than blocks). They serve after a mode switch.
    pub standby: Vec<NodeId>,
}

impl ExecutionPipeline {
    pub fn capacity(&self) -> usize {
        self.stages.len()
    }

    /// Multicast steps that must finish before this pipeline can serve.
    pub fn steps_until_active(&self) -> usize {
        self.activation_step.map_or(0, |s| s + 1)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.stages
            .iter()
            .map(|s| s.node)
            .chain(self.standby.iter().copied())
    }

    /// Blocks executed by the largest stage.
    pub fn max_stage_blocks(&self) -> u32 {
        self.stages
            .iter()
            .map(|s| s.blocks.len() as u32)
            .max()
            .unwrap_or(0)
    }
}

/// `pipeline_id,stage_index,node,device,block_lo,block_hi,activation_step`
/// per stage. `block_hi` is inclusive; an activation step of `-1` means the
/// pipeline is usable before the first multicast step.
pub fn pipelines_to_text(pipelines: &[ExecutionPipeline]) -> String {
    let mut out = String::new();
    for p in pipelines {
        let act = p.activation_step.map_or(-1, |s| s as i64);
        for (i, s) in p.stages.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                p.pipeline_id,
                i,
                s.node,
                s.device,
                s.blocks.start,
                s.blocks.end - 1,
                act
            );
        }
    }
    out
}
