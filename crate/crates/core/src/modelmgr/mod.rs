//! Per-node model residency across GPU, host memory and SSD, startup
//! classification, eviction, and packed memory layout accounting.

mod cache;
mod layout;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::{BlockId, Error, ModelId, NodeId, Result};

pub use cache::{
    apply_evictions, evict, miss_ratio, residency_times, Eviction, LoadMix, TierCapacity,
};
pub use layout::{pack_layout, Buffers, MemoryLayout, Region};

/// Fastest place a complete copy of a model lives on a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Tier {
    Gpu,
    Memory,
    Ssd,
    Null,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Gpu => "GPU",
            Tier::Memory => "MEMORY",
            Tier::Ssd => "SSD",
            Tier::Null => "NULL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residency {
    pub block_count: u32,
    pub gpu_blocks: BTreeSet<BlockId>,
    pub in_memory: bool,
    pub on_ssd: bool,
    pub last_use_s: f64,
    /// Pinned copies (active multicast sources, configured cache copies)
    /// are never evicted.
    pub pinned: bool,
}

impl Residency {
    pub fn new(block_count: u32) -> Self {
        Residency {
            block_count,
            gpu_blocks: BTreeSet::new(),
            in_memory: false,
            on_ssd: false,
            last_use_s: 0.0,
            pinned: false,
        }
    }

    pub fn gpu_complete(&self) -> bool {
        self.gpu_blocks.len() as u32 == self.block_count
    }

    pub fn tier(&self) -> Tier {
        if self.gpu_complete() {
            Tier::Gpu
        } else if self.in_memory {
            Tier::Memory
        } else if self.on_ssd {
            Tier::Ssd
        } else {
            Tier::Null
        }
    }
}

/// Residency of every (node, model) pair the cluster has seen.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TierState {
    entries: BTreeMap<(NodeId, ModelId), Residency>,
}

impl TierState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, node: NodeId, model: &ModelId) -> Option<&Residency> {
        self.entries.get(&(node, model.clone()))
    }

    pub fn get_mut(&mut self, node: NodeId, model: &ModelId) -> Option<&mut Residency> {
        self.entries.get_mut(&(node, model.clone()))
    }

    pub fn entry(&mut self, node: NodeId, model: &ModelId, block_count: u32) -> &mut Residency {
        self.entries
            .entry((node, model.clone()))
            .or_insert_with(|| Residency::new(block_count))
    }

    pub fn tier(&self, node: NodeId, model: &ModelId) -> Tier {
        self.get(node, model).map_or(Tier::Null, Residency::tier)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(NodeId, ModelId), &Residency)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&(NodeId, ModelId), &mut Residency)> {
        self.entries.iter_mut()
    }

    /// Adds one block to the GPU copy. Returns false if it was already there.
    pub fn add_gpu_block(&mut self, node: NodeId, model: &ModelId, b: u32, block: BlockId) -> bool {
        self.entry(node, model, b).gpu_blocks.insert(block)
    }

    pub fn set_gpu_full(&mut self, node: NodeId, model: &ModelId, b: u32, now_s: f64) {
        let r = self.entry(node, model, b);
        r.gpu_blocks = (0..b).map(BlockId).collect();
        r.last_use_s = now_s;
    }

    pub fn drop_gpu(&mut self, node: NodeId, model: &ModelId) {
        if let Some(r) = self.entries.get_mut(&(node, model.clone())) {
            r.gpu_blocks.clear();
        }
    }

    pub fn touch(&mut self, node: NodeId, model: &ModelId, now_s: f64) {
        if let Some(r) = self.entries.get_mut(&(node, model.clone())) {
            r.last_use_s = now_s;
        }
    }

    pub fn set_pinned(&mut self, node: NodeId, model: &ModelId, pinned: bool) {
        if let Some(r) = self.entries.get_mut(&(node, model.clone())) {
            r.pinned = pinned;
        }
    }

    /// Nodes holding a complete copy of `model` at exactly `tier`.
    pub fn nodes_at(&self, model: &ModelId, tier: Tier) -> Vec<NodeId> {
        self.entries
            .iter()
            .filter(|((_, m), r)| m == model && r.tier() == tier)
            .map(|((n, _), _)| *n)
            .collect()
    }

    /// `node,model,tier,blocks_resident,last_use_s`, one record per pair.
    /// `blocks_resident` counts GPU-resident blocks.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ((node, model), r) in &self.entries {
            let _ = writeln!(
                out,
                "{node},{model},{},{},{}",
                r.tier(),
                r.gpu_blocks.len(),
                r.last_use_s
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartupClass {
    /// Already in GPU memory; serves immediately.
    Hot,
    /// Loads from host memory over the host-to-GPU link.
    Warm,
    /// Receives the model over the network.
    Cold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartupPlan {
    pub classes: BTreeMap<NodeId, StartupClass>,
    /// Multicast sources with the tier they send from. Empty when only SSD
    /// copies exist.
    pub sources: Vec<(NodeId, Tier)>,
    /// Nodes holding an SSD copy, used when no faster source exists.
    pub ssd_nodes: Vec<NodeId>,
}

impl StartupPlan {
    pub fn nodes_of(&self, class: StartupClass) -> Vec<NodeId> {
        self.classes
            .iter()
            .filter(|(_, &c)| c == class)
            .map(|(&n, _)| n)
            .collect()
    }
}

/// Classifies demand nodes by locality and picks up to `k` multicast sources
/// from the whole cluster, GPU copies first, then host-memory copies.
pub fn startup_plan(
    model: &ModelId,
    demand_nodes: &[NodeId],
    tiers: &TierState,
    k: usize,
) -> Result<StartupPlan> {
    if demand_nodes.is_empty() {
        return Err(Error::invalid(
            "startup_plan needs at least one demand node",
        ));
    }
    let classes = demand_nodes
        .iter()
        .map(|&n| {
            let c = match tiers.tier(n, model) {
                Tier::Gpu => StartupClass::Hot,
                Tier::Memory => StartupClass::Warm,
                Tier::Ssd | Tier::Null => StartupClass::Cold,
            };
            (n, c)
        })
        .collect();
    let mut sources: Vec<(NodeId, Tier)> = tiers
        .nodes_at(model, Tier::Gpu)
        .into_iter()
        .map(|n| (n, Tier::Gpu))
        .chain(
            tiers
                .nodes_at(model, Tier::Memory)
                .into_iter()
                .map(|n| (n, Tier::Memory)),
        )
        .collect();
    sources.truncate(k);
    let ssd_nodes = tiers.nodes_at(model, Tier::Ssd);
    if sources.is_empty() && ssd_nodes.is_empty() {
        return Err(Error::UnsatisfiableScaling(model.to_string()));
    }
    Ok(StartupPlan {
        classes,
        sources,
        ssd_nodes,
    })
}
