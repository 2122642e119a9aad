use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::ModelSpec;
use crate::{BlockId, Error, Result};

/// One contiguous span of layers, transferable and executable on its own.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    pub layers: Range<u32>,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPlan {
    pub model_size_bytes: u64,
    pub layer_count: u32,
    pub blocks: Vec<Block>,
}

impl BlockPlan {
    pub fn block_count(&self) -> u32 {
        self.blocks.len() as u32
    }

    pub fn block(&self, id: BlockId) -> &Block {
        &self.blocks[id.index()]
    }

    pub fn max_block_bytes(&self) -> u64 {
        self.blocks.iter().map(|b| b.size_bytes).max().unwrap_or(0)
    }

    /// Total bytes of the blocks in `range` (block ids, half-open).
    pub fn bytes_in(&self, range: Range<u32>) -> u64 {
        self.blocks[range.start as usize..range.end as usize]
            .iter()
            .map(|b| b.size_bytes)
            .sum()
    }
}

/// Splits the model into `b` contiguous layer ranges, as even as possible.
///
/// The first `layer_count % b` blocks carry one extra layer. Byte sizes follow
/// the layer split with cumulative rounding, so they always sum to the model
/// size exactly.
pub fn partition_blocks(model: &ModelSpec, b: u32) -> Result<BlockPlan> {
    model.validate()?;
    if b == 0 {
        return Err(Error::invalid("block count must be >= 1"));
    }
    if b > model.layer_count {
        return Err(Error::invalid(format!(
            "block count {b} exceeds layer_count {}",
            model.layer_count
        )));
    }
    let layers = model.layer_count;
    let base = layers / b;
    let extra = layers % b;
    let bytes_before = |layer: u32| -> u64 {
        ((model.size_bytes as u128 * layer as u128) / layers as u128) as u64
    };

    let mut blocks = Vec::with_capacity(b as usize);
    let mut start = 0u32;
    for i in 0..b {
        let len = base + u32::from(i < extra);
        let end = start + len;
        blocks.push(Block {
            id: BlockId(i),
            layers: start..end,
            size_bytes: bytes_before(end) - bytes_before(start),
        });
        start = end;
    }
    Ok(BlockPlan {
        model_size_bytes: model.size_bytes,
        layer_count: layers,
        blocks,
    })
}

pub fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

/// Modeled end-to-end time of a 1→N binomial-pipeline multicast:
/// `(b + ⌈log2 N⌉ − 1) · (overhead + M / (b · bandwidth))`.
pub fn modeled_multicast_time(
    size_bytes: u64,
    b: u32,
    n_nodes: u64,
    fixed_overhead_s: f64,
    bandwidth_bps: f64,
) -> f64 {
    if n_nodes <= 1 || b == 0 {
        return 0.0;
    }
    let steps = (b + ceil_log2(n_nodes) - 1) as f64;
    steps * (fixed_overhead_s + size_bytes as f64 / (b as f64 * bandwidth_bps))
}

/// Picks the elbow of the modeled multicast time: the smallest `b` whose
/// step to `b + 1` improves the time by less than `improvement_threshold`
/// (relative). Capped at the layer count.
pub fn select_block_count(
    model: &ModelSpec,
    n_nodes: u64,
    fixed_overhead_s: f64,
    bandwidth_bps: f64,
    improvement_threshold: f64,
) -> Result<u32> {
    model.validate()?;
    if n_nodes == 0 {
        return Err(Error::invalid("n_nodes must be >= 1"));
    }
    if !(fixed_overhead_s.is_finite() && fixed_overhead_s >= 0.0) {
        return Err(Error::invalid("fixed_overhead_s must be finite and >= 0"));
    }
    if !(bandwidth_bps.is_finite() && bandwidth_bps > 0.0) {
        return Err(Error::invalid("bandwidth must be finite and > 0"));
    }
    if !(improvement_threshold > 0.0 && improvement_threshold < 1.0) {
        return Err(Error::invalid("improvement_threshold must lie in (0, 1)"));
    }
    let cap = model.layer_count;
    let t = |b: u32| {
        modeled_multicast_time(
            model.size_bytes,
            b,
            n_nodes,
            fixed_overhead_s,
            bandwidth_bps,
        )
    };
    for b in 1..cap {
        let cur = t(b);
        if cur <= 0.0 {
            return Ok(b);
        }
        let gain = (cur - t(b + 1)) / cur;
        if gain < improvement_threshold {
            return Ok(b);
        }
    }
    Ok(cap)
}
