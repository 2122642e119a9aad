use serde::{Deserialize, Serialize};

use crate::multicast::BlockPlan;
use crate::{BlockId, Error, Result};

/// One block's contiguous slice of the packed model image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub block: BlockId,
    pub offset: u64,
    pub len: u64,
}

/// Working buffers reserved once per model and reused for the whole run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Buffers {
    pub activation_bytes: u64,
    pub staging_bytes: u64,
}

impl Buffers {
    pub fn total(&self) -> u64 {
        self.activation_bytes + self.staging_bytes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryLayout {
    pub regions: Vec<Region>,
    pub buffers: Buffers,
}

impl MemoryLayout {
    pub fn image_bytes(&self) -> u64 {
        self.regions.last().map_or(0, |r| r.offset + r.len)
    }

    pub fn total_bytes(&self) -> u64 {
        self.image_bytes() + self.buffers.total()
    }
}

/// Lays the blocks out back to back in block order and reserves the working
/// buffers. Fails if image plus buffers exceed `device_bytes`.
pub fn pack_layout(plan: &BlockPlan, buffers: Buffers, device_bytes: u64) -> Result<MemoryLayout> {
    let mut offset = 0u64;
    let regions = plan
        .blocks
        .iter()
        .map(|b| {
            let r = Region {
                block: b.id,
                offset,
                len: b.size_bytes,
            };
            offset += b.size_bytes;
            r
        })
        .collect();
    let layout = MemoryLayout { regions, buffers };
    let needed = layout.total_bytes();
    if needed > device_bytes {
        return Err(Error::Capacity {
            needed,
            available: device_bytes,
            deficit: needed - device_bytes,
        });
    }
    Ok(layout)
}
