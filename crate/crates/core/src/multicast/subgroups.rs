use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::{BlockId, Error, NodeId, Result};

/// A source plus the destinations it multicasts to as an independent 1→L scaling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubGroup {
    pub group_id: usize,
    pub source: NodeId,
    /// Source first, then destinations.
    pub members: Vec<NodeId>,
    /// Order in which the source injects blocks. Empty until assigned.
    pub transfer_order: Vec<BlockId>,
}

impl SubGroup {
    pub fn receivers(&self) -> &[NodeId] {
        &self.members[1..]
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Splits `nodes` into one sub-group per source.
///
/// Destinations (nodes that are not sources, in input order) are dealt out in
/// contiguous runs; the first `N mod k` groups receive one extra node, so
/// group sizes differ by at most one.
pub fn partition_subgroups(nodes: &[NodeId], sources: &[NodeId]) -> Result<Vec<SubGroup>> {
    if sources.is_empty() {
        return Err(Error::invalid("k = 0: at least one source is required"));
    }
    let mut seen = BTreeSet::new();
    for n in nodes {
        if !seen.insert(*n) {
            return Err(Error::invalid(format!("duplicate node id {n}")));
        }
    }
    let mut src_seen = BTreeSet::new();
    for s in sources {
        if !src_seen.insert(*s) {
            return Err(Error::invalid(format!("duplicate source id {s}")));
        }
        if !seen.contains(s) {
            return Err(Error::invalid(format!("source {s} is not among the nodes")));
        }
    }

    let n = nodes.len();
    let k = sources.len();
    let dests: Vec<NodeId> = nodes
        .iter()
        .copied()
        .filter(|id| !src_seen.contains(id))
        .collect();

    let mut groups = Vec::with_capacity(k);
    let mut next = 0usize;
    for (i, &src) in sources.iter().enumerate() {
        let size = n / k + usize::from(i < n % k);
        let take = size - 1;
        let mut members = Vec::with_capacity(size);
        members.push(src);
        members.extend_from_slice(&dests[next..next + take]);
        next += take;
        groups.push(SubGroup {
            group_id: i,
            source: src,
            members,
            transfer_order: Vec::new(),
        });
    }
    debug_assert_eq!(next, dests.len());
    Ok(groups)
}

/// The `k` block chunks of the k-way transmission strategy:
/// chunk `i` covers blocks `[l·i, min(l·(i+1), b))` with `l = ⌈b/k⌉`.
/// Chunks may be empty when `k` does not divide `b` evenly enough.
pub fn k_way_chunks(b: u32, k: u32) -> Vec<Range<u32>> {
    let l = b.div_ceil(k);
    (0..k)
        .map(|i| {
            let lo = (l * i).min(b);
            let hi = (l * (i + 1)).min(b);
            lo..hi
        })
        .collect()
}

/// Circularly shifted transfer orders, one per sub-group. Order `i` is the
/// concatenation of chunks `i, i+1, …, i+k−1 (mod k)`; empty chunks vanish.
pub fn k_way_orders(b: u32, k: u32) -> Result<Vec<Vec<BlockId>>> {
    if b == 0 {
        return Err(Error::invalid("block count must be >= 1"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let chunks = k_way_chunks(b, k);
    let k = k as usize;
    Ok((0..k)
        .map(|i| {
            (0..k)
                .flat_map(|j| chunks[(i + j) % k].clone())
                .map(BlockId)
                .collect()
        })
        .collect())
}

/// Attaches the k-way orders to the groups, in group order.
pub fn assign_orders(groups: &mut [SubGroup], b: u32) -> Result<()> {
    let orders = k_way_orders(b, groups.len() as u32)?;
    for (g, o) in groups.iter_mut().zip(orders) {
        g.transfer_order = o;
    }
    Ok(())
}
