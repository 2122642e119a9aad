use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{Tier, TierState};
use crate::{ModelId, NodeId};

/// Per-node model slots in each cache tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierCapacity {
    pub gpu_models: usize,
    pub memory_models: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Eviction {
    pub node: NodeId,
    pub model: ModelId,
    /// Tier the copy is removed from (GPU or MEMORY).
    pub tier: Tier,
}

/// `(last_use, model, pinned)`
type Copy = (f64, ModelId, bool);

/// Keep-alive expiry plus LRU overflow eviction, per node and tier.
///
/// Copies idle for at least `keep_alive_s` go first; if a tier still holds
/// more than its capacity, least recently used copies follow. Pinned copies
/// and partially loaded GPU copies are never chosen.
pub fn evict(
    tiers: &TierState,
    now_s: f64,
    keep_alive_s: f64,
    capacity: TierCapacity,
) -> Vec<Eviction> {
    let mut held: BTreeMap<(NodeId, Tier), Vec<Copy>> = BTreeMap::new();
    for ((node, model), r) in tiers.iter() {
        if r.gpu_complete() {
            held.entry((*node, Tier::Gpu)).or_default().push((
                r.last_use_s,
                model.clone(),
                r.pinned,
            ));
        }
        if r.in_memory {
            held.entry((*node, Tier::Memory)).or_default().push((
                r.last_use_s,
                model.clone(),
                r.pinned,
            ));
        }
    }

    let mut out = Vec::new();
    for ((node, tier), mut copies) in held {
        let cap = match tier {
            Tier::Gpu => capacity.gpu_models,
            _ => capacity.memory_models,
        };
        copies.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let mut remaining = copies.len();
        for (last, model, pinned) in &copies {
            if *pinned {
                continue;
            }
            if now_s - last >= keep_alive_s || remaining > cap {
                out.push(Eviction {
                    node,
                    model: model.clone(),
                    tier,
                });
                remaining -= 1;
            }
        }
    }
    out
}

/// Applies evictions. With `write_back`, a GPU copy demoted from a node
/// leaves a host-memory copy behind.
pub fn apply_evictions(tiers: &mut TierState, evictions: &[Eviction], write_back: bool) {
    for e in evictions {
        let Some(r) = tiers.get_mut(e.node, &e.model) else {
            continue;
        };
        match e.tier {
            Tier::Gpu => {
                r.gpu_blocks.clear();
                if write_back {
                    r.in_memory = true;
                }
            }
            _ => r.in_memory = false,
        }
    }
}

/// Fractions of requests served hot, from host memory and from SSD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadMix {
    pub requests: usize,
    pub hot: f64,
    pub memory: f64,
    pub ssd: f64,
}

struct Replay {
    mix: LoadMix,
    memory_residency: Vec<f64>,
}

/// Single-node replay: a GPU hit is hot, a host-memory hit is a memory load,
/// anything else loads from SSD through host memory. After each access the
/// model sits in both tiers until evicted.
fn replay(accesses: &[(f64, ModelId)], capacity: TierCapacity, keep_alive_s: f64) -> Replay {
    let node = NodeId(0);
    let mut tiers = TierState::new();
    let mut counts = [0usize; 3];
    let mut entered: HashMap<ModelId, f64> = HashMap::new();
    let mut residency = Vec::new();

    let mut settle = |tiers: &mut TierState, entered: &mut HashMap<ModelId, f64>, now: f64| {
        let ev = evict(tiers, now, keep_alive_s, capacity);
        for e in ev.iter().filter(|e| e.tier == Tier::Memory) {
            if let Some(t0) = entered.remove(&e.model) {
                residency.push(now - t0);
            }
        }
        apply_evictions(tiers, &ev, false);
    };

    for (t, model) in accesses {
        settle(&mut tiers, &mut entered, *t);
        let slot = match tiers.tier(node, model) {
            Tier::Gpu => 0,
            Tier::Memory => 1,
            Tier::Ssd | Tier::Null => 2,
        };
        counts[slot] += 1;
        tiers.set_gpu_full(node, model, 1, *t);
        let r = tiers.entry(node, model, 1);
        if !r.in_memory {
            r.in_memory = true;
            entered.insert(model.clone(), *t);
        }
        settle(&mut tiers, &mut entered, *t);
    }

    let n = accesses.len();
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    Replay {
        mix: LoadMix {
            requests: n,
            hot: frac(counts[0]),
            memory: frac(counts[1]),
            ssd: frac(counts[2]),
        },
        memory_residency: residency,
    }
}

/// Replays time-sorted `(time_s, model)` accesses through one node's tiers.
pub fn miss_ratio(
    accesses: &[(f64, ModelId)],
    capacity: TierCapacity,
    keep_alive_s: f64,
) -> LoadMix {
    replay(accesses, capacity, keep_alive_s).mix
}

/// How long each model stayed in host memory before eviction, in the order
/// evictions happen. Copies still resident at the end are not counted.
pub fn residency_times(
    accesses: &[(f64, ModelId)],
    capacity: TierCapacity,
    keep_alive_s: f64,
) -> Vec<f64> {
    replay(accesses, capacity, keep_alive_s).memory_residency
}
