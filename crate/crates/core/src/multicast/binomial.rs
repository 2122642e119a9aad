//! Per-sub-group block-pipelined multicast.
//!
//! Power-of-two groups use the hypercube binomial pipeline: at step `s` every
//! position exchanges with its neighbour along dimension `s mod d`. The source
//! injects `order[min(s, b−1)]` (or the earliest block in order the partner
//! still lacks), and every other position forwards the block it received most
//! recently among those the partner lacks. This finishes in exactly
//! `b + log2 L − 1` steps, the lower bound for one send and one receive per
//! node per step.
//!
//! Other group sizes have no perfect hypercube. There each step builds a
//! maximum sender→receiver matching (receivers holding the fewest blocks are
//! matched first, the source's fresh block goes out first) and every matched
//! pair moves the rarest block the receiver lacks. That stays within a couple
//! of steps of `b + ⌈log2 L⌉ − 1`.

use super::{BlockPlan, SubGroup, Transfer};
use crate::{BlockId, Error, Result};

/// Step list for one sub-group; `steps[i]` holds the transfers of step `i`.
pub type GroupSteps = Vec<Vec<Transfer>>;

struct Holdings {
    /// `held[pos][block]`
    held: Vec<Vec<bool>>,
    /// Step at which `pos` received `block`; `None` if not held or initial.
    received_at: Vec<Vec<Option<usize>>>,
    count: Vec<usize>,
    b: usize,
}

impl Holdings {
    fn new(len: usize, b: usize) -> Self {
        let mut held = vec![vec![false; b]; len];
        held[0] = vec![true; b];
        let mut count = vec![0; len];
        count[0] = b;
        Holdings {
            held,
            received_at: vec![vec![None; b]; len],
            count,
            b,
        }
    }

    fn complete(&self) -> bool {
        self.count.iter().all(|&c| c == self.b)
    }

    fn lacks(&self, pos: usize, block: usize) -> bool {
        !self.held[pos][block]
    }

    fn give(&mut self, pos: usize, block: usize, step: usize) {
        debug_assert!(!self.held[pos][block]);
        self.held[pos][block] = true;
        self.received_at[pos][block] = Some(step);
        self.count[pos] += 1;
    }
}

/// Builds the step list for one sub-group. Groups of one node need no steps.
pub fn build_binomial_schedule(group: &SubGroup, plan: &BlockPlan) -> Result<GroupSteps> {
    let len = group.members.len();
    let b = plan.block_count() as usize;
    if len == 0 {
        return Err(Error::invalid("sub-group has no members"));
    }
    if len == 1 {
        return Ok(Vec::new());
    }
    let order = if group.transfer_order.is_empty() {
        (0..b as u32).map(BlockId).collect()
    } else {
        group.transfer_order.clone()
    };
    if !is_permutation(&order, b) {
        return Err(Error::invalid(format!(
            "transfer order of group {} is not a permutation of {b} blocks",
            group.group_id
        )));
    }
    // rank[block] = position in the transfer order
    let mut rank = vec![0usize; b];
    for (i, blk) in order.iter().enumerate() {
        rank[blk.index()] = i;
    }

    let positional = if len.is_power_of_two() {
        hypercube_steps(len, b, &order, &rank)
    } else {
        matching_steps(len, b, &order, &rank)
    };

    Ok(positional
        .into_iter()
        .map(|step| {
            let mut out: Vec<Transfer> = step
                .into_iter()
                .map(|(from, to, blk)| Transfer {
                    sender: group.members[from],
                    receiver: group.members[to],
                    block: BlockId(blk as u32),
                })
                .collect();
            out.sort_by_key(|t| (t.sender, t.receiver));
            out
        })
        .collect())
}

fn is_permutation(order: &[BlockId], b: usize) -> bool {
    if order.len() != b {
        return false;
    }
    let mut seen = vec![false; b];
    for blk in order {
        let i = blk.index();
        if i >= b || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

type PosSteps = Vec<Vec<(usize, usize, usize)>>;

fn step_limit(len: usize, b: usize) -> usize {
    // generous: every step moves at least one block
    len * b + len + 8
}

fn hypercube_steps(len: usize, b: usize, order: &[BlockId], rank: &[usize]) -> PosSteps {
    let dims = len.trailing_zeros() as usize;
    let mut h = Holdings::new(len, b);
    let mut steps = Vec::new();
    let mut s = 0usize;
    while !h.complete() && s < step_limit(len, b) {
        let dim = s % dims;
        let mut sends = Vec::new();
        for v in 0..len {
            let u = v ^ (1 << dim);
            let pick = if v == 0 {
                let fresh = order[s.min(b - 1)].index();
                if h.lacks(u, fresh) {
                    Some(fresh)
                } else {
                    order.iter().map(|x| x.index()).find(|&x| h.lacks(u, x))
                }
            } else {
                (0..b)
                    .filter(|&x| h.held[v][x] && h.lacks(u, x))
                    .max_by_key(|&x| (h.received_at[v][x], std::cmp::Reverse(rank[x])))
            };
            if let Some(x) = pick {
                sends.push((v, u, x));
            }
        }
        for &(_, u, x) in &sends {
            h.give(u, x, s);
        }
        steps.push(sends);
        s += 1;
    }
    steps
}

fn matching_steps(len: usize, b: usize, order: &[BlockId], rank: &[usize]) -> PosSteps {
    let mut h = Holdings::new(len, b);
    let mut steps = Vec::new();
    let mut s = 0usize;
    while !h.complete() && s < step_limit(len, b) {
        let holders: Vec<usize> = (0..b)
            .map(|x| (0..len).filter(|&v| h.held[v][x]).count())
            .collect();
        let mut receivers: Vec<usize> = (1..len).filter(|&u| h.count[u] < b).collect();
        receivers.sort_by_key(|&u| (h.count[u], u));

        let mut sends = Vec::new();
        let mut sender_busy = vec![false; len];
        let mut receiver_busy = vec![false; len];

        let fresh = order[s.min(b - 1)].index();
        if let Some(&u) = receivers.iter().find(|&&u| h.lacks(u, fresh)) {
            sends.push((0, u, fresh));
            sender_busy[0] = true;
            receiver_busy[u] = true;
        }

        let senders: Vec<usize> = (0..len)
            .filter(|&v| h.count[v] > 0 && !sender_busy[v])
            .collect();
        let open: Vec<usize> = receivers
            .iter()
            .copied()
            .filter(|&u| !receiver_busy[u])
            .collect();
        let useful = |v: usize, u: usize| v != u && (0..b).any(|x| h.held[v][x] && h.lacks(u, x));

        // Kuhn's augmenting paths; receivers in priority order.
        let mut match_of_sender: Vec<Option<usize>> = vec![None; len];
        for &u in &open {
            let mut visited = vec![false; len];
            augment(u, &senders, &useful, &mut visited, &mut match_of_sender);
        }
        let mut pairs: Vec<(usize, usize)> = senders
            .iter()
            .filter_map(|&v| match_of_sender[v].map(|u| (v, u)))
            .collect();
        pairs.sort_by_key(|&(_, u)| (h.count[u], u));
        for (v, u) in pairs {
            let x = (0..b)
                .filter(|&x| h.held[v][x] && h.lacks(u, x))
                .min_by_key(|&x| (holders[x], rank[x]))
                .expect("matched pair always has a useful block");
            sends.push((v, u, x));
        }
        for &(_, u, x) in &sends {
            h.give(u, x, s);
        }
        steps.push(sends);
        s += 1;
    }
    steps
}

fn augment(
    u: usize,
    senders: &[usize],
    useful: &dyn Fn(usize, usize) -> bool,
    visited: &mut [bool],
    match_of_sender: &mut [Option<usize>],
) -> bool {
    for &v in senders {
        if visited[v] || !useful(v, u) {
            continue;
        }
        visited[v] = true;
        let free = match match_of_sender[v] {
            None => true,
            Some(other) => augment(other, senders, useful, visited, match_of_sender),
        };
        if free {
            match_of_sender[v] = Some(u);
            return true;
        }
    }
    false
}
