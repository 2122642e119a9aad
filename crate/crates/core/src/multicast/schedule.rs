use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{build_binomial_schedule, BlockPlan, SubGroup};
use crate::{BlockId, Error, NodeId, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Transfer {
    pub sender: NodeId,
    pub receiver: NodeId,
    pub block: BlockId,
}

/// Per-step cost: `fixed_overhead_s + block_bytes · degree / bytes_per_second`,
/// where `degree` is the largest number of sends any node issues in that step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTimeModel {
    pub fixed_overhead_s: f64,
    pub bytes_per_second: f64,
}

/// Communication pattern a schedule was built for. Determines the degree
/// limits the validator enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Binomial,
    /// Each node forwards to up to two children.
    BinaryTree,
    Chain,
}

impl Topology {
    pub fn max_sends_per_step(self) -> usize {
        match self {
            Topology::BinaryTree => 2,
            Topology::Binomial | Topology::Chain => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticastSchedule {
    /// `steps[i]` holds every transfer of global step `i`.
    pub steps: Vec<Vec<Transfer>>,
    pub subgroups: Vec<SubGroup>,
    pub block_count: u32,
    /// Nominal block payload (`M / b`) used for step timing.
    pub block_bytes: f64,
    pub step_time: StepTimeModel,
    /// One-time delay before the first step (group setup and the like).
    pub start_delay_s: f64,
    pub topology: Topology,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    Causality,
    SendDegree,
    ReceiveDegree,
    Incomplete,
    StepBound,
    UnknownNode,
    CrossGroup,
    SelfSend,
    BlockOutOfRange,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::Causality => "causality",
            ViolationKind::SendDegree => "send-degree",
            ViolationKind::ReceiveDegree => "receive-degree",
            ViolationKind::Incomplete => "incomplete",
            ViolationKind::StepBound => "step-bound",
            ViolationKind::UnknownNode => "unknown-node",
            ViolationKind::CrossGroup => "cross-group",
            ViolationKind::SelfSend => "self-send",
            ViolationKind::BlockOutOfRange => "block-out-of-range",
        }
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub step: usize,
    pub node: NodeId,
    pub block: BlockId,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.kind, self.step, self.node, self.block
        )
    }
}

/// Per-node completion: `steps_to_complete` is 0 for sources and `i + 1` for
/// a receiver whose last block arrives in step `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub step_count: usize,
    pub steps_to_complete: BTreeMap<NodeId, usize>,
}

/// Runs the per-group builder for every sub-group and merges the step lists
/// by index. The merged schedule is validated before it is returned.
pub fn compose_schedule(
    groups: &[SubGroup],
    plan: &BlockPlan,
    step_time: StepTimeModel,
) -> Result<MulticastSchedule> {
    if groups.is_empty() {
        return Err(Error::invalid("at least one sub-group is required"));
    }
    let mut steps: Vec<Vec<Transfer>> = Vec::new();
    for g in groups {
        let group_steps = build_binomial_schedule(g, plan)?;
        if steps.len() < group_steps.len() {
            steps.resize_with(group_steps.len(), Vec::new);
        }
        for (i, s) in group_steps.into_iter().enumerate() {
            steps[i].extend(s);
        }
    }
    for s in &mut steps {
        s.sort();
    }
    let schedule = MulticastSchedule {
        steps,
        subgroups: groups.to_vec(),
        block_count: plan.block_count(),
        block_bytes: plan.model_size_bytes as f64 / plan.block_count() as f64,
        step_time,
        start_delay_s: 0.0,
        topology: Topology::Binomial,
    };
    if let Some(v) = schedule.validate().into_iter().next() {
        return Err(Error::ScheduleInvalid {
            step: v.step,
            node: v.node,
            block: v.block,
            reason: v.kind.to_string(),
        });
    }
    Ok(schedule)
}

/// Free-function form of [`MulticastSchedule::validate`].
pub fn validate_schedule(schedule: &MulticastSchedule) -> Vec<Violation> {
    schedule.validate()
}

impl MulticastSchedule {
    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    pub fn members(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.subgroups
            .iter()
            .flat_map(|g| g.members.iter().copied())
    }

    /// Duration of step `i` in seconds.
    pub fn step_duration(&self, i: usize) -> f64 {
        let degree = max_send_degree(&self.steps[i]).max(1);
        self.step_time.fixed_overhead_s
            + self.block_bytes * degree as f64 / self.step_time.bytes_per_second
    }

    /// Wall-clock offset (from the scale event) at which step `i` finishes.
    pub fn step_end_times(&self) -> Vec<f64> {
        let mut t = self.start_delay_s;
        (0..self.steps.len())
            .map(|i| {
                t += self.step_duration(i);
                t
            })
            .collect()
    }

    pub fn total_time(&self) -> f64 {
        self.step_end_times().last().copied().unwrap_or(0.0)
    }

    /// Step index at which each (receiver, block) pair first arrives.
    pub fn receipts(&self) -> HashMap<(NodeId, BlockId), usize> {
        let mut out = HashMap::new();
        for (s, step) in self.steps.iter().enumerate() {
            for t in step {
                out.entry((t.receiver, t.block)).or_insert(s);
            }
        }
        out
    }

    /// Step index by which `node` holds every block in `blocks`; `Some(None)`
    /// means it held them from the start, `None` means it never does.
    pub fn step_holding_all(
        &self,
        node: NodeId,
        blocks: impl IntoIterator<Item = BlockId>,
        receipts: &HashMap<(NodeId, BlockId), usize>,
    ) -> Option<Option<usize>> {
        if self.subgroups.iter().any(|g| g.source == node) {
            return Some(None);
        }
        let mut last: Option<usize> = None;
        for b in blocks {
            let s = *receipts.get(&(node, b))?;
            last = Some(last.map_or(s, |l| l.max(s)));
        }
        Some(last)
    }

    pub fn summary(&self) -> ScheduleSummary {
        let receipts = self.receipts();
        let all: Vec<BlockId> = (0..self.block_count).map(BlockId).collect();
        let steps_to_complete = self
            .members()
            .map(|n| {
                let done = match self.step_holding_all(n, all.iter().copied(), &receipts) {
                    Some(Some(s)) => s + 1,
                    Some(None) => 0,
                    None => usize::MAX,
                };
                (n, done)
            })
            .collect();
        ScheduleSummary {
            step_count: self.steps.len(),
            steps_to_complete,
        }
    }

    /// Checks causality, degree limits, group boundaries, final residency
    /// and, for power-of-two binomial groups, the optimal step count.
    pub fn validate(&self) -> Vec<Violation> {
        let b = self.block_count as usize;
        let mut out = Vec::new();
        let mut group_of: HashMap<NodeId, usize> = HashMap::new();
        let mut held: HashMap<NodeId, Vec<bool>> = HashMap::new();
        for (gi, g) in self.subgroups.iter().enumerate() {
            for &m in &g.members {
                group_of.insert(m, gi);
                held.insert(m, vec![m == g.source; b]);
            }
        }
        let send_limit = self.topology.max_sends_per_step();
        // last step in which each group receives anything
        let mut group_last: Vec<Option<(usize, BlockId)>> = vec![None; self.subgroups.len()];

        for (s, step) in self.steps.iter().enumerate() {
            let mut sends: HashMap<NodeId, usize> = HashMap::new();
            let mut recvs: HashMap<NodeId, usize> = HashMap::new();
            let mut arrivals = Vec::new();
            for t in step {
                let mut push = |kind, node| {
                    out.push(Violation {
                        kind,
                        step: s,
                        node,
                        block: t.block,
                    })
                };
                if t.block.index() >= b {
                    push(ViolationKind::BlockOutOfRange, t.sender);
                    continue;
                }
                let (Some(&gs), Some(&gr)) = (group_of.get(&t.sender), group_of.get(&t.receiver))
                else {
                    let unknown = if group_of.contains_key(&t.sender) {
                        t.receiver
                    } else {
                        t.sender
                    };
                    push(ViolationKind::UnknownNode, unknown);
                    continue;
                };
                if t.sender == t.receiver {
                    push(ViolationKind::SelfSend, t.sender);
                    continue;
                }
                if self.topology == Topology::Binomial && gs != gr {
                    push(ViolationKind::CrossGroup, t.receiver);
                }
                if !held[&t.sender][t.block.index()] {
                    push(ViolationKind::Causality, t.sender);
                }
                let n = sends.entry(t.sender).or_default();
                *n += 1;
                if *n == send_limit + 1 {
                    push(ViolationKind::SendDegree, t.sender);
                }
                let n = recvs.entry(t.receiver).or_default();
                *n += 1;
                if *n == 2 {
                    push(ViolationKind::ReceiveDegree, t.receiver);
                }
                arrivals.push((t.receiver, t.block));
                group_last[gr] = Some((s, t.block));
            }
            // blocks become forwardable only from the next step on
            for (node, blk) in arrivals {
                held.get_mut(&node).unwrap()[blk.index()] = true;
            }
        }

        for g in &self.subgroups {
            for &m in &g.members {
                for (blk, &h) in held[&m].iter().enumerate() {
                    if !h {
                        out.push(Violation {
                            kind: ViolationKind::Incomplete,
                            step: self.steps.len(),
                            node: m,
                            block: BlockId(blk as u32),
                        });
                    }
                }
            }
        }

        if self.topology == Topology::Binomial {
            for (gi, g) in self.subgroups.iter().enumerate() {
                let len = g.members.len();
                if len < 2 || !len.is_power_of_two() {
                    continue;
                }
                let bound = b + len.trailing_zeros() as usize - 1;
                if let Some((last, blk)) = group_last[gi] {
                    if last + 1 > bound {
                        out.push(Violation {
                            kind: ViolationKind::StepBound,
                            step: last,
                            node: g.source,
                            block: blk,
                        });
                    }
                }
            }
        }
        out
    }

    /// One `step,sender,receiver,block_id` line per transfer, sorted by
    /// (step, sender). No header.
    pub fn to_text(&self) -> String {
        let mut lines = String::new();
        for (s, step) in self.steps.iter().enumerate() {
            let mut sorted = step.clone();
            sorted.sort_by_key(|t| (t.sender, t.receiver, t.block));
            for t in sorted {
                lines.push_str(&format!("{s},{},{},{}\n", t.sender, t.receiver, t.block));
            }
        }
        lines
    }
}

/// Parses the text produced by [`MulticastSchedule::to_text`] into per-step
/// transfer lists.
pub fn parse_transfers(text: &str) -> Result<Vec<Vec<Transfer>>> {
    let mut steps: Vec<Vec<Transfer>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Validation(format!(
                "schedule line {}: expected 4 fields, got {}",
                i + 1,
                fields.len()
            )));
        }
        let num = |f: &str| {
            f.trim()
                .parse::<u32>()
                .map_err(|e| Error::Validation(format!("schedule line {}: `{f}`: {e}", i + 1)))
        };
        let step = num(fields[0])? as usize;
        if steps.len() <= step {
            steps.resize_with(step + 1, Vec::new);
        }
        steps[step].push(Transfer {
            sender: NodeId(num(fields[1])?),
            receiver: NodeId(num(fields[2])?),
            block: BlockId(num(fields[3])?),
        });
    }
    Ok(steps)
}

fn max_send_degree(step: &[Transfer]) -> usize {
    let mut counts: HashMap<NodeId, usize> = HashMap::new();
    for t in step {
        *counts.entry(t.sender).or_default() += 1;
    }
    counts.into_values().max().unwrap_or(0)
}
