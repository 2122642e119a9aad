use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ClusterSpec, LoadPath, Strategy};
use crate::modelmgr::{startup_plan, StartupClass, Tier, TierState};
use crate::multicast::{
    assign_orders, compose_schedule, k_way_chunks, k_way_orders, partition_subgroups, BlockPlan,
    ModelSpec, MulticastSchedule, StepTimeModel, SubGroup, Topology, Transfer,
};
use crate::pipeline::{plan_pipelines, ExecMode, ExecutionPipeline, Stage};
use crate::{BlockId, Error, NodeId, Result};

/// Seconds per multicast step: fixed overhead plus one nominal block
/// (`M / b`) over the NIC.
pub fn transfer_step_time(plan: &BlockPlan, cluster: &ClusterSpec) -> f64 {
    cluster.step_fixed_overhead_s
        + plan.model_size_bytes as f64 / plan.block_count() as f64 / cluster.nic_bps
}

fn step_model(cluster: &ClusterSpec) -> StepTimeModel {
    StepTimeModel {
        fixed_overhead_s: cluster.step_fixed_overhead_s,
        bytes_per_second: cluster.nic_bps,
    }
}

/// Network schedule of a baseline strategy over `nodes`, rooted at
/// `nodes[0]`. Strategies without a network phase return `None`.
pub fn baseline_schedule(
    strategy: Strategy,
    nodes: &[NodeId],
    plan: &BlockPlan,
    cluster: &ClusterSpec,
) -> Result<Option<MulticastSchedule>> {
    let (topology, start_delay_s) = match strategy {
        Strategy::BinaryTree => (Topology::BinaryTree, 0.0),
        Strategy::BroadcastGroups => (Topology::Chain, cluster.baseline_group_init_s),
        Strategy::SsdOnly | Strategy::Ideal => return Ok(None),
        Strategy::LambdaScale => {
            return Err(Error::invalid(
                "lambda_scale is not a baseline; compose a binomial schedule instead",
            ))
        }
    };
    if nodes.is_empty() {
        return Err(Error::invalid(
            "baseline schedule needs at least the root node",
        ));
    }
    let b = plan.block_count() as usize;
    let n = nodes.len();
    // (receiver index, parent index, depth) per non-root node
    let links: Vec<(usize, usize, usize)> = (1..n)
        .map(|i| match topology {
            // heap layout: parent (i-1)/2, depth floor(log2(i+1))
            Topology::BinaryTree => (i, (i - 1) / 2, (i + 1).ilog2() as usize),
            _ => (i, i - 1, i),
        })
        .collect();
    let depth = links.iter().map(|l| l.2).max().unwrap_or(0);
    let step_count = if n > 1 { b + depth - 1 } else { 0 };
    let mut steps: Vec<Vec<Transfer>> = vec![Vec::new(); step_count];
    for &(child, parent, d) in &links {
        for j in 0..b {
            steps[j + d - 1].push(Transfer {
                sender: nodes[parent],
                receiver: nodes[child],
                block: BlockId(j as u32),
            });
        }
    }
    for s in &mut steps {
        s.sort();
    }
    Ok(Some(MulticastSchedule {
        steps,
        subgroups: vec![SubGroup {
            group_id: 0,
            source: nodes[0],
            members: nodes.to_vec(),
            transfer_order: (0..b as u32).map(BlockId).collect(),
        }],
        block_count: b as u32,
        block_bytes: plan.model_size_bytes as f64 / b as f64,
        step_time: step_model(cluster),
        start_delay_s,
        topology,
    }))
}

/// One block landing on one node, `offset_s` after the scale event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledChunk {
    pub offset_s: f64,
    pub node: NodeId,
    pub block: BlockId,
    pub path: LoadPath,
}

/// Load timings of one scale event, relative to the event.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadPlan {
    pub chunks: Vec<ScheduledChunk>,
    /// End offset of each multicast step.
    pub step_ends: Vec<f64>,
    pub node_full: BTreeMap<NodeId, f64>,
    /// Execute-while-load pipelines with their activation offsets. Only
    /// pipelines that activate before all their members are complete.
    pub pipelines: Vec<(ExecutionPipeline, f64)>,
    /// Sources pinned until the given offset.
    pub sources: Vec<(NodeId, f64)>,
    pub schedule: Option<MulticastSchedule>,
}

impl LoadPlan {
    fn sequential(
        &mut self,
        node: NodeId,
        order: &[BlockId],
        plan: &BlockPlan,
        rate: f64,
        path: LoadPath,
    ) {
        let mut t = 0.0;
        for &blk in order {
            t += plan.block(blk).size_bytes as f64 / rate;
            self.chunks.push(ScheduledChunk {
                offset_s: t,
                node,
                block: blk,
                path,
            });
        }
        self.node_full.insert(node, t);
    }

    fn instant(&mut self, node: NodeId, plan: &BlockPlan) {
        for blk in 0..plan.block_count() {
            self.chunks.push(ScheduledChunk {
                offset_s: 0.0,
                node,
                block: BlockId(blk),
                path: LoadPath::Instant,
            });
        }
        self.node_full.insert(node, 0.0);
    }

    fn set_schedule(&mut self, schedule: MulticastSchedule) {
        let ends = schedule.step_end_times();
        let mut full: BTreeMap<NodeId, f64> = BTreeMap::new();
        for (s, step) in schedule.steps.iter().enumerate() {
            for t in step {
                self.chunks.push(ScheduledChunk {
                    offset_s: ends[s],
                    node: t.receiver,
                    block: t.block,
                    path: LoadPath::Network,
                });
                let e = full.entry(t.receiver).or_insert(0.0);
                *e = e.max(ends[s]);
            }
        }
        let done = ends.last().copied().unwrap_or(0.0);
        for g in &schedule.subgroups {
            self.sources.push((g.source, done));
        }
        self.node_full.extend(full);
        self.step_ends = ends;
        self.schedule = Some(schedule);
    }

    fn keep_useful_pipelines(&mut self, candidates: Vec<(ExecutionPipeline, f64)>) {
        for (p, at) in candidates {
            let full = p
                .nodes()
                .filter_map(|n| self.node_full.get(&n))
                .fold(0.0f64, |a, &b| a.max(b));
            if at < full {
                self.pipelines.push((p, at));
            }
        }
    }
}

fn natural_order(b: u32) -> Vec<BlockId> {
    (0..b).map(BlockId).collect()
}

/// Local load for nodes without a network source: host memory if the node
/// caches the model, else its SSD copy.
fn local_fallback(
    lp: &mut LoadPlan,
    node: NodeId,
    model: &ModelSpec,
    plan: &BlockPlan,
    tiers: &TierState,
    cluster: &ClusterSpec,
) -> Result<()> {
    let order = natural_order(plan.block_count());
    match tiers.tier(node, &model.model_id) {
        Tier::Gpu => lp.instant(node, plan),
        Tier::Memory => lp.sequential(node, &order, plan, cluster.h2d_bps, LoadPath::HostToGpu),
        Tier::Ssd => lp.sequential(node, &order, plan, cluster.ssd_bps, LoadPath::Ssd),
        Tier::Null => return Err(Error::UnsatisfiableScaling(model.model_id.to_string())),
    }
    Ok(())
}

/// Load timings for `demand` nodes under `strategy`.
pub fn plan_load(
    strategy: Strategy,
    model: &ModelSpec,
    plan: &BlockPlan,
    demand: &[NodeId],
    tiers: &TierState,
    cluster: &ClusterSpec,
    k: u32,
) -> Result<LoadPlan> {
    let mut lp = LoadPlan::default();
    if demand.is_empty() {
        return Ok(lp);
    }
    let b = plan.block_count();
    let id = &model.model_id;
    match strategy {
        Strategy::Ideal => {
            for &n in demand {
                lp.instant(n, plan);
            }
        }
        Strategy::SsdOnly => {
            for &n in demand {
                local_fallback(&mut lp, n, model, plan, tiers, cluster)?;
            }
        }
        Strategy::BinaryTree | Strategy::BroadcastGroups => {
            let root = tiers
                .nodes_at(id, Tier::Gpu)
                .into_iter()
                .find(|n| !demand.contains(n));
            match root {
                Some(root) => {
                    let mut nodes = vec![root];
                    nodes.extend_from_slice(demand);
                    let s = baseline_schedule(strategy, &nodes, plan, cluster)?
                        .expect("network baselines always produce a schedule");
                    lp.set_schedule(s);
                }
                None => {
                    for &n in demand {
                        let order = natural_order(b);
                        if tiers.get(n, id).is_some_and(|r| r.on_ssd) {
                            lp.sequential(n, &order, plan, cluster.ssd_bps, LoadPath::Ssd);
                        } else {
                            return Err(Error::UnsatisfiableScaling(id.to_string()));
                        }
                    }
                }
            }
        }
        Strategy::LambdaScale => {
            let sp = startup_plan(id, demand, tiers, k.max(1) as usize)?;
            for n in sp.nodes_of(StartupClass::Hot) {
                lp.instant(n, plan);
            }
            let mut candidates = Vec::new();

            // warm nodes load from host memory in k-way order
            let warm = sp.nodes_of(StartupClass::Warm);
            if !warm.is_empty() {
                let w = warm.len() as u32;
                let orders = k_way_orders(b, w)?;
                for (n, o) in warm.iter().zip(&orders) {
                    lp.sequential(*n, o, plan, cluster.h2d_bps, LoadPath::HostToGpu);
                }
                if w > 1 {
                    let chunks = k_way_chunks(b, w);
                    let mut stages = Vec::new();
                    let mut standby = Vec::new();
                    let mut activation = 0.0f64;
                    for (n, c) in warm.iter().zip(chunks) {
                        if c.is_empty() {
                            standby.push(*n);
                            continue;
                        }
                        // the chunk heads this node's order
                        let t = lp
                            .chunks
                            .iter()
                            .filter(|ch| ch.node == *n && c.contains(&ch.block.0))
                            .fold(0.0f64, |a, ch| a.max(ch.offset_s));
                        activation = activation.max(t);
                        stages.push(Stage {
                            node: *n,
                            device: 0,
                            blocks: c,
                        });
                    }
                    candidates.push((
                        ExecutionPipeline {
                            pipeline_id: 0,
                            stages,
                            activation_step: None,
                            mode: ExecMode::Pipelined,
                            standby,
                        },
                        activation,
                    ));
                }
            }

            let cold = sp.nodes_of(StartupClass::Cold);
            if !cold.is_empty() {
                let srcs: Vec<NodeId> = sp.sources.iter().map(|s| s.0).take(cold.len()).collect();
                if srcs.is_empty() {
                    for &n in &cold {
                        local_fallback(&mut lp, n, model, plan, tiers, cluster)?;
                    }
                } else {
                    let mut nodes = srcs.clone();
                    nodes.extend_from_slice(&cold);
                    let mut groups = partition_subgroups(&nodes, &srcs)?;
                    assign_orders(&mut groups, b)?;
                    let schedule = compose_schedule(&groups, plan, step_model(cluster))?;
                    let (pipelines, _warnings) = plan_pipelines(&schedule)?;
                    lp.set_schedule(schedule);
                    for p in pipelines {
                        let at = p.activation_step.map_or(0.0, |s| lp.step_ends[s]);
                        candidates.push((p, at));
                    }
                }
            }
            candidates.sort_by(|a, b| a.1.total_cmp(&b.1));
            for (i, c) in candidates.iter_mut().enumerate() {
                c.0.pipeline_id = i;
            }
            lp.keep_useful_pipelines(candidates);
        }
    }
    Ok(lp)
}
