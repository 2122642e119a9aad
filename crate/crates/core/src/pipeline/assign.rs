use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{ExecMode, ExecutionPipeline, Stage};
use crate::multicast::{k_way_chunks, MulticastSchedule};
use crate::{BlockId, Error, NodeId, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanWarning {
    pub pipeline_id: usize,
    pub message: String,
}

/// Receivers of each group sorted by the step at which they finish their
/// group's first chunk (leading `⌈b/k⌉` blocks of its order), ties by id.
pub fn order_receivers(schedule: &MulticastSchedule) -> Vec<Vec<NodeId>> {
    let k = schedule.subgroups.len() as u32;
    let b = schedule.block_count;
    let l = b.div_ceil(k) as usize;
    let receipts = schedule.receipts();
    schedule
        .subgroups
        .iter()
        .map(|g| {
            let first = &g.transfer_order[..l.min(g.transfer_order.len())];
            let mut keyed: Vec<(usize, NodeId)> = g
                .receivers()
                .iter()
                .map(|&n| {
                    let done = schedule
                        .step_holding_all(n, first.iter().copied(), &receipts)
                        .flatten()
                        .unwrap_or(usize::MAX);
                    (done, n)
                })
                .collect();
            keyed.sort();
            keyed.into_iter().map(|(_, n)| n).collect()
        })
        .collect()
}

/// Groups ordered node lists into pipelines.
///
/// While nodes remain: a single remaining group becomes one pipeline;
/// otherwise, with `a` the smallest remaining group size, `a` pipelines are
/// formed, pipeline `t` taking the `t`-th node of every remaining group.
pub fn generate_pipelines(groups: &[Vec<NodeId>]) -> Result<Vec<Vec<NodeId>>> {
    if groups.is_empty() {
        return Err(Error::invalid(
            "generate_pipelines needs at least one group",
        ));
    }
    let mut rest: Vec<&[NodeId]> = groups
        .iter()
        .map(|g| g.as_slice())
        .filter(|g| !g.is_empty())
        .collect();
    let mut out = Vec::new();
    while !rest.is_empty() {
        if rest.len() == 1 {
            out.push(rest[0].to_vec());
            break;
        }
        let a = rest.iter().map(|g| g.len()).min().unwrap();
        for t in 0..a {
            out.push(rest.iter().map(|g| g[t]).collect());
        }
        rest = rest
            .into_iter()
            .map(|g| &g[a..])
            .filter(|g| !g.is_empty())
            .collect();
    }
    Ok(out)
}

/// Assigns block ranges to the nodes of one pipeline.
///
/// Nodes drawn from distinct sub-groups take the chunk their group receives
/// first. A pipeline whose nodes all come from one group splits the blocks
/// evenly over its nodes. Any coverage gap (missing groups, empty chunks) is
/// closed by stretching ranges between chunk starts and reported as a
/// warning. The activation step is read off `schedule`.
pub fn assign_blocks_to_stages(
    pipeline_id: usize,
    nodes: &[NodeId],
    schedule: &MulticastSchedule,
) -> Result<(ExecutionPipeline, Option<PlanWarning>)> {
    if nodes.is_empty() {
        return Err(Error::invalid("pipeline has no nodes"));
    }
    let b = schedule.block_count;
    let k = schedule.subgroups.len() as u32;
    let group_of: HashMap<NodeId, usize> = schedule
        .subgroups
        .iter()
        .enumerate()
        .flat_map(|(i, g)| g.members.iter().map(move |&m| (m, i)))
        .collect();
    let mut gids = Vec::with_capacity(nodes.len());
    for n in nodes {
        match group_of.get(n) {
            Some(&g) => gids.push(g),
            None => return Err(Error::invalid(format!("node {n} is in no sub-group"))),
        }
    }

    let single_group = gids.iter().all(|&g| g == gids[0]);
    let mut warning = None;
    let (stages, standby): (Vec<Stage>, Vec<NodeId>) =
        if single_group && (nodes.len() > 1 || k == 1) {
            even_split(nodes, b)
        } else {
            let mut seen = vec![false; k as usize];
            for &g in &gids {
                if std::mem::replace(&mut seen[g], true) {
                    return Err(Error::invalid(format!(
                        "pipeline {pipeline_id} mixes several nodes of group {g} with other groups"
                    )));
                }
            }
            let chunks = k_way_chunks(b, k);
            let mut with_chunk: Vec<(Range<u32>, NodeId)> = Vec::new();
            let mut standby = Vec::new();
            for (&n, &g) in nodes.iter().zip(&gids) {
                let c = chunks[g].clone();
                if c.is_empty() {
                    standby.push(n);
                } else {
                    with_chunk.push((c, n));
                }
            }
            with_chunk.sort_by_key(|(c, _)| c.start);
            let covered: u32 = with_chunk.iter().map(|(c, _)| c.len() as u32).sum();
            if covered != b {
                warning = Some(PlanWarning {
                    pipeline_id,
                    message: format!(
                        "chunks of groups {gids:?} cover {covered} of {b} blocks; ranges stretched"
                    ),
                });
            }
            let starts: Vec<u32> = with_chunk.iter().map(|(c, _)| c.start).collect();
            let stages = with_chunk
                .iter()
                .enumerate()
                .map(|(i, (_, n))| {
                    let lo = if i == 0 { 0 } else { starts[i] };
                    let hi = starts.get(i + 1).copied().unwrap_or(b);
                    Stage {
                        node: *n,
                        device: 0,
                        blocks: lo..hi,
                    }
                })
                .collect();
            (stages, standby)
        };

    let receipts = schedule.receipts();
    let mut activation: Option<usize> = None;
    for s in &stages {
        let need = s.blocks.clone().map(BlockId);
        match schedule.step_holding_all(s.node, need, &receipts) {
            Some(Some(step)) => activation = Some(activation.map_or(step, |a| a.max(step))),
            Some(None) => {}
            None => {
                return Err(Error::invalid(format!(
                    "stage node {} never receives blocks {:?}",
                    s.node, s.blocks
                )))
            }
        }
    }
    Ok((
        ExecutionPipeline {
            pipeline_id,
            stages,
            activation_step: activation,
            mode: ExecMode::Pipelined,
            standby,
        },
        warning,
    ))
}

fn even_split(nodes: &[NodeId], b: u32) -> (Vec<Stage>, Vec<NodeId>) {
    let s = (nodes.len() as u32).min(b);
    let base = b / s;
    let extra = b % s;
    let mut lo = 0;
    let stages = nodes[..s as usize]
        .iter()
        .enumerate()
        .map(|(i, &node)| {
            let hi = lo + base + u32::from((i as u32) < extra);
            let st = Stage {
                node,
                device: 0,
                blocks: lo..hi,
            };
            lo = hi;
            st
        })
        .collect();
    (stages, nodes[s as usize..].to_vec())
}

/// Orders receivers, generates pipelines and assigns blocks, sorted so the
/// earliest-activating pipeline comes first. Pipeline ids follow that order.
pub fn plan_pipelines(
    schedule: &MulticastSchedule,
) -> Result<(Vec<ExecutionPipeline>, Vec<PlanWarning>)> {
    let ordered = order_receivers(schedule);
    if ordered.iter().all(|g| g.is_empty()) {
        return Ok((Vec::new(), Vec::new()));
    }
    let node_lists = generate_pipelines(&ordered)?;
    let mut pipelines = Vec::new();
    let mut warnings = Vec::new();
    for (i, nodes) in node_lists.iter().enumerate() {
        let (p, w) = assign_blocks_to_stages(i, nodes, schedule)?;
        pipelines.push(p);
        warnings.extend(w);
    }
    pipelines.sort_by_key(|p| (p.steps_until_active(), p.pipeline_id));
    let remap: HashMap<usize, usize> = pipelines
        .iter()
        .enumerate()
        .map(|(i, p)| (p.pipeline_id, i))
        .collect();
    for p in &mut pipelines {
        p.pipeline_id = remap[&p.pipeline_id];
    }
    for w in &mut warnings {
        w.pipeline_id = remap[&w.pipeline_id];
    }
    Ok((pipelines, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multicast::{
        assign_orders, compose_schedule, partition_blocks, partition_subgroups, ModelSpec,
        StepTimeModel,
    };
    use crate::ModelId;

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().copied().map(NodeId).collect()
    }

    fn schedule(nodes: &[u32], sources: &[u32], b: u32) -> MulticastSchedule {
        let m = ModelSpec {
            model_id: ModelId::from("m"),
            size_bytes: 1 << 30,
            layer_count: 32,
            gpus_per_replica: 1,
            per_block_compute_ms: 1.0,
            prefill_ms_per_token: 0.1,
        };
        let plan = partition_blocks(&m, b).unwrap();
        let mut g = partition_subgroups(&ids(nodes), &ids(sources)).unwrap();
        assign_orders(&mut g, b).unwrap();
        let st = StepTimeModel {
            fixed_overhead_s: 0.0,
            bytes_per_second: 1e9,
        };
        compose_schedule(&g, &plan, st).unwrap()
    }

    #[test]
    fn figure_pairs_receivers_by_position() {
        let p = generate_pipelines(&[ids(&[3, 4, 5]), ids(&[6, 7, 8])]).unwrap();
        assert_eq!(p, vec![ids(&[3, 6]), ids(&[4, 7]), ids(&[5, 8])]);
    }

    #[test]
    fn single_group_forms_one_pipeline() {
        let p = generate_pipelines(&[ids(&[3, 4, 5])]).unwrap();
        assert_eq!(p, vec![ids(&[3, 4, 5])]);
    }

    #[test]
    fn uneven_groups_leave_a_tail_pipeline() {
        // hand trace: a = 2 takes two pairs, then one group of one node remains
        let p = generate_pipelines(&[ids(&[1, 2]), ids(&[10, 11, 12])]).unwrap();
        assert_eq!(p, vec![ids(&[1, 10]), ids(&[2, 11]), ids(&[12])]);
        assert!(generate_pipelines(&[]).is_err());
    }

    #[test]
    fn two_groups_b4_stage_chunks() {
        let s = schedule(&[1, 2, 3, 4, 5, 6, 7, 8], &[1, 2], 4);
        let (p, w) = assign_blocks_to_stages(0, &ids(&[3, 6]), &s).unwrap();
        assert!(w.is_none());
        assert_eq!(p.stages[0].blocks, 0..2);
        assert_eq!(p.stages[1].blocks, 2..4);
        assert_eq!(p.capacity(), 2);
    }

    #[test]
    fn single_source_even_split() {
        let s = schedule(&[0, 1, 2, 3, 4], &[0], 8);
        let (p, _) = assign_blocks_to_stages(0, &ids(&[1, 2, 3, 4]), &s).unwrap();
        let ranges: Vec<_> = p.stages.iter().map(|s| s.blocks.clone()).collect();
        assert_eq!(ranges, vec![0..2, 2..4, 4..6, 6..8]);
        assert_eq!(p.activation_step, Some(s.step_count() - 1));
    }

    #[test]
    fn more_nodes_than_blocks_go_standby() {
        let s = schedule(&[0, 1, 2, 3, 4], &[0], 2);
        let (p, _) = assign_blocks_to_stages(0, &ids(&[1, 2, 3, 4]), &s).unwrap();
        assert_eq!(p.stages.len(), 2);
        assert_eq!(p.standby, ids(&[3, 4]));
    }

    #[test]
    fn k4_b16_activates_after_four_steps() {
        let nodes: Vec<u32> = (0..8).collect();
        let s = schedule(&nodes, &[0, 1, 2, 3], 16);
        let (p, _) = plan_pipelines(&s).unwrap();
        assert_eq!(p[0].stages.len(), 4);
        assert!(p[0].stages.iter().all(|st| st.blocks.len() == 4));
        assert_eq!(p[0].activation_step, Some(3));
    }

    #[test]
    fn missing_group_is_stretched_with_warning() {
        // 7 nodes over 2 sources: the group of 4 leaves one receiver alone
        let s = schedule(&[0, 1, 2, 3, 4, 5, 6], &[0, 1], 4);
        let (ps, warnings) = plan_pipelines(&s).unwrap();
        let tail = ps.iter().find(|p| p.stages.len() == 1).unwrap();
        assert_eq!(tail.stages[0].blocks, 0..4);
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].pipeline_id, tail.pipeline_id);
    }

    #[test]
    fn all_sources_means_no_pipelines() {
        let s = schedule(&[0, 1], &[0, 1], 4);
        assert!(plan_pipelines(&s).unwrap().0.is_empty());
    }
}
