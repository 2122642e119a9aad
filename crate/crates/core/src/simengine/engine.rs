use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cost::plan_load;
use super::{autoscale, BlockCount, EventKind, Payload, SimConfig, SimEvent, Strategy};
use crate::modelmgr::{pack_layout, Buffers, Tier, TierState};
use crate::multicast::{partition_blocks, select_block_count, BlockPlan, ModelSpec};
use crate::pipeline::{plan_mode_switch, select_multi_gpu_strategy, ExecutionPipeline};
use crate::workload::{aggregate, validate_trace, AggregateOptions, MetricsReport, TraceRecord};
use crate::{Error, ModelId, NodeId, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub events: Vec<SimEvent>,
    pub report: MetricsReport,
}

enum Ev {
    Arrival(usize),
    Autoscale(usize),
    Log(Payload),
    NodeFull(NodeId),
    PipelineActive(usize),
    Dispatch(usize),
    Token {
        inst: usize,
        slot: usize,
        epoch: u64,
    },
    ScaleInCheck {
        node: NodeId,
        epoch: u64,
    },
}

impl Ev {
    fn rank(&self) -> u8 {
        match self {
            Ev::Log(p) => p.kind().rank(),
            Ev::NodeFull(_) | Ev::PipelineActive(_) | Ev::Dispatch(_) => {
                EventKind::LoadChunkDone.rank()
            }
            Ev::Token { .. } => EventKind::TokenEmitted.rank(),
            Ev::ScaleInCheck { .. } => EventKind::ScaleIn.rank(),
            Ev::Arrival(_) => EventKind::RequestArrival.rank(),
            Ev::Autoscale(_) => EventKind::ScaleOut.rank(),
        }
    }
}

struct Queued {
    time: f64,
    rank: u8,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    // reversed: BinaryHeap pops the earliest (time, rank, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.rank.cmp(&self.rank))
            .then(other.seq.cmp(&self.seq))
    }
}

struct ModelRt {
    spec: ModelSpec,
    plan: BlockPlan,
    b: u32,
    local_period_s: f64,
    queue: VecDeque<usize>,
    autoscale_pending: bool,
}

#[derive(Default)]
struct NodeRt {
    model: Option<usize>,
    instance: Option<usize>,
    loading: bool,
    idle_since: Option<f64>,
    idle_epoch: u64,
    pinned_until: f64,
}

struct Slot {
    batch: Vec<usize>,
    epoch: u64,
    open_at: f64,
}

struct Inst {
    model: usize,
    nodes: Vec<NodeId>,
    pipeline: Option<ExecutionPipeline>,
    period_s: f64,
    slots: Vec<Slot>,
    scaled: bool,
    active: bool,
    retired: bool,
    switch_pending: bool,
}

impl Inst {
    fn busy(&self) -> bool {
        self.slots.iter().any(|s| !s.batch.is_empty())
    }
}

struct Req {
    rec: TraceRecord,
    model: usize,
    emitted: u32,
    done: bool,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    strategy: Strategy,
    models: Vec<ModelRt>,
    model_idx: HashMap<ModelId, usize>,
    nodes: Vec<NodeRt>,
    node_rank: Vec<usize>,
    insts: Vec<Inst>,
    reqs: Vec<Req>,
    tiers: TierState,
    heap: BinaryHeap<Queued>,
    seq: u64,
    log: Vec<SimEvent>,
    next_scale_id: u64,
    arrived: usize,
    completed: usize,
}

/// Block plan of each model: the configured count or the elbow choice.
fn block_plan(cfg: &SimConfig, m: &ModelSpec) -> Result<BlockPlan> {
    let b = match cfg.block_count {
        BlockCount::Fixed(b) => b,
        BlockCount::Auto => select_block_count(
            m,
            cfg.cluster.node_count as u64,
            cfg.cluster.step_fixed_overhead_s,
            cfg.cluster.nic_bps,
            cfg.elbow_threshold,
        )?,
    };
    partition_blocks(m, b)
}

fn validate(cfg: &SimConfig, trace: &[TraceRecord]) -> Result<Vec<ModelRt>> {
    cfg.cluster.validate()?;
    if cfg.k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    let p = &cfg.policy;
    if !(p.keep_alive_s >= 0.0 && p.threshold_hi >= 0.0) {
        return Err(Error::invalid("keep_alive_s and threshold_hi must be >= 0"));
    }
    let mut seen = HashMap::new();
    let mut models = Vec::new();
    for (i, m) in cfg.models.iter().enumerate() {
        m.validate()?;
        if seen.insert(m.model_id.clone(), i).is_some() {
            return Err(Error::invalid(format!("duplicate model id {}", m.model_id)));
        }
        let free = cfg.cluster.gpus_per_node.saturating_sub(m.gpus_per_replica);
        select_multi_gpu_strategy(m, cfg.cluster.gpus_per_node, free)?;
        let plan = block_plan(cfg, m)?;
        let buffers = Buffers {
            activation_bytes: cfg.cluster.activation_bytes,
            staging_bytes: plan.max_block_bytes(),
        };
        pack_layout(
            &plan,
            buffers,
            cfg.cluster.gpu_mem_bytes * m.gpus_per_replica as u64,
        )?;
        let b = plan.block_count();
        models.push(ModelRt {
            local_period_s: b as f64 * m.per_block_compute_ms / 1000.0,
            spec: m.clone(),
            plan,
            b,
            queue: VecDeque::new(),
            autoscale_pending: false,
        });
    }
    validate_trace(trace)?;
    for (i, r) in trace.iter().enumerate() {
        if !seen.contains_key(&r.model_id) {
            return Err(Error::TraceRow {
                row: i + 1,
                reason: format!("unknown model id `{}`", r.model_id),
            });
        }
    }
    let mut hot_nodes = std::collections::BTreeSet::new();
    for (label, list) in [("hot", &cfg.hot), ("memory", &cfg.memory)] {
        for (n, m) in list {
            if n.0 >= cfg.cluster.node_count {
                return Err(Error::invalid(format!(
                    "{label} placement on missing node {n}"
                )));
            }
            if !seen.contains_key(m) {
                return Err(Error::invalid(format!(
                    "{label} placement of unknown model {m}"
                )));
            }
            if label == "hot" && !hot_nodes.insert(*n) {
                return Err(Error::invalid(format!(
                    "node {n} is hot for more than one model"
                )));
            }
        }
    }
    Ok(models)
}

impl<'a> Sim<'a> {
    fn push(&mut self, time: f64, ev: Ev) {
        self.seq += 1;
        self.heap.push(Queued {
            time,
            rank: ev.rank(),
            seq: self.seq,
            ev,
        });
    }

    fn emit(&mut self, time_s: f64, payload: Payload) {
        self.log.push(SimEvent { time_s, payload });
    }

    fn allocated_gpus(&self) -> u32 {
        self.nodes.iter().filter(|n| n.model.is_some()).count() as u32
            * self.cfg.cluster.gpus_per_node
    }

    fn active_replicas(&self, m: usize) -> usize {
        self.nodes.iter().filter(|n| n.model == Some(m)).count()
    }

    fn prefill_s(&self, m: usize, tokens: u32) -> f64 {
        tokens as f64 * self.models[m].spec.prefill_ms_per_token / 1000.0
    }

    fn set_busy(&mut self, inst: usize) {
        for i in 0..self.insts[inst].nodes.len() {
            let n = self.insts[inst].nodes[i].0 as usize;
            self.nodes[n].idle_since = None;
            self.nodes[n].idle_epoch += 1;
        }
    }

    fn mark_idle(&mut self, inst: usize, now: f64) {
        if self.insts[inst].pipeline.is_some() || self.insts[inst].busy() {
            return;
        }
        let keep = self.cfg.policy.keep_alive_s;
        for i in 0..self.insts[inst].nodes.len() {
            let node = self.insts[inst].nodes[i];
            let n = &mut self.nodes[node.0 as usize];
            if n.loading || n.idle_since.is_some() {
                continue;
            }
            n.idle_since = Some(now);
            n.idle_epoch += 1;
            let epoch = n.idle_epoch;
            self.push(now + keep, Ev::ScaleInCheck { node, epoch });
        }
    }

    fn start_batch(&mut self, inst: usize, slot: usize, batch: Vec<usize>, at: f64) {
        let s = &mut self.insts[inst].slots[slot];
        s.batch = batch;
        s.epoch += 1;
        let epoch = s.epoch;
        self.set_busy(inst);
        self.push(at, Ev::Token { inst, slot, epoch });
    }

    fn dispatch(&mut self, m: usize, now: f64) {
        let bs = self.cfg.batch_size as usize;
        for i in 0..self.insts.len() {
            if self.models[m].queue.is_empty() {
                return;
            }
            let inst = &self.insts[i];
            if inst.model != m || !inst.active || inst.retired || inst.switch_pending {
                continue;
            }
            for s in 0..inst.slots.len() {
                let slot = &self.insts[i].slots[s];
                if !slot.batch.is_empty() || slot.open_at > now {
                    continue;
                }
                let q = &mut self.models[m].queue;
                let take = bs.min(q.len());
                if take == 0 {
                    return;
                }
                let batch: Vec<usize> = q.drain(..take).collect();
                let prompt = batch
                    .iter()
                    .map(|&r| self.reqs[r].rec.prompt_tokens)
                    .max()
                    .unwrap_or(0);
                let at = now + self.prefill_s(m, prompt);
                self.start_batch(i, s, batch, at);
            }
        }
    }

    fn create_local(&mut self, node: NodeId, m: usize, now: f64, scaled: bool) -> usize {
        let c = &self.cfg.cluster;
        let spec = &self.models[m].spec;
        let replicas = (c.gpus_per_node / spec.gpus_per_replica).max(1) as usize;
        // extra local replicas copy over the intra-node link one block behind
        let lag = if replicas > 1 {
            self.models[m].plan.max_block_bytes() as f64 / c.nvlink_bps
        } else {
            0.0
        };
        let slots = (0..replicas)
            .map(|r| Slot {
                batch: Vec::new(),
                epoch: 0,
                open_at: if r == 0 { now } else { now + lag },
            })
            .collect();
        let idx = self.insts.len();
        self.insts.push(Inst {
            model: m,
            nodes: vec![node],
            pipeline: None,
            period_s: self.models[m].local_period_s,
            slots,
            scaled,
            active: true,
            retired: false,
            switch_pending: false,
        });
        self.nodes[node.0 as usize].instance = Some(idx);
        if lag > 0.0 {
            self.push(now + lag, Ev::Dispatch(m));
        }
        idx
    }

    fn on_arrival(&mut self, r: usize, now: f64) {
        let rec = &self.reqs[r].rec;
        let m = self.reqs[r].model;
        let payload = Payload::RequestArrival {
            request: r as u64,
            model: rec.model_id.clone(),
            prompt_tokens: rec.prompt_tokens,
            output_tokens: rec.output_tokens,
        };
        self.emit(now, payload);
        self.arrived += 1;
        self.models[m].queue.push_back(r);
        self.dispatch(m, now);
        if !self.models[m].autoscale_pending {
            self.models[m].autoscale_pending = true;
            self.push(now, Ev::Autoscale(m));
        }
    }

    fn on_autoscale(&mut self, m: usize, now: f64) -> Result<()> {
        self.models[m].autoscale_pending = false;
        let q = self.models[m].queue.len();
        let d = autoscale(&self.cfg.policy, q, self.active_replicas(m), &[]);
        if d.scale_out > 0 {
            self.scale_out(m, d.scale_out as usize, now)?;
        }
        Ok(())
    }

    fn scale_out(&mut self, m: usize, want: usize, now: f64) -> Result<()> {
        let id = self.models[m].spec.model_id.clone();
        let mut free: Vec<usize> = (0..self.nodes.len())
            .filter(|&n| self.nodes[n].model.is_none())
            .collect();
        free.sort_by_key(|&n| {
            let warm = self.tiers.tier(NodeId(n as u32), &id) == Tier::Memory;
            (!warm, self.node_rank[n])
        });
        free.truncate(want);
        if free.is_empty() {
            return Ok(());
        }
        let demand: Vec<NodeId> = free.iter().map(|&n| NodeId(n as u32)).collect();
        let lp = match plan_load(
            self.strategy,
            &self.models[m].spec,
            &self.models[m].plan,
            &demand,
            &self.tiers,
            &self.cfg.cluster,
            self.cfg.k,
        ) {
            Ok(lp) => lp,
            // no copy anywhere: the queue waits
            Err(Error::UnsatisfiableScaling(_)) => return Ok(()),
            Err(e) => return Err(e),
        };
        for &n in &free {
            let node = &mut self.nodes[n];
            node.model = Some(m);
            node.loading = true;
            node.instance = None;
            node.idle_since = None;
            node.idle_epoch += 1;
        }
        let scale_id = self.next_scale_id;
        self.next_scale_id += 1;
        let payload = Payload::ScaleOut {
            scale_id,
            model: id.clone(),
            nodes: demand.clone(),
            allocated_gpus: self.allocated_gpus(),
            initial: false,
        };
        self.emit(now, payload);

        for (s, &end) in lp.step_ends.iter().enumerate() {
            let p = Payload::TransferStepDone {
                scale_id,
                model: id.clone(),
                step: s,
            };
            self.push(now + end, Ev::Log(p));
        }
        for c in &lp.chunks {
            let p = Payload::LoadChunkDone {
                scale_id,
                model: id.clone(),
                node: c.node,
                block: c.block,
                path: c.path,
            };
            self.push(now + c.offset_s, Ev::Log(p));
        }
        for &(src, until) in &lp.sources {
            let n = &mut self.nodes[src.0 as usize];
            n.pinned_until = n.pinned_until.max(now + until);
        }
        for (&node, &t) in &lp.node_full {
            self.push(now + t, Ev::NodeFull(node));
        }
        for (p, at) in lp.pipelines {
            let tick = p.max_stage_blocks() as f64 * self.models[m].spec.per_block_compute_ms
                / 1000.0
                + self.cfg.cluster.activation_bytes as f64 / self.cfg.cluster.nic_bps;
            let stages = p.stages.len();
            let idx = self.insts.len();
            let nodes: Vec<NodeId> = p.nodes().collect();
            for n in &nodes {
                self.nodes[n.0 as usize].instance = Some(idx);
            }
            self.insts.push(Inst {
                model: m,
                nodes,
                pipeline: Some(p),
                period_s: stages as f64 * tick,
                slots: (0..stages)
                    .map(|_| Slot {
                        batch: Vec::new(),
                        epoch: 0,
                        open_at: now + at,
                    })
                    .collect(),
                scaled: true,
                active: false,
                retired: false,
                switch_pending: false,
            });
            self.push(now + at, Ev::PipelineActive(idx));
        }
        Ok(())
    }

    fn on_log(&mut self, payload: Payload, now: f64) {
        if let Payload::LoadChunkDone {
            ref model,
            node,
            block,
            ..
        } = payload
        {
            let b = self.models[self.model_idx[model]].b;
            self.tiers.add_gpu_block(node, model, b, block);
        }
        self.emit(now, payload);
    }

    fn on_node_full(&mut self, node: NodeId, now: f64) {
        let n = node.0 as usize;
        let Some(m) = self.nodes[n].model else { return };
        if !self.nodes[n].loading {
            return;
        }
        self.nodes[n].loading = false;
        let id = self.models[m].spec.model_id.clone();
        self.tiers.set_gpu_full(node, &id, self.models[m].b, now);
        match self.nodes[n].instance {
            Some(p) if !self.insts[p].retired && self.insts[p].pipeline.is_some() => {
                let all_full = self.insts[p]
                    .nodes
                    .iter()
                    .all(|x| !self.nodes[x.0 as usize].loading);
                if all_full {
                    if self.insts[p].busy() {
                        self.insts[p].switch_pending = true;
                    } else {
                        self.switch_now(p, now);
                    }
                }
            }
            _ => {
                let i = self.create_local(node, m, now, true);
                self.dispatch(m, now);
                self.mark_idle(i, now);
            }
        }
    }

    /// Hands a pipeline's requests to its members as local replicas.
    fn switch_now(&mut self, p: usize, now: f64) {
        let m = self.insts[p].model;
        let mut incomplete = Vec::new();
        let mut restart = Vec::new();
        for s in &mut self.insts[p].slots {
            for r in s.batch.drain(..) {
                if self.reqs[r].emitted == 0 {
                    restart.push(r);
                } else {
                    incomplete.push((r as u64, self.reqs[r].emitted));
                }
            }
            s.epoch += 1;
        }
        self.insts[p].retired = true;
        for r in restart.into_iter().rev() {
            self.models[m].queue.push_front(r);
        }
        let pipeline = self.insts[p]
            .pipeline
            .clone()
            .expect("switching a pipeline");
        let plan = plan_mode_switch(
            &pipeline,
            &incomplete,
            self.models[m].spec.prefill_ms_per_token,
        );
        let payload = Payload::ModeSwitch {
            instance: p as u64,
            model: self.models[m].spec.model_id.clone(),
            requests: plan.assignments.len(),
            recompute_s: plan.total_recompute_s(),
        };
        self.emit(now, payload);

        let period = self.models[m].local_period_s;
        let mut created = Vec::new();
        for node in pipeline.nodes() {
            let i = self.create_local(node, m, now, true);
            let mine: Vec<_> = plan.assignments.iter().filter(|a| a.node == node).collect();
            if !mine.is_empty() {
                let delay = mine.iter().map(|a| a.recompute_cost_s).fold(0.0, f64::max);
                let batch = mine.iter().map(|a| a.request_id as usize).collect();
                self.start_batch(i, 0, batch, now + delay + period);
            }
            created.push(i);
        }
        self.dispatch(m, now);
        for i in created {
            self.mark_idle(i, now);
        }
    }

    fn on_token(&mut self, i: usize, slot: usize, epoch: u64, now: f64) {
        {
            let inst = &self.insts[i];
            if inst.retired || inst.slots[slot].epoch != epoch || inst.slots[slot].batch.is_empty()
            {
                return;
            }
        }
        let m = self.insts[i].model;
        if let Some(p) = &self.insts[i].pipeline {
            let ticks: Vec<Payload> = p
                .stages
                .iter()
                .enumerate()
                .map(|(s, st)| Payload::StageTickDone {
                    instance: i as u64,
                    stage: s,
                    node: st.node,
                    block_lo: st.blocks.start,
                    block_hi: st.blocks.end - 1,
                })
                .collect();
            for t in ticks {
                self.emit(now, t);
            }
        }
        let batch = std::mem::take(&mut self.insts[i].slots[slot].batch);
        let scaled = self.insts[i].scaled;
        let mut remaining = Vec::new();
        for r in batch {
            let req = &mut self.reqs[r];
            req.emitted += 1;
            let index = req.emitted - 1;
            let finished = req.emitted >= req.rec.output_tokens;
            if finished {
                req.done = true;
            }
            let model = req.rec.model_id.clone();
            let tokens = req.emitted;
            self.emit(
                now,
                Payload::TokenEmitted {
                    request: r as u64,
                    model: model.clone(),
                    instance: i as u64,
                    index,
                    scaled,
                },
            );
            if finished {
                self.completed += 1;
                self.emit(
                    now,
                    Payload::RequestDone {
                        request: r as u64,
                        model,
                        tokens,
                    },
                );
            } else {
                remaining.push(r);
            }
        }
        for n in self.insts[i].nodes.clone() {
            let id = self.models[m].spec.model_id.clone();
            self.tiers.touch(n, &id, now);
        }
        if self.insts[i].switch_pending {
            self.insts[i].slots[slot].batch = remaining;
            self.switch_now(i, now);
            return;
        }
        if !remaining.is_empty() {
            self.insts[i].slots[slot].batch = remaining;
            let at = now + self.insts[i].period_s;
            self.push(
                at,
                Ev::Token {
                    inst: i,
                    slot,
                    epoch,
                },
            );
        } else {
            self.insts[i].slots[slot].epoch += 1;
            self.dispatch(m, now);
            self.mark_idle(i, now);
        }
    }

    fn on_scale_in_check(&mut self, node: NodeId, epoch: u64, now: f64) {
        let n = node.0 as usize;
        let st = &self.nodes[n];
        let (Some(m), Some(since)) = (st.model, st.idle_since) else {
            return;
        };
        if st.idle_epoch != epoch || st.loading {
            return;
        }
        if st.pinned_until > now {
            let at = st.pinned_until;
            self.push(at, Ev::ScaleInCheck { node, epoch });
            return;
        }
        let q = self.models[m].queue.len();
        let d = autoscale(
            &self.cfg.policy,
            q,
            self.active_replicas(m),
            &[(node, now - since)],
        );
        if d.scale_in.contains(&node) {
            self.release(node, m, now);
        }
    }

    fn release(&mut self, node: NodeId, m: usize, now: f64) {
        let n = node.0 as usize;
        if let Some(i) = self.nodes[n].instance.take() {
            self.insts[i].retired = true;
        }
        let id = self.models[m].spec.model_id.clone();
        self.tiers.drop_gpu(node, &id);
        if self.cfg.write_back {
            self.tiers.entry(node, &id, self.models[m].b).in_memory = true;
        }
        self.emit(
            now,
            Payload::Eviction {
                node,
                model: id.clone(),
                tier: Tier::Gpu,
            },
        );
        let st = &mut self.nodes[n];
        st.model = None;
        st.idle_since = None;
        st.idle_epoch += 1;
        let allocated_gpus = self.allocated_gpus();
        self.emit(
            now,
            Payload::ScaleIn {
                model: id,
                node,
                allocated_gpus,
            },
        );
        for other in 0..self.models.len() {
            if !self.models[other].queue.is_empty() && !self.models[other].autoscale_pending {
                self.models[other].autoscale_pending = true;
                self.push(now, Ev::Autoscale(other));
            }
        }
    }

    fn seed_initial_state(&mut self) {
        let cfg = self.cfg;
        for mi in 0..self.models.len() {
            let (id, b) = (self.models[mi].spec.model_id.clone(), self.models[mi].b);
            if cfg.ssd_everywhere {
                for n in 0..cfg.cluster.node_count {
                    self.tiers.entry(NodeId(n), &id, b).on_ssd = true;
                }
            }
        }
        for (n, m) in &cfg.memory {
            let b = self.models[self.model_idx[m]].b;
            let r = self.tiers.entry(*n, m, b);
            r.in_memory = true;
            r.pinned = true;
        }
        let mut by_model: Vec<Vec<NodeId>> = vec![Vec::new(); self.models.len()];
        for (n, m) in &cfg.hot {
            by_model[self.model_idx[m]].push(*n);
        }
        let mut locals = Vec::new();
        for (mi, nodes) in by_model.into_iter().enumerate() {
            if nodes.is_empty() {
                continue;
            }
            let (id, b) = (self.models[mi].spec.model_id.clone(), self.models[mi].b);
            for &n in &nodes {
                self.tiers.set_gpu_full(n, &id, b, 0.0);
                self.nodes[n.0 as usize].model = Some(mi);
                locals.push(self.create_local(n, mi, 0.0, false));
            }
            let scale_id = self.next_scale_id;
            self.next_scale_id += 1;
            let payload = Payload::ScaleOut {
                scale_id,
                model: id,
                nodes,
                allocated_gpus: self.allocated_gpus(),
                initial: true,
            };
            self.emit(0.0, payload);
        }
        for i in locals {
            self.mark_idle(i, 0.0);
        }
    }
}

/// Simulates `trace` on the configured cluster under `strategy`.
pub fn run(
    cfg: &SimConfig,
    strategy: Strategy,
    trace: &[TraceRecord],
    seed: u64,
) -> Result<SimOutput> {
    let models = validate(cfg, trace)?;
    let model_idx: HashMap<ModelId, usize> = models
        .iter()
        .enumerate()
        .map(|(i, m)| (m.spec.model_id.clone(), i))
        .collect();
    let n = cfg.cluster.node_count as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut node_rank = vec![0; n];
    for (rank, &node) in order.iter().enumerate() {
        node_rank[node] = rank;
    }
    let reqs = trace
        .iter()
        .map(|r| Req {
            rec: r.clone(),
            model: model_idx[&r.model_id],
            emitted: 0,
            done: false,
        })
        .collect();

    let mut sim = Sim {
        cfg,
        strategy,
        models,
        model_idx,
        nodes: (0..n).map(|_| NodeRt::default()).collect(),
        node_rank,
        insts: Vec::new(),
        reqs,
        tiers: TierState::new(),
        heap: BinaryHeap::new(),
        seq: 0,
        log: Vec::new(),
        next_scale_id: 0,
        arrived: 0,
        completed: 0,
    };
    sim.seed_initial_state();
    for (i, r) in trace.iter().enumerate() {
        sim.push(r.arrival_s, Ev::Arrival(i));
    }

    let mut now = 0.0f64;
    while let Some(q) = sim.heap.pop() {
        if cfg.horizon_s.is_some_and(|h| q.time > h) {
            now = cfg.horizon_s.unwrap_or(now);
            break;
        }
        now = q.time;
        match q.ev {
            Ev::Arrival(r) => sim.on_arrival(r, now),
            Ev::Autoscale(m) => sim.on_autoscale(m, now)?,
            Ev::Log(p) => sim.on_log(p, now),
            Ev::NodeFull(node) => sim.on_node_full(node, now),
            Ev::PipelineActive(i) => {
                if !sim.insts[i].retired {
                    sim.insts[i].active = true;
                    let m = sim.insts[i].model;
                    sim.dispatch(m, now);
                }
            }
            Ev::Dispatch(m) => sim.dispatch(m, now),
            Ev::Token { inst, slot, epoch } => sim.on_token(inst, slot, epoch, now),
            Ev::ScaleInCheck { node, epoch } => sim.on_scale_in_check(node, epoch, now),
        }
    }
    debug_assert!(sim.reqs.iter().filter(|r| r.done).count() == sim.completed);
    let payload = Payload::Horizon {
        in_flight: sim.arrived - sim.completed,
        allocated_gpus: sim.allocated_gpus(),
    };
    sim.emit(now, payload);

    let report = aggregate(&sim.log, strategy.as_str(), AggregateOptions::default())?;
    Ok(SimOutput {
        events: sim.log,
        report,
    })
}
