//! Property tests for the invariants each module promises.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use pipecast::modelmgr::{evict, miss_ratio, pack_layout, Buffers, TierCapacity, TierState};
use pipecast::multicast::{
    assign_orders, compose_schedule, k_way_orders, partition_blocks, partition_subgroups,
    ModelSpec, MulticastSchedule, StepTimeModel,
};
use pipecast::pipeline::{generate_pipelines, plan_2d_schedule, plan_mode_switch, plan_pipelines};
use pipecast::simengine::{
    run, BlockCount, ClusterSpec, Payload, SimConfig, SimEvent, Strategy as Scaling,
};
use pipecast::workload::{aggregate, nearest_rank, single_burst, AggregateOptions, TraceRecord};
use pipecast::{BlockId, ModelId, NodeId};
use proptest::prelude::*;

fn model(layers: u32, size: u64) -> ModelSpec {
    ModelSpec {
        model_id: ModelId::from("m"),
        size_bytes: size,
        layer_count: layers,
        gpus_per_replica: 1,
        per_block_compute_ms: 1.5,
        prefill_ms_per_token: 0.2,
    }
}

fn ids(r: std::ops::Range<u32>) -> Vec<NodeId> {
    r.map(NodeId).collect()
}

fn schedule(n: u32, k: u32, b: u32) -> MulticastSchedule {
    let nodes = ids(0..n);
    let mut g = partition_subgroups(&nodes, &nodes[..k as usize]).unwrap();
    assign_orders(&mut g, b).unwrap();
    let plan = partition_blocks(&model(64, 1 << 30), b).unwrap();
    let step = StepTimeModel {
        fixed_overhead_s: 0.0,
        bytes_per_second: 50e9,
    };
    compose_schedule(&g, &plan, step).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn orders_are_permutations_led_by_natural(b in 1u32..=64, k in 1u32..=8) {
        prop_assume!(k <= b);
        let orders = k_way_orders(b, k).unwrap();
        prop_assert_eq!(orders.len(), k as usize);
        let natural: Vec<BlockId> = (0..b).map(BlockId).collect();
        prop_assert_eq!(&orders[0], &natural);
        for o in &orders {
            let mut s = o.clone();
            s.sort();
            prop_assert_eq!(&s, &natural);
        }
    }

    #[test]
    fn order_heads_tile_the_model(k in 1u32..=8, per in 1u32..=8) {
        let b = k * per;
        let orders = k_way_orders(b, k).unwrap();
        let mut heads: Vec<BlockId> = orders.iter().flat_map(|o| o[..per as usize].to_vec()).collect();
        heads.sort();
        prop_assert_eq!(heads, (0..b).map(BlockId).collect::<Vec<_>>());
    }

    #[test]
    fn schedules_are_reproducible(n in 2u32..=16, k in 1u32..=4, b in 1u32..=32) {
        prop_assume!(k < n);
        prop_assert_eq!(schedule(n, k, b).to_text(), schedule(n, k, b).to_text());
    }

    #[test]
    fn pipelines_partition_nodes(sizes in prop::collection::vec(0usize..6, 1..5)) {
        let mut next = 0u32;
        let groups: Vec<Vec<NodeId>> = sizes
            .iter()
            .map(|&s| (0..s).map(|_| { next += 1; NodeId(next) }).collect())
            .collect();
        let pipes = generate_pipelines(&groups).unwrap();
        let mut seen: Vec<NodeId> = pipes.iter().flatten().copied().collect();
        seen.sort();
        let mut all: Vec<NodeId> = groups.iter().flatten().copied().collect();
        all.sort();
        prop_assert_eq!(seen, all);
        // a lone group is one pipeline with standby nodes
        if sizes.len() > 1 && sizes.iter().all(|&s| s == sizes[0]) {
            prop_assert_eq!(pipes.len(), sizes[0]);
        }
    }

    #[test]
    fn balanced_pipelines_cover_blocks_once(k in 1u32..=4, per_group in 1u32..=4, per in 1u32..=6) {
        let (n, b) = (k * (per_group + 1), k * per);
        let (pipes, _) = plan_pipelines(&schedule(n, k, b)).unwrap();
        prop_assert!(!pipes.is_empty());
        for p in &pipes {
            let covered: Vec<u32> = p.stages.iter().flat_map(|s| s.blocks.clone()).collect();
            prop_assert_eq!(covered, (0..b).collect::<Vec<_>>());
        }
        let first = pipes[0].steps_until_active();
        prop_assert!(pipes.iter().all(|p| p.steps_until_active() >= first));
    }

    #[test]
    fn first_pipeline_never_trails(n in 2u32..=16, k in 1u32..=4, b in 1u32..=32) {
        prop_assume!(k < n);
        let (pipes, _) = plan_pipelines(&schedule(n, k, b)).unwrap();
        if let Some(first) = pipes.first() {
            prop_assert!(pipes.iter().all(|p| p.steps_until_active() >= first.steps_until_active()));
        }
    }

    #[test]
    fn every_batch_is_somewhere_each_tick(stages in 1usize..=8, batches in 0usize..=12, ticks in 1usize..=40) {
        let t = plan_2d_schedule(stages, batches, ticks);
        for tick in 0..ticks {
            let mut seen: Vec<usize> = t.busy[tick].iter().flatten().copied().collect();
            seen.extend(&t.waiting[tick]);
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..batches).collect::<Vec<_>>(), "tick {}", tick);
        }
    }

    #[test]
    fn mode_switch_balances_requests(n in 2u32..=12, b in 2u32..=16, reqs in 0usize..=60) {
        let (pipes, _) = plan_pipelines(&schedule(n, 1, b)).unwrap();
        let p = &pipes[0];
        let incomplete: Vec<(u64, u32)> = (0..reqs as u64).map(|i| (i, (i % 7) as u32)).collect();
        let plan = plan_mode_switch(p, &incomplete, 0.2);
        let mut per: BTreeMap<NodeId, usize> = p.nodes().map(|n| (n, 0)).collect();
        for a in &plan.assignments {
            *per.get_mut(&a.node).unwrap() += 1;
        }
        let (lo, hi) = (per.values().min().unwrap(), per.values().max().unwrap());
        prop_assert!(hi - lo <= 1);
        prop_assert_eq!(plan.assignments.len(), reqs);
    }

    #[test]
    fn layout_regions_partition_the_image(size in 1u64..1_000_000_000, layers in 1u32..=80, b in 1u32..=80) {
        prop_assume!(b <= layers);
        let plan = partition_blocks(&model(layers, size), b).unwrap();
        let l = pack_layout(&plan, Buffers::default(), u64::MAX).unwrap();
        let mut at = 0;
        for (i, r) in l.regions.iter().enumerate() {
            prop_assert_eq!(r.block, BlockId(i as u32));
            prop_assert_eq!(r.offset, at);
            at += r.len;
        }
        prop_assert_eq!(at, size);
    }

    #[test]
    fn load_mix_sums_to_one(
        seq in prop::collection::vec((0u8..6, 0.0f64..30.0), 1..80),
        gpu in 1usize..3,
        mem in 1usize..5,
        keep in 1.0f64..60.0,
    ) {
        let mut t = 0.0;
        let acc: Vec<(f64, ModelId)> = seq
            .iter()
            .map(|&(m, gap)| { t += gap; (t, ModelId::from(format!("m{m}").as_str())) })
            .collect();
        let mix = miss_ratio(&acc, TierCapacity { gpu_models: gpu, memory_models: mem }, keep);
        prop_assert!(mix.hot >= 0.0 && mix.memory >= 0.0 && mix.ssd >= 0.0);
        prop_assert!((mix.hot + mix.memory + mix.ssd - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pinned_copies_survive_eviction(n_models in 1u32..8, pinned_mask in 0u32..256, now in 0.0f64..100.0) {
        let mut tiers = TierState::new();
        for i in 0..n_models {
            let m = ModelId::from(format!("m{i}").as_str());
            tiers.set_gpu_full(NodeId(0), &m, 2, 0.0);
            tiers.entry(NodeId(0), &m, 2).in_memory = true;
            tiers.set_pinned(NodeId(0), &m, pinned_mask & (1 << i) != 0);
        }
        let cap = TierCapacity { gpu_models: 0, memory_models: 0 };
        for e in evict(&tiers, now, 0.0, cap) {
            prop_assert!(!tiers.get(e.node, &e.model).unwrap().pinned);
        }
    }

    #[test]
    fn constant_samples_have_constant_percentiles(x in 0.0f64..100.0, n in 1usize..200, p in 0.0f64..=100.0) {
        prop_assert_eq!(nearest_rank(&vec![x; n], p), Some(x));
    }
}

fn sim_config(nodes: u32, k: u32, b: u32, hot: u32) -> SimConfig {
    let cluster = ClusterSpec {
        node_count: nodes,
        ..ClusterSpec::default()
    };
    let m = model(40, 26_000_000_000);
    let mut c = SimConfig::new(cluster, vec![m.clone()]);
    c.k = k;
    c.block_count = BlockCount::Fixed(b);
    c.hot = (0..hot).map(|n| (NodeId(n), m.model_id.clone())).collect();
    c
}

fn trace_strategy() -> impl Strategy<Value = Vec<TraceRecord>> {
    prop::collection::vec((0.0f64..20.0, 1u32..300, 1u32..40), 0..60).prop_map(|rows| {
        let mut t: Vec<TraceRecord> = rows
            .into_iter()
            .map(|(a, p, o)| TraceRecord {
                arrival_s: a,
                model_id: ModelId::from("m"),
                prompt_tokens: p,
                output_tokens: o,
            })
            .collect();
        t.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s));
        t
    })
}

fn scaling() -> impl Strategy<Value = Scaling> {
    prop::sample::select(Scaling::ALL.to_vec())
}

/// Right-continuous step integral over the allocation samples in the log.
fn integrate_log(events: &[SimEvent]) -> f64 {
    let mut samples = Vec::new();
    for e in events {
        match &e.payload {
            Payload::ScaleOut { allocated_gpus, .. }
            | Payload::ScaleIn { allocated_gpus, .. }
            | Payload::Horizon { allocated_gpus, .. } => samples.push((e.time_s, *allocated_gpus)),
            _ => {}
        }
    }
    samples
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * w[0].1 as f64)
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn runs_are_deterministic(trace in trace_strategy(), s in scaling(), seed in 0u64..4) {
        let c = sim_config(6, 1, 8, 1);
        let a = run(&c, s, &trace, seed).unwrap();
        let b = run(&c, s, &trace, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn requests_and_tokens_are_conserved(trace in trace_strategy(), s in scaling(), k in 1u32..=3) {
        let c = sim_config(6, k, 8, k);
        let out = run(&c, s, &trace, 0).unwrap();
        let mut want: HashMap<u64, u32> = HashMap::new();
        let mut tokens: HashMap<u64, u32> = HashMap::new();
        let mut done: HashMap<u64, u32> = HashMap::new();
        let mut in_flight = None;
        for e in &out.events {
            match &e.payload {
                Payload::RequestArrival { request, output_tokens, .. } => {
                    want.insert(*request, *output_tokens);
                }
                Payload::TokenEmitted { request, .. } => *tokens.entry(*request).or_default() += 1,
                Payload::RequestDone { request, tokens, .. } => {
                    prop_assert!(done.insert(*request, *tokens).is_none());
                }
                Payload::Horizon { in_flight: f, .. } => in_flight = Some(*f),
                _ => {}
            }
        }
        prop_assert_eq!(want.len(), trace.len());
        prop_assert_eq!(done.len() + in_flight.unwrap(), want.len());
        for (r, n) in &done {
            prop_assert_eq!(*n, want[r]);
            prop_assert_eq!(tokens[r], want[r]);
        }
    }

    #[test]
    fn stage_ticks_follow_residency(trace in trace_strategy(), s in scaling(), k in 1u32..=3) {
        let b = 8;
        let c = sim_config(6, k, b, k);
        let out = run(&c, s, &trace, 0).unwrap();
        let mut resident: BTreeSet<(NodeId, u32)> = BTreeSet::new();
        for e in &out.events {
            match &e.payload {
                Payload::ScaleOut { initial: true, nodes, .. } => {
                    for n in nodes {
                        resident.extend((0..b).map(|blk| (*n, blk)));
                    }
                }
                Payload::LoadChunkDone { node, block, .. } => {
                    resident.insert((*node, block.0));
                }
                Payload::ScaleIn { node, .. } => resident.retain(|(n, _)| n != node),
                Payload::StageTickDone { node, block_lo, block_hi, .. } => {
                    for blk in *block_lo..=*block_hi {
                        prop_assert!(resident.contains(&(*node, blk)), "node {} block {} at {}", node, blk, e.time_s);
                    }
                }
                _ => {}
            }
        }
    }

    #[test]
    fn gpu_seconds_match_reintegration(trace in trace_strategy(), s in scaling()) {
        let out = run(&sim_config(6, 1, 8, 1), s, &trace, 0).unwrap();
        let brute = integrate_log(&out.events);
        prop_assert!((out.report.gpu_seconds - brute).abs() <= 1e-9 * brute.max(1.0));
        prop_assert!(out.report.gpu_seconds >= 0.0);
    }

    #[test]
    fn aggregation_is_idempotent(trace in trace_strategy(), s in scaling()) {
        let out = run(&sim_config(6, 1, 8, 1), s, &trace, 0).unwrap();
        let opts = AggregateOptions::default();
        let a = aggregate(&out.events, "x", opts).unwrap();
        prop_assert_eq!(&a, &aggregate(&out.events, "x", opts).unwrap());
        let started = a.requests.iter().filter(|r| r.ttft_s.is_some()).count();
        prop_assert_eq!(a.ttft_samples.len(), started);
        if let Some(p) = a.ttft {
            prop_assert!(p.p50 <= p.p90 && p.p90 <= p.p99);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cold_burst_ordering(count in 8usize..60, prompt in 16u32..512, output in 8u32..96, nodes in 4u32..=12) {
        let c = sim_config(nodes, 1, 16, 1);
        let trace = single_burst(count, 0.0, &ModelId::from("m"), prompt, output);
        // scaled capacity that never serves counts as infinitely late
        let ttfs = |s: Scaling| {
            run(&c, s, &trace, 0).unwrap().report.time_to_first_served_s.unwrap_or(f64::INFINITY)
        };
        let ideal = ttfs(Scaling::Ideal);
        let lambda = ttfs(Scaling::LambdaScale);
        let tree = ttfs(Scaling::BinaryTree);
        let bcast = ttfs(Scaling::BroadcastGroups);
        let ssd = ttfs(Scaling::SsdOnly);
        prop_assert!(ideal.is_finite() && ideal <= lambda);
        prop_assert!(lambda <= tree && lambda <= bcast);
        prop_assert!(tree <= ssd && bcast <= ssd);
    }
}
