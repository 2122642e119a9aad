//! The `pipecast` command line: `plan`, `simulate`, `sweep` and `report`.
//!
//! Every command writes only under its output directory. Exit status is 0
//! on success, 1 for configuration problems and 2 for runtime failures.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::multicast::{
    assign_orders, compose_schedule, partition_blocks, partition_subgroups, select_block_count,
    BlockPlan, ModelSpec, MulticastSchedule, StepTimeModel,
};
use crate::pipeline::{pipelines_to_text, plan_pipelines, ExecutionPipeline};
use crate::simengine::{events_to_text, parse_event_log, run, BlockCount, Strategy};
use crate::workload::{aggregate, write_trace, AggregateOptions, MetricsReport};
use crate::{Error, Result};

pub use config::{
    parse_block_count, BurstTrace, Placement, PlanSection, RunConfig, SyntheticTrace, TraceFile,
};

#[derive(Debug, Parser)]
#[command(
    name = "pipecast",
    version,
    about = "Multicast planning and scaling simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the multicast schedule and execution pipelines for one scale event.
    Plan(Common),
    /// Replay the trace under each strategy.
    Simulate(Common),
    /// Repeat `simulate` over values of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `<axis>=<v1,v2,...>` with axis one of b, k, block_overhead.
        #[arg(long)]
        sweep: String,
    },
    /// Re-aggregate event logs found under `--out`.
    Report {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; falls back to `out` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated strategy ids.
    #[arg(long)]
    pub strategy: Option<String>,
}

/// Exit status for an error: configuration problems are 1, the rest 2.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. }
        | Error::TraceRow { .. }
        | Error::Validation(_)
        | Error::InvalidArgument(_)
        | Error::Unsupported(_)
        | Error::Capacity { .. } => 1,
        Error::Io { .. }
        | Error::IncompleteLog(_)
        | Error::UnsatisfiableScaling(_)
        | Error::ScheduleInvalid { .. } => 2,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status. Diagnostics go to stderr.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Plan(c) => {
            let (cfg, out) = resolve(&c)?;
            cmd_plan(&cfg, &out).map(|_| ())
        }
        Command::Simulate(c) => {
            let (cfg, out) = resolve(&c)?;
            let strategies = strategies(&c, &cfg)?;
            let seed = c.seed.unwrap_or(cfg.seed);
            cmd_simulate(&cfg, &out, &strategies, seed).map(|_| ())
        }
        Command::Sweep { common, sweep } => {
            let (cfg, out) = resolve(&common)?;
            let strategies = strategies(&common, &cfg)?;
            let seed = common.seed.unwrap_or(cfg.seed);
            let spec = SweepSpec::from_str(&sweep)?;
            cmd_sweep(&cfg, &out, &spec, &strategies, seed).map(|_| ())
        }
        Command::Report { config, out } => {
            let window = match config {
                Some(p) => RunConfig::load(&p)?.throughput_window_s,
                None => AggregateOptions::default().window_s,
            };
            cmd_report(&out, window).map(|_| ())
        }
    }
}

fn resolve(c: &Common) -> Result<(RunConfig, PathBuf)> {
    let cfg = RunConfig::load(&c.config)?;
    let out = c
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::config("out", "pass --out or set `out` in the config"))?;
    Ok((cfg, out))
}

fn strategies(c: &Common, cfg: &RunConfig) -> Result<Vec<Strategy>> {
    match &c.strategy {
        None => Ok(cfg.strategies.clone()),
        Some(list) => parse_strategies(list),
    }
}

/// Comma-separated strategy ids, duplicates dropped.
pub fn parse_strategies(list: &str) -> Result<Vec<Strategy>> {
    let mut out = Vec::new();
    for s in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let st = Strategy::from_str(s).map_err(|e| Error::config("--strategy", e.to_string()))?;
        if !out.contains(&st) {
            out.push(st);
        }
    }
    if out.is_empty() {
        return Err(Error::config("--strategy", "no strategy given"));
    }
    Ok(out)
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.9}"))
}

/// Block count after resolving `auto` for a group of `n_nodes`.
pub fn resolve_block_count(cfg: &RunConfig, model: &ModelSpec, n_nodes: u64) -> Result<u32> {
    match cfg.b {
        BlockCount::Fixed(b) => Ok(b),
        BlockCount::Auto => select_block_count(
            model,
            n_nodes,
            cfg.cluster.step_fixed_overhead_s,
            cfg.cluster.nic_bps,
            cfg.elbow_threshold,
        ),
    }
}

/// Result of `plan`. `schedule` is `None` for a single-node group, which
/// needs no transfer.
#[derive(Debug, Clone)]
pub struct PlanOutput {
    pub block_plan: BlockPlan,
    pub schedule: Option<MulticastSchedule>,
    pub pipelines: Vec<ExecutionPipeline>,
    pub summary: String,
}

/// Multicast from the first `k` plan nodes to the rest.
pub fn build_plan(cfg: &RunConfig) -> Result<PlanOutput> {
    let model = cfg.plan_model();
    let nodes = cfg.plan_nodes();
    let b = resolve_block_count(cfg, model, nodes.len() as u64)?;
    let block_plan = partition_blocks(model, b)?;
    let mut s = String::new();
    let _ = writeln!(s, "model={}", model.model_id);
    let _ = writeln!(s, "nodes={}", nodes.len());
    let _ = writeln!(s, "block_count={b}");
    if nodes.len() == 1 {
        let _ = writeln!(s, "hot_path=true");
        let _ = writeln!(
            s,
            "note=single node serves from its resident copy; no transfer"
        );
        let _ = writeln!(s, "step_count=0");
        let _ = writeln!(s, "predicted_multicast_s={:.9}", 0.0);
        return Ok(PlanOutput {
            block_plan,
            schedule: None,
            pipelines: Vec::new(),
            summary: s,
        });
    }
    let k = (cfg.k as usize).min(nodes.len() - 1);
    let sources = &nodes[..k];
    let mut groups = partition_subgroups(&nodes, sources)?;
    assign_orders(&mut groups, b)?;
    let step_time = StepTimeModel {
        fixed_overhead_s: cfg.cluster.step_fixed_overhead_s,
        bytes_per_second: cfg.cluster.nic_bps,
    };
    let schedule = compose_schedule(&groups, &block_plan, step_time)?;
    let (pipelines, warnings) = plan_pipelines(&schedule)?;
    let ends = schedule.step_end_times();
    let first_active = pipelines.first().map(|p| match p.activation_step {
        Some(i) => ends[i],
        None => 0.0,
    });
    let _ = writeln!(s, "hot_path=false");
    let _ = writeln!(s, "sources={k}");
    let _ = writeln!(s, "subgroups={}", groups.len());
    let _ = writeln!(s, "step_count={}", schedule.step_count());
    let _ = writeln!(s, "step_time_s={:.9}", schedule.step_duration(0));
    let _ = writeln!(s, "predicted_multicast_s={:.9}", schedule.total_time());
    let _ = writeln!(s, "pipelines={}", pipelines.len());
    let _ = writeln!(s, "first_pipeline_activation_s={}", fmt_opt(first_active));
    for w in &warnings {
        let _ = writeln!(s, "warning=pipeline {}: {}", w.pipeline_id, w.message);
    }
    Ok(PlanOutput {
        block_plan,
        schedule: Some(schedule),
        pipelines,
        summary: s,
    })
}

/// Writes `schedule.csv`, `subgroups.csv`, `pipelines.csv` and `summary.txt`.
pub fn cmd_plan(cfg: &RunConfig, out: &Path) -> Result<PlanOutput> {
    let plan = build_plan(cfg)?;
    let mut sched = String::from("step,sender,receiver,block_id\n");
    let mut groups = String::from("group_id,source,members,transfer_order\n");
    if let Some(s) = &plan.schedule {
        sched.push_str(&s.to_text());
        for g in &s.subgroups {
            let join = |v: Vec<String>| v.join(";");
            let _ = writeln!(
                groups,
                "{},{},{},{}",
                g.group_id,
                g.source,
                join(g.members.iter().map(|n| n.to_string()).collect()),
                join(g.transfer_order.iter().map(|b| b.to_string()).collect()),
            );
        }
    }
    let mut pipes =
        String::from("pipeline_id,stage_index,node,device,block_lo,block_hi,activation_step\n");
    pipes.push_str(&pipelines_to_text(&plan.pipelines));
    write_file(&out.join("schedule.csv"), &sched)?;
    write_file(&out.join("subgroups.csv"), &groups)?;
    write_file(&out.join("pipelines.csv"), &pipes)?;
    write_file(&out.join("summary.txt"), &plan.summary)?;
    Ok(plan)
}

/// Runs every strategy on the same trace, one thread each, and writes
/// `<out>/<strategy>/` plus the combined `summary.csv` and `ttft_cdf.csv`.
pub fn cmd_simulate(
    cfg: &RunConfig,
    out: &Path,
    strategies: &[Strategy],
    seed: u64,
) -> Result<Vec<MetricsReport>> {
    let trace = cfg.build_trace(seed)?;
    let sim = cfg.sim_config();
    let opts = AggregateOptions {
        window_s: cfg.throughput_window_s,
    };
    let mut body = Vec::new();
    write_trace(&mut body, &trace)?;
    write_file(&out.join("trace.csv"), &String::from_utf8_lossy(&body))?;

    let results: Vec<Result<MetricsReport>> = std::thread::scope(|s| {
        let handles: Vec<_> = strategies
            .iter()
            .map(|&st| {
                let (sim, trace) = (&sim, &trace);
                s.spawn(move || -> Result<MetricsReport> {
                    let o = run(sim, st, trace, seed)?;
                    let report = aggregate(&o.events, st.as_str(), opts)?;
                    let dir = out.join(st.as_str());
                    write_file(&dir.join("events.log"), &events_to_text(&o.events))?;
                    report.write_to(&dir)?;
                    Ok(report)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });
    let reports = results.into_iter().collect::<Result<Vec<_>>>()?;
    write_comparison(out, &reports)?;
    Ok(reports)
}

fn write_comparison(out: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut sum = String::from(
        "strategy,requests,ttft_p50_s,ttft_p90_s,ttft_p99_s,time_to_first_served_s,gpu_seconds,total_tokens\n",
    );
    let mut cdf = String::from("strategy,ttft_s,fraction\n");
    for r in reports {
        let p = |f: fn(&crate::workload::Percentiles) -> f64| fmt_opt(r.ttft.as_ref().map(f));
        let _ = writeln!(
            sum,
            "{},{},{},{},{},{},{:.9},{}",
            r.label,
            r.requests.len(),
            p(|x| x.p50),
            p(|x| x.p90),
            p(|x| x.p99),
            fmt_opt(r.time_to_first_served_s),
            r.gpu_seconds,
            r.total_tokens
        );
        let mut xs = r.ttft_samples.clone();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        for (i, x) in xs.iter().enumerate() {
            let _ = writeln!(cdf, "{},{x:.9},{:.9}", r.label, (i + 1) as f64 / n);
        }
    }
    write_file(&out.join("summary.csv"), &sum)?;
    write_file(&out.join("ttft_cdf.csv"), &cdf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    B,
    K,
    BlockOverhead,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::B => "b",
            SweepAxis::K => "k",
            SweepAxis::BlockOverhead => "block_overhead",
        }
    }
}

/// Parsed `--sweep` argument; values are kept as written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<String>,
}

impl FromStr for SweepSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = |r: String| Error::config("--sweep", r);
        let (axis, vals) = s
            .split_once('=')
            .ok_or_else(|| bad("expected <axis>=<v1,v2,...>".into()))?;
        let axis = match axis.trim() {
            "b" => SweepAxis::B,
            "k" => SweepAxis::K,
            "block_overhead" => SweepAxis::BlockOverhead,
            other => return Err(bad(format!("unknown axis `{other}`"))),
        };
        let values: Vec<String> = vals
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(bad("no values".into()));
        }
        Ok(SweepSpec { axis, values })
    }
}

impl SweepSpec {
    /// Copy of `cfg` with the axis set to `value`.
    pub fn apply(&self, cfg: &RunConfig, value: &str) -> Result<RunConfig> {
        let bad = |r: String| Error::config("--sweep", r);
        let mut c = cfg.clone();
        match self.axis {
            SweepAxis::B => c.b = parse_block_count(value).map_err(bad)?,
            SweepAxis::K => {
                c.k = value
                    .parse()
                    .map_err(|_| bad(format!("k value `{value}`")))?;
            }
            SweepAxis::BlockOverhead => {
                c.cluster.step_fixed_overhead_s = value
                    .parse()
                    .map_err(|_| bad(format!("overhead value `{value}`")))?;
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub strategy: Strategy,
    pub block_count: u32,
    /// Modeled end-to-end multicast time of the `plan` scale event.
    pub predicted_transfer_s: f64,
    pub report: MetricsReport,
}

/// One simulation per axis value, in parallel, each under
/// `<out>/<axis>=<value>/`. Writes `sweep.csv`, and `elbow.txt` for a b sweep.
pub fn cmd_sweep(
    cfg: &RunConfig,
    out: &Path,
    spec: &SweepSpec,
    strategies: &[Strategy],
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let configs = spec
        .values
        .iter()
        .map(|v| spec.apply(cfg, v))
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<Result<Vec<SweepRow>>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .zip(&spec.values)
            .map(|(c, v)| {
                let dir = out.join(format!("{}={v}", spec.axis.as_str()));
                s.spawn(move || -> Result<Vec<SweepRow>> {
                    let plan = build_plan(c)?;
                    let predicted = plan.schedule.as_ref().map_or(0.0, |s| s.total_time());
                    let reports = cmd_simulate(c, &dir, strategies, seed)?;
                    Ok(reports
                        .into_iter()
                        .zip(strategies)
                        .map(|(report, &strategy)| SweepRow {
                            value: v.clone(),
                            strategy,
                            block_count: plan.block_plan.block_count(),
                            predicted_transfer_s: predicted,
                            report,
                        })
                        .collect())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep thread panicked"))
            .collect()
    });
    let rows: Vec<SweepRow> = results
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut table = format!(
        "{},strategy,block_count,predicted_transfer_s,time_to_first_served_s,ttft_p90_s,gpu_seconds\n",
        spec.axis.as_str()
    );
    for r in &rows {
        let _ = writeln!(
            table,
            "{},{},{},{:.9},{},{},{:.9}",
            r.value,
            r.strategy,
            r.block_count,
            r.predicted_transfer_s,
            fmt_opt(r.report.time_to_first_served_s),
            fmt_opt(r.report.ttft.map(|p| p.p90)),
            r.report.gpu_seconds
        );
    }
    write_file(&out.join("sweep.csv"), &table)?;
    if spec.axis == SweepAxis::B {
        let model = cfg.plan_model();
        let n = cfg.plan_nodes().len() as u64;
        let elbow = select_block_count(
            model,
            n,
            cfg.cluster.step_fixed_overhead_s,
            cfg.cluster.nic_bps,
            cfg.elbow_threshold,
        )?;
        write_file(
            &out.join("elbow.txt"),
            &format!("elbow_b={elbow}\nthreshold={}\n", cfg.elbow_threshold),
        )?;
    }
    Ok(rows)
}

/// Re-aggregates every `events.log` directly under `out` or one level
/// below it, rewriting the metric files beside each log and the combined
/// tables in `out`.
pub fn cmd_report(out: &Path, window_s: f64) -> Result<Vec<MetricsReport>> {
    let mut dirs = vec![out.to_path_buf()];
    let entries = std::fs::read_dir(out).map_err(|e| Error::io(out, e))?;
    for e in entries {
        let e = e.map_err(|e| Error::io(out, e))?;
        if e.path().is_dir() {
            dirs.push(e.path());
        }
    }
    dirs.sort();
    let opts = AggregateOptions { window_s };
    let mut reports = Vec::new();
    for d in dirs {
        let log = d.join("events.log");
        if !log.is_file() {
            continue;
        }
        let text = std::fs::read_to_string(&log).map_err(|e| Error::io(&log, e))?;
        let events = parse_event_log(&text)?;
        let label = d
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let r = aggregate(&events, &label, opts)?;
        r.write_to(&d)?;
        reports.push(r);
    }
    if reports.is_empty() {
        return Err(Error::IncompleteLog(format!(
            "no events.log under {}",
            out.display()
        )));
    }
    write_comparison(out, &reports)?;
    Ok(reports)
}
