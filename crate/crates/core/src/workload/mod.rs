//! Trace ingestion, synthetic bursty workloads and metric aggregation.

mod metrics;
mod synth;
mod trace;

pub use metrics::{
    aggregate, integrate_allocation, nearest_rank, AggregateOptions, MetricsReport, Percentiles,
    RequestRecord,
};
pub use synth::{merge_traces, single_burst, synth_burst, BurstParams, TokenDist};
pub use trace::{
    load_trace, read_trace, validate_trace, write_trace, ColumnMap, TraceOptions, TraceRecord,
};
