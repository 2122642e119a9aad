use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::simengine::{Payload, SimEvent};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateOptions {
    /// Throughput window length; one sample per window.
    pub window_s: f64,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        AggregateOptions { window_s: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub request_id: u64,
    pub arrival_s: f64,
    pub ttft_s: Option<f64>,
    pub completion_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub requests: Vec<RequestRecord>,
    /// TTFT of every request that produced a token, in request id order.
    pub ttft_samples: Vec<f64>,
    pub ttft: Option<Percentiles>,
    /// `(window end, tokens per second)`.
    pub throughput: Vec<(f64, f64)>,
    /// `(time, allocated GPUs)` at every allocation change.
    pub allocation: Vec<(f64, u32)>,
    pub gpu_seconds: f64,
    pub total_tokens: u64,
    /// Delay from the first autoscaler scale-out to the first token served
    /// by scaled-out capacity.
    pub time_to_first_served_s: Option<f64>,
    pub horizon_s: f64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, n) - 1])
}

/// Right-continuous step integral of `samples` up to `horizon_s`.
pub fn integrate_allocation(samples: &[(f64, u32)], horizon_s: f64) -> f64 {
    let mut total = 0.0;
    for (i, &(t, g)) in samples.iter().enumerate() {
        let end = samples.get(i + 1).map_or(horizon_s, |s| s.0).min(horizon_s);
        if end > t {
            total += g as f64 * (end - t);
        }
    }
    total
}

/// Derives per-request, throughput and allocation metrics from a complete
/// event log.
pub fn aggregate(
    events: &[SimEvent],
    label: &str,
    opts: AggregateOptions,
) -> Result<MetricsReport> {
    if !(opts.window_s > 0.0 && opts.window_s.is_finite()) {
        return Err(Error::invalid("throughput window must be > 0"));
    }
    let horizon_s = match events.last() {
        Some(SimEvent {
            time_s,
            payload: Payload::Horizon { .. },
        }) => *time_s,
        _ => return Err(Error::IncompleteLog("no terminal horizon event".into())),
    };

    let mut reqs: BTreeMap<u64, RequestRecord> = BTreeMap::new();
    let mut token_times = Vec::new();
    let mut allocation: Vec<(f64, u32)> = Vec::new();
    let mut first_scale_out: Option<f64> = None;
    let mut first_scaled_token: Option<f64> = None;

    let set_alloc = |t: f64, g: u32, allocation: &mut Vec<(f64, u32)>| match allocation.last_mut() {
        Some(last) if last.0 == t => last.1 = g,
        Some(last) if last.1 == g => {}
        _ => allocation.push((t, g)),
    };

    for e in events {
        let t = e.time_s;
        match &e.payload {
            Payload::RequestArrival { request, .. } => {
                reqs.insert(
                    *request,
                    RequestRecord {
                        request_id: *request,
                        arrival_s: t,
                        ttft_s: None,
                        completion_s: None,
                    },
                );
            }
            Payload::TokenEmitted {
                request, scaled, ..
            } => {
                token_times.push(t);
                if *scaled && first_scaled_token.is_none() {
                    first_scaled_token = Some(t);
                }
                let r = reqs.get_mut(request).ok_or_else(|| {
                    Error::IncompleteLog(format!("token for request {request} before its arrival"))
                })?;
                if r.ttft_s.is_none() {
                    r.ttft_s = Some(t - r.arrival_s);
                }
            }
            Payload::RequestDone { request, .. } => {
                if let Some(r) = reqs.get_mut(request) {
                    r.completion_s = Some(t);
                }
            }
            Payload::ScaleOut {
                allocated_gpus,
                initial,
                ..
            } => {
                if !initial && first_scale_out.is_none() {
                    first_scale_out = Some(t);
                }
                set_alloc(t, *allocated_gpus, &mut allocation);
            }
            Payload::ScaleIn { allocated_gpus, .. } => {
                set_alloc(t, *allocated_gpus, &mut allocation)
            }
            _ => {}
        }
    }
    if allocation.first().is_none_or(|s| s.0 > 0.0) {
        allocation.insert(0, (0.0, 0));
    }

    let requests: Vec<RequestRecord> = reqs.into_values().collect();
    let ttft_samples: Vec<f64> = requests.iter().filter_map(|r| r.ttft_s).collect();
    let mut sorted = ttft_samples.clone();
    sorted.sort_by(f64::total_cmp);
    let ttft = nearest_rank(&sorted, 50.0).map(|p50| Percentiles {
        p50,
        p90: nearest_rank(&sorted, 90.0).unwrap_or(p50),
        p99: nearest_rank(&sorted, 99.0).unwrap_or(p50),
    });

    let w = opts.window_s;
    let windows = (horizon_s / w).ceil().max(0.0) as usize;
    let mut counts = vec![0u64; windows];
    for &t in &token_times {
        if windows > 0 {
            let i = ((t / w) as usize).min(windows - 1);
            counts[i] += 1;
        }
    }
    let throughput = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| ((i + 1) as f64 * w, c as f64 / w))
        .collect();

    let gpu_seconds = integrate_allocation(&allocation, horizon_s);
    let time_to_first_served_s = match (first_scale_out, first_scaled_token) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };

    Ok(MetricsReport {
        label: label.to_string(),
        requests,
        ttft_samples,
        ttft,
        throughput,
        allocation,
        gpu_seconds,
        total_tokens: token_times.len() as u64,
        time_to_first_served_s,
        horizon_s,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.9}"))
}

impl MetricsReport {
    pub fn requests_csv(&self) -> String {
        let mut s = String::from("request_id,arrival_s,ttft_s,completion_s\n");
        for r in &self.requests {
            let _ = writeln!(
                s,
                "{},{:.9},{},{}",
                r.request_id,
                r.arrival_s,
                opt(r.ttft_s),
                opt(r.completion_s)
            );
        }
        s
    }

    pub fn throughput_csv(&self) -> String {
        let mut s = String::from("time_s,tokens_per_s\n");
        for (t, v) in &self.throughput {
            let _ = writeln!(s, "{t:.9},{v:.9}");
        }
        s
    }

    pub fn allocation_csv(&self) -> String {
        let mut s = String::from("time_s,allocated_gpus\n");
        for (t, g) in &self.allocation {
            let _ = writeln!(s, "{t:.9},{g}");
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "label={}", self.label);
        let _ = writeln!(s, "requests={}", self.requests.len());
        let _ = writeln!(
            s,
            "completed={}",
            self.requests
                .iter()
                .filter(|r| r.completion_s.is_some())
                .count()
        );
        let (p50, p90, p99) = self.ttft.map_or((None, None, None), |p| {
            (Some(p.p50), Some(p.p90), Some(p.p99))
        });
        let _ = writeln!(s, "ttft_p50_s={}", opt(p50));
        let _ = writeln!(s, "ttft_p90_s={}", opt(p90));
        let _ = writeln!(s, "ttft_p99_s={}", opt(p99));
        let _ = writeln!(
            s,
            "time_to_first_served_s={}",
            opt(self.time_to_first_served_s)
        );
        let _ = writeln!(s, "gpu_seconds={:.9}", self.gpu_seconds);
        let _ = writeln!(s, "total_tokens={}", self.total_tokens);
        let _ = writeln!(s, "horizon_s={:.9}", self.horizon_s);
        s
    }

    /// Writes the three record streams and the summary into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("requests.csv", self.requests_csv()),
            ("throughput.csv", self.throughput_csv()),
            ("allocation.csv", self.allocation_csv()),
            ("summary.txt", self.summary_text()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{ModelId, NodeId};

    fn ev(t: f64, payload: Payload) -> SimEvent {
        SimEvent { time_s: t, payload }
    }

    fn m() -> ModelId {
        ModelId::from("m")
    }

    fn arrival(t: f64, id: u64) -> SimEvent {
        ev(
            t,
            Payload::RequestArrival {
                request: id,
                model: m(),
                prompt_tokens: 1,
                output_tokens: 1,
            },
        )
    }

    fn token(t: f64, id: u64, scaled: bool) -> SimEvent {
        ev(
            t,
            Payload::TokenEmitted {
                request: id,
                model: m(),
                instance: 0,
                index: 0,
                scaled,
            },
        )
    }

    fn horizon(t: f64) -> SimEvent {
        ev(
            t,
            Payload::Horizon {
                in_flight: 0,
                allocated_gpus: 0,
            },
        )
    }

    fn scale_out(t: f64, g: u32, initial: bool) -> SimEvent {
        ev(
            t,
            Payload::ScaleOut {
                scale_id: 0,
                model: m(),
                nodes: vec![NodeId(0)],
                allocated_gpus: g,
                initial,
            },
        )
    }

    fn scale_in(t: f64, g: u32) -> SimEvent {
        ev(
            t,
            Payload::ScaleIn {
                model: m(),
                node: NodeId(0),
                allocated_gpus: g,
            },
        )
    }

    #[test]
    fn single_request_percentiles() {
        let log = vec![arrival(1.0, 0), token(1.5, 0, false), horizon(2.0)];
        let r = aggregate(&log, "x", AggregateOptions::default()).unwrap();
        let p = r.ttft.unwrap();
        assert_eq!((p.p50, p.p90, p.p99), (0.5, 0.5, 0.5));
        assert_eq!(r.label, "x");
    }

    #[test]
    fn missing_horizon_is_incomplete() {
        let log = vec![arrival(0.0, 0)];
        assert!(matches!(
            aggregate(&log, "x", AggregateOptions::default()),
            Err(Error::IncompleteLog(_))
        ));
    }

    #[test]
    fn nearest_rank_definition() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 50.0), Some(5.0));
        assert_eq!(nearest_rank(&v, 90.0), Some(9.0));
        assert_eq!(nearest_rank(&v, 99.0), Some(10.0));
        assert_eq!(nearest_rank(&[3.0; 7], 90.0), Some(3.0));
        assert_eq!(nearest_rank(&[], 50.0), None);
    }

    /// Trapezoid rule over the doubled-point polyline of a step function.
    fn trapezoid(samples: &[(f64, u32)], horizon: f64) -> f64 {
        let mut pts: Vec<(f64, f64)> = Vec::new();
        for (i, &(t, g)) in samples.iter().enumerate() {
            let next = samples.get(i + 1).map_or(horizon, |s| s.0);
            pts.push((t, g as f64));
            pts.push((next, g as f64));
        }
        pts.windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
            .sum()
    }

    #[test]
    fn gpu_seconds_match_trapezoid_oracle() {
        let log = vec![
            scale_out(0.0, 1, true),
            scale_out(2.0, 4, false),
            scale_in(5.5, 3),
            scale_in(9.0, 0),
            horizon(12.0),
        ];
        let r = aggregate(&log, "x", AggregateOptions::default()).unwrap();
        // 1*2 + 4*3.5 + 3*3.5 + 0
        assert!((r.gpu_seconds - 26.5).abs() < 1e-12);
        assert!((r.gpu_seconds - trapezoid(&r.allocation, 12.0)).abs() < 1e-12);
    }

    #[test]
    fn throughput_counts_tokens_per_window() {
        let log = vec![
            arrival(0.0, 0),
            token(0.05, 0, false),
            token(0.06, 0, false),
            token(0.15, 0, false),
            horizon(0.2),
        ];
        let r = aggregate(&log, "x", AggregateOptions { window_s: 0.1 }).unwrap();
        assert_eq!(r.throughput.len(), 2);
        assert!((r.throughput[0].1 - 20.0).abs() < 1e-9);
        assert!((r.throughput[1].1 - 10.0).abs() < 1e-9);
        assert_eq!(r.total_tokens, 3);
    }

    #[test]
    fn first_served_uses_scaled_tokens_only() {
        let log = vec![
            scale_out(0.0, 1, true),
            arrival(0.0, 0),
            arrival(0.0, 1),
            scale_out(0.0, 2, false),
            token(0.1, 0, false),
            token(0.7, 1, true),
            horizon(1.0),
        ];
        let r = aggregate(&log, "x", AggregateOptions::default()).unwrap();
        assert!((r.time_to_first_served_s.unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn aggregation_is_idempotent() {
        let log = vec![arrival(0.0, 0), token(0.3, 0, false), horizon(1.0)];
        let a = aggregate(&log, "x", AggregateOptions::default()).unwrap();
        let b = aggregate(&log, "x", AggregateOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}
