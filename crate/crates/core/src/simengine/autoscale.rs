use serde::{Deserialize, Serialize};

use super::AutoscalePolicy;
use crate::NodeId;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleDecision {
    pub scale_out: u32,
    pub scale_in: Vec<NodeId>,
}

/// Reactive threshold policy for one model.
///
/// `active` counts replicas serving or loading. `idle` lists replicas with
/// their idle time in seconds; those past the keep-alive window are released,
/// oldest idle first, without going below `min_replicas`.
pub fn autoscale(
    policy: &AutoscalePolicy,
    queue_depth: usize,
    active: usize,
    idle: &[(NodeId, f64)],
) -> ScaleDecision {
    let cap = policy.capacity_per_replica.max(1) as usize;
    let mut out = ScaleDecision::default();

    let overloaded = if active == 0 {
        queue_depth > 0
    } else {
        queue_depth as f64 / active as f64 > policy.threshold_hi
    };
    if overloaded {
        let excess = queue_depth.saturating_sub(active * cap);
        out.scale_out = excess.div_ceil(cap) as u32;
    }

    if out.scale_out == 0 && queue_depth == 0 {
        let mut expired: Vec<(NodeId, f64)> = idle
            .iter()
            .copied()
            .filter(|&(_, t)| t >= policy.keep_alive_s)
            .collect();
        expired.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let spare = active.saturating_sub(policy.min_replicas as usize);
        out.scale_in = expired.into_iter().take(spare).map(|(n, _)| n).collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy(cap: u32, min: u32) -> AutoscalePolicy {
        AutoscalePolicy {
            threshold_hi: 2.0,
            keep_alive_s: 15.0,
            min_replicas: min,
            capacity_per_replica: cap,
        }
    }

    #[test]
    fn forty_queued_two_active() {
        // excess 40 - 2*4 = 32, 32/4 = 8
        let d = autoscale(&policy(4, 0), 40, 2, &[]);
        assert_eq!(d.scale_out, 8);
    }

    #[test]
    fn below_threshold_is_a_no_op() {
        assert_eq!(
            autoscale(&policy(4, 0), 4, 2, &[]),
            ScaleDecision::default()
        );
    }

    #[test]
    fn idle_past_keep_alive_releases_to_min() {
        let d = autoscale(&policy(1, 0), 0, 1, &[(NodeId(3), 20.0)]);
        assert_eq!(d.scale_in, vec![NodeId(3)]);
        let d = autoscale(&policy(1, 1), 0, 1, &[(NodeId(3), 20.0)]);
        assert!(d.scale_in.is_empty());
    }

    #[test]
    fn recent_idle_is_kept() {
        let d = autoscale(&policy(1, 0), 0, 2, &[(NodeId(1), 14.9)]);
        assert!(d.scale_in.is_empty());
    }

    #[test]
    fn cold_queue_scales_from_zero() {
        assert_eq!(autoscale(&policy(1, 0), 5, 0, &[]).scale_out, 5);
    }
}
