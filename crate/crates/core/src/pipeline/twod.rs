use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Tick-by-tick occupancy of a pipeline serving several batches at once.
///
/// A batch enters stage 0, moves one stage per tick, and after the last stage
/// emits a token and rejoins the queue for stage 0 behind any batch already
/// waiting there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityTable {
    pub stage_count: usize,
    pub batch_count: usize,
    /// `busy[tick][stage]` is the batch processed there, if any.
    pub busy: Vec<Vec<Option<usize>>>,
    /// Batches queued for stage 0 during each tick.
    pub waiting: Vec<Vec<usize>>,
    /// Ticks at which each batch finished a token.
    pub token_ticks: Vec<Vec<usize>>,
}

impl ActivityTable {
    /// First tick from which every tick in the table is fully busy, if any.
    pub fn warmup_ticks(&self) -> Option<usize> {
        let full = |row: &Vec<Option<usize>>| row.iter().all(Option::is_some);
        (0..self.busy.len()).find(|&t| self.busy[t..].iter().all(full))
    }

    /// Busy fraction of stage slots over `ticks`.
    pub fn utilization(&self, ticks: std::ops::Range<usize>) -> f64 {
        let slots = ticks.len() * self.stage_count;
        if slots == 0 {
            return 0.0;
        }
        let busy: usize = self.busy[ticks]
            .iter()
            .map(|row| row.iter().filter(|c| c.is_some()).count())
            .sum();
        busy as f64 / slots as f64
    }

    /// Ticks between consecutive tokens of `batch` (steady state).
    pub fn token_interval(&self, batch: usize) -> Option<usize> {
        let t = &self.token_ticks[batch];
        (t.len() >= 2).then(|| t[t.len() - 1] - t[t.len() - 2])
    }
}

/// Simulates `ticks` ticks of a pipeline with `stage_count` stages and
/// `batches` in-flight batches.
pub fn plan_2d_schedule(stage_count: usize, batches: usize, ticks: usize) -> ActivityTable {
    let mut queue: VecDeque<usize> = (0..batches).collect();
    let mut slots: Vec<Option<usize>> = vec![None; stage_count];
    let mut busy = Vec::with_capacity(ticks);
    let mut waiting = Vec::with_capacity(ticks);
    let mut token_ticks = vec![Vec::new(); batches];

    for tick in 0..ticks {
        if stage_count > 0 && slots[0].is_none() {
            slots[0] = queue.pop_front();
        }
        busy.push(slots.clone());
        waiting.push(queue.iter().copied().collect());

        // advance: the last stage finishes a token and requeues
        let mut next = vec![None; stage_count];
        for s in (0..stage_count).rev() {
            if let Some(batch) = slots[s] {
                if s + 1 == stage_count {
                    token_ticks[batch].push(tick);
                    queue.push_back(batch);
                } else {
                    next[s + 1] = Some(batch);
                }
            }
        }
        slots = next;
    }
    ActivityTable {
        stage_count,
        batch_count: batches,
        busy,
        waiting,
        token_ticks,
    }
}
