use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::TraceRecord;
use crate::{Error, ModelId, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenDist {
    Fixed(u32),
    /// Inclusive range.
    Uniform {
        lo: u32,
        hi: u32,
    },
}

impl TokenDist {
    fn validate(&self, what: &str) -> Result<()> {
        let ok = match *self {
            TokenDist::Fixed(n) => n >= 1,
            TokenDist::Uniform { lo, hi } => lo >= 1 && lo <= hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{what}: token counts must be >= 1 with lo <= hi"
            )))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u32 {
        match *self {
            TokenDist::Fixed(n) => n,
            TokenDist::Uniform { lo, hi } => rng.random_range(lo..=hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstParams {
    pub base_rps: f64,
    pub spike_rps: f64,
    /// `(start_s, duration_s)` of each rectangular spike.
    pub spikes: Vec<(f64, f64)>,
    pub duration_s: f64,
    pub prompt_tokens: TokenDist,
    pub output_tokens: TokenDist,
    /// Each request picks one uniformly.
    pub models: Vec<ModelId>,
}

impl BurstParams {
    fn rate_at(&self, t: f64) -> f64 {
        let in_spike = self
            .spikes
            .iter()
            .any(|&(s, d)| d > 0.0 && t >= s && t < s + d);
        if in_spike {
            self.spike_rps
        } else {
            self.base_rps
        }
    }

    /// Next instant after `t` at which the rate may change.
    fn next_boundary(&self, t: f64) -> f64 {
        self.spikes
            .iter()
            .filter(|s| s.1 > 0.0)
            .flat_map(|&(s, d)| [s, s + d])
            .filter(|&x| x > t)
            .fold(self.duration_s, f64::min)
    }
}

/// Poisson arrivals at `base_rps`, raised to `spike_rps` inside each spike.
pub fn synth_burst(p: &BurstParams, seed: u64) -> Result<Vec<TraceRecord>> {
    if !(p.base_rps > 0.0 && p.spike_rps >= p.base_rps && p.spike_rps.is_finite()) {
        return Err(Error::invalid("need spike_rps >= base_rps > 0"));
    }
    if !(p.duration_s >= 0.0 && p.duration_s.is_finite()) {
        return Err(Error::invalid("duration_s must be finite and >= 0"));
    }
    if p.models.is_empty() {
        return Err(Error::invalid("at least one model id is required"));
    }
    p.prompt_tokens.validate("prompt_tokens")?;
    p.output_tokens.validate("output_tokens")?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut t = 0.0;
    while t < p.duration_s {
        let rate = p.rate_at(t);
        let gap = Exp::new(rate)
            .map_err(|e| Error::invalid(e.to_string()))?
            .sample(&mut rng);
        let edge = p.next_boundary(t);
        if t + gap >= edge {
            // memoryless: restart the clock at the rate change
            t = edge;
            continue;
        }
        t += gap;
        let model = p.models[rng.random_range(0..p.models.len())].clone();
        out.push(TraceRecord {
            arrival_s: t,
            model_id: model,
            prompt_tokens: p.prompt_tokens.sample(&mut rng),
            output_tokens: p.output_tokens.sample(&mut rng),
        });
    }
    Ok(out)
}

/// `count` identical requests arriving together at `at_s`.
pub fn single_burst(
    count: usize,
    at_s: f64,
    model: &ModelId,
    prompt_tokens: u32,
    output_tokens: u32,
) -> Vec<TraceRecord> {
    (0..count)
        .map(|_| TraceRecord {
            arrival_s: at_s,
            model_id: model.clone(),
            prompt_tokens,
            output_tokens,
        })
        .collect()
}

/// Interleaves traces by arrival time; ties keep the earlier trace first.
pub fn merge_traces(traces: &[Vec<TraceRecord>]) -> Vec<TraceRecord> {
    let mut all: Vec<TraceRecord> = traces.iter().flatten().cloned().collect();
    all.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s));
    all
}
