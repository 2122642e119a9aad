use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer};

use crate::multicast::ModelSpec;
use crate::simengine::{AutoscalePolicy, BlockCount, ClusterSpec, SimConfig, Strategy};
use crate::workload::{
    load_trace, single_burst, synth_burst, BurstParams, ColumnMap, TokenDist, TraceOptions,
    TraceRecord,
};
use crate::{Error, ModelId, NodeId, Result};

/// A `(node, model)` placement in the config file.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub node: u32,
    pub model: ModelId,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceFile {
    pub path: PathBuf,
    #[serde(default)]
    pub sort: bool,
    #[serde(default)]
    pub columns: ColumnMap,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTrace {
    pub base_rps: f64,
    pub spike_rps: f64,
    /// `[start_s, duration_s]` pairs.
    #[serde(default)]
    pub spikes: Vec<(f64, f64)>,
    pub duration_s: f64,
    pub prompt_tokens: TokenDist,
    pub output_tokens: TokenDist,
    /// Defaults to every configured model.
    #[serde(default)]
    pub models: Vec<ModelId>,
}

/// `count` identical requests at one instant.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurstTrace {
    pub count: usize,
    #[serde(default)]
    pub at_s: f64,
    /// Defaults to the first model.
    pub model: Option<ModelId>,
    pub prompt_tokens: u32,
    pub output_tokens: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanSection {
    /// Defaults to the first model.
    pub model: Option<ModelId>,
    /// Group size; defaults to the cluster's node count.
    pub nodes: Option<u32>,
    /// Explicit node ids, sources first. Overrides `nodes`.
    pub node_ids: Option<Vec<u32>>,
}

/// Parsed run configuration. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "all_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "one")]
    pub k: u32,
    #[serde(default = "auto", deserialize_with = "block_count")]
    pub b: BlockCount,
    #[serde(default = "elbow")]
    pub elbow_threshold: f64,
    #[serde(default = "one")]
    pub batch_size: u32,
    pub horizon_s: Option<f64>,
    #[serde(default = "window")]
    pub throughput_window_s: f64,
    #[serde(default = "yes")]
    pub ssd_everywhere: bool,
    #[serde(default)]
    pub write_back: bool,
    #[serde(default)]
    pub hot: Vec<Placement>,
    #[serde(default)]
    pub memory: Vec<Placement>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub cluster: ClusterSpec,
    #[serde(default)]
    pub policy: AutoscalePolicy,
    #[serde(rename = "model", default)]
    pub models: Vec<ModelSpec>,
    pub trace: Option<TraceFile>,
    pub synthetic: Option<SyntheticTrace>,
    pub burst: Option<BurstTrace>,
    #[serde(default)]
    pub plan: PlanSection,
}

fn all_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}
fn one() -> u32 {
    1
}
fn auto() -> BlockCount {
    BlockCount::Auto
}
fn elbow() -> f64 {
    0.01
}
fn window() -> f64 {
    0.1
}
fn yes() -> bool {
    true
}

fn block_count<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BlockCount, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(u32),
        Word(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(n) => Ok(BlockCount::Fixed(n)),
        Raw::Word(w) => parse_block_count(&w).map_err(serde::de::Error::custom),
    }
}

/// `auto` or a positive integer.
pub fn parse_block_count(s: &str) -> std::result::Result<BlockCount, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(BlockCount::Auto);
    }
    s.parse::<u32>()
        .map(BlockCount::Fixed)
        .map_err(|_| format!("expected `auto` or a block count, got `{s}`"))
}

impl RunConfig {
    /// Parses TOML text. `base` anchors relative paths.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<syntax>", e.message().to_string()))?;
        let mut cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table))
            .map_err(|e| {
                let key = e.path().to_string();
                Error::config(key, e.into_inner().message().to_string())
            })?;
        if let Some(t) = &mut cfg.trace {
            t.path = base.join(&t.path);
        }
        if let Some(o) = &mut cfg.out {
            *o = base.join(&*o);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        self.cluster
            .validate()
            .map_err(|e| Error::config("cluster", e.to_string()))?;
        if self.k < 1 {
            return Err(Error::config("k", "must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.b == BlockCount::Fixed(0) {
            return Err(Error::config("b", "must be >= 1 or `auto`"));
        }
        if !(self.elbow_threshold > 0.0 && self.elbow_threshold < 1.0) {
            return Err(Error::config("elbow_threshold", "must lie in (0, 1)"));
        }
        if !(self.throughput_window_s > 0.0 && self.throughput_window_s.is_finite()) {
            return Err(Error::config("throughput_window_s", "must be > 0"));
        }
        if let Some(h) = self.horizon_s {
            if h.is_nan() || h <= 0.0 {
                return Err(Error::config("horizon_s", "must be > 0"));
            }
        }
        if self.strategies.is_empty() {
            return Err(Error::config(
                "strategies",
                "at least one strategy is required",
            ));
        }
        if self.models.is_empty() {
            return Err(Error::config(
                "model",
                "at least one [[model]] section is required",
            ));
        }
        for (i, m) in self.models.iter().enumerate() {
            m.validate()
                .map_err(|e| Error::config(format!("model[{i}]"), e.to_string()))?;
        }
        for (key, list) in [("hot", &self.hot), ("memory", &self.memory)] {
            for (i, p) in list.iter().enumerate() {
                if p.node >= self.cluster.node_count {
                    return Err(Error::config(
                        format!("{key}[{i}].node"),
                        format!(
                            "node {} outside a {}-node cluster",
                            p.node, self.cluster.node_count
                        ),
                    ));
                }
                self.model(&p.model, &format!("{key}[{i}].model"))?;
            }
        }
        let sources = [
            self.trace.is_some(),
            self.synthetic.is_some(),
            self.burst.is_some(),
        ];
        if sources.iter().filter(|&&s| s).count() > 1 {
            return Err(Error::config(
                "trace",
                "give at most one of [trace], [synthetic], [burst]",
            ));
        }
        if let Some(t) = &self.trace {
            if !t.path.is_file() {
                return Err(Error::config(
                    "trace.path",
                    format!("{} does not exist", t.path.display()),
                ));
            }
        }
        if let Some(s) = &self.synthetic {
            for (i, m) in s.models.iter().enumerate() {
                self.model(m, &format!("synthetic.models[{i}]"))?;
            }
        }
        if let Some(b) = &self.burst {
            if let Some(m) = &b.model {
                self.model(m, "burst.model")?;
            }
            if b.prompt_tokens < 1 || b.output_tokens < 1 {
                return Err(Error::config("burst", "token counts must be >= 1"));
            }
        }
        if let Some(m) = &self.plan.model {
            self.model(m, "plan.model")?;
        }
        if self.plan.nodes == Some(0) {
            return Err(Error::config("plan.nodes", "must be >= 1"));
        }
        if let Some(ids) = &self.plan.node_ids {
            if ids.is_empty() {
                return Err(Error::config("plan.node_ids", "must not be empty"));
            }
        }
        Ok(())
    }

    fn model(&self, id: &ModelId, key: &str) -> Result<&ModelSpec> {
        self.models
            .iter()
            .find(|m| &m.model_id == id)
            .ok_or_else(|| Error::config(key, format!("unknown model `{id}`")))
    }

    /// Model the `plan` command schedules.
    pub fn plan_model(&self) -> &ModelSpec {
        match &self.plan.model {
            Some(id) => self.model(id, "plan.model").expect("validated"),
            None => &self.models[0],
        }
    }

    /// Multicast group for `plan`, sources first.
    pub fn plan_nodes(&self) -> Vec<NodeId> {
        match &self.plan.node_ids {
            Some(ids) => ids.iter().copied().map(NodeId).collect(),
            None => (0..self.plan.nodes.unwrap_or(self.cluster.node_count))
                .map(NodeId)
                .collect(),
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let pairs = |v: &[Placement]| {
            v.iter()
                .map(|p| (NodeId(p.node), p.model.clone()))
                .collect()
        };
        SimConfig {
            cluster: self.cluster.clone(),
            models: self.models.clone(),
            policy: self.policy,
            k: self.k,
            block_count: self.b,
            elbow_threshold: self.elbow_threshold,
            batch_size: self.batch_size,
            hot: pairs(&self.hot),
            memory: pairs(&self.memory),
            ssd_everywhere: self.ssd_everywhere,
            write_back: self.write_back,
            horizon_s: self.horizon_s,
        }
    }

    /// Loads or generates the request trace. No trace section means an
    /// empty trace.
    pub fn build_trace(&self, seed: u64) -> Result<Vec<TraceRecord>> {
        if let Some(t) = &self.trace {
            let opts = TraceOptions {
                columns: t.columns.clone(),
                sort: t.sort,
            };
            return load_trace(&t.path, &opts);
        }
        if let Some(s) = &self.synthetic {
            let models = if s.models.is_empty() {
                self.models.iter().map(|m| m.model_id.clone()).collect()
            } else {
                s.models.clone()
            };
            let p = BurstParams {
                base_rps: s.base_rps,
                spike_rps: s.spike_rps,
                spikes: s.spikes.clone(),
                duration_s: s.duration_s,
                prompt_tokens: s.prompt_tokens,
                output_tokens: s.output_tokens,
                models,
            };
            return synth_burst(&p, seed).map_err(|e| Error::config("synthetic", e.to_string()));
        }
        if let Some(b) = &self.burst {
            let model = b
                .model
                .clone()
                .unwrap_or_else(|| self.models[0].model_id.clone());
            return Ok(single_burst(
                b.count,
                b.at_s,
                &model,
                b.prompt_tokens,
                b.output_tokens,
            ));
        }
        Ok(Vec::new())
    }
}
