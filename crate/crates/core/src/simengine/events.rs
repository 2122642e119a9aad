use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::modelmgr::Tier;
use crate::{BlockId, Error, ModelId, NodeId, Result};

/// Logged event kinds, in tie-break order for events sharing a timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TransferStepDone,
    LoadChunkDone,
    ModeSwitch,
    StageTickDone,
    TokenEmitted,
    RequestDone,
    Eviction,
    ScaleIn,
    RequestArrival,
    ScaleOut,
    /// Terminal record; always the last event of a complete log.
    Horizon,
}

impl EventKind {
    pub const ALL: [EventKind; 11] = [
        EventKind::TransferStepDone,
        EventKind::LoadChunkDone,
        EventKind::ModeSwitch,
        EventKind::StageTickDone,
        EventKind::TokenEmitted,
        EventKind::RequestDone,
        EventKind::Eviction,
        EventKind::ScaleIn,
        EventKind::RequestArrival,
        EventKind::ScaleOut,
        EventKind::Horizon,
    ];

    pub fn rank(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::TransferStepDone => "transfer_step_done",
            EventKind::LoadChunkDone => "load_chunk_done",
            EventKind::ModeSwitch => "mode_switch",
            EventKind::StageTickDone => "stage_tick_done",
            EventKind::TokenEmitted => "token_emitted",
            EventKind::RequestDone => "request_done",
            EventKind::Eviction => "eviction",
            EventKind::ScaleIn => "scale_in",
            EventKind::RequestArrival => "request_arrival",
            EventKind::ScaleOut => "scale_out",
            EventKind::Horizon => "horizon",
        }
    }
}

impl FromStr for EventKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown event kind `{s}`")))
    }
}

/// How a block reached a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadPath {
    Network,
    HostToGpu,
    Ssd,
    Instant,
}

impl LoadPath {
    fn as_str(self) -> &'static str {
        match self {
            LoadPath::Network => "net",
            LoadPath::HostToGpu => "h2d",
            LoadPath::Ssd => "ssd",
            LoadPath::Instant => "instant",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "net" => LoadPath::Network,
            "h2d" => LoadPath::HostToGpu,
            "ssd" => LoadPath::Ssd,
            "instant" => LoadPath::Instant,
            _ => return Err(Error::Validation(format!("unknown load path `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    RequestArrival {
        request: u64,
        model: ModelId,
        prompt_tokens: u32,
        output_tokens: u32,
    },
    TransferStepDone {
        scale_id: u64,
        model: ModelId,
        step: usize,
    },
    LoadChunkDone {
        scale_id: u64,
        model: ModelId,
        node: NodeId,
        block: BlockId,
        path: LoadPath,
    },
    StageTickDone {
        instance: u64,
        stage: usize,
        node: NodeId,
        block_lo: u32,
        block_hi: u32,
    },
    TokenEmitted {
        request: u64,
        model: ModelId,
        instance: u64,
        index: u32,
        /// Served by an instance created through scale-out.
        scaled: bool,
    },
    RequestDone {
        request: u64,
        model: ModelId,
        tokens: u32,
    },
    Eviction {
        node: NodeId,
        model: ModelId,
        tier: Tier,
    },
    ScaleOut {
        scale_id: u64,
        model: ModelId,
        nodes: Vec<NodeId>,
        allocated_gpus: u32,
        /// Capacity present before the first request (not autoscaler driven).
        initial: bool,
    },
    ScaleIn {
        model: ModelId,
        node: NodeId,
        allocated_gpus: u32,
    },
    ModeSwitch {
        instance: u64,
        model: ModelId,
        requests: usize,
        recompute_s: f64,
    },
    Horizon {
        in_flight: usize,
        allocated_gpus: u32,
    },
}

impl Payload {
    pub fn kind(&self) -> EventKind {
        match self {
            Payload::RequestArrival { .. } => EventKind::RequestArrival,
            Payload::TransferStepDone { .. } => EventKind::TransferStepDone,
            Payload::LoadChunkDone { .. } => EventKind::LoadChunkDone,
            Payload::StageTickDone { .. } => EventKind::StageTickDone,
            Payload::TokenEmitted { .. } => EventKind::TokenEmitted,
            Payload::RequestDone { .. } => EventKind::RequestDone,
            Payload::Eviction { .. } => EventKind::Eviction,
            Payload::ScaleOut { .. } => EventKind::ScaleOut,
            Payload::ScaleIn { .. } => EventKind::ScaleIn,
            Payload::ModeSwitch { .. } => EventKind::ModeSwitch,
            Payload::Horizon { .. } => EventKind::Horizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time_s: f64,
    pub payload: Payload,
}

impl SimEvent {
    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }
}

fn node_list(nodes: &[NodeId]) -> String {
    nodes
        .iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

impl fmt::Display for SimEvent {
    /// `time_s,kind,key=value,...` with a fixed 9-digit time.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = format!("{:.9},{}", self.time_s, self.kind().as_str());
        let _ = match &self.payload {
            Payload::RequestArrival {
                request,
                model,
                prompt_tokens,
                output_tokens,
            } => write!(s, ",request={request},model={model},prompt={prompt_tokens},output={output_tokens}"),
            Payload::TransferStepDone {
                scale_id,
                model,
                step,
            } => write!(s, ",scale={scale_id},model={model},step={step}"),
            Payload::LoadChunkDone {
                scale_id,
                model,
                node,
                block,
                path,
            } => write!(
                s,
                ",scale={scale_id},model={model},node={node},block={block},path={}",
                path.as_str()
            ),
            Payload::StageTickDone {
                instance,
                stage,
                node,
                block_lo,
                block_hi,
            } => write!(s, ",instance={instance},stage={stage},node={node},blocks={block_lo}-{block_hi}"),
            Payload::TokenEmitted {
                request,
                model,
                instance,
                index,
                scaled,
            } => write!(
                s,
                ",request={request},model={model},instance={instance},index={index},scaled={}",
                u8::from(*scaled)
            ),
            Payload::RequestDone {
                request,
                model,
                tokens,
            } => write!(s, ",request={request},model={model},tokens={tokens}"),
            Payload::Eviction { node, model, tier } => {
                write!(s, ",node={node},model={model},tier={tier}")
            }
            Payload::ScaleOut {
                scale_id,
                model,
                nodes,
                allocated_gpus,
                initial,
            } => write!(
                s,
                ",scale={scale_id},model={model},nodes={},allocated_gpus={allocated_gpus},initial={}",
                node_list(nodes),
                u8::from(*initial)
            ),
            Payload::ScaleIn {
                model,
                node,
                allocated_gpus,
            } => write!(s, ",model={model},node={node},allocated_gpus={allocated_gpus}"),
            Payload::ModeSwitch {
                instance,
                model,
                requests,
                recompute_s,
            } => write!(
                s,
                ",instance={instance},model={model},requests={requests},recompute_s={recompute_s:.9}"
            ),
            Payload::Horizon {
                in_flight,
                allocated_gpus,
            } => write!(s, ",in_flight={in_flight},allocated_gpus={allocated_gpus}"),
        };
        f.write_str(&s)
    }
}

pub fn events_to_text(events: &[SimEvent]) -> String {
    let mut out = String::new();
    for e in events {
        let _ = writeln!(out, "{e}");
    }
    out
}

struct Fields<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    fn get(&self, key: &str) -> Result<&'a str> {
        self.pairs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Validation(format!("event line {}: missing `{key}`", self.line)))
    }

    fn num<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let v = self.get(key)?;
        v.parse()
            .map_err(|e| Error::Validation(format!("event line {}: `{key}={v}`: {e}", self.line)))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        Ok(self.num::<u8>(key)? != 0)
    }

    fn model(&self) -> Result<ModelId> {
        Ok(ModelId(self.get("model")?.to_string()))
    }
}

fn parse_tier(s: &str) -> Result<Tier> {
    Ok(match s {
        "GPU" => Tier::Gpu,
        "MEMORY" => Tier::Memory,
        "SSD" => Tier::Ssd,
        "NULL" => Tier::Null,
        _ => return Err(Error::Validation(format!("unknown tier `{s}`"))),
    })
}

/// Parses an event log written by [`events_to_text`].
pub fn parse_event_log(text: &str) -> Result<Vec<SimEvent>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let time_s: f64 = parts
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|e| Error::Validation(format!("event line {}: time: {e}", i + 1)))?;
        let kind: EventKind = parts.next().unwrap_or_default().parse()?;
        let pairs = parts
            .map(|p| p.split_once('=').unwrap_or((p, "")))
            .collect();
        let f = Fields { line: i + 1, pairs };
        let payload = match kind {
            EventKind::RequestArrival => Payload::RequestArrival {
                request: f.num("request")?,
                model: f.model()?,
                prompt_tokens: f.num("prompt")?,
                output_tokens: f.num("output")?,
            },
            EventKind::TransferStepDone => Payload::TransferStepDone {
                scale_id: f.num("scale")?,
                model: f.model()?,
                step: f.num("step")?,
            },
            EventKind::LoadChunkDone => Payload::LoadChunkDone {
                scale_id: f.num("scale")?,
                model: f.model()?,
                node: NodeId(f.num("node")?),
                block: BlockId(f.num("block")?),
                path: LoadPath::parse(f.get("path")?)?,
            },
            EventKind::StageTickDone => {
                let (lo, hi) = f.get("blocks")?.split_once('-').ok_or_else(|| {
                    Error::Validation(format!("event line {}: bad blocks range", i + 1))
                })?;
                let p = |v: &str| {
                    v.parse::<u32>()
                        .map_err(|e| Error::Validation(format!("event line {}: {e}", i + 1)))
                };
                Payload::StageTickDone {
                    instance: f.num("instance")?,
                    stage: f.num("stage")?,
                    node: NodeId(f.num("node")?),
                    block_lo: p(lo)?,
                    block_hi: p(hi)?,
                }
            }
            EventKind::TokenEmitted => Payload::TokenEmitted {
                request: f.num("request")?,
                model: f.model()?,
                instance: f.num("instance")?,
                index: f.num("index")?,
                scaled: f.flag("scaled")?,
            },
            EventKind::RequestDone => Payload::RequestDone {
                request: f.num("request")?,
                model: f.model()?,
                tokens: f.num("tokens")?,
            },
            EventKind::Eviction => Payload::Eviction {
                node: NodeId(f.num("node")?),
                model: f.model()?,
                tier: parse_tier(f.get("tier")?)?,
            },
            EventKind::ScaleOut => {
                let raw = f.get("nodes")?;
                let nodes = raw
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<u32>()
                            .map(NodeId)
                            .map_err(|e| Error::Validation(format!("event line {}: {e}", i + 1)))
                    })
                    .collect::<Result<_>>()?;
                Payload::ScaleOut {
                    scale_id: f.num("scale")?,
                    model: f.model()?,
                    nodes,
                    allocated_gpus: f.num("allocated_gpus")?,
                    initial: f.flag("initial")?,
                }
            }
            EventKind::ScaleIn => Payload::ScaleIn {
                model: f.model()?,
                node: NodeId(f.num("node")?),
                allocated_gpus: f.num("allocated_gpus")?,
            },
            EventKind::ModeSwitch => Payload::ModeSwitch {
                instance: f.num("instance")?,
                model: f.model()?,
                requests: f.num("requests")?,
                recompute_s: f.num("recompute_s")?,
            },
            EventKind::Horizon => Payload::Horizon {
                in_flight: f.num("in_flight")?,
                allocated_gpus: f.num("allocated_gpus")?,
            },
        };
        out.push(SimEvent { time_s, payload });
    }
    Ok(out)
}
