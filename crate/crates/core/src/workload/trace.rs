use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, ModelId, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub arrival_s: f64,
    pub model_id: ModelId,
    pub prompt_tokens: u32,
    pub output_tokens: u32,
}

/// Header names to read each field from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub arrival_s: String,
    pub model_id: String,
    pub prompt_tokens: String,
    pub output_tokens: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            arrival_s: "arrival_s".into(),
            model_id: "model_id".into(),
            prompt_tokens: "prompt_tokens".into(),
            output_tokens: "output_tokens".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceOptions {
    pub columns: ColumnMap,
    /// Sort out-of-order rows instead of rejecting them.
    pub sort: bool,
}

pub fn load_trace(path: &Path, opts: &TraceOptions) -> Result<Vec<TraceRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace(f, opts)
}

/// Parses a trace with a header row. Row numbers in errors count data rows
/// from 1. Arrivals are shifted so the earliest is 0.
pub fn read_trace<R: Read>(input: R, opts: &TraceOptions) -> Result<Vec<TraceRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| Error::TraceRow {
            row: 0,
            reason: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Validation(format!("trace has no column `{name}`")))
    };
    let c = &opts.columns;
    let (ia, im, ip, io) = (
        col(&c.arrival_s)?,
        col(&c.model_id)?,
        col(&c.prompt_tokens)?,
        col(&c.output_tokens)?,
    );

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::TraceRow {
            row,
            reason: e.to_string(),
        })?;
        let field = |idx: usize, name: &str| {
            rec.get(idx).ok_or_else(|| Error::TraceRow {
                row,
                reason: format!("missing `{name}`"),
            })
        };
        let bad = |name: &str, e: &dyn std::fmt::Display| Error::TraceRow {
            row,
            reason: format!("`{name}`: {e}"),
        };
        let arrival_s: f64 = field(ia, &c.arrival_s)?
            .parse()
            .map_err(|e| bad(&c.arrival_s, &e))?;
        if !arrival_s.is_finite() {
            return Err(bad(&c.arrival_s, &"not finite"));
        }
        let model = field(im, &c.model_id)?;
        if model.is_empty() {
            return Err(bad(&c.model_id, &"empty"));
        }
        let prompt_tokens: u32 = field(ip, &c.prompt_tokens)?
            .parse()
            .map_err(|e| bad(&c.prompt_tokens, &e))?;
        let output_tokens: u32 = field(io, &c.output_tokens)?
            .parse()
            .map_err(|e| bad(&c.output_tokens, &e))?;
        if prompt_tokens == 0 {
            return Err(bad(&c.prompt_tokens, &"must be >= 1"));
        }
        if output_tokens == 0 {
            return Err(bad(&c.output_tokens, &"must be >= 1"));
        }
        if let Some(prev) = out.last().map(|r: &TraceRecord| r.arrival_s) {
            if arrival_s < prev && !opts.sort {
                return Err(Error::TraceRow {
                    row,
                    reason: format!("arrival {arrival_s} before previous row's {prev}"),
                });
            }
        }
        out.push(TraceRecord {
            arrival_s,
            model_id: ModelId(model.to_string()),
            prompt_tokens,
            output_tokens,
        });
    }
    // stable: equal timestamps keep file order
    out.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s));
    if let Some(t0) = out.first().map(|r| r.arrival_s) {
        for r in &mut out {
            r.arrival_s -= t0;
        }
    }
    Ok(out)
}

pub fn write_trace<W: Write>(out: W, records: &[TraceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::Validation(format!("writing trace: {e}"));
    w.write_record(["arrival_s", "model_id", "prompt_tokens", "output_tokens"])
        .map_err(wrap)?;
    for r in records {
        w.write_record([
            format!("{:.6}", r.arrival_s),
            r.model_id.to_string(),
            r.prompt_tokens.to_string(),
            r.output_tokens.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush()
        .map_err(|e| Error::Validation(format!("writing trace: {e}")))?;
    Ok(())
}

/// Checks the invariants a hand-built trace must satisfy before simulation.
pub fn validate_trace(records: &[TraceRecord]) -> Result<()> {
    for (i, r) in records.iter().enumerate() {
        let row = i + 1;
        if !(r.arrival_s.is_finite() && r.arrival_s >= 0.0) {
            return Err(Error::TraceRow {
                row,
                reason: "arrival_s must be finite and >= 0".into(),
            });
        }
        if r.prompt_tokens == 0 || r.output_tokens == 0 {
            return Err(Error::TraceRow {
                row,
                reason: "token counts must be >= 1".into(),
            });
        }
        if i > 0 && r.arrival_s < records[i - 1].arrival_s {
            return Err(Error::TraceRow {
                row,
                reason: "trace is not sorted by arrival".into(),
            });
        }
    }
    Ok(())
}
