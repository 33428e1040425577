//! On-disk formats: embedding files (binary and JSON), run configuration, and
//! the JSON plan document.
//!
//! Binary embedding layout, all little-endian:
//!
//! ```text
//! offset 0   8 bytes   ASCII "LDDREMB1"
//! offset 8   u32       T (frame count)
//! offset 12  u32       d (dimension)
//! offset 16  T*d f32   frame embeddings, row-major
//!            d f32     query embedding
//! ```
//!
//! The file is exactly `16 + 4 * d * (T + 1)` bytes long.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alloc::PipelineOutput;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::types::{AllocationPlan, EmbeddingSet, Resolution};

pub const MAGIC: &[u8; 8] = b"LDDREMB1";
const HEADER_LEN: u64 = 16;

/// Tokens of one full-resolution frame under the default bounds.
pub const DEFAULT_W_MAX: u32 = 1024;
pub const DEFAULT_W_MIN: u32 = 256;
pub const DEFAULT_POOL_MULTIPLIER: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Select F frames, each at full resolution.
    Fixed,
    /// Select a larger pool, then retain and size frames by importance.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Frame-equivalent budget F; the token budget is `F * w_max`.
    pub frame_budget: usize,
    pub mode: Mode,
    pub w_min: u32,
    pub w_max: u32,
    pub tau: f64,
    pub pool_multiplier: f64,
    pub chunks: usize,
    pub seed: u64,
    pub frame_height: u32,
    pub frame_width: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            frame_budget: 8,
            mode: Mode::Dynamic,
            w_min: DEFAULT_W_MIN,
            w_max: DEFAULT_W_MAX,
            tau: crate::gd::DEFAULT_TAU,
            pool_multiplier: DEFAULT_POOL_MULTIPLIER,
            chunks: 1,
            seed: 0,
            frame_height: 448,
            frame_width: 448,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_budget == 0 {
            return Err(Error::Config("frame budget must be at least 1".into()));
        }
        if self.w_min == 0 || self.w_min > self.w_max {
            return Err(Error::InvalidBounds {
                w_min: self.w_min,
                w_max: self.w_max,
            });
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!(
                "tau must be finite and >= 0, got {}",
                self.tau
            )));
        }
        if !(self.pool_multiplier >= 1.0 && self.pool_multiplier.is_finite()) {
            return Err(Error::Config(format!(
                "pool multiplier must be finite and >= 1, got {}",
                self.pool_multiplier
            )));
        }
        if self.chunks == 0 {
            return Err(Error::Config("chunk count must be at least 1".into()));
        }
        if self.frame_height == 0 || self.frame_width == 0 {
            return Err(Error::Config("frame size must be positive".into()));
        }
        Ok(())
    }

    pub fn token_budget(&self) -> u64 {
        self.frame_budget as u64 * u64::from(self.w_max)
    }

    /// Candidate pool size for dynamic mode over `frames` frames.
    pub fn candidate_pool(&self, frames: usize) -> usize {
        let pool = (self.frame_budget as f64 * self.pool_multiplier).ceil() as usize;
        pool.max(1).min(frames)
    }
}

fn parse_header(bytes: &[u8]) -> Result<(usize, usize)> {
    if bytes.len() >= 8 && &bytes[..8] != MAGIC {
        let mut found = [0u8; 8];
        found.copy_from_slice(&bytes[..8]);
        return Err(Error::BadMagic { found });
    }
    if (bytes.len() as u64) < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len() as u64,
        });
    }
    let t = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    let d = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes"));
    if t == 0 || d == 0 {
        return Err(Error::Malformed(format!("header declares T={t}, d={d}")));
    }
    let expected = HEADER_LEN + 4 * u64::from(d) * (u64::from(t) + 1);
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(Error::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after offset {expected}",
            actual - expected
        )));
    }
    Ok((t as usize, d as usize))
}

/// Decodes an in-memory binary embedding file.
pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingSet> {
    let (t, d) = parse_header(bytes)?;
    let mut values = Vec::with_capacity(t * d + d);
    for (i, chunk) in bytes[HEADER_LEN as usize..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            let offset = HEADER_LEN as usize + 4 * i;
            let what = if i < t * d {
                format!("frame {}, component {}", i / d, i % d)
            } else {
                format!("query, component {}", i - t * d)
            };
            return Err(Error::NonFinite {
                location: format!("byte offset {offset} ({what})"),
            });
        }
        values.push(f64::from(v));
    }
    let query = values.split_off(t * d);
    EmbeddingSet::new(Matrix::from_vec(t, d, values)?, query)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes)
}

/// Encodes frames and query into the binary layout, narrowing to `f32`.
pub fn encode_embeddings(set: &EmbeddingSet) -> Vec<u8> {
    let (t, d) = (set.frame_count(), set.dim());
    let mut out = Vec::with_capacity(16 + 4 * d * (t + 1));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for &v in set.frames().as_slice().iter().chain(set.query()) {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn write_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_embeddings(set)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingJson {
    frames: Vec<Vec<f64>>,
    query: Vec<f64>,
}

/// Parses the JSON embedding form. Values are stored at `f32` precision, the
/// same as the binary form, so both paths agree bit for bit.
pub fn parse_embeddings_json(text: &str) -> Result<EmbeddingSet> {
    let doc: EmbeddingJson = serde_json::from_str(text)?;
    let narrow = |v: f64, location: String| -> Result<f64> {
        let n = v as f32;
        if n.is_finite() {
            Ok(f64::from(n))
        } else {
            Err(Error::NonFinite { location })
        }
    };
    let d = doc.frames.first().map_or(0, Vec::len);
    let mut rows = Vec::with_capacity(doc.frames.len());
    for (t, row) in doc.frames.iter().enumerate() {
        if row.len() != d {
            return Err(Error::DimensionMismatch {
                context: "frame row",
                expected: d,
                actual: row.len(),
            });
        }
        rows.push(
            row.iter()
                .enumerate()
                .map(|(c, &v)| narrow(v, format!("frame {t}, component {c}")))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    if doc.frames.is_empty() {
        return Err(Error::Empty("frame embeddings"));
    }
    if doc.query.len() != d {
        return Err(Error::DimensionMismatch {
            context: "query embedding",
            expected: d,
            actual: doc.query.len(),
        });
    }
    let query = doc
        .query
        .iter()
        .enumerate()
        .map(|(c, &v)| narrow(v, format!("query, component {c}")))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSet::new(Matrix::from_rows(&rows)?, query)
}

pub fn read_embeddings_json(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings_json(&text)
}

/// Dispatches on extension: `.json` is parsed as JSON, anything else as binary.
pub fn read_any(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("json") => read_embeddings_json(path),
        _ => read_embeddings(path),
    }
}

/// Rounds to 9 significant digits.
fn sig9(x: f64) -> f64 {
    format!("{x:.8e}").parse().expect("formatted float parses")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub frame_index: usize,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedRecord {
    pub frame_index: usize,
    /// Position in the importance ranking (0 = most important).
    pub gd_rank: usize,
    pub gd_score: f64,
    pub density_aware_score: f64,
    pub tokens: u32,
    pub height_px: u32,
    pub width_px: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub k_star: usize,
    pub total_tokens: u64,
    pub budget: u64,
}

/// Serialized form of a run. Retained frames are listed in temporal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub config: RunConfig,
    pub frame_count: usize,
    pub candidate_pool: usize,
    pub exhausted: bool,
    pub candidates: Vec<CandidateRecord>,
    pub retained: Vec<RetainedRecord>,
    pub totals: Totals,
}

impl PlanDocument {
    pub fn from_output(out: &PipelineOutput) -> Self {
        let plan = &out.plan;
        let mut config = out.config.clone();
        config.tau = sig9(config.tau);
        config.pool_multiplier = sig9(config.pool_multiplier);
        let candidates = out
            .trace
            .selected()
            .iter()
            .zip(out.trace.gains())
            .map(|(&frame_index, &g)| CandidateRecord {
                frame_index,
                gain: sig9(g),
            })
            .collect();
        let retained = plan
            .temporal_order()
            .into_iter()
            .map(|rank| {
                let frame_index = plan.retained()[rank];
                let pos = out
                    .scores
                    .position(frame_index)
                    .expect("retained frames come from the scored set");
                let res = plan.resolutions()[rank];
                RetainedRecord {
                    frame_index,
                    gd_rank: rank,
                    gd_score: sig9(out.scores.gd()[pos]),
                    density_aware_score: sig9(out.scores.density_aware()[pos]),
                    tokens: plan.tokens()[rank],
                    height_px: res.height_px,
                    width_px: res.width_px,
                }
            })
            .collect();
        Self {
            config,
            frame_count: out.frame_count,
            candidate_pool: out.candidate_pool,
            exhausted: out.trace.exhausted(),
            candidates,
            retained,
            totals: Totals {
                k_star: plan.k_star(),
                total_tokens: plan.total_tokens(),
                budget: plan.budget(),
            },
        }
    }

    /// Re-checks the plan invariants on a parsed document.
    pub fn validate(&self) -> Result<AllocationPlan> {
        let mut by_rank: Vec<&RetainedRecord> = self.retained.iter().collect();
        by_rank.sort_by_key(|r| r.gd_rank);
        if by_rank.iter().enumerate().any(|(i, r)| r.gd_rank != i) {
            return Err(Error::Invariant(
                "retained ranks are not a contiguous prefix".into(),
            ));
        }
        if self
            .retained
            .windows(2)
            .any(|w| w[0].frame_index >= w[1].frame_index)
        {
            return Err(Error::Invariant(
                "retained frames are not in temporal order".into(),
            ));
        }
        if by_rank
            .windows(2)
            .any(|w| w[0].density_aware_score < w[1].density_aware_score)
        {
            return Err(Error::Invariant(
                "retained frames are not sorted by importance".into(),
            ));
        }
        let candidates: std::collections::HashSet<usize> =
            self.candidates.iter().map(|c| c.frame_index).collect();
        if let Some(r) = self
            .retained
            .iter()
            .find(|r| !candidates.contains(&r.frame_index))
        {
            return Err(Error::Invariant(format!(
                "retained frame {} is not a selected candidate",
                r.frame_index
            )));
        }
        let plan = AllocationPlan::new(
            by_rank.iter().map(|r| r.frame_index).collect(),
            by_rank.iter().map(|r| r.tokens).collect(),
            by_rank
                .iter()
                .map(|r| Resolution {
                    height_px: r.height_px,
                    width_px: r.width_px,
                })
                .collect(),
            self.totals.budget,
            self.config.w_min,
            self.config.w_max,
        )?;
        if plan.total_tokens() != self.totals.total_tokens || plan.k_star() != self.totals.k_star {
            return Err(Error::Invariant(
                "totals disagree with retained records".into(),
            ));
        }
        Ok(plan)
    }
}

/// Deterministic pretty-printed JSON for a run.
pub fn render_plan(out: &PipelineOutput) -> String {
    let mut s =
        serde_json::to_string_pretty(&PlanDocument::from_output(out)).expect("plan serializes");
    s.push('\n');
    s
}

pub fn write_plan(out: &PipelineOutput, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_plan(out)).map_err(|e| Error::io(path, e))
}

pub fn parse_plan(text: &str) -> Result<PlanDocument> {
    Ok(serde_json::from_str(text)?)
}
