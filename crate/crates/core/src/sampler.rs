//! Seeded draws from a weighted segment plan until a token budget is met.
//!
//! Each draw picks segment `k` with probability `W_k`, then the next
//! document of that segment's current shuffled pass. A segment reshuffles
//! once every member has been drawn.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::commonness::CommonnessRecord;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::reweight::SegmentPlan;

/// ChaCha20 stream seeded through `SeedableRng::seed_from_u64`.
pub struct SampleRng(ChaCha20Rng);

impl SampleRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha20Rng::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `0..n` without modulo bias (Lemire's multiply-shift).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Endless stream of `(segment, member index within segment)` draws.
pub struct Draws<'a> {
    plan: &'a SegmentPlan,
    rng: SampleRng,
    cumulative: Vec<f64>,
    passes: Vec<Pass>,
}

struct Pass {
    order: Vec<u32>,
    next: usize,
}

impl<'a> Draws<'a> {
    pub fn new(plan: &'a SegmentPlan, seed: u64) -> Result<Self> {
        let weights = plan
            .weights()
            .ok_or_else(|| Error::Config("segment plan has no weights; assign them first".into()))?;
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        let mut passes = Vec::with_capacity(plan.k());
        for k in 0..plan.k() {
            let len = plan.segment(k).len();
            if len == 0 {
                return Err(Error::Consistency(format!("segment {k} is empty")));
            }
            passes.push(Pass {
                order: (0..len as u32).collect(),
                next: len,
            });
        }
        Ok(Self {
            plan,
            rng: SampleRng::new(seed),
            cumulative,
            passes,
        })
    }

    fn pick_segment(&mut self) -> usize {
        let u = self.rng.unit_f64() * self.cumulative[self.cumulative.len() - 1];
        let k = self.cumulative.partition_point(|&c| c <= u);
        k.min(self.cumulative.len() - 1)
    }
}

impl Iterator for Draws<'_> {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<(usize, usize)> {
        let k = self.pick_segment();
        let pass = &mut self.passes[k];
        if pass.next == pass.order.len() {
            self.rng.shuffle(&mut pass.order);
            pass.next = 0;
        }
        let i = pass.order[pass.next] as usize;
        pass.next += 1;
        debug_assert!(i < self.plan.segment(k).len());
        Some((k, i))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub draw_index: u64,
    pub doc_id: String,
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingManifest {
    pub seed: u64,
    pub token_budget: u64,
    pub plan_digest: String,
    pub entries: Vec<ManifestEntry>,
    pub segment_draws: Vec<u64>,
    pub achieved_tokens: u64,
}

pub const ARTIFACT: &str = "manifest";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestHeader {
    artifact: String,
    seed: u64,
    token_budget: u64,
    plan_digest: String,
    draws: u64,
    achieved_tokens: u64,
    segment_draws: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_digest: Option<String>,
}

/// Draws until the running token total first reaches `token_budget`.
/// Token counts come from `records`.
pub fn sample(
    plan: &SegmentPlan,
    records: &[CommonnessRecord],
    token_budget: u64,
    seed: u64,
) -> Result<SamplingManifest> {
    if token_budget == 0 {
        return Err(Error::Config("token budget must be positive".into()));
    }
    let tokens: FxHashMap<&str, u64> = records.iter().map(|r| (r.doc_id.as_str(), r.n_tokens)).collect();
    if tokens.len() != plan.len() {
        return Err(Error::Consistency(format!(
            "plan covers {} documents but there are {} commonness records",
            plan.len(),
            tokens.len()
        )));
    }
    let sizes: Vec<Vec<u64>> = (0..plan.k())
        .map(|k| {
            plan.segment(k)
                .iter()
                .map(|id| {
                    tokens.get(id.as_str()).copied().ok_or_else(|| {
                        Error::Consistency(format!("plan document {id} has no commonness record"))
                    })
                })
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;

    let mut entries = Vec::new();
    let mut segment_draws = vec![0u64; plan.k()];
    let mut achieved = 0u64;
    for (draw_index, (k, i)) in Draws::new(plan, seed)?.enumerate() {
        achieved += sizes[k][i];
        segment_draws[k] += 1;
        entries.push(ManifestEntry {
            draw_index: draw_index as u64,
            doc_id: plan.segment(k)[i].clone(),
            segment: k,
        });
        if achieved >= token_budget {
            break;
        }
    }
    Ok(SamplingManifest {
        seed,
        token_budget,
        plan_digest: plan.digest(),
        entries,
        segment_draws,
        achieved_tokens: achieved,
    })
}

impl SamplingManifest {
    pub fn write<W: Write>(&self, mut out: W, config_digest: Option<&str>) -> std::io::Result<()> {
        let header = ManifestHeader {
            artifact: ARTIFACT.into(),
            seed: self.seed,
            token_budget: self.token_budget,
            plan_digest: self.plan_digest.clone(),
            draws: self.entries.len() as u64,
            achieved_tokens: self.achieved_tokens,
            segment_draws: self.segment_draws.clone(),
            config_digest: config_digest.map(str::to_owned),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<(Self, Option<String>)> {
        let bad = |line: usize, message: String| Error::Malformed {
            path: ARTIFACT.into(),
            line,
            message,
        };
        let mut lines = input.lines().enumerate();
        let header: ManifestHeader = match lines.next() {
            Some((_, l)) => serde_json::from_str(&l.map_err(|e| bad(1, e.to_string()))?)
                .map_err(|e| bad(1, e.to_string()))?,
            None => return Err(bad(1, "empty file".into())),
        };
        if header.artifact != ARTIFACT {
            return Err(bad(1, format!("expected a {ARTIFACT} file, found {}", header.artifact)));
        }
        let mut entries = Vec::new();
        for (i, l) in lines {
            let l = l.map_err(|e| bad(i + 1, e.to_string()))?;
            if !l.trim().is_empty() {
                entries.push(serde_json::from_str(&l).map_err(|e| bad(i + 1, e.to_string()))?);
            }
        }
        if entries.len() as u64 != header.draws {
            return Err(bad(0, format!("header declares {} draws, found {}", header.draws, entries.len())));
        }
        let manifest = Self {
            seed: header.seed,
            token_budget: header.token_budget,
            plan_digest: header.plan_digest,
            entries,
            segment_draws: header.segment_draws,
            achieved_tokens: header.achieved_tokens,
        };
        Ok((manifest, header.config_digest))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportFormat {
    /// One doc id per line, in draw order.
    #[default]
    IdList,
    /// One corpus record (the input JSON line) per draw.
    Text,
}

impl fmt::Display for ExportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExportFormat::IdList => "id-list",
            ExportFormat::Text => "text",
        })
    }
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "id-list" => Ok(ExportFormat::IdList),
            "text" => Ok(ExportFormat::Text),
            other => Err(Error::Config(format!("format must be `id-list` or `text`, got `{other}`"))),
        }
    }
}

pub fn export<W: Write>(manifest: &SamplingManifest, corpus: &Corpus, format: ExportFormat, out: W) -> Result<()> {
    let ids = manifest.entries.iter().map(|e| e.doc_id.as_str());
    match format {
        ExportFormat::IdList => write_id_list(ids, corpus, out),
        ExportFormat::Text => materialize(ids, corpus, out),
    }
}

fn write_id_list<'a, W: Write>(ids: impl Iterator<Item = &'a str>, corpus: &Corpus, mut out: W) -> Result<()> {
    let io = |e| Error::io("<export>", e);
    for id in ids {
        if corpus.get(id).is_none() {
            return Err(Error::UnknownDocument(id.into()));
        }
        writeln!(out, "{id}").map_err(io)?;
    }
    Ok(())
}

/// Writes the corpus record of each id in order.
pub fn materialize<'a, W: Write>(ids: impl Iterator<Item = &'a str>, corpus: &Corpus, mut out: W) -> Result<()> {
    let io = |e| Error::io("<export>", e);
    for id in ids {
        let doc = corpus.get(id).ok_or_else(|| Error::UnknownDocument(id.into()))?;
        serde_json::to_writer(&mut out, doc).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    Ok(())
}

/// Re-materializes an id-list export.
pub fn materialize_id_list<R: BufRead, W: Write>(ids: R, corpus: &Corpus, out: W) -> Result<()> {
    let ids: Vec<String> = ids
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io("<id list>", e))?;
    materialize(ids.iter().map(String::as_str).filter(|s| !s.is_empty()), corpus, out)
}
