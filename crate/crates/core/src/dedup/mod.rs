//! MinHashLSH hard deduplication: signatures over token shingles, banded
//! buckets, connected components of co-bucketed documents, and one kept
//! representative per component.

mod lsh;
mod minhash;
mod union_find;

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::TokenizedDocument;

pub use lsh::{candidate_probability, lsh_buckets, BucketMap};
pub use minhash::{fmix64, matching_fraction, MinHasher};
pub use union_find::{components, UnionFind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeepPolicy {
    /// Smallest doc id.
    #[default]
    FirstId,
    /// Most tokens, smallest doc id on ties.
    Longest,
}

impl fmt::Display for KeepPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KeepPolicy::FirstId => "first-id",
            KeepPolicy::Longest => "longest",
        })
    }
}

impl FromStr for KeepPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first-id" => Ok(KeepPolicy::FirstId),
            "longest" => Ok(KeepPolicy::Longest),
            other => Err(Error::Config(format!(
                "keep policy must be `first-id` or `longest`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupParams {
    pub hashes: usize,
    pub shingle: usize,
    pub bands: usize,
    pub rows: usize,
    pub seed: u64,
    pub policy: KeepPolicy,
}

impl Default for DedupParams {
    fn default() -> Self {
        Self {
            hashes: 128,
            shingle: 5,
            bands: 16,
            rows: 8,
            seed: 0,
            policy: KeepPolicy::FirstId,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupDecision {
    pub doc_id: String,
    pub cluster_id: usize,
    pub keep: bool,
}

/// Marks one member of each cluster as kept. `ids[i]` and `lengths[i]`
/// describe document `i`.
pub fn keep_one(
    clusters: &[Vec<usize>],
    ids: &[&str],
    lengths: &[usize],
    policy: KeepPolicy,
) -> Vec<DedupDecision> {
    let mut out: Vec<DedupDecision> = Vec::with_capacity(ids.len());
    for (cluster_id, members) in clusters.iter().enumerate() {
        let keep = match policy {
            KeepPolicy::FirstId => members.iter().copied().min_by_key(|&i| ids[i]),
            KeepPolicy::Longest => members
                .iter()
                .copied()
                .min_by(|&a, &b| lengths[b].cmp(&lengths[a]).then_with(|| ids[a].cmp(ids[b]))),
        };
        out.extend(members.iter().map(|&i| DedupDecision {
            doc_id: ids[i].to_owned(),
            cluster_id,
            keep: Some(i) == keep,
        }));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DedupOutcome {
    pub params: DedupParams,
    /// Sorted by doc id.
    pub decisions: Vec<DedupDecision>,
    pub clusters: usize,
    pub candidate_links: usize,
}

impl DedupOutcome {
    pub fn kept(&self) -> usize {
        self.decisions.iter().filter(|d| d.keep).count()
    }

    pub fn removed(&self) -> usize {
        self.decisions.len() - self.kept()
    }
}

/// Full baseline. Cluster ids are numbered by each cluster's smallest
/// doc id, so results do not depend on input order or thread count.
pub fn hard_dedup(docs: &[TokenizedDocument], params: DedupParams) -> Result<DedupOutcome> {
    let hasher = MinHasher::new(params.hashes, params.shingle, params.seed)?;
    if params.bands * params.rows != params.hashes {
        return Err(Error::Config(format!(
            "bands ({}) x rows ({}) must equal hashes ({})",
            params.bands, params.rows, params.hashes
        )));
    }
    let mut sorted: Vec<&TokenizedDocument> = docs.iter().collect();
    sorted.par_sort_unstable_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::DuplicateId {
            id: w[0].id.clone(),
            path: "<dedup input>".into(),
            line: 0,
        });
    }
    let signatures: Vec<Vec<u64>> = sorted.par_iter().map(|d| hasher.signature(&d.tokens)).collect();
    let buckets = lsh_buckets(&signatures, params.bands, params.rows)?;
    let links = buckets.linking_pairs();
    let clusters = components(sorted.len(), &links);
    let ids: Vec<&str> = sorted.iter().map(|d| d.id.as_str()).collect();
    let lengths: Vec<usize> = sorted.iter().map(|d| d.tokens.len()).collect();
    let mut decisions = keep_one(&clusters, &ids, &lengths, params.policy);
    decisions.sort_unstable_by(|a, b| a.doc_id.cmp(&b.doc_id));
    log::info!(
        "hard dedup: {} documents, {} clusters, {} removed",
        decisions.len(),
        clusters.len(),
        decisions.len() - clusters.len()
    );
    Ok(DedupOutcome {
        params,
        decisions,
        clusters: clusters.len(),
        candidate_links: links.len(),
    })
}

pub const ARTIFACT: &str = "dedup";

#[derive(Debug, Serialize, Deserialize)]
struct DedupHeader {
    artifact: String,
    #[serde(flatten)]
    params: DedupParams,
    documents: usize,
    clusters: usize,
    kept: usize,
    candidate_links: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_digest: Option<String>,
}

impl DedupOutcome {
    pub fn write<W: Write>(&self, mut out: W, config_digest: Option<&str>) -> std::io::Result<()> {
        let header = DedupHeader {
            artifact: ARTIFACT.into(),
            params: self.params,
            documents: self.decisions.len(),
            clusters: self.clusters,
            kept: self.kept(),
            candidate_links: self.candidate_links,
            config_digest: config_digest.map(str::to_owned),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for d in &self.decisions {
            serde_json::to_writer(&mut out, d)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let bad = |line: usize, message: String| Error::Malformed {
            path: ARTIFACT.into(),
            line,
            message,
        };
        let mut lines = input.lines().enumerate();
        let header: DedupHeader = match lines.next() {
            Some((_, l)) => serde_json::from_str(&l.map_err(|e| bad(1, e.to_string()))?)
                .map_err(|e| bad(1, e.to_string()))?,
            None => return Err(bad(1, "empty file".into())),
        };
        if header.artifact != ARTIFACT {
            return Err(bad(1, format!("expected a {ARTIFACT} file, found {}", header.artifact)));
        }
        let mut decisions = Vec::with_capacity(header.documents);
        for (i, l) in lines {
            let l = l.map_err(|e| bad(i + 1, e.to_string()))?;
            if !l.trim().is_empty() {
                decisions.push(serde_json::from_str(&l).map_err(|e| bad(i + 1, e.to_string()))?);
            }
        }
        if decisions.len() != header.documents {
            return Err(bad(0, format!(
                "header declares {} decisions, found {}",
                header.documents,
                decisions.len()
            )));
        }
        Ok(Self {
            params: header.params,
            decisions,
            clusters: header.clusters,
            candidate_links: header.candidate_links,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, tokens: Vec<u32>) -> TokenizedDocument {
        TokenizedDocument { id: id.into(), tokens }
    }

    #[test]
    fn keep_first_id_and_longest() {
        let ids = ["c", "a", "b"];
        let lens = [5, 3, 9];
        let clusters = vec![vec![0, 1, 2]];
        let first = keep_one(&clusters, &ids, &lens, KeepPolicy::FirstId);
        assert_eq!(first.iter().filter(|d| d.keep).map(|d| d.doc_id.as_str()).collect::<Vec<_>>(), ["a"]);
        let longest = keep_one(&clusters, &ids, &lens, KeepPolicy::Longest);
        assert_eq!(longest.iter().filter(|d| d.keep).map(|d| d.doc_id.as_str()).collect::<Vec<_>>(), ["b"]);
        let tie = keep_one(&clusters, &ids, &[4, 4, 4], KeepPolicy::Longest);
        assert!(tie.iter().any(|d| d.keep && d.doc_id == "a"));
    }

    #[test]
    fn singletons_are_kept() {
        let out = keep_one(&[vec![0], vec![1]], &["x", "y"], &[1, 1], KeepPolicy::FirstId);
        assert!(out.iter().all(|d| d.keep));
    }

    #[test]
    fn near_copies_collapse() {
        let base: Vec<u32> = (0..200).collect();
        let mut edited = base.clone();
        edited[100] = 9999;
        let other: Vec<u32> = (500..700).collect();
        let docs = vec![
            doc("z-copy", base.clone()),
            doc("a-orig", base),
            doc("m-edit", edited),
            doc("q-other", other),
        ];
        let out = hard_dedup(&docs, DedupParams::default()).unwrap();
        assert_eq!(out.clusters, 2);
        assert_eq!(out.kept(), 2);
        let kept: Vec<&str> = out.decisions.iter().filter(|d| d.keep).map(|d| d.doc_id.as_str()).collect();
        assert_eq!(kept, ["a-orig", "q-other"]);
        // cluster of the smallest id comes first
        assert_eq!(out.decisions[0].cluster_id, 0);
    }

    #[test]
    fn input_order_and_round_trip() {
        let docs: Vec<TokenizedDocument> = (0..30)
            .map(|i| doc(&format!("d{i:02}"), (0..50).map(|t| (t * (i % 4 + 1)) as u32).collect()))
            .collect();
        let a = hard_dedup(&docs, DedupParams::default()).unwrap();
        let mut rev = docs.clone();
        rev.reverse();
        assert_eq!(a, hard_dedup(&rev, DedupParams::default()).unwrap());
        assert_eq!(a.clusters, 4);
        let mut buf = Vec::new();
        a.write(&mut buf, None).unwrap();
        assert_eq!(DedupOutcome::read(&buf[..]).unwrap(), a);
    }

    #[test]
    fn policy_parse() {
        assert_eq!("longest".parse::<KeepPolicy>().unwrap(), KeepPolicy::Longest);
        assert!("random".parse::<KeepPolicy>().is_err());
    }
}
