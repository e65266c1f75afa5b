//! Train/test decontamination: a training document is flagged when it
//! shares a contiguous run of more than `threshold` tokens with any test
//! document.
//!
//! Every `(threshold + 1)`-token window of the test set is indexed by a
//! rolling hash. Training windows that hit the index are compared token by
//! token, and each verified match is extended to its maximal run so the
//! reported overlap is the exact longest common run for the pair.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::dedup::fmix64;
use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, TokenizedDocument};

pub const DEFAULT_THRESHOLD: usize = 50;

/// Token sequences together with the fingerprint of the tokenizer that
/// produced them.
#[derive(Debug, Clone, Copy)]
pub struct Tokenized<'a> {
    pub fingerprint: &'a str,
    pub docs: &'a [TokenizedDocument],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overlap {
    pub train_doc_id: String,
    pub test_doc_id: String,
    pub overlap_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContaminationReport {
    pub threshold: usize,
    pub train_documents: usize,
    pub test_documents: usize,
    /// One entry per contaminated (train, test) pair, sorted by ids.
    pub overlaps: Vec<Overlap>,
    /// Digest of the training corpus the report was computed on.
    pub source_digest: Option<String>,
    /// Digest of that corpus after removal.
    pub filtered_digest: Option<String>,
}

const BASE: u64 = 0x100_0000_01b3;

#[inline]
fn token_code(t: TokenId) -> u64 {
    fmix64(t as u64 + 1)
}

/// Polynomial hashes of every `m`-token window, rolled in O(1) per step.
fn window_hashes(tokens: &[TokenId], m: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
    let top = (1..m).fold(1u64, |p, _| p.wrapping_mul(BASE));
    let mut h = 0u64;
    let mut ready = false;
    (0..tokens.len()).filter_map(move |i| {
        if i >= m {
            h = h.wrapping_sub(token_code(tokens[i - m]).wrapping_mul(top));
        }
        h = h.wrapping_mul(BASE).wrapping_add(token_code(tokens[i]));
        ready |= i + 1 >= m;
        ready.then(|| (i + 1 - m, h))
    })
}

struct TestIndex<'a> {
    docs: &'a [TokenizedDocument],
    windows: FxHashMap<u64, Vec<(u32, u32)>>,
    m: usize,
}

impl<'a> TestIndex<'a> {
    fn build(docs: &'a [TokenizedDocument], m: usize) -> Self {
        let mut windows: FxHashMap<u64, Vec<(u32, u32)>> = FxHashMap::default();
        for (d, doc) in docs.iter().enumerate() {
            for (pos, h) in window_hashes(&doc.tokens, m) {
                windows.entry(h).or_default().push((d as u32, pos as u32));
            }
        }
        Self { docs, windows, m }
    }

    /// Longest verified run per test document for one training document.
    fn scan(&self, train: &[TokenId]) -> BTreeMap<u32, usize> {
        let mut best: BTreeMap<u32, usize> = BTreeMap::new();
        for (i, h) in window_hashes(train, self.m) {
            let Some(hits) = self.windows.get(&h) else {
                continue;
            };
            for &(d, j) in hits {
                let test = &self.docs[d as usize].tokens;
                let j = j as usize;
                if train[i..i + self.m] != test[j..j + self.m] {
                    continue;
                }
                // runs are measured once, from their first window
                if i > 0 && j > 0 && train[i - 1] == test[j - 1] {
                    continue;
                }
                let run = self.m
                    + train[i + self.m..]
                        .iter()
                        .zip(&test[j + self.m..])
                        .take_while(|(a, b)| a == b)
                        .count();
                let slot = best.entry(d).or_insert(0);
                *slot = (*slot).max(run);
            }
        }
        best
    }
}

pub fn find_contaminated(
    train: Tokenized<'_>,
    test: Tokenized<'_>,
    threshold: usize,
) -> Result<ContaminationReport> {
    if train.fingerprint != test.fingerprint {
        return Err(Error::FingerprintMismatch {
            left: train.fingerprint.into(),
            right: test.fingerprint.into(),
        });
    }
    let index = TestIndex::build(test.docs, threshold + 1);
    log::info!(
        "indexed {} distinct {}-token test windows",
        index.windows.len(),
        threshold + 1
    );
    let mut overlaps: Vec<Overlap> = train
        .docs
        .par_iter()
        .flat_map_iter(|doc| {
            index.scan(&doc.tokens).into_iter().map(|(d, len)| Overlap {
                train_doc_id: doc.id.clone(),
                test_doc_id: test.docs[d as usize].id.clone(),
                overlap_len: len,
            })
        })
        .collect();
    overlaps.par_sort_unstable_by(|a, b| {
        (&a.train_doc_id, &a.test_doc_id).cmp(&(&b.train_doc_id, &b.test_doc_id))
    });
    Ok(ContaminationReport {
        threshold,
        train_documents: train.docs.len(),
        test_documents: test.docs.len(),
        overlaps,
        source_digest: None,
        filtered_digest: None,
    })
}

impl ContaminationReport {
    /// Flagged training ids, sorted and unique.
    pub fn flagged(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.overlaps.iter().map(|o| o.train_doc_id.as_str()).collect();
        ids.dedup();
        ids
    }

    fn is_flagged(&self, id: &str) -> bool {
        self.overlaps
            .binary_search_by(|o| o.train_doc_id.as_str().cmp(id))
            .is_ok()
    }

    /// Records the digests of `corpus` before and after removal so that
    /// `apply` can check it is given the same corpus.
    pub fn bind(mut self, corpus: &Corpus) -> Self {
        let filtered = corpus.retain(|d| !self.is_flagged(&d.id));
        self.source_digest = Some(corpus.digest());
        self.filtered_digest = Some(filtered.digest());
        self
    }

    /// Drops flagged documents. Applying to an already filtered corpus
    /// returns it unchanged.
    pub fn apply(&self, corpus: &Corpus) -> Result<Corpus> {
        let (Some(source), Some(filtered)) = (&self.source_digest, &self.filtered_digest) else {
            return Err(Error::Consistency(
                "contamination report is not bound to a corpus".into(),
            ));
        };
        let digest = corpus.digest();
        if &digest == filtered {
            log::info!("corpus already decontaminated; nothing removed");
            return Ok(corpus.clone());
        }
        if &digest != source {
            return Err(Error::DigestMismatch {
                expected: source.clone(),
                found: digest,
            });
        }
        let out = corpus.retain(|d| !self.is_flagged(&d.id));
        log::info!("removed {} contaminated documents", corpus.len() - out.len());
        Ok(out)
    }

    pub fn write<W: Write>(&self, mut out: W, config_digest: Option<&str>) -> std::io::Result<()> {
        let header = ReportHeader {
            artifact: ARTIFACT.into(),
            threshold: self.threshold,
            train_documents: self.train_documents,
            test_documents: self.test_documents,
            flagged: self.flagged().len(),
            overlaps: self.overlaps.len(),
            source_digest: self.source_digest.clone(),
            filtered_digest: self.filtered_digest.clone(),
            config_digest: config_digest.map(str::to_owned),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for o in &self.overlaps {
            serde_json::to_writer(&mut out, o)?;
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
        let header: ReportHeader = match lines.next() {
            Some((_, l)) => serde_json::from_str(&l.map_err(|e| bad(1, e.to_string()))?)
                .map_err(|e| bad(1, e.to_string()))?,
            None => return Err(bad(1, "empty file".into())),
        };
        if header.artifact != ARTIFACT {
            return Err(bad(1, format!("expected a {ARTIFACT} file, found {}", header.artifact)));
        }
        let mut overlaps = Vec::with_capacity(header.overlaps);
        for (i, l) in lines {
            let l = l.map_err(|e| bad(i + 1, e.to_string()))?;
            if !l.trim().is_empty() {
                overlaps.push(serde_json::from_str(&l).map_err(|e| bad(i + 1, e.to_string()))?);
            }
        }
        if overlaps.len() != header.overlaps {
            return Err(bad(0, format!(
                "header declares {} overlaps, found {}",
                header.overlaps,
                overlaps.len()
            )));
        }
        Ok(Self {
            threshold: header.threshold,
            train_documents: header.train_documents,
            test_documents: header.test_documents,
            overlaps,
            source_digest: header.source_digest,
            filtered_digest: header.filtered_digest,
        })
    }
}

pub const ARTIFACT: &str = "contamination";

#[derive(Debug, Serialize, Deserialize)]
struct ReportHeader {
    artifact: String,
    threshold: usize,
    train_documents: usize,
    test_documents: usize,
    flagged: usize,
    overlaps: usize,
    source_digest: Option<String>,
    filtered_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_digest: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;

    fn doc(id: &str, tokens: Vec<u32>) -> TokenizedDocument {
        TokenizedDocument { id: id.into(), tokens }
    }

    fn set(docs: &[TokenizedDocument]) -> Tokenized<'_> {
        Tokenized { fingerprint: "fp", docs }
    }

    /// `prefix` private tokens, then `shared` tokens of the test run, then
    /// more private tokens.
    fn planted(shared: usize) -> (TokenizedDocument, TokenizedDocument) {
        let test: Vec<u32> = (0..200).collect();
        let mut train: Vec<u32> = (1000..1030).collect();
        train.extend(40..40 + shared as u32);
        train.extend(2000..2030);
        (doc("train", train), doc("test", test))
    }

    #[test]
    fn threshold_is_strict() {
        for (shared, flagged) in [(50, false), (51, true), (60, true)] {
            let (train, test) = planted(shared);
            let r = find_contaminated(set(&[train]), set(&[test]), 50).unwrap();
            assert_eq!(!r.overlaps.is_empty(), flagged, "{shared}");
            if flagged {
                assert_eq!(r.overlaps[0].overlap_len, shared);
            }
        }
    }

    #[test]
    fn reports_longest_run_per_pair() {
        let test = doc("t", (0..300).collect());
        let mut tokens: Vec<u32> = (0..60).collect();
        tokens.push(9999);
        tokens.extend(100..180);
        let r = find_contaminated(set(&[doc("x", tokens)]), set(&[test]), 50).unwrap();
        assert_eq!(r.overlaps.len(), 1);
        assert_eq!(r.overlaps[0].overlap_len, 80);
    }

    #[test]
    fn repeated_content_within_test_doc() {
        let mut t: Vec<u32> = (0..55).collect();
        t.extend(0..70);
        let r = find_contaminated(set(&[doc("x", (0..70).collect())]), set(&[doc("t", t)]), 50).unwrap();
        assert_eq!(r.overlaps[0].overlap_len, 70);
    }

    #[test]
    fn fingerprints_must_match() {
        let a = [doc("a", vec![1])];
        let err = find_contaminated(set(&a), Tokenized { fingerprint: "other", docs: &a }, 50);
        assert!(matches!(err, Err(Error::FingerprintMismatch { .. })));
    }

    #[test]
    fn rolling_hash_matches_direct() {
        let tokens: Vec<u32> = (0..40).map(|i| (i * 7919) % 23).collect();
        let m = 6;
        let rolled: Vec<(usize, u64)> = window_hashes(&tokens, m).collect();
        assert_eq!(rolled.len(), tokens.len() - m + 1);
        for (pos, h) in rolled {
            let direct = tokens[pos..pos + m]
                .iter()
                .fold(0u64, |acc, &t| acc.wrapping_mul(BASE).wrapping_add(token_code(t)));
            assert_eq!(h, direct);
        }
        assert_eq!(window_hashes(&tokens[..3], m).count(), 0);
    }

    fn corpus(n: usize) -> Corpus {
        Corpus::from_documents(
            (0..n)
                .map(|i| Document {
                    id: format!("d{i}"),
                    text: format!("doc {i}"),
                    tokens: None,
                })
                .collect(),
        )
        .unwrap()
    }

    fn report_flagging(ids: &[&str]) -> ContaminationReport {
        ContaminationReport {
            threshold: 50,
            train_documents: 10,
            test_documents: 1,
            overlaps: ids
                .iter()
                .map(|id| Overlap {
                    train_doc_id: id.to_string(),
                    test_doc_id: "t".into(),
                    overlap_len: 51,
                })
                .collect(),
            source_digest: None,
            filtered_digest: None,
        }
    }

    #[test]
    fn apply_filters_in_order_and_is_idempotent() {
        let c = corpus(10);
        let r = report_flagging(&["d3", "d7"]).bind(&c);
        let once = r.apply(&c).unwrap();
        assert_eq!(once.len(), 8);
        let ids: Vec<&str> = once.docs().iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["d0", "d1", "d2", "d4", "d5", "d6", "d8", "d9"]);
        assert_eq!(r.apply(&once).unwrap().docs(), once.docs());
        assert!(matches!(r.apply(&corpus(9)), Err(Error::DigestMismatch { .. })));
        assert!(report_flagging(&[]).apply(&c).is_err());

        let empty = report_flagging(&[]).bind(&c);
        assert_eq!(empty.apply(&c).unwrap().docs(), c.docs());
    }

    #[test]
    fn report_round_trip() {
        let c = corpus(4);
        let r = report_flagging(&["d1"]).bind(&c);
        let mut buf = Vec::new();
        r.write(&mut buf, Some("cfg")).unwrap();
        assert_eq!(ContaminationReport::read(&buf[..]).unwrap(), r);
    }
}
