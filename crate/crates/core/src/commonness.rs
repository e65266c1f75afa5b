//! Per-document commonness: the geometric mean of `P(w_i | context)` over
//! every token and the closing `</s>`.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ngram::{NGramModel, MAX_ORDER};
use crate::tokenizer::TokenizedDocument;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonnessRecord {
    pub doc_id: String,
    pub commonness: f64,
    /// Natural log of `commonness`, kept so consumers need not re-derive it.
    pub log_commonness: f64,
    /// Scored positions: document tokens plus `</s>`.
    pub n_tokens: u64,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Natural-log probabilities of each scored position of `tokens`.
pub fn token_log_probs(model: &NGramModel, tokens: &[u32]) -> Vec<f64> {
    let mut out = Vec::with_capacity(tokens.len() + 1);
    for_each_log_prob(model, tokens, |lp| out.push(lp));
    out
}

fn for_each_log_prob(model: &NGramModel, tokens: &[u32], mut f: impl FnMut(f64)) {
    let n = model.order();
    let r = model.reserved();
    // sliding window of the last n-1 ids, oldest first
    let mut ctx = [r.bos; MAX_ORDER];
    let ctx = &mut ctx[..n - 1];
    for &t in tokens.iter().chain(std::iter::once(&r.eos)) {
        let t = model.map_unknown(t);
        f(model.query(ctx, t));
        if !ctx.is_empty() {
            ctx.rotate_left(1);
            ctx[n - 2] = t;
        }
    }
}

/// Mean of the given natural-log probabilities, i.e. the log of their
/// geometric mean. Returns 0 for an empty input.
pub fn geometric_mean_log(logs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = CompensatedSum::default();
    let mut n = 0u64;
    for lp in logs {
        sum.add(lp);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (sum.value() / n as f64).min(0.0)
    }
}

pub fn score_document(model: &NGramModel, doc: &TokenizedDocument) -> CommonnessRecord {
    let mut sum = CompensatedSum::default();
    for_each_log_prob(model, &doc.tokens, |lp| sum.add(lp));
    let n = doc.tokens.len() as u64 + 1;
    let log_commonness = (sum.value() / n as f64).min(0.0);
    CommonnessRecord {
        doc_id: doc.id.clone(),
        commonness: log_commonness.exp(),
        log_commonness,
        n_tokens: n,
    }
}

/// Scores every document in parallel. Output is sorted by `doc_id`.
pub fn score_corpus(model: &NGramModel, docs: &[TokenizedDocument]) -> Vec<CommonnessRecord> {
    let mut out: Vec<CommonnessRecord> = docs.par_iter().map(|d| score_document(model, d)).collect();
    out.par_sort_unstable_by(|a, b| a.doc_id.cmp(&b.doc_id));
    log::info!(
        "scored {} documents, {} positions",
        out.len(),
        out.iter().map(|r| r.n_tokens).sum::<u64>()
    );
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommonnessHeader {
    pub artifact: String,
    pub order: usize,
    pub documents: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

pub const ARTIFACT: &str = "commonness";

pub fn write_records<W: Write>(
    mut out: W,
    order: usize,
    records: &[CommonnessRecord],
    config_digest: Option<&str>,
) -> std::io::Result<()> {
    let header = CommonnessHeader {
        artifact: ARTIFACT.into(),
        order,
        documents: records.len(),
        config_digest: config_digest.map(str::to_owned),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(input: R) -> Result<(CommonnessHeader, Vec<CommonnessRecord>)> {
    let mut lines = input.lines().enumerate();
    let bad = |line: usize, message: String| Error::Malformed {
        path: ARTIFACT.into(),
        line,
        message,
    };
    let header: CommonnessHeader = match lines.next() {
        Some((_, l)) => {
            let l = l.map_err(|e| bad(1, e.to_string()))?;
            serde_json::from_str(&l).map_err(|e| bad(1, e.to_string()))?
        }
        None => return Err(bad(1, "empty file".into())),
    };
    if header.artifact != ARTIFACT {
        return Err(bad(1, format!("expected a {ARTIFACT} file, found {}", header.artifact)));
    }
    let mut records = Vec::with_capacity(header.documents);
    for (i, l) in lines {
        let l = l.map_err(|e| bad(i + 1, e.to_string()))?;
        if l.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&l).map_err(|e| bad(i + 1, e.to_string()))?);
    }
    if records.len() != header.documents {
        return Err(bad(
            0,
            format!("header declares {} records, found {}", header.documents, records.len()),
        ));
    }
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::{count, EstimateOptions};
    use crate::tokenizer::Reserved;

    const R: Reserved = Reserved {
        unk: 10,
        bos: 11,
        eos: 12,
    };

    fn doc(id: &str, tokens: &[u32]) -> TokenizedDocument {
        TokenizedDocument {
            id: id.into(),
            tokens: tokens.to_vec(),
        }
    }

    fn model(docs: &[TokenizedDocument], n: usize) -> NGramModel {
        NGramModel::estimate(&count(docs, n, R).unwrap(), EstimateOptions::default()).unwrap()
    }

    #[test]
    fn compensated_sum_keeps_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }

    #[test]
    fn constant_probability_is_length_neutral() {
        let q: f64 = 0.037;
        for len in [1usize, 2, 7, 1000, 100_000] {
            let m = geometric_mean_log(std::iter::repeat_n(q.ln(), len));
            assert!((m.exp() - q).abs() < 1e-15, "{len}");
        }
    }

    #[test]
    fn record_fields_agree() {
        let docs = [doc("a", &[0, 1, 0, 1]), doc("b", &[1, 2])];
        let m = model(&docs, 3);
        let r = score_document(&m, &docs[0]);
        assert_eq!(r.n_tokens, 5);
        let lps = token_log_probs(&m, &docs[0].tokens);
        assert_eq!(lps.len(), 5);
        let mean = lps.iter().sum::<f64>() / 5.0;
        assert!((r.log_commonness - mean).abs() < 1e-12);
        assert!((r.commonness - mean.exp()).abs() < 1e-15);
        assert!(r.commonness > 0.0 && r.commonness <= 1.0);
    }

    #[test]
    fn window_matches_log_prob_with_full_context() {
        let docs = [doc("a", &[0, 1, 2, 3, 0, 1, 2]), doc("b", &[3, 3, 1])];
        let m = model(&docs, 4);
        let t = &docs[0].tokens;
        let lps = token_log_probs(&m, t);
        let mut padded = vec![R.bos; 3];
        padded.extend(t);
        padded.push(R.eos);
        for (i, lp) in lps.iter().enumerate() {
            assert_eq!(*lp, m.log_prob(&padded[i..i + 3], padded[i + 3]));
        }
    }

    #[test]
    fn corpus_scores_sorted_and_duplicates_equal() {
        let mut docs = vec![doc("z", &[0, 1, 2]), doc("m", &[2, 1])];
        for i in 0..5 {
            docs.push(doc(&format!("dup{i}"), &[4, 5, 6, 4]));
        }
        let m = model(&docs, 3);
        let out = score_corpus(&m, &docs);
        assert_eq!(out.len(), docs.len());
        assert!(out.windows(2).all(|w| w[0].doc_id < w[1].doc_id));
        let dups: Vec<f64> = out.iter().filter(|r| r.doc_id.starts_with("dup")).map(|r| r.commonness).collect();
        assert!(dups.iter().all(|&c| c == dups[0]));
    }

    #[test]
    fn oov_tokens_score_finite() {
        let docs = [doc("a", &[0, 1])];
        let m = model(&docs, 2);
        let r = score_document(&m, &doc("x", &[7, 8, 9]));
        assert!(r.commonness > 0.0 && r.log_commonness.is_finite());
    }

    #[test]
    fn records_round_trip() {
        let docs = [doc("a", &[0, 1]), doc("b", &[1, 1, 0])];
        let m = model(&docs, 2);
        let recs = score_corpus(&m, &docs);
        let mut buf = Vec::new();
        write_records(&mut buf, 2, &recs, Some("abc")).unwrap();
        let (h, back) = read_records(&buf[..]).unwrap();
        assert_eq!(h.config_digest.as_deref(), Some("abc"));
        assert_eq!(back, recs);
        let truncated = &buf[..buf.len() - 2];
        assert!(read_records(truncated).is_err());
    }
}
