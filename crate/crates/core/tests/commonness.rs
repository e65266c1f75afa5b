//! Commonness scores against the recursive reference evaluator.

use softdedup::commonness::{score_corpus, score_document, token_log_probs};
use softdedup::ngram::{count, EstimateOptions, NGramModel};
use softdedup::tokenizer::{Reserved, TokenId, TokenizedDocument};
use softdedup_oracle::KnReference;

const R: Reserved = Reserved {
    unk: 50,
    bos: 51,
    eos: 52,
};

fn docs(raw: &[Vec<TokenId>]) -> Vec<TokenizedDocument> {
    raw.iter()
        .enumerate()
        .map(|(i, t)| TokenizedDocument {
            id: format!("d{i:04}"),
            tokens: t.clone(),
        })
        .collect()
}

fn train(raw: &[Vec<TokenId>], n: usize) -> NGramModel {
    NGramModel::estimate(&count(&docs(raw), n, R).unwrap(), EstimateOptions::default()).unwrap()
}

fn lcg_corpus(seed: u64, docs: usize, vocab: u32) -> Vec<Vec<TokenId>> {
    let mut s = seed;
    let mut next = move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        s >> 33
    };
    (0..docs)
        .map(|_| {
            let len = 3 + next() % 10;
            (0..len).map(|_| (next() % vocab as u64) as u32).collect()
        })
        .collect()
}

#[test]
fn matches_oracle_commonness() {
    for n in 2..=4 {
        let raw = lcg_corpus(n as u64, 14, 7);
        let model = train(&raw, n);
        let oracle = KnReference::new(&raw, n, R.unk, R.bos, R.eos);
        let records = score_corpus(&model, &docs(&raw));
        for (d, r) in docs(&raw).iter().zip(&records) {
            assert_eq!(d.id, r.doc_id);
            let reference = oracle.commonness(&d.tokens, R.eos);
            assert!((r.commonness - reference).abs() < 1e-9, "{}: {} vs {reference}", d.id, r.commonness);
        }
        // unseen documents too
        let probe = vec![0, 1, 44, 2, 3];
        let r = score_document(&model, &TokenizedDocument { id: "p".into(), tokens: probe.clone() });
        assert!((r.commonness - oracle.commonness(&probe, R.eos)).abs() < 1e-9);
    }
}

#[test]
fn trained_order_beats_reversed_order() {
    // a = 0, b = 1
    let raw = vec![vec![0, 1, 0, 1]];
    let model = train(&raw, 2);
    let oracle = KnReference::new(&raw, 2, R.unk, R.bos, R.eos);
    let ab = score_document(&model, &TokenizedDocument { id: "ab".into(), tokens: vec![0, 1] });
    let ba = score_document(&model, &TokenizedDocument { id: "ba".into(), tokens: vec![1, 0] });
    assert!(oracle.commonness(&[0, 1], R.eos) > oracle.commonness(&[1, 0], R.eos));
    assert!(ab.commonness > ba.commonness);
}

#[test]
fn self_concatenation_moves_only_through_the_junction() {
    for n in [2usize, 3, 4] {
        let raw = lcg_corpus(40 + n as u64, 10, 6);
        let model = train(&raw, n);
        let oracle = KnReference::new(&raw, n, R.unk, R.bos, R.eos);
        for x in &raw {
            let xx: Vec<TokenId> = x.iter().chain(x).copied().collect();
            let lx = oracle.commonness(x, R.eos).ln();
            let lxx = oracle.commonness(&xx, R.eos).ln();
            let logs = token_log_probs(&model, &xx);
            let max_abs = logs.iter().fold(0f64, |m, l| m.max(l.abs()));
            let big_n = (x.len() + 1) as f64;
            let bound = (n - 1) as f64 * max_abs / (2.0 * big_n);
            assert!((lxx - lx).abs() <= bound + 1e-12, "n={n} {x:?}: {} > {bound}", (lxx - lx).abs());
        }
    }
}

#[test]
fn more_copies_raise_commonness() {
    let base = lcg_corpus(7, 40, 9);
    let target: Vec<TokenId> = vec![3, 1, 4, 1, 5, 2, 6, 5, 3, 5];
    for n in [2usize, 3, 4] {
        let mut prev = f64::NEG_INFINITY;
        for r in [1usize, 10, 100] {
            let mut raw = base.clone();
            raw.extend(std::iter::repeat_n(target.clone(), r));
            let model = train(&raw, n);
            let c = score_document(&model, &TokenizedDocument { id: "t".into(), tokens: target.clone() }).commonness;
            assert!(c > prev, "n={n} r={r}: {c} <= {prev}");
            prev = c;
        }
    }
}

#[test]
fn worker_count_does_not_change_scores() {
    let raw = lcg_corpus(99, 300, 20);
    let model = train(&raw, 3);
    let d = docs(&raw);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| score_corpus(&model, &d))
    };
    assert_eq!(run(1), run(8));
}
