use std::collections::BTreeMap;

use softdedup::decontam::{find_contaminated, Tokenized};
use softdedup::tokenizer::TokenizedDocument;
use softdedup_oracle::lcs_tokens;

struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> u32 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 33) as u32
    }

    fn tokens(&mut self, len: usize, vocab: u32) -> Vec<u32> {
        (0..len).map(|_| self.next() % vocab).collect()
    }
}

fn docs(prefix: &str, raw: Vec<Vec<u32>>) -> Vec<TokenizedDocument> {
    raw.into_iter()
        .enumerate()
        .map(|(i, tokens)| TokenizedDocument {
            id: format!("{prefix}{i:04}"),
            tokens,
        })
        .collect()
}

/// Every pair's longest common run from the dynamic-programming oracle,
/// keeping only pairs above the threshold.
fn oracle(train: &[TokenizedDocument], test: &[TokenizedDocument], threshold: usize) -> BTreeMap<(String, String), usize> {
    let mut out = BTreeMap::new();
    for a in train {
        for b in test {
            let l = lcs_tokens(&a.tokens, &b.tokens);
            if l > threshold {
                out.insert((a.id.clone(), b.id.clone()), l);
            }
        }
    }
    out
}

fn found(train: &[TokenizedDocument], test: &[TokenizedDocument], threshold: usize) -> BTreeMap<(String, String), usize> {
    let t = |docs| Tokenized { fingerprint: "same", docs };
    find_contaminated(t(train), t(test), threshold)
        .unwrap()
        .overlaps
        .into_iter()
        .map(|o| ((o.train_doc_id, o.test_doc_id), o.overlap_len))
        .collect()
}

#[test]
fn planted_spans_match_oracle() {
    let mut rng = Lcg(5);
    let lengths = [30usize, 50, 51, 120];
    let mut train = Vec::new();
    let mut test = Vec::new();
    for i in 0..60 {
        let span = lengths[i % 4];
        let t = rng.tokens(200, 1_000_000);
        let start = (rng.next() % 60) as usize;
        let pre = 20 + (rng.next() % 40) as usize;
        let mut x = rng.tokens(pre, 1_000_000);
        x.extend_from_slice(&t[start..start + span]);
        x.extend(rng.tokens(25, 1_000_000));
        train.push(x);
        test.push(t);
    }
    let (train, test) = (docs("tr", train), docs("te", test));
    let got = found(&train, &test, 50);
    assert_eq!(got, oracle(&train, &test, 50));
    for (i, d) in train.iter().enumerate() {
        let flagged = got.keys().any(|(a, _)| a == &d.id);
        assert_eq!(flagged, lengths[i % 4] > 50, "{}", d.id);
    }
}

#[test]
fn small_alphabet_collisions_are_verified() {
    // a binary alphabet forces many equal windows and repeated runs
    for seed in 0..4 {
        let mut rng = Lcg(seed);
        let train = docs("a", (0..12).map(|_| rng.tokens(60, 2)).collect());
        let test = docs("b", (0..12).map(|_| rng.tokens(60, 2)).collect());
        for threshold in [3, 6, 9] {
            assert_eq!(found(&train, &test, threshold), oracle(&train, &test, threshold));
        }
    }
}
