//! Slow, literal reference implementations used to cross-check
//! `softdedup-core` in tests. Nothing here depends on the production crate;
//! every quantity is recomputed from raw token sequences by direct scanning.

use std::collections::{BTreeSet, VecDeque};

/// Interpolated modified Kneser-Ney, evaluated by recursion over counts
/// that are recomputed by scanning the corpus for every query.
///
/// Conventions: each document is padded with `n - 1` `bos` tokens and one
/// `eos`; a k-gram is counted at every position holding a real token or the
/// `eos`. Continuation counts are used below the top order except for grams
/// starting with `bos`, which use raw counts. The unigram level gives the
/// discounted mass to `unk`. Discounts come from count-of-counts with a 0.5
/// fallback when any of n1..n4 is zero or a discount leaves `(0, i)`.
pub struct KnReference {
    padded: Vec<Vec<u32>>,
    n: usize,
    bos: u32,
    unk: u32,
    vocab: BTreeSet<u32>,
    /// `[D1, D2, D3+]` per order, index k-1.
    discounts: Vec<[f64; 3]>,
}

impl KnReference {
    pub fn new(docs: &[Vec<u32>], n: usize, unk: u32, bos: u32, eos: u32) -> Self {
        let mut r = Self::unset(docs, n, unk, bos, eos);
        r.discounts = (1..=n).map(|k| r.closed_form_discounts(k)).collect();
        r
    }

    /// Same model with explicit discounts, e.g. all zeros for plain
    /// (continuation-count) maximum likelihood.
    pub fn with_discounts(
        docs: &[Vec<u32>],
        n: usize,
        unk: u32,
        bos: u32,
        eos: u32,
        discounts: Vec<[f64; 3]>,
    ) -> Self {
        assert_eq!(discounts.len(), n);
        let mut r = Self::unset(docs, n, unk, bos, eos);
        r.discounts = discounts;
        r
    }

    fn unset(docs: &[Vec<u32>], n: usize, unk: u32, bos: u32, eos: u32) -> Self {
        let padded: Vec<Vec<u32>> = docs
            .iter()
            .map(|d| {
                let mut p = vec![bos; n - 1];
                p.extend_from_slice(d);
                p.push(eos);
                p
            })
            .collect();
        let mut vocab: BTreeSet<u32> = padded.iter().flat_map(|p| p[n - 1..].iter().copied()).collect();
        vocab.insert(unk);
        Self {
            padded,
            n,
            bos,
            unk,
            vocab,
            discounts: Vec::new(),
        }
    }

    pub fn discounts(&self, k: usize) -> [f64; 3] {
        self.discounts[k - 1]
    }

    /// Tokens with non-zero probability mass: training tokens, `eos`, `unk`.
    pub fn vocabulary(&self) -> Vec<u32> {
        self.vocab.iter().copied().collect()
    }

    /// Scored positions as (document, index into padded sequence).
    fn positions(&self) -> impl Iterator<Item = (&[u32], usize)> + '_ {
        self.padded
            .iter()
            .flat_map(move |p| (self.n - 1..p.len()).map(move |i| (p.as_slice(), i)))
    }

    fn ends_at(p: &[u32], i: usize, gram: &[u32]) -> bool {
        i + 1 >= gram.len() && &p[i + 1 - gram.len()..=i] == gram
    }

    pub fn raw_count(&self, gram: &[u32]) -> u64 {
        self.positions()
            .filter(|(p, i)| Self::ends_at(p, *i, gram))
            .count() as u64
    }

    pub fn adjusted_count(&self, gram: &[u32]) -> u64 {
        if gram.len() == self.n || gram[0] == self.bos {
            return self.raw_count(gram);
        }
        let left: BTreeSet<u32> = self
            .positions()
            .filter(|(p, i)| Self::ends_at(p, *i, gram))
            .map(|(p, i)| p[i - gram.len()])
            .collect();
        left.len() as u64
    }

    fn closed_form_discounts(&self, k: usize) -> [f64; 3] {
        let grams: BTreeSet<Vec<u32>> = self
            .positions()
            .map(|(p, i)| p[i + 1 - k..=i].to_vec())
            .collect();
        let mut coc = [0f64; 4];
        for g in &grams {
            let c = self.adjusted_count(g);
            if (1..=4).contains(&c) {
                coc[c as usize - 1] += 1.0;
            }
        }
        if coc.contains(&0.0) {
            return [0.5; 3];
        }
        let y = coc[0] / (coc[0] + 2.0 * coc[1]);
        let mut d = [0.0; 3];
        for i in 1..=3 {
            let fi = i as f64;
            d[i - 1] = fi - (fi + 1.0) * y * coc[i] / coc[i - 1];
            if d[i - 1] <= 0.0 || d[i - 1] >= fi {
                return [0.5; 3];
            }
        }
        d
    }

    fn discount(&self, k: usize, c: u64) -> f64 {
        match c {
            0 => 0.0,
            1 => self.discounts[k - 1][0],
            2 => self.discounts[k - 1][1],
            _ => self.discounts[k - 1][2],
        }
    }

    fn known(&self, id: u32) -> u32 {
        if self.vocab.contains(&id) || id == self.bos {
            id
        } else {
            self.unk
        }
    }

    /// `P(token | context)`; the context is left-padded with `bos` (or
    /// truncated) to `n - 1` ids.
    pub fn prob(&self, context: &[u32], token: u32) -> f64 {
        let mut ctx: Vec<u32> = context.iter().map(|&c| self.known(c)).collect();
        while ctx.len() < self.n - 1 {
            ctx.insert(0, self.bos);
        }
        let ctx = &ctx[ctx.len() - (self.n - 1)..];
        let token = self.known(token);
        if token == self.bos {
            return 0.0;
        }
        self.interpolated(self.n, ctx, token)
    }

    fn interpolated(&self, k: usize, history: &[u32], token: u32) -> f64 {
        let with = |x: u32| {
            let mut g = history.to_vec();
            g.push(x);
            g
        };
        let counts: Vec<u64> = self.vocab.iter().map(|&x| self.adjusted_count(&with(x))).collect();
        let total: u64 = counts.iter().sum();
        if k == 1 {
            let freed: f64 = counts.iter().map(|&c| self.discount(1, c)).sum::<f64>() / total as f64;
            let c = self.adjusted_count(&[token]);
            let own = (c as f64 - self.discount(1, c)) / total as f64;
            return if token == self.unk { own + freed } else { own };
        }
        let lower = self.interpolated(k - 1, &history[1..], token);
        if total == 0 {
            return lower;
        }
        let freed: f64 = counts.iter().map(|&c| self.discount(k, c)).sum::<f64>() / total as f64;
        let c = self.adjusted_count(&with(token));
        (c as f64 - self.discount(k, c)) / total as f64 + freed * lower
    }

    /// Geometric mean of `P(w_i | previous n-1)` over the document's tokens
    /// followed by `eos`.
    pub fn commonness(&self, tokens: &[u32], eos: u32) -> f64 {
        let mut seq = vec![self.bos; self.n - 1];
        seq.extend_from_slice(tokens);
        seq.push(eos);
        let logs: Vec<f64> = (self.n - 1..seq.len())
            .map(|i| self.prob(&seq[i + 1 - self.n..i], seq[i]).ln())
            .collect();
        (logs.iter().sum::<f64>() / logs.len() as f64).exp()
    }
}

/// Set of width-`w` shingles; sequences shorter than `w` are one shingle.
fn shingles(tokens: &[u32], w: usize) -> BTreeSet<Vec<u32>> {
    if tokens.len() < w {
        return BTreeSet::from([tokens.to_vec()]);
    }
    tokens.windows(w).map(<[u32]>::to_vec).collect()
}

/// Exact Jaccard similarity of the two documents' shingle sets.
pub fn jaccard_exact(a: &[u32], b: &[u32], w: usize) -> f64 {
    let sa = shingles(a, w);
    let sb = shingles(b, w);
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    inter as f64 / union as f64
}

/// Longest common contiguous token run, by dynamic programming.
pub fn lcs_tokens(a: &[u32], b: &[u32]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    let mut best = 0;
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { 0 };
            best = best.max(cur[j + 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Connected components of an undirected graph by breadth-first search.
/// Each component is sorted and the list is sorted by smallest member.
pub fn connected_components(nodes: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); nodes];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; nodes];
    let mut out = Vec::new();
    for start in 0..nodes {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut comp = Vec::new();
        while let Some(v) = queue.pop_front() {
            comp.push(v);
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}
