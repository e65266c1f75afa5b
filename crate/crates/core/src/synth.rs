//! Seeded synthetic corpora with planted exact duplicates, for tests and
//! benchmarks.
//!
//! Words are drawn from a Zipf distribution over `w0 .. w{vocab-1}`, so
//! documents share frequent short n-grams while longer n-grams are mostly
//! unique unless a document is copied.

use rustc_hash::FxHashMap;

use crate::corpus::Document;
use crate::sampler::SampleRng;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    /// Number of distinct documents.
    pub distinct: usize,
    /// `(documents, copies)`: that many distinct documents appear `copies`
    /// times in total. Groups take documents in order and do not overlap.
    pub injections: Vec<(usize, usize)>,
    pub vocab: u32,
    pub zipf_exponent: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            distinct: 10_000,
            injections: vec![(100, 100), (500, 10)],
            vocab: 20_000,
            zipf_exponent: 1.05,
            min_len: 40,
            max_len: 160,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    /// Shuffled; copies carry distinct ids (`<base>-c<k>`).
    pub docs: Vec<Document>,
    /// Copies of each document id, 1 for unique documents.
    pub copies: FxHashMap<String, usize>,
    pub tokens: u64,
}

impl SynthCorpus {
    pub fn copies_of(&self, id: &str) -> usize {
        self.copies.get(id).copied().unwrap_or(0)
    }
}

struct Zipf {
    cumulative: Vec<f64>,
}

impl Zipf {
    fn new(n: u32, s: f64) -> Self {
        let mut acc = 0.0;
        let cumulative = (1..=n)
            .map(|r| {
                acc += (r as f64).powf(-s);
                acc
            })
            .collect();
        Self { cumulative }
    }

    fn draw(&self, rng: &mut SampleRng) -> usize {
        let u = rng.unit_f64() * self.cumulative[self.cumulative.len() - 1];
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

pub fn generate(spec: &SynthSpec) -> SynthCorpus {
    let injected: usize = spec.injections.iter().map(|(n, _)| n).sum();
    assert!(injected <= spec.distinct, "more injected documents than distinct ones");
    assert!(spec.min_len >= 1 && spec.min_len <= spec.max_len);
    let mut rng = SampleRng::new(spec.seed);
    let zipf = Zipf::new(spec.vocab, spec.zipf_exponent);
    let span = (spec.max_len - spec.min_len + 1) as u64;

    let mut times = vec![1usize; spec.distinct];
    let mut next = 0;
    for &(n, copies) in &spec.injections {
        times[next..next + n].fill(copies);
        next += n;
    }

    let mut docs = Vec::new();
    let mut copies = FxHashMap::default();
    let mut tokens = 0u64;
    let mut text = String::new();
    for (i, &t) in times.iter().enumerate() {
        let len = spec.min_len + rng.below(span) as usize;
        text.clear();
        for j in 0..len {
            if j > 0 {
                text.push(' ');
            }
            text.push('w');
            text.push_str(&zipf.draw(&mut rng).to_string());
        }
        let base = format!("doc{i:07}");
        for c in 0..t {
            let id = if c == 0 { base.clone() } else { format!("{base}-c{c}") };
            copies.insert(id.clone(), t);
            docs.push(Document {
                id,
                text: text.clone(),
                tokens: None,
            });
            tokens += len as u64;
        }
    }
    rng.shuffle(&mut docs);
    SynthCorpus { docs, copies, tokens }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            distinct: 50,
            injections: vec![(2, 5), (3, 2)],
            vocab: 100,
            min_len: 3,
            max_len: 8,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn counts_and_copies() {
        let c = generate(&small());
        assert_eq!(c.docs.len(), 45 + 2 * 5 + 3 * 2);
        assert_eq!(c.copies_of("doc0000000"), 5);
        assert_eq!(c.copies_of("doc0000000-c4"), 5);
        assert_eq!(c.copies_of("doc0000004"), 2);
        assert_eq!(c.copies_of("doc0000049"), 1);
        let original = c.docs.iter().find(|d| d.id == "doc0000000").unwrap();
        let copy = c.docs.iter().find(|d| d.id == "doc0000000-c3").unwrap();
        assert_eq!(original.text, copy.text);
        let words: u64 = c.docs.iter().map(|d| d.text.split(' ').count() as u64).sum();
        assert_eq!(words, c.tokens);
    }

    #[test]
    fn seeded() {
        let a = generate(&small());
        let b = generate(&small());
        assert_eq!(a.docs, b.docs);
        let c = generate(&SynthSpec { seed: 2, ..small() });
        assert_ne!(a.docs, c.docs);
    }
}
