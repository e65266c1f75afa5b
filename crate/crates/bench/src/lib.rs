//! Shared fixtures for the benchmarks.

use softdedup::synth::{generate, SynthSpec};
use softdedup::{TokenizedDocument, Tokenizer, Vocabulary};

/// A tokenized synthetic corpus of roughly `distinct * 100` tokens.
pub fn fixture(distinct: usize) -> (Vocabulary, Vec<TokenizedDocument>) {
    let corpus = generate(&SynthSpec {
        distinct,
        injections: vec![(distinct / 100, 20), (distinct / 20, 5)],
        ..SynthSpec::default()
    });
    let vocab = Vocabulary::freeze(&corpus.docs);
    let docs = Tokenizer::new(vocab.clone())
        .tokenize_all(&corpus.docs)
        .expect("synthetic text tokenizes");
    (vocab, docs)
}
