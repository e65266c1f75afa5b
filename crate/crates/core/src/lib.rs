//! Soft deduplication for pre-training corpora.
//!
//! Documents are scored by their *commonness*: the geometric mean of the
//! per-token probabilities under a Kneser-Ney n-gram model trained on the
//! corpus itself. The corpus is then split into equal-count quantile
//! segments and each segment gets a sampling weight proportional to
//! `(1 / p_k)^T`, so frequently repeated content is drawn less often without
//! being dropped. A MinHashLSH hard-deduplication baseline and a train/test
//! decontamination filter are included.

pub mod commonness;
pub mod corpus;
pub mod decontam;
pub mod dedup;
pub mod digest;
pub mod error;
pub mod ngram;
pub mod pipeline;
pub mod reweight;
pub mod sampler;
pub mod synth;
pub mod tokenizer;

pub use commonness::CommonnessRecord;
pub use corpus::{Corpus, CorpusStats, Document, IngestPolicy};
pub use error::{Error, ErrorClass, Result};
pub use ngram::{NGramCounts, NGramModel};
pub use reweight::{QuantileStat, SegmentPlan, WeightSpec};
pub use sampler::{ExportFormat, SamplingManifest};
pub use tokenizer::{TokenId, TokenizedDocument, Tokenizer, TokenizerMode, Vocabulary};
