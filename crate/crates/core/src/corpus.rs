//! Line-delimited corpus ingestion.
//!
//! Each input line is a JSON object with a required `text` string, an
//! optional `id` string and, for pre-tokenized corpora, an optional `tokens`
//! array of non-negative integers. Documents keep file order; files keep the
//! order they were given in.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digest::Digester;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    /// Pre-tokenized ids, present only when the record carried `tokens`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<u32>>,
}

/// What to do with a line that cannot be turned into a document.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OnError {
    #[default]
    FailFast,
    Skip,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestPolicy {
    pub on_error: OnError,
    pub allow_empty: bool,
}

impl IngestPolicy {
    pub fn skip() -> Self {
        Self {
            on_error: OnError::Skip,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub doc_count: u64,
    /// Zero until a tokenization pass has filled it in.
    pub token_count: u64,
    pub byte_count: u64,
}

#[derive(Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    tokens: Option<Vec<u32>>,
}

/// Streaming reader over one line-delimited file.
///
/// Yields documents in file order. With [`OnError::Skip`] malformed lines are
/// counted in [`Ingest::skipped`] and the stream continues; otherwise the
/// first malformed line is yielded as an error and the stream ends. A repeated
/// id is always fatal.
pub struct Ingest<R> {
    reader: R,
    path: PathBuf,
    file_name: String,
    policy: IngestPolicy,
    line_no: usize,
    seen: HashSet<String>,
    skipped: Vec<(usize, String)>,
    stats: CorpusStats,
    done: bool,
    buf: String,
}

impl Ingest<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>, policy: IngestPolicy) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(BufReader::new(file), path, policy))
    }
}

impl<R: BufRead> Ingest<R> {
    /// `path` names the source for error messages and synthesized ids.
    pub fn new(reader: R, path: impl Into<PathBuf>, policy: IngestPolicy) -> Self {
        let path = path.into();
        let file_name = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.to_string_lossy().into_owned());
        Self {
            reader,
            path,
            file_name,
            policy,
            line_no: 0,
            seen: HashSet::new(),
            skipped: Vec::new(),
            stats: CorpusStats::default(),
            done: false,
            buf: String::new(),
        }
    }

    pub fn stats(&self) -> CorpusStats {
        self.stats
    }

    /// Line numbers and messages of skipped lines.
    pub fn skipped(&self) -> &[(usize, String)] {
        &self.skipped
    }

    fn parse_line(&self, line: &str) -> std::result::Result<Document, String> {
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let id = match raw.id {
            Some(id) if id.is_empty() => return Err("empty `id` field".into()),
            Some(id) => id,
            None => format!("{}:{}", self.file_name, self.line_no),
        };
        let text = match (raw.text, &raw.tokens) {
            (Some(text), _) => text,
            (None, Some(_)) => String::new(),
            (None, None) => return Err("record has no `text` field".into()),
        };
        let empty = match &raw.tokens {
            Some(tokens) => tokens.is_empty(),
            None => text.is_empty(),
        };
        if empty && !self.policy.allow_empty {
            return Err(format!("document {id:?} is empty"));
        }
        Ok(Document {
            id,
            text,
            tokens: raw.tokens,
        })
    }
}

impl<R: BufRead> Iterator for Ingest<R> {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => {
                    self.done = true;
                    return None;
                }
                Ok(_) => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(Error::io(&self.path, e)));
                }
            }
            self.line_no += 1;
            let line = self.buf.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() {
                continue;
            }
            let doc = match self.parse_line(line) {
                Ok(doc) => doc,
                Err(message) => match self.policy.on_error {
                    OnError::Skip => {
                        log::debug!("{}:{}: skipped: {message}", self.path.display(), self.line_no);
                        self.skipped.push((self.line_no, message));
                        continue;
                    }
                    OnError::FailFast => {
                        self.done = true;
                        return Some(Err(Error::Malformed {
                            path: self.path.clone(),
                            line: self.line_no,
                            message,
                        }));
                    }
                },
            };
            if !self.seen.insert(doc.id.clone()) {
                self.done = true;
                return Some(Err(Error::DuplicateId {
                    id: doc.id,
                    path: self.path.clone(),
                    line: self.line_no,
                }));
            }
            self.stats.doc_count += 1;
            self.stats.byte_count += doc.text.len() as u64;
            return Some(Ok(doc));
        }
        None
    }
}

/// An in-memory corpus with id lookup.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    index: HashMap<String, usize>,
    stats: CorpusStats,
    skipped: usize,
}

impl Corpus {
    /// Builds a corpus from documents already in memory. Ids must be unique.
    pub fn from_documents(docs: Vec<Document>) -> Result<Self> {
        let mut index = HashMap::with_capacity(docs.len());
        let mut stats = CorpusStats::default();
        for (i, doc) in docs.iter().enumerate() {
            if index.insert(doc.id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    id: doc.id.clone(),
                    path: PathBuf::from("<memory>"),
                    line: i + 1,
                });
            }
            stats.doc_count += 1;
            stats.byte_count += doc.text.len() as u64;
        }
        Ok(Self {
            docs,
            index,
            stats,
            skipped: 0,
        })
    }

    /// Reads every file (in parallel, one reader per file) and concatenates
    /// the documents in the order the paths were given.
    pub fn load<P: AsRef<Path> + Sync>(paths: &[P], policy: IngestPolicy) -> Result<Self> {
        let parts: Vec<Result<(Vec<Document>, usize)>> = paths
            .par_iter()
            .map(|p| {
                let mut ingest = Ingest::open(p, policy)?;
                let docs = ingest.by_ref().collect::<Result<Vec<_>>>()?;
                Ok((docs, ingest.skipped().len()))
            })
            .collect();
        let mut docs = Vec::new();
        let mut skipped = 0;
        for part in parts {
            let (part_docs, part_skipped) = part?;
            docs.extend(part_docs);
            skipped += part_skipped;
        }
        let mut corpus = Self::from_documents(docs)?;
        corpus.skipped = skipped;
        Ok(corpus)
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.index.get(id).map(|&i| &self.docs[i])
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn stats(&self) -> CorpusStats {
        self.stats
    }

    /// Records the token total once the corpus has been tokenized.
    pub fn set_token_count(&mut self, tokens: u64) {
        self.stats.token_count = tokens;
    }

    /// Keeps the documents for which `keep` returns true, preserving order.
    pub fn retain(&self, mut keep: impl FnMut(&Document) -> bool) -> Self {
        let docs = self.docs.iter().filter(|d| keep(d)).cloned().collect();
        Self::from_documents(docs).expect("subset of a valid corpus has unique ids")
    }

    /// Digest over ids and texts in corpus order.
    pub fn digest(&self) -> String {
        let mut d = Digester::new();
        d.u64(self.docs.len() as u64);
        for doc in &self.docs {
            d.str(&doc.id).str(&doc.text);
            if let Some(tokens) = &doc.tokens {
                d.u64(tokens.len() as u64);
                for &t in tokens {
                    d.u64(t as u64);
                }
            }
        }
        d.finish()
    }

    /// Writes the corpus back out in the input format.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for doc in &self.docs {
            serde_json::to_writer(&mut out, doc)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
