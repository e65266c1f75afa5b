//! Document tokenization and vocabularies.
//!
//! Two modes are supported. `whitespace` NFC-normalizes the text, splits on
//! Unicode whitespace and maps each surface form to an id. `passthrough`
//! takes the ids from the record's `tokens` field verbatim, which is how a
//! corpus tokenized by an external (e.g. BPE) tokenizer is fed in.
//!
//! Surface ids occupy `0..base`; the reserved `<unk>`, `<bos>`, `<eos>` ids
//! are `base`, `base + 1`, `base + 2`.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::Document;
use crate::digest::Digester;
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Reserved {
    pub unk: TokenId,
    pub bos: TokenId,
    pub eos: TokenId,
}

impl Reserved {
    pub fn after(base: u32) -> Self {
        Self {
            unk: base,
            bos: base + 1,
            eos: base + 2,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    #[default]
    Whitespace,
    Passthrough,
}

impl fmt::Display for TokenizerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenizerMode::Whitespace => "whitespace",
            TokenizerMode::Passthrough => "passthrough",
        })
    }
}

impl FromStr for TokenizerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitespace" => Ok(Self::Whitespace),
            "passthrough" => Ok(Self::Passthrough),
            other => Err(Error::Config(format!("unknown tokenizer mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDocument {
    pub id: String,
    pub tokens: Vec<TokenId>,
}

impl TokenizedDocument {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A frozen id <-> surface-form mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    mode: TokenizerMode,
    /// Surface forms by id; empty in passthrough mode.
    forms: Vec<String>,
    index: HashMap<String, TokenId>,
    base: u32,
}

impl Vocabulary {
    /// Vocabulary for externally tokenized ids in `0..size`.
    pub fn passthrough(size: u32) -> Self {
        Self {
            mode: TokenizerMode::Passthrough,
            forms: Vec::new(),
            index: HashMap::new(),
            base: size,
        }
    }

    /// Whitespace vocabulary whose ids follow the order of `forms`.
    pub fn from_forms(forms: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(forms.len());
        for (i, form) in forms.iter().enumerate() {
            if form.is_empty() || form.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid surface form {form:?}")));
            }
            if index.insert(form.clone(), i as TokenId).is_some() {
                return Err(Error::Config(format!("repeated surface form {form:?}")));
            }
        }
        Ok(Self {
            mode: TokenizerMode::Whitespace,
            base: forms.len() as u32,
            forms,
            index,
        })
    }

    /// Builds the whitespace vocabulary of a corpus: surface forms are
    /// collected in parallel, then numbered in lexicographic order, so the
    /// result does not depend on the number of threads.
    pub fn freeze(docs: &[Document]) -> Self {
        let mut forms: Vec<String> = docs
            .par_iter()
            .fold(FxHashSet::default, |mut set, doc| {
                for w in normalize(&doc.text).split_whitespace() {
                    if !set.contains(w) {
                        set.insert(w.to_owned());
                    }
                }
                set
            })
            .reduce(FxHashSet::default, |mut a, b| {
                if a.len() < b.len() {
                    return b.into_iter().fold(a, |mut s, w| {
                        s.insert(w);
                        s
                    });
                }
                a.extend(b);
                a
            })
            .into_iter()
            .collect();
        forms.sort_unstable();
        Self::from_forms(forms).expect("forms come from whitespace splitting")
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    /// Total id space, reserved ids included.
    pub fn size(&self) -> u32 {
        self.base + 3
    }

    /// Number of non-reserved ids.
    pub fn surface_len(&self) -> u32 {
        self.base
    }

    pub fn reserved(&self) -> Reserved {
        Reserved::after(self.base)
    }

    pub fn id(&self, form: &str) -> Option<TokenId> {
        match self.mode {
            TokenizerMode::Whitespace => self.index.get(form).copied(),
            TokenizerMode::Passthrough => form.parse().ok().filter(|&id| id < self.base),
        }
    }

    /// Surface form of `id`; reserved ids use the ARPA spellings.
    pub fn symbol(&self, id: TokenId) -> String {
        let r = self.reserved();
        if id == r.unk {
            UNK.into()
        } else if id == r.bos {
            BOS.into()
        } else if id == r.eos {
            EOS.into()
        } else {
            match self.mode {
                TokenizerMode::Whitespace => self.forms[id as usize].clone(),
                TokenizerMode::Passthrough => id.to_string(),
            }
        }
    }

    /// Inverse of [`symbol`](Self::symbol).
    pub fn lookup_symbol(&self, sym: &str) -> Option<TokenId> {
        let r = self.reserved();
        match sym {
            UNK => Some(r.unk),
            BOS => Some(r.bos),
            EOS => Some(r.eos),
            _ => self.id(sym),
        }
    }

    /// Identifies the id assignment; two corpora are comparable only if
    /// tokenized under the same fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut d = Digester::new();
        d.str(&self.mode.to_string()).u64(self.base as u64);
        for form in &self.forms {
            d.str(form);
        }
        d.finish()
    }

    /// Writes `#vocab` header plus one `<id>\t<surface>` line per form.
    pub fn write<W: Write>(&self, mut out: W, provenance: Option<&str>) -> std::io::Result<()> {
        let r = self.reserved();
        write!(
            out,
            "#vocab\tmode={}\tsize={}\tunk={}\tbos={}\teos={}",
            self.mode,
            self.size(),
            r.unk,
            r.bos,
            r.eos
        )?;
        if let Some(digest) = provenance {
            write!(out, "\tconfig_digest={digest}")?;
        }
        writeln!(out)?;
        for (id, form) in self.forms.iter().enumerate() {
            writeln!(out, "{id}\t{form}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let bad = |line: usize, message: String| Error::Malformed {
            path: "<vocab>".into(),
            line,
            message,
        };
        let mut lines = input.lines();
        let header = match lines.next() {
            Some(line) => line.map_err(|e| Error::io("<vocab>", e))?,
            None => return Err(bad(1, "empty vocabulary file".into())),
        };
        let mut fields = header.split('\t');
        if fields.next() != Some("#vocab") {
            return Err(bad(1, "missing #vocab header".into()));
        }
        let mut kv = HashMap::new();
        for field in fields {
            if let Some((k, v)) = field.split_once('=') {
                kv.insert(k, v);
            }
        }
        let get = |k: &str| -> Result<u32> {
            kv.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(1, format!("header lacks numeric `{k}`")))
        };
        let mode: TokenizerMode = kv
            .get("mode")
            .ok_or_else(|| bad(1, "header lacks `mode`".into()))?
            .parse()?;
        let size = get("size")?;
        if size < 3 {
            return Err(bad(1, format!("size {size} leaves no room for reserved ids")));
        }
        let expected = Reserved::after(size - 3);
        let declared = Reserved {
            unk: get("unk")?,
            bos: get("bos")?,
            eos: get("eos")?,
        };
        if declared != expected {
            return Err(bad(1, format!("reserved ids {declared:?} must be {expected:?}")));
        }
        let vocab = match mode {
            TokenizerMode::Passthrough => Self::passthrough(size - 3),
            TokenizerMode::Whitespace => {
                let mut forms = Vec::with_capacity((size - 3) as usize);
                for (i, line) in lines.enumerate() {
                    let line = line.map_err(|e| Error::io("<vocab>", e))?;
                    let (id, form) = line
                        .split_once('\t')
                        .ok_or_else(|| bad(i + 2, "expected <id>\\t<surface>".into()))?;
                    if id.parse::<usize>().ok() != Some(forms.len()) {
                        return Err(bad(i + 2, format!("expected id {}", forms.len())));
                    }
                    forms.push(form.to_owned());
                }
                Self::from_forms(forms)?
            }
        };
        if vocab.size() != size {
            return Err(bad(1, format!("declared size {size}, found {}", vocab.size())));
        }
        Ok(vocab)
    }
}

fn normalize(text: &str) -> std::borrow::Cow<'_, str> {
    if unicode_normalization::is_nfc_quick(text.chars()) == unicode_normalization::IsNormalized::Yes
    {
        std::borrow::Cow::Borrowed(text)
    } else {
        std::borrow::Cow::Owned(text.nfc().collect())
    }
}

/// Tokenizes documents against a frozen vocabulary. Pure: the output depends
/// only on the document and the vocabulary.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vocabulary,
}

impl Tokenizer {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn mode(&self) -> TokenizerMode {
        self.vocab.mode
    }

    /// Whitespace mode maps unseen surface forms to `<unk>`. Passthrough mode
    /// rejects ids outside the vocabulary.
    pub fn tokenize(&self, doc: &Document) -> Result<TokenizedDocument> {
        let tokens = match self.vocab.mode {
            TokenizerMode::Whitespace => {
                let unk = self.vocab.reserved().unk;
                normalize(&doc.text)
                    .split_whitespace()
                    .map(|w| self.vocab.index.get(w).copied().unwrap_or(unk))
                    .collect()
            }
            TokenizerMode::Passthrough => passthrough_tokens(doc, Some(self.vocab.base))?,
        };
        finish(doc, tokens)
    }

    pub fn tokenize_all(&self, docs: &[Document]) -> Result<Vec<TokenizedDocument>> {
        docs.par_iter().map(|d| self.tokenize(d)).collect()
    }
}

fn passthrough_tokens(doc: &Document, limit: Option<u32>) -> Result<Vec<TokenId>> {
    let tokens = doc.tokens.as_ref().ok_or_else(|| Error::Format {
        id: doc.id.clone(),
        message: "passthrough mode requires a `tokens` field".into(),
    })?;
    if let Some(limit) = limit {
        if let Some(bad) = tokens.iter().find(|&&t| t >= limit) {
            return Err(Error::Format {
                id: doc.id.clone(),
                message: format!("token id {bad} outside vocabulary of size {limit}"),
            });
        }
    }
    Ok(tokens.clone())
}

fn finish(doc: &Document, tokens: Vec<TokenId>) -> Result<TokenizedDocument> {
    if tokens.is_empty() {
        return Err(Error::EmptyDocument { id: doc.id.clone() });
    }
    Ok(TokenizedDocument {
        id: doc.id.clone(),
        tokens,
    })
}

/// Smallest passthrough vocabulary covering every id in `docs`.
pub fn infer_passthrough_size(docs: &[Document]) -> Result<u32> {
    let mut max = None;
    for doc in docs {
        for &t in passthrough_tokens(doc, None)?.iter() {
            max = max.max(Some(t));
        }
    }
    Ok(max.map_or(0, |m| m + 1))
}

/// Single-pass whitespace tokenizer that numbers surface forms in order of
/// first appearance. Useful for streaming; the batch pipeline uses
/// [`Vocabulary::freeze`] instead.
#[derive(Debug, Default)]
pub struct VocabularyBuilder {
    forms: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl VocabularyBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tokenize(&mut self, doc: &Document) -> Result<TokenizedDocument> {
        let mut tokens = Vec::new();
        for w in normalize(&doc.text).split_whitespace() {
            let next = self.forms.len() as TokenId;
            let id = *self.index.entry(w.to_owned()).or_insert_with(|| {
                self.forms.push(w.to_owned());
                next
            });
            tokens.push(id);
        }
        finish(doc, tokens)
    }

    pub fn finish(self) -> Vocabulary {
        Vocabulary::from_forms(self.forms).expect("forms come from whitespace splitting")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> Document {
        Document {
            id: "d".into(),
            text: text.into(),
            tokens: None,
        }
    }

    #[test]
    fn first_seen_ids() {
        let mut b = VocabularyBuilder::new();
        let t = b.tokenize(&doc("the cat the cat")).unwrap();
        assert_eq!(t.tokens, [0, 1, 0, 1]);
        assert_eq!(t.len(), 4);
    }

    #[test]
    fn passthrough_is_verbatim() {
        let d = Document {
            id: "p".into(),
            text: String::new(),
            tokens: Some(vec![5, 9, 5]),
        };
        let t = Tokenizer::new(Vocabulary::passthrough(10)).tokenize(&d).unwrap();
        assert_eq!(t.tokens, [5, 9, 5]);
    }

    #[test]
    fn passthrough_without_tokens_is_a_format_error() {
        let err = Tokenizer::new(Vocabulary::passthrough(10))
            .tokenize(&doc("a b"))
            .unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn whitespace_only_is_rejected() {
        let vocab = Vocabulary::freeze(&[doc("a b")]);
        let err = Tokenizer::new(vocab).tokenize(&doc("   ")).unwrap_err();
        assert!(matches!(err, Error::EmptyDocument { ref id } if id == "d"));
    }

    #[test]
    fn oov_maps_to_unk() {
        let vocab = Vocabulary::freeze(&[doc("a b")]);
        let unk = vocab.reserved().unk;
        let t = Tokenizer::new(vocab.clone()).tokenize(&doc("a c")).unwrap();
        assert_eq!(t.tokens, [vocab.id("a").unwrap(), unk]);
    }

    #[test]
    fn freeze_is_idempotent_and_counts_reserved() {
        let docs = [doc("z y x y"), doc("x w")];
        let a = Vocabulary::freeze(&docs);
        let b = Vocabulary::freeze(&docs);
        assert_eq!(a, b);
        assert_eq!(a.size(), 4 + 3);
        assert_eq!(a.id("w"), Some(0));
        let r = a.reserved();
        assert!(r.unk != r.bos && r.bos != r.eos && r.unk != r.eos);
    }

    #[test]
    fn reserved_spellings_in_text_are_ordinary_words() {
        let vocab = Vocabulary::freeze(&[doc("<s> </s> <unk>")]);
        let t = Tokenizer::new(vocab.clone()).tokenize(&doc("<s> </s> <unk>")).unwrap();
        assert!(t.tokens.iter().all(|&id| id < vocab.surface_len()));
    }

    #[test]
    fn nfc_normalization_unifies_forms() {
        let composed = "caf\u{e9}";
        let decomposed = "cafe\u{301}";
        let vocab = Vocabulary::freeze(&[doc(composed)]);
        let tok = Tokenizer::new(vocab);
        assert_eq!(
            tok.tokenize(&doc(composed)).unwrap().tokens,
            tok.tokenize(&doc(decomposed)).unwrap().tokens
        );
    }

    #[test]
    fn serialization_round_trips() {
        let vocab = Vocabulary::freeze(&[doc("b a c a")]);
        let mut out = Vec::new();
        vocab.write(&mut out, Some("abc")).unwrap();
        let text = String::from_utf8(out.clone()).unwrap();
        assert!(text.starts_with("#vocab\tmode=whitespace\tsize=6\tunk=3\tbos=4\teos=5"));
        assert_eq!(Vocabulary::read(&out[..]).unwrap(), vocab);

        let pass = Vocabulary::passthrough(50257);
        let mut out = Vec::new();
        pass.write(&mut out, None).unwrap();
        assert_eq!(Vocabulary::read(&out[..]).unwrap(), pass);
    }

    #[test]
    fn infers_passthrough_size() {
        let d = Document {
            id: "p".into(),
            text: String::new(),
            tokens: Some(vec![3, 17, 2]),
        };
        assert_eq!(infer_passthrough_size(&[d]).unwrap(), 18);
    }
}
