//! ARPA text serialization.
//!
//! Values are base-10 logs in the file and natural logs in memory. Lines
//! before `\data\` are a free-form preamble; this writer records the config
//! digest and the per-order discounts there as `#` comments, which other
//! toolkits ignore.

use std::io::{BufRead, Write};

use rustc_hash::FxHashMap;

use super::model::{Discounts, Entry, NGramModel, LOG_ZERO};
use super::{Gram, MAX_ORDER};
use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, Vocabulary};

const LN_10: f64 = std::f64::consts::LN_10;

fn to_log10(ln: f64) -> f64 {
    if ln <= LOG_ZERO {
        -99.0
    } else {
        ln / LN_10
    }
}

impl NGramModel {
    pub fn write_arpa<W: Write>(
        &self,
        vocab: &Vocabulary,
        mut out: W,
        provenance: Option<&str>,
    ) -> std::io::Result<()> {
        if let Some(digest) = provenance {
            writeln!(out, "# config_digest {digest}")?;
        }
        for (k, d) in self.discounts.iter().enumerate() {
            if let Some(d) = d {
                writeln!(
                    out,
                    "# discounts {} {:?} {:?} {:?}",
                    k + 1,
                    d.one,
                    d.two,
                    d.three_plus
                )?;
            }
        }
        writeln!(out)?;
        writeln!(out, "\\data\\")?;
        for (k, table) in self.tables.iter().enumerate() {
            writeln!(out, "ngram {}={}", k + 1, table.len())?;
        }
        for (k, table) in self.tables.iter().enumerate() {
            writeln!(out)?;
            writeln!(out, "\\{}-grams:", k + 1)?;
            let mut entries: Vec<(&Gram, &Entry)> = table.iter().collect();
            entries.sort_unstable_by(|a, b| a.0.cmp(b.0));
            let highest = k + 1 == self.order;
            for (gram, e) in entries {
                let words: Vec<String> = gram.as_slice().iter().map(|&id| vocab.symbol(id)).collect();
                write!(out, "{:.7}\t{}", to_log10(e.log_prob), words.join(" "))?;
                if !highest && e.backoff != 0.0 {
                    write!(out, "\t{:.7}", e.backoff / LN_10)?;
                }
                writeln!(out)?;
            }
        }
        writeln!(out)?;
        writeln!(out, "\\end\\")?;
        Ok(())
    }

    pub fn read_arpa<R: BufRead>(vocab: &Vocabulary, input: R) -> Result<Self> {
        ArpaReader::default().read(vocab, input)
    }
}

#[derive(Default)]
struct ArpaReader {
    discounts: FxHashMap<usize, Discounts>,
    declared: Vec<usize>,
}

enum State {
    Preamble,
    Header,
    Section(usize),
    BetweenSections(usize),
    End,
}

impl ArpaReader {
    fn read<R: BufRead>(mut self, vocab: &Vocabulary, input: R) -> Result<NGramModel> {
        let err = |line: usize, message: String| Error::Arpa { line, message };
        let mut tables: Vec<FxHashMap<Gram, Entry>> = Vec::new();
        let mut state = State::Preamble;
        let mut last_line = 0;
        for (i, line) in input.lines().enumerate() {
            let no = i + 1;
            last_line = no;
            let line = line.map_err(|e| err(no, e.to_string()))?;
            let line = line.trim_end();
            state = match state {
                State::Preamble => {
                    if line == "\\data\\" {
                        State::Header
                    } else {
                        if let Some(rest) = line.strip_prefix("# discounts ") {
                            self.parse_discounts(rest).map_err(|m| err(no, m))?;
                        }
                        State::Preamble
                    }
                }
                State::Header => {
                    if line.is_empty() {
                        State::Header
                    } else if let Some(rest) = line.strip_prefix("ngram ") {
                        let (k, c) = rest
                            .split_once('=')
                            .and_then(|(k, c)| Some((k.trim().parse::<usize>().ok()?, c.trim().parse::<usize>().ok()?)))
                            .ok_or_else(|| err(no, format!("bad count line {line:?}")))?;
                        if k != self.declared.len() + 1 || k > MAX_ORDER {
                            return Err(err(no, format!("unexpected order {k} in header")));
                        }
                        self.declared.push(c);
                        State::Header
                    } else if line == "\\1-grams:" && !self.declared.is_empty() {
                        tables.push(FxHashMap::default());
                        State::Section(1)
                    } else {
                        return Err(err(no, format!("unexpected line in \\data\\ header: {line:?}")));
                    }
                }
                State::Section(k) => {
                    if line.is_empty() {
                        self.check_count(k, tables[k - 1].len()).map_err(|m| err(no, m))?;
                        State::BetweenSections(k)
                    } else if line.starts_with('\\') {
                        return Err(err(no, format!("section header {line:?} without preceding blank line")));
                    } else {
                        let (gram, entry) = parse_entry(vocab, k, line).map_err(|m| err(no, m))?;
                        if tables[k - 1].insert(gram, entry).is_some() {
                            return Err(err(no, format!("repeated {k}-gram")));
                        }
                        if tables[k - 1].len() > self.declared[k - 1] {
                            return Err(err(no, format!(
                                "more {k}-grams than the {} declared",
                                self.declared[k - 1]
                            )));
                        }
                        State::Section(k)
                    }
                }
                State::BetweenSections(k) => {
                    if line.is_empty() {
                        State::BetweenSections(k)
                    } else if line == "\\end\\" {
                        if k != self.declared.len() {
                            return Err(err(no, format!(
                                "\\end\\ after order {k} of {}",
                                self.declared.len()
                            )));
                        }
                        State::End
                    } else if line == format!("\\{}-grams:", k + 1) && k < self.declared.len() {
                        tables.push(FxHashMap::default());
                        State::Section(k + 1)
                    } else {
                        return Err(err(no, format!("expected \\{}-grams: or \\end\\, found {line:?}", k + 1)));
                    }
                }
                State::End => {
                    if !line.is_empty() {
                        return Err(err(no, "content after \\end\\".into()));
                    }
                    State::End
                }
            };
        }
        match state {
            State::End => {}
            State::Section(k) => {
                return Err(err(last_line, format!("missing \\end\\ (inside {k}-gram section)")));
            }
            _ => return Err(err(last_line, "missing \\end\\".into())),
        }
        let order = self.declared.len();
        if order < 2 {
            return Err(err(last_line, format!("model order {order} is below 2")));
        }
        let reserved = vocab.reserved();
        if !tables[0].contains_key(&Gram::new(&[reserved.unk])) {
            return Err(err(last_line, "unigram section lacks <unk>".into()));
        }
        let discounts = (1..=order).map(|k| self.discounts.get(&k).copied()).collect();
        Ok(NGramModel {
            order,
            reserved,
            discounts,
            tables,
        })
    }

    fn parse_discounts(&mut self, rest: &str) -> std::result::Result<(), String> {
        let parts: Vec<&str> = rest.split_whitespace().collect();
        let bad = || format!("bad discounts comment {rest:?}");
        if parts.len() != 4 {
            return Err(bad());
        }
        let k: usize = parts[0].parse().map_err(|_| bad())?;
        let v: Vec<f64> = parts[1..]
            .iter()
            .map(|p| p.parse().map_err(|_| bad()))
            .collect::<std::result::Result<_, _>>()?;
        self.discounts.insert(
            k,
            Discounts {
                one: v[0],
                two: v[1],
                three_plus: v[2],
            },
        );
        Ok(())
    }

    fn check_count(&self, k: usize, found: usize) -> std::result::Result<(), String> {
        if found != self.declared[k - 1] {
            return Err(format!(
                "header declares {} {k}-grams but the section has {found}",
                self.declared[k - 1]
            ));
        }
        Ok(())
    }
}

fn parse_entry(vocab: &Vocabulary, k: usize, line: &str) -> std::result::Result<(Gram, Entry), String> {
    let mut cols = line.split('\t');
    let prob: f64 = cols
        .next()
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| format!("bad probability in {line:?}"))?;
    let words = cols.next().ok_or_else(|| format!("missing n-gram in {line:?}"))?;
    let backoff: f64 = match cols.next() {
        Some(c) => c.trim().parse().map_err(|_| format!("bad backoff in {line:?}"))?,
        None => 0.0,
    };
    if cols.next().is_some() {
        return Err(format!("too many columns in {line:?}"));
    }
    let mut ids: Vec<TokenId> = Vec::with_capacity(k);
    for w in words.split(' ') {
        ids.push(
            vocab
                .lookup_symbol(w)
                .ok_or_else(|| format!("word {w:?} is not in the vocabulary"))?,
        );
    }
    if ids.len() != k {
        return Err(format!("expected {k} words, found {}", ids.len()));
    }
    let log_prob = if prob <= -99.0 { LOG_ZERO } else { prob * LN_10 };
    Ok((
        Gram::new(&ids),
        Entry {
            log_prob,
            backoff: backoff * LN_10,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::ngram::{count, EstimateOptions};
    use crate::tokenizer::Tokenizer;

    fn fixture() -> (Vocabulary, NGramModel) {
        let texts = ["a b a c a b", "b b c", "c a b a", "a"];
        let docs: Vec<Document> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document {
                id: i.to_string(),
                text: t.to_string(),
                tokens: None,
            })
            .collect();
        let vocab = Vocabulary::freeze(&docs);
        let tok = Tokenizer::new(vocab.clone()).tokenize_all(&docs).unwrap();
        let counts = count(&tok, 3, vocab.reserved()).unwrap();
        (vocab, NGramModel::estimate(&counts, EstimateOptions::default()).unwrap())
    }

    fn serialize(vocab: &Vocabulary, m: &NGramModel) -> String {
        let mut out = Vec::new();
        m.write_arpa(vocab, &mut out, Some("cafe")).unwrap();
        String::from_utf8(out).unwrap()
    }

    #[test]
    fn round_trip_preserves_queries() {
        let (vocab, m) = fixture();
        let text = serialize(&vocab, &m);
        let loaded = NGramModel::read_arpa(&vocab, text.as_bytes()).unwrap();
        assert_eq!(loaded.order(), 3);
        assert_eq!(loaded.discounts(2), m.discounts(2));
        let ids = m.vocabulary();
        for &x in &ids {
            for &y in &ids {
                for &w in &ids {
                    let a = m.log_prob(&[x, y], w);
                    let b = loaded.log_prob(&[x, y], w);
                    assert!((a - b).abs() < 1e-4, "({x},{y})->{w}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn header_counts_match_sections() {
        let (vocab, m) = fixture();
        let text = serialize(&vocab, &m);
        for k in 1..=3 {
            assert!(text.contains(&format!("ngram {k}={}", m.len(k))));
            let section = text
                .split(&format!("\\{k}-grams:\n"))
                .nth(1)
                .unwrap()
                .split("\n\n")
                .next()
                .unwrap();
            assert_eq!(section.lines().count(), m.len(k));
        }
        assert!(text.trim_end().ends_with("\\end\\"));
        assert!(text.contains("-99.0000000\t<s>"));
    }

    #[test]
    fn count_mismatch_is_a_parse_error_with_line() {
        let (vocab, m) = fixture();
        let text = serialize(&vocab, &m);
        let declared = format!("ngram 2={}", m.len(2));
        let broken = text.replace(&declared, &format!("ngram 2={}", m.len(2) + 1));
        match NGramModel::read_arpa(&vocab, broken.as_bytes()) {
            Err(Error::Arpa { line, message }) => {
                assert!(line > 0);
                assert!(message.contains("2-grams"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_headers_are_rejected() {
        let (vocab, _) = fixture();
        for bad in [
            "\\data\\\nngram 1=1\n\n\\2-grams:\n",
            "\\data\\\nngram 2=1\n",
            "\\data\\\nngram 1=1\nngram 2=0\n\n\\1-grams:\n-1\t<unk>\n\n\\2-grams:\n\n",
            "no data section at all\n",
        ] {
            assert!(
                matches!(NGramModel::read_arpa(&vocab, bad.as_bytes()), Err(Error::Arpa { .. })),
                "{bad:?}"
            );
        }
    }
}
