use std::io::{Read, Write};

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use super::{Gram, MAX_ORDER};
use crate::error::{Error, Result};
use crate::tokenizer::{Reserved, TokenId, TokenizedDocument};

const SHARD_MAGIC: &[u8; 8] = b"SDNGCNT\0";
const SHARD_VERSION: u32 = 1;

/// Raw k-gram occurrence counts for k = 1..=order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramCounts {
    order: usize,
    reserved: Reserved,
    tables: Vec<FxHashMap<Gram, u64>>,
}

impl NGramCounts {
    pub fn new(order: usize, reserved: Reserved) -> Result<Self> {
        if !(2..=MAX_ORDER).contains(&order) {
            return Err(Error::Config(format!(
                "n-gram order must be in 2..={MAX_ORDER}, got {order}"
            )));
        }
        Ok(Self {
            order,
            reserved,
            tables: vec![FxHashMap::default(); order],
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn reserved(&self) -> Reserved {
        self.reserved
    }

    /// Counts for grams of length `k` (1-based).
    pub fn table(&self, k: usize) -> &FxHashMap<Gram, u64> {
        &self.tables[k - 1]
    }

    pub fn get(&self, gram: &[TokenId]) -> u64 {
        self.tables
            .get(gram.len().wrapping_sub(1))
            .and_then(|t| t.get(&Gram::new(gram)))
            .copied()
            .unwrap_or(0)
    }

    /// Adds one document: pads it and counts every k-gram ending on a
    /// scored position (each token, then `</s>`).
    pub fn add_document(&mut self, tokens: &[TokenId]) {
        let n = self.order;
        let mut padded = Vec::with_capacity(tokens.len() + n);
        padded.resize(n - 1, self.reserved.bos);
        padded.extend_from_slice(tokens);
        padded.push(self.reserved.eos);
        for end in n - 1..padded.len() {
            for k in 1..=n {
                let gram = Gram::new(&padded[end + 1 - k..=end]);
                *self.tables[k - 1].entry(gram).or_insert(0) += 1;
            }
        }
    }

    /// Adds `other` into `self`. Counts are integers, so merging is
    /// associative and commutative.
    pub fn merge(&mut self, other: NGramCounts) -> Result<()> {
        if other.order != self.order || other.reserved != self.reserved {
            return Err(Error::Shard(format!(
                "cannot merge order-{} counts into order-{} counts with different reserved ids",
                other.order, self.order
            )));
        }
        for (mine, theirs) in self.tables.iter_mut().zip(other.tables) {
            if mine.len() < theirs.len() {
                let small = std::mem::replace(mine, theirs);
                for (g, c) in small {
                    *mine.entry(g).or_insert(0) += c;
                }
            } else {
                for (g, c) in theirs {
                    *mine.entry(g).or_insert(0) += c;
                }
            }
        }
        Ok(())
    }

    /// Number of scored positions (document tokens plus one `</s>` each).
    pub fn scored_positions(&self) -> u64 {
        self.tables[0].values().sum()
    }

    /// Writes the counts as a versioned little-endian shard. Entries are
    /// sorted so identical counts give identical bytes.
    pub fn write_shard<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(SHARD_MAGIC)?;
        for v in [
            SHARD_VERSION,
            self.order as u32,
            self.reserved.unk,
            self.reserved.bos,
            self.reserved.eos,
        ] {
            out.write_all(&v.to_le_bytes())?;
        }
        for table in &self.tables {
            let mut entries: Vec<_> = table.iter().collect();
            entries.sort_unstable();
            out.write_all(&(entries.len() as u64).to_le_bytes())?;
            for (gram, count) in entries {
                for id in gram.as_slice() {
                    out.write_all(&id.to_le_bytes())?;
                }
                out.write_all(&count.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_shard<R: Read>(mut input: R) -> Result<Self> {
        let io = |e: std::io::Error| Error::Shard(e.to_string());
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(io)?;
        if &magic != SHARD_MAGIC {
            return Err(Error::Shard("bad magic".into()));
        }
        let mut u32s = [0u32; 5];
        for v in &mut u32s {
            let mut b = [0u8; 4];
            input.read_exact(&mut b).map_err(io)?;
            *v = u32::from_le_bytes(b);
        }
        let [version, order, unk, bos, eos] = u32s;
        if version != SHARD_VERSION {
            return Err(Error::Shard(format!("unsupported version {version}")));
        }
        let mut counts = Self::new(order as usize, Reserved { unk, bos, eos })
            .map_err(|e| Error::Shard(e.to_string()))?;
        let mut ids = [0 as TokenId; MAX_ORDER];
        for k in 1..=counts.order {
            let mut b8 = [0u8; 8];
            input.read_exact(&mut b8).map_err(io)?;
            let entries = u64::from_le_bytes(b8);
            let table = &mut counts.tables[k - 1];
            for _ in 0..entries {
                for id in ids.iter_mut().take(k) {
                    let mut b = [0u8; 4];
                    input.read_exact(&mut b).map_err(io)?;
                    *id = u32::from_le_bytes(b);
                }
                input.read_exact(&mut b8).map_err(io)?;
                let count = u64::from_le_bytes(b8);
                if table.insert(Gram::new(&ids[..k]), count).is_some() {
                    return Err(Error::Shard(format!("repeated {k}-gram {:?}", &ids[..k])));
                }
            }
        }
        Ok(counts)
    }
}

/// Counts all k-grams of the corpus, k = 1..=n, in parallel over documents.
pub fn count(docs: &[TokenizedDocument], n: usize, reserved: Reserved) -> Result<NGramCounts> {
    let empty = NGramCounts::new(n, reserved)?;
    if docs.is_empty() {
        return Err(Error::Config("cannot count an empty corpus".into()));
    }
    let total = docs
        .par_iter()
        .fold(
            || empty.clone(),
            |mut acc, doc| {
                acc.add_document(&doc.tokens);
                acc
            },
        )
        .reduce(
            || empty.clone(),
            |mut a, b| {
                a.merge(b).expect("shards share order and reserved ids");
                a
            },
        );
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const R: Reserved = Reserved {
        unk: 100,
        bos: 101,
        eos: 102,
    };

    fn docs(raw: &[&[TokenId]]) -> Vec<TokenizedDocument> {
        raw.iter()
            .enumerate()
            .map(|(i, t)| TokenizedDocument {
                id: i.to_string(),
                tokens: t.to_vec(),
            })
            .collect()
    }

    #[test]
    fn counts_bigrams_inside_a_document() {
        let c = count(&docs(&[&[0, 1, 0, 1]]), 2, R).unwrap();
        assert_eq!(c.get(&[0, 1]), 2);
        assert_eq!(c.get(&[1, 0]), 1);
        // padding grams
        assert_eq!(c.get(&[R.bos, 0]), 1);
        assert_eq!(c.get(&[1, R.eos]), 1);
        assert_eq!(c.get(&[R.bos]), 0);
        assert_eq!(c.scored_positions(), 5);
    }

    #[test]
    fn grams_never_span_documents() {
        let c = count(&docs(&[&[0, 1], &[1, 0]]), 3, R).unwrap();
        for g in c.table(3).keys() {
            let s = g.as_slice();
            assert!(!(s.contains(&R.eos) && s.last() != Some(&R.eos)), "{g:?}");
        }
        assert_eq!(c.get(&[0, 1, 1]), 0);
        assert_eq!(c.get(&[1, R.eos, 1]), 0);
        assert_eq!(c.get(&[R.bos, 1, 0]), 1);
    }

    #[test]
    fn rejects_bad_order() {
        assert!(NGramCounts::new(1, R).is_err());
        assert!(NGramCounts::new(MAX_ORDER + 1, R).is_err());
    }

    #[test]
    fn shard_round_trip_and_rejects_garbage() {
        let c = count(&docs(&[&[0, 1, 2, 0, 1], &[2, 2]]), 3, R).unwrap();
        let mut bytes = Vec::new();
        c.write_shard(&mut bytes).unwrap();
        assert_eq!(NGramCounts::read_shard(&bytes[..]).unwrap(), c);
        let mut again = Vec::new();
        c.write_shard(&mut again).unwrap();
        assert_eq!(bytes, again);

        assert!(NGramCounts::read_shard(&b"NOTASHARD"[..]).is_err());
        bytes[8] = 9; // version
        assert!(NGramCounts::read_shard(&bytes[..]).is_err());
    }

    fn corpus_strategy() -> impl Strategy<Value = Vec<Vec<TokenId>>> {
        prop::collection::vec(prop::collection::vec(0u32..6, 1..12), 1..10)
    }

    proptest! {
        #[test]
        fn sharded_counts_equal_sequential(corpus in corpus_strategy(), split in 0usize..10, n in 2usize..5) {
            let all = docs(&corpus.iter().map(Vec::as_slice).collect::<Vec<_>>());
            let mut seq = NGramCounts::new(n, R).unwrap();
            for d in &all {
                seq.add_document(&d.tokens);
            }
            let split = split.min(all.len());
            let mut left = count(&all[..split.max(1)], n, R).unwrap();
            if split.max(1) < all.len() {
                let right = count(&all[split.max(1)..], n, R).unwrap();
                // merge in both orders
                let mut other = right.clone();
                other.merge(left.clone()).unwrap();
                left.merge(right).unwrap();
                prop_assert_eq!(&left, &other);
            }
            prop_assert_eq!(&left, &seq);
            prop_assert_eq!(count(&all, n, R).unwrap(), seq);
        }

        #[test]
        fn marginals_are_consistent(corpus in corpus_strategy(), n in 2usize..5) {
            let all = docs(&corpus.iter().map(Vec::as_slice).collect::<Vec<_>>());
            let c = count(&all, n, R).unwrap();
            for k in 1..n {
                // left marginal: every k-gram occurrence has exactly one
                // left neighbour thanks to the padding.
                let mut left: FxHashMap<Gram, u64> = FxHashMap::default();
                for (g, &v) in c.table(k + 1) {
                    *left.entry(g.lower()).or_insert(0) += v;
                }
                prop_assert_eq!(&left, c.table(k));
                // right marginal: occurrences ending on </s> have no right
                // extension; nothing else is truncated.
                let mut right: FxHashMap<Gram, u64> = FxHashMap::default();
                for (g, &v) in c.table(k + 1) {
                    if g.context().last() != Some(R.bos) {
                        *right.entry(g.context()).or_insert(0) += v;
                    }
                }
                for (g, &v) in c.table(k) {
                    let expected = if g.last() == Some(R.eos) { 0 } else { v };
                    prop_assert_eq!(right.get(g).copied().unwrap_or(0), expected);
                }
            }
        }
    }
}
