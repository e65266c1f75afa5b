use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use super::counts::NGramCounts;
use super::Gram;
use crate::error::{Error, Result};
use crate::tokenizer::{Reserved, TokenId};

/// Natural log of the probability stored for events that cannot occur
/// (`<s>` as a predicted token). Matches the ARPA convention of `-99`.
pub const LOG_ZERO: f64 = -99.0 * std::f64::consts::LN_10;

/// Fallback discount for orders whose count-of-counts are degenerate.
const FALLBACK_DISCOUNT: f64 = 0.5;

/// Modified Kneser-Ney discounts for one order: one value each for grams
/// seen once, twice, and three or more times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discounts {
    pub one: f64,
    pub two: f64,
    pub three_plus: f64,
}

impl Discounts {
    pub const FALLBACK: Discounts = Discounts {
        one: FALLBACK_DISCOUNT,
        two: FALLBACK_DISCOUNT,
        three_plus: FALLBACK_DISCOUNT,
    };

    pub fn for_count(&self, count: u64) -> f64 {
        match count {
            0 => 0.0,
            1 => self.one,
            2 => self.two,
            _ => self.three_plus,
        }
    }

    /// Closed-form estimate from count-of-counts `n[i] = #grams with count i+1`.
    ///
    /// `D(i) = i - (i+1) Y n_{i+1} / n_i` with `Y = n_1 / (n_1 + 2 n_2)`.
    /// Returns `None` when any of `n_1..n_4` is zero or a discount falls
    /// outside `(0, i)`; a zero discount would leave contexts with no mass
    /// for unseen tokens.
    pub fn from_count_of_counts(n: [u64; 4]) -> Option<Discounts> {
        if n.contains(&0) {
            return None;
        }
        let n = n.map(|c| c as f64);
        let y = n[0] / (n[0] + 2.0 * n[1]);
        let d = |i: usize| {
            let fi = i as f64;
            Some(fi - (fi + 1.0) * y * n[i] / n[i - 1]).filter(|&d| d > 0.0 && d < fi)
        };
        Some(Discounts {
            one: d(1)?,
            two: d(2)?,
            three_plus: d(3)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    /// Grams of order >= 2 seen fewer times are pruned (1 = keep all).
    pub min_count: u64,
    /// Per-order discounts to use instead of the count-of-counts estimate.
    pub discounts: Option<Vec<Discounts>>,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            min_count: 1,
            discounts: None,
        }
    }
}

/// One stored gram: its interpolated probability and, if it serves as a
/// context for the next order, the backoff weight (both natural log).
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Entry {
    pub log_prob: f64,
    pub backoff: f64,
}

#[derive(Default, Clone, Copy)]
struct ContextStats {
    total: u64,
    n1: u64,
    n2: u64,
    n3: u64,
}

impl ContextStats {
    fn gamma(&self, d: &Discounts) -> f64 {
        (d.one * self.n1 as f64 + d.two * self.n2 as f64 + d.three_plus * self.n3 as f64)
            / self.total as f64
    }
}

/// A backoff n-gram model. Immutable once built; safe to share across
/// threads for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    pub(crate) order: usize,
    pub(crate) reserved: Reserved,
    /// Per order, `None` when loaded from a file that did not record them.
    pub(crate) discounts: Vec<Option<Discounts>>,
    pub(crate) tables: Vec<FxHashMap<Gram, Entry>>,
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn reserved(&self) -> Reserved {
        self.reserved
    }

    /// Discounts used at order `k` (1-based), if known.
    pub fn discounts(&self, k: usize) -> Option<Discounts> {
        self.discounts.get(k - 1).copied().flatten()
    }

    /// Number of stored grams at order `k`.
    pub fn len(&self, k: usize) -> usize {
        self.tables[k - 1].len()
    }

    /// Token ids the model can predict, sorted: every id seen in training
    /// plus the reserved ids.
    pub fn vocabulary(&self) -> Vec<TokenId> {
        let mut v: Vec<TokenId> = self.tables[0].keys().map(|g| g.as_slice()[0]).collect();
        v.sort_unstable();
        v
    }

    pub fn contains(&self, gram: &[TokenId]) -> bool {
        gram.len() <= self.order
            && !gram.is_empty()
            && self.tables[gram.len() - 1].contains_key(&Gram::new(gram))
    }

    /// Stored log-probability of `gram`, if present.
    pub fn stored_log_prob(&self, gram: &[TokenId]) -> Option<f64> {
        self.entry(gram).map(|e| e.log_prob)
    }

    /// Stored log-backoff of `gram` (0 when it is not a context).
    pub fn stored_backoff(&self, gram: &[TokenId]) -> Option<f64> {
        self.entry(gram).map(|e| e.backoff)
    }

    fn entry(&self, gram: &[TokenId]) -> Option<&Entry> {
        if gram.is_empty() || gram.len() > self.order {
            return None;
        }
        self.tables[gram.len() - 1].get(&Gram::new(gram))
    }

    /// Ids the model never saw are scored as `<unk>`.
    pub fn map_unknown(&self, id: TokenId) -> TokenId {
        if self.tables[0].contains_key(&Gram::new(&[id])) {
            id
        } else {
            self.reserved.unk
        }
    }

    /// `ln P(token | context)`. Only the last `order - 1` context ids are
    /// used; shorter contexts are left-padded with `<s>`.
    pub fn log_prob(&self, context: &[TokenId], token: TokenId) -> f64 {
        let n = self.order;
        let mut ctx = [self.reserved.bos; super::MAX_ORDER];
        let keep = context.len().min(n - 1);
        let start = n - 1 - keep;
        for (slot, &id) in ctx[start..n - 1]
            .iter_mut()
            .zip(&context[context.len() - keep..])
        {
            *slot = self.map_unknown(id);
        }
        self.query(&ctx[..n - 1], self.map_unknown(token))
    }

    /// Backoff lookup over a full-length context of already-mapped ids.
    pub(crate) fn query(&self, context: &[TokenId], token: TokenId) -> f64 {
        if token == self.reserved.bos {
            return LOG_ZERO;
        }
        query_tables(&self.tables, context, token)
    }

    /// Interpolated modified Kneser-Ney estimation.
    ///
    /// Highest order uses raw counts; lower orders use continuation counts
    /// (distinct left extensions), except grams starting with `<s>`, which
    /// have no left extension and keep their raw count. `<unk>` receives the
    /// unigram mass freed by discounting.
    pub fn estimate(counts: &NGramCounts, options: EstimateOptions) -> Result<Self> {
        let n = counts.order();
        let reserved = counts.reserved();
        if counts.table(1).is_empty() {
            return Err(Error::Config("cannot estimate a model from empty counts".into()));
        }
        let adjusted = adjusted_counts(counts);
        let discounts: Vec<Discounts> = match &options.discounts {
            Some(fixed) if fixed.len() == n => fixed.clone(),
            Some(fixed) => {
                return Err(Error::Config(format!(
                    "{} discount sets given for an order-{n} model",
                    fixed.len()
                )))
            }
            None => estimate_discounts(&adjusted),
        };

        let mut tables: Vec<FxHashMap<Gram, Entry>> = Vec::with_capacity(n);
        for k in 1..=n {
            let d = &discounts[k - 1];
            let mut stats: FxHashMap<Gram, ContextStats> = FxHashMap::default();
            for (g, &c) in &adjusted[k - 1] {
                let s = stats.entry(g.context()).or_default();
                s.total += c;
                match c {
                    1 => s.n1 += 1,
                    2 => s.n2 += 1,
                    _ => s.n3 += 1,
                }
            }

            let mut table = FxHashMap::with_capacity_and_hasher(
                adjusted[k - 1].len() + 2,
                Default::default(),
            );
            for (g, &c) in &adjusted[k - 1] {
                let s = &stats[&g.context()];
                let own = (c as f64 - d.for_count(c)) / s.total as f64;
                let lower = if k == 1 {
                    if g.as_slice()[0] == reserved.unk {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    query_tables(&tables, g.context().lower().as_slice(), g.last().unwrap())
                        .exp()
                };
                table.insert(
                    *g,
                    Entry {
                        log_prob: (own + s.gamma(d) * lower).ln(),
                        backoff: 0.0,
                    },
                );
            }
            if k == 1 {
                let unk = Gram::new(&[reserved.unk]);
                table.entry(unk).or_insert_with(|| Entry {
                    log_prob: stats[&Gram::EMPTY].gamma(d).ln(),
                    backoff: 0.0,
                });
                table.insert(
                    Gram::new(&[reserved.bos]),
                    Entry {
                        log_prob: LOG_ZERO,
                        backoff: 0.0,
                    },
                );
            } else {
                let below = &mut tables[k - 2];
                for (ctx, s) in &stats {
                    let e = below.entry(*ctx).or_insert(Entry {
                        log_prob: LOG_ZERO,
                        backoff: 0.0,
                    });
                    e.backoff = s.gamma(d).ln();
                }
            }
            tables.push(table);
        }

        let mut model = NGramModel {
            order: n,
            reserved,
            discounts: discounts.into_iter().map(Some).collect(),
            tables,
        };
        if options.min_count > 1 {
            model.prune(counts, options.min_count);
        }
        Ok(model)
    }

    /// Drops grams of order >= 2 seen fewer than `min_count` times (unless a
    /// kept longer gram needs them as prefix or suffix) and recomputes the
    /// backoff weights so every context stays normalized.
    fn prune(&mut self, counts: &NGramCounts, min_count: u64) {
        let n = self.order;
        let is_pseudo = |g: &Gram| g.as_slice().iter().all(|&t| t == self.reserved.bos);
        let mut keep: Vec<FxHashSet<Gram>> = vec![FxHashSet::default(); n];
        keep[0] = self.tables[0].keys().copied().collect();
        for k in (2..=n).rev() {
            let mut set: FxHashSet<Gram> = FxHashSet::default();
            for g in self.tables[k - 1].keys() {
                let raw = counts.table(k).get(g).copied().unwrap_or(0);
                if is_pseudo(g) || raw >= min_count || keep.get(k).is_some_and(|s| s.contains(g)) {
                    set.insert(*g);
                }
            }
            if k < n {
                for g in &keep[k] {
                    set.insert(g.context());
                    set.insert(g.lower());
                }
            }
            keep[k - 1] = set;
        }
        for k in 2..=n {
            let kept = &keep[k - 1];
            self.tables[k - 1].retain(|g, _| kept.contains(g));
        }
        // Renormalize contexts bottom-up so lower-order queries are final.
        for k in 2..=n {
            let mut sums: FxHashMap<Gram, (f64, f64)> = FxHashMap::default();
            for (g, e) in &self.tables[k - 1] {
                let lower = query_tables(&self.tables[..k - 1], g.context().lower().as_slice(), g.last().unwrap());
                let s = sums.entry(g.context()).or_default();
                s.0 += e.log_prob.exp();
                s.1 += lower.exp();
            }
            let below = &mut self.tables[k - 2];
            for e in below.values_mut() {
                e.backoff = 0.0;
            }
            for (ctx, (high, low)) in sums {
                if let Some(e) = below.get_mut(&ctx) {
                    e.backoff = ((1.0 - high) / (1.0 - low)).ln();
                }
            }
        }
    }
}

fn estimate_discounts(adjusted: &[FxHashMap<Gram, u64>]) -> Vec<Discounts> {
    adjusted
        .iter()
        .enumerate()
        .map(|(i, table)| {
            let mut coc = [0u64; 4];
            for &c in table.values() {
                if (1..=4).contains(&c) {
                    coc[c as usize - 1] += 1;
                }
            }
            Discounts::from_count_of_counts(coc).unwrap_or_else(|| {
                log::warn!(
                    "order {}: degenerate count-of-counts {coc:?}, using discount {FALLBACK_DISCOUNT}",
                    i + 1
                );
                Discounts::FALLBACK
            })
        })
        .collect()
}

/// Adjusted counts per order (index k-1).
fn adjusted_counts(counts: &NGramCounts) -> Vec<FxHashMap<Gram, u64>> {
    let n = counts.order();
    let bos = counts.reserved().bos;
    let mut out = Vec::with_capacity(n);
    for k in 1..n {
        let mut a: FxHashMap<Gram, u64> = counts
            .table(k)
            .iter()
            .filter(|(g, _)| g.first() == Some(bos))
            .map(|(g, &c)| (*g, c))
            .collect();
        for g in counts.table(k + 1).keys() {
            let suffix = g.lower();
            if suffix.first() != Some(bos) {
                *a.entry(suffix).or_insert(0) += 1;
            }
        }
        out.push(a);
    }
    out.push(counts.table(n).clone());
    out
}

/// Longest match, adding the backoff of every longer context that missed.
/// `tables[k-1]` holds order `k`; `context` is truncated to fit.
fn query_tables(tables: &[FxHashMap<Gram, Entry>], context: &[TokenId], token: TokenId) -> f64 {
    let max = tables.len();
    let context = &context[context.len().saturating_sub(max - 1)..];
    let mut acc = 0.0;
    for k in (1..=context.len() + 1).rev() {
        let ctx = Gram::new(&context[context.len() + 1 - k..]);
        if let Some(e) = tables[k - 1].get(&ctx.extend(token)) {
            return acc + e.log_prob;
        }
        if k >= 2 {
            if let Some(e) = tables[k - 2].get(&ctx) {
                acc += e.backoff;
            }
        }
    }
    // Callers map unknown tokens to <unk>, which always has a unigram.
    LOG_ZERO
}
