//! Interpolated modified Kneser-Ney n-gram language model.
//!
//! Documents are padded with `order - 1` `<s>` tokens and one `</s>`; every
//! k-gram (k = 1..=order) that ends on a real token or on `</s>` is counted,
//! so n-grams never cross document boundaries and `<s>` is never predicted.
//!
//! [`count`] produces [`NGramCounts`], [`NGramModel::estimate`] turns them
//! into backoff tables, and [`NGramModel::log_prob`] answers queries by
//! longest match plus accumulated backoff weights.

mod arpa;
mod counts;
mod model;

pub use counts::{count, NGramCounts};
pub use model::{Discounts, EstimateOptions, NGramModel, LOG_ZERO};

use std::fmt;

use crate::tokenizer::TokenId;

/// Largest supported model order.
pub const MAX_ORDER: usize = 8;

/// A token-id tuple of length `1..=MAX_ORDER`, stored inline so it can be
/// used as a hash key without allocation.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Gram {
    len: u8,
    ids: [TokenId; MAX_ORDER],
}

impl Gram {
    pub const EMPTY: Gram = Gram {
        len: 0,
        ids: [0; MAX_ORDER],
    };

    /// Panics if `ids` is longer than [`MAX_ORDER`].
    pub fn new(ids: &[TokenId]) -> Self {
        let mut g = Self::EMPTY;
        g.ids[..ids.len()].copy_from_slice(ids);
        g.len = ids.len() as u8;
        g
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.ids[..self.len as usize]
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn first(&self) -> Option<TokenId> {
        self.as_slice().first().copied()
    }

    pub fn last(&self) -> Option<TokenId> {
        self.as_slice().last().copied()
    }

    /// All but the last id: the context of this gram.
    pub fn context(&self) -> Gram {
        let mut g = *self;
        if g.len > 0 {
            g.len -= 1;
            g.ids[g.len as usize] = 0;
        }
        g
    }

    /// All but the first id: the next-lower-order gram.
    pub fn lower(&self) -> Gram {
        Gram::new(self.as_slice().get(1..).unwrap_or(&[]))
    }

    pub fn extend(&self, id: TokenId) -> Gram {
        let mut g = *self;
        g.ids[g.len as usize] = id;
        g.len += 1;
        g
    }
}

impl fmt::Debug for Gram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}
