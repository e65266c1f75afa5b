use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};

/// Per-band buckets keyed by the exact band content. Members are document
/// indices in ascending order.
#[derive(Debug)]
pub struct BucketMap {
    bands: Vec<Vec<Vec<u32>>>,
}

/// Splits each signature into `b` bands of `r` rows and groups documents
/// whose band contents are identical.
pub fn lsh_buckets(signatures: &[Vec<u64>], b: usize, r: usize) -> Result<BucketMap> {
    let h = signatures.first().map_or(b * r, Vec::len);
    if b == 0 || r == 0 || b * r != h {
        return Err(Error::Config(format!(
            "bands ({b}) x rows ({r}) must equal the signature length ({h})"
        )));
    }
    if let Some(s) = signatures.iter().find(|s| s.len() != h) {
        return Err(Error::Consistency(format!(
            "signature of length {} among length-{h} signatures",
            s.len()
        )));
    }
    let bands = (0..b)
        .into_par_iter()
        .map(|band| {
            let rows = band * r..(band + 1) * r;
            let mut map: FxHashMap<&[u64], Vec<u32>> = FxHashMap::default();
            for (i, s) in signatures.iter().enumerate() {
                map.entry(&s[rows.clone()]).or_default().push(i as u32);
            }
            let mut buckets: Vec<Vec<u32>> = map.into_values().filter(|v| v.len() > 1).collect();
            buckets.sort_unstable();
            buckets
        })
        .collect();
    Ok(BucketMap { bands })
}

impl BucketMap {
    pub fn bands(&self) -> usize {
        self.bands.len()
    }

    /// Buckets with at least two members.
    pub fn buckets(&self) -> impl Iterator<Item = &[u32]> + '_ {
        self.bands.iter().flatten().map(Vec::as_slice)
    }

    /// Every co-bucketed pair `(i, j)`, `i < j`, sorted and deduplicated.
    pub fn candidate_pairs(&self) -> Vec<(u32, u32)> {
        let mut pairs: Vec<(u32, u32)> = self
            .buckets()
            .flat_map(|m| {
                m.iter()
                    .enumerate()
                    .flat_map(move |(x, &i)| m[x + 1..].iter().map(move |&j| (i, j)))
            })
            .collect();
        pairs.par_sort_unstable();
        pairs.dedup();
        pairs
    }

    /// Each bucket's first member paired with every other member. Same
    /// connected components as `candidate_pairs` with linear size.
    pub fn linking_pairs(&self) -> Vec<(u32, u32)> {
        let mut pairs: Vec<(u32, u32)> = self
            .buckets()
            .flat_map(|m| m[1..].iter().map(move |&j| (m[0], j)))
            .collect();
        pairs.par_sort_unstable();
        pairs.dedup();
        pairs
    }
}

/// Probability that a pair with Jaccard similarity `j` shares at least one
/// band.
pub fn candidate_probability(j: f64, b: usize, r: usize) -> f64 {
    1.0 - (1.0 - j.powi(r as i32)).powi(b as i32)
}
