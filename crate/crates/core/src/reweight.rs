//! Equal-count commonness segments and their sampling weights
//! `W_k = C * (1 / p_k)^T`.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::commonness::CommonnessRecord;
use crate::digest::Digester;
use crate::error::{Error, Result};

/// Which value represents a segment in the weight formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantileStat {
    /// Largest commonness in the segment.
    #[default]
    Upper,
    /// Median commonness in the segment.
    Median,
}

impl fmt::Display for QuantileStat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuantileStat::Upper => "upper",
            QuantileStat::Median => "median",
        })
    }
}

impl FromStr for QuantileStat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper" => Ok(QuantileStat::Upper),
            "median" => Ok(QuantileStat::Median),
            other => Err(Error::Config(format!(
                "quantile_stat must be `upper` or `median`, got `{other}`"
            ))),
        }
    }
}

/// How the exponent is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightSpec {
    Exponent(f64),
    /// Target `W_1 / W_K`.
    Ratio(f64),
}

/// Documents sorted by ascending `(commonness, doc_id)` and cut into `K`
/// segments. Segment `k` (0-based) holds sorted positions
/// `floor(k*M/K) .. floor((k+1)*M/K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPlan {
    stat: QuantileStat,
    members: Vec<String>,
    bounds: Vec<usize>,
    quantiles: Vec<f64>,
    weights: Option<Vec<f64>>,
    exponent: Option<f64>,
    normalizer: Option<f64>,
}

impl SegmentPlan {
    pub fn partition(records: &[CommonnessRecord], k: usize, stat: QuantileStat) -> Result<Self> {
        let m = records.len();
        if k == 0 {
            return Err(Error::Config("segment count must be at least 1".into()));
        }
        if k > m {
            return Err(Error::Config(format!(
                "cannot split {m} documents into {k} segments"
            )));
        }
        let mut seen = FxHashSet::default();
        for r in records {
            if !seen.insert(r.doc_id.as_str()) {
                return Err(Error::DuplicateId {
                    id: r.doc_id.clone(),
                    path: "commonness records".into(),
                    line: 0,
                });
            }
        }
        let mut sorted: Vec<&CommonnessRecord> = records.iter().collect();
        sorted.par_sort_unstable_by(|a, b| {
            a.commonness
                .total_cmp(&b.commonness)
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        let bounds: Vec<usize> = (0..=k).map(|i| i * m / k).collect();
        let quantiles = bounds
            .windows(2)
            .map(|w| {
                let seg = &sorted[w[0]..w[1]];
                match stat {
                    QuantileStat::Upper => seg[seg.len() - 1].commonness,
                    QuantileStat::Median => {
                        let mid = seg.len() / 2;
                        if seg.len() % 2 == 1 {
                            seg[mid].commonness
                        } else {
                            (seg[mid - 1].commonness + seg[mid].commonness) / 2.0
                        }
                    }
                }
            })
            .collect();
        Ok(Self {
            stat,
            members: sorted.into_iter().map(|r| r.doc_id.clone()).collect(),
            bounds,
            quantiles,
            weights: None,
            exponent: None,
            normalizer: None,
        })
    }

    pub fn k(&self) -> usize {
        self.quantiles.len()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn stat(&self) -> QuantileStat {
        self.stat
    }

    pub fn quantiles(&self) -> &[f64] {
        &self.quantiles
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn exponent(&self) -> Option<f64> {
        self.exponent
    }

    /// `C` such that `W_k = C * (1/p_k)^T`.
    pub fn normalizer(&self) -> Option<f64> {
        self.normalizer
    }

    /// Document ids of segment `k`, ascending by commonness.
    pub fn segment(&self, k: usize) -> &[String] {
        &self.members[self.bounds[k]..self.bounds[k + 1]]
    }

    pub fn segment_sizes(&self) -> Vec<usize> {
        self.bounds.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// `(doc_id, segment)` in ascending commonness order.
    pub fn assignments(&self) -> impl Iterator<Item = (&str, usize)> + '_ {
        (0..self.k()).flat_map(move |k| self.segment(k).iter().map(move |id| (id.as_str(), k)))
    }

    /// Sets `W_k = (1/p_k)^T / sum_j (1/p_j)^T`.
    pub fn assign_weights(&mut self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Config(format!("exponent must be finite and >= 0, got {t}")));
        }
        if let Some(p) = self.quantiles.iter().find(|p| p.is_nan() || **p <= 0.0) {
            return Err(Error::Consistency(format!(
                "segment quantile {p} is not positive"
            )));
        }
        // log-space with the max factored out so large T cannot overflow
        let logs: Vec<f64> = self.quantiles.iter().map(|p| -t * p.ln()).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = scaled.iter().sum();
        self.weights = Some(scaled.iter().map(|s| s / total).collect());
        self.normalizer = Some((-(top + total.ln())).exp());
        self.exponent = Some(t);
        Ok(())
    }

    /// `T = ln(ratio) / ln(p_K / p_1)`, so that `W_1 / W_K = ratio`.
    pub fn solve_exponent(&self, ratio: f64) -> Result<f64> {
        if !(ratio >= 1.0 && ratio.is_finite()) {
            return Err(Error::Config(format!("target ratio must be >= 1, got {ratio}")));
        }
        if ratio == 1.0 {
            return Ok(0.0);
        }
        let (p1, pk) = (self.quantiles[0], self.quantiles[self.k() - 1]);
        if pk.is_nan() || pk <= p1 {
            return Err(Error::DegenerateSpread(p1));
        }
        Ok(ratio.ln() / (pk / p1).ln())
    }

    pub fn apply(&mut self, spec: WeightSpec) -> Result<f64> {
        let t = match spec {
            WeightSpec::Exponent(t) => t,
            WeightSpec::Ratio(r) => self.solve_exponent(r)?,
        };
        self.assign_weights(t)?;
        Ok(t)
    }

    /// Digest of the segment table and assignments.
    pub fn digest(&self) -> String {
        let mut d = Digester::new();
        d.str(&self.stat.to_string()).u64(self.k() as u64);
        for &q in &self.quantiles {
            d.f64(q);
        }
        for &w in self.weights.iter().flatten() {
            d.f64(w);
        }
        d.f64(self.exponent.unwrap_or(f64::NAN));
        for (id, k) in self.assignments() {
            d.str(id).u64(k as u64);
        }
        d.finish()
    }

    pub fn write<W: Write>(&self, mut out: W, config_digest: Option<&str>) -> std::io::Result<()> {
        let header = PlanHeader {
            artifact: ARTIFACT.into(),
            k: self.k(),
            documents: self.len(),
            quantile_stat: self.stat,
            exponent: self.exponent,
            normalizer: self.normalizer,
            quantiles: self.quantiles.clone(),
            weights: self.weights.clone(),
            sizes: self.segment_sizes(),
            config_digest: config_digest.map(str::to_owned),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for (doc_id, segment) in self.assignments() {
            serde_json::to_writer(&mut out, &Assignment { doc_id: doc_id.into(), segment })?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<(Self, Option<String>)> {
        let bad = |line: usize, message: String| Error::Malformed {
            path: ARTIFACT.into(),
            line,
            message,
        };
        let mut lines = input.lines().enumerate();
        let header: PlanHeader = match lines.next() {
            Some((_, l)) => serde_json::from_str(&l.map_err(|e| bad(1, e.to_string()))?)
                .map_err(|e| bad(1, e.to_string()))?,
            None => return Err(bad(1, "empty file".into())),
        };
        if header.artifact != ARTIFACT {
            return Err(bad(1, format!("expected a {ARTIFACT} file, found {}", header.artifact)));
        }
        if header.sizes.len() != header.k || header.quantiles.len() != header.k {
            return Err(bad(1, "segment table length differs from k".into()));
        }
        let mut bounds = vec![0];
        for s in &header.sizes {
            bounds.push(bounds.last().unwrap() + s);
        }
        let mut members = Vec::with_capacity(header.documents);
        for (i, l) in lines {
            let l = l.map_err(|e| bad(i + 1, e.to_string()))?;
            if l.trim().is_empty() {
                continue;
            }
            let a: Assignment = serde_json::from_str(&l).map_err(|e| bad(i + 1, e.to_string()))?;
            let n = members.len();
            if a.segment >= header.k || !(bounds[a.segment]..bounds[a.segment + 1]).contains(&n) {
                return Err(bad(i + 1, format!("{} is out of segment order", a.doc_id)));
            }
            members.push(a.doc_id);
        }
        if members.len() != header.documents || bounds[header.k] != members.len() {
            return Err(bad(0, format!(
                "header declares {} assignments, found {}",
                header.documents,
                members.len()
            )));
        }
        let plan = Self {
            stat: header.quantile_stat,
            members,
            bounds,
            quantiles: header.quantiles,
            weights: header.weights,
            exponent: header.exponent,
            normalizer: header.normalizer,
        };
        Ok((plan, header.config_digest))
    }
}

pub const ARTIFACT: &str = "plan";

#[derive(Debug, Serialize, Deserialize)]
struct PlanHeader {
    artifact: String,
    k: usize,
    documents: usize,
    quantile_stat: QuantileStat,
    exponent: Option<f64>,
    normalizer: Option<f64>,
    quantiles: Vec<f64>,
    weights: Option<Vec<f64>>,
    sizes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_digest: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Assignment {
    doc_id: String,
    segment: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(values: &[f64]) -> Vec<CommonnessRecord> {
        values
            .iter()
            .enumerate()
            .map(|(i, &c)| CommonnessRecord {
                doc_id: format!("d{i:03}"),
                commonness: c,
                log_commonness: c.ln(),
                n_tokens: 10,
            })
            .collect()
    }

    fn plan(values: &[f64], k: usize) -> SegmentPlan {
        SegmentPlan::partition(&recs(values), k, QuantileStat::Upper).unwrap()
    }

    #[test]
    fn four_records_two_segments() {
        let p = plan(&[0.3, 0.1, 0.4, 0.2], 2);
        assert_eq!(p.quantiles(), &[0.2, 0.4]);
        assert_eq!(p.segment(0), &["d001", "d003"]);
        assert_eq!(p.segment(1), &["d000", "d002"]);
    }

    #[test]
    fn single_segment_takes_the_max() {
        let p = plan(&[0.3, 0.1, 0.4], 1);
        assert_eq!(p.quantiles(), &[0.4]);
        assert_eq!(p.segment(0).len(), 3);
    }

    #[test]
    fn ties_split_by_doc_id() {
        let p = plan(&[0.5; 8], 4);
        assert_eq!(p.quantiles(), &[0.5; 4]);
        assert_eq!(p.segment(0), &["d000", "d001"]);
        assert_eq!(p.segment(3), &["d006", "d007"]);
    }

    #[test]
    fn median_stat() {
        let p = SegmentPlan::partition(&recs(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]), 2, QuantileStat::Median).unwrap();
        assert_eq!(p.quantiles(), &[0.2, 0.5]);
        let p = SegmentPlan::partition(&recs(&[0.1, 0.2, 0.3, 0.4]), 1, QuantileStat::Median).unwrap();
        assert!((p.quantiles()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn bad_segment_counts() {
        assert!(SegmentPlan::partition(&recs(&[0.1, 0.2]), 0, QuantileStat::Upper).is_err());
        assert!(SegmentPlan::partition(&recs(&[0.1, 0.2]), 3, QuantileStat::Upper).is_err());
        let mut r = recs(&[0.1, 0.2]);
        r[1].doc_id = r[0].doc_id.clone();
        assert!(SegmentPlan::partition(&r, 1, QuantileStat::Upper).is_err());
    }

    #[test]
    fn worked_weights() {
        let mut p = plan(&[0.1, 0.2], 2);
        p.assign_weights(1.0).unwrap();
        let w = p.weights().unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.normalizer().unwrap() - 1.0 / 15.0).abs() < 1e-15);

        let mut p = plan(&[0.1, 0.2, 0.4], 3);
        p.assign_weights(1.0).unwrap();
        let w = p.weights().unwrap();
        for (a, b) in w.iter().zip([4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]) {
            assert!((a - b).abs() < 1e-15);
        }

        p.assign_weights(0.0).unwrap();
        assert!(p.weights().unwrap().iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-15));
        assert!(p.assign_weights(-1.0).is_err());
    }

    #[test]
    fn exponent_closed_form() {
        let p = plan(&[0.1, 0.2, 0.4], 3);
        assert!((p.solve_exponent(10.0).unwrap() - 1.6609640474).abs() < 1e-9);
        assert_eq!(p.solve_exponent(1.0).unwrap(), 0.0);
        assert!(p.solve_exponent(0.5).is_err());

        let mut p = plan(&[0.05, 0.3, 0.5], 3);
        let t = p.apply(WeightSpec::Ratio(2.0)).unwrap();
        assert!((t - std::f64::consts::LOG10_2).abs() < 1e-12);
        let w = p.weights().unwrap();
        assert!((w[0] / w[2] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn flat_spread_is_degenerate() {
        let p = plan(&[0.2; 6], 3);
        assert!(matches!(p.solve_exponent(5.0), Err(Error::DegenerateSpread(_))));
        assert_eq!(p.solve_exponent(1.0).unwrap(), 0.0);
    }

    #[test]
    fn large_exponent_does_not_overflow() {
        let mut p = plan(&[1e-30, 1e-3, 0.9], 3);
        p.assign_weights(8.0).unwrap();
        let w = p.weights().unwrap();
        assert!(w.iter().all(|x| x.is_finite()));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plan_round_trip() {
        let mut p = plan(&[0.3, 0.1, 0.4, 0.2, 0.25], 3);
        p.apply(WeightSpec::Ratio(5.0)).unwrap();
        let mut buf = Vec::new();
        p.write(&mut buf, Some("cfg")).unwrap();
        let (back, digest) = SegmentPlan::read(&buf[..]).unwrap();
        assert_eq!(back, p);
        assert_eq!(digest.as_deref(), Some("cfg"));
    }
}
