//! Run summary: commonness histogram, per-segment weights, how much of the
//! draw mass lands on near-duplicates, and stage throughput.

use std::fmt::Write as _;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use super::StageMetrics;
use crate::commonness::CommonnessRecord;
use crate::decontam::ContaminationReport;
use crate::dedup::DedupOutcome;
use crate::reweight::SegmentPlan;
use crate::sampler::SamplingManifest;

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRow {
    pub segment: usize,
    pub size: usize,
    pub quantile: f64,
    pub weight: Option<f64>,
    /// Draws in the sampling manifest, if one exists.
    pub draws: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicationCapture {
    /// Documents in a hard-dedup cluster of two or more.
    pub duplicate_documents: usize,
    pub removed_by_hard_dedup: usize,
    pub mean_commonness_duplicates: f64,
    pub mean_commonness_unique: f64,
    /// Fraction of duplicate documents in the top fifth of segments.
    pub duplicates_in_top_segments: f64,
    /// Share of documents that are duplicates.
    pub corpus_share: f64,
    /// Share of expected draw mass that goes to duplicates.
    pub draw_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_digest: String,
    pub documents: usize,
    pub min_commonness: f64,
    pub max_commonness: f64,
    pub mean_commonness: f64,
    pub median_commonness: f64,
    pub histogram: Vec<Bin>,
    pub exponent: Option<f64>,
    pub segments: Vec<SegmentRow>,
    pub sampled_documents: Option<usize>,
    pub sampled_tokens: Option<u64>,
    pub duplication: Option<DuplicationCapture>,
    pub contaminated_documents: Option<usize>,
    pub throughput: Vec<StageMetrics>,
}

/// Bins spaced evenly in log commonness between the observed extremes.
pub fn histogram(values: &[f64]) -> Vec<Bin> {
    if values.is_empty() {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min).ln();
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max).ln();
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let mut bins: Vec<Bin> = (0..HISTOGRAM_BINS)
        .map(|i| Bin {
            lower: (lo + i as f64 * width).exp(),
            upper: if i + 1 == HISTOGRAM_BINS { hi.exp() } else { (lo + (i + 1) as f64 * width).exp() },
            count: 0,
        })
        .collect();
    for &v in values {
        let i = if width > 0.0 { ((v.ln() - lo) / width) as usize } else { 0 };
        bins[i.min(HISTOGRAM_BINS - 1)].count += 1;
    }
    bins
}

impl Report {
    pub fn build(
        records: &[CommonnessRecord],
        plan: Option<&SegmentPlan>,
        manifest: Option<&SamplingManifest>,
        dedup: Option<&DedupOutcome>,
        contamination: Option<&ContaminationReport>,
        throughput: Vec<StageMetrics>,
        config_digest: &str,
    ) -> Self {
        let values: Vec<f64> = records.iter().map(|r| r.commonness).collect();
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = match n {
            0 => 0.0,
            _ if n % 2 == 1 => sorted[n / 2],
            _ => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
        };

        let segments = plan
            .map(|plan| {
                let sizes = plan.segment_sizes();
                (0..plan.k())
                    .map(|k| SegmentRow {
                        segment: k,
                        size: sizes[k],
                        quantile: plan.quantiles()[k],
                        weight: plan.weights().map(|w| w[k]),
                        draws: manifest.and_then(|m| m.segment_draws.get(k).copied()),
                    })
                    .collect()
            })
            .unwrap_or_default();

        let duplication = dedup.map(|d| duplication_capture(records, plan, d));

        Report {
            config_digest: config_digest.to_owned(),
            documents: n,
            min_commonness: sorted.first().copied().unwrap_or(0.0),
            max_commonness: sorted.last().copied().unwrap_or(0.0),
            mean_commonness: if n == 0 { 0.0 } else { values.iter().sum::<f64>() / n as f64 },
            median_commonness: median,
            histogram: histogram(&values),
            exponent: plan.and_then(SegmentPlan::exponent),
            segments,
            sampled_documents: manifest.map(|m| m.entries.len()),
            sampled_tokens: manifest.map(|m| m.achieved_tokens),
            duplication,
            contaminated_documents: contamination.map(|c| c.flagged().len()),
            throughput,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "config digest   {}", self.config_digest);
        let _ = writeln!(s, "documents       {}", self.documents);
        let _ = writeln!(
            s,
            "commonness      min {:.6}  median {:.6}  mean {:.6}  max {:.6}",
            self.min_commonness, self.median_commonness, self.mean_commonness, self.max_commonness
        );
        if let Some(t) = self.exponent {
            let _ = writeln!(s, "exponent        {t:.6}");
        }

        let _ = writeln!(s, "\nhistogram (log-spaced)");
        let peak = self.histogram.iter().map(|b| b.count).max().unwrap_or(0).max(1);
        for b in &self.histogram {
            let bar = "#".repeat((b.count * 40).div_ceil(peak));
            let _ = writeln!(s, "  {:>10.6} - {:>10.6} {:>8} {bar}", b.lower, b.upper, b.count);
        }

        if !self.segments.is_empty() {
            let _ = writeln!(s, "\n{:>7} {:>8} {:>12} {:>12} {:>9}", "segment", "size", "quantile", "weight", "draws");
            for row in &self.segments {
                let weight = row.weight.map_or("-".into(), |w| format!("{w:.6}"));
                let draws = row.draws.map_or("-".into(), |d| d.to_string());
                let _ = writeln!(
                    s,
                    "{:>7} {:>8} {:>12.6} {:>12} {:>9}",
                    row.segment, row.size, row.quantile, weight, draws
                );
            }
        }
        if let (Some(d), Some(t)) = (self.sampled_documents, self.sampled_tokens) {
            let _ = writeln!(s, "\nsample          {d} draws, {t} tokens");
        }

        if let Some(d) = &self.duplication {
            let _ = writeln!(s, "\nnear-duplicates");
            let _ = writeln!(s, "  documents in clusters   {}", d.duplicate_documents);
            let _ = writeln!(s, "  removed by hard dedup   {}", d.removed_by_hard_dedup);
            let _ = writeln!(
                s,
                "  mean commonness         {:.6} duplicates, {:.6} others",
                d.mean_commonness_duplicates, d.mean_commonness_unique
            );
            let _ = writeln!(s, "  in top fifth of segments {:.4}", d.duplicates_in_top_segments);
            let _ = writeln!(s, "  corpus share            {:.4}", d.corpus_share);
            if let Some(share) = d.draw_share {
                let _ = writeln!(s, "  expected draw share     {share:.4}");
            }
        }
        if let Some(c) = self.contaminated_documents {
            let _ = writeln!(s, "\ncontaminated training documents {c}");
        }

        if !self.throughput.is_empty() {
            let _ = writeln!(s, "\n{:<14} {:>9} {:>12} {:>14} {:>8}", "stage", "seconds", "tokens", "tokens/s", "workers");
            for m in &self.throughput {
                let _ = writeln!(
                    s,
                    "{:<14} {:>9.3} {:>12} {:>14.0} {:>8}",
                    m.stage.name(),
                    m.seconds,
                    m.tokens,
                    m.tokens_per_second,
                    m.workers
                );
            }
        }
        s
    }
}

fn duplication_capture(
    records: &[CommonnessRecord],
    plan: Option<&SegmentPlan>,
    dedup: &DedupOutcome,
) -> DuplicationCapture {
    let mut cluster_size: FxHashMap<usize, usize> = FxHashMap::default();
    for d in &dedup.decisions {
        *cluster_size.entry(d.cluster_id).or_default() += 1;
    }
    let duplicate: FxHashMap<&str, bool> = dedup
        .decisions
        .iter()
        .map(|d| (d.doc_id.as_str(), cluster_size[&d.cluster_id] > 1))
        .collect();
    let is_dup = |id: &str| duplicate.get(id).copied().unwrap_or(false);

    let (mut dup_sum, mut dup_n, mut other_sum, mut other_n) = (0.0, 0usize, 0.0, 0usize);
    for r in records {
        if is_dup(&r.doc_id) {
            dup_sum += r.commonness;
            dup_n += 1;
        } else {
            other_sum += r.commonness;
            other_n += 1;
        }
    }
    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };

    let (mut top, mut draw_share) = (0.0, None);
    if let Some(plan) = plan {
        let cutoff = plan.k() - plan.k().div_ceil(5);
        let sizes = plan.segment_sizes();
        let (mut in_top, mut mass) = (0usize, 0.0);
        for (id, seg) in plan.assignments() {
            if is_dup(id) {
                if seg >= cutoff {
                    in_top += 1;
                }
                if let Some(w) = plan.weights() {
                    mass += w[seg] / sizes[seg] as f64;
                }
            }
        }
        top = mean(in_top as f64, dup_n);
        if plan.weights().is_some() {
            draw_share = Some(mass);
        }
    }

    DuplicationCapture {
        duplicate_documents: dup_n,
        removed_by_hard_dedup: dedup.removed(),
        mean_commonness_duplicates: mean(dup_sum, dup_n),
        mean_commonness_unique: mean(other_sum, other_n),
        duplicates_in_top_segments: top,
        corpus_share: mean(dup_n as f64, records.len()),
        draw_share,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_covers_range() {
        let v = [0.01, 0.02, 0.5, 1.0];
        let h = histogram(&v);
        assert_eq!(h.len(), HISTOGRAM_BINS);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 4);
        assert!((h[0].lower - 0.01).abs() < 1e-12);
        assert!((h[HISTOGRAM_BINS - 1].upper - 1.0).abs() < 1e-12);
        assert_eq!(h[HISTOGRAM_BINS - 1].count, 1);
        for w in h.windows(2) {
            let a = w[0].upper / w[0].lower;
            let b = w[1].upper / w[1].lower;
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn histogram_single_value() {
        let h = histogram(&[0.3, 0.3]);
        assert_eq!(h[0].count, 2);
        assert!(histogram(&[]).is_empty());
    }
}
