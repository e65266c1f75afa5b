use softdedup::commonness::CommonnessRecord;
use softdedup::reweight::{QuantileStat, SegmentPlan, WeightSpec};
use softdedup::sampler::Draws;

fn plan(m: usize, k: usize, ratio: f64) -> SegmentPlan {
    let recs: Vec<CommonnessRecord> = (0..m)
        .map(|i| {
            let c = 0.001 * (1.0 + i as f64);
            CommonnessRecord {
                doc_id: format!("doc{i:04}"),
                commonness: c,
                log_commonness: c.ln(),
                n_tokens: 10,
            }
        })
        .collect();
    let mut p = SegmentPlan::partition(&recs, k, QuantileStat::Upper).unwrap();
    p.apply(WeightSpec::Ratio(ratio)).unwrap();
    p
}

#[test]
fn two_segment_frequencies() {
    let p = plan(10, 2, 2.0);
    let w = p.weights().unwrap().to_vec();
    assert!((w[0] - 2.0 / 3.0).abs() < 1e-12);
    let d = 1_000_000;
    let mut hits = [0u64; 2];
    for (k, _) in Draws::new(&p, 11).unwrap().take(d) {
        hits[k] += 1;
    }
    for k in 0..2 {
        assert!((hits[k] as f64 / d as f64 - w[k]).abs() < 0.005);
    }
}

#[test]
fn per_document_counts_within_five_sigma() {
    let (m, k) = (60, 6);
    let p = plan(m, k, 10.0);
    let w = p.weights().unwrap().to_vec();
    let d = 200_000;
    let mut counts = vec![vec![0u64; m / k]; k];
    for (seg, i) in Draws::new(&p, 2024).unwrap().take(d) {
        counts[seg][i] += 1;
    }
    for seg in 0..k {
        let size = p.segment(seg).len() as f64;
        let prob = w[seg] / size;
        let expected = d as f64 * prob;
        let sd = (d as f64 * prob * (1.0 - prob)).sqrt();
        for &c in &counts[seg] {
            assert!((c as f64 - expected).abs() < 5.0 * sd, "segment {seg}: {c} vs {expected}");
        }
    }
}

#[test]
fn within_segment_passes_do_not_repeat_early() {
    let p = plan(30, 3, 5.0);
    let mut seen = vec![Vec::new(); 3];
    for (seg, i) in Draws::new(&p, 5).unwrap().take(3000) {
        seen[seg].push(i);
    }
    for s in seen {
        for pass in s.chunks_exact(10) {
            let mut sorted = pass.to_vec();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        }
    }
}
