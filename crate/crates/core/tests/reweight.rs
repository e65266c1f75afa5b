use proptest::prelude::*;
use softdedup::commonness::CommonnessRecord;
use softdedup::reweight::{QuantileStat, SegmentPlan, WeightSpec};

fn records(values: &[f64]) -> Vec<CommonnessRecord> {
    values
        .iter()
        .enumerate()
        .map(|(i, &c)| CommonnessRecord {
            doc_id: format!("doc-{i:05}"),
            commonness: c,
            log_commonness: c.ln(),
            n_tokens: 1,
        })
        .collect()
}

fn commonness_values() -> impl Strategy<Value = Vec<f64>> {
    // coarse grid so ties are common
    prop::collection::vec((1u32..400).prop_map(|v| v as f64 / 1000.0), 100..400)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_sum_to_one(values in commonness_values(), k_idx in 0usize..5, t in 0.0f64..8.0) {
        let k = [1, 10, 20, 50, 100][k_idx];
        let mut plan = SegmentPlan::partition(&records(&values), k, QuantileStat::Upper).unwrap();
        plan.assign_weights(t).unwrap();
        let sum: f64 = plan.weights().unwrap().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12, "{}", sum);
    }

    #[test]
    fn weights_fall_as_quantiles_rise(values in commonness_values(), k in 1usize..60, t in 0.01f64..8.0) {
        let mut plan = SegmentPlan::partition(&records(&values), k, QuantileStat::Upper).unwrap();
        plan.assign_weights(t).unwrap();
        let p = plan.quantiles().to_vec();
        let w = plan.weights().unwrap();
        for j in 0..k {
            for l in 0..k {
                if p[j] < p[l] {
                    prop_assert!(w[j] > w[l]);
                } else if p[j] == p[l] {
                    prop_assert_eq!(w[j], w[l]);
                }
            }
        }
    }

    #[test]
    fn segments_are_equal_count_and_ordered(values in commonness_values(), k in 1usize..100) {
        let plan = SegmentPlan::partition(&records(&values), k, QuantileStat::Upper).unwrap();
        let sizes = plan.segment_sizes();
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
        prop_assert_eq!(sizes.iter().sum::<usize>(), values.len());
        prop_assert!(plan.quantiles().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn input_order_is_irrelevant(values in commonness_values(), k in 1usize..50, rot in 0usize..400) {
        let recs = records(&values);
        let mut shuffled = recs.clone();
        shuffled.rotate_left(rot % recs.len());
        shuffled.reverse();
        let a = SegmentPlan::partition(&recs, k, QuantileStat::Upper).unwrap();
        let b = SegmentPlan::partition(&shuffled, k, QuantileStat::Upper).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn solved_exponent_hits_ratio(values in commonness_values(), k_idx in 0usize..4, r_idx in 0usize..3) {
        let k = [10, 20, 50, 100][k_idx];
        let ratio = [2.0, 5.0, 10.0][r_idx];
        let mut plan = SegmentPlan::partition(&records(&values), k, QuantileStat::Upper).unwrap();
        prop_assume!(plan.quantiles()[k - 1] > plan.quantiles()[0]);
        plan.apply(WeightSpec::Ratio(ratio)).unwrap();
        let w = plan.weights().unwrap();
        prop_assert!((w[0] / w[k - 1] - ratio).abs() < 1e-9);
    }
}
