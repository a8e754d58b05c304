use proptest::prelude::*;
use stem_core::model::TypeDistribution;
use stem_core::scenario::{sample_realizations, sample_scenarios, ScenarioSet};

fn dists(variances: &[f64]) -> Vec<TypeDistribution> {
    variances
        .iter()
        .map(|&v| TypeDistribution::with_baseline_variance([16.0, 20.0, 0.0], v, true))
        .collect()
}

fn correlated() -> TypeDistribution {
    let mut q = TypeDistribution::with_baseline_variance([10.0, 40.0, 30.0], 25.0, false);
    q.covariance = [[4.0, 2.0, 1.0], [2.0, 25.0, 3.0], [1.0, 3.0, 9.0]];
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn longer_runs_extend_shorter_ones(seed in any::<u64>(), short in 1usize..50, extra in 0usize..50) {
        let q = dists(&[4.0, 64.0, 1024.0]);
        let a = sample_scenarios(&q, short, seed).unwrap();
        let b = sample_scenarios(&q, short + extra, seed).unwrap();
        for s in 0..short {
            prop_assert_eq!(a.scenario(s), b.scenario(s));
            prop_assert_eq!(a.stream_ids()[s], b.stream_ids()[s]);
        }
    }

    #[test]
    fn adding_a_producer_keeps_the_others(seed in any::<u64>()) {
        let a = sample_scenarios(&dists(&[4.0, 16.0]), 40, seed).unwrap();
        let b = sample_scenarios(&dists(&[4.0, 16.0, 36.0]), 40, seed).unwrap();
        for s in 0..40 {
            prop_assert_eq!(a.scenario(s), &b.scenario(s)[..2]);
        }
    }

    #[test]
    fn thread_count_does_not_matter(seed in any::<u64>()) {
        let q = dists(&[4.0, 36.0]);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| sample_scenarios(&q, 300, seed).unwrap());
        let b = four.install(|| sample_scenarios(&q, 300, seed).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn draws_are_valid_types(seed in any::<u64>()) {
        let set = sample_scenarios(&[correlated(), dists(&[1024.0])[0].clone()], 200, seed).unwrap();
        for row in set.iter() {
            prop_assert!(row[0].baseline >= 0.0 && row[0].down_cost >= 0.0);
            prop_assert!(row[0].up_cost.is_some_and(|u| u >= 0.0));
            prop_assert!(row[1].up_cost.is_none());
        }
    }

    #[test]
    fn csv_round_trip_keeps_six_decimals(seed in any::<u64>()) {
        let set = sample_scenarios(&[correlated(), dists(&[64.0])[0].clone()], 25, seed).unwrap();
        let back = ScenarioSet::from_csv(&set.to_csv()).unwrap();
        prop_assert_eq!(back.to_csv(), set.to_csv());
        for (a, b) in set.iter().flatten().zip(back.iter().flatten()) {
            prop_assert!((a.baseline - b.baseline).abs() <= 5e-7);
            prop_assert!((a.down_cost - b.down_cost).abs() <= 5e-7);
            prop_assert_eq!(a.up_cost.is_some(), b.up_cost.is_some());
        }
    }
}

#[test]
fn planning_and_evaluation_streams_differ() {
    let q = dists(&[16.0]);
    let plan = sample_scenarios(&q, 20, 7).unwrap();
    let eval = sample_realizations(&q, 20, 7).unwrap();
    assert!((0..20).all(|s| plan.scenario(s) != eval.scenario(s)));
}

#[test]
fn sample_moments_match_the_distribution() {
    let q = correlated();
    let set = sample_scenarios(std::slice::from_ref(&q), 100_000, 3).unwrap();
    let rows: Vec<[f64; 3]> = set
        .iter()
        .map(|r| [r[0].down_cost, r[0].baseline, r[0].up_cost.unwrap()])
        .collect();
    let m = rows.len() as f64;
    let mean: Vec<f64> = (0..3).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / m).collect();
    for k in 0..3 {
        assert!((mean[k] - q.mean[k]).abs() < 0.05, "mean {k}: {}", mean[k]);
        for j in 0..3 {
            let cov = rows.iter().map(|r| (r[k] - mean[k]) * (r[j] - mean[j])).sum::<f64>() / (m - 1.0);
            assert!((cov - q.covariance[k][j]).abs() < 0.05 * q.covariance[k][k].max(1.0), "cov {k}{j}: {cov}");
        }
    }
}

#[test]
fn certain_sets_repeat_one_row() {
    let theta = dists(&[0.0])[0].mean_type();
    let set = ScenarioSet::certain(vec![theta], 5);
    assert_eq!(set.len(), 5);
    assert!(set.iter().all(|r| r == [theta]));
}
