mod support;

use cnf_core::pruning::Criterion;
use support::selection::{check_instance, run_suite};

#[test]
fn greedy_selection_matches_exhaustive_oracle() {
    let stats = run_suite(25).unwrap();
    assert_eq!(stats.instances, 100);
    assert!(stats.weights_checked > 0);
}

#[test]
fn sensitivity_scores_match_finite_differences() {
    for seed in 100..105 {
        check_instance(seed, Criterion::Sensitivity, true).unwrap();
    }
}
