mod common;

#[test]
fn outputs_are_identical_across_runs_and_thread_counts() {
    let differ = common::determinism_check(15, 2).unwrap();
    assert!(differ.is_empty(), "differing outputs: {differ:?}");
}
