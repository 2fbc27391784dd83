#[path = "support/grad_suite.rs"]
mod grad_suite;

use grad_suite::{cases, TOLERANCE};

#[test]
fn every_layer_and_loss_matches_finite_differences() {
    let mut failures = Vec::new();
    for case in cases() {
        let err = case.worst_error();
        if !(err < TOLERANCE) {
            failures.push(format!("{}: {err:.3e}", case.name));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}
