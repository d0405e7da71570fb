//! Analytic batch gradients against central finite differences.

mod oracles;

#[test]
fn batch_gradient_matches_finite_differences() {
    let r = oracles::gradient_check(2024, 1e-4);
    assert!(r.probes >= 1000);
    assert!(
        r.failures.is_empty(),
        "worst {:e}; {} failures: {:?}",
        r.worst,
        r.failures.len(),
        &r.failures[..r.failures.len().min(10)]
    );
}
