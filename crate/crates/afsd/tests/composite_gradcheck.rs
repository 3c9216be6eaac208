use std::time::Instant;

use afsd::verify::composite_gradcheck;

#[test]
fn full_head_matches_finite_differences() {
    let t0 = Instant::now();
    let report = composite_gradcheck(3).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    println!(
        "max rel err {:.3e} over {} coords ({} excluded) in {secs:.1}s",
        report.max_rel_error, report.checked, report.excluded
    );
    assert!(report.passes(1e-4), "{report:?}");
    assert!(report.checked > 500);
    assert!(secs < 60.0);
}
