//! Consistency checks of the verification suite itself: the fast level
//! finishes inside its time budget and agrees with the full level on every
//! pass/fail outcome.

use nonloc::error::Error;
use nonloc::verify::{run_suite, shipped_fixtures, Level};
use std::time::Instant;

#[test]
fn fast_level_is_fast_and_agrees_with_full() {
    let started = Instant::now();
    let fast = run_suite(&shipped_fixtures(), Level::Fast).unwrap();
    let fast_elapsed = started.elapsed().as_secs_f64();
    assert!(fast_elapsed < 60.0, "fast suite took {fast_elapsed:.1} s");
    assert!(fast.passed);

    let full = run_suite(&shipped_fixtures(), Level::Full).unwrap();
    assert!(full.passed);
    assert_eq!(fast.checks.len(), full.checks.len());
    for (a, b) in fast.checks.iter().zip(&full.checks) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.status, b.status, "level disagreement on {}", a.name);
    }
}

#[test]
fn empty_fixture_list_is_a_missing_fixture_error() {
    match run_suite(&[], Level::Fast) {
        Err(Error::MissingFixture(_)) => {}
        other => panic!("expected missing-fixture error, got {other:?}"),
    }
}
