//! Acceptance suite: every criterion runs at its stated tolerance on the
//! full-level grids (the eigenvalue oracle is pinned to M = 2000,
//! R_max = 200) and prints one pass/fail line. Run with `--nocapture` to see
//! the lines for passing criteria too.

use nonloc::verify::{run_suite, shipped_fixtures, Level, VerificationReport};
use std::sync::OnceLock;

static REPORT: OnceLock<VerificationReport> = OnceLock::new();

fn report() -> &'static VerificationReport {
    REPORT.get_or_init(|| {
        run_suite(&shipped_fixtures(), Level::Full).expect("verification suite must run")
    })
}

fn assert_criterion(name: &str) {
    let c = report()
        .checks
        .iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("criterion {name} missing from the report"));
    println!(
        "{}: {}  measured {:.6e}  expected {:.6e}  tolerance {:.1e}  ({})",
        c.name,
        c.status.to_uppercase(),
        c.measured,
        c.expected,
        c.tolerance,
        c.note
    );
    assert!(c.passed(), "{name} failed: {}", c.note);
}

#[test]
fn c1_eigenvalue_oracle() {
    assert_criterion("C1_eigenvalue_oracle");
}

#[test]
fn c2_decay_asymptotics() {
    assert_criterion("C2_decay_asymptotics");
}

#[test]
fn c3_branch_oracle() {
    assert_criterion("C3_branch_oracle");
}

#[test]
fn c4_existence_dichotomy() {
    assert_criterion("C4_existence_dichotomy");
}

#[test]
fn c5_lambda_identity() {
    assert_criterion("C5_lambda_identity");
}

#[test]
fn c6_phi_properties() {
    assert_criterion("C6_phi_properties");
}

#[test]
fn c7_decay_laws() {
    assert_criterion("C7_decay_laws");
}

#[test]
fn c8_numerics_hygiene() {
    assert_criterion("C8_numerics_hygiene");
}

#[test]
fn every_criterion_appears_exactly_once() {
    let names = [
        "C1_eigenvalue_oracle",
        "C2_decay_asymptotics",
        "C3_branch_oracle",
        "C4_existence_dichotomy",
        "C5_lambda_identity",
        "C6_phi_properties",
        "C7_decay_laws",
        "C8_numerics_hygiene",
    ];
    for name in names {
        assert_eq!(
            report().checks.iter().filter(|c| c.name == name).count(),
            1,
            "{name} must appear exactly once"
        );
    }
    assert_eq!(report().checks.len(), names.len());
}
