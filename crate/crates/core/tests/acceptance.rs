//! Runs every acceptance criterion and prints one PASS/FAIL line each.
//!
//! Criteria 1, 3 and 7 are known to fail at their pinned tolerances (see the
//! README); the test asserts that the remaining ones pass and that the listed
//! ones still fail, so a change in either direction is noticed.
//! `ACCEPTANCE_ONLY=4,5` restricts the run.

use std::io::Write;

use nestocc::acceptance;

/// Written to the raw stderr handle so the lines survive output capture.
fn report(line: &str) {
    let _ = writeln!(std::io::stderr().lock(), "{line}");
}

const KNOWN_FAILURES: [u32; 3] = [1, 3, 7];

#[test]
fn acceptance_suite() {
    let ids: Vec<u32> = match std::env::var("ACCEPTANCE_ONLY") {
        Ok(s) => s.split(',').filter_map(|x| x.trim().parse().ok()).collect(),
        Err(_) => acceptance::IDS.to_vec(),
    };
    let mut unexpected = Vec::new();
    for id in ids {
        let r = acceptance::run(id);
        report(&r.line());
        if r.passed == KNOWN_FAILURES.contains(&id) {
            unexpected.push(r.line());
        }
    }
    assert!(unexpected.is_empty(), "unexpected outcomes:\n{}", unexpected.join("\n"));
}

#[test]
fn wrong_mu_breaks_the_weak_law() {
    let r = acceptance::wlln_with_mu(1.1);
    report(&r.line());
    assert!(!r.passed);
}
