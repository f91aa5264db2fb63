use std::io::Write;

use nslab::criteria::{self, CriterionReport};

// Written straight to the stderr handle so the line shows even when the
// harness captures output of passing tests.
fn report(r: nslab::Result<CriterionReport>) {
    let r = r.expect("criterion run failed");
    let _ = writeln!(std::io::stderr().lock(), "{}", r.line());
    assert!(r.passed, "{}", r.line());
}

#[test]
fn c01_lorentz_norm_exactness() {
    report(criteria::lorentz_exactness());
}

#[test]
fn c02_semigroup_smoothing_exponents() {
    report(criteria::semigroup_smoothing());
}

#[test]
fn c03_projection_identities() {
    report(criteria::projection_identities());
}

#[test]
fn c04_duhamel_oracles() {
    report(criteria::duhamel_oracles());
}

#[test]
fn c05_critical_estimate_convergence() {
    report(criteria::critical_convergence());
}

#[test]
fn c06_global_contraction() {
    report(criteria::global_contraction());
}

#[test]
fn c07_g_gstar_consistency() {
    report(criteria::g_gstar_consistency());
}

#[test]
fn c08_local_existence_strong_attainment() {
    report(criteria::local_strong_attainment());
}

#[test]
fn c09_kato_existence_time_scaling() {
    report(criteria::kato_time_scaling());
}

#[test]
fn c10_xsigma_dichotomy() {
    report(criteria::xsigma_dichotomy());
}

#[test]
fn c11_uniqueness_and_continuation() {
    report(criteria::uniqueness());
}

#[test]
fn c12_strong_equation_residual() {
    report(criteria::strong_residual());
}

#[test]
fn c13_brezis_decay() {
    report(criteria::brezis_decay());
}

#[test]
fn c14_determinism() {
    let dir = tempfile::tempdir().unwrap();
    report(criteria::determinism(dir.path()));
}
