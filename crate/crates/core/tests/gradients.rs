//! Finite-difference validation of every registered gradient.

use hyperdiff_core::gradcheck;

#[test]
fn operator_catalog_matches_finite_differences() {
    gradcheck::check_operator_catalog().unwrap();
}

#[test]
fn ssdn_miniature_matches_finite_differences() {
    gradcheck::check_ssdn_miniature().unwrap();
}

#[test]
fn svit_miniature_matches_finite_differences() {
    gradcheck::check_svit_miniature().unwrap();
}
