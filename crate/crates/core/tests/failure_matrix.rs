//! Six timing cases of a failure relative to a routine, under five models.

mod common;

use common::{expected_cell, golden_matrix, observed_cell, render_matrix};

#[test]
fn decision_table_matches_golden() {
    assert_eq!(render_matrix(expected_cell), golden_matrix());
}

#[test]
fn engine_matches_golden() {
    assert_eq!(render_matrix(observed_cell), golden_matrix());
}
