//! Finite-difference verification of every analytic gradient in the crate.
//! Central differences with h = 1e-4, double precision, sampled away from
//! hinge kinks; worst relative error must stay below 1e-4.

use mgsc_core::check::{
    gradcheck_alignment, gradcheck_cross_entropy, gradcheck_ctc, gradcheck_end_to_end,
    gradcheck_end_to_end_uncertainty, gradcheck_sentence, gradcheck_uncertainty,
};
use mgsc_core::model::Variant;

const TOL: f64 = 1e-4;

#[test]
fn alignment_gradient_matches_fd() {
    let r = gradcheck_alignment(11, 50);
    assert!(r.max_rel_error < TOL, "max rel err {}", r.max_rel_error);
}

#[test]
fn sentence_gradient_matches_fd() {
    let r = gradcheck_sentence(12, 50);
    assert!(r.max_rel_error < TOL, "max rel err {}", r.max_rel_error);
}

#[test]
fn cross_entropy_gradient_matches_fd() {
    let r = gradcheck_cross_entropy(13, 25);
    assert!(r.max_rel_error < TOL, "max rel err {}", r.max_rel_error);
}

#[test]
fn ctc_gradient_matches_fd() {
    let r = gradcheck_ctc(14, 25);
    assert!(r.max_rel_error < TOL, "max rel err {}", r.max_rel_error);
}

#[test]
fn uncertainty_gradients_match_fd() {
    let r = gradcheck_uncertainty(15, 25);
    assert!(r.max_rel_error < 1e-6, "max rel err {}", r.max_rel_error);
}

#[test]
fn end_to_end_gradient_matches_fd_for_every_variant() {
    for (i, variant) in Variant::ALL.into_iter().enumerate() {
        let r = gradcheck_end_to_end(variant, 20 + i as u64, 20);
        assert!(
            r.max_rel_error < TOL,
            "{}: max rel err {}",
            r.name,
            r.max_rel_error
        );
    }
}

#[test]
fn end_to_end_uncertainty_gradient_matches_fd() {
    let r = gradcheck_end_to_end_uncertainty(31, 20);
    assert!(r.max_rel_error < TOL, "max rel err {}", r.max_rel_error);
}
