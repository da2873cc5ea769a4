use proptest::prelude::*;

mod common;
use common::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn truncation_partitions_the_rays(input in partition_inputs()) {
        truncation_partitions(input)?;
    }

    #[test]
    fn forward_inverse_and_mollifier_are_linear(input in linearity_inputs()) {
        operators_are_linear(input)?;
    }

    #[test]
    fn wavelet_reconstruction_is_exact(input in wavelet_inputs()) {
        wavelet_reconstruction_is_perfect(input)?;
    }

    #[test]
    fn mollifier_keeps_mass_and_sup_bound(input in mollifier_inputs()) {
        mollifier_preserves_mass_and_contracts(input)?;
    }
}

#[test]
fn whole_ball_roi() {
    whole_ball_roi_returns_the_plain_inverse().unwrap();
}

#[test]
fn fixed_point() {
    converged_iterate_is_a_fixed_point().unwrap();
}

#[test]
fn deterministic_reruns() {
    reruns_are_byte_identical().unwrap();
}
